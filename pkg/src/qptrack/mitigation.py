"""Error mitigation on counts: gate folding with Richardson extrapolation, and readout inversion."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .sim import Circuit, NoiseModel, expectation_z, run_noisy


def fold(circuit: Circuit, scale: int) -> Circuit:
    """Replace every gate G by G (G^dagger G)^((scale - 1) / 2)."""
    if scale < 1 or scale % 2 == 0:
        raise ValueError(f"scale factor must be an odd integer >= 1, got {scale}")
    reps = (scale - 1) // 2
    gates = []
    for g in circuit.gates:
        gates.append(g)
        inv = g.inverse()
        for _ in range(reps):
            gates.extend((inv, g))
    return Circuit(circuit.n_qubits, gates)


def richardson_extrapolate(points: Sequence[tuple[float, float]], order: int = 1) -> float:
    """Least-squares polynomial in the scale factor, evaluated at zero."""
    scales = np.array([p[0] for p in points], dtype=float)
    values = np.array([p[1] for p in points], dtype=float)
    if len(np.unique(scales)) != len(scales):
        raise ValueError("duplicate scale factors")
    if len(scales) < 2:
        raise ValueError("need at least two scale factors")
    if order >= len(scales):
        raise ValueError(f"order {order} needs more than {len(scales)} points")
    return float(np.polyval(np.polyfit(scales, values, order), 0.0))


@dataclass
class ZNEResult:
    scales: list[int]
    values: list[float]
    extrapolated: float

    @property
    def raw(self) -> float:
        return self.values[self.scales.index(1)] if 1 in self.scales else self.values[0]


def zne_expectation(circuit: Circuit, observable: Callable[[dict[str, int]], float],
                    noise: NoiseModel, shots: int, rng: np.random.Generator,
                    scales: Sequence[int] = (1, 3, 5), order: int = 1) -> ZNEResult:
    """Run the folded circuits under ``noise`` and extrapolate ``observable`` to zero noise."""
    values = [observable(run_noisy(fold(circuit, s), noise, shots, rng)) for s in scales]
    return ZNEResult(list(scales), values,
                     richardson_extrapolate(list(zip(scales, values)), order))


def zz_observable(qubits: Sequence[int]) -> Callable[[dict[str, int]], float]:
    return lambda counts: expectation_z(counts, qubits)


def bell_circuit() -> Circuit:
    return Circuit(2).h(0).cx(0, 1)


# Readout -------------------------------------------------------------------------------


def assignment_matrix(p01: Sequence[float], p10: Sequence[float] | None = None) -> np.ndarray:
    """Column-stochastic A[measured, true] as a tensor product of per-qubit flips.

    ``p01[q]`` is P(read 1 | true 0) and ``p10[q]`` is P(read 0 | true 1) for qubit q;
    the basis index follows the usual convention (qubit 0 least significant).
    """
    p01 = np.atleast_1d(np.asarray(p01, dtype=float))
    p10 = p01 if p10 is None else np.atleast_1d(np.asarray(p10, dtype=float))
    if p01.shape != p10.shape:
        raise ValueError("per-qubit flip lists must have equal length")
    mats = [np.array([[1 - a, b], [a, 1 - b]]) for a, b in zip(p01, p10)]
    # kron puts its first factor on the most significant bit
    return reduce(np.kron, reversed(mats))


def counts_to_vector(counts: dict[str, int], n_qubits: int) -> np.ndarray:
    v = np.zeros(2**n_qubits)
    for bits, c in counts.items():
        v[int(bits, 2)] += c
    return v


def apply_readout_error(counts: dict[str, int], A: np.ndarray,
                        rng: np.random.Generator) -> dict[str, int]:
    """Resample each shot's outcome through the assignment matrix."""
    n = int(round(np.log2(A.shape[0])))
    out = np.zeros(2**n, dtype=np.int64)
    for bits, c in sorted(counts.items()):
        out += rng.multinomial(c, A[:, int(bits, 2)])
    return {format(i, f"0{n}b"): int(v) for i, v in enumerate(out) if v}


@dataclass
class ReadoutResult:
    probabilities: np.ndarray
    clipped_mass: float

    @property
    def clipped(self) -> bool:
        return self.clipped_mass > 0


def readout_mitigate(counts: dict[str, int] | np.ndarray, A: np.ndarray) -> ReadoutResult:
    """Solve A p = f for the empirical frequencies f, clip negatives and renormalise."""
    A = np.asarray(A, dtype=float)
    if not np.allclose(A.sum(axis=0), 1.0, atol=1e-9) or np.any(A < 0):
        raise ValueError("assignment matrix must be column-stochastic")
    n = int(round(np.log2(A.shape[0])))
    f = counts if isinstance(counts, np.ndarray) else counts_to_vector(counts, n)
    f = np.asarray(f, dtype=float)
    f = f / f.sum()
    try:
        p = np.linalg.solve(A, f)
    except np.linalg.LinAlgError as exc:
        raise ValueError("assignment matrix is singular") from exc
    neg = max(0.0, float(-p[p < 0].sum()))
    p = np.clip(p, 0.0, None)
    return ReadoutResult(p / p.sum(), neg)


def expectation_z_from_probs(probs: np.ndarray, qubits: Sequence[int]) -> float:
    idx = np.arange(len(probs))
    parity = np.zeros_like(idx)
    for q in qubits:
        parity ^= (idx >> q) & 1
    return float(probs @ (1 - 2 * parity))


# Pipeline --------------------------------------------------------------------------------


@dataclass(frozen=True)
class ZneStage:
    scales: tuple[int, ...] = (1, 3, 5)
    order: int = 1


@dataclass(frozen=True)
class ReadoutStage:
    A: np.ndarray


@dataclass
class MitigationPipeline:
    """Ordered stages. Readout correction acts on each histogram, ZNE on the resulting values."""

    stages: list = field(default_factory=list)

    def process_counts(self, counts: dict[str, int], n_qubits: int) -> np.ndarray | dict:
        for st in self.stages:
            if isinstance(st, ReadoutStage):
                return readout_mitigate(counts, st.A).probabilities
        return counts

    def run(self, circuit: Circuit, qubits: Sequence[int], noise: NoiseModel, shots: int,
            rng: np.random.Generator,
            readout: np.ndarray | None = None) -> float:
        """Expectation of Z on ``qubits`` after every stage.

        ``readout`` is the physical assignment matrix applied to the raw shots
        (independent of any correction stage).
        """
        zne = next((s for s in self.stages if isinstance(s, ZneStage)), None)
        scales = zne.scales if zne else (1,)
        values = []
        for s in scales:
            counts = run_noisy(fold(circuit, s), noise, shots, rng)
            if readout is not None:
                counts = apply_readout_error(counts, readout, rng)
            data = self.process_counts(counts, circuit.n_qubits)
            if isinstance(data, dict):
                values.append(expectation_z(data, qubits))
            else:
                values.append(expectation_z_from_probs(data, qubits))
        if zne is None:
            return values[0]
        return richardson_extrapolate(list(zip(scales, values)), zne.order)
