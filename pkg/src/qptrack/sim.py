"""Dense statevector simulator.

Qubit 0 is the least-significant bit of a basis-state index. Bitstrings are
rendered most-significant qubit first, so ``"01"`` on two qubits means
qubit 0 is 1 and qubit 1 is 0.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

NORM_TOL = 1e-10
ZERO_BRANCH_TOL = 1e-12

_SELF_INVERSE = {"H", "X", "Y", "Z", "CX", "CZ"}
_ARITY = {"H": 1, "X": 1, "Y": 1, "Z": 1, "RX": 1, "RY": 1, "RZ": 1, "CX": 2, "RZZ": 2}

_PAULI = {
    1: np.array([[0, 1], [1, 0]], dtype=complex),
    2: np.array([[0, -1j], [1j, 0]], dtype=complex),
    3: np.array([[1, 0], [0, -1]], dtype=complex),
}


class ZeroProbabilityBranch(ValueError):
    """Raised when post-selecting on an outcome of (numerically) zero probability."""


def _ry(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


@dataclass(frozen=True)
class Gate:
    """A gate acting on ``qubits``.

    For ``CRY`` and ``UCRY`` the first qubit is the target and the rest are
    controls; control ``controls[i]`` contributes bit ``i`` of the angle index.
    For ``CX`` the order is ``(control, target)``. ``CZ`` on more than two
    qubits is the multi-controlled phase flip of the all-ones state.
    """

    name: str
    qubits: tuple[int, ...]
    params: tuple[float, ...] = ()
    pattern: tuple[int, ...] = ()

    def __post_init__(self):
        qs = tuple(int(q) for q in self.qubits)
        object.__setattr__(self, "qubits", qs)
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if len(set(qs)) != len(qs):
            raise ValueError(f"duplicate qubit index in {self.name} {qs}")
        if any(q < 0 for q in qs):
            raise ValueError(f"negative qubit index in {self.name} {qs}")
        if self.name in _ARITY and len(qs) != _ARITY[self.name]:
            raise ValueError(f"{self.name} acts on {_ARITY[self.name]} qubit(s), got {len(qs)}")
        if self.name == "CZ" and len(qs) < 2:
            raise ValueError("CZ needs at least two qubits")
        if self.name == "CRY":
            if len(qs) < 2 or len(self.pattern) != len(qs) - 1:
                raise ValueError("CRY needs a target, >=1 control and one pattern bit per control")
        if self.name == "UCRY" and len(self.params) != 2 ** (len(qs) - 1):
            raise ValueError(
                f"UCRY over {len(qs) - 1} controls needs {2 ** (len(qs) - 1)} angles, "
                f"got {len(self.params)}"
            )
        if self.name not in _ARITY and self.name not in {"CZ", "CRY", "UCRY"}:
            raise ValueError(f"unknown gate {self.name!r}")

    def _block_angles(self) -> np.ndarray:
        """Per-control-pattern Ry angles for CRY/UCRY."""
        if self.name == "UCRY":
            return np.asarray(self.params)
        angles = np.zeros(2 ** len(self.pattern))
        idx = sum(int(b) << i for i, b in enumerate(self.pattern))
        angles[idx] = self.params[0]
        return angles

    def matrix(self) -> np.ndarray:
        """Unitary on the gate's own qubits; index bit ``i`` belongs to ``qubits[i]``."""
        n = self.name
        if n == "H":
            return np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
        if n in ("X", "Y", "Z"):
            return _PAULI["XYZ".index(n) + 1].copy()
        if n == "RY":
            return _ry(self.params[0])
        if n == "RX":
            c, s = np.cos(self.params[0] / 2), np.sin(self.params[0] / 2)
            return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
        if n == "RZ":
            t = self.params[0] / 2
            return np.diag([np.exp(-1j * t), np.exp(1j * t)])
        if n == "RZZ":
            t = self.params[0] / 2
            return np.diag([np.exp(-1j * t), np.exp(1j * t), np.exp(1j * t), np.exp(-1j * t)])
        if n == "CX":
            m = np.eye(4, dtype=complex)
            m[[1, 3]] = m[[3, 1]]
            return m
        if n == "CZ":
            d = np.ones(2 ** len(self.qubits), dtype=complex)
            d[-1] = -1
            return np.diag(d)
        # CRY / UCRY: block diagonal, target is the low bit
        angles = self._block_angles()
        m = np.zeros((2 * len(angles), 2 * len(angles)), dtype=complex)
        for i, a in enumerate(angles):
            m[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = _ry(a)
        return m

    def inverse(self) -> Gate:
        if self.name in _SELF_INVERSE:
            return self
        return Gate(self.name, self.qubits, tuple(-p for p in self.params), self.pattern)

    @property
    def is_two_qubit(self) -> bool:
        return len(self.qubits) >= 2


# Gate constructors -----------------------------------------------------------


def H(q):
    return Gate("H", (q,))


def X(q):
    return Gate("X", (q,))


def Z(q):
    return Gate("Z", (q,))


def Rx(theta, q):
    return Gate("RX", (q,), (theta,))


def Ry(theta, q):
    return Gate("RY", (q,), (theta,))


def Rz(theta, q):
    return Gate("RZ", (q,), (theta,))


def Rzz(theta, q0, q1):
    return Gate("RZZ", (q0, q1), (theta,))


def CX(control, target):
    return Gate("CX", (control, target))


def CZ(*qubits):
    return Gate("CZ", tuple(qubits))


def controlled_ry(theta, target, controls, pattern=None):
    """Ry on ``target`` when ``controls`` match ``pattern`` (default all ones)."""
    controls = tuple(controls)
    pattern = tuple(pattern) if pattern is not None else (1,) * len(controls)
    return Gate("CRY", (target, *controls), (theta,), pattern)


def uniformly_controlled_ry(angles, target, controls):
    return Gate("UCRY", (target, *tuple(controls)), tuple(angles))


# Kernels -----------------------------------------------------------------------


def _apply_dense(psi: np.ndarray, mat: np.ndarray, qubits: Sequence[int], n: int) -> np.ndarray:
    # psi has shape (2**n, B)
    k = len(qubits)
    t = psi.reshape((2,) * n + (psi.shape[1],))
    axes = [n - 1 - q for q in reversed(qubits)]
    m = mat.reshape((2,) * (2 * k))
    t = np.tensordot(m, t, axes=(list(range(k, 2 * k)), axes))
    t = np.moveaxis(t, list(range(k)), axes)
    return t.reshape(psi.shape)


def _apply_blocks(psi: np.ndarray, blocks: np.ndarray, qubits: Sequence[int], n: int) -> np.ndarray:
    """Apply a 2x2 block per control pattern; ``qubits = (target, *controls)``."""
    target, controls = qubits[0], qubits[1:]
    src = [n - 1 - q for q in reversed(controls)] + [n - 1 - target]
    nd = n + 1
    dst = list(range(nd - len(src), nd))
    t = psi.reshape((2,) * n + (psi.shape[1],))
    t = np.moveaxis(t, src, dst)
    moved_shape = t.shape
    t = t.reshape(-1, blocks.shape[0], 2)
    t = np.einsum("cij,rcj->rci", blocks, t)
    t = np.moveaxis(t.reshape(moved_shape), dst, src)
    return t.reshape(psi.shape)


def _phase_flip_all_ones(psi: np.ndarray, qubits: Sequence[int], n: int) -> np.ndarray:
    idx = np.arange(2**n)
    mask = np.ones(2**n, dtype=bool)
    for q in qubits:
        mask &= ((idx >> q) & 1).astype(bool)
    out = psi.copy()
    out[mask] *= -1
    return out


def _apply_gate_array(psi: np.ndarray, gate: Gate, n: int) -> np.ndarray:
    if any(q >= n for q in gate.qubits):
        raise ValueError(f"gate {gate.name} targets {gate.qubits} outside {n}-qubit register")
    if gate.name == "CZ" and len(gate.qubits) > 2:
        return _phase_flip_all_ones(psi, gate.qubits, n)
    if gate.name in ("CRY", "UCRY"):
        blocks = np.stack([_ry(a) for a in gate._block_angles()])
        return _apply_blocks(psi, blocks, gate.qubits, n)
    return _apply_dense(psi, gate.matrix(), gate.qubits, n)


# State -------------------------------------------------------------------------


@dataclass
class StateVector:
    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex).ravel()
        n = int(round(np.log2(len(a)))) if len(a) else -1
        if n < 0 or 2**n != len(a):
            raise ValueError(f"amplitude vector length {len(a)} is not a power of two")
        self.amplitudes = a

    @classmethod
    def zero(cls, n_qubits: int) -> StateVector:
        a = np.zeros(2**n_qubits, dtype=complex)
        a[0] = 1.0
        return cls(a)

    @classmethod
    def basis(cls, n_qubits: int, index: int) -> StateVector:
        a = np.zeros(2**n_qubits, dtype=complex)
        a[index] = 1.0
        return cls(a)

    @property
    def n_qubits(self) -> int:
        return int(round(np.log2(len(self.amplitudes))))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm(self) -> float:
        return float(np.sqrt(self.probabilities().sum()))

    def copy(self) -> StateVector:
        return StateVector(self.amplitudes.copy())


def apply(state: StateVector, gate: Gate) -> StateVector:
    """Return ``gate`` applied to ``state``; the input is left untouched."""
    n = state.n_qubits
    out = _apply_gate_array(state.amplitudes[:, None], gate, n)
    return StateVector(out[:, 0])


# Circuit -----------------------------------------------------------------------


@dataclass
class Circuit:
    n_qubits: int
    gates: list[Gate] = field(default_factory=list)

    def __post_init__(self):
        for g in self.gates:
            self._check(g)

    def _check(self, gate: Gate):
        if any(q >= self.n_qubits for q in gate.qubits):
            raise ValueError(
                f"gate {gate.name} targets {gate.qubits} outside {self.n_qubits}-qubit circuit"
            )

    def append(self, gate: Gate) -> Circuit:
        self._check(gate)
        self.gates.append(gate)
        return self

    def extend(self, gates) -> Circuit:
        for g in gates:
            self.append(g)
        return self

    def compose(self, other: Circuit) -> Circuit:
        """New circuit running ``self`` then ``other``."""
        if other.n_qubits > self.n_qubits:
            raise ValueError("cannot compose a wider circuit")
        return Circuit(self.n_qubits, self.gates + other.gates)

    def inverse(self) -> Circuit:
        return Circuit(self.n_qubits, [g.inverse() for g in reversed(self.gates)])

    def copy(self) -> Circuit:
        return Circuit(self.n_qubits, list(self.gates))

    def __len__(self):
        return len(self.gates)

    @property
    def two_qubit_count(self) -> int:
        return sum(g.is_two_qubit for g in self.gates)

    # builder shortcuts
    def h(self, q):
        return self.append(H(q))

    def x(self, q):
        return self.append(X(q))

    def z(self, q):
        return self.append(Z(q))

    def ry(self, theta, q):
        return self.append(Ry(theta, q))

    def rx(self, theta, q):
        return self.append(Rx(theta, q))

    def rz(self, theta, q):
        return self.append(Rz(theta, q))

    def rzz(self, theta, q0, q1):
        return self.append(Rzz(theta, q0, q1))

    def cx(self, c, t):
        return self.append(CX(c, t))

    def cz(self, *qs):
        return self.append(CZ(*qs))

    def run(self, initial: StateVector | None = None) -> StateVector:
        state = initial if initial is not None else StateVector.zero(self.n_qubits)
        if state.n_qubits != self.n_qubits:
            raise ValueError("initial state width does not match circuit")
        psi = state.amplitudes[:, None].copy()
        for g in self.gates:
            psi = _apply_gate_array(psi, g, self.n_qubits)
        return StateVector(psi[:, 0])

    def unitary(self) -> np.ndarray:
        if self.n_qubits > 12:
            raise ValueError("dense unitary limited to 12 qubits")
        psi = np.eye(2**self.n_qubits, dtype=complex)
        for g in self.gates:
            psi = _apply_gate_array(psi, g, self.n_qubits)
        return psi


def embed(gate: Gate, n_qubits: int) -> np.ndarray:
    """Dense 2^n x 2^n matrix of ``gate`` inside an ``n_qubits`` register."""
    return Circuit(n_qubits, [gate]).unitary()


# Measurement -------------------------------------------------------------------


def bitstring(index: int, n_qubits: int) -> str:
    return format(index, f"0{n_qubits}b") if n_qubits else ""


def register_values(n_qubits: int, qubits: Sequence[int]) -> np.ndarray:
    """Value of the register ``qubits`` (qubits[0] is its LSB) for every basis index."""
    idx = np.arange(2**n_qubits)
    val = np.zeros_like(idx)
    for i, q in enumerate(qubits):
        val |= ((idx >> q) & 1) << i
    return val


def marginal(state: StateVector, qubits: Sequence[int] | int) -> np.ndarray:
    """Outcome distribution of measuring only ``qubits``."""
    qubits = (qubits,) if isinstance(qubits, (int, np.integer)) else tuple(qubits)
    vals = register_values(state.n_qubits, qubits)
    return np.bincount(vals, weights=state.probabilities(), minlength=2 ** len(qubits))


def post_select(
    state: StateVector, qubit: Sequence[int] | int, outcome: int
) -> tuple[StateVector, float]:
    """Collapse ``qubit`` (or a register) onto ``outcome``.

    Returns the renormalised conditional state and the pre-collapse
    probability of the outcome.
    """
    qubits = (qubit,) if isinstance(qubit, (int, np.integer)) else tuple(qubit)
    if any(q >= state.n_qubits for q in qubits):
        raise ValueError("post-selection qubit out of range")
    keep = register_values(state.n_qubits, qubits) == outcome
    prob = float(state.probabilities()[keep].sum())
    if prob < ZERO_BRANCH_TOL:
        raise ZeroProbabilityBranch(f"outcome {outcome} on qubits {qubits} has probability {prob:.3g}")
    amps = np.where(keep, state.amplitudes, 0) / np.sqrt(prob)
    return StateVector(amps), prob


def counts_from_indices(indices: np.ndarray, n_qubits: int) -> dict[str, int]:
    vals, cnt = np.unique(indices, return_counts=True)
    return {bitstring(int(v), n_qubits): int(c) for v, c in zip(vals, cnt)}


def sample_counts(state: StateVector, shots: int, rng: np.random.Generator) -> dict[str, int]:
    """Multinomial shot histogram over bitstrings (only non-zero entries)."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    p = state.probabilities()
    p = p / p.sum()
    draws = rng.multinomial(shots, p)
    n = state.n_qubits
    return {bitstring(i, n): int(c) for i, c in enumerate(draws) if c}


# Noise -------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Stochastic Pauli noise: after a gate, each touched qubit independently
    receives a uniformly random X/Y/Z with probability ``p1q`` (one-qubit gate)
    or ``p2q`` (multi-qubit gate)."""

    p2q: float = 0.0
    p1q: float = 0.0

    def __post_init__(self):
        for p in (self.p2q, self.p1q):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"noise probability {p} outside [0, 1]")

    @property
    def is_noiseless(self) -> bool:
        return self.p2q == 0.0 and self.p1q == 0.0

    def rate(self, gate: Gate) -> float:
        return self.p2q if gate.is_two_qubit else self.p1q


def _simulate_trajectories(
    circuit: Circuit, initial: np.ndarray, patterns: np.ndarray, slots: list[tuple[int, int]]
) -> np.ndarray:
    """Final probabilities for each error pattern (columns)."""
    n = circuit.n_qubits
    psi = np.repeat(initial[:, None], patterns.shape[0], axis=1)
    slot_ptr = 0
    for gi, g in enumerate(circuit.gates):
        psi = _apply_gate_array(psi, g, n)
        while slot_ptr < len(slots) and slots[slot_ptr][0] == gi:
            q = slots[slot_ptr][1]
            ev = patterns[:, slot_ptr]
            for pauli in (1, 2, 3):
                cols = np.flatnonzero(ev == pauli)
                if cols.size:
                    psi[:, cols] = _apply_dense(psi[:, cols], _PAULI[pauli], (q,), n)
            slot_ptr += 1
    return np.abs(psi) ** 2


def run_noisy(
    circuit: Circuit,
    noise: NoiseModel,
    shots: int,
    rng: np.random.Generator,
    initial: StateVector | None = None,
    chunk: int = 8192,
) -> dict[str, int]:
    """Monte-Carlo Pauli-trajectory sampling, one trajectory per shot.

    Shots sharing an error pattern are simulated once. With a noiseless model
    this is exactly ``sample_counts`` on the ideal final state.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    init = initial if initial is not None else StateVector.zero(circuit.n_qubits)
    if noise.is_noiseless:
        return sample_counts(circuit.run(init), shots, rng)
    slots = [(gi, q) for gi, g in enumerate(circuit.gates) for q in g.qubits]
    rates = np.array([noise.rate(circuit.gates[gi]) for gi, _ in slots])
    n = circuit.n_qubits
    if not slots or not rates.any():
        return sample_counts(circuit.run(init), shots, rng)
    outcomes = []
    done = 0
    while done < shots:
        m = min(chunk, shots - done, max(64, 2**23 >> n))
        hit = rng.random((m, len(slots))) < rates
        pauli = rng.integers(1, 4, size=(m, len(slots)))
        events = np.where(hit, pauli, 0).astype(np.int8)
        patterns, inverse = np.unique(events, axis=0, return_inverse=True)
        inverse = np.asarray(inverse).ravel()
        probs = _simulate_trajectories(circuit, init.amplitudes, patterns, slots)
        cdf = np.cumsum(probs, axis=0)
        cdf /= cdf[-1]
        u = rng.random(m)
        picked = cdf[:, inverse]
        outcomes.append(np.minimum((picked < u).sum(axis=0), 2**n - 1))
        done += m
    return counts_from_indices(np.concatenate(outcomes), n)


def expectation_z(counts: dict[str, int], qubits: Sequence[int]) -> float:
    """Shot estimate of the product of Z on ``qubits`` from a histogram."""
    total = sum(counts.values())
    acc = 0
    for bits, c in counts.items():
        n = len(bits)
        parity = sum(int(bits[n - 1 - q]) for q in qubits) % 2
        acc += c * (1 - 2 * parity)
    return acc / total
