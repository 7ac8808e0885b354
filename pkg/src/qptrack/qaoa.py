"""QAOA with a fixed-parameter-count angle schedule."""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import mtda
from .mtda import IsingInstance, QuboInstance
from .sim import Circuit, H, NoiseModel, Rx, Rz, Rzz, run_noisy, sample_counts, StateVector
from .solvers import bits_from_string, brute_force_qubo, decode_topk

BASES = ("polynomial", "trigonometric")


def basis_functions(basis: str, count: int, t: np.ndarray) -> np.ndarray:
    """Matrix with column m equal to phi_m(t): t^m or cos(m pi t)."""
    t = np.asarray(t, dtype=float)
    m = np.arange(count)
    if basis == "polynomial":
        return t[:, None] ** m
    if basis == "trigonometric":
        return np.cos(np.pi * t[:, None] * m)
    raise ValueError(f"unknown basis {basis!r}")


def layer_points(p: int) -> np.ndarray:
    """Midpoints (l - 1/2)/p of the p layers."""
    if p < 1:
        raise ValueError("depth p must be >= 1")
    return (np.arange(1, p + 1) - 0.5) / p


@dataclass(frozen=True)
class FpcSchedule:
    """Angle schedule gamma(t) = sum a_m phi_m(t), beta(t) = sum b_m phi_m(t) sampled at p layers."""

    gamma_coeffs: tuple[float, ...]
    beta_coeffs: tuple[float, ...]
    basis: str = "polynomial"
    p: int = 1

    def __post_init__(self):
        object.__setattr__(self, "gamma_coeffs", tuple(float(v) for v in self.gamma_coeffs))
        object.__setattr__(self, "beta_coeffs", tuple(float(v) for v in self.beta_coeffs))
        if self.basis not in BASES:
            raise ValueError(f"unknown basis {self.basis!r}")
        if self.p < 1:
            raise ValueError("depth p must be >= 1")
        if not self.gamma_coeffs or not self.beta_coeffs:
            raise ValueError("schedule needs at least one coefficient per angle")

    @property
    def n_params(self) -> int:
        return len(self.gamma_coeffs) + len(self.beta_coeffs)

    @property
    def params(self) -> np.ndarray:
        return np.array(self.gamma_coeffs + self.beta_coeffs)

    def with_params(self, vec) -> FpcSchedule:
        kg = len(self.gamma_coeffs)
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters")
        return FpcSchedule(tuple(vec[:kg]), tuple(vec[kg:]), self.basis, self.p)

    def at_depth(self, p: int) -> FpcSchedule:
        return FpcSchedule(self.gamma_coeffs, self.beta_coeffs, self.basis, p)


def evaluate_schedule(s: FpcSchedule) -> list[tuple[float, float]]:
    t = layer_points(s.p)
    g = basis_functions(s.basis, len(s.gamma_coeffs), t) @ np.array(s.gamma_coeffs)
    b = basis_functions(s.basis, len(s.beta_coeffs), t) @ np.array(s.beta_coeffs)
    return list(zip(g.tolist(), b.tolist()))


def warm_start(k: int, p: int = 1, basis: str = "polynomial") -> FpcSchedule:
    """Linear gamma ramp pi*t and constant beta pi/4, projected onto k basis functions each.

    For the polynomial basis with k >= 2 the projection is exact: a = [0, pi, 0, ...].
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if basis == "polynomial" and k >= 2:
        a = [0.0, math.pi] + [0.0] * (k - 2)
        b = [math.pi / 4] + [0.0] * (k - 1)
        return FpcSchedule(tuple(a), tuple(b), basis, p)
    t = (np.arange(512) + 0.5) / 512
    Phi = basis_functions(basis, k, t)
    a = np.linalg.lstsq(Phi, math.pi * t, rcond=None)[0]
    b = np.linalg.lstsq(Phi, np.full_like(t, math.pi / 4), rcond=None)[0]
    return FpcSchedule(tuple(a), tuple(b), basis, p)


# Circuits and expectation ---------------------------------------------------------------


def build_qaoa_circuit(ising: IsingInstance, angles: Sequence[tuple[float, float]]) -> Circuit:
    if not angles:
        raise ValueError("need at least one layer of angles")
    n = ising.n_spins
    c = Circuit(n)
    for q in range(n):
        c.append(H(q))
    couplings = [(a, b, ising.J[a, b]) for a, b in zip(*np.nonzero(ising.J))]
    for gamma, beta in angles:
        for q in range(n):
            if ising.h[q] != 0:
                c.append(Rz(2 * gamma * ising.h[q], q))
        for a, b, j in couplings:
            c.append(Rzz(2 * gamma * j, int(a), int(b)))
        for q in range(n):
            c.append(Rx(2 * beta, q))
    return c


def _mixer(psi: np.ndarray, beta: float, n: int) -> np.ndarray:
    c, s = math.cos(beta), -1j * math.sin(beta)
    psi = psi.reshape((2,) * n)
    for ax in range(n):
        a0 = np.take(psi, 0, axis=ax)
        a1 = np.take(psi, 1, axis=ax)
        psi = np.stack([c * a0 + s * a1, s * a0 + c * a1], axis=ax)
    return psi.reshape(-1)


def qaoa_state(ising: IsingInstance, angles: Sequence[tuple[float, float]],
               diag: np.ndarray | None = None) -> np.ndarray:
    """Statevector via the diagonal cost phase; agrees with ``build_qaoa_circuit`` up to global phase."""
    n = ising.n_spins
    if diag is None:
        diag = ising.diagonal()
    phase = diag - ising.offset
    psi = np.full(2**n, 2 ** (-n / 2), dtype=complex)
    for gamma, beta in angles:
        psi = psi * np.exp(-1j * gamma * phase)
        psi = _mixer(psi, beta, n)
    return psi


def expectation(ising: IsingInstance, angles, diag: np.ndarray | None = None) -> float:
    if diag is None:
        diag = ising.diagonal()
    psi = qaoa_state(ising, angles, diag)
    return float(np.abs(psi) ** 2 @ diag)


def scaled(ising: IsingInstance, factor: float) -> IsingInstance:
    return IsingInstance(ising.h / factor, ising.J / factor, ising.offset / factor)


def coefficient_scale(ising: IsingInstance) -> float:
    m = max(np.abs(ising.h).max(initial=0.0), np.abs(ising.J).max(initial=0.0))
    return float(m) if m > 0 else 1.0


# Optimisation ----------------------------------------------------------------------------


@dataclass
class OptimizerConfig:
    maxiter: int = 200
    rhobeg: float = 0.3
    shots: int = 4096
    top_k: int = 10
    normalize: bool = True


@dataclass
class QaoaResult:
    schedule: FpcSchedule
    expectation: float
    initial_expectation: float
    iterations: int
    scale: float
    histogram: dict[str, int] = field(default_factory=dict)
    quality: float | None = None
    best_energy: float | None = None
    best_bits: str | None = None
    feasible: bool | None = None

    @property
    def n_params(self) -> int:
        return self.schedule.n_params

    def angles(self) -> list[tuple[float, float]]:
        """Angles for the unnormalised Hamiltonian."""
        return [(g / self.scale, b) for g, b in evaluate_schedule(self.schedule)]


def optimize(ising: IsingInstance, p: int = 1, k: int = 3, basis: str = "polynomial",
             cfg: OptimizerConfig | None = None, rng: np.random.Generator | None = None,
             qubo: QuboInstance | None = None, reference: float | None = None,
             init: FpcSchedule | None = None) -> QaoaResult:
    """COBYLA over the 2k schedule coefficients, starting from the warm ramp.

    ``init`` offers alternative starting coefficients (for instance the
    optimum found at a shallower depth); whichever start has the lower
    expectation at this depth is used.

    The Hamiltonian is divided by its largest coefficient so the warm start
    sits at a sensible angle scale. Expectations are reported unnormalised.
    With ``qubo`` given, the sampled histogram is decoded (top-k energies).
    """
    cfg = cfg or OptimizerConfig()
    rng = rng if rng is not None else np.random.default_rng(42)
    scale = coefficient_scale(ising) if cfg.normalize else 1.0
    work = scaled(ising, scale)
    diag = work.diagonal()
    start = warm_start(k, p, basis)
    best = {"f": math.inf, "x": start.params}
    calls = 0

    def f(x):
        nonlocal calls
        calls += 1
        val = expectation(work, evaluate_schedule(start.with_params(x)), diag)
        if val < best["f"]:
            best["f"], best["x"] = val, np.array(x, dtype=float)
        return val

    f0 = f(start.params)
    x0 = start.params
    if init is not None:
        alt = start.with_params(init.params)
        if f(alt.params) < f0:
            x0 = alt.params
    minimize(f, x0, method="COBYLA",
             options={"maxiter": cfg.maxiter, "rhobeg": cfg.rhobeg})
    sched = start.with_params(best["x"])
    res = QaoaResult(sched, best["f"] * scale, f0 * scale, calls, scale)
    if cfg.shots:
        psi = qaoa_state(work, evaluate_schedule(sched), diag)
        res.histogram = sample_counts(StateVector(psi), cfg.shots, rng)
        if qubo is not None:
            _decode_into(res, qubo, cfg.top_k, reference)
    return res


def _decode_into(res: QaoaResult, qubo: QuboInstance, top_k: int, reference) -> None:
    dec = decode_topk(res.histogram, qubo, top_k, reference)
    res.quality = dec.quality
    res.best_energy = dec.energy
    res.best_bits = dec.bitstring
    res.feasible = qubo.cost is not None and mtda.is_feasible(qubo, dec.bits)


def convergence(ising: IsingInstance, value: float) -> float:
    """Fraction of the gap from the uniform-state mean to the ground energy that is closed."""
    diag = ising.diagonal()
    lo, mean = float(diag.min()), float(diag.mean())
    if mean - lo <= 0:
        return 1.0
    return (mean - value) / (mean - lo)


@dataclass
class TransferReport:
    sim_convergence: float
    sim_quality: float | None
    noisy_quality: float | None
    noisy_feasible: bool


def transfer_to_noisy(res: QaoaResult, ising: IsingInstance, qubo: QuboInstance,
                      noise: NoiseModel, shots: int, rng: np.random.Generator,
                      top_k: int = 10) -> TransferReport:
    """Replay simulator-optimised angles under trajectory noise and decode."""
    circ = build_qaoa_circuit(ising, res.angles())
    counts = run_noisy(circ, noise, shots, rng)
    ref = brute_force_qubo(qubo).energy
    dec = decode_topk(counts, qubo, top_k, ref)
    return TransferReport(convergence(ising, res.expectation), res.quality, dec.quality,
                          mtda.is_feasible(qubo, dec.bits))


# Instances and sweeps ------------------------------------------------------------------


def random_instance(n_tracks: int, n_meas: int, rng: np.random.Generator,
                    sign: str = "negative") -> tuple[QuboInstance, IsingInstance]:
    """Ungated association instance with nominal variable count N*M + N + M."""
    cost = mtda.random_cost_matrix(n_tracks, n_meas, rng, sign=sign)
    q = mtda.build_qubo(cost)
    return q, mtda.to_ising(q)


SWEEP_COLUMNS = ("k", "p", "n_params", "seed", "objective", "quality_pct", "feasible")


def fpc_sensitivity_sweep(qubo: QuboInstance, ks: Iterable[int], ps: Iterable[int],
                          seeds: Iterable[int], basis: str = "polynomial",
                          cfg: OptimizerConfig | None = None) -> list[dict]:
    """One optimisation per (k, p, seed); the seed drives shot sampling only.

    Depths run in increasing order and each offers its optimum as a start to the next.
    """
    ising = mtda.to_ising(qubo)
    ref = brute_force_qubo(qubo).energy
    ks, ps, seeds = list(ks), sorted(ps), list(seeds)
    rows = []
    for k in ks:
        for s in seeds:
            prev = None
            for p in ps:
                r = optimize(ising, p, k, basis, cfg, np.random.default_rng(s), qubo, ref,
                             init=prev)
                prev = r.schedule
                y = bits_from_string(r.best_bits)
                rows.append({
                    "k": k, "p": p, "n_params": r.n_params, "seed": s,
                    "objective": mtda.objective_part(qubo, y) if qubo.cost is not None
                    else r.best_energy,
                    "quality_pct": None if r.quality is None else 100 * r.quality,
                    "feasible": bool(r.feasible),
                })
    return rows


def summarize_sweep(rows: list[dict]) -> list[dict]:
    """Mean objective and feasibility percentage per (k, p)."""
    out = {}
    for r in rows:
        out.setdefault((r["k"], r["p"]), []).append(r)
    table = []
    for (k, p), rs in sorted(out.items()):
        table.append({
            "k": k, "p": p, "n_params": rs[0]["n_params"],
            "mean_objective": float(np.mean([r["objective"] for r in rs])),
            "feasibility_pct": 100.0 * float(np.mean([r["feasible"] for r in rs])),
        })
    return table


def write_sweep_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        w.writerows(rows)
