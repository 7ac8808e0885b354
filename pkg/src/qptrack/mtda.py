"""Data association front end: Kalman prediction, gated costs, QUBO and Ising forms."""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

GATE_CHI2_99 = 9.21
MISS_FRACTION = 0.7
PENALTY_FACTOR = 1.5
SPD_TOL = 1e-9

H_POS = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])


def _check_spd(P: np.ndarray, name: str) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(P, P.T, atol=SPD_TOL):
        raise ValueError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{name} is not positive definite") from exc
    return P


@dataclass(frozen=True)
class Track:
    """Constant-velocity state [px, py, vx, vy] with covariance."""

    x: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        if x.shape != (4,):
            raise ValueError("track state must have 4 entries")
        P = _check_spd(self.P, "track covariance")
        if P.shape != (4, 4):
            raise ValueError("track covariance must be 4x4")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "P", P)

    @property
    def position(self) -> np.ndarray:
        return self.x[:2]


@dataclass(frozen=True)
class Measurement:
    z: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).reshape(-1)
        if z.shape != (2,):
            raise ValueError("measurement must have 2 entries")
        R = _check_spd(self.R, "measurement covariance")
        if R.shape != (2, 2):
            raise ValueError("measurement covariance must be 2x2")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "R", R)


def constant_velocity(dt: float = 1.0) -> np.ndarray:
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    return F


def process_noise(q: float = 0.01) -> np.ndarray:
    """Noise on the velocity block only."""
    return np.diag([0.0, 0.0, q, q])


def _symmetrise(P):
    return 0.5 * (P + P.T)


def kalman_predict(track: Track, F=None, Q_proc=None) -> Track:
    F = constant_velocity() if F is None else np.asarray(F, dtype=float)
    Q_proc = process_noise() if Q_proc is None else np.asarray(Q_proc, dtype=float)
    return Track(F @ track.x, _symmetrise(F @ track.P @ F.T + Q_proc))


def kalman_update(track: Track, meas: Measurement, H_obs=H_POS) -> Track:
    """Joseph-form update, which keeps the covariance symmetric positive definite."""
    H_obs = np.asarray(H_obs, dtype=float)
    S = H_obs @ track.P @ H_obs.T + meas.R
    K = np.linalg.solve(S, H_obs @ track.P).T
    x = track.x + K @ (meas.z - H_obs @ track.x)
    IKH = np.eye(4) - K @ H_obs
    P = IKH @ track.P @ IKH.T + K @ meas.R @ K.T
    return Track(x, _symmetrise(P))


@dataclass(frozen=True)
class AssociationCost:
    d2: float
    c: float
    S: np.ndarray


def association_cost(track: Track, meas: Measurement, H_obs=H_POS) -> AssociationCost:
    """Squared Mahalanobis distance and negative log-likelihood (nats) of one pairing."""
    H_obs = np.asarray(H_obs, dtype=float)
    S = H_obs @ track.P @ H_obs.T + meas.R
    sign, logdet = np.linalg.slogdet(2 * math.pi * S)
    if sign <= 0 or not np.isfinite(logdet):
        raise np.linalg.LinAlgError("innovation covariance is singular")
    nu = meas.z - H_obs @ track.x
    d2 = float(nu @ np.linalg.solve(S, nu))
    return AssociationCost(d2, 0.5 * (d2 + logdet), S)


@dataclass
class CostMatrix:
    """Gated association costs. Entries outside ``mask`` hold +inf."""

    c: np.ndarray
    mask: np.ndarray
    c_miss: float
    c_fa: float
    d2: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.atleast_2d(np.asarray(self.c, dtype=float))
        self.mask = np.asarray(self.mask, dtype=bool).reshape(self.c.shape)
        self.c = np.where(self.mask, self.c, np.inf)
        if not np.all(np.isfinite(self.c[self.mask])):
            raise ValueError("gated-in costs must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.c.shape

    @property
    def n_tracks(self) -> int:
        return self.c.shape[0]

    @property
    def n_meas(self) -> int:
        return self.c.shape[1]

    def max_abs(self) -> float:
        return float(np.abs(self.c[self.mask]).max()) if self.mask.any() else 0.0

    @classmethod
    def from_array(cls, c, c_miss: float | None = None, c_fa: float | None = None,
                   mask=None) -> CostMatrix:
        """Wrap a raw cost array; non-finite entries are treated as gated out."""
        c = np.atleast_2d(np.asarray(c, dtype=float))
        if mask is None:
            mask = np.isfinite(c)
        mask = np.asarray(mask, dtype=bool)
        default = default_miss_cost(c, mask)
        return cls(c, mask, default if c_miss is None else c_miss,
                   default if c_fa is None else c_fa)


def default_miss_cost(c: np.ndarray, mask: np.ndarray) -> float:
    """0.7 times the largest gated-in cost, or 1 when nothing passes the gate."""
    if not mask.any():
        return 1.0
    return MISS_FRACTION * float(np.max(c[mask]))


def build_cost_matrix(tracks: Sequence[Track], measurements: Sequence[Measurement],
                      gate_threshold: float = GATE_CHI2_99, c_miss: float | None = None,
                      c_fa: float | None = None, H_obs=H_POS) -> CostMatrix:
    N, M = len(tracks), len(measurements)
    c = np.full((N, M), np.inf)
    d2 = np.full((N, M), np.inf)
    for i, t in enumerate(tracks):
        for j, z in enumerate(measurements):
            ac = association_cost(t, z, H_obs)
            d2[i, j] = ac.d2
            c[i, j] = ac.c
    mask = d2 <= gate_threshold
    default = default_miss_cost(c, mask)
    return CostMatrix(c, mask, default if c_miss is None else c_miss,
                      default if c_fa is None else c_fa, d2)


# QUBO -------------------------------------------------------------------------------


def nominal_n_var(n_tracks: int, n_meas: int) -> int:
    """Variable count without gating: one x per pair, one miss slack per track, one FA slack per measurement."""
    return n_tracks * n_meas + n_tracks + n_meas


def reference_nonzero_formula(n_tracks: int, n_meas: int) -> int:
    """Diagonal plus symmetric row and column pair couplings, slack couplings excluded."""
    N, M = n_tracks, n_meas
    return nominal_n_var(N, M) + 2 * math.comb(M, 2) * N + 2 * math.comb(N, 2) * M


def structural_nonzero_count(n_tracks: int, n_meas: int, symmetric: bool = False) -> int:
    """Nonzeros of the ungated penalty structure, slack couplings included."""
    N, M = n_tracks, n_meas
    pairs = math.comb(M, 2) * N + math.comb(N, 2) * M + 2 * N * M
    return nominal_n_var(N, M) + (2 * pairs if symmetric else pairs)


def default_penalty(cost: CostMatrix) -> float:
    """1.5 times the largest gated-in |c|; falls back to the slack costs, then to 1."""
    scale = cost.max_abs()
    if scale == 0:
        scale = max(abs(cost.c_miss), abs(cost.c_fa))
    return PENALTY_FACTOR * (scale if scale > 0 else 1.0)


@dataclass
class QuboInstance:
    """Upper-triangular QUBO with energy y^T Q y + offset.

    Variables are ordered [x_ij for gated-in pairs (row-major), m_i, f_j].
    """

    Q: np.ndarray
    offset: float
    x_index: dict[tuple[int, int], int]
    m_index: list[int]
    f_index: list[int]
    cost: CostMatrix | None = None
    penalty: float = 0.0
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        if self.Q.ndim != 2 or self.Q.shape[0] != self.Q.shape[1]:
            raise ValueError("Q must be square")
        if np.any(np.tril(self.Q, -1)):
            self.Q = np.triu(self.Q) + np.triu(self.Q.T, 1)

    @property
    def n_var(self) -> int:
        return self.Q.shape[0]

    def symmetric(self) -> np.ndarray:
        """Symmetric matrix with the same quadratic form."""
        off = np.triu(self.Q, 1)
        return np.diag(np.diag(self.Q)) + 0.5 * (off + off.T)

    def energy(self, y) -> float:
        return qubo_energy(self, y)

    def energies(self, Y: np.ndarray) -> np.ndarray:
        """Energies of every row of a 0/1 matrix ``Y``."""
        Y = np.asarray(Y, dtype=float)
        return np.einsum("ka,ab,kb->k", Y, self.Q, Y) + self.offset

    @classmethod
    def from_matrix(cls, Q, offset: float = 0.0) -> QuboInstance:
        Q = np.asarray(Q, dtype=float)
        return cls(Q, offset, {}, [], [])


def build_qubo(cost: CostMatrix, penalty: float | None = None) -> QuboInstance:
    """Objective diagonal plus penalty-weighted equality constraints with slacks.

    Each track row enforces sum_j x_ij + m_i = 1 and each measurement column
    sum_i x_ij + f_j = 1; each squared constraint contributes -1 on its
    variables' diagonals, +2 on every pair inside it and +1 to the offset.
    """
    lam = default_penalty(cost) if penalty is None else float(penalty)
    N, M = cost.shape
    x_index = {}
    for i in range(N):
        for j in range(M):
            if cost.mask[i, j]:
                x_index[(i, j)] = len(x_index)
    nx = len(x_index)
    m_index = [nx + i for i in range(N)]
    f_index = [nx + N + j for j in range(M)]
    n = nx + N + M
    Q = np.zeros((n, n))
    labels = [f"x_{i}_{j}" for (i, j) in x_index] + [f"m_{i}" for i in range(N)] + [
        f"f_{j}" for j in range(M)]

    for (i, j), a in x_index.items():
        Q[a, a] += cost.c[i, j]
    for i in range(N):
        Q[m_index[i], m_index[i]] += cost.c_miss
    for j in range(M):
        Q[f_index[j], f_index[j]] += cost.c_fa

    def add_constraint(members):
        for u, a in enumerate(members):
            Q[a, a] -= lam
            for b in members[u + 1:]:
                lo, hi = min(a, b), max(a, b)
                Q[lo, hi] += 2 * lam

    for i in range(N):
        add_constraint([x_index[(i, j)] for j in range(M) if (i, j) in x_index] + [m_index[i]])
    for j in range(M):
        add_constraint([x_index[(i, j)] for i in range(N) if (i, j) in x_index] + [f_index[j]])
    return QuboInstance(Q, lam * (N + M), x_index, m_index, f_index, cost, lam, labels)


def _as_bits(y, n: int) -> np.ndarray:
    y = np.asarray(y).reshape(-1)
    if y.shape != (n,):
        raise ValueError(f"expected {n} binary values, got {y.shape[0]}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("QUBO variables must be 0 or 1")
    return y.astype(float)


def qubo_energy(q: QuboInstance, y) -> float:
    y = _as_bits(y, q.n_var)
    return float(y @ q.Q @ y + q.offset)


def constraint_residuals(q: QuboInstance, y) -> tuple[np.ndarray, np.ndarray]:
    """Row and column residuals (sum - 1) of the equality constraints."""
    y = _as_bits(y, q.n_var)
    rows = y[q.m_index] - 1.0
    cols = y[q.f_index] - 1.0
    for (i, j), a in q.x_index.items():
        rows[i] += y[a]
        cols[j] += y[a]
    return rows, cols


def is_feasible(q: QuboInstance, y) -> bool:
    rows, cols = constraint_residuals(q, y)
    return bool(np.all(rows == 0) and np.all(cols == 0))


def objective_part(q: QuboInstance, y) -> float:
    """Association objective (costs of pairs, misses and false alarms) without penalties."""
    y = _as_bits(y, q.n_var)
    c = q.cost
    total = sum(c.c[i, j] * y[a] for (i, j), a in q.x_index.items())
    return float(total + c.c_miss * y[q.m_index].sum() + c.c_fa * y[q.f_index].sum())


def direct_energy(q: QuboInstance, y) -> float:
    """Objective plus penalty times squared constraint residuals, evaluated term by term."""
    rows, cols = constraint_residuals(q, y)
    return objective_part(q, y) + q.penalty * float(rows @ rows + cols @ cols)


def nonzero_count(q: QuboInstance, tol: float = 0.0) -> int:
    """Nonzero entries of the stored upper triangle including the diagonal."""
    return int(np.count_nonzero(np.abs(np.triu(q.Q)) > tol))


# Ising --------------------------------------------------------------------------------


@dataclass
class IsingInstance:
    """E(z) = sum_a h_a z_a + sum_{a<b} J_ab z_a z_b + offset, with J strictly upper-triangular."""

    h: np.ndarray
    J: np.ndarray
    offset: float

    @property
    def n_spins(self) -> int:
        return len(self.h)

    def energy(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(self.h @ z + z @ self.J @ z + self.offset)

    def energies(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        return Z @ self.h + np.einsum("ka,ab,kb->k", Z, self.J, Z) + self.offset

    def diagonal(self) -> np.ndarray:
        """Energy of every computational basis state (qubit a carries spin z_a = 1 - 2 bit_a)."""
        n = self.n_spins
        idx = np.arange(2**n)
        Z = 1.0 - 2.0 * ((idx[:, None] >> np.arange(n)) & 1)
        return self.energies(Z)


def to_ising(q: QuboInstance) -> IsingInstance:
    """Substitute x = (1 - z)/2."""
    d = np.diag(q.Q).copy()
    U = np.triu(q.Q, 1)
    S = U + U.T
    h = -d / 2 - S.sum(axis=1) / 4
    J = U / 4
    offset = q.offset + d.sum() / 2 + U.sum() / 4
    return IsingInstance(h, J, float(offset))


def all_bitstrings(n: int) -> np.ndarray:
    """Rows are binary vectors; row r has variable a equal to bit a of r."""
    idx = np.arange(2**n)
    return ((idx[:, None] >> np.arange(n)) & 1).astype(np.int8)


# File formats -------------------------------------------------------------------------


def export_qubo(q: QuboInstance, path) -> None:
    """Sparse 'i j value' triplets of the upper triangle after a header line."""
    rows, cols = np.nonzero(np.triu(q.Q))
    with open(path, "w") as fh:
        fh.write(f"# n_var={q.n_var} offset={float(q.offset)!r}\n")
        for a, b in zip(rows, cols):
            fh.write(f"{a} {b} {float(q.Q[a, b])!r}\n")


def import_qubo(path) -> QuboInstance:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValueError("missing QUBO header line")
        meta = dict(tok.split("=", 1) for tok in header[1:].split())
        n = int(meta["n_var"])
        Q = np.zeros((n, n))
        for line in fh:
            if line.strip():
                a, b, v = line.split()
                Q[int(a), int(b)] = float(v)
    return QuboInstance.from_matrix(Q, float(meta["offset"]))


def save_scenario(tracks: Sequence[Track], measurements: Sequence[Measurement], path) -> None:
    data = {
        "tracks": [{"x": t.x.tolist(), "P": t.P.tolist()} for t in tracks],
        "measurements": [{"z": m.z.tolist(), "R": m.R.tolist()} for m in measurements],
    }
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)


def load_scenario(path) -> tuple[list[Track], list[Measurement]]:
    with open(path) as fh:
        data = json.load(fh)
    try:
        tracks = [Track(t["x"], t["P"]) for t in data["tracks"]]
        meas = [Measurement(m["z"], m["R"]) for m in data["measurements"]]
    except KeyError as exc:
        raise ValueError(f"scenario file missing field {exc}") from exc
    return tracks, meas


def random_cost_matrix(n_tracks: int, n_meas: int, rng: np.random.Generator,
                       sign: str = "positive", gate_fraction: float = 0.0,
                       low: float = 0.5, high: float = 10.0) -> CostMatrix:
    """Random costs for tests and sweeps.

    ``sign="positive"`` draws from [low, high], ``"negative"`` from [-high, -low].
    A fraction of pairs is gated out at random.
    """
    c = rng.uniform(low, high, size=(n_tracks, n_meas))
    if sign == "negative":
        c = -c
    elif sign != "positive":
        raise ValueError(f"unknown sign family {sign!r}")
    mask = rng.random((n_tracks, n_meas)) >= gate_fraction
    return CostMatrix.from_array(np.where(mask, c, np.inf))
