"""Bayesian iterative amplitude estimation on a discretised angle grid."""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np

from .belief_quantum import GroverSetup
from .sim import Circuit, NoiseModel, Ry, run_noisy

DEFAULT_GRID = 2048
MAX_GRID = 2**20


class PosteriorUnderflow(FloatingPointError):
    """Every grid point has zero likelihood after an update."""


def _theta_grid(n: int) -> np.ndarray:
    # cell midpoints keep the grid strictly inside (0, pi/2)
    return (np.arange(n) + 0.5) * (math.pi / 2) / n


@dataclass
class AmplitudePosterior:
    """Posterior over the angle theta with a = sin^2(theta), stored as log weights."""

    theta: np.ndarray
    log_weights: np.ndarray
    prior: str = "uniform"

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        if self.theta.shape != self.log_weights.shape or self.theta.ndim != 1:
            raise ValueError("theta grid and weights must be 1-D arrays of equal length")
        if np.any(np.diff(self.theta) <= 0):
            raise ValueError("theta grid must be strictly increasing")
        if self.theta[0] <= 0 or self.theta[-1] >= math.pi / 2:
            raise ValueError("theta grid must lie inside (0, pi/2)")
        self._normalise()

    @classmethod
    def uniform(cls, n_points: int = DEFAULT_GRID) -> AmplitudePosterior:
        """Flat in a: theta weights proportional to da/dtheta = sin(2 theta)."""
        th = _theta_grid(n_points)
        return cls(th, np.log(np.sin(2 * th)), "uniform")

    @classmethod
    def gaussian(cls, mean: float, std: float, n_points: int = DEFAULT_GRID) -> AmplitudePosterior:
        """Gaussian in a (truncated to [0, 1]) with the matching Jacobian."""
        if std <= 0:
            raise ValueError("prior std must be positive")
        th = _theta_grid(n_points)
        a = np.sin(th) ** 2
        logw = -0.5 * ((a - mean) / std) ** 2 + np.log(np.sin(2 * th))
        return cls(th, logw, f"gaussian({mean},{std})")

    def _normalise(self):
        top = self.log_weights.max()
        if not np.isfinite(top):
            raise PosteriorUnderflow("posterior has no support left on the grid")
        self.log_weights = self.log_weights - top
        self.log_weights -= math.log(np.exp(self.log_weights).sum())

    @property
    def density(self) -> np.ndarray:
        w = np.exp(self.log_weights)
        return w / w.sum()

    @property
    def a_grid(self) -> np.ndarray:
        return np.sin(self.theta) ** 2

    def mean_a(self) -> float:
        return float(self.density @ self.a_grid)

    def copy(self) -> AmplitudePosterior:
        return AmplitudePosterior(self.theta.copy(), self.log_weights.copy(), self.prior)


def log_likelihood(theta: np.ndarray, k: int, m: int, n: int) -> np.ndarray:
    p = np.sin((2 * k + 1) * theta) ** 2
    with np.errstate(divide="ignore"):
        out = np.zeros_like(theta)
        if m:
            out += m * np.log(p)
        if n - m:
            out += (n - m) * np.log1p(-p)
    return out


def update_posterior(post: AmplitudePosterior, k: int, m: int, n: int) -> AmplitudePosterior:
    """Multiply in the binomial likelihood of ``m`` successes in ``n`` shots after ``k`` iterations."""
    if k < 0 or n < 0 or not 0 <= m <= n:
        raise ValueError(f"need k >= 0 and 0 <= m <= n, got k={k}, m={m}, n={n}")
    return AmplitudePosterior(
        post.theta, post.log_weights + log_likelihood(post.theta, k, m, n), post.prior
    )


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    multimodal: bool = False

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def covers(self, x: float) -> bool:
        return self.lo <= x <= self.hi


def hpd_interval(post: AmplitudePosterior, mass: float = 0.95) -> Interval:
    """Highest-density region on the a axis, found by a threshold sweep.

    Grid weights are converted to a-density before ranking. If the selected
    cells are not contiguous the bounding interval is returned with
    ``multimodal=True``.
    """
    if not 0 < mass < 1:
        raise ValueError("mass must lie in (0, 1)")
    w = post.density
    # cell edges on the a axis
    edges_th = np.concatenate([[0.0], 0.5 * (post.theta[1:] + post.theta[:-1]), [math.pi / 2]])
    edges_a = np.sin(edges_th) ** 2
    # sin^2 b - sin^2 a = sin(a + b) sin(b - a), free of cancellation near a = 1
    da = np.sin(edges_th[1:] + edges_th[:-1]) * np.sin(np.diff(edges_th))
    dens = w / da
    # quantise so that flat stretches tie and resolve by grid order instead of float noise
    order = np.argsort(-np.round(dens / dens.max(), 9), kind="stable")
    cum = np.cumsum(w[order])
    keep = order[: int(np.searchsorted(cum, mass * cum[-1])) + 1]
    keep.sort()
    contiguous = bool(np.all(np.diff(keep) == 1))
    lo, hi = edges_a[keep[0]], edges_a[keep[-1] + 1]
    return Interval(float(lo), float(hi), not contiguous)


@dataclass
class BiqaeConfig:
    """``grid_points=None`` sizes the grid from the largest scheduled k and the shot count."""

    max_iterations: int = 6
    shots: int = 300
    base: int = 3
    epsilon: float = 1e-4
    mass: float = 0.95
    prior: str = "uniform"
    prior_mean: float = 0.5
    prior_std: float = 0.25
    grid_points: int | None = None

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.mass < 1:
            raise ValueError("mass must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.base < 2:
            raise ValueError("schedule base must be >= 2")
        if self.prior not in ("uniform", "gaussian"):
            raise ValueError(f"unknown prior {self.prior!r}")

    def schedule(self) -> list[int]:
        """Grover powers per round. A uniform prior starts with a k=0 calibration round."""
        ks = [self.base**t for t in range(self.max_iterations)]
        if self.prior == "uniform":
            ks = [0] + ks[:-1]
        return ks

    def resolved_grid(self) -> int:
        if self.grid_points is not None:
            return self.grid_points
        kmax = max(self.schedule())
        want = 4 * math.pi * (2 * kmax + 1) * math.sqrt(self.shots)
        return int(min(MAX_GRID, max(DEFAULT_GRID, 2 ** math.ceil(math.log2(want)))))

    def initial_posterior(self) -> AmplitudePosterior:
        n = self.resolved_grid()
        if self.prior == "uniform":
            return AmplitudePosterior.uniform(n)
        return AmplitudePosterior.gaussian(self.prior_mean, self.prior_std, n)


@dataclass
class BiqaeResult:
    a_hat: float
    interval: Interval
    iterations: int
    oracle_queries: int
    rounds: list[tuple[int, int, int]] = field(default_factory=list)
    posterior: AmplitudePosterior | None = field(default=None, repr=False)


def ry_oracle(a: float) -> GroverSetup:
    """One-qubit oracle Ry(2 arcsin sqrt a)|0> with |1> marked."""
    c = Circuit(1).ry(2 * math.asin(math.sqrt(a)), 0)
    return GroverSetup(c, (0,), 1)


def product_oracle(a0: float, a1: float) -> GroverSetup:
    """Two independent Ry qubits; the good outcome is |11>, so a = a0 * a1."""
    c = Circuit(2)
    c.append(Ry(2 * math.asin(math.sqrt(a0)), 0))
    c.append(Ry(2 * math.asin(math.sqrt(a1)), 1))
    return GroverSetup(c, (0, 1), 3)


def _sample_successes(oracle: GroverSetup, k: int, shots: int, noise: NoiseModel,
                      rng: np.random.Generator) -> int:
    if noise.is_noiseless:
        p = min(1.0, max(0.0, oracle.success_probability(k)))
        return int(rng.binomial(shots, p))
    counts = run_noisy(oracle.amplified_circuit(k), noise, shots, rng)
    m = 0
    for bits, c in counts.items():
        idx = int(bits, 2)
        val = sum(((idx >> q) & 1) << i for i, q in enumerate(oracle.marked_qubits))
        if val == oracle.marked_value:
            m += c
    return m


def estimate(oracle: GroverSetup, cfg: BiqaeConfig | None = None,
             noise: NoiseModel | None = None,
             rng: np.random.Generator | None = None) -> BiqaeResult:
    """Run the exponential schedule until the HPD width drops below epsilon."""
    cfg = cfg or BiqaeConfig()
    noise = noise or NoiseModel()
    rng = rng if rng is not None else np.random.default_rng(42)
    post = cfg.initial_posterior()
    rounds = []
    queries = 0
    interval = hpd_interval(post, cfg.mass)
    for k in cfg.schedule():
        m = _sample_successes(oracle, k, cfg.shots, noise, rng)
        post = update_posterior(post, k, m, cfg.shots)
        rounds.append((k, m, cfg.shots))
        queries += (2 * k + 1) * cfg.shots
        interval = hpd_interval(post, cfg.mass)
        if interval.width < cfg.epsilon:
            break
    return BiqaeResult(post.mean_a(), interval, len(rounds), queries, rounds, post)


SWEEP_COLUMNS = ("a_true", "a_hat", "abs_error", "ci_lo", "ci_hi", "covered",
                 "oracle_queries", "seed")


def sweep(amplitudes: Iterable[float], seeds: Iterable[int], cfg: BiqaeConfig | None = None,
          noise: NoiseModel | None = None) -> list[dict]:
    """Independent runs over every (amplitude, seed) pair with a one-qubit oracle.

    Each run draws from ``default_rng(seed)``.
    """
    cfg = cfg or BiqaeConfig()
    seeds = list(seeds)
    rows = []
    for a in amplitudes:
        oracle = ry_oracle(a)
        for s in seeds:
            res = estimate(oracle, cfg, noise, np.random.default_rng(s))
            rows.append({
                "a_true": a,
                "a_hat": res.a_hat,
                "abs_error": abs(res.a_hat - a),
                "ci_lo": res.interval.lo,
                "ci_hi": res.interval.hi,
                "covered": res.interval.covers(a),
                "oracle_queries": res.oracle_queries,
                "seed": s,
            })
    return rows


def write_sweep_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        w.writerows(rows)
