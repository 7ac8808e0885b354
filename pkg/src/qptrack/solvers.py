"""Classical association baselines and an exhaustive QUBO oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .mtda import CostMatrix, QuboInstance, objective_part

BRUTE_FORCE_CAP = 24
BIG_M_FACTOR = 1e6


@dataclass
class Assignment:
    pairs: list[tuple[int, int]]
    missed: list[int]
    false_alarms: list[int]
    objective: float

    def validate(self, cost: CostMatrix) -> None:
        N, M = cost.shape
        rows = sorted([i for i, _ in self.pairs] + list(self.missed))
        cols = sorted([j for _, j in self.pairs] + list(self.false_alarms))
        if rows != list(range(N)) or cols != list(range(M)):
            raise ValueError("assignment does not partition tracks and measurements")
        if any(not cost.mask[i, j] for i, j in self.pairs):
            raise ValueError("assignment uses a gated-out pair")


def assignment_objective(cost: CostMatrix, pairs, missed, false_alarms) -> float:
    return float(sum(cost.c[i, j] for i, j in pairs)
                 + cost.c_miss * len(missed) + cost.c_fa * len(false_alarms))


def _finish(cost: CostMatrix, pairs) -> Assignment:
    pairs = sorted(pairs)
    used_i = {i for i, _ in pairs}
    used_j = {j for _, j in pairs}
    missed = [i for i in range(cost.n_tracks) if i not in used_i]
    fas = [j for j in range(cost.n_meas) if j not in used_j]
    return Assignment(pairs, missed, fas, assignment_objective(cost, pairs, missed, fas))


def augmented_matrix(cost: CostMatrix) -> np.ndarray:
    """(N+M) square matrix: pair costs, miss diagonal, false-alarm diagonal, zero slack block.

    Forbidden cells (gated pairs, off-diagonal slacks) get a finite big-M.
    """
    N, M = cost.shape
    finite = [abs(cost.c_miss), abs(cost.c_fa)]
    if cost.mask.any():
        finite.append(cost.max_abs())
    big = BIG_M_FACTOR * max(max(finite), 1.0)
    A = np.full((N + M, M + N), big)
    A[:N, :M] = np.where(cost.mask, cost.c, big)
    A[np.arange(N), M + np.arange(N)] = cost.c_miss
    A[N + np.arange(M), np.arange(M)] = cost.c_fa
    A[N:, M:] = 0.0
    return A


def hungarian_solve(cost: CostMatrix) -> Assignment:
    N, M = cost.shape
    if N == 0 or M == 0:
        return _finish(cost, [])
    A = augmented_matrix(cost)
    rows, cols = linear_sum_assignment(A)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols) if r < N and c < M]
    if any(not cost.mask[i, j] for i, j in pairs):
        raise RuntimeError("assignment selected a gated-out pair")
    return _finish(cost, pairs)


def gnn_solve(cost: CostMatrix) -> Assignment:
    """Greedy nearest neighbour: cheapest free pair first while it beats a miss plus a false alarm."""
    idx = np.argwhere(cost.mask)
    order = sorted(idx.tolist(), key=lambda ij: (cost.c[ij[0], ij[1]], ij[0], ij[1]))
    free_i, free_j = set(range(cost.n_tracks)), set(range(cost.n_meas))
    pairs = []
    for i, j in order:
        if i in free_i and j in free_j and cost.c[i, j] < cost.c_miss + cost.c_fa:
            pairs.append((i, j))
            free_i.discard(i)
            free_j.discard(j)
    return _finish(cost, pairs)


def enumerate_assignments(cost: CostMatrix) -> Assignment:
    """Exhaustive search over all partial matchings; exponential, for testing only."""
    N, M = cost.shape
    best = None

    def rec(i, used, pairs):
        nonlocal best
        if i == N:
            a = _finish(cost, list(pairs))
            if best is None or a.objective < best.objective - 1e-12:
                best = a
            return
        rec(i + 1, used, pairs)
        for j in range(M):
            if j not in used and cost.mask[i, j]:
                rec(i + 1, used | {j}, pairs + [(i, j)])

    rec(0, frozenset(), [])
    return best


# QUBO helpers -------------------------------------------------------------------------


def bits_from_index(index: int, n: int) -> np.ndarray:
    return ((index >> np.arange(n)) & 1).astype(np.int8)


def bits_from_string(bits: str) -> np.ndarray:
    """Measurement string (highest qubit first) to a variable vector (variable a = qubit a)."""
    return np.array([int(ch) for ch in reversed(bits)], dtype=np.int8)


def assignment_from_bits(q: QuboInstance, y) -> Assignment:
    y = np.asarray(y)
    pairs = [ij for ij, a in q.x_index.items() if y[a]]
    missed = [i for i, a in enumerate(q.m_index) if y[a]]
    fas = [j for j, a in enumerate(q.f_index) if y[a]]
    return Assignment(sorted(pairs), missed, fas, objective_part(q, y))


@dataclass
class BruteForceResult:
    bits: np.ndarray
    energy: float
    index: int


def brute_force_qubo(q: QuboInstance, chunk: int = 1 << 16) -> BruteForceResult:
    """Exhaustive minimum; ties go to the lowest integer value of the bit vector."""
    n = q.n_var
    if n > BRUTE_FORCE_CAP:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_CAP} variables, got {n}")
    if n == 0:
        return BruteForceResult(np.zeros(0, dtype=np.int8), q.offset, 0)
    best_e, best_i = np.inf, -1
    shifts = np.arange(n)
    for start in range(0, 2**n, chunk):
        idx = np.arange(start, min(start + chunk, 2**n))
        Y = ((idx[:, None] >> shifts) & 1).astype(float)
        E = np.einsum("ka,ab,kb->k", Y, q.Q, Y) + q.offset
        k = int(np.argmin(E))
        if E[k] < best_e:
            best_e, best_i = float(E[k]), int(idx[k])
    return BruteForceResult(bits_from_index(best_i, n), best_e, best_i)


@dataclass
class DecodeResult:
    bitstring: str
    bits: np.ndarray
    energy: float
    reference: float
    quality: float | None
    gap: float
    candidates: list[tuple[str, float]] = field(default_factory=list)


def quality_ratio(energy: float, reference: float) -> float | None:
    """best / optimum when the optimum is negative; undefined otherwise."""
    if reference < 0:
        return energy / reference
    return None


def decode_topk(histogram: dict[str, int], q: QuboInstance, k: int = 10,
                reference: float | None = None) -> DecodeResult:
    """Best QUBO energy among the ``k`` most frequent bitstrings."""
    if not histogram:
        raise ValueError("empty histogram")
    ranked = sorted(histogram.items(), key=lambda kv: (-kv[1], int(kv[0], 2)))[:k]
    cands = []
    for bits, _ in ranked:
        y = bits_from_string(bits)
        if len(y) != q.n_var:
            raise ValueError(f"bitstring length {len(y)} does not match {q.n_var} variables")
        cands.append((bits, float(y @ q.Q @ y + q.offset)))
    best_bits, best_e = min(cands, key=lambda t: (t[1], int(t[0], 2)))
    if reference is None:
        reference = brute_force_qubo(q).energy
    return DecodeResult(best_bits, bits_from_string(best_bits), best_e, reference,
                        quality_ratio(best_e, reference), best_e - reference, cands)
