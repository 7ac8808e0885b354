import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qptrack import mtda, solvers
from qptrack.mtda import CostMatrix


def instance(seed, max_n=4, gate=0.3):
    rng = np.random.default_rng(seed)
    N, M = int(rng.integers(1, max_n + 1)), int(rng.integers(1, max_n + 1))
    sign = "negative" if rng.random() < 0.5 else "positive"
    return mtda.random_cost_matrix(N, M, rng, sign=sign, gate_fraction=gate)


def matchings_oracle(cost):
    """Independent oracle: every injective partial map from tracks to measurements."""
    N, M = cost.shape
    best = np.inf
    for targets in itertools.product([None, *range(M)], repeat=N):
        used = [j for j in targets if j is not None]
        if len(used) != len(set(used)):
            continue
        if any(j is not None and not cost.mask[i, j] for i, j in enumerate(targets)):
            continue
        val = sum(cost.c[i, j] for i, j in enumerate(targets) if j is not None)
        val += cost.c_miss * targets.count(None) + cost.c_fa * (M - len(used))
        best = min(best, val)
    return best


# ==========================================================================
# Hungarian and GNN
# ==========================================================================


def test_diagonal_dominant():
    cm = CostMatrix.from_array([[1.0, 2.0], [2.0, 1.0]], c_miss=100, c_fa=100)
    a = solvers.hungarian_solve(cm)
    assert a.pairs == [(0, 0), (1, 1)] and a.objective == 2
    assert solvers.gnn_solve(cm).objective == 2


def test_single_expensive_pair_goes_unassigned():
    cm = CostMatrix.from_array([[10.0]], c_miss=1, c_fa=1)
    a = solvers.hungarian_solve(cm)
    assert a.pairs == [] and a.missed == [0] and a.false_alarms == [0]
    assert a.objective == 2


def test_greedy_trap():
    cm = CostMatrix.from_array([[1.0, 2.0], [1.5, 100.0]], c_miss=1000, c_fa=1000)
    g, h = solvers.gnn_solve(cm), solvers.hungarian_solve(cm)
    assert g.pairs == [(0, 0), (1, 1)] and g.objective == 101
    assert h.pairs == [(0, 1), (1, 0)] and h.objective == 3.5


def test_all_gated():
    cm = CostMatrix.from_array(np.full((2, 3), np.inf))
    for solve in (solvers.hungarian_solve, solvers.gnn_solve):
        a = solve(cm)
        assert a.pairs == [] and a.missed == [0, 1] and a.false_alarms == [0, 1, 2]


def test_empty_sides():
    a = solvers.hungarian_solve(CostMatrix.from_array(np.zeros((0, 2)), c_miss=1, c_fa=1))
    assert a.false_alarms == [0, 1] and a.objective == 2


def test_gnn_respects_miss_plus_fa_cutoff():
    cm = CostMatrix.from_array([[5.0]], c_miss=2, c_fa=2)
    assert solvers.gnn_solve(cm).pairs == []


def test_assignment_validation():
    cm = CostMatrix.from_array([[1.0, np.inf]])
    with pytest.raises(ValueError):
        solvers.Assignment([(0, 1)], [], [0], 0).validate(cm)
    with pytest.raises(ValueError):
        solvers.Assignment([(0, 0)], [0], [1], 0).validate(cm)


def test_augmented_matrix_layout():
    cm = CostMatrix.from_array([[1.0, np.inf]], c_miss=3, c_fa=4)
    A = solvers.augmented_matrix(cm)
    assert A.shape == (3, 3)
    big = A[0, 1]
    assert big >= 1e6
    assert A[0, 0] == 1 and A[0, 2] == 3
    assert A[1, 0] == 4 and A[2, 1] == 4 and A[1, 1] == big
    assert A[1, 2] == 0 and A[2, 2] == 0


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_hungarian_is_optimal_and_valid(seed):
    cm = instance(seed)
    h = solvers.hungarian_solve(cm)
    h.validate(cm)
    assert h.objective == pytest.approx(matchings_oracle(cm), abs=1e-9)
    g = solvers.gnn_solve(cm)
    g.validate(cm)
    assert g.objective >= h.objective - 1e-9


def test_hungarian_on_500_instances():
    for s in range(500):
        cm = instance(s)
        assert solvers.hungarian_solve(cm).objective == pytest.approx(
            solvers.enumerate_assignments(cm).objective, abs=1e-9)


# ==========================================================================
# Brute force
# ==========================================================================


def test_bit_helpers():
    np.testing.assert_array_equal(solvers.bits_from_index(6, 4), [0, 1, 1, 0])
    np.testing.assert_array_equal(solvers.bits_from_string("0110"), [0, 1, 1, 0])
    np.testing.assert_array_equal(solvers.bits_from_string("001"), [1, 0, 0])


def test_brute_force_trivial_cases():
    r = solvers.brute_force_qubo(mtda.QuboInstance.from_matrix(np.zeros((3, 3)), offset=2.5))
    assert r.index == 0 and r.energy == 2.5
    r = solvers.brute_force_qubo(mtda.QuboInstance.from_matrix([[-1.0]]))
    assert r.bits.tolist() == [1] and r.energy == -1


def test_brute_force_cap():
    with pytest.raises(ValueError):
        solvers.brute_force_qubo(mtda.QuboInstance.from_matrix(np.zeros((25, 25))))


def test_brute_force_chunking_is_consistent():
    q = mtda.build_qubo(instance(11))
    a = solvers.brute_force_qubo(q)
    b = solvers.brute_force_qubo(q, chunk=7)
    assert a.index == b.index and a.energy == b.energy


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_qubo_minimum_is_feasible_hungarian_optimum(seed):
    cm = instance(seed, max_n=3)
    q = mtda.build_qubo(cm)
    best = solvers.brute_force_qubo(q)
    assert mtda.is_feasible(q, best.bits)
    decoded = solvers.assignment_from_bits(q, best.bits)
    decoded.validate(cm)
    assert decoded.objective == pytest.approx(solvers.hungarian_solve(cm).objective, abs=1e-9)
    assert best.energy == pytest.approx(decoded.objective, abs=1e-9)


def test_eleven_variable_instance_matches_hungarian():
    cm = mtda.random_cost_matrix(2, 3, np.random.default_rng(5), sign="negative")
    q = mtda.build_qubo(cm)
    assert q.n_var == 11
    assert solvers.brute_force_qubo(q).energy == pytest.approx(
        solvers.hungarian_solve(cm).objective, abs=1e-9)


# ==========================================================================
# Decoding
# ==========================================================================


def _to_string(bits):
    return "".join(str(int(b)) for b in reversed(bits))


def test_quality_ratio():
    assert solvers.quality_ratio(-59.2, -92.4) == pytest.approx(0.641, abs=5e-4)
    assert solvers.quality_ratio(1.0, 2.0) is None


def test_decode_concentrated_on_optimum():
    q = mtda.build_qubo(mtda.random_cost_matrix(2, 3, np.random.default_rng(1), sign="negative"))
    best = solvers.brute_force_qubo(q)
    hist = {_to_string(best.bits): 900, "0" * q.n_var: 100}
    d = solvers.decode_topk(hist, q)
    assert d.quality == pytest.approx(1.0)
    assert d.gap == pytest.approx(0.0)


def test_decode_uniform_random_histogram():
    rng = np.random.default_rng(4)
    q = mtda.build_qubo(mtda.random_cost_matrix(2, 3, rng, sign="negative"))
    idx = rng.integers(0, 2**11, 50)
    hist = {}
    for i in idx:
        key = format(int(i), "011b")
        hist[key] = hist.get(key, 0) + int(rng.integers(1, 100))
    d = solvers.decode_topk(hist, q, k=10)
    top = sorted(hist.items(), key=lambda kv: (-kv[1], int(kv[0], 2)))[:10]
    direct = min(q.energy(solvers.bits_from_string(b)) for b, _ in top)
    assert d.energy == pytest.approx(direct)
    assert len(d.candidates) == 10


def test_decode_full_histogram_equals_brute_force():
    q = mtda.build_qubo(instance(21, max_n=2))
    n = q.n_var
    hist = {format(i, f"0{n}b"): 1 for i in range(2**n)}
    d = solvers.decode_topk(hist, q, k=2**n)
    assert d.energy == pytest.approx(solvers.brute_force_qubo(q).energy)


def test_decode_errors():
    q = mtda.QuboInstance.from_matrix([[-1.0]])
    with pytest.raises(ValueError):
        solvers.decode_topk({}, q)
    with pytest.raises(ValueError):
        solvers.decode_topk({"01": 1}, q)
