import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qptrack import mtda
from qptrack.mtda import CostMatrix, Measurement, Track

TABLE3 = [(2, 3, 11), (3, 5, 23), (5, 8, 53), (8, 12, 116), (10, 15, 175), (15, 23, 383),
          (20, 30, 650)]


def penalty_form_energy(cost, lam, pairs_index, y):
    """Independent oracle: objective plus squared row/column residuals, written out by hand."""
    N, M = cost.shape
    x = np.zeros((N, M))
    for (i, j), a in pairs_index.items():
        x[i, j] = y[a]
    nx = len(pairs_index)
    m = y[nx:nx + N]
    f = y[nx + N:nx + N + M]
    obj = np.sum(np.where(cost.mask, cost.c, 0.0) * x) + cost.c_miss * m.sum() + cost.c_fa * f.sum()
    rows = x.sum(axis=1) + m - 1
    cols = x.sum(axis=0) + f - 1
    return obj + lam * (np.sum(rows**2) + np.sum(cols**2))


def random_spd(rng, n):
    A = rng.normal(size=(n, n))
    return A @ A.T + 0.1 * np.eye(n)


def random_instance(seed, max_n=3, gate=0.3):
    rng = np.random.default_rng(seed)
    N, M = int(rng.integers(1, max_n + 1)), int(rng.integers(1, max_n + 1))
    sign = "negative" if rng.random() < 0.5 else "positive"
    return mtda.random_cost_matrix(N, M, rng, sign=sign, gate_fraction=gate)


# ==========================================================================
# Kalman
# ==========================================================================


def test_track_validation():
    with pytest.raises(ValueError):
        Track(np.zeros(4), -np.eye(4))
    with pytest.raises(ValueError):
        Track(np.zeros(3), np.eye(3))
    P = np.eye(4)
    P[0, 1] = 0.5
    with pytest.raises(ValueError):
        Track(np.zeros(4), P)
    with pytest.raises(ValueError):
        Measurement([0, 0], np.zeros((2, 2)))


def test_predict_identity_is_noop():
    t = Track([1, 2, 3, 4], np.eye(4))
    out = mtda.kalman_predict(t, np.eye(4), np.zeros((4, 4)))
    np.testing.assert_array_equal(out.x, t.x)
    np.testing.assert_array_equal(out.P, t.P)


def test_predict_constant_velocity():
    out = mtda.kalman_predict(Track([0, 0, 1, 0], np.eye(4)))
    np.testing.assert_allclose(out.position, [1, 0])


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_predict_and_update_keep_covariance_spd(seed):
    rng = np.random.default_rng(seed)
    t = Track(rng.normal(size=4), random_spd(rng, 4))
    t = mtda.kalman_predict(t, mtda.constant_velocity(float(rng.uniform(0.1, 2))),
                            mtda.process_noise(float(rng.uniform(0, 1))))
    np.linalg.cholesky(t.P)
    t = mtda.kalman_update(t, Measurement(rng.normal(size=2), random_spd(rng, 2)))
    np.linalg.cholesky(t.P)


def test_update_pulls_toward_measurement():
    t = Track([0, 0, 0, 0], np.eye(4))
    out = mtda.kalman_update(t, Measurement([2, 0], np.eye(2)))
    # equal prior and measurement variance -> halfway
    np.testing.assert_allclose(out.position, [1, 0])
    assert out.P[0, 0] == pytest.approx(0.5)


# ==========================================================================
# Costs and gating
# ==========================================================================


def _track_with_S(S_scale):
    # P on positions chosen so that S = H P H^T + R = S_scale * I with R = I/2
    P = np.eye(4)
    P[0, 0] = P[1, 1] = S_scale - 0.5
    return Track([0, 0, 0, 0], P), 0.5 * np.eye(2)


@pytest.mark.parametrize("S_scale,z,d2,c", [
    (1.0, [0, 0], 0.0, math.log(2 * math.pi)),
    (1.0, [3, 0], 9.0, 4.5 + math.log(2 * math.pi)),
    (4.0, [2, 0], 1.0, None),
])
def test_association_cost_closed_forms(S_scale, z, d2, c):
    t, R = _track_with_S(S_scale)
    ac = mtda.association_cost(t, Measurement(z, R))
    np.testing.assert_allclose(ac.S, S_scale * np.eye(2))
    assert ac.d2 == pytest.approx(d2, abs=1e-12)
    if c is not None:
        assert ac.c == pytest.approx(c, abs=1e-12)
    assert ac.c == pytest.approx(0.5 * (ac.d2 + math.log(np.linalg.det(2 * math.pi * ac.S))))


@pytest.mark.parametrize("d2,kept", [(9.20, True), (9.22, False), (0.0, True)])
def test_gate_threshold(d2, kept):
    t, R = _track_with_S(1.0)
    cm = mtda.build_cost_matrix([t], [Measurement([math.sqrt(d2), 0], R)])
    assert bool(cm.mask[0, 0]) is kept
    if not kept:
        assert cm.c[0, 0] == np.inf


def test_far_scenario_reduces_to_all_miss_all_fa():
    tracks = [Track([0, 0, 0, 0], np.eye(4)), Track([100, 0, 0, 0], np.eye(4))]
    meas = [Measurement([50, 50], np.eye(2)), Measurement([-60, 10], np.eye(2))]
    cm = mtda.build_cost_matrix(tracks, meas)
    assert not cm.mask.any()
    assert cm.c_miss == cm.c_fa == 1.0
    q = mtda.build_qubo(cm)
    assert q.n_var == 4
    from qptrack.solvers import brute_force_qubo
    best = brute_force_qubo(q)
    np.testing.assert_array_equal(best.bits, [1, 1, 1, 1])
    assert best.energy == pytest.approx(4.0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), lo=st.floats(0.5, 10), extra=st.floats(0, 20))
def test_gating_is_monotone(seed, lo, extra):
    rng = np.random.default_rng(seed)
    tracks = [Track(rng.normal(0, 3, 4), np.eye(4)) for _ in range(3)]
    meas = [Measurement(rng.normal(0, 3, 2), np.eye(2)) for _ in range(4)]
    a = mtda.build_cost_matrix(tracks, meas, gate_threshold=lo)
    b = mtda.build_cost_matrix(tracks, meas, gate_threshold=lo + extra)
    assert np.all(b.mask[a.mask])


def test_default_miss_cost():
    cm = CostMatrix.from_array([[1.0, np.inf], [-4.0, 2.0]])
    assert cm.c_miss == pytest.approx(0.7 * 2.0)
    assert cm.mask.tolist() == [[True, False], [True, True]]
    assert mtda.default_penalty(cm) == pytest.approx(6.0)


def test_penalty_fallback_without_gated_pairs():
    cm = CostMatrix.from_array([[np.inf]], c_miss=2.0, c_fa=3.0)
    assert mtda.default_penalty(cm) == pytest.approx(4.5)
    cm = CostMatrix.from_array([[np.inf]], c_miss=0.0, c_fa=0.0)
    assert mtda.default_penalty(cm) == pytest.approx(1.5)


# ==========================================================================
# QUBO structure
# ==========================================================================


@pytest.mark.parametrize("N,M,n", TABLE3)
def test_variable_count_table(N, M, n):
    assert mtda.nominal_n_var(N, M) == n
    q = mtda.build_qubo(CostMatrix.from_array(np.ones((N, M))))
    assert q.n_var == n


def test_nonzero_counts_at_ten_by_fifteen():
    assert mtda.reference_nonzero_formula(10, 15) == 3625
    q = mtda.build_qubo(CostMatrix.from_array(np.arange(1, 151, dtype=float).reshape(10, 15)))
    # stored upper triangle also holds the 2*N*M slack couplings
    assert mtda.nonzero_count(q) == mtda.structural_nonzero_count(10, 15) == 2200
    assert np.count_nonzero(q.symmetric()) == mtda.structural_nonzero_count(10, 15, True) == 4225


def test_single_pair_structure():
    q = mtda.build_qubo(CostMatrix.from_array([[1.0]]))
    assert q.n_var == 3
    # m and f never share a constraint, so their coupling is structurally zero
    assert mtda.nonzero_count(q) == 5
    assert q.Q[1, 2] == 0


def test_variable_order_and_labels():
    cm = CostMatrix.from_array([[1.0, np.inf, 2.0], [np.inf, 3.0, 4.0]])
    q = mtda.build_qubo(cm)
    assert q.labels == ["x_0_0", "x_0_2", "x_1_1", "x_1_2", "m_0", "m_1", "f_0", "f_1", "f_2"]
    assert q.x_index == {(0, 0): 0, (0, 2): 1, (1, 1): 2, (1, 2): 3}


def test_single_pair_brute_force_example():
    cm = CostMatrix(np.array([[0.0]]), np.array([[True]]), 10.0, 10.0)
    q = mtda.build_qubo(cm, penalty=15.0)
    Y = mtda.all_bitstrings(3)
    E = q.energies(Y)
    best = int(np.argmin(E))
    np.testing.assert_array_equal(Y[best], [1, 0, 0])
    assert E[best] == pytest.approx(0.0)


def test_all_zero_vector_pays_both_constraints():
    cm = CostMatrix(np.array([[1.0]]), np.array([[True]]), 1.0, 1.0)
    q = mtda.build_qubo(cm, penalty=10.0)
    assert q.energy([0, 0, 0]) == pytest.approx(20.0)


def test_perfect_matching_energy_is_cost_sum():
    c = np.diag([1.5, -2.0, 0.25]) + np.where(np.eye(3), 0, 7.0)
    q = mtda.build_qubo(CostMatrix.from_array(c))
    y = np.zeros(q.n_var)
    for i in range(3):
        y[q.x_index[(i, i)]] = 1
    assert mtda.is_feasible(q, y)
    assert q.energy(y) == pytest.approx(-0.25, abs=1e-12)


def test_energy_rejects_bad_vectors():
    q = mtda.build_qubo(CostMatrix.from_array([[1.0]]))
    with pytest.raises(ValueError):
        q.energy([0, 1])
    with pytest.raises(ValueError):
        q.energy([0, 2, 0])


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_energy_matches_penalty_form_exhaustively(seed):
    cm = random_instance(seed)
    q = mtda.build_qubo(cm)
    if q.n_var > 16:
        return
    Y = mtda.all_bitstrings(q.n_var)
    E = q.energies(Y)
    for y, e in zip(Y[:: max(1, len(Y) // 64)], E[:: max(1, len(Y) // 64)]):
        assert e == pytest.approx(penalty_form_energy(cm, q.penalty, q.x_index, y.astype(float)), abs=1e-9)
        assert e == pytest.approx(mtda.direct_energy(q, y), abs=1e-9)


def test_random_vectors_match_penalty_form():
    rng = np.random.default_rng(7)
    for s in range(20):
        cm = random_instance(s, max_n=4)
        q = mtda.build_qubo(cm)
        for _ in range(50):
            y = rng.integers(0, 2, q.n_var)
            assert q.energy(y) == pytest.approx(
                penalty_form_energy(cm, q.penalty, q.x_index, y.astype(float)), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_symmetrised_energy_unchanged(seed):
    q = mtda.build_qubo(random_instance(seed))
    Y = mtda.all_bitstrings(min(q.n_var, 12))
    if q.n_var > 12:
        return
    S = q.symmetric()
    np.testing.assert_allclose(np.einsum("ka,ab,kb->k", Y, S, Y) + q.offset, q.energies(Y),
                               atol=1e-9)
    assert not np.any(np.tril(q.Q, -1))


def test_lower_triangle_input_is_folded():
    q = mtda.QuboInstance.from_matrix([[1.0, 0.0], [2.0, -1.0]])
    np.testing.assert_array_equal(q.Q, [[1.0, 2.0], [0.0, -1.0]])


def test_penalty_sufficiency_on_random_instances():
    for s in range(500):
        cm = random_instance(s)
        q = mtda.build_qubo(cm)
        Y = mtda.all_bitstrings(q.n_var)
        E = q.energies(Y)
        feas = np.array([mtda.is_feasible(q, y) for y in Y])
        assert E[~feas].min() > E[feas].min() - 1e-9


# ==========================================================================
# Ising
# ==========================================================================


def test_single_variable_ising():
    ising = mtda.to_ising(mtda.QuboInstance.from_matrix([[1.0]]))
    assert ising.h[0] == pytest.approx(-0.5)
    assert ising.offset == pytest.approx(0.5)
    assert ising.energy([1]) == pytest.approx(0.0)
    assert ising.energy([-1]) == pytest.approx(1.0)


def test_zero_qubo_zero_ising():
    ising = mtda.to_ising(mtda.QuboInstance.from_matrix(np.zeros((3, 3))))
    assert not ising.h.any() and not ising.J.any() and ising.offset == 0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_ising_energies_equal_qubo(seed):
    q = mtda.build_qubo(random_instance(seed))
    ising = mtda.to_ising(q)
    Y = mtda.all_bitstrings(q.n_var)
    np.testing.assert_allclose(ising.energies(1 - 2 * Y), q.energies(Y), atol=1e-9)
    np.testing.assert_allclose(ising.diagonal(), q.energies(Y), atol=1e-9)


def test_eleven_variable_ising_exhaustive():
    cm = mtda.random_cost_matrix(2, 3, np.random.default_rng(0), sign="negative")
    q = mtda.build_qubo(cm)
    assert q.n_var == 11
    np.testing.assert_allclose(mtda.to_ising(q).diagonal(), q.energies(mtda.all_bitstrings(11)),
                               atol=1e-9)


# ==========================================================================
# Files
# ==========================================================================


def test_qubo_round_trip(tmp_path):
    q = mtda.build_qubo(random_instance(3))
    path = tmp_path / "q.txt"
    mtda.export_qubo(q, path)
    assert path.read_text().splitlines()[0].startswith("# n_var=")
    back = mtda.import_qubo(path)
    np.testing.assert_array_equal(back.Q, q.Q)
    assert back.offset == q.offset


def test_qubo_import_requires_header(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("0 0 1.0\n")
    with pytest.raises(ValueError):
        mtda.import_qubo(path)


def test_scenario_round_trip(tmp_path):
    tracks = [Track([1, 2, 0, 0], np.eye(4))]
    meas = [Measurement([1, 2.5], 0.5 * np.eye(2)), Measurement([9, 9], np.eye(2))]
    path = tmp_path / "s.json"
    mtda.save_scenario(tracks, meas, path)
    t2, m2 = mtda.load_scenario(path)
    np.testing.assert_array_equal(t2[0].x, tracks[0].x)
    np.testing.assert_array_equal(m2[0].R, meas[0].R)
    assert len(m2) == 2


def test_random_cost_matrix_sign_families():
    rng = np.random.default_rng(0)
    neg = mtda.random_cost_matrix(3, 3, rng, sign="negative")
    assert np.all(neg.c < 0)
    with pytest.raises(ValueError):
        mtda.random_cost_matrix(2, 2, rng, sign="mixed")
