import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qptrack import mitigation as mit
from qptrack.sim import CX, Circuit, H, NoiseModel, Rx, Ry, Rz, Rzz, expectation_z, run_noisy


def random_circuit(rng, n=3, depth=10):
    c = Circuit(n)
    for _ in range(depth):
        q = int(rng.integers(n))
        o = int((q + 1 + rng.integers(n - 1)) % n)
        t = float(rng.uniform(-math.pi, math.pi))
        c.append([H(q), Rx(t, q), Ry(t, q), Rz(t, q), CX(q, o), Rzz(t, q, o)][rng.integers(6)])
    return c


# ==========================================================================
# Folding
# ==========================================================================


def test_fold_one_is_identity():
    c = mit.bell_circuit()
    assert mit.fold(c, 1).gates == c.gates


def test_fold_three_on_ry():
    c = Circuit(1).ry(0.8, 0)
    f = mit.fold(c, 3)
    assert [(g.name, g.params) for g in f.gates] == [("RY", (0.8,)), ("RY", (-0.8,)), ("RY", (0.8,))]
    np.testing.assert_allclose(f.run().amplitudes, c.run().amplitudes, atol=1e-12)


@pytest.mark.parametrize("scale", [0, 2, -1])
def test_fold_rejects_even_scales(scale):
    with pytest.raises(ValueError):
        mit.fold(mit.bell_circuit(), scale)


def test_bell_fold_five_noiseless():
    counts = run_noisy(mit.fold(mit.bell_circuit(), 5), NoiseModel(), 2000,
                       np.random.default_rng(0))
    assert expectation_z(counts, [0, 1]) == 1.0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scale=st.sampled_from([1, 3, 5]))
def test_folding_preserves_state(seed, scale):
    c = random_circuit(np.random.default_rng(seed))
    f = mit.fold(c, scale)
    assert len(f.gates) == scale * len(c.gates)
    np.testing.assert_allclose(f.run().amplitudes, c.run().amplitudes, atol=1e-9)


# ==========================================================================
# Extrapolation
# ==========================================================================


def test_richardson_exact_line():
    assert mit.richardson_extrapolate([(1, 0.9), (3, 0.7), (5, 0.5)]) == pytest.approx(1.0,
                                                                                       abs=1e-12)


def test_richardson_constant():
    assert mit.richardson_extrapolate([(1, 0.42), (3, 0.42)]) == pytest.approx(0.42)


def test_richardson_quadratic():
    pts = [(s, 1 - 0.1 * s + 0.01 * s * s) for s in (1, 3, 5)]
    assert mit.richardson_extrapolate(pts, order=2) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("pts,order", [
    ([(1, 0.9), (1, 0.8)], 1),
    ([(1, 0.9)], 1),
    ([(1, 0.9), (3, 0.7)], 2),
])
def test_richardson_errors(pts, order):
    with pytest.raises(ValueError):
        mit.richardson_extrapolate(pts, order)


def test_zne_improves_bell_correlator():
    wins = 0
    for s in range(20):
        r = mit.zne_expectation(mit.bell_circuit(), mit.zz_observable([0, 1]),
                                NoiseModel(p2q=0.02), 100_000, np.random.default_rng(s))
        wins += abs(r.extrapolated - 1) < abs(r.raw - 1)
    assert wins >= 14


def test_zne_result_raw():
    r = mit.ZNEResult([3, 1, 5], [0.7, 0.9, 0.5], 1.0)
    assert r.raw == 0.9


# ==========================================================================
# Readout
# ==========================================================================


def test_assignment_matrix_single_qubit():
    A = mit.assignment_matrix([0.05], [0.1])
    np.testing.assert_allclose(A, [[0.95, 0.1], [0.05, 0.9]])


def test_assignment_matrix_qubit_order():
    A = mit.assignment_matrix([0.1, 0.0], [0.0, 0.0])
    # flipping qubit 0 maps index 0 -> 1, not 0 -> 2
    assert A[1, 0] == pytest.approx(0.1)
    assert A[2, 0] == 0


def test_identity_readout_is_noop():
    res = mit.readout_mitigate({"00": 30, "11": 70}, np.eye(4))
    np.testing.assert_allclose(res.probabilities, [0.3, 0, 0, 0.7])
    assert not res.clipped


def test_forward_round_trip():
    A = np.array([[0.95, 0.1], [0.05, 0.9]])
    f = A @ np.array([0.7, 0.3])
    res = mit.readout_mitigate(f, A)
    np.testing.assert_allclose(res.probabilities, [0.7, 0.3], atol=1e-9)


def test_heavy_clipping_renormalises():
    A = np.array([[0.8, 0.3], [0.2, 0.7]])
    res = mit.readout_mitigate({"0": 100}, A)
    assert res.clipped
    assert res.probabilities.sum() == pytest.approx(1.0)
    assert np.all(res.probabilities >= 0)


def test_readout_rejects_bad_matrices():
    with pytest.raises(ValueError):
        mit.readout_mitigate({"0": 1}, np.array([[0.5, 0.5], [0.4, 0.5]]))
    with pytest.raises(ValueError):
        mit.readout_mitigate({"0": 1}, np.array([[0.5, 0.5], [0.5, 0.5]]))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_two_qubit_round_trip(seed):
    rng = np.random.default_rng(seed)
    A = mit.assignment_matrix(rng.uniform(0, 0.2, 2), rng.uniform(0, 0.2, 2))
    p = rng.dirichlet(np.ones(4))
    res = mit.readout_mitigate(A @ p, A)
    np.testing.assert_allclose(res.probabilities, p, atol=1e-9)


def test_apply_readout_error_statistics():
    A = mit.assignment_matrix([0.1], [0.2])
    out = mit.apply_readout_error({"0": 50_000, "1": 50_000}, A, np.random.default_rng(0))
    assert sum(out.values()) == 100_000
    assert out["1"] / 100_000 == pytest.approx(0.5 * 0.1 + 0.5 * 0.8, abs=0.01)


def test_expectation_from_probs():
    assert mit.expectation_z_from_probs(np.array([0.5, 0, 0, 0.5]), [0, 1]) == 1.0
    assert mit.expectation_z_from_probs(np.array([0, 1.0, 0, 0]), [0]) == -1.0


# ==========================================================================
# Pipeline
# ==========================================================================


def test_empty_pipeline_is_identity():
    counts = {"00": 3, "11": 5}
    pipe = mit.MitigationPipeline()
    assert pipe.process_counts(counts, 2) is counts
    c = mit.bell_circuit()
    nm = NoiseModel(p2q=0.05)
    v = pipe.run(c, [0, 1], nm, 5000, np.random.default_rng(1))
    direct = expectation_z(run_noisy(c, nm, 5000, np.random.default_rng(1)), [0, 1])
    assert v == direct


def test_pipeline_readout_then_zne_recovers_ideal():
    A = mit.assignment_matrix([0.05, 0.05], [0.08, 0.08])
    pipe = mit.MitigationPipeline([mit.ReadoutStage(A), mit.ZneStage()])
    raw_pipe = mit.MitigationPipeline()
    nm = NoiseModel(p2q=0.02)
    c = mit.bell_circuit()
    mitigated = pipe.run(c, [0, 1], nm, 100_000, np.random.default_rng(2), readout=A)
    raw = raw_pipe.run(c, [0, 1], nm, 100_000, np.random.default_rng(2), readout=A)
    assert abs(mitigated - 1) < abs(raw - 1)
