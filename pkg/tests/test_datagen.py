import numpy as np
import pytest

from gpmm.datagen import (
    FaultSpec,
    Scenario,
    ScenarioKind,
    gen_random,
    gen_seq_random_walk,
    gen_seq_stationary,
    generate,
    inject_fault,
)
from gpmm.model import joint_model


def test_default_sizes():
    assert Scenario.default("seq_stationary").n_samples == 500
    assert Scenario.default("seq_stationary").n_sequences == 100
    assert Scenario.default("random_walk").n_samples == 100_000
    assert Scenario.default("random").n_samples == 100_000


def test_random_is_deterministic_and_shaped(params):
    x1, y1 = gen_random(Scenario("random", params, 200, 1, 9))
    x2, y2 = gen_random(Scenario("random", params, 200, 1, 9))
    assert x1.shape == (3, 200) and y1.shape == (3, 200)
    np.testing.assert_array_equal(x1, x2)
    np.testing.assert_array_equal(y1, y2)
    x3, _ = gen_random(Scenario("random", params, 200, 1, 10))
    assert not np.array_equal(x1, x3)


def test_random_covariance_matches_model(params):
    x, y = gen_random(Scenario("random", params, 200_000, 1, 0))
    emp = np.cov(np.vstack([y, x]))
    truth = joint_model(params).joint_cov
    assert np.max(np.abs(emp - truth)) < 0.08 * np.max(np.abs(truth))


def test_stationary_lag_covariance(params):
    seqs = gen_seq_stationary(Scenario("seq_stationary", params, 2000, 50, 1))
    assert len(seqs) == 50 and seqs[0].shape == (3, 2000)
    lead = np.hstack([s[:, 1:] for s in seqs])
    lag = np.hstack([s[:, :-1] for s in seqs])
    emp = lead @ lag.T / lead.shape[1]
    truth = params.v_mat @ np.diag(params.w_diag) @ params.v_mat.T
    assert np.max(np.abs(emp - truth)) < 0.06 * np.max(np.abs(truth))


def test_sequences_depend_only_on_seed_and_index(params):
    a = gen_seq_stationary(Scenario("seq_stationary", params, 50, 3, 4))
    b = gen_seq_stationary(Scenario("seq_stationary", params, 50, 5, 4))
    for s, t in zip(a, b):
        np.testing.assert_array_equal(s, t)


def test_random_walk_increments(params):
    x, s = gen_seq_random_walk(Scenario("random_walk", params, 50_000, 1, 2), return_latent=True)
    np.testing.assert_allclose(np.var(np.diff(s, axis=1), axis=1), 1.0, atol=0.03)
    assert x.shape == (3, 50_000)


def test_fault_injection_step_and_drift():
    base = np.zeros((2, 10))
    step = inject_fault(base, FaultSpec(1, 4, 2.5))
    np.testing.assert_array_equal(step[1], [0, 0, 0, 0] + [2.5] * 6)
    np.testing.assert_array_equal(step[0], 0.0)
    assert np.all(base == 0.0)
    drift = inject_fault(base, FaultSpec(0, 5, 1.0, kind="drift", span=5))
    np.testing.assert_allclose(drift[0, 5:], [0, 0.2, 0.4, 0.6, 0.8])
    with pytest.raises(ValueError):
        inject_fault(base, FaultSpec(3, 0, 1.0))


def test_fault_spec_validation(params):
    with pytest.raises(ValueError):
        FaultSpec(0, 0, 1.0, kind="spike")
    with pytest.raises(ValueError):
        FaultSpec(0, 0, 1.0, target="z")
    with pytest.raises(ValueError):
        Scenario("random", params, 10, 1, 0, FaultSpec(0, 20, 1.0))
    with pytest.raises(ValueError):
        Scenario("nonsense")


def test_fault_target_y(params):
    f = FaultSpec(2, 10, 100.0, target="y")
    x0, y0 = gen_random(Scenario("random", params, 30, 1, 3))
    x1, y1 = gen_random(Scenario("random", params, 30, 1, 3, f))
    np.testing.assert_array_equal(x0, x1)
    np.testing.assert_allclose(y1[2, 10:] - y0[2, 10:], 100.0)


def test_generate_dispatch(params):
    assert isinstance(generate(Scenario("random", params, 5, 1, 0)), tuple)
    assert isinstance(generate(Scenario("seq_stationary", params, 5, 2, 0)), list)
    assert generate(Scenario(ScenarioKind.SEQ_RANDOM_WALK, params, 5, 1, 0)).shape == (3, 5)
