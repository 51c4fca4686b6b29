import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpmm.datagen import Scenario, gen_random
from gpmm.em_random import (
    EmConfig,
    RootBracketError,
    e_step_random,
    fit_random,
    solve_lambda_cubic,
    update_lambda,
)
from gpmm.model import joint_model, log_likelihood

from oracles import gaussian_condition, largest_root_bisection, static_joint


def _cubic(c, lam):
    a0, a1, a2, a3 = c
    return ((a3 * lam + a2) * lam + a1) * lam + a0


def test_cubic_known_roots():
    # (l - 0.2)(l - 0.7)(l - 3) has roots 0.2, 0.7 in [0, 1]; the largest wins.
    c = np.poly([3.0, 0.7, 0.2])[::-1]
    assert solve_lambda_cubic(*c) == pytest.approx(0.7, abs=1e-12)


def test_cubic_clamps_to_bounds():
    c = np.poly([2.0, 0.999999999, -1.0])[::-1]
    assert solve_lambda_cubic(*c, min_lambda=0.0, max_lambda=0.99) == 0.99
    c = np.poly([2.0, 1e-9, -1.0])[::-1]
    assert solve_lambda_cubic(*c, min_lambda=1e-6) == 1e-6


def test_cubic_without_root_in_unit_interval_raises():
    c = np.poly([2.0, 3.0, -1.0])[::-1]
    with pytest.raises(RootBracketError, match="root bracket failure"):
        solve_lambda_cubic(*c)


def test_cubic_rejects_nonpositive_leading_coefficient():
    with pytest.raises(ValueError):
        solve_lambda_cubic(-1.0, 0.0, 0.0, 0.0)


@given(st.floats(0.0, 50.0), st.floats(0.0, 50.0), st.floats(0.0, 50.0), st.floats(1.0, 100.0))
@settings(max_examples=300, deadline=None)
def test_structured_cubic_matches_bisection(b, a, c, t):
    # Coefficients of the λ-update: f(λ) = Tλ³ - Bλ² + (A + C - T)λ - B.
    coeffs = (-b, a + c - t, -b, t)
    # The solver admits roots within 1e-9 of the interval and clamps them.
    ref = largest_root_bisection(coeffs, lo=-1e-9, hi=1.0 + 1e-9)
    if ref is None:
        with pytest.raises(RootBracketError):
            solve_lambda_cubic(*coeffs)
        return
    lam = solve_lambda_cubic(*coeffs)
    assert 0.0 <= lam <= 1.0
    assert lam == pytest.approx(min(max(ref, 0.0), 1.0), abs=1e-9)


def test_update_lambda_falls_back_when_cross_moment_negative():
    cfg = EmConfig()
    # B < 0 gives f(0) = -B > 0 and no sign change on [0, 1].
    assert update_lambda((2.0, 5.0, 2.0, 10.0), cfg) == cfg.min_lambda


def test_em_config_validation():
    with pytest.raises(ValueError):
        EmConfig(max_iters=0)
    with pytest.raises(ValueError):
        EmConfig(min_lambda=0.5, max_lambda=0.4)
    with pytest.raises(ValueError):
        EmConfig(rel_tol=0.0)


@pytest.mark.parametrize("seed", range(5))
def test_e_step_moments_match_joint_conditioning(seed, make_random_params):
    rng = np.random.default_rng(seed)
    params = make_random_params(rng)
    x = rng.standard_normal((params.q, 7))
    y = rng.standard_normal((params.p, 7))
    stats = e_step_random(params, x, y)
    mean, cov = static_joint(params)
    r = params.r
    obs = np.arange(2 * r, 2 * r + params.p + params.q)
    m, c = gaussian_condition(mean, cov, obs, np.vstack([y, x]))
    np.testing.assert_allclose(stats.mean_s, m[:r], atol=1e-9)
    np.testing.assert_allclose(stats.mean_z, m[r:], atol=1e-9)
    np.testing.assert_allclose(stats.cross_cov, c[:r, r:], atol=1e-9)
    expected_sz = 7 * np.diag(c[:r, r:]) + np.sum(m[:r] * m[r:], axis=1)
    np.testing.assert_allclose(stats.sum_sz_diag, expected_sz, atol=1e-9)


def _data(params, n, seed):
    return gen_random(Scenario("random", params, n, 1, seed))


def test_fit_is_monotone_and_recovers_covariance(params):
    x, y = _data(params, 10_000, 1)
    fitted, diag = fit_random(x, y, 2)
    assert diag.converged and diag.n_iter < 500
    ll = np.array(diag.loglik)
    assert np.all(np.diff(ll) >= -1e-8 * np.abs(ll[1:]))
    truth = joint_model(params).joint_cov
    est = joint_model(fitted).joint_cov
    assert np.max(np.abs(est - truth)) / np.max(np.abs(truth)) < 0.05
    assert log_likelihood(fitted, x, y) == pytest.approx(ll[-1], rel=1e-12)


def test_fit_is_deterministic(params):
    x, y = _data(params, 800, 2)
    a, _ = fit_random(x, y, 2, EmConfig(max_iters=30))
    b, _ = fit_random(x, y, 2, EmConfig(max_iters=30))
    np.testing.assert_array_equal(a.u_mat, b.u_mat)
    np.testing.assert_array_equal(a.w_diag, b.w_diag)


def test_fit_keeps_lambda_in_range(params):
    x, y = _data(params, 500, 3)
    fitted, _ = fit_random(x, y, 2, EmConfig(max_iters=50))
    assert np.all((fitted.w_diag >= 1e-6) & (fitted.w_diag <= 1 - 1e-6))
    np.testing.assert_allclose(fitted.lambda_eps_diag, 1 - fitted.w_diag ** 2)


def test_fit_reports_non_convergence(params):
    x, y = _data(params, 500, 4)
    _, diag = fit_random(x, y, 2, EmConfig(max_iters=2))
    assert not diag.converged and diag.n_iter == 2
    assert diag.to_csv().splitlines()[0] == "iteration,loglik,max_param_delta"


def test_fit_input_validation(params):
    x, y = _data(params, 50, 5)
    with pytest.raises(ValueError, match="r must satisfy"):
        fit_random(x, y, 4)
    with pytest.raises(ValueError, match="samples"):
        fit_random(x[:, :5], y[:, :5], 2)
    bad = x.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        fit_random(bad, y, 2)
