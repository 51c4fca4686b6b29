import numpy as np
import pytest

from gpmm.model import (
    ModelParameters,
    aux_matrices,
    joint_latent_posterior,
    joint_model,
    log_likelihood,
    make_parameters,
    benchmark_parameters,
    posterior_s_given_x,
    posterior_s_given_xy,
    posterior_z_given_xy,
    posterior_z_given_y,
    validate_params,
)

from oracles import gaussian_condition, mvn_logpdf, static_joint


def _layout(params):
    r, p, q = params.r, params.p, params.q
    s = np.arange(r)
    z = np.arange(r, 2 * r)
    y = np.arange(2 * r, 2 * r + p)
    x = np.arange(2 * r + p, 2 * r + p + q)
    return s, z, y, x


def test_benchmark_parameter_values(params):
    assert (params.p, params.q, params.r) == (3, 3, 2)
    np.testing.assert_allclose(params.lambda_eps_diag, [0.7084, 0.6156], atol=1e-12)
    np.testing.assert_allclose(params.w_diag, [0.54, 0.62])
    np.testing.assert_allclose(params.u_mat[:, 0], [2.3, -2.9, 1.8])
    np.testing.assert_allclose(params.v_mat[:, 1], [-2.3, 1.7, -2.4])
    assert validate_params(params) == []


def test_parameters_are_read_only(params):
    with pytest.raises(ValueError):
        params.u_mat[0, 0] = 1.0


def test_validate_reports_violations(params):
    bad = params.replace(w_diag=np.array([1.2, 0.5]), lambda_eps_diag=np.array([0.1, 0.75]))
    report = validate_params(bad)
    assert any("λ range" in m for m in report)
    assert any("coupling" in m for m in report)
    lx = params.lambda_x.copy()
    lx[0, 0] = -1.0
    assert any("Λ_x" in m for m in validate_params(params.replace(lambda_x=lx)))


def test_joint_covariance_matches_generative_oracle(params):
    mean, cov = static_joint(params)
    _, _, y, x = _layout(params)
    obs = np.concatenate([y, x])
    jm = joint_model(params)
    np.testing.assert_allclose(jm.joint_cov, cov[np.ix_(obs, obs)], atol=1e-12)
    np.testing.assert_allclose(jm.joint_mean, mean[obs])


def test_aux_matrices_give_x_given_z(params):
    mean, cov = static_joint(params)
    _, z, _, x = _layout(params)
    sub = np.concatenate([z, x])
    m_or, c_or = gaussian_condition(mean[sub], cov[np.ix_(sub, sub)], np.arange(len(z)),
                                    np.array([0.3, -1.1]))
    m, n = aux_matrices(params)
    np.testing.assert_allclose(m @ np.array([0.3, -1.1]), m_or, atol=1e-12)
    np.testing.assert_allclose(n, c_or, atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_posteriors_match_joint_conditioning(seed, make_random_params):
    rng = np.random.default_rng(seed)
    params = make_random_params(rng)
    mean, cov = static_joint(params)
    s, z, y, x = _layout(params)
    xv = rng.standard_normal((params.q, 4))
    yv = rng.standard_normal((params.p, 4))
    obs = np.concatenate([y, x])
    m, c = gaussian_condition(mean, cov, obs, np.vstack([yv, xv]))
    r = params.r
    ps = posterior_s_given_xy(params, xv, yv)
    pz = posterior_z_given_xy(params, xv, yv)
    np.testing.assert_allclose(ps.mean, m[:r], atol=1e-9)
    np.testing.assert_allclose(ps.covariance, c[:r, :r], atol=1e-9)
    np.testing.assert_allclose(pz.mean, m[r:], atol=1e-9)
    np.testing.assert_allclose(pz.covariance, c[r:, r:], atol=1e-9)
    joint = joint_latent_posterior(params, xv, yv)
    np.testing.assert_allclose(joint.mean, m, atol=1e-9)
    np.testing.assert_allclose(joint.covariance, c, atol=1e-9)

    sx = np.concatenate([s, x])
    m1, c1 = gaussian_condition(mean[sx], cov[np.ix_(sx, sx)], np.arange(r, r + params.q), xv)
    px = posterior_s_given_x(params, xv)
    np.testing.assert_allclose(px.mean, m1, atol=1e-9)
    np.testing.assert_allclose(px.covariance, c1, atol=1e-9)

    zy = np.concatenate([z, y])
    m2, c2 = gaussian_condition(mean[zy], cov[np.ix_(zy, zy)], np.arange(r, r + params.p), yv)
    py = posterior_z_given_y(params, yv)
    np.testing.assert_allclose(py.mean, m2, atol=1e-9)
    np.testing.assert_allclose(py.covariance, c2, atol=1e-9)


def test_posterior_vector_and_matrix_inputs_agree(params, rng):
    xv = rng.standard_normal((3, 5))
    yv = rng.standard_normal((3, 5))
    batch = posterior_s_given_xy(params, xv, yv).mean
    for t in range(5):
        np.testing.assert_allclose(posterior_s_given_xy(params, xv[:, t], yv[:, t]).mean,
                                   batch[:, t], atol=1e-14)


def test_posterior_with_unit_coupling(params, rng):
    # W = I makes Λ_ε = 0; the posterior must stay finite.
    p1 = params.replace(w_diag=np.ones(2), lambda_eps_diag=np.zeros(2))
    post = posterior_z_given_xy(p1, rng.standard_normal(3), rng.standard_normal(3))
    assert np.all(np.isfinite(post.mean))


def test_dimension_mismatch_raises(params):
    with pytest.raises(ValueError, match="leading dimension"):
        posterior_s_given_x(params, np.zeros(4))


def test_log_likelihood_matches_dense_density(params, rng):
    xv = rng.standard_normal((3, 6))
    yv = rng.standard_normal((3, 6))
    jm = joint_model(params)
    expected = sum(mvn_logpdf(np.concatenate([yv[:, t], xv[:, t]]), jm.joint_mean, jm.joint_cov)
                   for t in range(6))
    assert log_likelihood(params, xv, yv) == pytest.approx(expected, rel=1e-12)


def test_make_parameters_ties_noise_to_coupling():
    p = make_parameters(np.ones((2, 1)), np.ones((2, 1)), [0.3], np.eye(2), np.eye(2))
    assert p.lambda_eps_diag[0] == pytest.approx(0.91)
    assert isinstance(p, ModelParameters)
    np.testing.assert_array_equal(p.c_x, 0.0)


def test_benchmark_parameters_fresh_instances():
    assert benchmark_parameters() is not benchmark_parameters()
