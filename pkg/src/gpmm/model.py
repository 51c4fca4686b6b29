"""GPMM parameters, closed-form posteriors and the marginal observation model.

Conventions: ``x`` is the input (length q, loading V, latent s) and ``y`` the
output (length p, loading U, latent z).  Data matrices are variables x samples,
so a batch of T inputs is a ``(q, T)`` array.  Every public function takes raw
observations and removes the offsets ``c_x`` / ``c_y`` itself.
"""

from dataclasses import dataclass

import numpy as np

from .linalg import IllConditionedError, block_diag, spd_inv, symmetrize

COUPLING_TOL = 1e-10

__all__ = [
    "ModelParameters",
    "GaussianPosterior",
    "JointObservationModel",
    "IllConditionedError",
    "validate_params",
    "make_parameters",
    "benchmark_parameters",
    "posterior_s_given_xy",
    "posterior_z_given_xy",
    "posterior_s_given_x",
    "posterior_z_given_y",
    "joint_latent_posterior",
    "joint_model",
    "log_likelihood",
]


def _frozen(a, ndim):
    a = np.array(a, dtype=float, copy=True)
    if a.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ModelParameters:
    """All GPMM coefficients.

    The arrays are copied and made read-only on construction, so a parameter
    set can be shared freely between threads.
    """

    u_mat: np.ndarray
    v_mat: np.ndarray
    w_diag: np.ndarray
    lambda_y: np.ndarray
    lambda_x: np.ndarray
    lambda_eps_diag: np.ndarray
    c_y: np.ndarray
    c_x: np.ndarray

    def __post_init__(self):
        for name, nd in (("u_mat", 2), ("v_mat", 2), ("w_diag", 1), ("lambda_y", 2),
                         ("lambda_x", 2), ("lambda_eps_diag", 1), ("c_y", 1), ("c_x", 1)):
            object.__setattr__(self, name, _frozen(getattr(self, name), nd))
        p, r = self.u_mat.shape
        q, r2 = self.v_mat.shape
        shapes_ok = (
            r == r2
            and self.w_diag.shape == (r,)
            and self.lambda_eps_diag.shape == (r,)
            and self.lambda_y.shape == (p, p)
            and self.lambda_x.shape == (q, q)
            and self.c_y.shape == (p,)
            and self.c_x.shape == (q,)
        )
        if not shapes_ok:
            raise ValueError("inconsistent parameter dimensions")

    @property
    def p(self):
        return self.u_mat.shape[0]

    @property
    def q(self):
        return self.v_mat.shape[0]

    @property
    def r(self):
        return self.v_mat.shape[1]

    @property
    def w_mat(self):
        return np.diag(self.w_diag)

    @property
    def lambda_eps(self):
        return np.diag(self.lambda_eps_diag)

    @property
    def omega(self):
        """Output noise seen from s: U Λ_ε U^T + Λ_y."""
        return symmetrize(self.u_mat @ self.lambda_eps @ self.u_mat.T + self.lambda_y)

    def replace(self, **changes):
        fields = {k: getattr(self, k) for k in (
            "u_mat", "v_mat", "w_diag", "lambda_y", "lambda_x", "lambda_eps_diag", "c_y", "c_x")}
        fields.update(changes)
        return ModelParameters(**fields)


def make_parameters(u_mat, v_mat, w_diag, lambda_y, lambda_x, c_y=None, c_x=None):
    """Build a parameter set with Λ_ε tied to W by Λ_ε = I - W^2."""
    w_diag = np.asarray(w_diag, dtype=float)
    u_mat = np.asarray(u_mat, dtype=float)
    v_mat = np.asarray(v_mat, dtype=float)
    return ModelParameters(
        u_mat=u_mat,
        v_mat=v_mat,
        w_diag=w_diag,
        lambda_y=lambda_y,
        lambda_x=lambda_x,
        lambda_eps_diag=1.0 - w_diag ** 2,
        c_y=np.zeros(u_mat.shape[0]) if c_y is None else c_y,
        c_x=np.zeros(v_mat.shape[0]) if c_x is None else c_x,
    )


def benchmark_parameters():
    """The three-input, three-output, two-latent benchmark system used for validation."""
    u_mat = np.array([[2.3, -2.9, 1.8], [1.5, 2.4, -3.1]]).T
    v_mat = np.array([[1.2, 3.2, 1.3], [-2.3, 1.7, -2.4]]).T
    lambda_y = np.array([[0.8, 0.2, 0.3], [0.2, 0.5, -0.4], [0.3, -0.4, 0.9]])
    lambda_x = np.array([[0.8, 0.4, 0.3], [0.4, 0.9, -0.2], [0.3, -0.2, 0.8]])
    return make_parameters(u_mat, v_mat, [0.54, 0.62], lambda_y, lambda_x)


def _check_cov(name, a, report):
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if asym > 1e-10 * max(1.0, float(np.max(np.abs(a)))):
        report.append(f"{name} symmetric: max asymmetry {asym:.3g}")
    vals = np.linalg.eigvalsh(symmetrize(a))
    if vals.size and vals[0] <= 0:
        report.append(f"{name} positive definite: min eigenvalue {vals[0]:.3g}")


def validate_params(params):
    """List every violated parameter invariant (empty list when all hold)."""
    report = []
    w = params.w_diag
    for i, lam in enumerate(w):
        if not (0.0 <= lam <= 1.0):
            report.append(f"λ range: λ_{i + 1} = {lam:.6g} outside [0, 1]")
    gap = np.abs(params.lambda_eps_diag - (1.0 - w ** 2))
    for i, g in enumerate(gap):
        if g > COUPLING_TOL:
            report.append(
                f"Λ_ε coupling: Λ_ε[{i + 1}] = {params.lambda_eps_diag[i]:.6g} differs from "
                f"1 - λ_{i + 1}^2 = {1.0 - w[i] ** 2:.6g} by {g:.3g}"
            )
    _check_cov("Λ_y", params.lambda_y, report)
    _check_cov("Λ_x", params.lambda_x, report)
    if params.r > min(params.p, params.q):
        report.append(f"latent dimension: r = {params.r} exceeds min(p, q) = {min(params.p, params.q)}")
    return report


@dataclass(frozen=True, eq=False)
class GaussianPosterior:
    """Posterior of a latent vector: ``mean`` is (r,) or (r, T); ``covariance`` is shared."""

    mean: np.ndarray
    covariance: np.ndarray


@dataclass(frozen=True, eq=False)
class JointObservationModel:
    """Marginal law of the stacked observation (y; x) once latents are integrated out."""

    joint_mean: np.ndarray
    joint_cov: np.ndarray
    aux_m: np.ndarray
    aux_n: np.ndarray
    omega: np.ndarray


def _centered(vec, offset, name):
    a = np.asarray(vec, dtype=float)
    if a.shape[0] != offset.shape[0]:
        raise ValueError(f"{name} has leading dimension {a.shape[0]}, expected {offset.shape[0]}")
    if a.ndim == 1:
        return a - offset
    return a - offset[:, None]


def _s_prior_given_z(params):
    """Gain and covariance of s | z, written without inverting Λ_ε."""
    w = params.w_mat
    z_cov = symmetrize(w @ w.T + params.lambda_eps)
    gain = w.T @ spd_inv(z_cov, "Λ_ε + WW^T")
    cov = symmetrize(np.eye(params.r) - gain @ w)
    return gain, cov, z_cov


def aux_matrices(params):
    """M and N such that x | z ~ N(M z + c_x, N)."""
    gain, cov, _ = _s_prior_given_z(params)
    v = params.v_mat
    m = v @ gain
    n = symmetrize(params.lambda_x + v @ cov @ v.T)
    return m, n


def posterior_s_given_xy(params, x, y):
    xb = _centered(x, params.c_x, "x")
    yb = _centered(y, params.c_y, "y")
    uw = params.u_mat @ params.w_mat
    omega_inv = spd_inv(params.omega, "Ω")
    lx_inv = spd_inv(params.lambda_x, "Λ_x")
    v = params.v_mat
    precision = uw.T @ omega_inv @ uw + v.T @ lx_inv @ v + np.eye(params.r)
    cov = spd_inv(precision, "posterior precision")
    mean = cov @ (uw.T @ omega_inv @ yb + v.T @ lx_inv @ xb)
    return GaussianPosterior(mean, cov)


def posterior_z_given_xy(params, x, y):
    xb = _centered(x, params.c_x, "x")
    yb = _centered(y, params.c_y, "y")
    m, n = aux_matrices(params)
    _, _, z_cov = _s_prior_given_z(params)
    n_inv = spd_inv(n, "N")
    ly_inv = spd_inv(params.lambda_y, "Λ_y")
    u = params.u_mat
    precision = m.T @ n_inv @ m + u.T @ ly_inv @ u + spd_inv(z_cov, "Λ_ε + WW^T")
    cov = spd_inv(precision, "posterior precision")
    mean = cov @ (m.T @ n_inv @ xb + u.T @ ly_inv @ yb)
    return GaussianPosterior(mean, cov)


def posterior_s_given_x(params, x):
    xb = _centered(x, params.c_x, "x")
    v = params.v_mat
    lx_inv = spd_inv(params.lambda_x, "Λ_x")
    cov = spd_inv(v.T @ lx_inv @ v + np.eye(params.r), "posterior precision")
    return GaussianPosterior(cov @ v.T @ lx_inv @ xb, cov)


def posterior_z_given_y(params, y):
    yb = _centered(y, params.c_y, "y")
    u = params.u_mat
    ly_inv = spd_inv(params.lambda_y, "Λ_y")
    cov = spd_inv(u.T @ ly_inv @ u + np.eye(params.r), "posterior precision")
    return GaussianPosterior(cov @ u.T @ ly_inv @ yb, cov)


def joint_model(params):
    uw = params.u_mat @ params.w_mat
    v = params.v_mat
    loading = np.vstack([uw, v])
    noise = block_diag(params.omega, params.lambda_x)
    cov = symmetrize(loading @ loading.T + noise)
    m, n = aux_matrices(params)
    return JointObservationModel(
        joint_mean=np.concatenate([params.c_y, params.c_x]),
        joint_cov=cov,
        aux_m=m,
        aux_n=n,
        omega=params.omega,
    )


def joint_latent_posterior(params, x, y):
    """Posterior of the stacked latent (s; z) given (x, y) by block conditioning.

    Returns the 2r-dimensional posterior; its diagonal blocks coincide with the
    single-latent posteriors and its off-diagonal block is Cov(s, z | x, y).
    """
    r = params.r
    w = params.w_mat
    u, v = params.u_mat, params.v_mat
    z_cov = w @ w.T + params.lambda_eps
    prior = np.block([[np.eye(r), w.T], [w, z_cov]])
    # Cov((s; z), (y; x))
    cross = np.block([[w.T @ u.T, v.T], [z_cov @ u.T, w @ v.T]])
    jm = joint_model(params)
    gain = cross @ spd_inv(jm.joint_cov, "joint covariance")
    cov = symmetrize(prior - gain @ cross.T)
    ell = np.concatenate([
        _centered(y, params.c_y, "y"),
        _centered(x, params.c_x, "x"),
    ])
    return GaussianPosterior(gain @ ell, cov)


def _as_pair_matrix(x_data, y_data, params):
    x = np.asarray(x_data, dtype=float)
    y = np.asarray(y_data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[0] != params.q or y.shape[0] != params.p:
        raise ValueError(
            f"dimension mismatch: data is x {x.shape[0]}, y {y.shape[0]}; "
            f"model expects x {params.q}, y {params.p}"
        )
    if x.shape[1] != y.shape[1]:
        raise ValueError("x and y must have the same number of samples")
    return x, y


def log_likelihood(params, x_data, y_data):
    """Sum over samples of the log density of the marginal Gaussian of (y; x)."""
    x, y = _as_pair_matrix(x_data, y_data, params)
    jm = joint_model(params)
    ell = np.vstack([y - params.c_y[:, None], x - params.c_x[:, None]])
    k, t = ell.shape
    try:
        chol = np.linalg.cholesky(jm.joint_cov)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError("ill-conditioned model: joint covariance not PD") from exc
    white = np.linalg.solve(chol, ell)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (t * (k * np.log(2 * np.pi) + logdet) + np.sum(white * white)))

