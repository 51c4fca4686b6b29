"""EM estimation of GPMM parameters from paired, sequentially uncorrelated data."""

from dataclasses import dataclass, field

import numpy as np

from .linalg import EIG_FLOOR, symmetrize
from .model import (
    ModelParameters,
    joint_latent_posterior,
    log_likelihood,
    posterior_s_given_xy,
    posterior_z_given_xy,
)

__all__ = [
    "EmConfig",
    "FitDiagnostics",
    "SufficientStatsRandom",
    "DegenerateStatisticsError",
    "RootBracketError",
    "solve_lambda_cubic",
    "update_lambda",
    "e_step_random",
    "m_step_random",
    "fit_random",
]


class DegenerateStatisticsError(ValueError):
    pass


class RootBracketError(ArithmeticError):
    pass


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 500
    rel_tol: float = 1e-8
    seed: int = 0
    min_lambda: float = 1e-6
    max_lambda: float = 1.0 - 1e-6

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0.0 < self.rel_tol < 1.0:
            raise ValueError("rel_tol must lie in (0, 1)")
        if not 0.0 <= self.min_lambda < self.max_lambda <= 1.0:
            raise ValueError("need 0 <= min_lambda < max_lambda <= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class FitDiagnostics:
    """Per-iteration trace of an EM run (iteration 0 is the initial guess)."""

    loglik: list = field(default_factory=list)
    max_delta: list = field(default_factory=list)
    converged: bool = False

    @property
    def n_iter(self):
        return len(self.loglik) - 1

    def record(self, ll, delta):
        self.loglik.append(float(ll))
        self.max_delta.append(float(delta))

    def to_csv(self):
        lines = ["iteration,loglik,max_param_delta"]
        for i, (ll, d) in enumerate(zip(self.loglik, self.max_delta)):
            lines.append(f"{i},{ll:.17g},{d:.17g}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class SufficientStatsRandom:
    """Posterior moments from one E-step.

    Per-sample means are kept as (r, T) arrays; posterior covariances do not
    depend on the observation and are stored once.
    """

    mean_s: np.ndarray
    cov_s: np.ndarray
    mean_z: np.ndarray
    cov_z: np.ndarray
    cross_cov: np.ndarray  # Cov(s, z | x, y)
    c_x: np.ndarray
    c_y: np.ndarray

    @property
    def n_samples(self):
        return self.mean_s.shape[1]

    @property
    def sum_ss(self):
        return self.n_samples * self.cov_s + self.mean_s @ self.mean_s.T

    @property
    def sum_zz(self):
        return self.n_samples * self.cov_z + self.mean_z @ self.mean_z.T

    @property
    def sum_sz_diag(self):
        """Σ_t E[s_t^i z_t^i] for each latent coordinate i."""
        return self.n_samples * np.diag(self.cross_cov) + np.sum(self.mean_s * self.mean_z, axis=1)

    @property
    def sum_s_sq(self):
        return np.diag(self.sum_ss)

    @property
    def sum_z_sq(self):
        return np.diag(self.sum_zz)

    def cubic_coefficients(self, i):
        """(a0, a1, a2, a3) of the stationarity cubic for latent coordinate i."""
        t = float(self.n_samples)
        b = float(self.sum_sz_diag[i])
        return -b, float(self.sum_s_sq[i] + self.sum_z_sq[i]) - t, -b, t


def _cubic(a0, a1, a2, a3, lam):
    return ((a3 * lam + a2) * lam + a1) * lam + a0


def solve_lambda_cubic(a0, a1, a2, a3, min_lambda=0.0, max_lambda=1.0):
    """Largest real root in [0, 1] of a3*λ^3 + a2*λ^2 + a1*λ + a0, clamped.

    Roots come from the companion matrix and are refined by Newton steps.
    Raises RootBracketError when no real root lies in [0, 1].
    """
    if not a3 > 0:
        raise ValueError("leading coefficient must be positive")
    scale = max(1.0, abs(a0) + abs(a1) + abs(a2) + abs(a3))
    roots = np.roots([a3, a2, a1, a0])
    # Normalised coefficients keep the imaginary-part test scale free.
    imag_tol = 1e-9 * max(1.0, (abs(a0) + abs(a1) + abs(a2)) / a3)
    cands = []
    for z in roots:
        if abs(z.imag) > max(imag_tol, 1e-6):
            continue
        lam = float(z.real)
        for _ in range(3):
            d = (3.0 * a3 * lam + 2.0 * a2) * lam + a1
            if d == 0.0:
                break
            step = _cubic(a0, a1, a2, a3, lam) / d
            lam -= step
            if abs(step) < 1e-16:
                break
        if abs(_cubic(a0, a1, a2, a3, lam)) < 1e-9 * scale:
            cands.append(lam)
    widen = 1e-9
    inside = [c for c in cands if -widen <= c <= 1.0 + widen]
    if not inside:
        # Companion roots can miss a near-double root; fall back to any sign change.
        f0, f1 = _cubic(a0, a1, a2, a3, 0.0), _cubic(a0, a1, a2, a3, 1.0)
        if f0 <= 0.0 <= f1:
            inside = [_bisect(a0, a1, a2, a3, 0.0, 1.0)]
        else:
            raise RootBracketError(
                f"root bracket failure: no real root of the λ cubic in [0, 1] "
                f"(f(0) = {f0:.6g}, f(1) = {f1:.6g})"
            )
    lam = min(max(max(inside), 0.0), 1.0)
    return float(min(max(lam, min_lambda), max_lambda))


def _bisect(a0, a1, a2, a3, lo, hi, iters=200):
    flo = _cubic(a0, a1, a2, a3, lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = _cubic(a0, a1, a2, a3, mid)
        if (fm <= 0.0) == (flo <= 0.0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def update_lambda(coeffs, config):
    """λ update used inside EM.

    A negative posterior cross-moment makes f(0) > 0; when f then stays
    positive on [0, 1] the expected log-likelihood decreases in λ and the
    constrained maximiser is the lower clamp.
    """
    a0, a1, a2, a3 = coeffs
    try:
        return solve_lambda_cubic(a0, a1, a2, a3, config.min_lambda, config.max_lambda)
    except RootBracketError:
        if a0 > 0:
            return config.min_lambda
        raise


def e_step_random(params, x_data, y_data):
    x = np.asarray(x_data, dtype=float)
    y = np.asarray(y_data, dtype=float)
    post_s = posterior_s_given_xy(params, x, y)
    post_z = posterior_z_given_xy(params, x, y)
    r = params.r
    joint = joint_latent_posterior(params, params.c_x, params.c_y)
    return SufficientStatsRandom(
        mean_s=post_s.mean,
        cov_s=post_s.covariance,
        mean_z=post_z.mean,
        cov_z=post_z.covariance,
        cross_cov=joint.covariance[:r, r:],
        c_x=params.c_x,
        c_y=params.c_y,
    )


def check_moment(m, name):
    vals = np.linalg.eigvalsh(symmetrize(m))
    if not np.all(np.isfinite(vals)) or vals[-1] <= 0 or vals[0] <= 1e-12 * vals[-1]:
        raise DegenerateStatisticsError(f"degenerate statistics: {name} is singular")


def _floor_cov(a):
    a = symmetrize(a)
    vals, vecs = np.linalg.eigh(a)
    floor = EIG_FLOOR * max(vals[-1], 0.0)
    if floor <= 0.0:
        raise DegenerateStatisticsError("degenerate statistics: noise covariance collapsed")
    return symmetrize((vecs * np.maximum(vals, floor)) @ vecs.T)


def loading_and_noise(scatter, cross, sum_ll, n):
    """Loading B = cross sum_ll^{-1} and noise (scatter - 2 sym(cross B^T) + B sum_ll B^T) / n."""
    load = cross @ np.linalg.inv(sum_ll)
    noise = (scatter - cross @ load.T - load @ cross.T + load @ sum_ll @ load.T) / n
    return load, _floor_cov(noise)


def m_step_random(stats, x_data, y_data):
    """Return updated (U, V, Λ_x, Λ_y) from E-step moments."""
    x = np.asarray(x_data, dtype=float) - stats.c_x[:, None]
    y = np.asarray(y_data, dtype=float) - stats.c_y[:, None]
    sum_ss, sum_zz = stats.sum_ss, stats.sum_zz
    check_moment(sum_ss, "Σ E[s s^T]")
    check_moment(sum_zz, "Σ E[z z^T]")
    t = x.shape[1]
    v_mat, lambda_x = loading_and_noise(x @ x.T, x @ stats.mean_s.T, sum_ss, t)
    u_mat, lambda_y = loading_and_noise(y @ y.T, y @ stats.mean_z.T, sum_zz, t)
    return u_mat, v_mat, lambda_x, lambda_y


def check_data(name, a):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-d (variables x samples) array")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def _initial_parameters(x, y, r, config):
    q, t = x.shape
    p = y.shape[0]
    c_x, c_y = x.mean(axis=1), y.mean(axis=1)
    xc, yc = x - c_x[:, None], y - c_y[:, None]
    left, sing, right_t = np.linalg.svd(yc @ xc.T / t)
    u0, v0 = left[:, :r].copy(), right_t[:r].T.copy()
    weak = sing[:r] <= 1e-12 * max(sing[0], 1e-300)
    if np.any(weak):
        rng = np.random.default_rng(config.seed)
        for j in np.flatnonzero(weak):
            u0[:, j] = rng.standard_normal(p)
            v0[:, j] = rng.standard_normal(q)
        u0 /= np.linalg.norm(u0, axis=0)
        v0 /= np.linalg.norm(v0, axis=0)
    w0 = np.full(r, 0.5)
    return ModelParameters(
        u_mat=u0,
        v_mat=v0,
        w_diag=w0,
        lambda_y=np.diag(yc.var(axis=1)),
        lambda_x=np.diag(xc.var(axis=1)),
        lambda_eps_diag=1.0 - w0 ** 2,
        c_y=c_y,
        c_x=c_x,
    )


def _max_delta(a, b):
    return max(
        float(np.max(np.abs(getattr(a, k) - getattr(b, k))))
        for k in ("u_mat", "v_mat", "w_diag", "lambda_y", "lambda_x")
    )


def fit_random(x_data, y_data, r, config=None, init=None):
    """Fit GPMM to paired input (q, T) and output (p, T) data.

    Returns ``(params, diagnostics)``.  ``init`` optionally overrides the
    SVD-based starting point (offsets are always reset to the sample means).
    """
    config = config or EmConfig()
    x = check_data("x_data", x_data)
    y = check_data("y_data", y_data)
    q, t = x.shape
    p = y.shape[0]
    if y.shape[1] != t:
        raise ValueError("x_data and y_data must have the same number of samples")
    if not 1 <= r <= min(p, q):
        raise ValueError(f"r must satisfy 1 <= r <= min(p, q) = {min(p, q)}")
    if t <= p + q:
        raise ValueError(f"need more than p + q = {p + q} samples, got {t}")

    params = _initial_parameters(x, y, r, config)
    if init is not None:
        params = init.replace(c_x=params.c_x, c_y=params.c_y)
    diag = FitDiagnostics()
    ll = log_likelihood(params, x, y)
    diag.record(ll, 0.0)
    for _ in range(config.max_iters):
        stats = e_step_random(params, x, y)
        u_mat, v_mat, lambda_x, lambda_y = m_step_random(stats, x, y)
        w = np.array([update_lambda(stats.cubic_coefficients(i), config) for i in range(r)])
        new = ModelParameters(
            u_mat=u_mat,
            v_mat=v_mat,
            w_diag=w,
            lambda_y=lambda_y,
            lambda_x=lambda_x,
            lambda_eps_diag=1.0 - w ** 2,
            c_y=params.c_y,
            c_x=params.c_x,
        )
        new_ll = log_likelihood(new, x, y)
        diag.record(new_ll, _max_delta(new, params))
        params = new
        done = abs(new_ll - ll) / (abs(new_ll) + 1.0) < config.rel_tol
        ll = new_ll
        if done:
            diag.converged = True
            break
    return params, diag
