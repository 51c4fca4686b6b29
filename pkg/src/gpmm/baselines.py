"""Deterministic PCA, CCA and SFA monitors, closed-form PPCA, and restricted GPMMs.

Covariances use the 1/T denominator throughout.  PCA and CCA normalise each
variable with the stored training mean and standard deviation.
"""

from dataclasses import dataclass

import numpy as np

from .linalg import floored_eigh, spd_inv_sqrt, symmetrize
from .model import ModelParameters

__all__ = [
    "PcaModel",
    "CcaModel",
    "SfaModel",
    "InsufficientSignalError",
    "pca_fit",
    "pca_stats",
    "cca_fit",
    "cca_stats",
    "sfa_whitening",
    "sfa_fit",
    "sfa_static",
    "sfa_temporal",
    "ppca_closed_form",
    "ppca_em",
    "ppca_log_likelihood",
    "pcca_parameters",
    "restricted_gpmm",
]


class InsufficientSignalError(ValueError):
    pass


def _matrix(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-d (variables x samples) array")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def _standardize_fit(a):
    mean = a.mean(axis=1)
    std = a.std(axis=1)
    if np.any(std <= 0):
        raise ValueError("a variable has zero variance")
    return mean, std


def _normalize(a, mean, std):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        return (a - mean) / std
    return (a - mean[:, None]) / std[:, None]


def _quad_rows(proj, a):
    """Σ_i (proj a)_i^2 for a vector or each column of a matrix."""
    b = proj @ a
    return float(b @ b) if b.ndim == 1 else np.sum(b * b, axis=0)


@dataclass(frozen=True, eq=False)
class PcaModel:
    eigvecs: np.ndarray
    eigvals: np.ndarray
    r: int
    mean: np.ndarray
    std: np.ndarray

    @property
    def b_r(self):
        return self.eigvecs[:, :self.r]

    @property
    def pi_r(self):
        return self.eigvals[:self.r]


def pca_fit(y_data, r):
    y = _matrix(y_data, "y_data")
    p, t = y.shape
    if not 1 <= r <= p:
        raise ValueError(f"r must satisfy 1 <= r <= {p}")
    mean, std = _standardize_fit(y)
    yn = _normalize(y, mean, std)
    vals, vecs = np.linalg.eigh(symmetrize(yn @ yn.T / t))
    order = np.argsort(vals)[::-1]
    return PcaModel(vecs[:, order], np.maximum(vals[order], 0.0), int(r), mean, std)


def pca_stats(model, y):
    """(T², SPE) for a raw sample or each column of a raw matrix."""
    yn = _normalize(y, model.mean, model.std)
    t2 = _quad_rows(model.b_r.T / np.sqrt(model.pi_r)[:, None], yn)
    resid = yn - model.b_r @ (model.b_r.T @ yn)
    spe = float(resid @ resid) if resid.ndim == 1 else np.sum(resid * resid, axis=0)
    return t2, spe


@dataclass(frozen=True, eq=False)
class CcaModel:
    b_x: np.ndarray
    b_y: np.ndarray
    singular_values: np.ndarray
    sxx_inv_sqrt: np.ndarray
    syy_inv_sqrt: np.ndarray
    sxx: np.ndarray
    syy: np.ndarray
    mean_x: np.ndarray
    std_x: np.ndarray
    mean_y: np.ndarray
    std_y: np.ndarray


def cca_fit(x_data, y_data, r):
    x = _matrix(x_data, "x_data")
    y = _matrix(y_data, "y_data")
    if x.shape[1] != y.shape[1]:
        raise ValueError("x_data and y_data must have the same number of samples")
    if not 1 <= r <= min(x.shape[0], y.shape[0]):
        raise ValueError("r out of range")
    t = x.shape[1]
    mx, sx = _standardize_fit(x)
    my, sy = _standardize_fit(y)
    xn, yn = _normalize(x, mx, sx), _normalize(y, my, sy)
    sxx = symmetrize(xn @ xn.T / t)
    syy = symmetrize(yn @ yn.T / t)
    sxy = xn @ yn.T / t
    ix = spd_inv_sqrt(sxx, "Σ_xx")
    iy = spd_inv_sqrt(syy, "Σ_yy")
    left, sing, right_t = np.linalg.svd(ix @ sxy @ iy)
    return CcaModel(
        b_x=ix @ left[:, :r], b_y=iy @ right_t[:r].T, singular_values=np.clip(sing[:r], 0.0, 1.0),
        sxx_inv_sqrt=ix, syy_inv_sqrt=iy, sxx=sxx, syy=syy,
        mean_x=mx, std_x=sx, mean_y=my, std_y=sy)


def cca_stats(model, x, y):
    """(T_x², T_y²) for raw samples."""
    xn = _normalize(x, model.mean_x, model.std_x)
    yn = _normalize(y, model.mean_y, model.std_y)
    return _quad_rows(model.b_x.T, xn), _quad_rows(model.b_y.T, yn)


def sfa_whitening(x_data):
    """Whitening matrix Π^{-1/2} A^T of the centred data and the centring mean."""
    x = _matrix(x_data, "x_data")
    mean = x.mean(axis=1)
    xc = x - mean[:, None]
    vals, vecs = floored_eigh(xc @ xc.T / x.shape[1], "data covariance")
    return (vecs / np.sqrt(vals)).T, mean


def _second_moment(a):
    return symmetrize(a @ a.T / a.shape[1])


@dataclass(frozen=True, eq=False)
class SfaModel:
    whitening: np.ndarray
    mean: np.ndarray
    p_mat: np.ndarray  # eigenvectors of the difference covariance, ascending Ω
    omega: np.ndarray
    n_slow: int

    @property
    def projection(self):
        return self.p_mat.T @ self.whitening

    @property
    def b_s(self):
        return self.projection[:self.n_slow]

    @property
    def b_f(self):
        return self.projection[self.n_slow:]

    @property
    def omega_f(self):
        return self.omega[self.n_slow:]


def sfa_fit(y_sequence, n_slow):
    """Slow feature analysis; the ``n_slow`` smallest-Ω directions are slow.

    The difference covariance is the second moment of the whitened first
    differences (differences of a stationary or random-walk sequence have zero
    mean).
    """
    y = _matrix(y_sequence, "y_sequence")
    p, t = y.shape
    if t < p + 2:
        raise ValueError(f"sequence length must be at least p + 2 = {p + 2}")
    if not 0 <= n_slow <= p:
        raise ValueError("n_slow out of range")
    whitening, mean = sfa_whitening(y)
    zdot = whitening @ np.diff(y, axis=1)
    vals, vecs = np.linalg.eigh(_second_moment(zdot))
    return SfaModel(whitening, mean, vecs, np.maximum(vals, 0.0), int(n_slow))


def sfa_static(model, y):
    """(T_S², T_F²) as unweighted squared projections of the centred sample."""
    yc = np.asarray(y, dtype=float)
    yc = yc - (model.mean if yc.ndim == 1 else model.mean[:, None])
    return _quad_rows(model.b_s, yc), _quad_rows(model.b_f, yc)


def sfa_temporal(model, ydot):
    """(S_S², S_F²) for a raw first difference or each column of differences."""
    ydot = np.asarray(ydot, dtype=float)
    ss = _quad_rows(model.b_s, ydot)
    sf = _quad_rows(model.b_f / np.sqrt(model.omega_f)[:, None], ydot)
    return ss, sf


def ppca_closed_form(data, r, center=False):
    """Maximum-likelihood PPCA loading (rotation fixed to I) and noise variance.

    ``data`` is (q, T).  The covariance is the 1/T second moment, taken about
    the sample mean when ``center`` is true.
    """
    a = _matrix(data, "data")
    q = a.shape[0]
    if not 1 <= r < q:
        raise ValueError(f"r must satisfy 1 <= r < q = {q}")
    if center:
        a = a - a.mean(axis=1)[:, None]
    vals, vecs = np.linalg.eigh(_second_moment(a))
    vals, vecs = vals[::-1], vecs[:, ::-1]
    pi2 = float(np.mean(vals[r:]))
    if pi2 <= 0:
        raise InsufficientSignalError("insufficient signal eigenvalues: zero noise variance")
    gap = vals[:r] - pi2
    if np.any(gap < -1e-12 * max(vals[0], 1.0)):
        raise InsufficientSignalError("insufficient signal eigenvalues: Ω_r below π²")
    return vecs[:, :r] * np.sqrt(np.maximum(gap, 0.0)), pi2


def ppca_log_likelihood(data, v_mat, pi2, center=False):
    a = _matrix(data, "data")
    if center:
        a = a - a.mean(axis=1)[:, None]
    q, t = a.shape
    cov = v_mat @ v_mat.T + pi2 * np.eye(q)
    chol = np.linalg.cholesky(cov)
    white = np.linalg.solve(chol, a)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (t * (q * np.log(2 * np.pi) + logdet) + np.sum(white * white)))


def ppca_em(data, r, max_iters=5000, rel_tol=1e-12, center=False, seed=0):
    """PPCA by EM in the covariance form; returns (V, π², iterations)."""
    a = _matrix(data, "data")
    if center:
        a = a - a.mean(axis=1)[:, None]
    q = a.shape[0]
    s = _second_moment(a)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((q, r))
    pi2 = float(np.trace(s)) / q
    ll = ppca_log_likelihood(a, v, pi2)
    for it in range(1, max_iters + 1):
        m_inv = np.linalg.inv(v.T @ v + pi2 * np.eye(r))
        sv = s @ v
        v_new = sv @ np.linalg.inv(pi2 * np.eye(r) + m_inv @ v.T @ sv)
        pi2 = float(np.trace(s - sv @ m_inv @ v_new.T)) / q
        v = v_new
        new_ll = ppca_log_likelihood(a, v, pi2)
        if abs(new_ll - ll) <= rel_tol * (abs(new_ll) + 1.0):
            return v, pi2, it
        ll = new_ll
    return v, pi2, max_iters


def pcca_parameters(model):
    """GPMM parameters under W = I and zero offsets that reproduce a CCA model.

    Loadings are U = Σ_yy B_y P^{1/2}, V = Σ_xx B_x P^{1/2} with P the canonical
    correlations; noise covariances are the unexplained parts of Σ_yy, Σ_xx.
    Offsets are zero, so the parameters act on normalised data.
    """
    root = np.sqrt(model.singular_values)
    u_mat = model.syy @ model.b_y * root
    v_mat = model.sxx @ model.b_x * root
    return restricted_gpmm("pcca", u_mat=u_mat, v_mat=v_mat,
                           lambda_y=symmetrize(model.syy - u_mat @ u_mat.T),
                           lambda_x=symmetrize(model.sxx - v_mat @ v_mat.T))


def _isotropic(a):
    a = np.asarray(a, dtype=float)
    return np.allclose(a, a[0, 0] * np.eye(a.shape[0]), rtol=0, atol=1e-12 * max(abs(a[0, 0]), 1))


def restricted_gpmm(kind, **kw):
    """GPMM parameter sets under named restrictions.

    ``"pcca"`` / ``"gpllvm"``: W = I (so Λ_ε = 0) and c_x = 0; needs u_mat,
    v_mat, lambda_y, lambda_x, optional c_y.
    ``"ppca"``: input block (V, π² I); needs v_mat and pi2 (or an isotropic
    lambda_x).  The output block mirrors the input and is unused.
    ``"psfa"``: sequential chain with τ = 1 and diagonal Λ_x; needs v_mat,
    w_diag, lambda_x, optional c_x.
    ``"slow"``: differenced model; needs whitening, v_mat and lambda_z (or pi2);
    returns a :class:`monitoring.SlowFeatureModel`.
    """
    kind = kind.lower()
    if kind in ("pcca", "gpllvm"):
        if "w_diag" in kw and not np.allclose(kw["w_diag"], 1.0):
            raise ValueError("contradictory restrictions: W = I required for this model")
        if "c_x" in kw and np.any(np.asarray(kw["c_x"]) != 0):
            raise ValueError("contradictory restrictions: c_x = 0 required for this model")
        u, v = np.asarray(kw["u_mat"], float), np.asarray(kw["v_mat"], float)
        r = v.shape[1]
        return ModelParameters(u_mat=u, v_mat=v, w_diag=np.ones(r), lambda_y=kw["lambda_y"],
                               lambda_x=kw["lambda_x"], lambda_eps_diag=np.zeros(r),
                               c_y=kw.get("c_y", np.zeros(u.shape[0])), c_x=np.zeros(v.shape[0]))
    if kind == "ppca":
        v = np.asarray(kw["v_mat"], float)
        q, r = v.shape
        if "lambda_x" in kw:
            if not _isotropic(kw["lambda_x"]):
                raise ValueError("contradictory restrictions: PPCA needs isotropic noise")
            pi2 = float(np.asarray(kw["lambda_x"])[0, 0])
        else:
            pi2 = float(kw["pi2"])
        c = np.asarray(kw.get("c_x", np.zeros(q)), float)
        lam = pi2 * np.eye(q)
        return ModelParameters(u_mat=v, v_mat=v, w_diag=np.zeros(r), lambda_y=lam, lambda_x=lam,
                               lambda_eps_diag=np.ones(r), c_y=c, c_x=c)
    if kind == "psfa":
        lx = np.asarray(kw["lambda_x"], float)
        if np.any(lx - np.diag(np.diag(lx))):
            raise ValueError("contradictory restrictions: PSFA needs a diagonal Λ_x")
        if kw.get("tau", 1) != 1:
            raise ValueError("contradictory restrictions: PSFA is a first-order chain (τ = 1)")
        v = np.asarray(kw["v_mat"], float)
        w = np.asarray(kw["w_diag"], float)
        c = np.asarray(kw.get("c_x", np.zeros(v.shape[0])), float)
        return ModelParameters(u_mat=v, v_mat=v, w_diag=w, lambda_y=lx, lambda_x=lx,
                               lambda_eps_diag=1.0 - w ** 2, c_y=c, c_x=c)
    if kind == "slow":
        from .monitoring import slow_model_from

        v = np.asarray(kw["v_mat"], float)
        if "lambda_z" in kw:
            lam = np.asarray(kw["lambda_z"], float)
            pi2 = kw.get("pi2")
        else:
            pi2 = float(kw["pi2"])
            lam = pi2 * np.eye(v.shape[0])
        return slow_model_from(kw["whitening"], v, lam, pi2)
    raise ValueError(f"unknown restriction '{kind}'")

