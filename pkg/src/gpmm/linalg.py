"""Symmetric-matrix helpers shared by every module.

All SPD inverses, square roots and fractional powers go through a symmetric
eigendecomposition with a relative eigenvalue floor, so that conditioning is
handled the same way everywhere.
"""

import numpy as np

EIG_FLOOR = 1e-12
RANK_TOL = 1e-8


class IllConditionedError(np.linalg.LinAlgError):
    """A covariance that should be positive definite is not usable."""


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def _eigh_checked(a, what="matrix"):
    a = symmetrize(a)
    if not np.all(np.isfinite(a)):
        raise IllConditionedError(f"ill-conditioned model: {what} has non-finite entries")
    vals, vecs = np.linalg.eigh(a)
    top = vals[-1] if vals.size else 0.0
    if top <= 0.0:
        raise IllConditionedError(f"ill-conditioned model: {what} has no positive eigenvalue")
    if vals[0] < -1e-8 * top:
        raise IllConditionedError(
            f"ill-conditioned model: {what} is indefinite (min eigenvalue {vals[0]:.3g})"
        )
    return vals, vecs, top


def floored_eigh(a, what="matrix"):
    """Eigenpairs of a symmetric PSD matrix with eigenvalues floored at 1e-12 * max."""
    vals, vecs, top = _eigh_checked(a, what)
    return np.maximum(vals, EIG_FLOOR * top), vecs


def spd_inv(a, what="matrix"):
    vals, vecs = floored_eigh(a, what)
    return (vecs / vals) @ vecs.T


def spd_sqrt(a, what="matrix"):
    vals, vecs = floored_eigh(a, what)
    return (vecs * np.sqrt(vals)) @ vecs.T


def spd_inv_sqrt(a, what="matrix"):
    vals, vecs = floored_eigh(a, what)
    return (vecs / np.sqrt(vals)) @ vecs.T


def spd_logdet(a, what="matrix"):
    vals, _ = floored_eigh(a, what)
    return float(np.sum(np.log(vals)))


def psd_power(a, power, tol=1e-10):
    """Fractional power of a PSD matrix; tiny negative eigenvalues are clamped to zero.

    Zero eigenvalues stay zero for any ``power`` >= 0 (``0 ** 0`` is taken as 0 so
    that ``a ** 0`` is the projector onto the range of ``a`` rather than I).
    """
    a = symmetrize(a)
    vals, vecs = np.linalg.eigh(a)
    top = max(float(np.abs(vals).max()), 0.0) if vals.size else 0.0
    if top > 0 and vals[0] < -tol * top:
        raise ValueError(f"matrix has a negative eigenvalue {vals[0]:.3g}")
    keep = vals > tol * top
    powered = np.zeros_like(vals)
    powered[keep] = vals[keep] ** power
    return (vecs * powered) @ vecs.T


def range_pinv(a, rel_tol=RANK_TOL):
    """Pseudo-inverse of a symmetric PSD matrix restricted to its numerical range.

    Directions with eigenvalue below ``rel_tol * max`` are projected out.
    Returns the inverse and the numerical rank.
    """
    a = symmetrize(a)
    vals, vecs = np.linalg.eigh(a)
    top = vals[-1] if vals.size else 0.0
    if top <= 0:
        return np.zeros_like(a), 0
    keep = vals > rel_tol * top
    inv = (vecs[:, keep] / vals[keep]) @ vecs[:, keep].T
    return inv, int(keep.sum())


def numerical_rank(a, rel_tol=RANK_TOL):
    vals = np.linalg.eigvalsh(symmetrize(a))
    top = vals[-1] if vals.size else 0.0
    if top <= 0:
        return 0
    return int(np.sum(vals > rel_tol * top))


def block_diag(*blocks):
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    i = 0
    for b in blocks:
        k = b.shape[0]
        out[i:i + k, i:i + k] = b
        i += k
    return out
