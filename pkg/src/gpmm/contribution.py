"""Per-variable contributions of quadratic monitoring statistics.

For a statistic h^T Π h the methods are

* GDC_i   = (Π^{1-θ} h)_i (Π^θ h)_i, summing to the statistic for any θ;
* rGDC_i  = GDC_i / (Π^θ Ψ Π^{1-θ})_ii;
* RBC_i   = (Π h)_i^2 / Π_ii;
* rRBC_i  = (Π h)_i^2 / (Π Ψ Π)_ii,

where Ψ is the in-control covariance of h.  Both relative forms have unit
expectation per variable when h ~ N(0, Ψ).
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .linalg import psd_power, symmetrize
from .monitoring import StatisticKind

__all__ = [
    "ContributionReport",
    "OutsideSupportError",
    "gdc",
    "rgdc",
    "rbc",
    "rrbc",
    "diagnose",
    "METHODS",
]

METHODS = ("gdc", "rgdc", "rbc", "rrbc")
DENOM_TOL = 1e-12


class OutsideSupportError(ValueError):
    pass


def _check_theta(theta):
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")


def _powers(weight, theta):
    weight = symmetrize(weight)
    return psd_power(weight, 1.0 - theta), psd_power(weight, theta)


def _apply(mat, h):
    return mat @ np.asarray(h, dtype=float)


def _scale(values, denom):
    denom = np.asarray(denom, dtype=float)
    return values / (denom if values.ndim == 1 else denom[:, None])


def gdc(weight, h, theta=0.5):
    _check_theta(theta)
    left, right = _powers(weight, theta)
    return _apply(left, h) * _apply(right, h)


def _relative(values, denom, what):
    top = max(float(np.max(np.abs(denom))), 1e-300)
    bad = denom <= DENOM_TOL * top
    if np.any(bad):
        warnings.warn(f"non-identifiable variables {np.flatnonzero(bad).tolist()} in {what}",
                      RuntimeWarning)
        denom = np.where(bad, np.nan, denom)
    return _scale(values, denom)


def rgdc(weight, h, theta, psi_h):
    _check_theta(theta)
    left, right = _powers(weight, theta)
    denom = np.diag(right @ np.asarray(psi_h, dtype=float) @ left).copy()
    return _relative(_apply(left, h) * _apply(right, h), denom, "rGDC")


def _pi_diag(weight):
    diag = np.diag(symmetrize(weight)).copy()
    top = max(float(np.max(np.abs(diag))), 1e-300)
    if np.any(diag <= DENOM_TOL * top):
        raise OutsideSupportError(
            f"variable outside statistic support: {np.flatnonzero(diag <= DENOM_TOL * top).tolist()}")
    return diag


def rbc(weight, h):
    weight = symmetrize(weight)
    return _scale(_apply(weight, h) ** 2, _pi_diag(weight))


def rrbc(weight, h, psi_h):
    weight = symmetrize(weight)
    denom = np.diag(weight @ np.asarray(psi_h, dtype=float) @ weight).copy()
    return _relative(_apply(weight, h) ** 2, denom, "rRBC")


@dataclass(eq=False)
class ContributionReport:
    """Contributions for one statistic; ``values`` is (n_variables, n_samples)."""

    method: str
    theta: float
    kind: StatisticKind
    labels: list
    values: np.ndarray
    statistic: np.ndarray
    sample_index: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def top_variable(self):
        """Index of the largest contribution for every sample."""
        return np.nanargmax(self.values, axis=0)

    def _header(self):
        return (f"# method={self.method} theta={self.theta!r} statistic={self.kind.value} "
                f"variables={len(self.labels)} samples={self.values.shape[1]}")

    def to_csv(self):
        lines = [self._header(), ",".join(["sample_index", "statistic"] + list(self.labels))]
        for j, idx in enumerate(self.sample_index):
            vals = [f"{v:.17g}" for v in self.values[:, j]]
            lines.append(",".join([str(int(idx)), f"{self.statistic[j]:.17g}"] + vals))
        return "\n".join(lines) + "\n"

    def to_long_csv(self):
        lines = [self._header(), "sample_index,variable,value"]
        for j, idx in enumerate(self.sample_index):
            for lab, v in zip(self.labels, self.values[:, j]):
                lines.append(f"{int(idx)},{lab},{v:.17g}")
        return "\n".join(lines) + "\n"


def _centre(a, c):
    a = np.asarray(a, dtype=float)
    return a - (c if a.ndim == 1 else c[:, None])


def _default_labels(layout, p, q):
    xs = [f"x{i + 1}" for i in range(q)]
    ys = [f"y{i + 1}" for i in range(p)]
    return {
        "yx": ys + xs,
        "x": xs,
        "y": ys,
        "x_lead,x": [f"{v}(t+tau)" for v in xs] + [f"{v}(t)" for v in xs],
        "dx": [f"d{v}" for v in xs],
    }[layout]


def build_h(spec, params, x=None, y=None, x_lead=None, dx=None):
    """Assemble the statistic's h vector(s) from raw observations."""
    layout = spec.aux.get("h_layout")
    if layout == "latent":
        raise ValueError("contributions are not defined for T_SEQ (no explicit variable weight)")
    if layout == "yx":
        return np.concatenate([_centre(y, params.c_y), _centre(x, params.c_x)])
    if layout == "x":
        return _centre(x, params.c_x)
    if layout == "y":
        return _centre(y, params.c_y)
    if layout == "x_lead,x":
        return np.concatenate([_centre(x_lead, params.c_x), _centre(x, params.c_x)])
    if layout == "dx":
        return np.asarray(dx, dtype=float)
    raise ValueError(f"unknown h layout {layout!r}")


def diagnose(spec, params, x=None, y=None, x_lead=None, dx=None, method="rrbc", theta=0.5,
             labels=None, sample_index=None):
    """Contribution report for ``spec`` on one sample or a batch of columns.

    Pass the observations the statistic uses: ``x``/``y`` for the random
    statistics, ``x`` and ``x_lead`` (x_{t+τ}) for Q_SEQ, ``dx`` (raw first
    differences) for the slow-feature statistics.
    """
    method = method.lower()
    if method not in METHODS:
        raise ValueError(f"unknown contribution method '{method}'")
    _check_theta(theta)
    h = build_h(spec, params, x=x, y=y, x_lead=x_lead, dx=dx)
    weight = spec.weight_matrix
    psi = spec.aux["psi_h"]
    if method == "gdc":
        vals = gdc(weight, h, theta)
    elif method == "rgdc":
        vals = rgdc(weight, h, theta, psi)
    elif method == "rbc":
        vals = rbc(weight, h)
    else:
        vals = rrbc(weight, h, psi)
    h2 = h if h.ndim == 2 else h[:, None]
    vals = vals if vals.ndim == 2 else vals[:, None]
    stat = np.einsum("it,ij,jt->t", h2, weight, h2)
    if labels is None:
        p = getattr(params, "p", 0)
        q = getattr(params, "q", 0)
        labels = _default_labels(spec.aux["h_layout"], p, q)
    if len(labels) != vals.shape[0]:
        raise ValueError(f"expected {vals.shape[0]} labels, got {len(labels)}")
    idx = np.arange(vals.shape[1]) if sample_index is None else np.asarray(sample_index)
    return ContributionReport(method, float(theta), spec.kind, list(labels), vals, stat, idx)
