"""Monitoring statistics, their degrees of freedom and chi-square control limits.

Every statistic is a quadratic form ``h^T Π h`` in a statistic-specific vector
``h`` built from centred observations:

========  ===============================  ======================
kind      h                                Π (``weight_matrix``)
========  ===============================  ======================
TS_RAN    (ȳ; x̄)                           G_s^T (I - Ξ_s)^+ G_s
TZ_RAN    (ȳ; x̄)                           G_z^T (I - Ξ_z)^+ G_z
Q_RAN     (ȳ; x̄)                           A
TS_P      x̄                                as TS_RAN, input only
TZ_P      ȳ                                as TZ_RAN, output only
Q_SEQ     (x̄_{t+τ}; x̄_t)                   H
T_SEQ     smoothed latent mean μ̂_t        E[μ̂ μ̂^T]^+
SF_RAN    first difference ẋ_t (raw)       fast-feature weight
SS_RAN    first difference ẋ_t (raw)       slow-feature residual weight
========  ===============================  ======================

where G maps h to the posterior mean and Ξ is the posterior covariance.
``aux["psi_h"]`` holds the in-control covariance of h used by the relative
contribution methods.
"""

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import stats as sps

from .em_sequential import smoothed_means
from .linalg import (
    block_diag,
    numerical_rank,
    range_pinv,
    spd_inv,
    spd_inv_sqrt,
    spd_sqrt,
    symmetrize,
)
from .model import (
    ModelParameters,
    aux_matrices,
    joint_model,
    posterior_s_given_x,
    posterior_s_given_xy,
    posterior_z_given_xy,
    posterior_z_given_y,
)

__all__ = [
    "StatisticKind",
    "StatisticSpec",
    "MonitoringResult",
    "SlowFeatureModel",
    "UninformativeStatisticError",
    "InsufficientCalibrationError",
    "control_limit",
    "empirical_limit",
    "build_specs_random",
    "build_spec",
    "build_spec_qseq",
    "build_spec_tseq",
    "spec_tseq_from_moment",
    "build_specs_slow",
    "fit_slow_feature_model",
    "stat_ts_ran",
    "stat_tz_ran",
    "stat_q_ran",
    "stat_ts_p",
    "stat_tz_p",
    "stat_t_seq",
    "stat_q_seq",
    "stat_sf_ran",
    "stat_ss_ran",
    "monitor",
]

UNIT_EIG_CUT = 0.5


class StatisticKind(str, Enum):
    TS_RAN = "TS_RAN"
    TZ_RAN = "TZ_RAN"
    Q_RAN = "Q_RAN"
    TS_P = "TS_P"
    TZ_P = "TZ_P"
    T_SEQ = "T_SEQ"
    Q_SEQ = "Q_SEQ"
    SF_RAN = "SF_RAN"
    SS_RAN = "SS_RAN"


RANDOM_KINDS = (StatisticKind.TS_RAN, StatisticKind.TZ_RAN, StatisticKind.Q_RAN,
                StatisticKind.TS_P, StatisticKind.TZ_P)
SEQUENTIAL_KINDS = (StatisticKind.T_SEQ, StatisticKind.Q_SEQ)
SLOW_KINDS = (StatisticKind.SF_RAN, StatisticKind.SS_RAN)


class UninformativeStatisticError(ValueError):
    pass


class InsufficientCalibrationError(ValueError):
    pass


def control_limit(alpha, dof):
    """(1 - alpha) quantile of the chi-square distribution with ``dof`` degrees."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    if dof < 1:
        raise ValueError("dof must be >= 1")
    if alpha == 1.0:
        return 0.0
    return float(sps.chi2.isf(alpha, dof))


def empirical_limit(values, alpha):
    """Order-statistic (1 - alpha) quantile of in-control statistic values."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("no calibration values")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return float(np.quantile(values, 1.0 - alpha, method="higher"))


@dataclass(frozen=True, eq=False)
class StatisticSpec:
    kind: StatisticKind
    dof: int
    alpha: float
    control_limit: float
    weight_matrix: np.ndarray
    aux: dict = field(default_factory=dict)

    def with_limit(self, limit):
        """Copy with a different (e.g. empirical) control limit."""
        return StatisticSpec(self.kind, self.dof, self.alpha, float(limit),
                             self.weight_matrix, dict(self.aux, limit_mode="empirical"))


def _make_spec(kind, dof, alpha, weight, **aux):
    if dof < 1:
        raise UninformativeStatisticError(
            f"uninformative statistic: {kind.value} has no informative direction")
    aux.setdefault("limit_mode", "chi2")
    return StatisticSpec(kind, int(dof), float(alpha), control_limit(alpha, dof),
                         symmetrize(weight), aux)


def _t_weight(gain, post_cov):
    """Π = G^T (I - Ξ)^+ G and its rank."""
    cov_mu = symmetrize(np.eye(post_cov.shape[0]) - post_cov)
    inv, rank = range_pinv(cov_mu)
    return gain.T @ inv @ gain, inv, rank


def _residual_weight(noise, loading, what):
    """A = Ū^{-1/2} (I - ρ(ρ^Tρ)^{-1}ρ^T) Ū^{-1/2} with ρ = Ū^{-1/2} loading."""
    root = spd_inv_sqrt(noise, what)
    rho = root @ loading
    gram = symmetrize(rho.T @ rho)
    if numerical_rank(gram) < gram.shape[0]:
        warnings.warn(f"rank-deficient ρ^Tρ in {what}; using pseudo-inverse", RuntimeWarning)
        gram_inv = np.linalg.pinv(gram)
    else:
        gram_inv = spd_inv(gram, "ρ^Tρ")
    proj = np.eye(noise.shape[0]) - rho @ gram_inv @ rho.T
    return symmetrize(root @ proj @ root)


def _unit_spectrum(weight, cov):
    root = spd_sqrt(cov, "h covariance")
    spec = np.sort(np.linalg.eigvalsh(symmetrize(root @ weight @ root)))[::-1]
    return spec, int(np.sum(spec > UNIT_EIG_CUT))


def _gains_random(params):
    """Posterior-mean gains acting on h = (ȳ; x̄)."""
    uw = params.u_mat @ params.w_mat
    omega_inv = spd_inv(params.omega, "Ω")
    lx_inv = spd_inv(params.lambda_x, "Λ_x")
    ly_inv = spd_inv(params.lambda_y, "Λ_y")
    post_s = posterior_s_given_xy(params, params.c_x, params.c_y)
    post_z = posterior_z_given_xy(params, params.c_x, params.c_y)
    g_s = post_s.covariance @ np.hstack([uw.T @ omega_inv, params.v_mat.T @ lx_inv])
    m, n = aux_matrices(params)
    n_inv = spd_inv(n, "N")
    g_z = post_z.covariance @ np.hstack([params.u_mat.T @ ly_inv, m.T @ n_inv])
    return (g_s, post_s.covariance), (g_z, post_z.covariance)


def build_spec(kind, params, alpha=0.05):
    """Spec for one of the random-data statistics."""
    kind = StatisticKind(kind)
    jm = joint_model(params)
    if kind in (StatisticKind.TS_RAN, StatisticKind.TZ_RAN):
        (g_s, xi_s), (g_z, xi_z) = _gains_random(params)
        gain, xi = (g_s, xi_s) if kind is StatisticKind.TS_RAN else (g_z, xi_z)
        weight, inv, rank = _t_weight(gain, xi)
        return _make_spec(kind, rank, alpha, weight, gain=gain, post_cov=xi, cov_mu_inv=inv,
                          psi_h=jm.joint_cov, h_layout="yx")
    if kind is StatisticKind.Q_RAN:
        loading = np.vstack([params.u_mat @ params.w_mat, params.v_mat])
        noise = block_diag(params.omega, params.lambda_x)
        weight = _residual_weight(noise, loading, "Ū")
        spectrum, dof = _unit_spectrum(weight, jm.joint_cov)
        return _make_spec(kind, dof, alpha, weight, spectrum=spectrum, psi_h=jm.joint_cov,
                          h_layout="yx")
    if kind is StatisticKind.TS_P:
        post = posterior_s_given_x(params, params.c_x)
        gain = post.covariance @ params.v_mat.T @ spd_inv(params.lambda_x, "Λ_x")
        weight, inv, rank = _t_weight(gain, post.covariance)
        psi = symmetrize(params.v_mat @ params.v_mat.T + params.lambda_x)
        return _make_spec(kind, rank, alpha, weight, gain=gain, post_cov=post.covariance,
                          cov_mu_inv=inv, psi_h=psi, h_layout="x")
    if kind is StatisticKind.TZ_P:
        post = posterior_z_given_y(params, params.c_y)
        gain = post.covariance @ params.u_mat.T @ spd_inv(params.lambda_y, "Λ_y")
        weight, inv, rank = _t_weight(gain, post.covariance)
        psi = symmetrize(params.u_mat @ params.u_mat.T + params.lambda_y)
        return _make_spec(kind, rank, alpha, weight, gain=gain, post_cov=post.covariance,
                          cov_mu_inv=inv, psi_h=psi, h_layout="y")
    raise ValueError(f"{kind.value} is not a random-data statistic")


def build_specs_random(params, alpha=0.05, kinds=RANDOM_KINDS):
    return {StatisticKind(k): build_spec(k, params, alpha) for k in kinds}


def sequential_lag_covariance(params):
    """Stationary covariance of γ = (x̄_{t+τ}; x̄_t) under the sequential model."""
    v = params.v_mat
    stat = symmetrize(v @ v.T + params.lambda_x)
    lag = v @ params.w_mat @ v.T
    return np.block([[stat, lag], [lag.T, stat]])


def build_spec_qseq(params, alpha=0.05, tau=1):
    v = params.v_mat
    loading = np.vstack([v @ params.w_mat, v])
    noise = block_diag(symmetrize(v @ params.lambda_eps @ v.T + params.lambda_x), params.lambda_x)
    weight = _residual_weight(noise, loading, "Φ")
    psi = sequential_lag_covariance(params)
    spectrum, dof = _unit_spectrum(weight, psi)
    return _make_spec(StatisticKind.Q_SEQ, dof, alpha, weight, spectrum=spectrum, psi_h=psi,
                      tau=int(tau), h_layout="x_lead,x")


def _sequence_list(data):
    if isinstance(data, np.ndarray):
        if data.ndim != 2:
            raise ValueError("sequence data must be 2-d (variables x samples)")
        return [data]
    return [np.asarray(s, dtype=float) for s in data]


def build_spec_tseq(params, training, tau=1, alpha=0.05, burn_in=20, mode="smoothed"):
    """T_SEQ spec calibrated on the second moment of training latent means.

    The first ``burn_in`` samples of every phase subsequence are skipped.
    """
    means = []
    for seq in _sequence_list(training):
        mu = smoothed_means(params, seq, tau, mode)
        keep = np.arange(seq.shape[1]) >= burn_in * tau
        means.append(mu[:, keep])
    mu = np.concatenate(means, axis=1) if means else np.zeros((params.r, 0))
    if mu.shape[1] < 50 * params.r:
        raise InsufficientCalibrationError(
            f"insufficient calibration data: {mu.shape[1]} post-burn-in samples, "
            f"need at least {50 * params.r}")
    return spec_tseq_from_moment(mu @ mu.T / mu.shape[1], tau, alpha, burn_in, mode)


def spec_tseq_from_moment(moment, tau=1, alpha=0.05, burn_in=20, mode="smoothed"):
    """T_SEQ spec from a stored second moment of in-control latent means."""
    moment = symmetrize(np.asarray(moment, dtype=float))
    inv, rank = range_pinv(moment)
    return _make_spec(StatisticKind.T_SEQ, rank, alpha, inv, moment=moment, tau=int(tau),
                      burn_in=int(burn_in), mode=mode, h_layout="latent")


@dataclass(frozen=True, eq=False)
class SlowFeatureModel:
    """Differenced-latent model ż = V ṡ + e_z on whitened first differences.

    ``whitening`` maps a raw difference ẋ to ż.  ``params`` is a GPMM
    parameter set whose input block carries (V, Λ_z); only that block is used.
    """

    whitening: np.ndarray
    params: ModelParameters
    pi2: float = None

    @property
    def v_mat(self):
        return self.params.v_mat

    @property
    def lambda_z(self):
        return self.params.lambda_x

    @property
    def q(self):
        return self.params.q

    @property
    def r(self):
        return self.params.r


def slow_model_from(whitening, v_mat, lambda_z, pi2=None):
    q, r = v_mat.shape
    zeros = np.zeros(q)
    params = ModelParameters(u_mat=v_mat, v_mat=v_mat, w_diag=np.zeros(r), lambda_y=lambda_z,
                             lambda_x=lambda_z, lambda_eps_diag=np.ones(r), c_y=zeros, c_x=zeros)
    return SlowFeatureModel(np.asarray(whitening, dtype=float), params, pi2)


def fit_slow_feature_model(x_seq, r):
    """Whiten, difference and fit the isotropic-noise latent model in closed form."""
    from .baselines import ppca_closed_form, sfa_whitening

    x = np.asarray(x_seq, dtype=float)
    whitening, _ = sfa_whitening(x)
    zdot = whitening @ np.diff(x, axis=1)
    v_mat, pi2 = ppca_closed_form(zdot, r)
    return slow_model_from(whitening, v_mat, pi2 * np.eye(x.shape[0]), pi2)


def _slow_weights(model):
    v = model.v_mat
    lz_inv = spd_inv(model.lambda_z, "Λ_z")
    post = posterior_s_given_x(model.params, np.zeros(model.q))
    gain = post.covariance @ v.T @ lz_inv
    fast, inv, rank = _t_weight(gain, post.covariance)
    gram = symmetrize(v.T @ lz_inv @ v)
    if numerical_rank(gram) < gram.shape[0]:
        raise np.linalg.LinAlgError("degenerate slow-feature model: V^T Λ_z^{-1} V is singular")
    slow = lz_inv - lz_inv @ v @ np.linalg.solve(gram, v.T @ lz_inv)
    return gain, post.covariance, fast, inv, rank, symmetrize(slow)


def build_specs_slow(model, alpha=0.05):
    """SF_RAN and SS_RAN specs with weights expressed on raw differences."""
    gain, xi, fast, inv, rank, slow = _slow_weights(model)
    wh = model.whitening
    psi_z = symmetrize(model.v_mat @ model.v_mat.T + model.lambda_z)
    wh_inv = np.linalg.inv(wh)
    psi_raw = symmetrize(wh_inv @ psi_z @ wh_inv.T)
    _, ss_dof = _unit_spectrum(slow, psi_z)
    return {
        StatisticKind.SF_RAN: _make_spec(StatisticKind.SF_RAN, rank, alpha, wh.T @ fast @ wh,
                                         gain=gain, post_cov=xi, cov_mu_inv=inv,
                                         psi_h=psi_raw, h_layout="dx"),
        StatisticKind.SS_RAN: _make_spec(StatisticKind.SS_RAN, ss_dof, alpha, wh.T @ slow @ wh,
                                         psi_h=psi_raw, h_layout="dx"),
    }


def _quad(mu, inv):
    mu = np.asarray(mu, dtype=float)
    if mu.ndim == 1:
        return float(max(mu @ inv @ mu, 0.0))
    return np.maximum(np.einsum("it,ij,jt->t", mu, inv, mu), 0.0)


def _check_kind(spec, *kinds):
    if spec.kind not in kinds:
        raise ValueError(f"spec kind {spec.kind.value} does not match this statistic")


def stat_ts_ran(spec, params, x, y):
    _check_kind(spec, StatisticKind.TS_RAN)
    return _quad(posterior_s_given_xy(params, x, y).mean, spec.aux["cov_mu_inv"])


def stat_tz_ran(spec, params, x, y):
    _check_kind(spec, StatisticKind.TZ_RAN)
    return _quad(posterior_z_given_xy(params, x, y).mean, spec.aux["cov_mu_inv"])


def _stack_h(params, x, y):
    xb = np.asarray(x, dtype=float)
    yb = np.asarray(y, dtype=float)
    if xb.ndim == 1:
        return np.concatenate([yb - params.c_y, xb - params.c_x])
    return np.vstack([yb - params.c_y[:, None], xb - params.c_x[:, None]])


def stat_q_ran(spec, params, x, y):
    _check_kind(spec, StatisticKind.Q_RAN)
    return _quad(_stack_h(params, x, y), spec.weight_matrix)


def stat_ts_p(spec, params, x):
    _check_kind(spec, StatisticKind.TS_P)
    return _quad(posterior_s_given_x(params, x).mean, spec.aux["cov_mu_inv"])


def stat_tz_p(spec, params, y):
    _check_kind(spec, StatisticKind.TZ_P)
    return _quad(posterior_z_given_y(params, y).mean, spec.aux["cov_mu_inv"])


def stat_t_seq(spec, mu_hat):
    _check_kind(spec, StatisticKind.T_SEQ)
    return _quad(mu_hat, spec.weight_matrix)


def stat_q_seq(spec, params, x_t, x_lead):
    """Q_SEQ for the pair (x_t, x_{t+τ}); columns are paired when 2-d."""
    _check_kind(spec, StatisticKind.Q_SEQ)
    x_t = np.asarray(x_t, dtype=float)
    x_lead = np.asarray(x_lead, dtype=float)
    c = params.c_x if x_t.ndim == 1 else params.c_x[:, None]
    return _quad(np.concatenate([x_lead - c, x_t - c]), spec.weight_matrix)


def _slow_posterior_mean(model, zdot):
    return posterior_s_given_x(model.params, zdot).mean


def stat_sf_ran(spec, model, zdot):
    """SF_RAN on whitened differences ż."""
    _check_kind(spec, StatisticKind.SF_RAN)
    return _quad(_slow_posterior_mean(model, zdot), spec.aux["cov_mu_inv"])


def stat_ss_ran(spec, model, zdot):
    """SS_RAN: minimised weighted residual of ż against V ṡ."""
    _check_kind(spec, StatisticKind.SS_RAN)
    v = model.v_mat
    lz_inv = spd_inv(model.lambda_z, "Λ_z")
    zdot = np.asarray(zdot, dtype=float)
    gram = v.T @ lz_inv @ v
    sdot = np.linalg.solve(gram, v.T @ lz_inv @ zdot)
    resid = zdot - v @ sdot
    return _quad(resid, lz_inv)


@dataclass(eq=False)
class MonitoringResult:
    """Per-sample statistic values and alarms.

    For each kind, ``index[kind]`` is an (n, 2) integer array of
    (sequence, sample) positions the values are attributed to.
    """

    specs: dict
    values: dict = field(default_factory=dict)
    index: dict = field(default_factory=dict)

    @property
    def alarms(self):
        return {k: v > self.specs[k].control_limit for k, v in self.values.items()}

    def alarm_rates(self):
        return {k: (float(np.mean(a)) if a.size else float("nan")) for k, a in self.alarms.items()}

    def to_csv(self):
        kinds = list(self.values)
        rows = {}
        for k in kinds:
            for (s, t), v in zip(self.index[k], self.values[k]):
                rows.setdefault((int(s), int(t)), {})[k] = v
        head = ["sequence", "sample_index"] + [k.value for k in kinds] + \
               [f"{k.value}_alarm" for k in kinds]
        lines = [",".join(head)]
        for key in sorted(rows):
            row = rows[key]
            vals = [f"{row[k]:.17g}" if k in row else "" for k in kinds]
            alarms = [str(int(row[k] > self.specs[k].control_limit)) if k in row else ""
                      for k in kinds]
            lines.append(",".join([str(key[0]), str(key[1])] + vals + alarms))
        return "\n".join(lines) + "\n"

    def metadata(self):
        lines = ["statistic,dof,alpha,control_limit,limit_mode"]
        for k, s in self.specs.items():
            lines.append(f"{k.value},{s.dof},{s.alpha:.17g},{s.control_limit:.17g},"
                         f"{s.aux.get('limit_mode', 'chi2')}")
        return "\n".join(lines) + "\n"


def _index(seq_id, idx):
    idx = np.asarray(idx, dtype=int)
    return np.column_stack([np.full(idx.shape, seq_id, dtype=int), idx])


def _concat(parts, shape=(0, 2)):
    return np.concatenate(parts) if parts else np.zeros(shape, dtype=int)


def monitor(params, specs, data, q_seq_mode="batch"):
    """Evaluate every spec in ``specs`` on ``data``.

    ``data`` is an ``(x, y)`` pair for random-data statistics, or one (q, T)
    sequence / a list of sequences for sequential and slow-feature statistics.
    For the slow-feature kinds ``params`` is a :class:`SlowFeatureModel`.
    """
    if isinstance(specs, StatisticSpec):
        specs = {specs.kind: specs}
    specs = dict(specs)
    kinds = set(specs)
    result = MonitoringResult(specs)
    if not kinds:
        return result
    if kinds <= set(RANDOM_KINDS):
        if not (isinstance(data, tuple) and len(data) == 2):
            raise ValueError("layout mismatch: random-data statistics need an (x, y) pair")
        x = np.asarray(data[0], dtype=float)
        y = np.asarray(data[1], dtype=float)
        if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
            raise ValueError("layout mismatch: x and y must be 2-d with equal sample counts")
        if x.shape[0] != params.q or y.shape[0] != params.p:
            raise ValueError("layout mismatch: data dimensions differ from the model")
        t = x.shape[1]
        h_full = _stack_h(params, x, y)
        for kind, spec in specs.items():
            if kind is StatisticKind.TS_P:
                h = h_full[params.p:]
            elif kind is StatisticKind.TZ_P:
                h = h_full[:params.p]
            else:
                h = h_full
            result.values[kind] = _quad(h, spec.weight_matrix) if t else np.zeros(0)
            result.index[kind] = _index(0, np.arange(t))
        return result
    if isinstance(data, tuple):
        raise ValueError("layout mismatch: sequential statistics need sequence data")
    seqs = _sequence_list(data)
    if kinds <= set(SEQUENTIAL_KINDS):
        for kind, spec in specs.items():
            tau = spec.aux["tau"]
            vals, idx = [], []
            for i, seq in enumerate(seqs):
                if seq.shape[0] != params.q:
                    raise ValueError("layout mismatch: sequence dimension differs from the model")
                n = seq.shape[1]
                if kind is StatisticKind.T_SEQ:
                    if n < 2 * tau:
                        continue
                    mu = smoothed_means(params, seq, tau, spec.aux.get("mode", "smoothed"))
                    vals.append(_quad(mu, spec.weight_matrix))
                    idx.append(_index(i, np.arange(n)))
                elif n > tau:
                    vals.append(stat_q_seq(spec, params, seq[:, :-tau], seq[:, tau:]))
                    start = tau if q_seq_mode == "online" else 0
                    idx.append(_index(i, np.arange(start, start + n - tau)))
            result.values[kind] = np.concatenate(vals) if vals else np.zeros(0)
            result.index[kind] = _concat(idx)
        return result
    if kinds <= set(SLOW_KINDS):
        if not isinstance(params, SlowFeatureModel):
            raise ValueError("slow-feature statistics need a SlowFeatureModel")
        for kind, spec in specs.items():
            vals, idx = [], []
            for i, seq in enumerate(seqs):
                if seq.shape[1] < 2:
                    continue
                zdot = params.whitening @ np.diff(seq, axis=1)
                fn = stat_sf_ran if kind is StatisticKind.SF_RAN else stat_ss_ran
                vals.append(fn(spec, params, zdot))
                idx.append(_index(i, np.arange(1, seq.shape[1])))
            result.values[kind] = np.concatenate(vals) if vals else np.zeros(0)
            result.index[kind] = _concat(idx)
        return result
    raise ValueError("layout mismatch: mixed random, sequential and slow-feature statistics")
