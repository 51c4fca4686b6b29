"""EM estimation of GPMM from sequential data with a Kalman smoother E-step.

A sequence is split into ``tau`` phase subsequences (columns k, k+τ, k+2τ, …),
each treated as a realisation of the latent chain s_{t+1} = W s_t + ε.  The
covariance recursions do not depend on the data, so they are run once per
distinct subsequence length and the mean recursions are batched.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .em_random import (
    EmConfig,
    FitDiagnostics,
    check_data,
    check_moment,
    loading_and_noise,
    update_lambda,
)
from .linalg import IllConditionedError, spd_inv, symmetrize
from .model import ModelParameters

__all__ = [
    "SubsequenceSet",
    "SmootherState",
    "SufficientStatsSequential",
    "decompose_subsequences",
    "kalman_forward",
    "kalman_backward",
    "sufficient_stats_sequential",
    "sequence_log_likelihood",
    "smoothed_means",
    "fit_sequential",
]


@dataclass(frozen=True, eq=False)
class SubsequenceSet:
    """Phase subsequences of one parent sequence.

    ``origins[k]`` holds the 0-based parent column of every column of
    ``subsequences[k]``.
    """

    subsequences: list
    origins: list
    tau: int
    length: int

    def reassemble(self):
        q = self.subsequences[0].shape[0]
        out = np.empty((q, self.length))
        for sub, idx in zip(self.subsequences, self.origins):
            out[:, idx] = sub
        return out


def decompose_subsequences(x_data, tau):
    x = np.asarray(x_data, dtype=float)
    if x.ndim != 2:
        raise ValueError("x_data must be a 2-d (variables x samples) array")
    tau = int(tau)
    t = x.shape[1]
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if t < 2 * tau:
        raise ValueError(f"sequence length {t} is shorter than 2*tau = {2 * tau}")
    origins = [np.arange(k, t, tau) for k in range(tau)]
    return SubsequenceSet([x[:, idx] for idx in origins], origins, tau, t)


@dataclass(eq=False)
class SmootherState:
    """Kalman filter / RTS smoother quantities for one subsequence.

    Means are (r, T); covariances and gains are stacked along the first axis.
    ``pred_cov[t]`` is the one-step predicted covariance of s_t.
    """

    filt_mean: np.ndarray
    filt_cov: np.ndarray
    kalman_gain: np.ndarray
    pred_cov: np.ndarray
    smooth_mean: np.ndarray = None
    smooth_cov: np.ndarray = None
    smoother_gain: np.ndarray = None


class _Terms:
    """Data-independent matrices derived once per parameter set."""

    def __init__(self, params):
        self.params = params
        lx_inv = spd_inv(params.lambda_x, "Λ_x")
        v = params.v_mat
        self.v = v
        self.b_mat = v.T @ lx_inv
        self.c_mat = symmetrize(self.b_mat @ v)
        self.w = np.asarray(params.w_diag, dtype=float)
        self.lam_eps = np.asarray(params.lambda_eps_diag, dtype=float)
        self._cache = {}

    def covariances(self, n_steps):
        if n_steps not in self._cache:
            try:
                pred, filt, smooth, gain = kernels.covariance_pass(
                    self.c_mat, self.w, self.lam_eps, n_steps)
            except np.linalg.LinAlgError as exc:
                raise IllConditionedError(
                    "ill-conditioned model: singular predicted covariance W Y W^T + Λ_ε") from exc
            k_gain = filt @ self.b_mat
            r = self.w.shape[0]
            eye = np.eye(r)
            a_mats = (eye - k_gain @ self.v) * self.w[None, None, :]
            d_mats = eye - gain * self.w[None, None, :]
            self._cache[n_steps] = dict(
                pred=pred, filt=filt, smooth=smooth, gain=gain, k_gain=k_gain,
                a_mats=np.ascontiguousarray(a_mats), d_mats=np.ascontiguousarray(d_mats))
        return self._cache[n_steps]

    def run(self, xbar):
        """Batch smoother over ``xbar`` of shape (n, T, q), already centred."""
        cov = self.covariances(xbar.shape[1])
        b_vecs = np.einsum("tij,ntj->nti", cov["k_gain"], xbar)
        mu, mu_hat = kernels.mean_pass(cov["a_mats"], np.ascontiguousarray(b_vecs),
                                       cov["d_mats"], np.ascontiguousarray(cov["gain"]))
        return cov, mu, mu_hat

    def loglik(self, xbar, mu):
        """Prediction-error log-likelihood summed over the batch."""
        n, t, q = xbar.shape
        p = self.params
        cov = self.covariances(t)
        vw = self.v * self.w[None, :]
        pred_mean = np.zeros_like(xbar)
        pred_mean[:, 1:] = mu[:, :-1] @ vw.T
        innov = xbar - pred_mean
        s_cov = self.v @ cov["pred"] @ self.v.T + p.lambda_x
        s_cov = 0.5 * (s_cov + s_cov.swapaxes(-1, -2))
        try:
            chol = np.linalg.cholesky(s_cov)
        except np.linalg.LinAlgError as exc:
            raise IllConditionedError(
                "ill-conditioned model: innovation covariance not positive definite") from exc
        logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)))
        white = np.linalg.solve(chol[None], innov[..., None])[..., 0]
        return float(-0.5 * (n * (t * q * np.log(2 * np.pi) + logdet) + np.sum(white * white)))


def _centred_seq(params, x_seq):
    x = check_data("x_seq", x_seq)
    if x.shape[0] != params.q:
        raise ValueError(f"x_seq has {x.shape[0]} variables, model expects {params.q}")
    return (x - params.c_x[:, None]).T[None]


def kalman_forward(params, x_seq):
    """Filtered means, covariances and gains for one subsequence (q, T)."""
    terms = _Terms(params)
    xbar = _centred_seq(params, x_seq)
    cov, mu, _ = terms.run(xbar)
    return SmootherState(
        filt_mean=mu[0].T.copy(),
        filt_cov=cov["filt"],
        kalman_gain=cov["k_gain"],
        pred_cov=cov["pred"],
    )


def kalman_backward(params, forward):
    """Rauch-Tung-Striebel pass: fills the smoothed fields of ``forward``."""
    n_steps = forward.filt_cov.shape[0]
    w = np.asarray(params.w_diag, dtype=float)
    r = w.shape[0]
    smooth_mean = np.empty_like(forward.filt_mean)
    smooth_cov = np.empty_like(forward.filt_cov)
    gain = np.empty((max(n_steps - 1, 0), r, r))
    smooth_mean[:, -1] = forward.filt_mean[:, -1]
    smooth_cov[-1] = forward.filt_cov[-1]
    for t in range(n_steps - 2, -1, -1):
        pred = forward.pred_cov[t + 1]
        try:
            j_mat = np.linalg.solve(pred, (forward.filt_cov[t] * w[None, :]).T).T
        except np.linalg.LinAlgError as exc:
            raise IllConditionedError(
                "ill-conditioned model: singular predicted covariance W Y W^T + Λ_ε") from exc
        gain[t] = j_mat
        mu_t = forward.filt_mean[:, t]
        smooth_mean[:, t] = mu_t + j_mat @ (smooth_mean[:, t + 1] - w * mu_t)
        smooth_cov[t] = symmetrize(forward.filt_cov[t] + j_mat @ (smooth_cov[t + 1] - pred) @ j_mat.T)
    forward.smooth_mean = smooth_mean
    forward.smooth_cov = smooth_cov
    forward.smoother_gain = gain
    return forward


@dataclass(frozen=True, eq=False)
class SufficientStatsSequential:
    """Smoothed moments summed over every subsequence of every training sequence."""

    n_obs: int
    n_trans: int
    sum_ss: np.ndarray  # Σ E[s_t s_t^T]
    sum_xs: np.ndarray  # Σ x̄_t E[s_t]^T
    sum_xx: np.ndarray  # Σ x̄_t x̄_t^T
    sum_lag: np.ndarray  # Σ E[s_t^i s_{t-1}^i]
    sum_cur_sq: np.ndarray  # Σ_{t>=2} E[(s_t^i)^2]
    sum_prev_sq: np.ndarray  # Σ_{t>=2} E[(s_{t-1}^i)^2]
    loglik: float

    def cubic_coefficients(self, i):
        t = float(self.n_trans)
        b = float(self.sum_lag[i])
        return -b, float(self.sum_cur_sq[i] + self.sum_prev_sq[i]) - t, -b, t


def _batches(params, sequences, tau):
    """Centre, decompose and group subsequences by length: {T_k: (n, T_k, q)}."""
    groups = {}
    for seq in sequences:
        x = check_data("x_data", seq)
        if x.shape[0] != params.q:
            raise ValueError(f"sequence has {x.shape[0]} variables, model expects {params.q}")
        subs = decompose_subsequences(x - params.c_x[:, None], tau)
        for sub in subs.subsequences:
            groups.setdefault(sub.shape[1], []).append(sub.T)
    return {t: np.ascontiguousarray(np.stack(g)) for t, g in sorted(groups.items())}


def sufficient_stats_sequential(params, sequences, tau, _terms=None):
    """E-step over a list of (q, T) sequences.

    The cross-lag moment is E[s_t s_{t-1}^T] = Ŷ_t J_{t-1}^T + μ̂_t μ̂_{t-1}^T.
    """
    terms = _terms or _Terms(params)
    q, r = params.q, params.r
    sum_ss = np.zeros((r, r))
    sum_xs = np.zeros((q, r))
    sum_xx = np.zeros((q, q))
    sum_lag = np.zeros(r)
    sum_cur = np.zeros(r)
    sum_prev = np.zeros(r)
    n_obs = n_trans = 0
    ll = 0.0
    for t_len, xbar in _batches(params, sequences, tau).items():
        n = xbar.shape[0]
        cov, mu, mu_hat = terms.run(xbar)
        ll += terms.loglik(xbar, mu)
        smooth = cov["smooth"]
        sum_ss += n * smooth.sum(axis=0) + np.einsum("nti,ntj->ij", mu_hat, mu_hat)
        sum_xs += np.einsum("ntq,ntr->qr", xbar, mu_hat)
        sum_xx += np.einsum("nti,ntj->ij", xbar, xbar)
        sq = n * np.diagonal(smooth, axis1=1, axis2=2) + np.einsum("nti,nti->ti", mu_hat, mu_hat)
        if t_len > 1:
            lag_cov = np.einsum("tij,tij->ti", smooth[1:], cov["gain"])
            sum_lag += n * lag_cov.sum(axis=0) + np.einsum("nti,nti->i", mu_hat[:, 1:], mu_hat[:, :-1])
            sum_cur += sq[1:].sum(axis=0)
            sum_prev += sq[:-1].sum(axis=0)
        n_obs += n * t_len
        n_trans += n * (t_len - 1)
    return SufficientStatsSequential(
        n_obs=n_obs, n_trans=n_trans, sum_ss=symmetrize(sum_ss), sum_xs=sum_xs,
        sum_xx=symmetrize(sum_xx), sum_lag=sum_lag, sum_cur_sq=sum_cur,
        sum_prev_sq=sum_prev, loglik=ll)


def _as_sequences(x_data):
    if isinstance(x_data, np.ndarray) and x_data.ndim == 2:
        return [x_data]
    seqs = list(x_data)
    if not seqs:
        raise ValueError("no training sequences")
    return seqs


def sequence_log_likelihood(params, x_data, tau):
    """Prediction-error log-likelihood of one sequence or a list of sequences."""
    terms = _Terms(params)
    total = 0.0
    for xbar in _batches(params, _as_sequences(x_data), tau).values():
        _, mu, _ = terms.run(xbar)
        total += terms.loglik(xbar, mu)
    return total


def smoothed_means(params, x_seq, tau, mode="smoothed"):
    """Posterior latent means for every column of ``x_seq`` in parent order.

    ``mode`` is ``"smoothed"`` (uses the whole subsequence) or ``"filtered"``
    (causal).  Returns an (r, T) array.
    """
    if mode not in ("smoothed", "filtered"):
        raise ValueError("mode must be 'smoothed' or 'filtered'")
    x = check_data("x_seq", x_seq)
    subs = decompose_subsequences(x - params.c_x[:, None], tau)
    terms = _Terms(params)
    out = np.empty((params.r, x.shape[1]))
    for sub, idx in zip(subs.subsequences, subs.origins):
        _, mu, mu_hat = terms.run(np.ascontiguousarray(sub.T[None]))
        out[:, idx] = (mu_hat if mode == "smoothed" else mu)[0].T
    return out


def _initial_parameters(seqs, r, tau, config):
    q = seqs[0].shape[0]
    c_x = np.concatenate(seqs, axis=1).mean(axis=1)
    cen = [s - c_x[:, None] for s in seqs]
    n = sum(s.shape[1] for s in cen)
    var = sum(np.sum(s * s, axis=1) for s in cen) / n
    lag = sum(s[:, tau:] @ s[:, :-tau].T for s in cen) / sum(s.shape[1] - tau for s in cen)
    vals, vecs = np.linalg.eigh(symmetrize(lag))
    v0 = vecs[:, ::-1][:, :r].copy()
    if vals[::-1][r - 1] <= 1e-12 * max(abs(vals).max(), 1e-300):
        rng = np.random.default_rng(config.seed)
        weak = vals[::-1][:r] <= 1e-12 * max(abs(vals).max(), 1e-300)
        v0[:, weak] = rng.standard_normal((q, int(weak.sum())))
        v0 /= np.linalg.norm(v0, axis=0)
    w0 = np.full(r, 0.5)
    lx = np.diag(var)
    return ModelParameters(u_mat=v0, v_mat=v0, w_diag=w0, lambda_y=lx, lambda_x=lx,
                           lambda_eps_diag=1.0 - w0 ** 2, c_y=c_x, c_x=c_x)


def _seq_params(v, w, lx, c_x):
    return ModelParameters(u_mat=v, v_mat=v, w_diag=w, lambda_y=lx, lambda_x=lx,
                           lambda_eps_diag=1.0 - w ** 2, c_y=c_x, c_x=c_x)


def fit_sequential(x_data, tau, r, config=None, init=None):
    """Fit the sequential GPMM (U = V, c_y = c_x, Λ_y = Λ_x).

    ``x_data`` is one (q, T) sequence or a list of them; statistics from all
    sequences are pooled by summation.  Returns ``(params, diagnostics)``.
    """
    config = config or EmConfig()
    tau = int(tau)
    if tau < 1:
        raise ValueError("tau must be >= 1")
    seqs = [check_data("x_data", s) for s in _as_sequences(x_data)]
    q = seqs[0].shape[0]
    if any(s.shape[0] != q for s in seqs):
        raise ValueError("all sequences must have the same number of variables")
    for s in seqs:
        if s.shape[1] < 2 * tau:
            raise ValueError(f"sequence length {s.shape[1]} is shorter than 2*tau = {2 * tau}")
    if not 1 <= r <= q:
        raise ValueError(f"r must satisfy 1 <= r <= q = {q}")

    params = _initial_parameters(seqs, r, tau, config)
    if init is not None:
        params = _seq_params(init.v_mat, np.asarray(init.w_diag), init.lambda_x, params.c_x)
    diag = FitDiagnostics()
    stats = sufficient_stats_sequential(params, seqs, tau)
    ll = stats.loglik
    diag.record(ll, 0.0)
    for _ in range(config.max_iters):
        check_moment(stats.sum_ss, "Σ E[s s^T]")
        v, lx = loading_and_noise(stats.sum_xx, stats.sum_xs, stats.sum_ss, stats.n_obs)
        w = np.array([update_lambda(stats.cubic_coefficients(i), config) for i in range(r)])
        new = _seq_params(v, w, lx, params.c_x)
        delta = max(float(np.max(np.abs(new.v_mat - params.v_mat))),
                    float(np.max(np.abs(new.w_diag - params.w_diag))),
                    float(np.max(np.abs(new.lambda_x - params.lambda_x))))
        params = new
        stats = sufficient_stats_sequential(params, seqs, tau)
        diag.record(stats.loglik, delta)
        done = abs(stats.loglik - ll) / (abs(stats.loglik) + 1.0) < config.rel_tol
        ll = stats.loglik
        if done:
            diag.converged = True
            break
    return params, diag
