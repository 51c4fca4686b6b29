"""Monte-Carlo false-alarm harness and the classical-equivalence checks."""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import (
    cca_fit,
    cca_stats,
    pca_fit,
    pca_stats,
    pcca_parameters,
    ppca_closed_form,
    restricted_gpmm,
    sfa_fit,
    sfa_temporal,
)
from .datagen import Scenario, gen_random, gen_seq_random_walk, gen_seq_stationary
from .em_random import EmConfig, fit_random
from .em_sequential import fit_sequential
from .linalg import spd_inv
from .model import benchmark_parameters, posterior_s_given_xy
from .monitoring import (
    StatisticKind,
    build_spec,
    build_spec_qseq,
    build_spec_tseq,
    build_specs_random,
    build_specs_slow,
    fit_slow_feature_model,
    monitor,
    stat_sf_ran,
    stat_ss_ran,
    stat_ts_p,
    stat_tz_p,
)

__all__ = [
    "TABLE_KINDS",
    "FarReport",
    "EquivalenceReport",
    "mc_far",
    "verify_equivalence",
    "relative_deviation",
]

TABLE_KINDS = (
    StatisticKind.TS_RAN, StatisticKind.TZ_RAN, StatisticKind.Q_RAN, StatisticKind.TS_P,
    StatisticKind.TZ_P, StatisticKind.Q_SEQ, StatisticKind.SF_RAN, StatisticKind.SS_RAN,
)


def _child_seeds(seed, rep, n):
    ss = np.random.SeedSequence([int(seed), int(rep)])
    return [int(c.generate_state(1)[0]) for c in ss.spawn(n)]


def _one_repetition(args):
    (rep, seed, kinds, alphas, n_random, n_sequences, seq_len, n_walk, r, tau,
     params, em_config) = args
    seeds = _child_seeds(seed, rep, 6)
    rates = {}
    random_kinds = [k for k in kinds if k.value in ("TS_RAN", "TZ_RAN", "Q_RAN", "TS_P", "TZ_P")]
    if random_kinds:
        xtr, ytr = gen_random(Scenario("random", params, n_random, 1, seeds[0]))
        xte, yte = gen_random(Scenario("random", params, n_random, 1, seeds[1]))
        fitted, _ = fit_random(xtr, ytr, r, em_config)
        for a in alphas:
            res = monitor(fitted, build_specs_random(fitted, a, random_kinds), (xte, yte))
            for k, v in res.alarm_rates().items():
                rates[(k, a)] = v
    seq_kinds = [k for k in kinds if k in (StatisticKind.Q_SEQ, StatisticKind.T_SEQ)]
    if seq_kinds:
        tr = gen_seq_stationary(Scenario("seq_stationary", params, seq_len, n_sequences, seeds[2]))
        te = gen_seq_stationary(Scenario("seq_stationary", params, seq_len, n_sequences, seeds[3]))
        fitted, _ = fit_sequential(tr, tau, r, em_config)
        for a in alphas:
            specs = {}
            if StatisticKind.Q_SEQ in seq_kinds:
                specs[StatisticKind.Q_SEQ] = build_spec_qseq(fitted, a, tau)
            if StatisticKind.T_SEQ in seq_kinds:
                specs[StatisticKind.T_SEQ] = build_spec_tseq(fitted, tr, tau, a)
            for kind, spec in specs.items():
                res = monitor(fitted, {kind: spec}, te)
                rates[(kind, a)] = res.alarm_rates()[kind]
    slow_kinds = [k for k in kinds if k in (StatisticKind.SF_RAN, StatisticKind.SS_RAN)]
    if slow_kinds:
        tr = gen_seq_random_walk(Scenario("random_walk", params, n_walk, 1, seeds[4]))
        te = gen_seq_random_walk(Scenario("random_walk", params, n_walk, 1, seeds[5]))
        model = fit_slow_feature_model(tr, r)
        for a in alphas:
            specs = {k: s for k, s in build_specs_slow(model, a).items() if k in slow_kinds}
            for k, v in monitor(model, specs, te).alarm_rates().items():
                rates[(k, a)] = v
    return rates


@dataclass(eq=False)
class FarReport:
    """False-alarm ratios per (statistic, alpha) over Monte-Carlo repetitions."""

    kinds: tuple
    alphas: tuple
    rates: dict = field(default_factory=dict)  # (kind, alpha) -> list of ratios

    def mean(self, kind, alpha):
        return float(np.mean(self.rates[(kind, alpha)]))

    def std(self, kind, alpha):
        v = self.rates[(kind, alpha)]
        return float(np.std(v, ddof=1)) if len(v) > 1 else None

    def to_text(self):
        head = f"{'statistic':<10}" + "".join(f"  {'alpha=' + format(a, 'g'):<20}" for a in self.alphas)
        lines = [head]
        for k in self.kinds:
            cells = []
            for a in self.alphas:
                sd = self.std(k, a)
                cell = f"{self.mean(k, a):.4f}" + (f" ± {sd:.4f}" if sd is not None else "")
                cells.append(f"  {cell:<20}")
            lines.append(f"{k.value:<10}" + "".join(cells))
        return "\n".join(lines) + "\n"


def mc_far(reps=10, seed=0, kinds=TABLE_KINDS, alphas=(0.05, 0.01), n_random=10_000,
           n_sequences=20, seq_len=500, n_walk=10_000, r=2, tau=1, params=None,
           em_config=None, workers=None):
    """Fit on fresh training data and count alarms on fresh test data, ``reps`` times.

    Every repetition regenerates both sets from seeds derived from
    (``seed``, repetition index), so the report is independent of ``workers``.
    """
    params = params or benchmark_parameters()
    kinds = tuple(StatisticKind(k) for k in kinds)
    alphas = tuple(float(a) for a in alphas)
    em_config = em_config or EmConfig()
    if workers is None:
        workers = int(os.environ.get("GPMM_NUM_THREADS", "1") or 1)
    jobs = [(i, seed, kinds, alphas, n_random, n_sequences, seq_len, n_walk, r, tau, params,
             em_config) for i in range(reps)]
    if workers > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_one_repetition, jobs))
    else:
        results = [_one_repetition(j) for j in jobs]
    report = FarReport(kinds, alphas)
    for res in results:
        for key, v in res.items():
            report.rates.setdefault(key, []).append(v)
    return report


def relative_deviation(a, b):
    """Max over samples of |a - b| / |b| (denominator floored at 1e-12 * max |b|)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    floor = 1e-12 * max(float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor)))


@dataclass(eq=False)
class EquivalenceReport:
    threshold: float
    rows: list = field(default_factory=list)  # (name, deviation)

    @property
    def passed(self):
        return all(dev < self.threshold for _, dev in self.rows)

    def to_text(self):
        lines = [f"{'comparison':<44} {'max rel dev':>12}  result"]
        for name, dev in self.rows:
            lines.append(f"{name:<44} {dev:>12.3e}  {'pass' if dev < self.threshold else 'FAIL'}")
        lines.append(f"overall: {'pass' if self.passed else 'FAIL'} (threshold {self.threshold:g})")
        return "\n".join(lines) + "\n"


def verify_equivalence(n_samples=10_000, seed=0, r=2, break_restriction=False, threshold=1e-6,
                       params=None):
    """Compare restricted-GPMM statistics with PCA, CCA and SFA pointwise.

    With ``break_restriction`` the CCA-side model gets W = 0.5 I instead of
    W = I, which the posterior check must flag.
    """
    params = params or benchmark_parameters()
    seeds = _child_seeds(seed, 0, 2)
    x, y = gen_random(Scenario("random", params, n_samples, 1, seeds[0]))
    report = EquivalenceReport(threshold)

    pca = pca_fit(x, r)
    t2, spe = pca_stats(pca, x)
    xn = (x - pca.mean[:, None]) / pca.std[:, None]
    v_ml, pi2 = ppca_closed_form(xn, r)
    ppca = restricted_gpmm("ppca", v_mat=v_ml, pi2=pi2)
    report.rows.append(("PCA T2 vs TS_P (PPCA restriction)",
                        relative_deviation(stat_ts_p(build_spec("TS_P", ppca), ppca, xn), t2)))
    resid_model = restricted_gpmm("slow", whitening=np.eye(x.shape[0]), v_mat=v_ml, pi2=pi2)
    resid_spec = build_specs_slow(resid_model)[StatisticKind.SS_RAN]
    report.rows.append(("PCA SPE vs pi2 * residual (PPCA restriction)",
                        relative_deviation(pi2 * stat_ss_ran(resid_spec, resid_model, xn), spe)))

    cca = cca_fit(x, y, r)
    tx, ty = cca_stats(cca, x, y)
    pcca = pcca_parameters(cca)
    if break_restriction:
        w = np.full(r, 0.5)
        pcca = pcca.replace(w_diag=w, lambda_eps_diag=1.0 - w ** 2)
    xc = (x - cca.mean_x[:, None]) / cca.std_x[:, None]
    yc = (y - cca.mean_y[:, None]) / cca.std_y[:, None]
    report.rows.append(("CCA Tx2 vs TS_P (PCCA restriction)",
                        relative_deviation(stat_ts_p(build_spec("TS_P", pcca), pcca, xc), tx)))
    report.rows.append(("CCA Ty2 vs TZ_P (PCCA restriction)",
                        relative_deviation(stat_tz_p(build_spec("TZ_P", pcca), pcca, yc), ty)))
    post = posterior_s_given_xy(pcca, xc, yc)
    u, v = pcca.u_mat, pcca.v_mat
    ly_inv, lx_inv = spd_inv(pcca.lambda_y), spd_inv(pcca.lambda_x)
    xi = np.linalg.inv(u.T @ ly_inv @ u + v.T @ lx_inv @ v + np.eye(r))
    mean = xi @ (u.T @ ly_inv @ yc + v.T @ lx_inv @ xc)
    cov_dev = np.linalg.norm(post.covariance - xi) / np.linalg.norm(xi)
    dev = max(relative_deviation(post.mean, mean), float(cov_dev))
    report.rows.append(("posterior s|x,y vs W = I closed form", dev))

    walk = gen_seq_random_walk(Scenario("random_walk", params, n_samples, 1, seeds[1]))
    q = walk.shape[0]
    sfa = sfa_fit(walk, q - r)
    diffs = np.diff(walk, axis=1)
    ss2, sf2 = sfa_temporal(sfa, diffs)
    slow = fit_slow_feature_model(walk, r)
    specs = build_specs_slow(slow)
    zdot = slow.whitening @ diffs
    report.rows.append(("SFA S_F2 vs SF_RAN",
                        relative_deviation(stat_sf_ran(specs[StatisticKind.SF_RAN], slow, zdot), sf2)))
    report.rows.append(("SFA S_S2 vs pi2 * SS_RAN",
                        relative_deviation(slow.pi2 * stat_ss_ran(specs[StatisticKind.SS_RAN], slow,
                                                                  zdot), ss2)))
    return report
