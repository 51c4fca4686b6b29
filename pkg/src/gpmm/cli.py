"""Command-line entry point: ``gpmm <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure,
4 EM stopped at max_iters without converging (model still written),
5 equivalence verification failed.
"""

import argparse
import glob
import os
import sys
from urllib.parse import quote, unquote

import numpy as np

from . import __version__
from .contribution import METHODS, OutsideSupportError, diagnose
from .data import DataError, Normalizer, read_csv, write_csv
from .datagen import FaultSpec, Scenario, ScenarioKind, generate
from .em_random import DegenerateStatisticsError, EmConfig, RootBracketError, fit_random
from .em_sequential import fit_sequential
from .experiments import TABLE_KINDS, mc_far, verify_equivalence
from .linalg import IllConditionedError
from .monitoring import (
    RANDOM_KINDS,
    SLOW_KINDS,
    InsufficientCalibrationError,
    StatisticKind,
    build_spec,
    build_spec_qseq,
    build_spec_tseq,
    build_specs_slow,
    fit_slow_feature_model,
    monitor,
    slow_model_from,
    spec_tseq_from_moment,
)
from .persistence import GPMM_TAG, ModelBundle, ModelFormatError, load_bundle, save_bundle

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_NOT_CONVERGED, EXIT_VERIFY = 0, 1, 2, 3, 4, 5
MODES = ("random", "sequential", "slow")
DEFAULT_KINDS = {
    "random": RANDOM_KINDS,
    "sequential": (StatisticKind.Q_SEQ, StatisticKind.T_SEQ),
    "slow": SLOW_KINDS,
}
DEFAULT_DIAGNOSE = {"random": "Q_RAN", "sequential": "Q_SEQ", "slow": "SS_RAN"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# argument types -------------------------------------------------------------

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be a non-negative integer, got {text}")
    return v


def _alpha(text):
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {text}")
    return v


def _theta(text):
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"theta must lie in [0, 1], got {text}")
    return v


def _alpha_list(text):
    return [_alpha(a) for a in str(text).split(",") if a.strip()]


def _kind_list(text):
    try:
        return [StatisticKind(k.strip().upper()) for k in str(text).split(",") if k.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text}")


# parser ---------------------------------------------------------------------

def _em_flags(p):
    p.add_argument("--max-iters", type=_positive_int, default=500)
    p.add_argument("--rel-tol", type=float, default=1e-8)
    p.add_argument("--min-lambda", type=float, default=1e-6)
    p.add_argument("--max-lambda", type=float, default=1.0 - 1e-6)


def build_parser():
    parser = _Parser(prog="gpmm", description="Probabilistic latent-variable process monitoring.")
    parser.add_argument("--version", action="version", version=f"gpmm {__version__}")
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser, required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value file; command-line flags win")
        p.add_argument("--seed", type=_nonneg_int, default=0)
        p.add_argument("--out", help="output path")

    p = sub.add_parser("train", help="fit a model and write it to --out")
    common(p)
    p.add_argument("--mode", choices=MODES, default="random")
    p.add_argument("--x", nargs="+", help="input CSV; several files or a directory for sequential")
    p.add_argument("--y", help="output CSV (mode random)")
    p.add_argument("--r", type=_positive_int, default=2)
    p.add_argument("--tau", type=_positive_int, default=1)
    p.add_argument("--normalize", type=_bool, default=True)
    p.add_argument("--burn-in", type=_nonneg_int, default=20)
    p.add_argument("--diagnostics", help="EM trace CSV (default: <out>.diag.csv)")
    _em_flags(p)

    p = sub.add_parser("monitor", help="evaluate monitoring statistics")
    common(p)
    p.add_argument("--model", required=False)
    p.add_argument("--x", nargs="+")
    p.add_argument("--y")
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--statistics", type=_kind_list, help="comma list, default: all for the model")
    p.add_argument("--q-seq-mode", choices=("batch", "online"), default="batch")

    p = sub.add_parser("diagnose", help="per-variable contributions in long CSV format")
    common(p)
    p.add_argument("--model")
    p.add_argument("--x", nargs="+")
    p.add_argument("--y")
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--statistic", type=lambda t: StatisticKind(t.strip().upper()))
    p.add_argument("--method", choices=METHODS, default="rrbc")
    p.add_argument("--theta", type=_theta, default=0.5)
    p.add_argument("--alarms-only", type=_bool, default=False)

    p = sub.add_parser("simulate", help="generate synthetic data sets")
    common(p)
    p.add_argument("--scenario", choices=[k.value for k in ScenarioKind], default="random")
    p.add_argument("--n-samples", type=_positive_int)
    p.add_argument("--n-sequences", type=_positive_int)
    p.add_argument("--fault-variable", type=_nonneg_int)
    p.add_argument("--fault-onset", type=_nonneg_int, default=0)
    p.add_argument("--fault-magnitude", type=float, default=0.0)
    p.add_argument("--fault-kind", choices=("step", "drift"), default="step")
    p.add_argument("--fault-span", type=_positive_int, default=100)
    p.add_argument("--fault-target", choices=("x", "y"), default="x")

    p = sub.add_parser("mc-far", help="Monte-Carlo false-alarm ratios")
    common(p)
    p.add_argument("--reps", type=_positive_int, default=10)
    p.add_argument("--alpha", type=_alpha_list, default=[0.05, 0.01])
    p.add_argument("--statistics", type=_kind_list, default=list(TABLE_KINDS))
    p.add_argument("--n-samples", type=_positive_int, default=10_000)
    p.add_argument("--n-sequences", type=_positive_int, default=20)
    p.add_argument("--seq-len", type=_positive_int, default=500)
    p.add_argument("--r", type=_positive_int, default=2)
    p.add_argument("--tau", type=_positive_int, default=1)
    _em_flags(p)

    p = sub.add_parser("verify-equivalence", help="compare restricted models with PCA, CCA, SFA")
    common(p)
    p.add_argument("--n-samples", type=_positive_int, default=10_000)
    p.add_argument("--r", type=_positive_int, default=2)
    p.add_argument("--break-restriction", type=_bool, default=False)
    p.add_argument("--threshold", type=float, default=1e-6)
    return parser


def _read_config(path):
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _apply_config(sub_parser, config):
    """Turn config strings into parser defaults, converting like the flags."""
    actions = {a.dest: a for a in sub_parser._actions}
    defaults = {}
    for key, text in config.items():
        if key in ("config", "help") or key not in actions:
            raise UsageError(f"unknown config key '{key}'")
        act = actions[key]
        try:
            if act.nargs in ("+", "*"):
                vals = [t.strip() for t in text.split(",") if t.strip()]
                value = [act.type(t) for t in vals] if act.type else vals
            else:
                value = act.type(text) if act.type else text
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"config key '{key}': {exc}") from exc
        if act.choices is not None and value not in act.choices:
            raise UsageError(f"config key '{key}': invalid choice {text!r}")
        defaults[key] = value
    sub_parser.set_defaults(**defaults)


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub_parser = parser._subparsers._group_actions[0].choices[args.subcommand]
        _apply_config(sub_parser, _read_config(args.config))
        args = parser.parse_args(argv)
    return args


# helpers --------------------------------------------------------------------

def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, [], "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-")
                                                                      for m in missing))


def _expand(paths):
    out = []
    for path in paths:
        if os.path.isdir(path):
            files = sorted(glob.glob(os.path.join(path, "*.csv")))
            if not files:
                raise DataError(f"no CSV files in directory {path}")
            out.extend(files)
        else:
            out.append(path)
    return out


def _read_sequences(paths):
    labels, seqs = None, []
    for path in _expand(paths):
        lab, data = read_csv(path)
        if labels is not None and lab != labels:
            raise DataError(f"{path}: header differs from {paths[0]}")
        labels = lab
        seqs.append(data)
    return labels, seqs


def _em_config(args):
    try:
        return EmConfig(max_iters=args.max_iters, rel_tol=args.rel_tol, seed=args.seed,
                        min_lambda=args.min_lambda, max_lambda=args.max_lambda)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _pack_labels(labels):
    return ",".join(quote(lab, safe="") for lab in labels)


def _unpack_labels(text):
    return [unquote(t) for t in text.split(",")] if text else []


def _diag_path(args):
    return args.diagnostics or f"{args.out}.diag.csv"


def _info(msg):
    print(msg, file=sys.stderr)


# subcommands ----------------------------------------------------------------

def cmd_train(args):
    _need(args, "x", "out")
    config = _em_config(args)
    strings = {"mode": args.mode}
    scalars = {"r": args.r, "tau": args.tau}
    arrays = {}
    converged = True
    if args.mode == "random":
        _need(args, "y")
        if len(args.x) != 1:
            raise UsageError("mode random takes exactly one --x file")
        lx, x = read_csv(args.x[0])
        ly, y = read_csv(args.y)
        if x.shape[1] != y.shape[1]:
            raise DataError(f"{args.x[0]} has {x.shape[1]} rows but {args.y} has {y.shape[1]}")
        if args.r > min(x.shape[0], y.shape[0]):
            raise UsageError(f"--r must not exceed min(p, q) = {min(x.shape[0], y.shape[0])}")
        nx = Normalizer.fit(x) if args.normalize else Normalizer.identity(x.shape[0])
        ny = Normalizer.fit(y) if args.normalize else Normalizer.identity(y.shape[0])
        params, diag = fit_random(nx.apply(x), ny.apply(y), args.r, config)
        converged = diag.converged
        arrays.update(norm_y_mean=ny.mean, norm_y_std=ny.std)
        strings["labels_y"] = _pack_labels(ly)
    else:
        labels, seqs = _read_sequences(args.x)
        lx = labels
        if args.r > len(labels):
            raise UsageError(f"--r must not exceed q = {len(labels)}")
        allx = np.concatenate(seqs, axis=1)
        nx = Normalizer.fit(allx) if args.normalize else Normalizer.identity(len(labels))
        seqs = [nx.apply(s) for s in seqs]
        if args.mode == "sequential":
            params, diag = fit_sequential(seqs, args.tau, args.r, config)
            converged = diag.converged
            try:
                tseq = build_spec_tseq(params, seqs, args.tau, burn_in=args.burn_in)
                arrays["tseq_moment"] = tseq.aux["moment"]
                scalars["burn_in"] = args.burn_in
            except InsufficientCalibrationError as exc:
                _info(f"gpmm: warning: T_SEQ not calibrated: {exc}")
        else:
            if len(seqs) != 1:
                raise UsageError("mode slow takes exactly one --x sequence")
            model = fit_slow_feature_model(seqs[0], args.r)
            params, diag = model.params, None
            arrays["whitening"] = model.whitening
            scalars["pi2"] = model.pi2
    arrays.update(norm_x_mean=nx.mean, norm_x_std=nx.std)
    strings["labels_x"] = _pack_labels(lx)
    scalars["converged"] = int(converged)
    if diag is not None:
        scalars["iterations"] = diag.n_iter
    save_bundle(args.out, ModelBundle.from_params(params, scalars=scalars, strings=strings,
                                                  arrays=arrays))
    if diag is not None:
        with open(_diag_path(args), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(diag.to_csv())
        _info(f"EM stopped after {diag.n_iter} iterations, final log-likelihood "
              f"{diag.loglik[-1]:.10g}, converged={diag.converged}")
    _info(f"model written to {args.out}")
    if not converged:
        _info("gpmm: warning: EM reached max_iters without meeting rel_tol")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


class _LoadedModel:
    def __init__(self, path):
        bundle = load_bundle(path, expect_tag=GPMM_TAG)
        self.bundle = bundle
        self.mode = bundle.strings.get("mode")
        if self.mode not in MODES:
            raise ModelFormatError(f"{path}: unknown model mode {self.mode!r}")
        self.params = bundle.params()
        self.tau = int(bundle.scalars.get("tau", 1))
        self.labels_x = _unpack_labels(bundle.strings.get("labels_x", ""))
        self.labels_y = _unpack_labels(bundle.strings.get("labels_y", ""))
        a = bundle.arrays
        self.norm_x = Normalizer(a["norm_x_mean"], a["norm_x_std"])
        self.norm_y = Normalizer(a["norm_y_mean"], a["norm_y_std"]) if "norm_y_mean" in a else None
        self.slow = None
        if self.mode == "slow":
            p = self.params
            self.slow = slow_model_from(a["whitening"], p.v_mat, p.lambda_x, bundle.scalars["pi2"])

    @property
    def target(self):
        return self.slow if self.mode == "slow" else self.params

    def specs(self, kinds, alpha):
        allowed = DEFAULT_KINDS[self.mode]
        kinds = list(kinds) if kinds else list(allowed)
        bad = [k.value for k in kinds if k not in allowed]
        if bad:
            raise DataError(f"statistics {bad} do not match a {self.mode} model")
        if self.mode == "random":
            return {k: build_spec(k, self.params, alpha) for k in kinds}
        if self.mode == "slow":
            return {k: s for k, s in build_specs_slow(self.slow, alpha).items() if k in kinds}
        specs = {}
        for k in kinds:
            if k is StatisticKind.Q_SEQ:
                specs[k] = build_spec_qseq(self.params, alpha, self.tau)
            elif "tseq_moment" in self.bundle.arrays:
                specs[k] = spec_tseq_from_moment(self.bundle.arrays["tseq_moment"], self.tau, alpha,
                                                 int(self.bundle.scalars.get("burn_in", 20)))
            else:
                _info("gpmm: warning: model carries no T_SEQ calibration; T_SEQ skipped")
        return specs

    def read(self, args):
        """Normalised data in the layout ``monitor`` expects."""
        _need(args, "x")
        if self.mode == "random":
            _need(args, "y")
            lx, x = read_csv(args.x[0])
            ly, y = read_csv(args.y)
            self._check_labels(lx, self.labels_x, args.x[0])
            self._check_labels(ly, self.labels_y, args.y)
            if x.shape[1] != y.shape[1]:
                raise DataError("x and y files have different row counts")
            return (self.norm_x.apply(x), self.norm_y.apply(y))
        labels, seqs = _read_sequences(args.x)
        self._check_labels(labels, self.labels_x, args.x[0])
        return [self.norm_x.apply(s) for s in seqs]

    @staticmethod
    def _check_labels(found, expected, path):
        if expected and len(found) != len(expected):
            raise DataError(f"{path}: {len(found)} variables, model expects {len(expected)}")


def _n_samples(data):
    return data[0].shape[1] if isinstance(data, tuple) else sum(s.shape[1] for s in data)


def cmd_monitor(args):
    _need(args, "model", "out")
    model = _LoadedModel(args.model)
    specs = model.specs(args.statistics, args.alpha)
    data = model.read(args)
    if _n_samples(data) == 0:
        _info("gpmm: warning: data file holds no samples; writing empty results")
    try:
        result = monitor(model.target, specs, data, q_seq_mode=args.q_seq_mode)
    except ValueError as exc:
        if "layout mismatch" in str(exc):
            raise DataError(str(exc)) from exc
        raise
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(result.to_csv())
    with open(f"{args.out}.meta.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(result.metadata())
    rates = result.alarm_rates()
    print("alarm rates: " + " ".join(f"{k.value}={v:.4f}" for k, v in rates.items()))
    return EXIT_OK


def _diagnose_blocks(model, spec, data):
    """Yield (sequence, sample_index, kwargs for diagnose) per data block."""
    if model.mode == "random":
        x, y = data
        yield 0, np.arange(x.shape[1]), {"x": x, "y": y}
        return
    for i, seq in enumerate(data):
        if spec.kind is StatisticKind.Q_SEQ:
            tau = model.tau
            if seq.shape[1] > tau:
                yield i, np.arange(seq.shape[1] - tau), {"x": seq[:, :-tau], "x_lead": seq[:, tau:]}
        elif seq.shape[1] > 1:
            yield i, np.arange(1, seq.shape[1]), {"dx": np.diff(seq, axis=1)}


def _labels_for(model, layout):
    xs, ys = model.labels_x, model.labels_y
    return {
        "yx": ys + xs, "x": xs, "y": ys,
        "x_lead,x": [f"{v}(t+tau)" for v in xs] + [f"{v}(t)" for v in xs],
        "dx": [f"d_{v}" for v in xs],
    }[layout]


def cmd_diagnose(args):
    _need(args, "model", "out")
    model = _LoadedModel(args.model)
    kind = args.statistic or StatisticKind(DEFAULT_DIAGNOSE[model.mode])
    if kind is StatisticKind.T_SEQ:
        raise UsageError("contributions are not defined for T_SEQ")
    spec = model.specs([kind], args.alpha)[kind]
    data = model.read(args)
    labels = _labels_for(model, spec.aux["h_layout"])
    lines, n_out = ["sequence,sample_index,variable,value"], 0
    for seq_id, idx, kw in _diagnose_blocks(model, spec, data):
        if idx.size == 0:
            continue
        rep = diagnose(spec, model.params, method=args.method, theta=args.theta, labels=labels,
                       sample_index=idx, **kw)
        keep = rep.statistic > spec.control_limit if args.alarms_only else np.ones(idx.size, bool)
        n_out += int(keep.sum())
        for j in np.flatnonzero(keep):
            for lab, v in zip(rep.labels, rep.values[:, j]):
                lines.append(f"{seq_id},{int(rep.sample_index[j])},{lab},{v:.17g}")
    if len(lines) == 1:
        _info("gpmm: warning: no samples to diagnose")
    header = (f"# method={args.method.lower()} theta={float(args.theta)!r} statistic={kind.value} "
              f"variables={len(labels)} samples={n_out}")
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n" + "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_simulate(args):
    _need(args, "out")
    fault = None
    if args.fault_variable is not None:
        fault = FaultSpec(args.fault_variable, args.fault_onset, args.fault_magnitude,
                          args.fault_kind, args.fault_span, args.fault_target)
    kw = {"seed": args.seed, "fault": fault}
    if args.n_samples:
        kw["n_samples"] = args.n_samples
    if args.n_sequences:
        kw["n_sequences"] = args.n_sequences
    try:
        scenario = Scenario.default(args.scenario, **kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    data = generate(scenario)
    os.makedirs(args.out, exist_ok=True)
    q, p = scenario.params.q, scenario.params.p
    xl = [f"x{i + 1}" for i in range(q)]
    files = []
    if scenario.kind is ScenarioKind.RANDOM:
        x, y = data
        write_csv(os.path.join(args.out, "x.csv"), xl, x)
        write_csv(os.path.join(args.out, "y.csv"), [f"y{i + 1}" for i in range(p)], y)
        files = ["x.csv", "y.csv"]
    elif scenario.kind is ScenarioKind.SEQ_STATIONARY:
        width = max(3, len(str(len(data) - 1)))
        for i, seq in enumerate(data):
            name = f"seq_{i:0{width}d}.csv"
            write_csv(os.path.join(args.out, name), xl, seq)
            files.append(name)
    else:
        write_csv(os.path.join(args.out, "x.csv"), xl, data)
        files = ["x.csv"]
    manifest = [
        f"scenario = {scenario.kind.value}",
        f"seed = {scenario.seed}",
        f"n_samples = {scenario.n_samples}",
        f"n_sequences = {len(files) if scenario.kind is ScenarioKind.SEQ_STATIONARY else 1}",
    ]
    if fault is not None:
        manifest += [f"fault_{k} = {getattr(fault, k)}"
                     for k in ("variable", "onset", "magnitude", "kind", "span", "target")]
    manifest.append("files = " + ",".join(files))
    with open(os.path.join(args.out, "manifest.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(manifest) + "\n")
    _info(f"wrote {len(files)} file(s) to {args.out}")
    return EXIT_OK


def _emit(text, out):
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    sys.stdout.write(text)


def cmd_mc_far(args):
    report = mc_far(reps=args.reps, seed=args.seed, kinds=args.statistics, alphas=args.alpha,
                    n_random=args.n_samples, n_sequences=args.n_sequences, seq_len=args.seq_len,
                    n_walk=args.n_samples, r=args.r, tau=args.tau, em_config=_em_config(args))
    _emit(report.to_text(), args.out)
    return EXIT_OK


def cmd_verify_equivalence(args):
    report = verify_equivalence(n_samples=args.n_samples, seed=args.seed, r=args.r,
                                break_restriction=args.break_restriction, threshold=args.threshold)
    _emit(report.to_text(), args.out)
    return EXIT_OK if report.passed else EXIT_VERIFY


COMMANDS = {
    "train": cmd_train,
    "monitor": cmd_monitor,
    "diagnose": cmd_diagnose,
    "simulate": cmd_simulate,
    "mc-far": cmd_mc_far,
    "verify-equivalence": cmd_verify_equivalence,
}

NUMERIC_ERRORS = (np.linalg.LinAlgError, IllConditionedError, DegenerateStatisticsError,
                  RootBracketError, FloatingPointError, OutsideSupportError)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        _info(f"gpmm: error: {exc}")
        return EXIT_USAGE
    except DataError as exc:
        _info(f"gpmm: data error: {exc}")
        return EXIT_DATA
    try:
        return COMMANDS[args.subcommand](args)
    except UsageError as exc:
        _info(f"gpmm: error: {exc}")
        return EXIT_USAGE
    except (DataError, ModelFormatError, InsufficientCalibrationError) as exc:
        _info(f"gpmm: data error: {exc}")
        return EXIT_DATA
    except OSError as exc:
        _info(f"gpmm: data error: {exc}")
        return EXIT_DATA
    except NUMERIC_ERRORS as exc:
        _info(f"gpmm: numerical failure: {exc}")
        return EXIT_NUMERIC
    except ValueError as exc:
        _info(f"gpmm: data error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
