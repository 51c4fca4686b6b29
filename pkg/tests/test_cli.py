import hashlib

import numpy as np
import pytest

from gpmm.cli import main
from gpmm.data import read_csv
from gpmm.model import benchmark_parameters
from gpmm.persistence import ModelBundle, load_bundle, save_bundle


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _alarm_rates(out):
    line = next(ln for ln in out.splitlines() if ln.startswith("alarm rates:"))
    return {k: float(v) for k, v in (item.split("=") for item in line.split()[2:])}


def _train_random(work, n=10_000, seed=1):
    assert main(["simulate", "--scenario", "random", "--n-samples", str(n), "--seed", str(seed),
                 "--out", "train"]) == 0
    assert main(["train", "--x", "train/x.csv", "--y", "train/y.csv", "--out", "m.txt"]) == 0


def test_simulate_is_deterministic(work):
    main(["simulate", "--scenario", "random", "--n-samples", "1000", "--seed", "1", "--out", "a"])
    main(["simulate", "--scenario", "random", "--n-samples", "1000", "--seed", "1", "--out", "b"])
    assert _digest(work / "a/x.csv") == _digest(work / "b/x.csv")
    assert _digest(work / "a/y.csv") == _digest(work / "b/y.csv")
    assert "scenario = random" in (work / "a/manifest.txt").read_text()


def test_simulate_default_sizes(work):
    assert main(["simulate", "--scenario", "seq_stationary", "--out", "s"]) == 0
    files = sorted((work / "s").glob("seq_*.csv"))
    assert len(files) == 100
    assert read_csv(files[0])[1].shape == (3, 500)
    assert main(["simulate", "--scenario", "random_walk", "--out", "w"]) == 0
    assert read_csv(work / "w/x.csv")[1].shape == (3, 100_000)


def test_train_converges_and_writes_diagnostics(work, capsys):
    _train_random(work)
    bundle = load_bundle(work / "m.txt")
    assert bundle.scalars["converged"] == 1 and bundle.scalars["iterations"] < 500
    diag = (work / "m.txt.diag.csv").read_text().splitlines()
    assert diag[0] == "iteration,loglik,max_param_delta"
    assert len(diag) == bundle.scalars["iterations"] + 2


def test_train_error_codes(work, capsys):
    assert main(["train", "--x", "nope.csv", "--y", "nope.csv", "--out", "m.txt"]) == 2
    assert "nope.csv" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["train", "--x", "a.csv", "--y", "b.csv", "--r", "0", "--out", "m.txt"])
    assert exc.value.code == 1
    assert main(["train", "--x", "a.csv"]) == 1  # --out missing
    main(["simulate", "--n-samples", "300", "--out", "d"])
    assert main(["train", "--x", "d/x.csv", "--y", "d/y.csv", "--max-iters", "2",
                 "--out", "m.txt"]) == 4
    assert (work / "m.txt").exists()
    assert load_bundle(work / "m.txt").scalars["converged"] == 0


def test_monitor_in_control_and_fault(work, capsys):
    _train_random(work)
    main(["simulate", "--n-samples", "10000", "--seed", "2", "--out", "test"])
    capsys.readouterr()
    assert main(["monitor", "--model", "m.txt", "--x", "test/x.csv", "--y", "test/y.csv",
                 "--alpha", "0.05", "--out", "res.csv"]) == 0
    rates = _alarm_rates(capsys.readouterr().out)
    assert set(rates) == {"TS_RAN", "TZ_RAN", "Q_RAN", "TS_P", "TZ_P"}
    for v in rates.values():
        assert abs(v - 0.05) < 0.01
    assert (work / "res.csv.meta.csv").exists()

    main(["simulate", "--n-samples", "2000", "--seed", "3", "--fault-variable", "0",
          "--fault-onset", "1000", "--fault-magnitude", "10", "--out", "fault"])
    main(["monitor", "--model", "m.txt", "--x", "fault/x.csv", "--y", "fault/y.csv",
          "--statistics", "Q_RAN", "--out", "f.csv"])
    _, res = read_csv(work / "f.csv")
    alarms = res[-1]
    assert alarms[1000:].mean() > 0.5 > 5 * alarms[:1000].mean()


def test_monitor_empty_file(work, capsys):
    _train_random(work, n=500)
    (work / "ex.csv").write_text("x1,x2,x3\n")
    (work / "ey.csv").write_text("y1,y2,y3\n")
    assert main(["monitor", "--model", "m.txt", "--x", "ex.csv", "--y", "ey.csv",
                 "--out", "e.csv"]) == 0
    assert "warning" in capsys.readouterr().err
    assert len((work / "e.csv").read_text().splitlines()) == 1


def test_monitor_kind_mismatch(work):
    _train_random(work, n=500)
    assert main(["monitor", "--model", "m.txt", "--x", "train/x.csv", "--y", "train/y.csv",
                 "--statistics", "Q_SEQ", "--out", "r.csv"]) == 2


def _read_long(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# method=") and lines[1] == "sequence,sample_index,variable,value"
    rows = [ln.split(",") for ln in lines[2:]]
    return rows


def test_diagnose_in_control_and_fault(work):
    _train_random(work)
    main(["simulate", "--n-samples", "10000", "--seed", "4", "--out", "ic"])
    assert main(["diagnose", "--model", "m.txt", "--x", "ic/x.csv", "--y", "ic/y.csv",
                 "--method", "rrbc", "--out", "c.csv"]) == 0
    rows = _read_long(work / "c.csv")
    by_var = {}
    for _, _, var, val in rows:
        by_var.setdefault(var, []).append(float(val))
    assert list(by_var) == ["y1", "y2", "y3", "x1", "x2", "x3"]
    for vals in by_var.values():
        assert abs(np.mean(vals) - 1.0) < 0.1

    main(["simulate", "--n-samples", "1000", "--seed", "5", "--fault-variable", "1",
          "--fault-onset", "0", "--fault-magnitude", "20", "--out", "f"])
    main(["diagnose", "--model", "m.txt", "--x", "f/x.csv", "--y", "f/y.csv", "--out", "cf.csv"])
    rows = _read_long(work / "cf.csv")
    vals = np.array([float(r[3]) for r in rows]).reshape(-1, 6)
    assert np.mean(vals.argmax(axis=1) == 4) > 0.9


def test_diagnose_argument_errors(work):
    for extra in (["--theta", "1.5"], ["--method", "bogus"]):
        with pytest.raises(SystemExit) as exc:
            main(["diagnose", "--model", "m.txt", "--x", "a", "--out", "o"] + extra)
        assert exc.value.code == 1


def test_sequential_and_slow_workflows(work, capsys):
    main(["simulate", "--scenario", "seq_stationary", "--n-sequences", "20", "--seed", "1",
          "--out", "tr"])
    main(["simulate", "--scenario", "seq_stationary", "--n-sequences", "20", "--seed", "2",
          "--out", "te"])
    code = main(["train", "--mode", "sequential", "--x", "tr", "--max-iters", "100",
                 "--out", "ms.txt"])
    assert code in (0, 4)
    capsys.readouterr()
    assert main(["monitor", "--model", "ms.txt", "--x", "te", "--out", "rs.csv"]) == 0
    rates = _alarm_rates(capsys.readouterr().out)
    assert set(rates) == {"Q_SEQ", "T_SEQ"}
    assert abs(rates["Q_SEQ"] - 0.05) < 0.015
    assert main(["diagnose", "--model", "ms.txt", "--x", "te/seq_000.csv", "--out", "cs.csv"]) == 0
    assert "x1(t+tau)" in (work / "cs.csv").read_text()

    main(["simulate", "--scenario", "random_walk", "--n-samples", "10000", "--seed", "1",
          "--out", "w1"])
    main(["simulate", "--scenario", "random_walk", "--n-samples", "10000", "--seed", "2",
          "--out", "w2"])
    assert main(["train", "--mode", "slow", "--x", "w1/x.csv", "--out", "mw.txt"]) == 0
    capsys.readouterr()
    assert main(["monitor", "--model", "mw.txt", "--x", "w2/x.csv", "--out", "rw.csv"]) == 0
    rates = _alarm_rates(capsys.readouterr().out)
    for v in rates.values():
        assert abs(v - 0.05) < 0.015


def test_config_file_and_override(work):
    main(["simulate", "--n-samples", "400", "--out", "d"])
    (work / "run.cfg").write_text("# training run\nx = d/x.csv\ny = d/y.csv\nmax-iters = 3\n"
                                  "out = cfg.txt\n")
    assert main(["train", "--config", "run.cfg"]) == 4
    assert load_bundle(work / "cfg.txt").scalars["iterations"] == 3
    assert main(["train", "--config", "run.cfg", "--max-iters", "5"]) == 4
    assert load_bundle(work / "cfg.txt").scalars["iterations"] == 5
    (work / "bad.cfg").write_text("nonsense = 1\n")
    assert main(["train", "--config", "bad.cfg"]) == 1
    (work / "bad2.cfg").write_text("r = zero\n")
    assert main(["train", "--config", "bad2.cfg"]) == 1


def test_numerical_failure_exit_code(work):
    p = benchmark_parameters()
    bundle = ModelBundle.from_params(p.replace(lambda_x=np.zeros((3, 3))),
                                     strings={"mode": "random"},
                                     arrays={"norm_x_mean": np.zeros(3), "norm_x_std": np.ones(3),
                                             "norm_y_mean": np.zeros(3), "norm_y_std": np.ones(3)})
    save_bundle(work / "bad.txt", bundle)
    main(["simulate", "--n-samples", "10", "--out", "d"])
    assert main(["monitor", "--model", "bad.txt", "--x", "d/x.csv", "--y", "d/y.csv",
                 "--out", "o.csv"]) == 3


def test_mc_far_and_verify(work, capsys):
    args = ["mc-far", "--reps", "1", "--n-samples", "2000", "--statistics", "TS_RAN,SS_RAN",
            "--out", "far.txt"]
    assert main(args) == 0
    first = (work / "far.txt").read_bytes()
    assert b"\xc2\xb1" not in first  # no std column for one repetition
    assert main(args) == 0
    assert (work / "far.txt").read_bytes() == first
    assert main(["verify-equivalence", "--n-samples", "2000"]) == 0
    assert "overall: pass" in capsys.readouterr().out
    assert main(["verify-equivalence", "--n-samples", "2000", "--break-restriction", "true"]) == 5
    assert "overall: FAIL" in capsys.readouterr().out


def test_diagnose_alarms_only_header_counts_written_samples(work):
    _train_random(work, n=2000)
    main(["simulate", "--n-samples", "600", "--seed", "6", "--fault-variable", "0",
          "--fault-onset", "300", "--fault-magnitude", "10", "--out", "f"])
    main(["diagnose", "--model", "m.txt", "--x", "f/x.csv", "--y", "f/y.csv",
          "--statistic", "Q_RAN", "--alarms-only", "true", "--out", "a.csv"])
    rows = _read_long(work / "a.csv")
    written = len({r[1] for r in rows})
    assert 0 < written < 600
    assert (work / "a.csv").read_text().splitlines()[0].endswith(f"samples={written}")
