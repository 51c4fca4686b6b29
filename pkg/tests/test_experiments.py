import numpy as np

from gpmm.experiments import mc_far, relative_deviation, verify_equivalence
from gpmm.monitoring import StatisticKind


def test_relative_deviation():
    assert relative_deviation([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert relative_deviation([1.1], [1.0]) == np.float64(1.1 - 1.0) / 1.0


def test_mc_far_single_rep_has_no_std():
    rep = mc_far(reps=1, kinds=["Q_RAN", "SF_RAN"], n_random=2000, n_walk=2000)
    text = rep.to_text()
    assert "±" not in text
    assert rep.std(StatisticKind.Q_RAN, 0.05) is None
    assert text.splitlines()[0].startswith("statistic")


def test_mc_far_is_deterministic_and_worker_independent():
    kw = {"reps": 2, "kinds": ["TS_P", "Q_SEQ"], "n_random": 1000, "n_sequences": 4,
          "seq_len": 100, "seed": 3}
    a = mc_far(workers=1, **kw).to_text()
    b = mc_far(workers=1, **kw).to_text()
    c = mc_far(workers=2, **kw).to_text()
    assert a == b == c
    assert "±" in a


def test_equivalence_and_negative_control():
    ok = verify_equivalence(n_samples=2000)
    assert ok.passed, ok.to_text()
    broken = verify_equivalence(n_samples=2000, break_restriction=True)
    assert not broken.passed
    failing = [name for name, dev in broken.rows if dev >= broken.threshold]
    assert failing == ["posterior s|x,y vs W = I closed form"]
