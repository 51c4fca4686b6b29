import numpy as np
import pytest

from gpmm.baselines import cca_fit, pca_fit, sfa_fit
from gpmm.data import DataError, Normalizer, read_csv, write_csv
from gpmm.datagen import Scenario, gen_random
from gpmm.persistence import (
    ModelBundle,
    ModelFormatError,
    baseline_bundle,
    baseline_from_bundle,
    dumps,
    load_bundle,
    loads,
    save_bundle,
)


def test_params_round_trip_is_exact(params, tmp_path):
    b = ModelBundle.from_params(params, scalars={"tau": 2}, strings={"mode": "sequential"},
                                arrays={"extra": np.array([np.pi, -1e-300]), "empty": np.zeros(0)})
    path = tmp_path / "m.txt"
    save_bundle(path, b)
    back = load_bundle(path, expect_tag="gpmm-model-v1")
    p2 = back.params()
    for f in ("u_mat", "v_mat", "w_diag", "lambda_y", "lambda_x", "lambda_eps_diag", "c_y", "c_x"):
        np.testing.assert_array_equal(getattr(p2, f), getattr(params, f))
    np.testing.assert_array_equal(back.arrays["extra"], [np.pi, -1e-300])
    assert back.arrays["empty"].shape == (0,)
    assert back.scalars["tau"] == 2 and back.strings["mode"] == "sequential"


def test_format_errors(params):
    text = dumps(ModelBundle.from_params(params))
    with pytest.raises(ModelFormatError, match="expected format"):
        loads(text, expect_tag="pca-model-v1")
    with pytest.raises(ModelFormatError, match="missing format"):
        loads("scalar a 1\n")
    with pytest.raises(ModelFormatError):
        loads(text.replace("array u_mat 3 2", "array u_mat 4 2"))
    with pytest.raises(ModelFormatError, match="unknown record"):
        loads("format x\nmatrix a 1\n")
    with pytest.raises(ModelFormatError, match="lacks"):
        ModelBundle("gpmm-model-v1").params()
    with pytest.raises(ValueError):
        dumps(ModelBundle("t", strings={"k": "a b"}))


def test_baseline_round_trip(params):
    x, y = gen_random(Scenario("random", params, 300, 1, 0))
    for model in (pca_fit(x, 2), cca_fit(x, y, 2), sfa_fit(np.cumsum(x, axis=1), 1)):
        back = baseline_from_bundle(loads(dumps(baseline_bundle(model))))
        assert type(back) is type(model)
        for name, value in vars(model).items():
            np.testing.assert_array_equal(getattr(back, name), value)
    with pytest.raises(TypeError):
        baseline_bundle(object())


def test_csv_round_trip(tmp_path, rng):
    data = rng.standard_normal((2, 5))
    path = tmp_path / "d.csv"
    write_csv(path, ["a", "b c"], data)
    labels, back = read_csv(path)
    assert labels == ["a", "b c"]
    np.testing.assert_array_equal(back, data)


def test_csv_errors(tmp_path):
    with pytest.raises(DataError, match="no such file"):
        read_csv(tmp_path / "missing.csv")
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n3\n")
    with pytest.raises(DataError, match="row 3"):
        read_csv(p)
    p.write_text("a,b\n1,x\n")
    with pytest.raises(DataError):
        read_csv(p)
    p.write_text("a,b\n1,nan\n")
    with pytest.raises(DataError, match="non-finite"):
        read_csv(p)
    p.write_text("a,b\n")
    labels, data = read_csv(p)
    assert labels == ["a", "b"] and data.shape == (2, 0)


def test_normalizer(rng):
    data = rng.standard_normal((3, 100)) * 5 + 2
    n = Normalizer.fit(data)
    z = n.apply(data)
    np.testing.assert_allclose(z.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(z.std(axis=1), 1)
    np.testing.assert_allclose(n.invert(z), data)
    with pytest.raises(DataError):
        Normalizer.fit(np.ones((2, 5)))
    with pytest.raises(DataError):
        n.apply(data[:2])
