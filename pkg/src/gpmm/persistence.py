"""Self-describing text serialisation for fitted models.

Layout (one item per block, blank lines ignored)::

    format gpmm-model-v1
    scalar <name> <value>
    string <name> <value>
    vector <name> <n>
    <one line of n values>
    array <name> <rows> <cols>
    <rows lines of cols values>

Values carry 17 significant digits; matrices are written row-major.
"""

import numpy as np

from .model import ModelParameters

__all__ = [
    "ModelFormatError", "ModelBundle", "save_bundle", "load_bundle", "dumps", "loads",
    "baseline_bundle", "baseline_from_bundle",
]

GPMM_TAG = "gpmm-model-v1"
PARAM_FIELDS = ("u_mat", "v_mat", "w_diag", "lambda_y", "lambda_x", "lambda_eps_diag", "c_y", "c_x")


class ModelFormatError(ValueError):
    pass


class ModelBundle:
    """A format tag plus named scalars, strings and arrays."""

    def __init__(self, tag, scalars=None, strings=None, arrays=None):
        self.tag = tag
        self.scalars = dict(scalars or {})
        self.strings = dict(strings or {})
        self.arrays = {k: np.asarray(v, dtype=float) for k, v in (arrays or {}).items()}

    @classmethod
    def from_params(cls, params, **kw):
        arrays = {name: getattr(params, name) for name in PARAM_FIELDS}
        arrays.update(kw.pop("arrays", {}))
        return cls(GPMM_TAG, arrays=arrays, **kw)

    def params(self):
        missing = [f for f in PARAM_FIELDS if f not in self.arrays]
        if missing:
            raise ModelFormatError(f"model file lacks parameter arrays {missing}")
        fields = {}
        for name in PARAM_FIELDS:
            fields[name] = self.arrays[name]
        return ModelParameters(**fields)


def _fmt(v):
    return f"{float(v):.17g}"


def dumps(bundle):
    lines = [f"format {bundle.tag}"]
    for k, v in bundle.strings.items():
        if any(c.isspace() for c in str(v)):
            raise ValueError(f"string value for {k!r} must not contain whitespace")
        lines.append(f"string {k} {v}")
    for k, v in bundle.scalars.items():
        lines.append(f"scalar {k} {_fmt(v)}")
    for k, a in bundle.arrays.items():
        if a.ndim == 1:
            lines.append(f"vector {k} {a.shape[0]}")
            lines.append(" ".join(_fmt(v) for v in a))
            continue
        if a.ndim != 2:
            raise ValueError(f"array {k!r} must be 1-d or 2-d")
        lines.append(f"array {k} {a.shape[0]} {a.shape[1]}")
        for row in a:
            lines.append(" ".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def loads(text, expect_tag=None):
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("format "):
        raise ModelFormatError("missing format header")
    tag = lines[0].split(None, 1)[1]
    if expect_tag is not None and tag != expect_tag:
        raise ModelFormatError(f"expected format {expect_tag}, found {tag}")
    bundle = ModelBundle(tag)
    i = 1
    try:
        while i < len(lines):
            parts = lines[i].split()
            if parts[0] == "string":
                bundle.strings[parts[1]] = parts[2] if len(parts) > 2 else ""
                i += 1
            elif parts[0] == "scalar":
                bundle.scalars[parts[1]] = float(parts[2])
                i += 1
            elif parts[0] == "vector":
                name, n = parts[1], int(parts[2])
                vals = lines[i + 1].split() if n else []
                if len(vals) != n:
                    raise ModelFormatError(f"vector {name} has {len(vals)} values, expected {n}")
                bundle.arrays[name] = np.array([float(v) for v in vals])
                i += 2 if n else 1
            elif parts[0] == "array":
                name, rows, cols = parts[1], int(parts[2]), int(parts[3])
                body = lines[i + 1:i + 1 + rows]
                if len(body) != rows:
                    raise ModelFormatError(f"array {name} is truncated")
                data = np.array([[float(v) for v in row.split()] for row in body]).reshape(rows, cols)
                bundle.arrays[name] = data
                i += 1 + rows
            else:
                raise ModelFormatError(f"unknown record {parts[0]!r}")
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model file near line {i + 1}: {exc}") from exc
    return bundle


def save_bundle(path, bundle):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(bundle))


def load_bundle(path, expect_tag=None):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read(), expect_tag)


def _baseline_types():
    from .baselines import CcaModel, PcaModel, SfaModel

    return {"pca-model-v1": PcaModel, "cca-model-v1": CcaModel, "sfa-model-v1": SfaModel}


def baseline_bundle(model):
    """Bundle for a PcaModel, CcaModel or SfaModel."""
    from dataclasses import fields

    for tag, cls in _baseline_types().items():
        if isinstance(model, cls):
            scalars, arrays = {}, {}
            for f in fields(cls):
                v = getattr(model, f.name)
                if isinstance(v, (int, np.integer)):
                    scalars[f.name] = int(v)
                else:
                    arrays[f.name] = v
            return ModelBundle(tag, scalars=scalars, arrays=arrays)
    raise TypeError(f"unsupported baseline model {type(model).__name__}")


def baseline_from_bundle(bundle):
    from dataclasses import fields

    cls = _baseline_types().get(bundle.tag)
    if cls is None:
        raise ModelFormatError(f"unknown baseline format {bundle.tag}")
    kw = {}
    for f in fields(cls):
        if f.name in bundle.scalars:
            kw[f.name] = int(bundle.scalars[f.name])
        elif f.name in bundle.arrays:
            kw[f.name] = bundle.arrays[f.name]
        else:
            raise ModelFormatError(f"{bundle.tag} lacks field {f.name}")
    return cls(**kw)
