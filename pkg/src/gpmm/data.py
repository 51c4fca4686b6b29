"""CSV ingestion/emission and per-variable normalisation.

CSV files hold one sample per row and one variable per column, with a header
row of variable names.  In memory every matrix is variables x samples.
"""

import csv
from dataclasses import dataclass

import numpy as np

__all__ = ["DataError", "Normalizer", "read_csv", "write_csv"]


class DataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Normalizer:
    """Affine map a -> (a - mean) / std, fitted on training data only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, data):
        data = np.asarray(data, dtype=float)
        std = data.std(axis=1)
        if np.any(std <= 0):
            raise DataError("a training variable has zero variance")
        return cls(data.mean(axis=1), std)

    @classmethod
    def identity(cls, n):
        return cls(np.zeros(n), np.ones(n))

    def apply(self, data):
        data = np.asarray(data, dtype=float)
        if data.shape[0] != self.mean.shape[0]:
            raise DataError(f"data has {data.shape[0]} variables, normalisation expects "
                            f"{self.mean.shape[0]}")
        return (data - self.mean[:, None]) / self.std[:, None]

    def invert(self, data):
        data = np.asarray(data, dtype=float)
        return data * self.std[:, None] + self.mean[:, None]


def read_csv(path):
    """Return (labels, matrix) with the matrix shaped (variables, samples)."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    except FileNotFoundError as exc:
        raise DataError(f"no such file: {path}") from exc
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty file (no header)")
    labels = [c.strip() for c in rows[0]]
    body = rows[1:]
    values = np.empty((len(body), len(labels)))
    for i, row in enumerate(body):
        if len(row) != len(labels):
            raise DataError(f"{path}: row {i + 2} has {len(row)} fields, expected {len(labels)}")
        try:
            values[i] = [float(c) for c in row]
        except ValueError as exc:
            raise DataError(f"{path}: row {i + 2}: {exc}") from exc
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: non-finite values")
    return labels, values.T.copy()


def write_csv(path, labels, data):
    data = np.asarray(data, dtype=float)
    if data.shape[0] != len(labels):
        raise ValueError("label count does not match the number of variables")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(labels)
        for col in data.T:
            w.writerow([f"{v:.17g}" for v in col])
