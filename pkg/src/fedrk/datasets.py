"""Prostate cancer regression data: 8 standardized predictors plus intercept.

The loader accepts the standard whitespace-separated distribution of the
file (header row, optional leading row-index column, optional trailing
train/test column). By default all rows are used; ``use_train_split=True``
keeps only the rows marked ``T`` in the train column.
"""

import os
from dataclasses import dataclass

import numpy as np

from .core import as_matrix, as_vector
from .errors import SchemaError

__all__ = ["PREDICTORS", "TARGET_COLUMN", "FEATURE_NAMES", "ProstateDataset", "load_prostate"]

PREDICTORS = ("lcavol", "lweight", "age", "lbph", "svi", "lcp", "gleason", "pgg45")
TARGET_COLUMN = "lpsa"
FEATURE_NAMES = ("intcpt",) + PREDICTORS

ENV_PATH = "FEDRK_PROSTATE_PATH"
DEFAULT_PATH = os.path.join("data", "prostate.data")

_STANDARDIZE_TOL = 1e-10


@dataclass(frozen=True)
class ProstateDataset:
    """Feature matrix with intercept column of ones and standardized predictors."""

    features: np.ndarray
    target: np.ndarray
    feature_names: tuple = FEATURE_NAMES

    def __post_init__(self):
        F = as_matrix(self.features, name="features")
        y = as_vector(self.target, name="target")
        if F.shape[1] != len(self.feature_names):
            raise SchemaError(
                f"expected {len(self.feature_names)} feature columns, got {F.shape[1]}"
            )
        if F.shape[0] != y.size:
            raise SchemaError("feature rows and target length differ")
        if not np.all(F[:, 0] == 1.0):
            raise SchemaError("intercept column must be exactly all ones")
        for j in range(1, F.shape[1]):
            col = F[:, j]
            if abs(float(col.mean())) > _STANDARDIZE_TOL:
                raise SchemaError(f"column {self.feature_names[j]} is not centered")
            if abs(float(col.std()) - 1.0) > _STANDARDIZE_TOL:
                raise SchemaError(f"column {self.feature_names[j]} is not unit scale")
        object.__setattr__(self, "features", F)
        object.__setattr__(self, "target", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))


def default_prostate_path():
    return os.environ.get(ENV_PATH, DEFAULT_PATH)


def load_prostate(path=None, use_train_split=False):
    """Load, standardize, and intercept-augment the prostate data file."""
    if path is None:
        path = default_prostate_path()
    with open(path) as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty file")
    header = lines[0].split()
    for column in PREDICTORS + (TARGET_COLUMN,):
        if column not in header:
            raise SchemaError(f"{path}: missing column {column!r}")
    if use_train_split and "train" not in header:
        raise SchemaError(f"{path}: missing column 'train'")
    index = {name: i for i, name in enumerate(header)}

    raw, target, train_flags = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split()
        if len(fields) == len(header) + 1:
            fields = fields[1:]  # unnamed leading row-index column
        if len(fields) != len(header):
            raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields")
        try:
            raw.append([float(fields[index[p]]) for p in PREDICTORS])
            target.append(float(fields[index[TARGET_COLUMN]]))
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from None
        train_flags.append(fields[index["train"]] if "train" in index else "T")

    X = np.asarray(raw, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if use_train_split:
        keep = np.array([flag == "T" for flag in train_flags])
        X, y = X[keep], y[keep]
    if X.shape[0] < 2:
        raise SchemaError(f"{path}: need at least 2 data rows")

    mean = X.mean(axis=0)
    std = X.std(axis=0)
    dead = np.flatnonzero(std == 0.0)
    if dead.size:
        raise SchemaError(f"{path}: constant column {PREDICTORS[dead[0]]!r}")
    standardized = (X - mean) / std
    features = np.hstack([np.ones((X.shape[0], 1)), standardized])
    return ProstateDataset(features, y)
