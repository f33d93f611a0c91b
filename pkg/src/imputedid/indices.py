"""Composite indices and z-score helpers.

Standard deviations use the population convention (divide by n) throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import MissingColumn, MissingReferenceKey, TooFewRows, ZeroVariance, ZeroVarianceColumn

TIE_TOL = 1e-12


def standardize(column) -> np.ndarray:
    """``(x - mean) / sd`` with the population SD.

    >>> standardize([0.0, 2.0]).tolist()
    [-1.0, 1.0]
    """
    x = np.asarray(column, dtype=np.float64)
    if x.size < 2:
        raise TooFewRows("standardize needs at least two values")
    sd = x.std()
    if not sd > 0:
        raise ZeroVariance("column has zero variance")
    return (x - x.mean()) / sd


@dataclass
class CompositeIndex:
    columns: list[str]
    loadings: np.ndarray
    scores: np.ndarray
    complete: np.ndarray
    eigenvalue: float
    explained_share: float

    @property
    def n_incomplete(self) -> int:
        return int((~self.complete).sum())

    def to_dict(self) -> dict:
        return {
            "columns": self.columns,
            "loadings": self.loadings.tolist(),
            "eigenvalue": self.eigenvalue,
            "explained_share": self.explained_share,
            "n_complete": int(self.complete.sum()),
            "n_incomplete": self.n_incomplete,
        }


def _orient(v: np.ndarray) -> np.ndarray:
    s = v.sum()
    if abs(s) > TIE_TOL:
        return v if s > 0 else -v
    nz = np.flatnonzero(np.abs(v) > TIE_TOL)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def pc1_index(columns, names: Sequence[str] | None = None) -> CompositeIndex:
    """First principal component of the standardized inputs.

    ``columns`` is a 2-D array (rows x variables), a mapping of name to
    values, or a DataFrame. Rows with any missing value get a NaN score. The
    loading vector is the leading eigenvector of the correlation matrix,
    oriented so its entries sum to a positive number (ties: first nonzero
    loading positive). Scores are renormalized to mean 0 and SD 1.
    """
    if isinstance(columns, pd.DataFrame):
        names = list(names or columns.columns)
        data = columns[names].to_numpy(dtype=float)
    elif isinstance(columns, Mapping):
        names = list(names or columns.keys())
        data = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
    else:
        data = np.asarray(columns, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        names = list(names or [f"c{j}" for j in range(data.shape[1])])
    if data.shape[1] == 0:
        raise MissingColumn("no input columns")
    complete = np.all(np.isfinite(data), axis=1)
    Z = data[complete]
    if Z.shape[0] < 2:
        raise TooFewRows("need at least two complete rows")
    sd = Z.std(axis=0)
    bad = [n for n, s in zip(names, sd) if not s > 0]
    if bad:
        raise ZeroVarianceColumn(f"zero-variance input columns: {bad}")
    Z = (Z - Z.mean(axis=0)) / sd
    corr = (Z.T @ Z) / Z.shape[0]
    vals, vecs = np.linalg.eigh((corr + corr.T) / 2)
    top = int(np.argmax(vals))
    v = _orient(vecs[:, top] / np.linalg.norm(vecs[:, top]))
    raw = Z @ v
    raw = raw - raw.mean()
    scores_c = raw / raw.std()
    scores = np.full(data.shape[0], np.nan)
    scores[complete] = scores_c
    k = data.shape[1]
    return CompositeIndex(names, v, scores, complete, float(vals[top]), float(vals[top] / k))


@dataclass
class ReferenceTable:
    """Reference mean and SD keyed by ``(age bucket, sex)``."""

    rows: Mapping[tuple[Hashable, Hashable], tuple[float, float]]

    def __post_init__(self):
        for key, (_, sd) in self.rows.items():
            if not sd > 0:
                raise ZeroVariance(f"reference SD for {key} must be positive")

    @classmethod
    def from_csv(cls, path) -> "ReferenceTable":
        frame = pd.read_csv(path)
        missing = {"age_months", "sex", "mean", "sd"} - set(frame.columns)
        if missing:
            raise MissingColumn(f"reference table lacks columns {sorted(missing)}")
        return cls({(int(r.age_months), str(r.sex)): (float(r.mean), float(r.sd))
                    for r in frame.itertuples()})

    def lookup(self, age, sex) -> tuple[float, float]:
        for key in ((age, sex), (int(age), str(sex))):
            if key in self.rows:
                return self.rows[key]
        raise MissingReferenceKey(f"no reference row for age={age!r}, sex={sex!r}")


def zscore_against(values, ages, sexes, ref: ReferenceTable) -> np.ndarray:
    """Z-score each value against the reference row for its (age, sex)."""
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    for i, (x, a, s) in enumerate(zip(values, ages, sexes)):
        mean, sd = ref.lookup(a, s)
        out[i] = (x - mean) / sd
    return out
