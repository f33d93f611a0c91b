"""Weighted least squares with categorical fixed effects.

Two computational paths give the same least-squares fit:

* dummy expansion solved by column-pivoted QR (:func:`fit_wls`), and
* absorption by alternating weighted demeaning (:func:`fit_absorbed`).

Fixed-effect levels are enumerated in first-appearance order. The first
factor keeps every level (it plays the role of the intercept); each later
factor drops its first level. Individual effect values therefore depend on
that normalization, but fitted values on a connected design do not, and the
estimators in this package only consume fitted values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import AllZeroWeights, DegenerateDesign, NonConvergence

PIVOT_TOL = 1e-10
# Relative to the input magnitude. A step-size rule leaves an error of about
# step / (1 - rate), so slowly mixing designs need a margin below 1e-8.
DEMEAN_TOL = 1e-12
MAX_SWEEPS = 10_000
# Demeaned covariates whose norm falls below this fraction of the raw norm
# are treated as absorbed by the fixed effects.
ABSORBED_COLUMN_TOL = 1e-7
DUMMY_COLUMN_LIMIT = 2_000


@dataclass(frozen=True)
class DesignSpec:
    """Fixed-effect factors and covariate columns of a regression.

    Factor names are resolved against an ``ObservationTable``; ``"a:b"``
    denotes the interaction of two columns.
    """

    factors: tuple[str, ...] = ("group", "time")
    covariates: tuple[str, ...] = ()


@dataclass
class FitResult:
    coefficients: np.ndarray
    names: list[str]
    fitted: np.ndarray
    residuals: np.ndarray
    rank: int
    dropped: list[str] = field(default_factory=list)
    retained: np.ndarray | None = None

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])


def _check_weights(n: int, weights) -> np.ndarray:
    if n == 0:
        raise DegenerateDesign("no rows to fit")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    if not np.any(w > 0):
        raise AllZeroWeights("all weights are zero")
    return w


def refactorize(codes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dense codes in first-appearance order plus the original code per level."""
    codes = np.asarray(codes)
    uniq, first, inverse = np.unique(codes, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return rank[inverse].astype(np.int64), uniq[order]


def dummy_design(factors: Sequence[np.ndarray], covariates: np.ndarray | None = None,
                 factor_names: Sequence[str] | None = None,
                 covariate_names: Sequence[str] | None = None) -> tuple[np.ndarray, list[str]]:
    """Expand factors into indicator columns followed by covariates.

    ``factors`` must already be dense first-appearance codes (see
    :func:`refactorize`).
    """
    n = len(factors[0]) if factors else len(covariates)
    factor_names = factor_names or [f"f{k}" for k in range(len(factors))]
    blocks, names = [], []
    for k, codes in enumerate(factors):
        n_lev = int(codes.max()) + 1
        d = np.zeros((n, n_lev))
        d[np.arange(n), codes] = 1.0
        start = 0 if k == 0 else 1
        blocks.append(d[:, start:])
        names += [f"{factor_names[k]}[{j}]" for j in range(start, n_lev)]
    if covariates is not None and covariates.shape[1]:
        blocks.append(covariates)
        names += list(covariate_names or [f"x{j}" for j in range(covariates.shape[1])])
    X = np.hstack(blocks) if blocks else np.zeros((n, 0))
    return X, names


def fit_wls(X: np.ndarray, y: np.ndarray, weights=None, names: Sequence[str] | None = None,
            tol: float = PIVOT_TOL) -> FitResult:
    """Weighted least squares via QR with column pivoting.

    Columns whose pivot falls below ``tol`` times the largest pivot are
    dropped (coefficient reported as 0) and listed in ``dropped``.

    Examples
    --------
    >>> fit = fit_wls(np.array([[1.0], [2.0], [3.0]]), np.array([2.0, 4.0, 6.0]))
    >>> round(fit.coefficients[0], 12)
    2.0
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    w = _check_weights(n, weights)
    names = list(names) if names is not None else [f"x{j}" for j in range(p)]
    if p == 0:
        raise DegenerateDesign("design has no columns")
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    yw = y * sw
    Q, R, piv = scipy.linalg.qr(Xw, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        raise DegenerateDesign("design has no nonzero columns")
    rank = int(np.sum(diag > tol * diag[0]))
    beta = np.zeros(p)
    sol = scipy.linalg.solve_triangular(R[:rank, :rank], Q[:, :rank].T @ yw)
    beta[piv[:rank]] = sol
    retained = np.zeros(p, dtype=bool)
    retained[piv[:rank]] = True
    fitted = X @ beta
    return FitResult(beta, names, fitted, y - fitted, rank,
                     [names[j] for j in range(p) if not retained[j]], retained)


def _weighted_means(codes: np.ndarray, wv: np.ndarray, wsum: np.ndarray) -> np.ndarray:
    n_lev = len(wsum)
    if wv.ndim == 1:
        s = np.bincount(codes, wv, minlength=n_lev)
    else:
        s = np.stack([np.bincount(codes, wv[:, j], minlength=n_lev) for j in range(wv.shape[1])],
                     axis=1)
    out = np.zeros_like(s)
    ok = wsum > 0
    out[ok] = s[ok] / (wsum[ok] if s.ndim == 1 else wsum[ok, None])
    return out


def demean(values: np.ndarray, factors: Sequence[np.ndarray], weights: np.ndarray,
           tol: float = DEMEAN_TOL, max_sweeps: int = MAX_SWEEPS) -> tuple[np.ndarray, int]:
    """Alternating weighted demeaning of ``values`` over every factor.

    Stops once a full sweep subtracts no cell mean larger than ``tol`` (scaled
    by the magnitude of the input). Returns the residualized array and the
    number of sweeps used.
    """
    v = np.array(values, dtype=np.float64, copy=True)
    if not factors:
        return v, 0
    wsums = [np.bincount(c, weights) for c in factors]
    scale = max(1.0, float(np.max(np.abs(v))) if v.size else 1.0)
    for sweep in range(1, max_sweeps + 1):
        biggest = 0.0
        for codes, wsum in zip(factors, wsums):
            wv = v * (weights if v.ndim == 1 else weights[:, None])
            m = _weighted_means(codes, wv, wsum)
            v -= m[codes]
            biggest = max(biggest, float(np.max(np.abs(m))) if m.size else 0.0)
        if biggest < tol * scale or len(factors) == 1:
            return v, sweep
    raise NonConvergence(f"demeaning did not converge in {max_sweeps} sweeps "
                         f"(last max cell mean {biggest:.3g})", tolerance=biggest)


@dataclass
class AbsorbedFit(FitResult):
    fixed_effects: list[np.ndarray] = field(default_factory=list)
    sweeps: int = 0


def _backfit(target: np.ndarray, factors: Sequence[np.ndarray], weights: np.ndarray,
             tol: float, max_sweeps: int) -> list[np.ndarray]:
    """Per-level effects whose row sums reproduce an additive ``target``."""
    wsums = [np.bincount(c, weights) for c in factors]
    fe = [np.zeros(len(ws)) for ws in wsums]
    scale = max(1.0, float(np.max(np.abs(target))))
    total = np.zeros_like(target)
    for _ in range(max_sweeps):
        for k, (codes, wsum) in enumerate(zip(factors, wsums)):
            partial = target - total + fe[k][codes]
            new = _weighted_means(codes, weights * partial, wsum)
            total += new[codes] - fe[k][codes]
            fe[k] = new
        if np.max(np.abs(target - total)) < tol * scale:
            break
    else:
        raise NonConvergence("fixed-effect back-substitution did not converge")
    # first level of every later factor is the reference
    for k in range(1, len(fe)):
        shift = fe[k][0]
        fe[k] = fe[k] - shift
        fe[0] = fe[0] + shift
    return fe


def fit_absorbed(factors: Sequence[np.ndarray], covariates: np.ndarray | None, y: np.ndarray,
                 weights=None, names: Sequence[str] | None = None,
                 tol: float = DEMEAN_TOL, max_sweeps: int = MAX_SWEEPS) -> AbsorbedFit:
    """Fixed-effects regression with the factors absorbed.

    ``factors`` are dense first-appearance codes. Covariate coefficients are
    estimated on the demeaned data; per-level effects are then recovered by
    back-substitution so the model can predict for new rows.
    """
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    w = _check_weights(n, weights)
    factors = [np.asarray(c, dtype=np.int64) for c in factors]
    X = np.zeros((n, 0)) if covariates is None else np.asarray(covariates, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    p = X.shape[1]
    names = list(names) if names is not None else [f"x{j}" for j in range(p)]
    if not factors and p == 0:
        raise DegenerateDesign("no factors and no covariates")

    stacked = np.column_stack([y, X])
    tilde, sweeps = demean(stacked, factors, w, tol, max_sweeps)
    y_t, X_t = tilde[:, 0], tilde[:, 1:]

    beta = np.zeros(p)
    retained = np.zeros(p, dtype=bool)
    if p:
        raw_norm = np.sqrt(w @ X**2)
        dem_norm = np.sqrt(w @ X_t**2)
        keep = dem_norm > ABSORBED_COLUMN_TOL * np.maximum(raw_norm, 1e-300)
        if keep.any():
            cols = np.flatnonzero(keep)
            sub = fit_wls(X_t[:, cols] / dem_norm[cols], y_t, w, tol=PIVOT_TOL)
            beta[cols] = sub.coefficients / dem_norm[cols]
            retained[cols] = sub.retained
            beta[~retained] = 0.0
    elif not factors:
        raise DegenerateDesign("design has no retained columns")
    resid = y_t - X_t @ beta
    xb = X @ beta
    fe = _backfit(y - xb - resid, factors, w, tol, max_sweeps) if factors else []
    fitted = xb + sum((f[c] for f, c in zip(fe, factors)), np.zeros(n))
    rank = int(retained.sum()) + sum(len(f) for f in fe) - max(len(fe) - 1, 0)
    return AbsorbedFit(beta, names, fitted, y - fitted, rank,
                       [names[j] for j in range(p) if not retained[j]], retained,
                       fixed_effects=fe, sweeps=sweeps)


def cluster_covariance(X: np.ndarray, residuals: np.ndarray, weights=None,
                       clusters: np.ndarray | None = None, extra_params: int = 0) -> np.ndarray:
    """CR1 sandwich covariance; ``clusters=None`` gives HC1.

    ``X`` should hold only the retained (full column rank) columns;
    ``extra_params`` counts absorbed parameters for the small-sample factor.
    """
    X = np.asarray(X, dtype=np.float64)
    n, k = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    bread = np.linalg.pinv((X * w[:, None]).T @ X)
    scores = X * (w * residuals)[:, None]
    if clusters is None:
        clusters = np.arange(n)
    codes, _ = refactorize(np.asarray(clusters))
    G = int(codes.max()) + 1
    summed = np.zeros((G, k))
    np.add.at(summed, codes, scores)
    meat = summed.T @ summed
    dof = n - k - extra_params
    factor = (G / max(G - 1, 1)) * ((n - 1) / max(dof, 1))
    V = factor * bread @ meat @ bread
    return (V + V.T) / 2


@dataclass
class FixedEffectsModel:
    """Fitted fixed effects and covariate slopes, able to predict new rows.

    ``effects[k]`` is indexed by the caller's codes for factor ``k`` and is NaN
    for levels absent from the fitting rows.
    """

    factor_names: list[str]
    effects: list[np.ndarray]
    beta: np.ndarray
    covariate_names: list[str]
    fit: FitResult
    method: str
    dropped_effects: list[str] = field(default_factory=list)

    def predict(self, factors: Sequence[np.ndarray], covariates: np.ndarray | None = None
                ) -> tuple[np.ndarray, np.ndarray]:
        """Predictions and an identified mask (every level seen in the fit)."""
        n = len(factors[0]) if factors else len(covariates)
        pred = np.zeros(n)
        for eff, codes in zip(self.effects, factors):
            pred = pred + eff[codes]
        if covariates is not None and len(self.beta):
            pred = pred + np.asarray(covariates) @ self.beta
        ok = np.isfinite(pred)
        return np.where(ok, pred, np.nan), ok


def _collapse(keys: np.ndarray, y: np.ndarray, w: np.ndarray):
    uniq, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    inv = rank[inverse]
    W = np.bincount(inv, w)
    S = np.bincount(inv, w * y)
    ybar = np.divide(S, W, out=np.zeros_like(S), where=W > 0)
    rows = first[order]
    return rows, inv, ybar, W


def fit_fixed_effects(factors: Sequence[np.ndarray], n_levels: Sequence[int],
                      covariates: np.ndarray | None, y: np.ndarray, weights=None, *,
                      factor_names: Sequence[str] | None = None,
                      covariate_names: Sequence[str] | None = None,
                      method: str = "auto") -> FixedEffectsModel:
    """Fit ``y`` on additive fixed effects plus covariates.

    Parameters
    ----------
    factors
        Codes per factor in the caller's level space (``0 .. n_levels[k]-1``).
    n_levels
        Level count per factor in the caller's space, used to size the
        returned effect arrays.
    method
        ``"dummy"`` (QR on indicator columns), ``"absorbed"`` (alternating
        projections) or ``"auto"``, which expands dummies unless that would
        exceed ``DUMMY_COLUMN_LIMIT`` columns.

    Rows with identical design (same levels and covariates) are collapsed to
    weighted cell means before a dummy fit; that leaves the least-squares
    solution unchanged.
    """
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    w = _check_weights(n, weights)
    X = np.zeros((n, 0)) if covariates is None else np.asarray(covariates, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    factor_names = list(factor_names or [f"f{k}" for k in range(len(factors))])
    covariate_names = list(covariate_names or [f"x{j}" for j in range(X.shape[1])])
    dense, originals = [], []
    for codes in factors:
        d, orig = refactorize(codes)
        dense.append(d)
        originals.append(orig)
    n_cols = sum(len(o) for o in originals) + X.shape[1]
    if method == "auto":
        method = "dummy" if n_cols <= DUMMY_COLUMN_LIMIT else "absorbed"

    if method == "dummy":
        keys = np.column_stack(dense + [X]) if (dense or X.shape[1]) else np.zeros((n, 1))
        rows, inv, ybar, W = _collapse(keys, y, w)
        cell_factors = [d[rows] for d in dense]
        # collapsed codes stay first-appearance ordered because rows are sorted by first index
        D, names = dummy_design(cell_factors, X[rows], factor_names, covariate_names)
        keep_cells = W > 0
        fit_c = fit_wls(D[keep_cells], ybar[keep_cells], W[keep_cells], names)
        fitted = (D @ fit_c.coefficients)[inv]
        fit = FitResult(fit_c.coefficients, names, fitted, y - fitted, fit_c.rank,
                        fit_c.dropped, fit_c.retained)
        coefs = fit_c.coefficients
        level_effects, pos = [], 0
        for k, orig in enumerate(originals):
            m = len(orig)
            if k == 0:
                vals = coefs[pos:pos + m]
                pos += m
            else:
                vals = np.concatenate([[0.0], coefs[pos:pos + m - 1]])
                pos += m - 1
            level_effects.append(vals)
        beta = coefs[pos:]
        dropped_fx = [nm for nm in fit_c.dropped if nm not in covariate_names]
    elif method == "absorbed":
        afit = fit_absorbed(dense, X, y, w, covariate_names)
        fit = afit
        level_effects = afit.fixed_effects
        beta = afit.coefficients
        dropped_fx = []
    else:
        raise ValueError(f"unknown method {method!r}")

    effects = []
    for vals, orig, size in zip(level_effects, originals, n_levels):
        full = np.full(int(size), np.nan)
        full[orig] = vals
        effects.append(full)
    return FixedEffectsModel(factor_names, effects, np.asarray(beta, dtype=float),
                             covariate_names, fit, method, dropped_fx)
