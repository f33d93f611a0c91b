"""Conventional regressions used as robustness checks.

* :func:`estimate_twfe` -- static two-way fixed effects with a
  treated-and-after indicator.
* :func:`trend_test` -- pre-reform differential linear trend between
  eventually-treated and never-treated groups.
* :func:`selection_test` -- linear probability model of adoption on a
  baseline outcome, one row per district.

Treat-after is the person-level treatment flag, so it stays identified next
to a group-by-time fixed effect whenever that effect is keyed on a different
time column (e.g. birth year while treatment follows marriage year).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .data import AdoptionSchedule, ObservationTable, derive_treatment
from .errors import (
    CollinearInteraction,
    DegenerateDesign,
    DegenerateOutcome,
    MissingColumn,
    SingleYear,
)
from .imputation import EstimateReport, _covariate_matrix
from .inference import BootstrapPlan, cluster_bootstrap
from .regression import cluster_covariance, fit_fixed_effects, fit_wls

TREAT_AFTER = "treat_after"


def _interaction_columns(table: ObservationTable, treated: np.ndarray,
                         interactions: Sequence[str]) -> tuple[np.ndarray, list[str]]:
    cols, names = [], []
    for label in interactions:
        values = table.column(label)
        cats: list = []
        for v in values:
            if v not in cats:
                cats.append(v)
        for c in cats[1:]:
            ind = np.array([v == c for v in values], dtype=float)
            cols += [ind, ind * treated]
            names += [f"{label}={c}", f"{TREAT_AFTER} x {label}={c}"]
    if not cols:
        return np.zeros((table.n, 0)), []
    return np.column_stack(cols), names


def _twfe_fit(table: ObservationTable, schedule: AdoptionSchedule, factors, covariates,
              interactions, method):
    view = derive_treatment(table, schedule, warn=False)
    if not view.ever_treated.any() or view.ever_treated.all():
        raise DegenerateDesign("TWFE needs both treated and never-treated groups")
    if not view.treated.any():
        raise DegenerateDesign("no row is treated-and-after")
    d = view.treated.astype(float)
    inter, inter_names = _interaction_columns(table, d, interactions)
    X = np.column_stack([d, inter, _covariate_matrix(table, covariates)])
    names = [TREAT_AFTER] + inter_names + list(covariates)
    codes, sizes = [], []
    for f in factors:
        c, lev = table.factor(f)
        codes.append(c)
        sizes.append(len(lev))
    m = fit_fixed_effects(codes, sizes, X, table.outcome, table.weight,
                          factor_names=list(factors), covariate_names=names, method=method)
    if TREAT_AFTER in m.fit.dropped:
        raise CollinearInteraction(
            f"{TREAT_AFTER} is absorbed by the fixed effects {list(factors)}")
    return m, names, len(inter_names)


def estimate_twfe(table: ObservationTable, schedule: AdoptionSchedule, *,
                  factors: Sequence[str] = ("group", "time"),
                  covariates: Sequence[str] = (),
                  interactions: Sequence[str] = (),
                  plan: BootstrapPlan | None = None,
                  threads: int = 1,
                  method: str = "auto") -> EstimateReport:
    """Coefficient on treated-and-after with the requested fixed effects.

    ``interactions`` names subgroup labels; each non-reference category adds
    a main-effect dummy and its product with treated-and-after.
    """
    factors, covariates, interactions = tuple(factors), tuple(covariates), tuple(interactions)
    m, names, n_inter = _twfe_fit(table, schedule, factors, covariates, interactions, method)
    k = 1 + n_inter
    point = m.beta[:k]

    boot = None
    if plan is not None:
        def stat(t: ObservationTable) -> np.ndarray:
            mb, _, _ = _twfe_fit(t, schedule, factors, covariates, interactions, method)
            return mb.beta[:k]

        boot = cluster_bootstrap(stat, table, plan, point=point, threads=threads,
                                 names=names[:k])
    coefs = {}
    for j, name in enumerate(names):
        entry = {"estimate": float(m.beta[j])}
        if boot is not None and j < k:
            entry["se"] = float(boot.se[j])
        coefs[name] = entry
    view = derive_treatment(table, schedule, warn=False)
    return EstimateReport(
        estimator="twfe",
        att=float(point[0]),
        se=float(boot.se[0]) if boot is not None else None,
        ci95=(float(boot.ci_percentile[0, 0]), float(boot.ci_percentile[1, 0]))
        if boot is not None else None,
        n_treated=int(view.treated.sum()),
        seed=plan.seed if plan is not None else None,
        bootstrap_iterations=plan.iterations if plan is not None else 0,
        discarded_resamples=boot.discarded if boot is not None else 0,
        diagnostics={"factors": list(factors), "covariates": list(covariates),
                     "method": m.method, "dropped": m.fit.dropped, "n_obs": table.n},
        extra={"coefficient": TREAT_AFTER, "coefficients": coefs},
        bootstrap=boot,
    )


def _coef_report(estimator: str, name: str, fit, X, y, w, clusters, idx: int,
                 n_obs: int, coef_names: list[str], se_kind: str, diagnostics: dict,
                 boot=None, plan=None) -> EstimateReport:
    retained = fit.retained
    if not retained[idx]:
        raise CollinearInteraction(f"{name} is collinear with the other regressors")
    if boot is not None:
        se = float(boot.se[0])
    else:
        Xr = X[:, retained]
        V = cluster_covariance(Xr, fit.residuals, w, clusters)
        pos = int(np.cumsum(retained)[idx] - 1)
        se = float(np.sqrt(max(V[pos, pos], 0.0)))
    est = float(fit.coefficients[idx])
    z = est / se if se > 0 else float("nan")
    if clusters is not None:
        G = len(np.unique(clusters))
        p = float(2 * stats.t.sf(abs(z), max(G - 1, 1))) if se > 0 else float("nan")
    else:
        p = float(2 * stats.t.sf(abs(z), max(n_obs - fit.rank, 1))) if se > 0 else float("nan")
    return EstimateReport(
        estimator=estimator,
        att=est,
        se=se,
        ci95=(est - 1.959963984540054 * se, est + 1.959963984540054 * se),
        seed=plan.seed if plan is not None else None,
        bootstrap_iterations=plan.iterations if plan is not None else 0,
        diagnostics={**diagnostics, "n_obs": n_obs, "se_kind": se_kind},
        extra={
            "coefficient": name,
            "coefficients": {nm: float(c) for nm, c in zip(coef_names, fit.coefficients)},
            "t": z,
            "p_value": p,
        },
        bootstrap=boot,
    )


def trend_test(table: ObservationTable, schedule: AdoptionSchedule, *,
               cutoff: int | None = None,
               covariates: Sequence[str] = (),
               se: str = "cluster",
               plan: BootstrapPlan | None = None,
               threads: int = 1) -> EstimateReport:
    """Differential linear pre-trend between treated and control groups.

    Uses rows with ``time < cutoff``; the default cutoff is the earliest
    treatment switch (first adoption year minus anticipation). Regresses the
    outcome on an intercept, Treat, Year, Treat x Year and covariates and
    reports the Treat x Year slope. ``se`` is ``"cluster"`` (CR1 on the
    cluster column), ``"robust"`` (HC1) or ``"bootstrap"`` (needs ``plan``).
    """
    adopt = schedule.adoption_array(table)
    if cutoff is None:
        if np.all(np.isnan(adopt)):
            raise DegenerateDesign("no adopting group to define the pre-reform window")
        cutoff = int(np.nanmin(adopt)) - schedule.anticipation
    pre = table.subset(table.time < cutoff)
    if pre.n == 0 or len(np.unique(pre.time)) < 2:
        raise SingleYear(f"fewer than two distinct periods before {cutoff}")

    def design(t: ObservationTable):
        treat = (~np.isnan(schedule.adoption_array(t))).astype(float)
        if treat.all() or not treat.any():
            raise DegenerateDesign("trend test needs treated and control groups")
        year = t.time.astype(float)
        X = np.column_stack([np.ones(t.n), treat, year, treat * year,
                             _covariate_matrix(t, covariates)])
        return X

    names = ["const", "treat", "year", "treat_x_year", *covariates]
    X = design(pre)
    fit = fit_wls(X, pre.outcome, pre.weight, names)
    boot = None
    if se == "bootstrap":
        if plan is None:
            raise ValueError("bootstrap SE needs a plan")

        def stat(t):
            f = fit_wls(design(t), t.outcome, t.weight, names)
            if not f.retained[3]:
                raise CollinearInteraction("treat_x_year dropped in resample")
            return f.coefficients[3]

        boot = cluster_bootstrap(stat, pre, plan, point=fit.coefficients[3], threads=threads)
    clusters = pre.cluster_codes if se == "cluster" else None
    return _coef_report("trend_test", "treat_x_year", fit, X, pre.outcome, pre.weight,
                        clusters, 3, pre.n, names, se,
                        {"cutoff": cutoff, "covariates": list(covariates)}, boot, plan)


def selection_test(frame: pd.DataFrame, *, adoption: str, baseline: str,
                   controls: Sequence[str] = (), cluster: str | None = None,
                   weight: str | None = None) -> EstimateReport:
    """Linear probability model of adoption on a baseline outcome.

    One row per district. The reported coefficient is the slope on
    ``baseline``; SEs are HC1, or CR1 when ``cluster`` names a column.
    """
    for col in [adoption, baseline, *controls] + ([cluster] if cluster else []) + (
            [weight] if weight else []):
        if col not in frame.columns:
            raise MissingColumn(f"column {col!r} not in district table")
    data = frame.dropna(subset=[adoption, baseline, *controls])
    y = data[adoption].to_numpy(dtype=float)
    status = np.unique(y)
    if not np.all(np.isin(status, [0.0, 1.0])):
        raise DegenerateOutcome(f"adoption column {adoption!r} must be 0/1")
    if len(status) < 2:
        raise DegenerateOutcome("every district has the same adoption status")
    if min((y == 0).sum(), (y == 1).sum()) < 2:
        raise DegenerateOutcome("need at least two districts per adoption status")
    X = np.column_stack([np.ones(len(y)), data[baseline].to_numpy(dtype=float),
                         data[list(controls)].to_numpy(dtype=float).reshape(len(y), -1)])
    names = ["const", baseline, *controls]
    w = data[weight].to_numpy(dtype=float) if weight else np.ones(len(y))
    fit = fit_wls(X, y, w, names)
    clusters = pd.factorize(data[cluster])[0] if cluster else None
    return _coef_report("selection_test", baseline, fit, X, y, w, clusters, 1, len(y), names,
                        "cluster" if cluster else "robust", {"controls": list(controls)})
