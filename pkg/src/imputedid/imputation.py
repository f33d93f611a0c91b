"""Imputation estimator for staggered adoption designs.

1. Fit additive group and time effects (plus covariates) on untreated rows.
2. Predict the untreated outcome of every treated row; the gap is its effect.
3. Average the gaps: overall, by event-time horizon, or within subgroups.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Mapping, Sequence

import numpy as np

from .data import (
    AdoptionSchedule,
    ObservationTable,
    TreatmentView,
    derive_treatment,
    untreated_components,
)
from .errors import (
    DisconnectedDesign,
    EmptyEffectSet,
    NoControl,
    SchemaMismatch,
    SingleCategory,
    UnknownLabel,
)
from .inference import BootstrapPlan, BootstrapResult, cluster_bootstrap, contrast_test
from .regression import FixedEffectsModel, fit_fixed_effects

DEFAULT_HORIZON = 15


@dataclass
class CounterfactualModel:
    """Untreated-outcome model fitted on rows with ``treated == False`` only."""

    model: FixedEffectsModel
    factors: tuple[str, ...]
    covariates: tuple[str, ...]
    untreated: np.ndarray
    n_rows: int

    @property
    def fixed_effects(self) -> dict[str, np.ndarray]:
        return dict(zip(self.factors, self.model.effects))

    @property
    def coefficients(self) -> dict[str, float]:
        return dict(zip(self.covariates, self.model.beta.tolist()))

    def predict(self, table: ObservationTable, rows: np.ndarray | None = None):
        if table.n != self.n_rows:
            raise SchemaMismatch("table does not match the one the model was fitted on")
        rows = np.arange(table.n) if rows is None else rows
        codes = [table.factor(f)[0][rows] for f in self.factors]
        X = _covariate_matrix(table, self.covariates)[rows]
        return self.model.predict(codes, X)


def _covariate_matrix(table: ObservationTable, names: Sequence[str]) -> np.ndarray:
    if not names:
        return np.zeros((table.n, 0))
    try:
        return np.column_stack([np.asarray(table.column(c), dtype=float) for c in names])
    except (TypeError, ValueError) as exc:
        raise SchemaMismatch(f"covariates {list(names)} are not numeric columns") from exc


def check_connected(table: ObservationTable, mask: np.ndarray,
                    factors: Sequence[str] = ("group", "time")) -> None:
    """Raise if the first two factors split the masked rows into components."""
    if len(factors) < 2:
        return
    a, levels_a = table.factor(factors[0])
    b, levels_b = table.factor(factors[1])
    n_comp, labels = untreated_components(a[mask], b[mask], len(levels_a), len(levels_b))
    used = np.concatenate([np.unique(a[mask]), len(levels_a) + np.unique(b[mask])])
    found = np.unique(labels[used])
    if len(found) > 1:
        raise DisconnectedDesign(
            f"untreated {factors[0]}x{factors[1]} design splits into {len(found)} components")


def fit_counterfactual(table: ObservationTable, view: TreatmentView,
                       factors: Sequence[str] = ("group", "time"),
                       covariates: Sequence[str] = (), *, method: str = "auto"
                       ) -> CounterfactualModel:
    """Fit the fixed-effects outcome model on untreated observations."""
    untreated = ~view.treated
    if not untreated.any():
        raise NoControl("no untreated observations")
    check_connected(table, untreated, factors)
    rows = np.flatnonzero(untreated)
    codes, sizes = [], []
    for f in factors:
        c, levels = table.factor(f)
        codes.append(c[rows])
        sizes.append(len(levels))
    X = _covariate_matrix(table, covariates)[rows]
    model = fit_fixed_effects(codes, sizes, X, table.outcome[rows], table.weight[rows],
                              factor_names=list(factors), covariate_names=list(covariates),
                              method=method)
    return CounterfactualModel(model, tuple(factors), tuple(covariates), untreated, table.n)


@dataclass
class EffectSet:
    """Per-treated-row effects; unidentified rows carry NaN."""

    rows: np.ndarray
    effect: np.ndarray
    imputed: np.ndarray
    horizon: np.ndarray
    weight: np.ndarray
    group: np.ndarray
    subgroups: dict[str, np.ndarray]
    identified: np.ndarray

    @property
    def n_treated(self) -> int:
        return len(self.rows)

    @property
    def n_unidentified(self) -> int:
        return int((~self.identified).sum())

    @property
    def unidentified_rows(self) -> np.ndarray:
        return self.rows[~self.identified]

    @classmethod
    def from_values(cls, effect, horizon=None, weight=None, group=None,
                    subgroups: Mapping[str, Sequence[Hashable]] | None = None) -> "EffectSet":
        """Build an effect set directly from effect values (all identified)."""
        effect = np.asarray(effect, dtype=float)
        n = len(effect)
        return cls(
            rows=np.arange(n),
            effect=effect,
            imputed=np.zeros(n),
            horizon=np.zeros(n, dtype=np.int64) if horizon is None else np.asarray(horizon, dtype=np.int64),
            weight=np.ones(n) if weight is None else np.asarray(weight, dtype=float),
            group=np.zeros(n, dtype=np.int64) if group is None else np.asarray(group),
            subgroups={k: np.asarray(v, dtype=object) for k, v in (subgroups or {}).items()},
            identified=np.isfinite(effect),
        )


def impute_effects(model: CounterfactualModel, table: ObservationTable,
                   view: TreatmentView) -> EffectSet:
    """Observed minus imputed untreated outcome for every treated row."""
    if len(view.treated) != table.n:
        raise SchemaMismatch("treatment view and table have different lengths")
    rows = np.flatnonzero(view.treated)
    pred, ok = model.predict(table, rows)
    effect = np.where(ok, table.outcome[rows] - pred, np.nan)
    return EffectSet(
        rows=rows,
        effect=effect,
        imputed=pred,
        horizon=view.horizon[rows].astype(np.int64),
        weight=table.weight[rows],
        group=table.group_codes[rows],
        subgroups={k: v[rows] for k, v in table.subgroups.items()},
        identified=ok,
    )


def aggregation_weights(effects: EffectSet, weights=None, how: str = "observation") -> np.ndarray:
    """Row weights for aggregation.

    ``"observation"`` uses the observation weights. ``"group"`` rescales them
    so every (group, horizon) cell carries equal total weight.
    """
    w = effects.weight if weights is None else np.asarray(weights, dtype=float)
    w = np.where(effects.identified, w, 0.0)
    if how == "observation":
        return w
    if how != "group":
        raise ValueError(f"unknown aggregation {how!r}")
    keys = np.column_stack([effects.group.astype(np.int64), effects.horizon])
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    totals = np.bincount(inv, w)
    return np.divide(w, totals[inv], out=np.zeros_like(w), where=totals[inv] > 0)


def _wmean(x: np.ndarray, w: np.ndarray) -> float:
    total = w.sum()
    if total <= 0:
        raise EmptyEffectSet("no identified effects with positive weight")
    return float(np.dot(np.where(w > 0, x, 0.0), w) / total)


def att_overall(effects: EffectSet, weights=None, how: str = "observation") -> float:
    """Weighted mean effect over identified treated rows."""
    if not effects.identified.any():
        raise EmptyEffectSet("no identified treated rows")
    return _wmean(effects.effect, aggregation_weights(effects, weights, how))


@dataclass
class EventStudyCurve:
    horizons: np.ndarray
    att: np.ndarray
    n: np.ndarray
    weight: np.ndarray
    se: np.ndarray
    truncated: int = 0

    def value(self, h: int) -> float:
        idx = np.flatnonzero(self.horizons == h)
        if not idx.size:
            raise KeyError(h)
        return float(self.att[idx[0]])

    def as_dict(self) -> dict[int, float]:
        return {int(h): float(a) for h, a in zip(self.horizons, self.att)}


def att_by_horizon(effects: EffectSet, H: int = DEFAULT_HORIZON, weights=None,
                   how: str = "observation") -> EventStudyCurve:
    """Mean effect per horizon ``0..H``; horizons without support are omitted."""
    if H < 0:
        raise ValueError("H must be nonnegative")
    w = aggregation_weights(effects, weights, how)
    live = effects.identified & (w > 0)
    trunc = live & (effects.horizon > H)
    keep = live & (effects.horizon <= H) & (effects.horizon >= 0)
    hs, att, ns, ws = [], [], [], []
    for h in np.unique(effects.horizon[keep]):
        sel = keep & (effects.horizon == h)
        hs.append(int(h))
        att.append(_wmean(effects.effect[sel], w[sel]))
        ns.append(int(sel.sum()))
        ws.append(float(w[sel].sum()))
    return EventStudyCurve(np.array(hs, dtype=np.int64), np.array(att), np.array(ns, dtype=np.int64),
                           np.array(ws), np.full(len(hs), np.nan), int(trunc.sum()))


@dataclass
class SubgroupEstimate:
    label: str
    categories: list
    att: dict
    n: dict
    weight: dict
    pair: tuple | None = None

    @property
    def contrast(self) -> float:
        if self.pair is None:
            raise SingleCategory("contrast needs two categories")
        a, b = self.pair
        return self.att[a] - self.att[b]


def att_by_subgroup(effects: EffectSet, label: str, contrast: tuple | None = None,
                    weights=None, how: str = "observation",
                    require_contrast: bool = True) -> SubgroupEstimate:
    """Per-category mean effect and a pairwise contrast ``a - b``.

    Without an explicit pair the first two categories in first-appearance
    order are contrasted.
    """
    if label not in effects.subgroups:
        raise UnknownLabel(f"no subgroup label {label!r}")
    w = aggregation_weights(effects, weights, how)
    labels = effects.subgroups[label]
    live = effects.identified & (w > 0)
    cats: list = []
    for c in labels[live]:
        if c not in cats:
            cats.append(c)
    if not cats:
        raise EmptyEffectSet("no identified effects")
    att, ns, ws = {}, {}, {}
    for c in cats:
        sel = live & (labels == c)
        att[c] = _wmean(effects.effect[sel], w[sel])
        ns[c] = int(sel.sum())
        ws[c] = float(w[sel].sum())
    pair = None
    if contrast is not None:
        pair = tuple(_match_category(cats, c) for c in contrast)
    elif len(cats) >= 2:
        pair = (cats[0], cats[1])
    elif require_contrast:
        raise SingleCategory(f"label {label!r} has a single category {cats[0]!r}")
    return SubgroupEstimate(label, cats, att, ns, ws, pair)


def _match_category(cats: list, value):
    for c in cats:
        if c == value or str(c) == str(value):
            return c
    raise UnknownLabel(f"category {value!r} not present (have {cats})")


@dataclass
class EstimateReport:
    """Serializable estimate with bootstrap inference and diagnostics."""

    estimator: str
    att: float
    se: float | None = None
    ci95: tuple[float, float] | None = None
    n_treated: int = 0
    n_unidentified: int = 0
    horizons: list[dict] = field(default_factory=list)
    subgroups: dict = field(default_factory=dict)
    seed: int | None = None
    bootstrap_iterations: int = 0
    discarded_resamples: int = 0
    diagnostics: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    bootstrap: BootstrapResult | None = field(default=None, repr=False)
    effects: EffectSet | None = field(default=None, repr=False)

    def to_dict(self) -> dict[str, Any]:
        out = {
            "estimator": self.estimator,
            "att": self.att,
            "se": self.se,
            "ci95": list(self.ci95) if self.ci95 is not None else None,
            "n_treated": self.n_treated,
            "n_unidentified": self.n_unidentified,
            "horizons": self.horizons,
            "subgroups": self.subgroups,
            "seed": self.seed,
            "bootstrap_iterations": self.bootstrap_iterations,
            "discarded_resamples": self.discarded_resamples,
            "diagnostics": self.diagnostics,
        }
        out.update(self.extra)
        return _clean(out)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, NaN to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return None if not np.isfinite(v) else v
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class _Pieces:
    effects: EffectSet
    att: float
    curve: EventStudyCurve
    sub: SubgroupEstimate | None


def _run(table: ObservationTable, schedule: AdoptionSchedule, factors, covariates, H,
         subgroup, contrast, how, method) -> _Pieces:
    view = derive_treatment(table, schedule, warn=False)
    if not view.treated.any():
        raise EmptyEffectSet("no treated rows")
    model = fit_counterfactual(table, view, factors, covariates, method=method)
    effects = impute_effects(model, table, view)
    att = att_overall(effects, how=how)
    curve = att_by_horizon(effects, H, how=how)
    sub = att_by_subgroup(effects, subgroup, contrast, how=how) if subgroup else None
    return _Pieces(effects, att, curve, sub)


def _vector(p: _Pieces, H: int, cats: list | None) -> np.ndarray:
    curve = np.full(H + 1, np.nan)
    for h, a in zip(p.curve.horizons, p.curve.att):
        curve[h] = a
    parts = [np.array([p.att]), curve]
    if cats is not None:
        parts.append(np.array([p.sub.att.get(c, np.nan) for c in cats]))
    return np.concatenate(parts)


def event_study_residualizer(schedule: AdoptionSchedule, factors=("group", "time"),
                             covariates: Sequence[str] = ()) -> Callable:
    """Fitted values and residuals from group + time effects plus one dummy per
    treated horizon, fitted on all rows. Feeds the wild bootstrap."""

    def residualize(table: ObservationTable):
        view = derive_treatment(table, schedule, warn=False)
        codes, sizes = [], []
        for f in factors:
            c, lev = table.factor(f)
            codes.append(c)
            sizes.append(len(lev))
        hz = np.where(view.treated, view.horizon, -1).astype(np.int64)
        levels = np.unique(hz[hz >= 0])
        D = (hz[:, None] == levels[None, :]).astype(float)
        X = np.column_stack([D, _covariate_matrix(table, covariates)])
        m = fit_fixed_effects(codes, sizes, X, table.outcome, table.weight,
                              factor_names=list(factors))
        return m.fit.fitted, m.fit.residuals

    return residualize


def estimate(table: ObservationTable, schedule: AdoptionSchedule, *,
             factors: Sequence[str] = ("group", "time"),
             covariates: Sequence[str] = (),
             horizon: int = DEFAULT_HORIZON,
             subgroup: str | None = None,
             contrast: tuple | None = None,
             plan: BootstrapPlan | None = None,
             aggregation: str = "observation",
             threads: int = 1,
             method: str = "auto",
             estimator_name: str = "imputation") -> EstimateReport:
    """Full imputation pipeline with optional cluster bootstrap.

    Parameters
    ----------
    table, schedule
        Data and adoption years. Anticipation is taken from the schedule.
    factors
        Fixed-effect factors of the untreated model; the first two must be
        the group-like and time-like factors used for the connectivity check.
    horizon
        Largest horizon reported in the event-study curve.
    subgroup, contrast
        Optional label for heterogeneous effects and the pair to contrast.
    plan
        Bootstrap plan; ``None`` skips inference.
    aggregation
        ``"observation"`` (default) or ``"group"``-level averaging.
    """
    factors, covariates = tuple(factors), tuple(covariates)
    view = derive_treatment(table, schedule)
    if not view.treated.any():
        raise EmptyEffectSet("no treated rows")
    pieces = _run(table, schedule, factors, covariates, horizon, subgroup, contrast,
                  aggregation, method)
    cats = pieces.sub.categories if pieces.sub else None

    boot = None
    if plan is not None:
        def stat(t: ObservationTable) -> np.ndarray:
            return _vector(_run(t, schedule, factors, covariates, horizon, subgroup, None,
                                aggregation, method), horizon, cats)

        residualize = (event_study_residualizer(schedule, factors, covariates)
                       if plan.flavor == "wild" else None)
        boot = cluster_bootstrap(stat, table, plan, point=_vector(pieces, horizon, cats),
                                 residualize=residualize, threads=threads)

    se = ci = None
    if boot is not None:
        _, se, ci = boot.scalar(0)
    curve = pieces.curve
    horizons = []
    for h, a, n in zip(curve.horizons, curve.att, curve.n):
        s = float(boot.se[1 + h]) if boot is not None else None
        curve.se[curve.horizons == h] = np.nan if s is None else s
        horizons.append({"h": int(h), "att": float(a), "se": s, "n": int(n)})

    subgroups: dict = {}
    if pieces.sub is not None:
        sub = pieces.sub
        base = 2 + horizon
        cat_out = {}
        for j, c in enumerate(cats):
            cat_out[str(c)] = {
                "att": sub.att[c],
                "se": float(boot.se[base + j]) if boot is not None else None,
                "n": sub.n[c],
            }
        subgroups = {"label": subgroup, "categories": cat_out}
        if sub.pair is not None:
            a, b = sub.pair
            entry = {"a": str(a), "b": str(b), "diff": sub.contrast}
            if boot is not None:
                ia, ib = base + cats.index(a), base + cats.index(b)
                ct = contrast_test(boot.replicates[:, ia], boot.replicates[:, ib],
                                   sub.att[a], sub.att[b])
                entry.update(ct.to_dict())
            subgroups["contrast"] = entry

    effects = pieces.effects
    return EstimateReport(
        estimator=estimator_name,
        att=pieces.att,
        se=se,
        ci95=ci,
        n_treated=effects.n_treated,
        n_unidentified=effects.n_unidentified,
        horizons=horizons,
        subgroups=subgroups,
        seed=plan.seed if plan is not None else None,
        bootstrap_iterations=plan.iterations if plan is not None else 0,
        discarded_resamples=boot.discarded if boot is not None else 0,
        diagnostics={
            "n_truncated": curve.truncated,
            "aggregation": aggregation,
            "anticipation": schedule.anticipation,
            "factors": list(factors),
            "covariates": list(covariates),
            "bootstrap_flavor": plan.flavor if plan is not None else None,
        },
        bootstrap=boot,
        effects=effects,
    )


def keep_mask(table: ObservationTable, keep) -> np.ndarray:
    """Resolve a subsample predicate.

    ``keep`` may be a boolean array, a callable ``table -> mask`` or a mapping
    ``{label: value}`` (all conditions must hold).
    """
    if callable(keep):
        mask = np.asarray(keep(table), dtype=bool)
    elif isinstance(keep, Mapping):
        mask = np.ones(table.n, dtype=bool)
        for label, value in keep.items():
            col = table.column(label)
            mask &= np.array([v == value or str(v) == str(value) for v in col])
    else:
        mask = np.asarray(keep, dtype=bool)
    if mask.shape != (table.n,):
        raise SchemaMismatch("subsample mask has the wrong length")
    return mask


def placebo(table: ObservationTable, schedule: AdoptionSchedule, keep, **kwargs) -> EstimateReport:
    """Rerun :func:`estimate` on the subsample selected by ``keep``.

    Typical use is a population the policy cannot reach, where the estimate
    should be indistinguishable from zero.
    """
    mask = keep_mask(table, keep)
    if not mask.any():
        raise EmptyEffectSet("placebo subsample is empty")
    kwargs.setdefault("estimator_name", "placebo")
    return estimate(table.subset(mask), schedule, **kwargs)
