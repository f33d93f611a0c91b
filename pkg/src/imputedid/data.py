"""Observation tables, adoption schedules and treatment coding.

A table is an immutable, column-oriented collection of observation records.
Treatment status is never stored on the table itself; it is derived from an
:class:`AdoptionSchedule` so the same data can be recoded (e.g. with an
anticipation window) without copying.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Hashable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    EmptyInput,
    MissingColumn,
    NoControl,
    NonFiniteValue,
    NoTreatedWarning,
    RaggedCovariates,
)

COVARIATE_PREFIX = "x_"
SUBGROUP_PREFIX = "g_"


@dataclass(frozen=True)
class ObservationRecord:
    unit_id: Hashable
    group_id: Hashable
    time: int
    outcome: float
    covariates: Sequence[float] = ()
    subgroups: Mapping[str, Hashable] = field(default_factory=dict)
    weight: float = 1.0
    cluster_id: Hashable | None = None


def _factorize(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    codes, levels = pd.factorize(pd.Series(values, dtype=object), sort=False)
    return codes.astype(np.int64), np.asarray(levels, dtype=object)


@dataclass(frozen=True, eq=False)
class ObservationTable:
    """Column store of observation records.

    Rows keep input order. Dense integer codes for groups, times and clusters
    are assigned in first-appearance order and cached on first access.
    """

    unit: np.ndarray
    group: np.ndarray
    cluster: np.ndarray
    time: np.ndarray
    outcome: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...] = ()
    subgroups: Mapping[str, np.ndarray] = field(default_factory=dict)
    weight: np.ndarray | None = None

    @classmethod
    def from_arrays(
        cls,
        group: Sequence[Hashable],
        time: Sequence[int],
        outcome: Sequence[float],
        *,
        unit: Sequence[Hashable] | None = None,
        cluster: Sequence[Hashable] | None = None,
        covariates: np.ndarray | None = None,
        covariate_names: Sequence[str] | None = None,
        subgroups: Mapping[str, Sequence[Hashable]] | None = None,
        weight: Sequence[float] | None = None,
    ) -> "ObservationTable":
        """Validate and assemble a table from parallel columns."""
        group = np.asarray(group, dtype=object)
        n = len(group)
        if n == 0:
            raise EmptyInput("table has no rows")
        time_raw = np.asarray(time)
        if time_raw.dtype.kind == "f":
            if not np.all(np.isfinite(time_raw)) or np.any(time_raw != np.round(time_raw)):
                raise NonFiniteValue("time must be a finite integer")
        time_arr = time_raw.astype(np.int64)
        y = np.asarray(outcome, dtype=np.float64)
        if not np.all(np.isfinite(y)):
            raise NonFiniteValue("outcome must be finite")
        w = np.ones(n) if weight is None else np.asarray(weight, dtype=np.float64)
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise NonFiniteValue("weight must be finite and nonnegative")
        if covariates is None:
            x = np.zeros((n, 0))
        else:
            x = np.asarray(covariates, dtype=np.float64)
            if x.ndim == 1:
                x = x[:, None]
        if not np.all(np.isfinite(x)):
            raise NonFiniteValue("covariates must be finite")
        if covariate_names is None:
            covariate_names = [f"x{j + 1}" for j in range(x.shape[1])]
        if len(covariate_names) != x.shape[1]:
            raise RaggedCovariates("covariate names do not match covariate columns")
        unit_arr = np.arange(n).astype(object) if unit is None else np.asarray(unit, dtype=object)
        cluster_arr = group.copy() if cluster is None else np.asarray(cluster, dtype=object)
        subs = {k: np.asarray(v, dtype=object) for k, v in (subgroups or {}).items()}
        for name, col in [("unit", unit_arr), ("cluster", cluster_arr), ("time", time_arr),
                          ("outcome", y), ("weight", w), ("covariates", x)] + list(subs.items()):
            if len(col) != n:
                raise RaggedCovariates(f"column {name!r} has {len(col)} rows, expected {n}")
        return cls(unit_arr, group, cluster_arr, time_arr, y, x, tuple(covariate_names), subs, w)

    def __len__(self) -> int:
        return len(self.outcome)

    @property
    def n(self) -> int:
        return len(self.outcome)

    @cached_property
    def _group_factor(self):
        return _factorize(self.group)

    @cached_property
    def _time_factor(self):
        codes, levels = pd.factorize(self.time, sort=False)
        return codes.astype(np.int64), np.asarray(levels)

    @cached_property
    def _cluster_factor(self):
        return _factorize(self.cluster)

    @property
    def group_codes(self) -> np.ndarray:
        return self._group_factor[0]

    @property
    def group_levels(self) -> np.ndarray:
        return self._group_factor[1]

    @property
    def time_codes(self) -> np.ndarray:
        return self._time_factor[0]

    @property
    def time_levels(self) -> np.ndarray:
        return self._time_factor[1]

    @property
    def cluster_codes(self) -> np.ndarray:
        return self._cluster_factor[0]

    @property
    def cluster_levels(self) -> np.ndarray:
        return self._cluster_factor[1]

    def column(self, name: str) -> np.ndarray:
        """Resolve a column by name.

        Accepts ``group``, ``time``, ``cluster``, ``unit``, ``outcome``,
        ``weight``, covariate names and subgroup labels (with or without the
        ``g_`` prefix).
        """
        builtin = {
            "group": self.group,
            "group_id": self.group,
            "time": self.time,
            "cluster": self.cluster,
            "cluster_id": self.cluster,
            "unit": self.unit,
            "unit_id": self.unit,
            "outcome": self.outcome,
            "weight": self.weight,
        }
        if name in builtin:
            return builtin[name]
        if name in self.covariate_names:
            return self.covariates[:, self.covariate_names.index(name)]
        if name in self.subgroups:
            return self.subgroups[name]
        if name.startswith(SUBGROUP_PREFIX) and name[len(SUBGROUP_PREFIX):] in self.subgroups:
            return self.subgroups[name[len(SUBGROUP_PREFIX):]]
        raise MissingColumn(f"unknown column {name!r}")

    def factor(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """Integer codes and levels for a categorical column.

        ``"a:b"`` builds the interaction of two or more columns.
        """
        if name in ("group", "group_id"):
            return self.group_codes, self.group_levels
        if name == "time":
            return self.time_codes, self.time_levels
        if name in ("cluster", "cluster_id"):
            return self.cluster_codes, self.cluster_levels
        parts = name.split(":")
        if len(parts) == 1:
            return _factorize(self.column(name))
        keys = list(zip(*(self.column(p) for p in parts)))
        keyarr = np.empty(len(keys), dtype=object)
        keyarr[:] = keys
        return _factorize(keyarr)

    def take(self, rows: np.ndarray, cluster: np.ndarray | None = None) -> "ObservationTable":
        """Rows in the given order (repeats allowed); optionally relabel clusters."""
        rows = np.asarray(rows)
        return ObservationTable(
            self.unit[rows],
            self.group[rows],
            self.cluster[rows] if cluster is None else np.asarray(cluster, dtype=object),
            self.time[rows],
            self.outcome[rows],
            self.covariates[rows],
            self.covariate_names,
            {k: v[rows] for k, v in self.subgroups.items()},
            self.weight[rows],
        )

    def subset(self, mask: np.ndarray) -> "ObservationTable":
        return self.take(np.flatnonzero(np.asarray(mask, dtype=bool)))

    def with_outcome(self, outcome: np.ndarray) -> "ObservationTable":
        y = np.asarray(outcome, dtype=np.float64)
        if y.shape != self.outcome.shape:
            raise RaggedCovariates("replacement outcome has the wrong length")
        return ObservationTable(self.unit, self.group, self.cluster, self.time, y,
                                self.covariates, self.covariate_names, self.subgroups, self.weight)

    def to_frame(self, schedule: "AdoptionSchedule | None" = None) -> pd.DataFrame:
        """Frame in the CSV ingestion layout."""
        cols: dict[str, Any] = {
            "unit_id": self.unit,
            "group_id": self.group,
            "cluster_id": self.cluster,
            "time": self.time,
        }
        if schedule is not None:
            cols["adoption_year"] = [schedule.adoption_of(g) for g in self.group]
        cols["outcome"] = self.outcome
        cols["weight"] = self.weight
        for j, name in enumerate(self.covariate_names):
            cols[COVARIATE_PREFIX + name] = self.covariates[:, j]
        for name, v in self.subgroups.items():
            cols[SUBGROUP_PREFIX + name] = v
        frame = pd.DataFrame(cols)
        if schedule is not None:
            frame["adoption_year"] = frame["adoption_year"].astype("Int64")
        return frame


def build_table(records: Sequence[ObservationRecord]) -> ObservationTable:
    """Assemble a table from record objects, preserving input order."""
    if len(records) == 0:
        raise EmptyInput("no records")
    arity = {len(r.covariates) for r in records}
    if len(arity) > 1:
        raise RaggedCovariates(f"mixed covariate arity {sorted(arity)}")
    k = arity.pop()
    labels: list[str] = []
    for r in records:
        for key in r.subgroups:
            if key not in labels:
                labels.append(key)
    for r in records:
        if not math.isfinite(float(r.time)):
            raise NonFiniteValue(f"non-finite time in record {r.unit_id!r}")
    return ObservationTable.from_arrays(
        group=[r.group_id for r in records],
        time=[r.time for r in records],
        outcome=[r.outcome for r in records],
        unit=[r.unit_id for r in records],
        cluster=[r.group_id if r.cluster_id is None else r.cluster_id for r in records],
        covariates=np.array([list(r.covariates) for r in records], dtype=float).reshape(len(records), k),
        subgroups={lab: [r.subgroups.get(lab) for r in records] for lab in labels},
        weight=[r.weight for r in records],
    )


NEVER = None


@dataclass(frozen=True)
class AdoptionSchedule:
    """Adoption year per group; groups missing from the map are never treated.

    ``anticipation`` shifts the treatment switch that many periods earlier.
    """

    adoption: Mapping[Hashable, int | None]
    anticipation: int = 0

    def __post_init__(self):
        if self.anticipation < 0:
            raise ValueError("anticipation must be nonnegative")

    def adoption_of(self, group: Hashable) -> int | None:
        e = self.adoption.get(group)
        if e is None or (isinstance(e, float) and math.isnan(e)):
            return None
        return int(e)

    def with_anticipation(self, k: int) -> "AdoptionSchedule":
        return AdoptionSchedule(self.adoption, k)

    def adoption_array(self, table: ObservationTable) -> np.ndarray:
        """Per-row adoption year as float, NaN for never-treated."""
        per_level = np.array(
            [np.nan if self.adoption_of(g) is None else float(self.adoption_of(g))
             for g in table.group_levels]
        )
        return per_level[table.group_codes]


@dataclass(frozen=True)
class TreatmentView:
    """Per-row treatment flag and event-time horizon.

    ``horizon`` is ``time - (E - K)`` for rows of adopting groups and NaN for
    never-treated groups.
    """

    treated: np.ndarray
    horizon: np.ndarray
    adoption: np.ndarray
    anticipation: int = 0

    @property
    def n_treated(self) -> int:
        return int(self.treated.sum())

    @property
    def ever_treated(self) -> np.ndarray:
        return ~np.isnan(self.adoption)

    def take(self, rows: np.ndarray) -> "TreatmentView":
        return TreatmentView(self.treated[rows], self.horizon[rows], self.adoption[rows],
                             self.anticipation)

    def subset(self, mask: np.ndarray) -> "TreatmentView":
        return self.take(np.flatnonzero(mask))


def derive_treatment(table: ObservationTable, schedule: AdoptionSchedule,
                     *, warn: bool = True) -> TreatmentView:
    """Code treatment as ``time >= E - K`` for groups with an adoption year."""
    adoption = schedule.adoption_array(table)
    switch = adoption - schedule.anticipation
    horizon = table.time - switch
    treated = np.zeros(table.n, dtype=bool)
    ever = ~np.isnan(adoption)
    treated[ever] = horizon[ever] >= 0
    if treated.all():
        raise NoControl("every record is treated; no untreated comparison exists")
    if warn and not treated.any():
        warnings.warn("no treated records", NoTreatedWarning, stacklevel=2)
    return TreatmentView(treated, horizon, adoption, schedule.anticipation)


@dataclass
class ValidationReport:
    n_treated: int
    n_untreated: int
    untreated_by_group: dict
    untreated_by_time: dict
    connected: bool
    components: list[dict]
    empty_horizons: list[int]
    warnings: list[str]

    def to_dict(self) -> dict:
        return {
            "n_treated": self.n_treated,
            "n_untreated": self.n_untreated,
            "untreated_by_group": {str(k): v for k, v in self.untreated_by_group.items()},
            "untreated_by_time": {str(k): v for k, v in self.untreated_by_time.items()},
            "connected": self.connected,
            "components": self.components,
            "empty_horizons": self.empty_horizons,
            "warnings": self.warnings,
        }


def untreated_components(group_codes: np.ndarray, time_codes: np.ndarray,
                         n_groups: int, n_times: int) -> tuple[int, np.ndarray]:
    """Connected components of the bipartite group-time incidence graph.

    Returns the component count and a label per node (groups first, then
    times). Nodes without any incident cell get their own component.
    """
    n_nodes = n_groups + n_times
    graph = coo_matrix(
        (np.ones(len(group_codes)), (group_codes, n_groups + time_codes)),
        shape=(n_nodes, n_nodes),
    )
    return connected_components(graph, directed=False)


def validate(table: ObservationTable, view: TreatmentView) -> ValidationReport:
    """Summarize identification-relevant coverage of the untreated sample."""
    untreated = ~view.treated
    notes: list[str] = []
    if not view.treated.any():
        notes.append("NoTreated: no treated records")
    g_counts = np.bincount(table.group_codes[untreated], minlength=len(table.group_levels))
    t_counts = np.bincount(table.time_codes[untreated], minlength=len(table.time_levels))
    by_group = {lev: int(c) for lev, c in zip(table.group_levels, g_counts)}
    by_time = {int(lev): int(c) for lev, c in zip(table.time_levels, t_counts)}

    g_used = np.flatnonzero(g_counts > 0)
    t_used = np.flatnonzero(t_counts > 0)
    components: list[dict] = []
    connected = True
    if untreated.any():
        _, labels = untreated_components(table.group_codes[untreated], table.time_codes[untreated],
                                         len(table.group_levels), len(table.time_levels))
        n_g = len(table.group_levels)
        used_labels = np.unique(np.concatenate([labels[g_used], labels[n_g + t_used]]))
        for lab in used_labels:
            groups = [table.group_levels[g] for g in g_used if labels[g] == lab]
            times = [int(table.time_levels[t]) for t in t_used if labels[n_g + t] == lab]
            components.append({"groups": [str(g) for g in groups], "times": times})
        connected = len(components) <= 1

    empty: list[int] = []
    if view.treated.any():
        h = view.horizon[view.treated].astype(np.int64)
        present = set(h.tolist())
        empty = [k for k in range(0, int(h.max()) + 1) if k not in present]
    return ValidationReport(
        n_treated=int(view.treated.sum()),
        n_untreated=int(untreated.sum()),
        untreated_by_group=by_group,
        untreated_by_time=by_time,
        connected=connected,
        components=components,
        empty_horizons=empty,
        warnings=notes,
    )


def read_csv(
    path,
    *,
    outcome: str = "outcome",
    group: str = "group_id",
    time: str = "time",
    adoption: str = "adoption_year",
    unit: str | None = None,
    cluster: str | None = None,
    weight: str | None = None,
    covariates: Sequence[str] | None = None,
    subgroups: Sequence[str] | None = None,
    anticipation: int = 0,
) -> tuple[ObservationTable, AdoptionSchedule]:
    """Load a table and its adoption schedule from CSV.

    Optional columns fall back to the standard names (``unit_id``,
    ``cluster_id``, ``weight``); covariates and subgroups default to every
    ``x_``/``g_`` prefixed column.
    """
    frame = pd.read_csv(path, encoding="utf-8")
    return from_frame(frame, outcome=outcome, group=group, time=time, adoption=adoption,
                      unit=unit, cluster=cluster, weight=weight, covariates=covariates,
                      subgroups=subgroups, anticipation=anticipation)


def _strip(name: str, prefix: str) -> str:
    return name[len(prefix):] if name.startswith(prefix) else name


def from_frame(frame: pd.DataFrame, *, outcome="outcome", group="group_id", time="time",
               adoption="adoption_year", unit=None, cluster=None, weight=None,
               covariates=None, subgroups=None, anticipation=0):
    cols = set(frame.columns)
    for name in (outcome, group, time, adoption):
        if name not in cols:
            raise MissingColumn(f"column {name!r} not in input header")
    if unit is None and "unit_id" in cols:
        unit = "unit_id"
    if cluster is None and "cluster_id" in cols:
        cluster = "cluster_id"
    if weight is None and "weight" in cols:
        weight = "weight"
    if covariates is None:
        covariates = [c for c in frame.columns if c.startswith(COVARIATE_PREFIX)]
    if subgroups is None:
        subgroups = [c for c in frame.columns if c.startswith(SUBGROUP_PREFIX)]
    for name in [unit, cluster, weight, *covariates, *subgroups]:
        if name is not None and name not in cols:
            raise MissingColumn(f"column {name!r} not in input header")
    if frame[outcome].isna().any():
        raise NonFiniteValue(f"missing values in outcome column {outcome!r}")

    adopt: dict = {}
    for g, sub in frame.groupby(group, sort=False)[adoption]:
        vals = sub.dropna().unique()
        if len(vals) > 1:
            raise NonFiniteValue(f"group {g!r} has conflicting adoption years {sorted(vals)}")
        if len(vals) == 1:
            adopt[g] = int(vals[0])
    table = ObservationTable.from_arrays(
        group=frame[group].to_numpy(dtype=object),
        time=frame[time].to_numpy(),
        outcome=frame[outcome].to_numpy(dtype=float),
        unit=None if unit is None else frame[unit].to_numpy(dtype=object),
        cluster=None if cluster is None else frame[cluster].to_numpy(dtype=object),
        covariates=frame[list(covariates)].to_numpy(dtype=float) if covariates else None,
        covariate_names=[_strip(c, COVARIATE_PREFIX) for c in covariates],
        subgroups={_strip(c, SUBGROUP_PREFIX): frame[c].to_numpy(dtype=object) for c in subgroups},
        weight=None if weight is None else frame[weight].to_numpy(dtype=float),
    )
    return table, AdoptionSchedule(adopt, anticipation)


def write_csv(table: ObservationTable, schedule: AdoptionSchedule, path) -> None:
    table.to_frame(schedule).to_csv(path, index=False)
