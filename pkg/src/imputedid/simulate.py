"""Synthetic staggered-adoption panels with known treatment effects.

Outcome law per row ``i`` in group ``g`` and period ``t``::

    y = alpha_g + beta_t + slope * (t - t0) * ever_treated_g
        + lead(t - E) * pre_i + tau_i * treated_i + x_i' b + noise

where ``lead`` plants a shift at chosen negative relative times ``p = t - E``
(``lead_effects``), ``treated_i`` switches on ``anticipation`` periods before adoption and
``tau_i = tau(h) * cohort_multiplier(E) * subgroup_multiplier``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any

import numpy as np

from .data import AdoptionSchedule, ObservationTable
from .errors import InvalidConfig, UnknownPreset
from .inference import replicate_rng


@dataclass(frozen=True)
class DgpConfig:
    n_groups: int = 20
    first_period: int = 1
    n_periods: int = 15
    units_per_cell: int = 10
    adoption: dict | None = None
    adoption_window: tuple[int, int] = (4, 12)
    never_treated_share: float = 0.3
    effect_base: float = 0.1
    effect_slope: float = 0.1
    effect_by_horizon: tuple[float, ...] | None = None
    cohort_gradient: float = 0.0
    group_effect_sd: float = 1.0
    time_effect_sd: float = 0.5
    time_trend: float = 0.0
    pretrend_slope: float = 0.0
    lead_effects: dict | None = None
    anticipation: int = 0
    noise_sd: float = 1.0
    subgroup_label: str | None = None
    subgroup_categories: tuple[str, ...] = ("A", "B")
    subgroup_probs: tuple[float, ...] | None = None
    subgroup_multipliers: tuple[float, ...] = (1.0, 1.0)
    n_covariates: int = 0
    covariate_coef: float = 0.5
    cluster: str = "unit"
    allow_no_control: bool = False
    seed: int = 0

    @property
    def last_period(self) -> int:
        return self.first_period + self.n_periods - 1

    def effect(self, h: np.ndarray) -> np.ndarray:
        """True effect at horizon ``h`` before cohort/subgroup multipliers."""
        h = np.asarray(h)
        if self.effect_by_horizon is not None:
            sched = np.asarray(self.effect_by_horizon, dtype=float)
            return sched[np.clip(h, 0, len(sched) - 1)]
        return self.effect_base + self.effect_slope * h

    def validate(self) -> None:
        problems = []
        if self.n_groups < 2:
            problems.append("n_groups must be at least 2")
        if self.n_periods < 2:
            problems.append("n_periods must be at least 2")
        if self.units_per_cell < 1:
            problems.append("units_per_cell must be at least 1")
        if self.noise_sd < 0 or self.group_effect_sd < 0 or self.time_effect_sd < 0:
            problems.append("scales must be nonnegative")
        if not 0 <= self.never_treated_share <= 1:
            problems.append("never_treated_share must lie in [0, 1]")
        if self.anticipation < 0:
            problems.append("anticipation must be nonnegative")
        lo, hi = self.adoption_window
        if lo > hi:
            problems.append("adoption_window is empty")
        if len(self.subgroup_multipliers) != len(self.subgroup_categories):
            problems.append("subgroup_multipliers must match subgroup_categories")
        if self.subgroup_probs is not None and (
                len(self.subgroup_probs) != len(self.subgroup_categories)
                or abs(sum(self.subgroup_probs) - 1) > 1e-9):
            problems.append("subgroup_probs must match categories and sum to 1")
        if self.lead_effects and any(int(p) >= 0 for p in self.lead_effects):
            problems.append("lead_effects keys must be negative relative times")
        if self.cluster not in ("group", "cell", "unit"):
            problems.append("cluster must be 'group', 'cell' or 'unit'")
        if self.adoption is None and not self.allow_no_control and (
                round(self.never_treated_share * self.n_groups) < 1):
            problems.append("never_treated_share leaves no control group "
                            "(set allow_no_control to request that regime)")
        if problems:
            raise InvalidConfig("; ".join(problems))

    def to_text(self) -> str:
        """One ``key = <json value>`` line per field."""
        return "".join(f"{k} = {json.dumps(v)}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "DgpConfig":
        return cls.from_mapping(parse_key_values(text))

    @classmethod
    def from_mapping(cls, values: dict[str, Any], base: "DgpConfig | None" = None) -> "DgpConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys {sorted(unknown)}")
        conv = {}
        for k, v in values.items():
            if isinstance(v, list):
                v = tuple(v)
            if k == "adoption" and v is not None:
                v = {str(g): (None if e is None else int(e)) for g, e in dict(v).items()}
            if k == "lead_effects" and v is not None:
                v = {int(p): float(e) for p, e in dict(v).items()}
            conv[k] = v
        return replace(base or cls(), **conv)


def parse_key_values(text: str) -> dict[str, Any]:
    """Parse ``key = value`` lines; values are JSON where possible, else strings."""
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        sep = "=" if "=" in line else (":" if ":" in line else None)
        if sep is None:
            raise InvalidConfig(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split(sep, 1))
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


@dataclass
class GroundTruth:
    alpha: dict
    beta: dict
    effect: np.ndarray
    treated: np.ndarray
    horizon: np.ndarray
    att: float
    curve: dict[int, float]
    subgroup_att: dict = field(default_factory=dict)
    under_identified: bool = False

    def to_dict(self) -> dict:
        return {
            "att": self.att,
            "curve": {str(h): v for h, v in self.curve.items()},
            "subgroup_att": {str(k): v for k, v in self.subgroup_att.items()},
            "n_treated": int(self.treated.sum()),
            "under_identified": self.under_identified,
        }


def group_name(i: int) -> str:
    return f"g{i:03d}"


def _adoption_map(cfg: DgpConfig, rng: np.random.Generator) -> dict[str, int | None]:
    names = [group_name(i) for i in range(cfg.n_groups)]
    if cfg.adoption is not None:
        return {g: cfg.adoption.get(g) for g in names}
    n_never = int(round(cfg.never_treated_share * cfg.n_groups))
    lo, hi = cfg.adoption_window
    years = rng.integers(lo, hi + 1, cfg.n_groups)
    never = rng.permutation(cfg.n_groups)[:n_never]
    out: dict[str, int | None] = {}
    for i, g in enumerate(names):
        out[g] = None if i in set(never.tolist()) else int(years[i])
    return out


def generate(config: DgpConfig) -> tuple[ObservationTable, AdoptionSchedule, GroundTruth]:
    """Draw a repeated cross-section panel; deterministic given ``config.seed``."""
    cfg = config
    cfg.validate()
    rng = replicate_rng(cfg.seed, 0)
    adoption = _adoption_map(cfg, rng)
    G, T, U = cfg.n_groups, cfg.n_periods, cfg.units_per_cell
    periods = np.arange(cfg.first_period, cfg.first_period + T)
    alpha = rng.normal(0.0, cfg.group_effect_sd, G)
    beta = rng.normal(0.0, cfg.time_effect_sd, T) + cfg.time_trend * (periods - periods[0])

    g_idx = np.repeat(np.arange(G), T * U)
    t_idx = np.tile(np.repeat(np.arange(T), U), G)
    n = g_idx.size
    time = periods[t_idx]
    adopt_g = np.array([np.nan if adoption[group_name(i)] is None else adoption[group_name(i)]
                        for i in range(G)], dtype=float)
    adopt = adopt_g[g_idx]
    ever = ~np.isnan(adopt)
    switch = adopt - cfg.anticipation
    h = np.where(ever, time - switch, np.nan)
    treated = ever & (h >= 0)
    hz = np.where(treated, h, 0).astype(np.int64)

    cohort_mult = np.where(ever, 1.0 + cfg.cohort_gradient * (adopt - cfg.adoption_window[0]), 1.0)
    subgroups = {}
    sub_mult = np.ones(n)
    if cfg.subgroup_label:
        cats = np.array(cfg.subgroup_categories, dtype=object)
        pick = rng.choice(len(cats), size=n, p=cfg.subgroup_probs)
        subgroups[cfg.subgroup_label] = cats[pick]
        sub_mult = np.asarray(cfg.subgroup_multipliers, dtype=float)[pick]
    tau = np.where(treated, cfg.effect(hz) * cohort_mult * sub_mult, 0.0)

    planted = np.zeros(n)
    if cfg.lead_effects:
        rel = np.where(ever, time - adopt, 0)
        for p, shift in cfg.lead_effects.items():
            planted += np.where(ever & ~treated & (rel == int(p)), float(shift), 0.0)

    X = rng.normal(0.0, 1.0, (n, cfg.n_covariates))
    y = (alpha[g_idx] + beta[t_idx]
         + cfg.pretrend_slope * (time - periods[0]) * ever
         + planted
         + tau
         + X @ np.full(cfg.n_covariates, cfg.covariate_coef)
         + rng.normal(0.0, 1.0, n) * cfg.noise_sd)

    groups = np.array([group_name(i) for i in range(G)], dtype=object)[g_idx]
    unit = np.array([f"u{i:07d}" for i in range(n)], dtype=object)
    if cfg.cluster == "group":
        cluster = groups
    elif cfg.cluster == "cell":
        cluster = np.array([f"{g}-{t}" for g, t in zip(groups, time)], dtype=object)
    else:
        cluster = unit
    table = ObservationTable.from_arrays(
        group=groups, time=time, outcome=y, unit=unit, cluster=cluster,
        covariates=X, covariate_names=[f"c{j + 1}" for j in range(cfg.n_covariates)],
        subgroups=subgroups,
    )
    schedule = AdoptionSchedule({g: e for g, e in adoption.items() if e is not None})

    if treated.any():
        att = float(tau[treated].mean())
        curve = {int(k): float(tau[treated & (hz == k)].mean()) for k in np.unique(hz[treated])}
    else:
        att, curve = float("nan"), {}
    sub_att = {}
    if cfg.subgroup_label:
        lab = subgroups[cfg.subgroup_label]
        for c in cfg.subgroup_categories:
            sel = treated & (lab == c)
            if sel.any():
                sub_att[c] = float(tau[sel].mean())
    truth = GroundTruth(
        alpha={group_name(i): float(a) for i, a in enumerate(alpha)},
        beta={int(p): float(b) for p, b in zip(periods, beta)},
        effect=tau,
        treated=treated,
        horizon=np.where(ever, h, np.nan),
        att=att,
        curve=curve,
        subgroup_att=sub_att,
        under_identified=not (~ever).any(),
    )
    return table, schedule, truth


PRESETS = ("parallel", "trend_violation", "cohort_heterogeneous", "anticipation",
           "subgroup_effect")


def preset(name: str, **overrides) -> DgpConfig:
    """Named scenario.

    ``parallel``
        20 groups x 15 periods, 10 independent draws per cell (each its own
        cluster), 30% never treated, adoption uniform on periods 4..12,
        ``tau(h) = 0.1 (h + 1)``, noise SD 1.
    ``trend_violation``
        ``parallel`` plus a differential linear trend of 0.05 noise SDs per
        period in eventually-treated groups, with 30 draws per cell so the
        joint lead test detects it with power near 0.9
        (see ``scripts/pretrend_power.py``).
    ``cohort_heterogeneous``
        Later adopters get larger, faster-growing effects
        (``tau(h) = 0.1 + 0.2 h`` scaled by ``1 + 0.5 (E - 4)``) and only 10%
        of groups are never treated, so static TWFE leans on already-treated
        groups as controls.
    ``anticipation``
        ``parallel`` with effects starting two periods before adoption.
    ``subgroup_effect``
        ``parallel`` with a label ``religion`` in {A, B}; only A is affected.
    """
    base = DgpConfig()
    if name == "parallel":
        cfg = base
    elif name == "trend_violation":
        cfg = replace(base, pretrend_slope=0.05 * base.noise_sd, units_per_cell=30)
    elif name == "cohort_heterogeneous":
        cfg = replace(base, effect_base=0.1, effect_slope=0.2, cohort_gradient=0.5,
                      never_treated_share=0.1)
    elif name == "anticipation":
        cfg = replace(base, anticipation=2)
    elif name == "subgroup_effect":
        cfg = replace(base, subgroup_label="religion", subgroup_categories=("A", "B"),
                      subgroup_multipliers=(1.0, 0.0))
    else:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {list(PRESETS)}")
    return replace(cfg, **overrides) if overrides else cfg
