"""Pre-trend diagnostics estimated on untreated observations only.

Rows of adopting groups that sit 1..P periods before the treatment switch get
lead indicators; every other untreated row (never-treated groups and rows more
than P periods ahead of adoption) anchors the fixed effects. Under parallel
trends the lead coefficients are jointly zero.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .data import AdoptionSchedule, ObservationTable, TreatmentView, derive_treatment
from .errors import (
    InsufficientLeadSupport,
    InsufficientLeadSupportWarning,
    NoControl,
    SingularCovarianceWarning,
)
from .imputation import _clean, _covariate_matrix, check_connected
from .inference import BootstrapPlan, BootstrapResult, cluster_bootstrap
from .regression import (
    DUMMY_COLUMN_LIMIT,
    cluster_covariance,
    dummy_design,
    fit_fixed_effects,
    fit_wls,
    refactorize,
)

DEFAULT_LEADS = 8
EIGEN_TOL = 1e-10


@dataclass
class JointTest:
    chi2: float
    df: int
    p_value: float
    singular: bool = False


def joint_test(profile_or_gamma, cov: np.ndarray | None = None) -> JointTest:
    """Wald test that every coefficient is zero, ``g' V^-1 g ~ chi2(df)``.

    Accepts a :class:`LeadProfile` or a coefficient vector plus covariance. A
    rank-deficient covariance falls back to the pseudo-inverse with ``df``
    equal to its rank and sets ``singular``.

    >>> round(joint_test(np.array([2.0]), np.array([[1.0]])).p_value, 4)
    0.0455
    """
    if cov is None:
        gamma, cov = profile_or_gamma.gamma, profile_or_gamma.cov
    else:
        gamma = profile_or_gamma
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    V = np.atleast_2d(np.asarray(cov, dtype=float))
    k = gamma.size
    if k == 0:
        return JointTest(0.0, 0, 1.0)
    V = (V + V.T) / 2
    vals, vecs = np.linalg.eigh(V)
    top = float(vals.max()) if vals.size else 0.0
    keep = vals > EIGEN_TOL * max(top, 0.0) if top > 0 else np.zeros(k, dtype=bool)
    rank = int(keep.sum())
    singular = rank < k
    if singular:
        warnings.warn(f"lead covariance has rank {rank} < {k}; using pseudo-inverse",
                      SingularCovarianceWarning, stacklevel=2)
    if rank == 0:
        return JointTest(0.0, 0, 1.0, singular)
    proj = vecs[:, keep].T @ gamma
    chi2 = float(np.sum(proj**2 / vals[keep]))
    return JointTest(chi2, rank, float(stats.chi2.sf(chi2, rank)), singular)


@dataclass
class LeadProfile:
    leads: np.ndarray
    gamma: np.ndarray
    cov: np.ndarray
    support: np.ndarray
    absent: list[int]
    test: JointTest
    covariance: str
    n_obs: int
    bootstrap: BootstrapResult | None = field(default=None, repr=False)
    normalized: list[int] = field(default_factory=list)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0, None))

    @property
    def t(self) -> np.ndarray:
        se = self.se
        return np.divide(self.gamma, se, out=np.full_like(self.gamma, np.nan), where=se > 0)

    @property
    def chi2(self) -> float:
        return self.test.chi2

    @property
    def df(self) -> int:
        return self.test.df

    @property
    def p_value(self) -> float:
        return self.test.p_value

    def coefficient(self, p: int) -> float:
        idx = np.flatnonzero(self.leads == p)
        if not idx.size:
            raise KeyError(p)
        return float(self.gamma[idx[0]])

    def to_dict(self) -> dict:
        return _clean({
            "estimator": "pretrend",
            "leads": [{"p": int(p), "gamma": float(g), "se": float(s), "n": int(n)}
                      for p, g, s, n in zip(self.leads, self.gamma, self.se, self.support)],
            "absent_leads": self.absent,
            "normalized_leads": self.normalized,
            "chi2": self.test.chi2,
            "df": self.test.df,
            "p_value": self.test.p_value,
            "singular_covariance": self.test.singular,
            "covariance": self.covariance,
            "n_obs": self.n_obs,
        })


def _lead_design(table: ObservationTable, view: TreatmentView, P: int):
    untreated = ~view.treated
    rel = np.where(view.ever_treated & untreated, view.horizon, 0.0)
    leads = np.arange(-P, 0)
    D = (rel[:, None] == leads[None, :]).astype(float)
    return untreated, leads, D


def _redundant_leads(codes, lead_cols: np.ndarray) -> np.ndarray:
    """Leads lying in the span of the fixed effects and the nearer leads.

    Happens when some treated groups have no rows before the lead window, so
    their lead dummies add up to the group dummy. Leads are added nearest
    first (-1, -2, ...), so the most distant redundant lead is normalized to 0.
    """
    k = lead_cols.shape[1]
    keys = np.column_stack(list(codes) + [lead_cols])
    cells = np.unique(keys, axis=0)
    dense = [refactorize(cells[:, j].astype(np.int64))[0] for j in range(len(codes))]
    n_fx = sum(int(d.max()) + 1 for d in dense) - max(len(dense) - 1, 0)
    if n_fx + k > DUMMY_COLUMN_LIMIT:
        return np.zeros(k, dtype=bool)
    F, _ = dummy_design(dense)
    L = cells[:, len(codes):]
    redundant = np.zeros(k, dtype=bool)
    current = F
    rank = np.linalg.matrix_rank(current)
    for j in range(k - 1, -1, -1):
        trial = np.column_stack([current, L[:, j]])
        r = np.linalg.matrix_rank(trial)
        if r > rank:
            current, rank = trial, r
        else:
            redundant[j] = True
    return redundant


def _fit_leads_point(table, view, P, factors, covariates):
    untreated, leads, D = _lead_design(table, view, P)
    rows = np.flatnonzero(untreated)
    if rows.size == 0:
        raise NoControl("no untreated observations")
    check_connected(table, untreated, factors)
    support = D[rows].sum(axis=0).astype(np.int64)
    live = support > 0
    if not live.any():
        raise InsufficientLeadSupport(f"no untreated rows within {P} periods of adoption")
    codes, sizes = [], []
    for f in factors:
        c, lev = table.factor(f)
        codes.append(c[rows])
        sizes.append(len(lev))
    redundant = np.zeros(len(leads), dtype=bool)
    redundant[live] = _redundant_leads(codes, D[rows][:, live])
    live &= ~redundant
    normalized = leads[redundant].tolist()
    X = np.column_stack([D[rows][:, live], _covariate_matrix(table, covariates)[rows]])
    names = [f"lead{p}" for p in leads[live]] + list(covariates)
    m = fit_fixed_effects(codes, sizes, X, table.outcome[rows], table.weight[rows],
                          factor_names=list(factors), covariate_names=names)
    dropped = set(m.fit.dropped)
    retained = np.array([f"lead{p}" not in dropped for p in leads[live]])
    return rows, codes, X, m, leads, live, retained, support, normalized


def fit_leads(table: ObservationTable, view: TreatmentView | AdoptionSchedule,
              P: int = DEFAULT_LEADS, *, factors: Sequence[str] = ("group", "time"),
              covariates: Sequence[str] = (), covariance: str = "bootstrap",
              plan: BootstrapPlan | None = None, threads: int = 1,
              schedule: AdoptionSchedule | None = None) -> LeadProfile:
    """Estimate lead coefficients ``p = -P .. -1`` and their joint test.

    Parameters
    ----------
    view
        Treatment coding of ``table``; passing an :class:`AdoptionSchedule`
        derives it (and is required for ``covariance="bootstrap"``, since
        resampled tables must be recoded).
    covariance
        ``"bootstrap"`` (cluster bootstrap of the lead vector), ``"cluster"``
        (CR1 clustered on the table's cluster column) or ``"robust"`` (HC1).
    """
    if isinstance(view, AdoptionSchedule):
        schedule = view
        view = derive_treatment(table, schedule)
    factors, covariates = tuple(factors), tuple(covariates)
    rows, codes, X, m, leads, live, retained, support, normalized = _fit_leads_point(
        table, view, P, factors, covariates)
    kept_leads = leads[live][retained]
    n_lead_cols = int(live.sum())
    gamma = m.beta[:n_lead_cols][retained]
    absent = sorted(set(leads.tolist()) - set(kept_leads.tolist()) - set(normalized))
    if absent:
        warnings.warn(f"leads {absent} have no support and are excluded",
                      InsufficientLeadSupportWarning, stacklevel=2)
    if normalized:
        warnings.warn(f"leads {normalized} are collinear with the fixed effects (no reference "
                      "rows for some treated groups) and are normalized to 0",
                      InsufficientLeadSupportWarning, stacklevel=2)
    if not retained.any():
        raise InsufficientLeadSupport("every lead is collinear with the fixed effects")

    boot = None
    if covariance == "bootstrap":
        if plan is None or schedule is None:
            raise ValueError("bootstrap covariance needs a plan and an adoption schedule")

        def stat(t: ObservationTable) -> np.ndarray:
            v = derive_treatment(t, schedule, warn=False)
            _, _, _, mb, lb, liveb, retb, _, _ = _fit_leads_point(t, v, P, factors, covariates)
            kept = lb[liveb][retb]
            vals = dict(zip(kept.tolist(), mb.beta[:int(liveb.sum())][retb].tolist()))
            if not set(kept_leads.tolist()) <= set(vals):
                raise InsufficientLeadSupport("resample lost a lead")
            return np.array([vals[p] for p in kept_leads.tolist()])

        boot = cluster_bootstrap(stat, table, plan, point=gamma, threads=threads,
                                 names=[f"lead{p}" for p in kept_leads])
        cov = boot.cov
    elif covariance in ("cluster", "robust"):
        y = table.outcome[rows]
        w = table.weight[rows]
        dense = [refactorize(c)[0] for c in codes]
        D, names = dummy_design(dense, X, list(factors), None)
        full = fit_wls(D, y, w, names)
        Xr = D[:, full.retained]
        clusters = table.cluster_codes[rows] if covariance == "cluster" else None
        V = cluster_covariance(Xr, full.residuals, w, clusters)
        n_fx = D.shape[1] - X.shape[1]
        pos = np.cumsum(full.retained) - 1
        lead_cols = n_fx + np.arange(n_lead_cols)[retained]
        if not full.retained[lead_cols].all():
            raise InsufficientLeadSupport("lead columns collinear in the expanded design")
        idx = pos[lead_cols]
        cov = V[np.ix_(idx, idx)]
    else:
        raise ValueError(f"unknown covariance {covariance!r}")

    test = joint_test(gamma, cov)
    lead_support = support[np.isin(leads, kept_leads)]
    return LeadProfile(kept_leads, gamma, cov, lead_support, absent, test, covariance,
                       int(rows.size), boot, normalized)
