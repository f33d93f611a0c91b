import warnings

import numpy as np
import pytest
from scipy import stats

from imputedid import AdoptionSchedule, BootstrapPlan, ObservationTable, fit_leads, generate, joint_test, preset
from imputedid.errors import InsufficientLeadSupportWarning, SingularCovarianceWarning


def _staggered(y_fn, n_groups=8, periods=12):
    g = np.repeat(np.arange(n_groups), periods)
    t = np.tile(np.arange(1, periods + 1), n_groups)
    adoption = {k: 5 + k % 4 for k in range(2, n_groups)}
    E = np.array([adoption.get(k, np.nan) for k in g], dtype=float)
    y = y_fn(g, t, E)
    return ObservationTable.from_arrays(group=g, time=t, outcome=y), AdoptionSchedule(adoption)


def test_additive_outcomes_give_zero_leads():
    table, sched = _staggered(lambda g, t, E: 1.5 * g - 0.3 * t)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InsufficientLeadSupportWarning)
        prof = fit_leads(table, sched, 4, covariance="robust")
    assert np.allclose(prof.gamma, 0.0, atol=1e-10)


def test_planted_lead_recovered():
    table, sched = _staggered(lambda g, t, E: g + 0.1 * t + 0.5 * (t - E == -1))
    prof = fit_leads(table, sched, 4, covariance="robust")
    assert prof.coefficient(-1) == pytest.approx(0.5, abs=1e-10)
    for p in (-4, -3, -2):
        assert prof.coefficient(p) == pytest.approx(0.0, abs=1e-10)


def test_joint_test_zero_and_single_lead():
    t0 = joint_test(np.zeros(3), np.eye(3))
    assert (t0.chi2, t0.df, t0.p_value) == (0.0, 3, 1.0)
    t1 = joint_test(np.array([2.0]), np.array([[1.0]]))
    assert t1.chi2 == pytest.approx(4.0)
    assert t1.df == 1
    assert t1.p_value == pytest.approx(0.0455, abs=5e-5)


def test_joint_test_singular_uses_rank():
    cov = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.warns(SingularCovarianceWarning):
        res = joint_test(np.array([1.0, 1.0]), cov)
    assert res.singular and res.df == 1
    assert res.chi2 == pytest.approx(1.0)
    assert res.p_value == pytest.approx(stats.chi2.sf(1.0, 1))


def test_profile_serialization_and_psd(parallel_panel):
    table, sched, _ = parallel_panel
    prof = fit_leads(table, sched, covariance="bootstrap", plan=BootstrapPlan(40, seed=2))
    d = prof.to_dict()
    assert [e["p"] for e in d["leads"]] == list(range(-8, 0))
    assert d["df"] == 8 and 0 <= d["p_value"] <= 1
    assert np.allclose(prof.cov, prof.cov.T)
    assert np.linalg.eigvalsh(prof.cov).min() > -1e-12


def test_null_leads_within_three_se(parallel_panel):
    table, sched, _ = parallel_panel
    prof = fit_leads(table, sched, covariance="cluster")
    assert np.all(np.abs(prof.t) < 3)


@pytest.mark.parametrize("cov", ["cluster", "robust"])
def test_analytic_covariances_agree_at_unit_clusters(cov, parallel_panel):
    # every row is its own cluster in the presets, so CR1 and HC1 coincide
    table, sched, _ = parallel_panel
    a = fit_leads(table, sched, covariance="cluster").cov
    b = fit_leads(table, sched, covariance=cov).cov
    assert np.allclose(a, b, rtol=1e-8)


def test_unsupported_leads_warn():
    table, sched = _staggered(lambda g, t, E: g + 0.1 * t, periods=8)
    with pytest.warns(InsufficientLeadSupportWarning):
        prof = fit_leads(table, sched, 8, covariance="robust")
    assert prof.absent
    assert prof.df == len(prof.leads)


def test_trend_violation_rejects():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        table, sched, _ = generate(preset("trend_violation", seed=1, pretrend_slope=0.2))
    assert fit_leads(table, sched, covariance="cluster").p_value < 0.01
