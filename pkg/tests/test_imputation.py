import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from imputedid import (
    AdoptionSchedule,
    BootstrapPlan,
    EffectSet,
    ObservationTable,
    att_by_horizon,
    att_by_subgroup,
    att_overall,
    derive_treatment,
    estimate,
    fit_counterfactual,
    generate,
    impute_effects,
    placebo,
    preset,
)
from imputedid.errors import DisconnectedDesign, EmptyEffectSet, SingleCategory, UnknownLabel

from conftest import random_panel


def test_tiny_counterfactual(tiny):
    table, schedule = tiny
    view = derive_treatment(table, schedule)
    model = fit_counterfactual(table, view)
    fe = model.fixed_effects
    assert fe["group"] == pytest.approx([1.0, 3.0])
    assert fe["time"] == pytest.approx([0.0, 1.0])
    eff = impute_effects(model, table, view)
    assert eff.effect.tolist() == pytest.approx([3.0])
    assert att_overall(eff) == pytest.approx(3.0, abs=1e-12)


def test_additive_untreated_has_zero_residuals():
    g = np.repeat(np.arange(3), 4)
    t = np.tile(np.arange(1, 5), 3)
    y = 2.0 * g + 0.5 * t
    table = ObservationTable.from_arrays(group=g, time=t, outcome=y)
    view = derive_treatment(table, AdoptionSchedule({2: 3}))
    model = fit_counterfactual(table, view)
    assert np.allclose(model.model.fit.residuals, 0.0, atol=1e-12)


def test_treated_without_untreated_overlap_is_disconnected():
    # group B is treated in both of its periods and never overlaps A's times
    table = ObservationTable.from_arrays(group=["A", "A", "B", "B", "C"], time=[1, 2, 3, 4, 3],
                                         outcome=[0.0, 1.0, 2.0, 3.0, 1.0])
    view = derive_treatment(table, AdoptionSchedule({"B": 3}))
    with pytest.raises(DisconnectedDesign):
        fit_counterfactual(table, view)


def test_effect_equals_zero_when_outcome_is_its_imputation(tiny):
    table, schedule = tiny
    rep = estimate(table.with_outcome(np.array([1.0, 2.0, 3.0, 4.0])), schedule)
    assert rep.att == pytest.approx(0.0, abs=1e-12)


def test_two_rows_in_one_treated_cell():
    table = ObservationTable.from_arrays(group=["A", "A", "B", "B", "B"], time=[1, 2, 1, 2, 2],
                                         outcome=[1.0, 2.0, 3.0, 5.0, 9.0])
    rep = estimate(table, AdoptionSchedule({"B": 2}))
    assert sorted(rep.effects.effect.tolist()) == pytest.approx([1.0, 5.0])
    assert rep.att == pytest.approx(3.0)


@pytest.mark.parametrize("values, expected", [([3.0], 3.0), ([1.0, 5.0], 3.0)])
def test_att_overall_mean(values, expected):
    assert att_overall(EffectSet.from_values(values)) == pytest.approx(expected)


def test_att_overall_rejects_empty():
    with pytest.raises(EmptyEffectSet):
        att_overall(EffectSet.from_values([np.nan]))


def test_curve_buckets():
    eff = EffectSet.from_values([1.0, 2.0, 4.0], horizon=[0, 1, 1])
    curve = att_by_horizon(eff, 5)
    assert curve.horizons.tolist() == [0, 1]
    assert curve.att.tolist() == pytest.approx([1.0, 3.0])
    only_zero = att_by_horizon(EffectSet.from_values([1.0, 2.0]), 5)
    assert only_zero.horizons.tolist() == [0]


def test_curve_truncation_counts():
    eff = EffectSet.from_values([1.0, 2.0, 4.0], horizon=[0, 1, 20])
    assert att_by_horizon(eff, 15).truncated == 1


def test_subgroup_contrast():
    eff = EffectSet.from_values([2.0, 4.0, 1.0, 3.0],
                                subgroups={"sex": ["girl", "girl", "boy", "boy"]})
    sub = att_by_subgroup(eff, "sex", ("girl", "boy"))
    assert sub.att == {"girl": pytest.approx(3.0), "boy": pytest.approx(2.0)}
    assert sub.contrast == pytest.approx(1.0)


def test_subgroup_symmetry_and_errors():
    eff = EffectSet.from_values([1.0, 2.0, 2.0, 1.0], subgroups={"s": ["a", "a", "b", "b"]})
    assert att_by_subgroup(eff, "s").contrast == pytest.approx(0.0)
    with pytest.raises(UnknownLabel):
        att_by_subgroup(eff, "nope")
    with pytest.raises(SingleCategory):
        att_by_subgroup(EffectSet.from_values([1.0], subgroups={"s": ["a"]}), "s")


@given(st.integers(0, 2**32 - 1))
def test_horizon_curve_recomposes_overall(seed):
    table, schedule = random_panel(np.random.default_rng(seed))
    rep = estimate(table, schedule, horizon=50)
    eff = rep.effects
    curve = att_by_horizon(eff, 50)
    assert np.dot(curve.att, curve.n) / curve.n.sum() == pytest.approx(rep.att, abs=1e-10)


@given(st.integers(0, 2**32 - 1), st.floats(0.5, 5.0), st.floats(-5, 5))
def test_affine_equivariance(seed, scale, shift):
    table, schedule = random_panel(np.random.default_rng(seed))
    base = estimate(table, schedule).att
    moved = estimate(table.with_outcome(scale * table.outcome + shift), schedule).att
    assert moved == pytest.approx(scale * base, abs=1e-8)


def test_noiseless_recovery(noiseless_subgroup_panel):
    table, schedule, truth = noiseless_subgroup_panel
    rep = estimate(table, schedule, subgroup="religion")
    assert rep.att == pytest.approx(truth.att, abs=1e-9)
    for h in rep.horizons:
        assert h["att"] == pytest.approx(truth.curve[h["h"]], abs=1e-9)
    for c, v in truth.subgroup_att.items():
        assert rep.subgroups["categories"][c]["att"] == pytest.approx(v, abs=1e-9)


def test_group_aggregation_weights_groups_equally():
    table = ObservationTable.from_arrays(
        group=["A", "A", "B", "B", "B", "C", "C"], time=[1, 2, 1, 2, 2, 1, 2],
        outcome=[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 3.0])
    s = AdoptionSchedule({"B": 2, "C": 2})
    assert estimate(table, s).att == pytest.approx(5.0 / 3.0)
    assert estimate(table, s, aggregation="group").att == pytest.approx(2.0)


def test_placebo_identity_subsample(parallel_panel):
    table, schedule, _ = parallel_panel
    full = estimate(table, schedule)
    same = placebo(table, schedule, np.ones(table.n, dtype=bool))
    assert same.att == full.att


def test_bootstrap_report_fields(parallel_panel):
    table, schedule, _ = parallel_panel
    rep = estimate(table, schedule, subgroup=None, plan=BootstrapPlan(20, seed=1))
    d = rep.to_dict()
    assert d["seed"] == 1 and d["bootstrap_iterations"] == 20
    assert d["se"] > 0 and d["ci95"][0] < d["ci95"][1]
    assert all(h["se"] is not None for h in d["horizons"])


def test_subgroup_contrast_with_bootstrap():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        table, schedule, _ = generate(preset("subgroup_effect", seed=2))
    rep = estimate(table, schedule, subgroup="religion", contrast=("A", "B"),
                   plan=BootstrapPlan(30, seed=4))
    c = rep.subgroups["contrast"]
    assert c["diff"] == pytest.approx(rep.subgroups["categories"]["A"]["att"]
                                      - rep.subgroups["categories"]["B"]["att"])
    assert 0 <= c["p_value"] <= 1 and c["se"] > 0


def test_wild_bootstrap_runs(parallel_panel):
    table, schedule, _ = parallel_panel
    rep = estimate(table, schedule, plan=BootstrapPlan(20, seed=3, flavor="wild"))
    assert rep.se > 0
