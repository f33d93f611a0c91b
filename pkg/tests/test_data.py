import numpy as np
import pandas as pd
import pytest

from imputedid import (
    AdoptionSchedule,
    ObservationRecord,
    ObservationTable,
    build_table,
    derive_treatment,
    read_csv,
    validate,
    write_csv,
)
from imputedid.errors import (
    EmptyInput,
    MissingColumn,
    NoControl,
    NonFiniteValue,
    NoTreatedWarning,
    RaggedCovariates,
)


def test_build_table_counts_levels():
    records = [ObservationRecord(i, g, t, float(i))
               for i, (g, t) in enumerate([("A", 1), ("A", 2), ("B", 1), ("B", 2)])]
    table = build_table(records)
    assert table.n == 4
    assert len(table.group_levels) == 2
    assert len(table.time_levels) == 2


def test_negative_weight_rejected():
    with pytest.raises(NonFiniteValue):
        build_table([ObservationRecord(0, "A", 1, 1.0, weight=-1.0)])


def test_tiny_fixture_has_four_rows(tiny):
    table, _ = tiny
    assert table.n == 4
    assert table.group_codes.tolist() == [0, 0, 1, 1]


@pytest.mark.parametrize("kwargs, err", [
    (dict(group=[], time=[], outcome=[]), EmptyInput),
    (dict(group=["A"], time=[1], outcome=[np.nan]), NonFiniteValue),
    (dict(group=["A"], time=[1.5], outcome=[0.0]), NonFiniteValue),
    (dict(group=["A", "B"], time=[1], outcome=[0.0, 1.0]), RaggedCovariates),
    (dict(group=["A"], time=[1], outcome=[0.0], covariates=np.ones((1, 2)),
          covariate_names=["a"]), RaggedCovariates),
])
def test_from_arrays_rejects_bad_input(kwargs, err):
    with pytest.raises(err):
        ObservationTable.from_arrays(**kwargs)


@pytest.mark.parametrize("time, K, treated, h", [
    (1990, 0, True, 4),
    (1985, 0, False, -1),
    (1985, 2, True, 1),
])
def test_derive_treatment_horizon(time, K, treated, h):
    table = ObservationTable.from_arrays(group=["S", "N"], time=[time, time], outcome=[0.0, 0.0])
    view = derive_treatment(table, AdoptionSchedule({"S": 1986}, anticipation=K), warn=False)
    assert bool(view.treated[0]) is treated
    assert view.horizon[0] == h
    assert not view.treated[1] and np.isnan(view.horizon[1])


def test_all_treated_raises():
    table = ObservationTable.from_arrays(group=["A"], time=[2], outcome=[0.0])
    with pytest.raises(NoControl):
        derive_treatment(table, AdoptionSchedule({"A": 1}))


def test_validate_tiny(tiny):
    table, schedule = tiny
    rep = validate(table, derive_treatment(table, schedule))
    assert (rep.n_treated, rep.n_untreated) == (1, 3)
    assert rep.connected


def test_no_treated_warns(tiny):
    table, _ = tiny
    with pytest.warns(NoTreatedWarning):
        view = derive_treatment(table, AdoptionSchedule({}))
    rep = validate(table, view)
    assert any("no treated" in w for w in rep.warnings)


def test_disconnected_untreated_cells():
    table = ObservationTable.from_arrays(group=["A", "A", "B", "B"], time=[1, 2, 3, 4],
                                         outcome=[0.0, 1.0, 2.0, 3.0])
    rep = validate(table, derive_treatment(table, AdoptionSchedule({}), warn=False))
    assert not rep.connected
    assert len(rep.components) == 2


def test_csv_round_trip(tmp_path, tiny):
    table, schedule = tiny
    path = tmp_path / "panel.csv"
    write_csv(table, schedule, path)
    back, sched = read_csv(path)
    assert back.outcome.tolist() == table.outcome.tolist()
    assert sched.adoption_of("B") == 2 and sched.adoption_of("A") is None


def test_csv_prefixed_columns(tmp_path):
    frame = pd.DataFrame({"group_id": ["A", "A", "B", "B"], "time": [1, 2, 1, 2],
                          "outcome": [1.0, 2.0, 3.0, 7.0], "adoption_year": [None, None, 2, 2],
                          "x_age": [20.0, 21.0, 22.0, 23.0], "g_sex": ["f", "m", "f", "m"]})
    frame.to_csv(tmp_path / "p.csv", index=False)
    table, _ = read_csv(tmp_path / "p.csv")
    assert table.covariate_names == ("age",)
    assert list(table.subgroups) == ["sex"]
    assert table.column("g_sex").tolist() == ["f", "m", "f", "m"]


def test_csv_missing_column(tiny_csv):
    with pytest.raises(MissingColumn):
        read_csv(tiny_csv)


def test_csv_conflicting_adoption(tmp_path):
    (tmp_path / "bad.csv").write_text(
        "group_id,time,outcome,adoption_year\nA,1,0,2\nA,2,0,3\nB,1,0,\n")
    with pytest.raises(NonFiniteValue):
        read_csv(tmp_path / "bad.csv")


def test_interaction_factor():
    table = ObservationTable.from_arrays(group=["A", "A", "B"], time=[1, 2, 1],
                                         outcome=[0.0, 0.0, 0.0])
    codes, levels = table.factor("group:time")
    assert len(levels) == 3
    assert len(set(codes.tolist())) == 3
