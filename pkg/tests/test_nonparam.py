"""Test the Kaplan-Meier and Aalen-Johansen estimators and fit diagnostics."""
import math

import numpy as np
import pytest

from msfit.csh import CshFit, CshModelSpec
from msfit.exceptions import ConfigError, DataError
from msfit.mixture import MixtureFit, MixtureModelSpec
from msfit.model import CovariateDesign, load_dataset
from msfit.nonparam import (
    GOF_COLUMNS,
    HISTOGRAM_COLUMNS,
    aalen_johansen,
    gof_table,
    histogram_table,
    kaplan_meier,
    km_table,
)

from tests.conftest import competing_exponentials, make_frame

H, I, D, X = "Hospital", "ICU", "Death", "Discharge"


@pytest.fixture(name="csh_truth")
def csh_truth_fixture(structure):
    spec = CshModelSpec.uniform(structure, "exponential")
    rates = {(H, I): 0.2, (H, D): 0.1, (H, X): 0.7, (I, D): 0.3, (I, X): 0.7}
    return CshFit.from_parameters(structure, spec, {t: {"rate": r} for t, r in rates.items()})


@pytest.fixture(name="mixture_truth")
def mixture_truth_fixture(structure):
    spec = MixtureModelSpec.uniform(structure, "exponential")
    times = {"rate": 1.0}
    return MixtureFit.from_parameters(
        structure,
        spec,
        {
            H: {"membership": {I: 0.2, D: 0.1, X: 0.7}, "times": dict.fromkeys((I, D, X), times)},
            I: {"membership": {D: 0.3, X: 0.7}, "times": dict.fromkeys((D, X), times)},
        },
    )


def test_kaplan_meier_by_hand():
    km = kaplan_meier([1.0, 2.0, 3.0], [True, False, True])
    assert km([0.5, 1.0, 2.0, 3.0]) == pytest.approx([1.0, 2 / 3, 2 / 3, 0.0])
    assert math.isnan(float(km(4.0)))


def test_kaplan_meier_all_censored():
    km = kaplan_meier([1.0, 2.0], [False, False])
    assert km([0.5, 1.5, 2.0]).tolist() == [1.0, 1.0, 1.0]


def test_kaplan_meier_rejects_bad_input():
    with pytest.raises(DataError):
        kaplan_meier([], [])
    with pytest.raises(DataError):
        kaplan_meier([0.0, 1.0], [True, True])


def test_aalen_johansen_single_destination_is_one_minus_km(two_state):
    rng = np.random.default_rng(3)
    times = rng.exponential(1.0, 60)
    events = rng.uniform(size=60) < 0.7
    frame = make_frame(
        [("Alive", "Dead" if e else None, t, 1 if e else 2) for t, e in zip(times, events)]
    )
    aj = aalen_johansen(load_dataset(frame, two_state), "Alive")
    km = kaplan_meier(times, events)
    grid = np.linspace(0.01, times.max(), 40)
    assert aj.cif["Dead"](grid) == pytest.approx(1.0 - km(grid))
    assert aj.stay(grid) == pytest.approx(km(grid))


def test_aalen_johansen_uncensored_proportions(structure, rng):
    rows = competing_exponentials(rng, 200, {I: 1.0, D: 0.5, X: 2.0})
    dataset = load_dataset(make_frame(rows), structure)
    aj = aalen_johansen(dataset, H)
    end = max(r[2] for r in rows)
    for s in (I, D, X):
        share = sum(r[1] == s for r in rows) / len(rows)
        assert float(aj.cif[s](end)) == pytest.approx(share)
    assert float(aj.stay(end)) == pytest.approx(0.0, abs=1e-12)


def test_aalen_johansen_jump(structure):
    dataset = load_dataset(make_frame([(H, D, 2.0, 1)]), structure)
    aj = aalen_johansen(dataset, H)
    assert float(aj.cif[D](1.999)) == 0.0
    assert float(aj.cif[D](2.0)) == 1.0
    assert float(aj.cif[X](2.0)) == 0.0
    with pytest.raises(DataError):
        aalen_johansen(dataset, I)


def test_gof_table_shape_and_start(csh_truth, structure, rng):
    rows = competing_exponentials(rng, 100, {I: 0.2, D: 0.1, X: 0.7}, censor_at=8.0)
    rows += competing_exponentials(rng, 30, {D: 0.3, X: 0.7}, state=I)
    dataset = load_dataset(make_frame(rows), structure)
    table = gof_table(csh_truth, dataset, grid=[0.0, 1.0, 5.0, 1000.0])
    assert list(table.columns) == GOF_COLUMNS
    assert len(table) == (3 + 2) * 4
    start = table[table["time"] == 0.0]
    assert (start["parametric"] == 0.0).all()
    assert (start["abs_diff"] == 0.0).all()
    assert table[table["time"] == 1000.0]["nonparametric"].isna().all()
    mid = table[(table["time"] == 5.0) & (table["from_state"] == H)]
    # 100 rows from the true model: estimates agree loosely
    assert (mid["abs_diff"] < 0.2).all()


def test_gof_table_grouping(structure, rng):
    design = CovariateDesign(
        names=("gender", "ward"), levels={"gender": ("F", "M"), "ward": ("A", "B")}
    )
    spec = CshModelSpec.uniform(structure, "exponential")
    fit = CshFit.from_parameters(
        structure, spec, {t: {"rate": 0.5} for t in structure.transitions}, design=design
    )
    rows = competing_exponentials(rng, 80, {I: 0.5, D: 0.5, X: 0.5})
    gender = ["F", "M"] * 40
    ward = ["A", "A", "B", "B"] * 20
    dataset = load_dataset(make_frame(rows, gender=gender, ward=ward), structure, design=design)
    table = gof_table(fit, dataset, grid=[0.0, 1.0], grouping=["gender", "ward"])
    assert set(table["group"]) == {
        "gender=F,ward=A",
        "gender=F,ward=B",
        "gender=M,ward=A",
        "gender=M,ward=B",
    }
    assert len(table) == 4 * 3 * 2


def test_km_table(csh_truth, small_dataset, mixture_truth):
    table = km_table(csh_truth, small_dataset, grid=[0.0, 2.0])
    assert list(table.columns) == GOF_COLUMNS
    start = table[table["time"] == 0.0]
    assert (start["parametric"] == 1.0).all()
    assert (start["nonparametric"] == 1.0).all()
    expected = math.exp(-0.2 * 2.0)
    icu = table[(table["from_state"] == H) & (table["to_state"] == I) & (table["time"] == 2.0)]
    assert icu["parametric"].iloc[0] == pytest.approx(expected)
    with pytest.raises(ConfigError):
        km_table(mixture_truth, small_dataset)


def test_histogram_table(mixture_truth, small_dataset, csh_truth):
    table = histogram_table(mixture_truth, small_dataset, bins=4)
    assert list(table.columns) == HISTOGRAM_COLUMNS
    assert table["observed"].sum() == int(np.sum(small_dataset.status == 1))
    assert (table["fitted_density"] > 0).all()
    with pytest.raises(ConfigError):
        histogram_table(csh_truth, small_dataset)
