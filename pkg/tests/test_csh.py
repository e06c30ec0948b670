"""Test cause-specific hazards likelihoods, fitting and sampling."""
import math

import numpy as np
import pytest
from scipy import stats

from msfit.csh import (
    CshFit,
    CshModelSpec,
    csh_next_event_sample,
    csh_obs_loglik,
    fit_csh,
)
from msfit.dist import DistributionSpec
from msfit.exceptions import ConfigError
from msfit.inference import subgroup_loglik
from msfit.model import ModelStructure, Observation, load_dataset
from msfit.synthdata import SynthConfig, default_csh_truth, generate

from tests.conftest import competing_exponentials, make_frame

H, I, D, X = "Hospital", "ICU", "Death", "Discharge"


def _exponential_params(structure, rate):
    return {t: {"rate": rate} for t in structure.transitions}


@pytest.fixture(name="competing")
def competing_fixture():
    """One state with two exponential competitors."""
    structure = ModelStructure(states=("A", "B", "C"), transitions=(("A", "B"), ("A", "C")))
    spec = CshModelSpec.uniform(structure, "exponential")
    return CshFit.from_parameters(
        structure, spec, {("A", "B"): {"rate": 1.0}, ("A", "C"): {"rate": 3.0}}
    )


@pytest.mark.parametrize(
    ("observation", "rate", "expected"),
    [
        (Observation("a", H, I, 1.0, 1), 1.0, -3.0),
        (Observation("b", H, None, 2.0, 2), 0.5, -3.0),
        (Observation("c", H, None, 2.0, 3), 0.5, -1.0),
    ],
)
def test_obs_loglik_hand_values(structure, observation, rate, expected):
    spec = CshModelSpec.uniform(structure, "exponential")
    params = _exponential_params(structure, rate)
    assert csh_obs_loglik(observation, structure, spec, params) == pytest.approx(expected)


FAMILY_PARAMS = {
    "exponential": {"rate": 0.5},
    "weibull": {"shape": 1.5, "scale": 3.0},
    "gamma": {"shape": 2.0, "rate": 0.7},
    "lognormal": {"meanlog": 1.0, "sdlog": 0.8},
    "gengamma": {"mu": 1.0, "sigma": 0.8, "Q": -0.5},
}


@pytest.mark.parametrize(
    ("family", "cure"), [*((f, False) for f in FAMILY_PARAMS), ("lognormal", True)]
)
def test_censored_loglik_never_increases_with_time(structure, family, cure):
    transitions = {t: DistributionSpec(family) for t in structure.transitions}
    params = {t: dict(FAMILY_PARAMS[family]) for t in structure.transitions}
    if cure:
        transitions[(H, D)] = DistributionSpec(family, cure=True)
        params[(H, D)]["p"] = 0.3
    spec = CshModelSpec(transitions)
    values = [
        csh_obs_loglik(Observation("a", H, None, y, 2), structure, spec, params)
        for y in (0.5, 1.0, 2.0, 4.0, 8.0, 16.0)
    ]
    assert np.all(np.diff(values) <= 1e-12)


def test_spec_validation(structure):
    spec = CshModelSpec.uniform(structure, "gengamma")
    assert spec.validate(structure) is spec
    partial = CshModelSpec({(H, I): DistributionSpec("gamma")})
    with pytest.raises(ConfigError, match="missing"):
        partial.validate(structure)
    cured = dict(spec.transitions)
    cured[(H, X)] = DistributionSpec("gengamma", cure=True)
    with pytest.raises(ConfigError, match="cure fraction not allowed"):
        CshModelSpec(cured).validate(structure)
    assert CshModelSpec.from_dict(spec.to_dict()).transitions == spec.transitions


def test_fit_recovers_exponential_rates(structure, rng):
    rates = {I: 1.0, D: 0.5, X: 2.0}
    frame = make_frame(competing_exponentials(rng, 5000, rates))
    dataset = load_dataset(frame, structure)
    fit = fit_csh(dataset, CshModelSpec.uniform(structure, "exponential"))
    for s, truth in rates.items():
        tf = fit.transitions[(H, s)]
        assert tf.converged
        log_rate, se = tf.estimate[0], math.sqrt(tf.cov[0, 0])
        assert abs(log_rate - math.log(truth)) < 3 * se
    # no rows leave ICU
    assert fit.transitions[(I, D)].pinned
    assert fit.transitions[(I, X)].pinned
    assert fit.k == 3
    assert fit.names == ("Hospital->ICU:rate", "Hospital->Death:rate", "Hospital->Discharge:rate")


def test_total_loglik_matches_rows(structure, rng):
    frame = make_frame(
        competing_exponentials(rng, 400, {I: 1.0, D: 0.5, X: 2.0}, censor_at=1.0)
        + competing_exponentials(rng, 100, {D: 0.3, X: 0.6}, state=I)
        + [(H, None, 0.7, 3)] * 5
    )
    dataset = load_dataset(frame, structure)
    fit = fit_csh(dataset, CshModelSpec.uniform(structure, "weibull"), workers=2)
    contributions = fit.obs_loglik(dataset)
    assert contributions.sum() == pytest.approx(fit.loglik, rel=1e-10)

    params = {t: fit.resolved()[t] for t in structure.transitions}
    spec = fit.spec
    by_observation = [
        csh_obs_loglik(o, structure, spec, params) for o in dataset.observations()
    ]
    assert np.allclose(by_observation, contributions)


def test_zero_event_transitions_pinned(structure, rng):
    frame = make_frame([(H, I, t, 1) for t in rng.exponential(1.0, 50)])
    fit = fit_csh(load_dataset(frame, structure), CshModelSpec.uniform(structure, "exponential"))
    assert not fit.transitions[(H, I)].pinned
    assert fit.transitions[(H, D)].pinned
    assert fit.transitions[(H, X)].pinned
    assert fit.transitions[(H, D)].hazard(np.array([1.0])).tolist() == [0.0]


def test_fit_with_covariates_and_parameter_table(structure, rng):
    rows, genders = [], []
    for gender, scale in (("F", 1.0), ("M", 2.0)):
        block = competing_exponentials(rng, 300, {I: 0.5 * scale, D: 0.2, X: 1.0})
        rows += block
        genders += [gender] * len(block)
    dataset = load_dataset(make_frame(rows, gender=genders), structure)
    spec = CshModelSpec.uniform(structure, "exponential", location_covariates=["gender"])
    fit = fit_csh(dataset, spec)
    slope = fit.transitions[(H, I)].estimate[1]
    se = math.sqrt(fit.transitions[(H, I)].cov[1, 1])
    assert abs(slope - math.log(2.0)) < 4 * se

    table = fit.parameter_table()
    assert list(table.columns) == ["name", "estimate", "std_error", "transform"]
    assert "Hospital->ICU:rate:gender=M" in set(table["name"])
    assert (table["std_error"] > 0).all()

    shifted = fit.with_parameters(fit.estimate + 0.1)
    assert shifted.estimate == pytest.approx(fit.estimate + 0.1)
    with pytest.raises(ConfigError):
        fit.with_parameters(fit.estimate[:-1])


def test_subgroup_loglik_partitions_total(small_dataset, structure):
    fit = fit_csh(small_dataset, CshModelSpec.uniform(structure, "exponential"))
    whole = subgroup_loglik(fit, small_dataset, [])
    total = whole[whole["submodel"] == "all"]["loglik"].sum()
    assert total == pytest.approx(fit.loglik, rel=1e-10)

    by_gender = subgroup_loglik(fit, small_dataset, ["gender"])
    overall = by_gender[by_gender["submodel"] == "all"]
    assert set(overall["group"]) == {"gender=F", "gender=M"}
    assert overall["loglik"].sum() == pytest.approx(fit.loglik, abs=1e-10)
    assert overall["n"].sum() == len(small_dataset)


def test_next_event_competition(competing):
    rng = np.random.default_rng(1)
    n = 100_000
    names, times = csh_next_event_sample(competing, "A", rng, size=n)
    share = np.mean(names == "B")
    assert abs(share - 0.25) < 3 * math.sqrt(0.25 * 0.75 / n)
    # the minimum of the two is exponential with rate 4
    assert times.mean() == pytest.approx(0.25, rel=0.02)


def test_next_event_cured_competitor_never_wins():
    structure = ModelStructure(states=("A", "B", "C"), transitions=(("A", "B"), ("A", "C")))
    spec = CshModelSpec(
        {
            ("A", "B"): DistributionSpec("lognormal", cure=True),
            ("A", "C"): DistributionSpec("exponential"),
        }
    )
    fit = CshFit.from_parameters(
        structure,
        spec,
        {("A", "B"): {"meanlog": 0.0, "sdlog": 1.0, "p": 1.0}, ("A", "C"): {"rate": 1.0}},
    )
    names, _ = csh_next_event_sample(fit, "A", np.random.default_rng(2), size=1000)
    assert set(names) == {"C"}


def test_next_event_everyone_cured():
    structure = ModelStructure(states=("A", "B"), transitions=(("A", "B"),))
    spec = CshModelSpec({("A", "B"): DistributionSpec("lognormal", cure=True)})
    fit = CshFit.from_parameters(
        structure, spec, {("A", "B"): {"meanlog": 0.0, "sdlog": 1.0, "p": 1.0}}
    )
    state, time = csh_next_event_sample(fit, "A", np.random.default_rng(3))
    assert state is None
    assert math.isinf(time)


def test_next_event_single_competitor(two_state):
    spec = CshModelSpec.uniform(two_state, "exponential")
    fit = CshFit.from_parameters(two_state, spec, {("Alive", "Dead"): {"rate": 2.0}})
    names, times = csh_next_event_sample(fit, "Alive", np.random.default_rng(4), size=10_000)
    assert set(names) == {"Dead"}
    assert stats.kstest(times, stats.expon(scale=0.5).cdf).pvalue > 0.01


@pytest.mark.slow
def test_recovers_default_truth_within_standard_errors(structure):
    truth = default_csh_truth()
    covered = np.zeros((20, len(truth.estimate)), bool)
    for seed in range(20):
        frame, _ = generate(SynthConfig(n=5000, seed=seed))
        dataset = load_dataset(frame, structure)
        fit = fit_csh(dataset, truth.spec)
        assert fit.names == truth.names
        se = np.sqrt(np.diag(fit.cov))
        covered[seed] = np.abs(fit.estimate - truth.estimate) <= 3 * se
    coverage = dict(zip(truth.names, covered.mean(axis=0)))
    assert all(c >= 0.9 for c in coverage.values()), coverage
