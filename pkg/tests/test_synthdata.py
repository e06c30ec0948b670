"""Test the synthetic pathway generator."""
import math

import numpy as np
import pandas as pd
import pytest
from scipy import special

from msfit.const import COL_FROM, COL_STATUS, COL_SUBJECT, COL_TIME, COL_TO
from msfit.dist import DistributionSpec, get_family
from msfit.exceptions import ConfigError
from msfit.model import ModelStructure, load_dataset
from msfit.synthdata import (
    SynthConfig,
    default_csh_truth,
    default_mixture_truth,
    generate,
    truth_from_dict,
)

H, I, D, X = "Hospital", "ICU", "Death", "Discharge"


def test_same_seed_same_data():
    first, _ = generate(SynthConfig(n=300, seed=7))
    second, _ = generate(SynthConfig(n=300, seed=7))
    other, _ = generate(SynthConfig(n=300, seed=8))
    pd.testing.assert_frame_equal(first, second)
    assert not first.equals(other)


def test_generated_data_loads(structure):
    frame, truth = generate(SynthConfig(n=400, seed=3))
    dataset = load_dataset(frame, structure)
    assert len(dataset) == len(frame)
    assert set(frame[COL_STATUS]) <= {1, 2, 3}
    assert set(frame.columns) >= {COL_SUBJECT, COL_FROM, COL_TO, COL_TIME, "age_group", "gender"}
    assert frame[COL_SUBJECT].iloc[0].startswith("S")
    assert truth["config"]["n"] == 400
    assert truth["model"]["framework"] == "csh"


def test_no_partial_rows_without_fraction():
    frame, _ = generate(SynthConfig(n=400, seed=3, status3_fraction=0.0))
    assert not (frame[COL_STATUS] == 3).any()


def test_complete_follow_up():
    frame, _ = generate(SynthConfig(n=300, seed=4, window=None))
    assert set(frame[COL_STATUS]) == {1}
    last = frame.groupby(COL_SUBJECT).tail(1)
    assert set(last[COL_TO]) <= {D, X}
    # a subject visits ICU at most once, so at most two rows
    assert frame.groupby(COL_SUBJECT).size().max() <= 2


def test_round_days():
    frame, _ = generate(SynthConfig(n=200, seed=5, round_days=True))
    times = frame[COL_TIME].to_numpy()
    assert np.array_equal(times, np.round(times))


def test_mixture_truth_generation(structure):
    frame, truth = generate(SynthConfig(n=300, seed=6, truth="mixture"))
    load_dataset(frame, structure)
    assert truth["model"]["framework"] == "mixture"
    fit = default_mixture_truth()
    assert fit.membership_probs(H) == pytest.approx({I: 0.2, D: 0.15, X: 0.65})


def test_default_truth_cure_effects():
    fit = default_csh_truth()
    reference = fit.resolved({"age_group": "45-64", "gender": "F"})
    oldest = fit.resolved({"age_group": "85+", "gender": "M"})
    icu = (H, I)
    assert reference[icu]["p"] == pytest.approx(special.expit(0.619))
    assert oldest[icu]["p"] == pytest.approx(special.expit(0.619 + 2.089 - 0.2))
    # uncured times do not depend on covariates
    assert reference[icu]["meanlog"] == pytest.approx(math.log(1.9))
    assert oldest[icu]["meanlog"] == pytest.approx(math.log(1.9))
    assert get_family("lognormal").mean(meanlog=math.log(1.9), sdlog=0.5) == pytest.approx(1.9 * math.exp(0.125))


@pytest.mark.slow
def test_default_truth_calibration():
    frame, _ = generate(SynthConfig(n=5000, seed=11))
    subjects = frame[COL_SUBJECT].nunique()
    icu = frame.loc[frame[COL_FROM] == I, COL_SUBJECT].nunique() / subjects
    last = frame.groupby(COL_SUBJECT).tail(1)
    unresolved = np.mean(last[COL_STATUS].isin([2, 3]))
    assert icu == pytest.approx(0.19, abs=0.05)
    assert unresolved == pytest.approx(0.10, abs=0.05)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n": 0},
        {"status3_fraction": 1.5},
        {"window": 0.0},
        {"frequencies": {"gender": {"F": -1.0, "M": 2.0}}},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        SynthConfig(**kwargs)


def test_unknown_truth():
    with pytest.raises(ConfigError):
        SynthConfig(truth="weird").model()


def test_truth_from_dict():
    structure = ModelStructure(states=("A", "B"), transitions=(("A", "B"),))
    data = {
        "framework": "csh",
        "structure": structure.to_dict(),
        "spec": {"A->B": DistributionSpec("exponential").to_dict()},
        "parameters": {"A->B": {"rate": 0.5}},
    }
    config = SynthConfig(n=100, seed=2, truth=data, window=None)
    fit = truth_from_dict(data, config.design)
    assert fit.resolved({"age_group": "<45", "gender": "F"})[("A", "B")] == {"rate": pytest.approx(0.5)}
    frame, _ = generate(config)
    assert len(frame) == 100
    assert set(frame[COL_TO]) == {"B"}

    with pytest.raises(ConfigError, match="missing"):
        truth_from_dict({k: v for k, v in data.items() if k != "parameters"}, config.design)
    with pytest.raises(ConfigError):
        truth_from_dict({**data, "framework": "other"}, config.design)
