"""Shared fixtures for msfit tests."""
from collections.abc import Iterable

import numpy as np
import pandas as pd
import pytest

from msfit.const import COL_FROM, COL_STATUS, COL_SUBJECT, COL_TIME, COL_TO
from msfit.model import ModelStructure, load_dataset


def make_frame(rows: Iterable[tuple], **covariates) -> pd.DataFrame:
    """Observation frame from (from_state, to_state, time, status) tuples."""
    rows = list(rows)
    frame = pd.DataFrame(
        {
            COL_SUBJECT: [f"S{i}" for i in range(len(rows))],
            COL_FROM: [r[0] for r in rows],
            COL_TO: [r[1] for r in rows],
            COL_TIME: [float(r[2]) for r in rows],
            COL_STATUS: [int(r[3]) for r in rows],
        }
    )
    for name, values in covariates.items():
        frame[name] = list(values)
    return frame


def competing_exponentials(rng, n, rates, state="Hospital", censor_at=None):
    """Rows from `state` with independent exponential latent times."""
    dests = list(rates)
    draws = np.column_stack([rng.exponential(1.0 / rates[d], n) for d in dests])
    first = draws.argmin(axis=1)
    times = draws.min(axis=1)
    rows = []
    for k, t in zip(first, times):
        if censor_at is not None and t > censor_at:
            rows.append((state, None, censor_at, 2))
        else:
            rows.append((state, dests[k], t, 1))
    return rows


@pytest.fixture(name="structure")
def structure_fixture():
    """The four-state hospital structure."""
    return ModelStructure.hospital()


@pytest.fixture(name="two_state")
def two_state_fixture():
    """A single transition from Alive to Dead."""
    return ModelStructure(states=("Alive", "Dead"), transitions=(("Alive", "Dead"),))


@pytest.fixture(name="rng")
def rng_fixture():
    return np.random.default_rng(20240611)


@pytest.fixture(name="small_dataset")
def small_dataset_fixture(structure):
    """A handful of rows covering every status."""
    frame = make_frame(
        [
            ("Hospital", "ICU", 2.0, 1),
            ("ICU", "Discharge", 6.0, 1),
            ("Hospital", "Death", 4.0, 1),
            ("Hospital", "Discharge", 9.0, 1),
            ("Hospital", None, 5.0, 2),
            ("Hospital", None, 40.0, 3),
            ("Hospital", "ICU", 1.0, 1),
            ("ICU", "Death", 3.0, 1),
        ],
        gender=["F", "F", "M", "M", "F", "M", "M", "M"],
    )
    return load_dataset(frame, structure)
