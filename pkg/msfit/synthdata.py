"""Synthetic hospital pathway data.

Subjects are admitted uniformly over an admission window and followed to a
common extraction date. Stays still running at extraction give status-2
rows; a fraction of subjects alive at extraction lose their outcome and
give status-3 rows.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
import math
from typing import Any

import numpy as np
import pandas as pd
from scipy import special

from .const import (
    COL_FROM,
    COL_STATUS,
    COL_SUBJECT,
    COL_TIME,
    COL_TO,
    DEFAULT_SEED,
    FRAMEWORK_CSH,
    FRAMEWORK_MIXTURE,
    LOGGER,
    SCOPE_DEATH,
    STATE_DEATH,
    STATE_DISCHARGE,
    STATE_HOSPITAL,
    STATE_ICU,
    STATUS_CENSORED,
    STATUS_EVENT,
    STATUS_PARTIAL,
    STREAM_SIMULATE,
)
from .csh import CshFit, CshModelSpec
from .dist import DistributionSpec
from .exceptions import ConfigError, NumericalError
from .inference import FittedModel
from .mixture import MembershipSpec, MixtureFit, MixtureModelSpec, SubmodelSpec
from .model import CovariateDesign, ModelStructure, parse_transition_key
from .results import fit_to_dict
from .util import named_stream

AGE_GROUP = "age_group"
GENDER = "gender"

DEFAULT_FREQUENCIES: dict[str, dict[str, float]] = {
    AGE_GROUP: {"<45": 0.10, "45-64": 0.25, "65-74": 0.20, "75-84": 0.25, "85+": 0.20},
    GENDER: {"F": 0.45, "M": 0.55},
}
DEFAULT_N = 5000
DEFAULT_WINDOW = 200.0  # days
DEFAULT_STATUS3_FRACTION = 0.06

# Cure probabilities on the logit scale, relative to age 45-64 women
ICU_CURE = {"<45": -0.108, "65-74": 0.480, "75-84": 1.327, "85+": 2.089, "M": -0.2}
DEATH_CURE = {"<45": 1.094, "65-74": -1.169, "75-84": -2.148, "85+": -2.603, "M": -0.3}
ICU_DEATH_CURE = {"<45": 0.9889, "65-74": -0.6062, "75-84": -1.048, "85+": -1.587, "M": 0.0}


def _cure_slopes(effects: Mapping[str, float]) -> dict[str, float]:
    slopes = {}
    for level, value in effects.items():
        name = GENDER if level in DEFAULT_FREQUENCIES[GENDER] else AGE_GROUP
        slopes[f"p:{name}={level}"] = value
    return slopes


def default_design() -> CovariateDesign:
    return CovariateDesign(
        names=(AGE_GROUP, GENDER),
        levels={name: tuple(sorted(freq)) for name, freq in DEFAULT_FREQUENCIES.items()},
    )


def default_csh_truth(design: CovariateDesign | None = None) -> CshFit:
    """Cure models for hospital to ICU and for death, generalized gamma elsewhere.

    Cure probabilities depend on age group and gender; the uncured times do
    not.
    """
    design = design or default_design()
    structure = ModelStructure.hospital()
    cure_links = {"p": (AGE_GROUP, GENDER)}
    spec = CshModelSpec(
        {
            (STATE_HOSPITAL, STATE_ICU): DistributionSpec("lognormal", cure=True, links=cure_links),
            (STATE_HOSPITAL, STATE_DEATH): DistributionSpec("gengamma", cure=True, links=cure_links),
            (STATE_HOSPITAL, STATE_DISCHARGE): DistributionSpec("gengamma"),
            (STATE_ICU, STATE_DEATH): DistributionSpec("gengamma", cure=True, links=cure_links),
            (STATE_ICU, STATE_DISCHARGE): DistributionSpec("gengamma"),
        }
    )
    parameters = {
        (STATE_HOSPITAL, STATE_ICU): {
            "meanlog": math.log(1.9),
            "sdlog": 0.5,
            "p": float(special.expit(0.619)),
            **_cure_slopes(ICU_CURE),
        },
        (STATE_HOSPITAL, STATE_DEATH): {
            "mu": 2.1203,
            "sigma": 1.0,
            "Q": 1.0,
            "p": float(special.expit(1.408)),
            **_cure_slopes(DEATH_CURE),
        },
        (STATE_HOSPITAL, STATE_DISCHARGE): {"mu": 2.5257, "sigma": 1.0, "Q": 1.0},
        (STATE_ICU, STATE_DEATH): {
            "mu": 2.4079,
            "sigma": 1.0,
            "Q": 1.0,
            "p": float(special.expit(0.2007)),
            **_cure_slopes(ICU_DEATH_CURE),
        },
        (STATE_ICU, STATE_DISCHARGE): {"mu": 2.8134, "sigma": 1.0, "Q": 1.0},
    }
    return CshFit.from_parameters(structure, spec, parameters, design)


def default_mixture_truth(design: CovariateDesign | None = None) -> MixtureFit:
    """Mixture model without covariate effects."""
    design = design or default_design()
    structure = ModelStructure.hospital()
    spec = MixtureModelSpec(
        {
            STATE_HOSPITAL: SubmodelSpec(
                times={
                    STATE_ICU: DistributionSpec("lognormal"),
                    STATE_DEATH: DistributionSpec("gamma"),
                    STATE_DISCHARGE: DistributionSpec("gamma"),
                },
                membership=MembershipSpec(),
            ),
            STATE_ICU: SubmodelSpec(
                times={
                    STATE_DEATH: DistributionSpec("lognormal"),
                    STATE_DISCHARGE: DistributionSpec("gamma"),
                },
                membership=MembershipSpec(),
            ),
        }
    )
    parameters = {
        STATE_HOSPITAL: {
            "membership": {STATE_ICU: 0.2, STATE_DEATH: 0.15, STATE_DISCHARGE: 0.65},
            "times": {
                STATE_ICU: {"meanlog": 0.5, "sdlog": 0.5},
                STATE_DEATH: {"shape": 2.0, "rate": 0.2},
                STATE_DISCHARGE: {"shape": 2.0, "rate": 0.15},
            },
        },
        STATE_ICU: {
            "membership": {STATE_DEATH: 0.3, STATE_DISCHARGE: 0.7},
            "times": {
                STATE_DEATH: {"meanlog": 2.0, "sdlog": 0.5},
                STATE_DISCHARGE: {"shape": 2.0, "rate": 0.15},
            },
        },
    }
    return MixtureFit.from_parameters(structure, spec, parameters, design)


def truth_from_dict(data: Mapping[str, Any], design: CovariateDesign) -> FittedModel:
    """A generating model from a config block.

    ``{"framework": "csh", "structure": ..., "spec": {"A->B": ...},
    "parameters": {"A->B": {...}}}``, or the mixture equivalent keyed by
    from-state.
    """
    framework = data.get("framework", FRAMEWORK_CSH)
    structure = (
        ModelStructure.from_dict(data["structure"]) if "structure" in data
        else ModelStructure.hospital()
    )
    try:
        if framework == FRAMEWORK_CSH:
            parameters = {parse_transition_key(k): v for k, v in data["parameters"].items()}
            return CshFit.from_parameters(
                structure, CshModelSpec.from_dict(data["spec"]), parameters, design
            )
        if framework == FRAMEWORK_MIXTURE:
            return MixtureFit.from_parameters(
                structure, MixtureModelSpec.from_dict(data["spec"]), data["parameters"], design
            )
    except KeyError as exc:
        raise ConfigError(f"truth model is missing {exc}") from exc
    raise ConfigError(f"Unknown truth framework '{framework}'")


@dataclass(frozen=True)
class SynthConfig:
    """Settings for `generate`.

    `window` is the admission window in days; every subject is followed to
    its end. With ``window=None`` all pathways are observed to absorption.
    """

    n: int = DEFAULT_N
    truth: str | Mapping[str, Any] = FRAMEWORK_CSH
    frequencies: Mapping[str, Mapping[str, float]] = field(
        default_factory=lambda: {k: dict(v) for k, v in DEFAULT_FREQUENCIES.items()}
    )
    window: float | None = DEFAULT_WINDOW
    status3_fraction: float = DEFAULT_STATUS3_FRACTION
    seed: int = DEFAULT_SEED
    round_days: bool = False

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigError("n must be at least 1")
        if not 0.0 <= self.status3_fraction <= 1.0:
            raise ConfigError("status3_fraction must lie in [0, 1]")
        if self.window is not None and not self.window > 0:
            raise ConfigError("window must be positive")
        for name, freq in self.frequencies.items():
            values = np.asarray(list(freq.values()), dtype=float)
            if not len(values) or np.any(values < 0) or not values.sum() > 0:
                raise ConfigError(f"frequencies for '{name}' must be non-negative and not all zero")

    @property
    def design(self) -> CovariateDesign:
        return CovariateDesign(
            names=tuple(self.frequencies),
            levels={name: tuple(sorted(freq)) for name, freq in self.frequencies.items()},
        )

    def model(self) -> FittedModel:
        design = self.design
        if self.truth == FRAMEWORK_CSH:
            return default_csh_truth(design)
        if self.truth == FRAMEWORK_MIXTURE:
            return default_mixture_truth(design)
        if isinstance(self.truth, Mapping):
            return truth_from_dict(self.truth, design)
        raise ConfigError(f"Unknown truth '{self.truth}'")

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "truth": self.truth if isinstance(self.truth, str) else dict(self.truth),
            "frequencies": {k: dict(v) for k, v in self.frequencies.items()},
            "window": self.window,
            "status3_fraction": self.status3_fraction,
            "seed": self.seed,
            "round_days": self.round_days,
        }


def _covariates(config: SynthConfig, rng: np.random.Generator) -> pd.DataFrame:
    columns = {}
    for name, freq in config.frequencies.items():
        levels = list(freq)
        probs = np.asarray([freq[level] for level in levels], dtype=float)
        columns[name] = rng.choice(levels, size=config.n, p=probs / probs.sum())
    return pd.DataFrame(columns)


def simulate_pathways(
    fit: FittedModel,
    Z: np.ndarray | None,
    follow_up: np.ndarray,
    rng: np.random.Generator,
) -> pd.DataFrame:
    """Observation rows for individuals followed for `follow_up` days.

    Rows carry the subject index, the stage start measured from admission
    (``entry``) and the usual from/to/time/status columns.
    """
    structure = fit.structure
    n = len(follow_up)
    current = np.full(n, structure.initial, dtype=object)
    entry = np.zeros(n)
    active = np.ones(n, dtype=bool)
    batches = []
    for step in range(len(structure.states)):
        active &= np.isin(current, structure.transient)
        if not active.any():
            break
        for state in structure.transient:
            idx = np.flatnonzero(active & (current == state))
            if not len(idx):
                continue
            index, time = fit.sample_next(state, rng, len(idx), None if Z is None else Z[idx])
            remaining = follow_up[idx] - entry[idx]
            moved = (index >= 0) & (time <= remaining)
            if np.any(~np.isfinite(remaining[~moved])):
                raise NumericalError(f"simulated stay in {state} never ends and is never censored")
            destinations = np.array(structure.destinations(state), dtype=object)
            to_state = np.full(len(idx), None, dtype=object)
            to_state[moved] = destinations[index[moved]]
            batches.append(
                pd.DataFrame(
                    {
                        "subject": idx,
                        "step": step,
                        "entry": entry[idx],
                        COL_FROM: state,
                        COL_TO: to_state,
                        COL_TIME: np.where(moved, time, remaining),
                        COL_STATUS: np.where(moved, STATUS_EVENT, STATUS_CENSORED),
                    }
                )
            )
            entry[idx[moved]] += time[moved]
            current[idx[moved]] = to_state[moved]
            active[idx[~moved]] = False
    else:
        if (active & np.isin(current, structure.transient)).any():
            raise NumericalError("simulated pathway longer than the number of states")
    rows = pd.concat(batches, ignore_index=True)
    return rows.sort_values(["subject", "step"], kind="stable").reset_index(drop=True)


def _partial_outcomes(
    rows: pd.DataFrame,
    follow_up: np.ndarray,
    fraction: float,
    death_state: str,
    rng: np.random.Generator,
) -> pd.DataFrame:
    """Turn the last row of a random share of survivors into a status-3 row.

    Discharges after the extraction date are unknown, so the stay is
    reported as ongoing up to extraction with an unknown outcome.
    """
    last = rows.groupby("subject", sort=True).tail(1)
    alive = last[last[COL_TO] != death_state]
    count = int(round(fraction * len(alive)))
    if not count:
        return rows
    chosen = rng.choice(alive.index.to_numpy(), size=count, replace=False)
    rows = rows.copy()
    subjects = rows.loc[chosen, "subject"].to_numpy()
    rows.loc[chosen, COL_TIME] = follow_up[subjects] - rows.loc[chosen, "entry"].to_numpy()
    rows.loc[chosen, COL_TO] = None
    rows.loc[chosen, COL_STATUS] = STATUS_PARTIAL
    return rows


def generate(config: SynthConfig | None = None) -> tuple[pd.DataFrame, dict[str, Any]]:
    """Simulate an observation table and the record of how it was made."""
    config = config or SynthConfig()
    fit = config.model()
    rng = named_stream(config.seed, STREAM_SIMULATE)
    covariates = _covariates(config, rng)
    if config.window is None:
        follow_up = np.full(config.n, np.inf)
    else:
        admission = rng.uniform(0.0, config.window, size=config.n)
        follow_up = config.window - admission
    Z = fit.design.encode(covariates) if fit.design.names else None
    rows = simulate_pathways(fit, Z, follow_up, rng)
    if config.window is not None and config.status3_fraction > 0:
        rows = _partial_outcomes(
            rows, follow_up, config.status3_fraction, fit.structure.death_state, rng
        )
    # time 0 is still valid input and is moved by the zero-time rule on loading
    times = rows[COL_TIME].to_numpy(float)
    rows[COL_TIME] = np.round(times) if config.round_days else times

    width = len(str(config.n))
    subjects = rows["subject"].to_numpy()
    frame = pd.DataFrame(
        {
            COL_SUBJECT: [f"S{i + 1:0{width}d}" for i in subjects],
            COL_FROM: rows[COL_FROM].to_numpy(object),
            COL_TO: rows[COL_TO].to_numpy(object),
            COL_TIME: rows[COL_TIME].to_numpy(float),
            COL_STATUS: rows[COL_STATUS].to_numpy(int),
        }
    )
    for name in covariates:
        frame[name] = covariates[name].to_numpy(object)[subjects]

    counts = frame[COL_STATUS].value_counts().to_dict()
    LOGGER.info(
        "Simulated %d subjects, %d rows (status counts %s)",
        config.n,
        len(frame),
        ", ".join(f"{k}: {v}" for k, v in sorted(counts.items())),
    )
    truth = {
        "config": config.to_dict(),
        "model": fit_to_dict(fit, config.seed),
        "scope": SCOPE_DEATH,
    }
    return frame, truth
