"""Kaplan-Meier and Aalen-Johansen estimates for goodness-of-fit checks."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .const import FRAMEWORK_CSH, LOGGER, STATUS_EVENT
from .exceptions import ConfigError, DataError
from .model import Dataset, split_by_transition
from .quantities import IntensityMatrixFunction, solve_forward

GOF_COLUMNS = ["group", "from_state", "to_state", "time", "parametric", "nonparametric", "abs_diff"]
HISTOGRAM_COLUMNS = [
    "from_state",
    "to_state",
    "bin_lo",
    "bin_hi",
    "mid",
    "observed",
    "observed_density",
    "fitted_density",
]


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function, undefined beyond `horizon`."""

    times: np.ndarray
    values: np.ndarray
    initial: float
    horizon: float = np.inf

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        padded = np.concatenate([[self.initial], self.values])
        out = padded[idx + 1]
        return np.where(t > self.horizon, np.nan, out)


def _counts(times: np.ndarray, events: np.ndarray):
    """Distinct times, event counts and at-risk counts (events before censorings)."""
    if not len(times):
        return np.zeros(0), np.zeros(0), np.zeros(0, dtype=int)
    order = np.argsort(times, kind="stable")
    times, events = times[order], events[order]
    unique, first, counts = np.unique(times, return_index=True, return_counts=True)
    d = np.add.reduceat(events.astype(float), first)
    at_risk = len(times) - np.concatenate([[0], np.cumsum(counts)[:-1]])
    return unique, d, at_risk


def kaplan_meier(times, events) -> StepFunction:
    """Product-limit survival estimate."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    if not len(times):
        raise DataError("Kaplan-Meier needs at least one observation")
    if np.any(times <= 0):
        raise DataError("Kaplan-Meier times must be positive")
    unique, d, at_risk = _counts(times, events)
    jumps = d > 0
    survival = np.cumprod(1.0 - d[jumps] / at_risk[jumps])
    return StepFunction(unique[jumps], survival, 1.0, float(times.max()))


@dataclass(frozen=True)
class AalenJohansen:
    """Cumulative incidence per destination and the probability of staying."""

    state: str
    cif: dict[str, StepFunction]
    stay: StepFunction


def aalen_johansen(dataset: Dataset, state: str) -> AalenJohansen:
    """Competing-risks Aalen-Johansen estimate for the rows leaving `state`.

    Each destination has its own risk set, so a status-3 row is at risk
    only for the destinations its censoring applies to.
    """
    structure = dataset.structure
    destinations = structure.destinations(state)
    if not destinations:
        raise ConfigError(f"{state} has no outgoing transitions")
    rows = dataset.from_state == state
    if not rows.any():
        raise DataError(f"no observations from {state}")
    horizon = float(dataset.time[rows].max())
    parts = split_by_transition(dataset)
    grid = np.unique(dataset.time[rows])
    increments = []
    for s in destinations:
        data = parts[(state, s)]
        unique, d, at_risk = _counts(data.time, data.event)
        dA = np.zeros(len(grid))
        pos = np.searchsorted(grid, unique)
        with np.errstate(invalid="ignore", divide="ignore"):
            dA[pos] = np.where(at_risk > 0, d / at_risk, 0.0)
        increments.append(dA)
    dA = np.column_stack(increments)
    total = dA.sum(axis=1)
    if np.any(total > 1.0):
        LOGGER.warning("Aalen-Johansen increments exceed one for %s, truncating", state)
        scale = np.where(total > 1.0, 1.0 / np.where(total > 0, total, 1.0), 1.0)
        dA = dA * scale[:, None]
        total = dA.sum(axis=1)
    stay = np.cumprod(1.0 - total)
    before = np.concatenate([[1.0], stay[:-1]])
    cif = np.cumsum(before[:, None] * dA, axis=0)
    jumps = total > 0
    if not jumps.any():
        LOGGER.warning("No events from %s, Aalen-Johansen estimate is flat", state)
    times = grid[jumps]
    return AalenJohansen(
        state=state,
        cif={
            s: StepFunction(times, cif[jumps, i], 0.0, horizon)
            for i, s in enumerate(destinations)
        },
        stay=StepFunction(times, stay[jumps], 1.0, horizon),
    )


def _group_masks(dataset: Dataset, grouping: Sequence[str]):
    labels = dataset.group_labels(grouping).to_numpy(object)
    for label in sorted(set(labels)):
        yield label, labels == label


def _profiles(dataset: Dataset, mask) -> list[tuple[dict, int]]:
    """Distinct covariate profiles among the masked rows, with counts."""
    names = list(dataset.design.names)
    if not names:
        return [({}, int(np.sum(mask)))]
    frame = dataset.frame.loc[np.asarray(mask), names].astype(str)
    counts = frame.value_counts(sort=False)
    return [(dict(zip(names, key if isinstance(key, tuple) else (key,))), int(n)) for key, n in counts.items()]


def parametric_incidence(fit, state: str, covariates, grid) -> dict[str, np.ndarray]:
    """Model probability of having moved from `state` to each destination by t."""
    grid = np.asarray(grid, dtype=float)
    destinations = fit.structure.destinations(state)
    if fit.framework == FRAMEWORK_CSH:
        qfun = IntensityMatrixFunction.for_submodel(fit, state, covariates)
        P = solve_forward(qfun, grid).P
        return {s: P[:, 0, i + 1] for i, s in enumerate(destinations)}
    probs = fit.membership_probs(state, covariates)
    Z = fit.design.encode(covariates) if fit.design.names else None
    positive = grid > 0
    out = {}
    for s in destinations:
        linked, theta = fit.time_model((state, s))
        values = np.zeros(len(grid))
        if positive.any():
            values[positive] = probs[s] * linked.cdf(grid[positive], theta, Z)
        out[s] = values
    return out


def _grid(dataset: Dataset, state: str, grid) -> np.ndarray:
    if grid is not None:
        return np.asarray(grid, dtype=float)
    times = dataset.time[dataset.from_state == state]
    return np.linspace(0.0, float(times.max()) if len(times) else 1.0, 51)


def gof_table(fit, dataset: Dataset, grid=None, grouping: Sequence[str] = ()) -> pd.DataFrame:
    """Parametric against Aalen-Johansen cumulative incidence, per subgroup.

    Parametric curves are averaged over the covariate profiles in each
    group; Aalen-Johansen values beyond the last follow-up are missing.
    """
    rows = []
    for label, mask in _group_masks(dataset, grouping):
        group = dataset.subset(mask)
        for state in dataset.structure.transient:
            from_mask = group.from_state == state
            if not from_mask.any():
                continue
            t = _grid(dataset, state, grid)
            aj = aalen_johansen(group, state)
            weighted = {s: np.zeros(len(t)) for s in aj.cif}
            profiles = _profiles(group, from_mask)
            n = sum(c for _, c in profiles)
            for profile, count in profiles:
                for s, curve in parametric_incidence(fit, state, profile, t).items():
                    weighted[s] += count / n * curve
            for s, curve in aj.cif.items():
                observed = curve(t)
                for ti, p, o in zip(t, weighted[s], observed):
                    rows.append(
                        {
                            "group": label,
                            "from_state": state,
                            "to_state": s,
                            "time": float(ti),
                            "parametric": float(p),
                            "nonparametric": float(o),
                            "abs_diff": float(abs(p - o)),
                        }
                    )
    return pd.DataFrame(rows, columns=GOF_COLUMNS)


def _row_average(fn, t, Z) -> np.ndarray:
    """Average ``fn(t, z)`` over the rows of `Z`, one call per distinct row."""
    if Z is None or not Z.shape[1]:
        return np.asarray(fn(t, None), dtype=float)
    unique, counts = np.unique(Z, axis=0, return_counts=True)
    total = np.zeros(len(t))
    for z, c in zip(unique, counts):
        total += c * np.asarray(fn(t, z[None, :]), dtype=float)
    return total / counts.sum()


def km_table(fit, dataset: Dataset, grid=None, grouping: Sequence[str] = ()) -> pd.DataFrame:
    """Kaplan-Meier against fitted latent survival for every transition.

    The fitted survival is averaged over the rows at risk for the transition.
    """
    if fit.framework != FRAMEWORK_CSH:
        raise ConfigError("Kaplan-Meier comparison needs a cause-specific hazards fit")
    rows = []
    for label, mask in _group_masks(dataset, grouping):
        group = dataset.subset(mask)
        for transition, data in split_by_transition(group).items():
            if not len(data):
                continue
            t = _grid(dataset, transition[0], grid)
            observed = kaplan_meier(data.time, data.event)(t)
            tf = fit.transitions[transition]
            fitted = np.ones(len(t))
            positive = t > 0
            if positive.any():
                fitted[positive] = _row_average(
                    lambda x, z: np.exp(tf.logsf(x, z)), t[positive], data.Z
                )
            for ti, p, o in zip(t, fitted, observed):
                rows.append(
                    {
                        "group": label,
                        "from_state": transition[0],
                        "to_state": transition[1],
                        "time": float(ti),
                        "parametric": float(p),
                        "nonparametric": float(o),
                        "abs_diff": float(abs(p - o)),
                    }
                )
    return pd.DataFrame(rows, columns=GOF_COLUMNS)


def histogram_table(fit, dataset: Dataset, bins: int = 20) -> pd.DataFrame:
    """Observed exact transition times against fitted conditional densities.

    Counts bin the status-1 times by destination; the fitted density is
    averaged over those rows' covariates at each bin midpoint.
    """
    if fit.framework == FRAMEWORK_CSH:
        raise ConfigError("histogram comparison needs a mixture fit")
    rows = []
    status = dataset.status
    to_state = dataset.to_state
    for state, destinations in dataset.structure.submodels.items():
        for s in destinations:
            mask = (dataset.from_state == state) & (status == STATUS_EVENT) & (to_state == s)
            times = dataset.time[mask]
            if not len(times):
                continue
            counts, edges = np.histogram(times, bins=bins)
            mids = 0.5 * (edges[:-1] + edges[1:])
            width = np.diff(edges)
            linked, theta = fit.time_model((state, s))
            density = _row_average(
                lambda x, z: np.exp(linked.logpdf(x, theta, z)), mids, dataset.Z[mask]
            )
            for lo, hi, mid, c, w, f in zip(edges[:-1], edges[1:], mids, counts, width, density):
                rows.append(
                    {
                        "from_state": state,
                        "to_state": s,
                        "bin_lo": float(lo),
                        "bin_hi": float(hi),
                        "mid": float(mid),
                        "observed": int(c),
                        "observed_density": float(c / (len(times) * w)) if w > 0 else np.nan,
                        "fitted_density": float(f),
                    }
                )
    return pd.DataFrame(rows, columns=HISTOGRAM_COLUMNS)
