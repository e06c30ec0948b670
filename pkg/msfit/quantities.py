"""Derived quantities of fitted multi-state models.

Next-state probabilities, conditional lengths of stay, ultimate-outcome
probabilities and times to the ultimate outcome, with intervals from
parameter draws.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any
import warnings

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp

from .const import (
    DEFAULT_HORIZON,
    DEFAULT_S,
    FRAMEWORK_CSH,
    HORIZON_FACTOR,
    INTERVAL_LEVEL,
    LOGGER,
    LOS_QUANTILES,
    MIN_LOS_SAMPLE,
    ODE_ATOL,
    ODE_RTOL,
    ODE_T0,
    RESIDUAL_TOL,
    STREAM_QUANTITIES,
    ULTIMATE_DRAWS,
)
from .exceptions import ConfigError, MsfitError, NumericalError, StructureError
from .inference import FittedModel, ParamDraws
from .model import Transition, enumerate_pathways
from .util import named_stream


@dataclass(frozen=True)
class IntensityMatrixFunction:
    """Time-dependent generator t -> Q(t) of a (sub)model."""

    states: tuple[str, ...]
    rule: Callable[[float], np.ndarray]
    singular_at_zero: bool = False

    def __call__(self, t: float) -> np.ndarray:
        return self.rule(t)

    @classmethod
    def from_generator(cls, generator, states: Sequence[str] | None = None) -> IntensityMatrixFunction:
        """Constant generator."""
        G = np.asarray(generator, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ConfigError("generator must be a square matrix")
        names = tuple(states) if states is not None else tuple(str(i) for i in range(len(G)))
        return cls(states=names, rule=lambda t: G)

    @classmethod
    def for_submodel(cls, fit, state: str, covariates: Mapping[str, Any] | None = None):
        """Competing-risks submodel of a cause-specific hazards fit.

        The from-state is row 0; its destinations are treated as absorbing.
        """
        Z = fit.design.encode(covariates or {}) if fit.design.names else None
        destinations = fit.structure.destinations(state)
        transitions = [fit.transitions[(state, s)] for s in destinations]
        k = 1 + len(destinations)

        def rule(t: float) -> np.ndarray:
            Q = np.zeros((k, k))
            with np.errstate(all="ignore"):
                rates = np.array([float(np.ravel(f.hazard(np.array([t]), Z))[0]) for f in transitions])
            Q[0, 1:] = np.nan_to_num(rates, nan=0.0, posinf=1e300)
            Q[0, 0] = -Q[0, 1:].sum()
            return Q

        return cls(states=(state, *destinations), rule=rule, singular_at_zero=True)


@dataclass(frozen=True)
class TransitionProbMatrix:
    times: np.ndarray
    P: np.ndarray
    states: tuple[str, ...]

    def at(self, i: int) -> np.ndarray:
        return self.P[i]


def solve_forward(
    qfun: IntensityMatrixFunction,
    grid,
    rtol: float = ODE_RTOL,
    atol: float = ODE_ATOL,
    stop_residual: float | None = None,
) -> TransitionProbMatrix:
    """Integrate dP/dt = P Q(t) with P(0) = I by adaptive Runge-Kutta.

    Generators flagged singular at zero start from ``P(ODE_T0) = I``. With
    `stop_residual`, integration ends once the mass still in state 0 drops
    below it; later grid points keep the final value.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or not len(grid) or grid[0] < 0 or np.any(np.diff(grid) <= 0):
        raise ConfigError("time grid must be increasing and start at or after 0")
    k = len(qfun.states)
    t0 = ODE_T0 if qfun.singular_at_zero else 0.0
    P = np.broadcast_to(np.eye(k), (len(grid), k, k)).copy()
    later = grid > t0
    if not later.any():
        return TransitionProbMatrix(grid, P, qfun.states)

    def rhs(t, y):
        return (y.reshape(k, k) @ qfun(t)).ravel()

    events = None
    if stop_residual is not None:
        def residual(t, y):
            return y[0] - stop_residual

        residual.terminal = True
        residual.direction = -1
        events = residual

    sol = solve_ivp(
        rhs,
        (t0, float(grid[-1])),
        np.eye(k).ravel(),
        method="RK45",
        t_eval=grid[later],
        rtol=rtol,
        atol=atol,
        events=events,
    )
    if sol.status == -1:
        raise NumericalError(f"forward equation failed: {sol.message}")
    solved = np.asarray(sol.y).T.reshape(-1, k, k)
    idx = np.flatnonzero(later)
    P[idx[: len(solved)]] = solved
    if len(solved) < len(idx):
        final = sol.y_events[0][0].reshape(k, k) if events is not None and len(sol.t_events[0]) else (
            solved[-1] if len(solved) else np.eye(k)
        )
        P[idx[len(solved):]] = final
    return TransitionProbMatrix(grid, P, qfun.states)


def _horizon(fit, horizon: float | None) -> float:
    if horizon is not None:
        return float(horizon)
    if getattr(fit, "max_time", None):
        return HORIZON_FACTOR * float(fit.max_time)
    return DEFAULT_HORIZON


def next_state_probs_csh(
    fit, covariates: Mapping[str, Any] | None = None, horizon: float | None = None
) -> dict[str, dict[str, float]]:
    """Next-state probabilities as the long-run absorbed masses of each submodel."""
    cap = _horizon(fit, horizon)
    out = {}
    for state, destinations in fit.structure.submodels.items():
        qfun = IntensityMatrixFunction.for_submodel(fit, state, covariates)
        solution = solve_forward(qfun, np.array([0.0, cap]), stop_residual=RESIDUAL_TOL)
        final = solution.P[-1][0]
        residual = float(final[0])
        masses = np.clip(final[1:], 0.0, None)
        if residual > RESIDUAL_TOL:
            LOGGER.warning(
                "Residual mass %.3g remains in %s at t=%g; next-state probabilities are "
                "conditional on leaving",
                residual,
                state,
                cap,
            )
        total = masses.sum()
        if total <= 0:
            LOGGER.warning("No transitions out of %s reach any destination", state)
            out[state] = dict.fromkeys(destinations, 0.0)
            continue
        out[state] = dict(zip(destinations, (masses / total).tolist()))
    return out


def next_state_probs_mixture(fit, covariates: Mapping[str, Any] | None = None) -> dict[str, dict[str, float]]:
    return {r: fit.membership_probs(r, covariates) for r in fit.structure.transient}


def next_state_probs(fit, covariates=None, horizon=None) -> dict[str, dict[str, float]]:
    if fit.framework == FRAMEWORK_CSH:
        return next_state_probs_csh(fit, covariates, horizon)
    return next_state_probs_mixture(fit, covariates)


@dataclass(frozen=True)
class Histories:
    """Simulated pathways from the initial state.

    ``path[i]`` lists state codes visited (-1 padded); ``stage[i, j]`` is
    the time spent in ``path[i, j]`` before moving to ``path[i, j + 1]``.
    """

    states: tuple[str, ...]
    path: np.ndarray
    stage: np.ndarray

    def __len__(self) -> int:
        return len(self.path)

    @property
    def outcome(self) -> np.ndarray:
        last = (self.path >= 0).sum(axis=1) - 1
        return self.path[np.arange(len(self.path)), last]

    @property
    def total(self) -> np.ndarray:
        return np.nansum(self.stage, axis=1)

    def stage_times(self, transition: Transition) -> np.ndarray:
        r, s = (self.states.index(x) for x in transition)
        hits = (self.path[:, :-1] == r) & (self.path[:, 1:] == s)
        return self.stage[hits]


def simulate_histories(
    fit,
    covariates: Mapping[str, Any] | None,
    S: int,
    rng: np.random.Generator,
) -> Histories:
    """Simulate `S` pathways from the initial state until absorption.

    Individuals who never leave a transient state keep ``inf`` as their last
    stage time.
    """
    if S < 1:
        raise ConfigError("S must be at least 1")
    structure = fit.structure
    states = structure.states
    code = {s: i for i, s in enumerate(states)}
    width = len(states)
    Z = fit.design.encode(covariates or {}) if fit.design.names else None
    path = np.full((S, width), -1, dtype=int)
    stage = np.full((S, width - 1), np.nan)
    path[:, 0] = code[structure.initial]
    current = path[:, 0].copy()
    active = np.ones(S, dtype=bool)
    transient = {code[s] for s in structure.transient}
    for step in range(width):
        active &= np.isin(current, list(transient))
        if not active.any():
            break
        if step == width - 1:
            raise StructureError(["simulated pathway longer than the number of states"])
        for r in transient:
            idx = np.flatnonzero(active & (current == r))
            if not len(idx):
                continue
            state = states[r]
            index, time = fit.sample_next(state, rng, len(idx), Z)
            destinations = np.array([code[d] for d in structure.destinations(state)])
            moved = index >= 0
            stage[idx, step] = time
            path[idx[moved], step + 1] = destinations[index[moved]]
            current[idx[moved]] = destinations[index[moved]]
            active[idx[~moved]] = False
    return Histories(states=tuple(states), path=path, stage=stage)


@dataclass(frozen=True)
class LosSummary:
    mean: float
    median: float
    q05: float
    q95: float
    n: int | None = None
    mc_se: float = float("nan")

    def as_dict(self) -> dict[str, float]:
        return {"mean": self.mean, "median": self.median, "q05": self.q05, "q95": self.q95}


def _empirical(times: np.ndarray, label: str) -> LosSummary:
    times = times[np.isfinite(times)]
    n = len(times)
    if n < MIN_LOS_SAMPLE:
        LOGGER.warning("Only %d simulated stays for %s, summaries will be imprecise", n, label)
    if not n:
        nan = float("nan")
        return LosSummary(nan, nan, nan, nan, 0)
    lo, med, hi = np.quantile(times, LOS_QUANTILES)
    se = float(np.std(times, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return LosSummary(float(times.mean()), float(med), float(lo), float(hi), n, se)


def conditional_los(
    source, transition: Transition, covariates: Mapping[str, Any] | None = None
) -> LosSummary:
    """Time from entering r to moving to s, given that s is the next state.

    `source` is either simulated `Histories` or a fitted mixture model, whose
    conditional time distributions give the answer directly.
    """
    if isinstance(source, Histories):
        return _empirical(source.stage_times(transition), "->".join(transition))
    linked, theta = source.time_model(transition)
    Z = source.design.encode(covariates or {}) if source.design.names else None
    q = linked.quantile(np.asarray(LOS_QUANTILES), theta, Z)
    mean = float(np.ravel(linked.mean(theta, Z))[0])
    return LosSummary(mean, float(q[1]), float(q[0]), float(q[2]))


@dataclass(frozen=True)
class UltimateOutcomes:
    probs: dict[str, float]
    times: dict[str, LosSummary]
    prob_se: dict[str, float] = field(default_factory=dict)


def _outcomes(structure) -> tuple[str, ...]:
    return tuple(s for s in structure.absorbing if enumerate_pathways(structure, structure.initial, s))


def ultimate_outcomes(
    fit,
    covariates: Mapping[str, Any] | None = None,
    S: int | None = None,
    rng: np.random.Generator | None = None,
    histories: Histories | None = None,
) -> UltimateOutcomes:
    """Probability of ending in each absorbing state and the time to get there.

    Mixture models give probabilities and means analytically, with
    quantiles from simulated pathways. Cause-specific hazards models are
    summarised over simulated pathways.
    """
    structure = fit.structure
    outcomes = _outcomes(structure)
    rng = rng or np.random.default_rng()
    if fit.framework == FRAMEWORK_CSH:
        if histories is None:
            histories = simulate_histories(fit, covariates, S or DEFAULT_S, rng)
        final = histories.outcome
        total = histories.total
        n = len(histories)
        probs, se, times = {}, {}, {}
        for s in outcomes:
            hit = final == structure.states.index(s)
            p = float(hit.mean())
            probs[s] = p
            se[s] = float(np.sqrt(p * (1 - p) / n))
            times[s] = _empirical(total[hit], f"time to {s}")
        return UltimateOutcomes(probs, times, se)

    pi = next_state_probs_mixture(fit, covariates)
    draws = histories if histories is not None else simulate_histories(
        fit, covariates, S or ULTIMATE_DRAWS, rng
    )
    probs, times = {}, {}
    for s in outcomes:
        pathways = enumerate_pathways(structure, structure.initial, s)
        weights = np.array([np.prod([pi[r][d] for r, d in p]) for p in pathways])
        probs[s] = float(weights.sum())
        means = np.array([sum(conditional_los(fit, t, covariates).mean for t in p) for p in pathways])
        if probs[s] > 0:
            # pathway probabilities normalised within the pathways ending in s
            keep = weights > 0
            mean = float(np.sum(weights[keep] * means[keep]) / probs[s])
        else:
            mean = float("nan")
        empirical = _empirical(draws.total[draws.outcome == structure.states.index(s)], f"time to {s}")
        times[s] = LosSummary(mean, empirical.median, empirical.q05, empirical.q95, empirical.n, empirical.mc_se)
    return UltimateOutcomes(probs, times, dict.fromkeys(outcomes, 0.0))


def compute_quantities(
    fit,
    covariates: Mapping[str, Any] | None,
    S: int,
    rng: np.random.Generator,
    horizon: float | None = None,
) -> dict[tuple[str, str, str, str], tuple[float, float]]:
    """All quantities for one profile as ``key -> (value, Monte Carlo SE)``."""
    out: dict[tuple[str, str, str, str], tuple[float, float]] = {}
    nan = float("nan")
    for r, probs in next_state_probs(fit, covariates, horizon).items():
        for s, p in probs.items():
            out[("next_state", r, s, "prob")] = (p, nan)
    histories = simulate_histories(fit, covariates, S, rng)
    for t in fit.structure.transitions:
        summary = conditional_los(histories if fit.framework == FRAMEWORK_CSH else fit, t, covariates)
        for stat, value in summary.as_dict().items():
            out[("los", t[0], t[1], stat)] = (value, summary.mc_se if stat == "mean" else nan)
    ultimate = ultimate_outcomes(fit, covariates, S, rng, histories=histories)
    initial = fit.structure.initial
    for s, p in ultimate.probs.items():
        out[("ultimate", initial, s, "prob")] = (p, ultimate.prob_se.get(s, nan))
        summary = ultimate.times[s]
        for stat, value in summary.as_dict().items():
            out[("time_to_outcome", initial, s, stat)] = (value, summary.mc_se if stat == "mean" else nan)
    return out


def profile_label(covariates: Mapping[str, Any] | None) -> str:
    return ",".join(f"{k}={v}" for k, v in (covariates or {}).items()) or "all"


@dataclass
class QuantitySummary:
    """Long-format quantities: one row per profile, quantity and bound."""

    table: pd.DataFrame
    dropped: dict[str, int]
    B: int
    S: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "B": self.B,
            "S": self.S,
            "dropped_draws": self.dropped,
            "rows": self.table.to_dict(orient="records"),
        }


def quantities_with_intervals(
    fit: FittedModel,
    draws: ParamDraws,
    profiles: Sequence[Mapping[str, Any]] | None,
    S: int,
    seed: int,
    horizon: float | None = None,
) -> QuantitySummary:
    """Point estimates at the MLE and percentile intervals over parameter draws.

    Every evaluation reuses the same simulation stream, so identical
    parameters give identical quantities. Failing draws are dropped and
    counted.
    """
    profiles = list(profiles) if profiles else [{}]
    alpha = (1.0 - INTERVAL_LEVEL) / 2.0
    rows = []
    dropped: dict[str, int] = {}
    for profile in profiles:
        label = profile_label(profile)
        point = compute_quantities(fit, profile, S, named_stream(seed, STREAM_QUANTITIES), horizon)
        samples = []
        for b, theta in enumerate(draws.values):
            try:
                values = compute_quantities(
                    fit.with_parameters(theta), profile, S,
                    named_stream(seed, STREAM_QUANTITIES), horizon,
                )
            except (MsfitError, FloatingPointError, ValueError) as exc:
                LOGGER.warning("Dropping parameter draw %d for %s: %s", b, label, exc)
                continue
            samples.append([values.get(key, (np.nan, np.nan))[0] for key in point])
        dropped[label] = len(draws) - len(samples)
        if not samples:
            raise NumericalError(f"every parameter draw failed for profile {label}")
        matrix = np.asarray(samples, dtype=float)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            lo = np.nanquantile(matrix, alpha, axis=0)
            hi = np.nanquantile(matrix, 1.0 - alpha, axis=0)
        for j, (key, (value, se)) in enumerate(point.items()):
            quantity, r, s, stat = key
            for bound, number in (("est", value), ("lo", lo[j]), ("hi", hi[j])):
                rows.append(
                    {
                        "profile": label,
                        "quantity": quantity,
                        "from_state": r,
                        "to_state": s,
                        "statistic": stat,
                        "bound": bound,
                        "value": float(number),
                        "mc_se": float(se),
                    }
                )
    table = pd.DataFrame(
        rows,
        columns=["profile", "quantity", "from_state", "to_state", "statistic", "bound", "value", "mc_se"],
    )
    return QuantitySummary(table=table, dropped=dropped, B=len(draws), S=S)
