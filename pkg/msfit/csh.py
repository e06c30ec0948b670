"""Cause-specific hazards models.

The likelihood factorises over transitions, so every transition is fitted
on its own right-censored dataset and the fits are combined afterwards.
"""

from __future__ import annotations

from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy.linalg import block_diag

from .const import FRAMEWORK_CSH, LOGGER, SCOPE_DEATH, STATUS_EVENT, STATUS_PARTIAL
from .dist import DistributionSpec, LinkedDistribution
from .exceptions import ConfigError, ConvergenceError, LikelihoodDomainError
from .inference import FittedModel, OptimControls, maximize
from .model import (
    CovariateDesign,
    Dataset,
    ModelStructure,
    Observation,
    Transition,
    TransitionDataset,
    parse_transition_key,
    split_by_transition,
    transition_key,
    transition_rows,
)


@dataclass(frozen=True)
class CshModelSpec:
    """One distribution per transition."""

    transitions: Mapping[Transition, DistributionSpec]

    def __post_init__(self) -> None:
        object.__setattr__(self, "transitions", dict(self.transitions))

    @classmethod
    def uniform(
        cls, structure: ModelStructure, family: str = "gengamma", location_covariates=()
    ) -> CshModelSpec:
        """The same family on every transition, covariates on its location."""
        location = DistributionSpec(family).distribution.location
        links = {location: tuple(location_covariates)} if location_covariates else {}
        return cls({t: DistributionSpec(family, links=links) for t in structure.transitions})

    def validate(self, structure: ModelStructure) -> CshModelSpec:
        missing = [transition_key(t) for t in structure.transitions if t not in self.transitions]
        extra = [transition_key(t) for t in self.transitions if t not in structure.transitions]
        if missing or extra:
            raise ConfigError(
                "cause-specific spec must cover each transition once"
                + (f"; missing {', '.join(missing)}" if missing else "")
                + (f"; unknown {', '.join(extra)}" if extra else "")
            )
        for transition, spec in self.transitions.items():
            if spec.cure and structure.is_certain(transition):
                raise ConfigError(
                    f"cure fraction not allowed on {transition_key(transition)}: "
                    "everyone still in the state eventually makes this transition"
                )
        return self

    def to_dict(self) -> dict[str, Any]:
        return {transition_key(t): s.to_dict() for t, s in self.transitions.items()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> CshModelSpec:
        return cls(
            {parse_transition_key(k): DistributionSpec.from_dict(v) for k, v in data.items()}
        )


@dataclass
class TransitionFit:
    """Fitted distribution for one transition.

    A transition without events is pinned: it has no parameters and zero
    intensity.
    """

    transition: Transition
    spec: DistributionSpec
    linked: LinkedDistribution
    estimate: np.ndarray
    cov: np.ndarray
    loglik: float = 0.0
    n: int = 0
    n_events: int = 0
    converged: bool = True
    n_iter: int = 0
    pinned: bool = False

    @property
    def k(self) -> int:
        return len(self.estimate)

    @property
    def names(self) -> tuple[str, ...]:
        return () if self.pinned else self.linked.names

    @property
    def transforms(self) -> tuple[str, ...]:
        return () if self.pinned else self.linked.transforms

    def with_estimate(self, theta) -> TransitionFit:
        return replace(self, estimate=np.asarray(theta, dtype=float))

    def resolve(self, Z=None) -> dict[str, np.ndarray]:
        return self.linked.resolve(self.estimate, Z)

    def logpdf(self, t, Z=None):
        if self.pinned:
            return np.full(np.shape(t), -np.inf)
        return self.linked.logpdf(t, self.estimate, Z)

    def logsf(self, t, Z=None):
        if self.pinned:
            return np.zeros(np.shape(t))
        return self.linked.logsf(t, self.estimate, Z)

    def hazard(self, t, Z=None):
        if self.pinned:
            return np.zeros(np.shape(t))
        return self.linked.hazard(t, self.estimate, Z)

    def sample(self, rng: np.random.Generator, size: int, Z=None):
        if self.pinned:
            return np.full(size, np.inf)
        return self.linked.sample(self.estimate, rng, size, Z)

    def mean(self, Z=None):
        return self.linked.mean(self.estimate, Z)

    def quantile(self, u, Z=None):
        return self.linked.quantile(u, self.estimate, Z)


def transition_loglik(linked: LinkedDistribution, theta, data: TransitionDataset):
    """Right-censored log-likelihood of one transition."""
    if not len(data):
        return 0.0
    Z = data.Z if data.Z.shape[1] else None
    logpdf = linked.logpdf(data.time[data.event], theta, _rows(Z, data.event))
    logsf = linked.logsf(data.time[~data.event], theta, _rows(Z, ~data.event))
    return float(np.sum(logpdf) + np.sum(logsf))


def _rows(Z, mask):
    return None if Z is None else Z[mask]


def fit_transition(
    data: TransitionDataset,
    spec: DistributionSpec,
    design: CovariateDesign,
    controls: OptimControls | None = None,
) -> TransitionFit:
    """Maximise the right-censored likelihood of a single transition."""
    linked = LinkedDistribution(spec, design)
    key = transition_key(data.transition)
    if data.n_events == 0:
        LOGGER.warning("No events for %s, intensity pinned to zero", key)
        return TransitionFit(
            transition=data.transition,
            spec=spec,
            linked=linked,
            estimate=np.zeros(0),
            cov=np.zeros((0, 0)),
            n=len(data),
            pinned=True,
        )
    theta0 = linked.initial(data.time, data.event)
    try:
        result = maximize(lambda theta: transition_loglik(linked, theta, data), theta0, controls)
    except ConvergenceError as exc:
        raise ConvergenceError(f"{key} ({spec.label}): {exc}", exc.trace) from exc
    LOGGER.debug(
        "Fitted %s %s: loglik %.3f in %d iterations", key, spec.label, result.loglik, result.n_iter
    )
    return TransitionFit(
        transition=data.transition,
        spec=spec,
        linked=linked,
        estimate=result.x,
        cov=result.cov,
        loglik=result.loglik,
        n=len(data),
        n_events=data.n_events,
        converged=result.converged,
        n_iter=result.n_iter,
    )


@dataclass
class CshFit(FittedModel):
    """Cause-specific hazards fit: one `TransitionFit` per transition."""

    structure: ModelStructure
    design: CovariateDesign
    transitions: dict[Transition, TransitionFit]
    scope: str = SCOPE_DEATH
    max_time: float | None = None
    framework: str = field(default=FRAMEWORK_CSH, init=False)

    @property
    def spec(self) -> CshModelSpec:
        return CshModelSpec({t: f.spec for t, f in self.transitions.items()})

    @property
    def loglik(self) -> float:
        return float(sum(f.loglik for f in self.transitions.values()))

    @property
    def estimate(self) -> np.ndarray:
        parts = [f.estimate for f in self.transitions.values()]
        return np.concatenate(parts) if parts else np.zeros(0)

    @property
    def cov(self) -> np.ndarray:
        return block_diag(*(f.cov for f in self.transitions.values()))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(
            f"{transition_key(t)}:{name}"
            for t, f in self.transitions.items()
            for name in f.names
        )

    @property
    def transforms(self) -> tuple[str, ...]:
        return tuple(x for f in self.transitions.values() for x in f.transforms)

    def with_parameters(self, theta) -> CshFit:
        """A copy with the flat coefficient vector replaced."""
        theta = np.asarray(theta, dtype=float)
        if len(theta) != self.k:
            raise ConfigError(f"expected {self.k} coefficients, got {len(theta)}")
        transitions = {}
        offset = 0
        for t, f in self.transitions.items():
            transitions[t] = f.with_estimate(theta[offset:offset + f.k])
            offset += f.k
        return replace(self, transitions=transitions)

    @classmethod
    def from_parameters(
        cls,
        structure: ModelStructure,
        spec: CshModelSpec,
        parameters: Mapping[Transition, Mapping[str, float]],
        design: CovariateDesign | None = None,
        scope: str = SCOPE_DEATH,
    ) -> CshFit:
        """A model with known parameters, e.g. a simulation truth."""
        design = design or CovariateDesign()
        spec.validate(structure)
        transitions = {}
        for t in structure.transitions:
            linked = LinkedDistribution(spec.transitions[t], design)
            theta = linked.theta_from_natural(parameters[t])
            transitions[t] = TransitionFit(
                transition=t,
                spec=spec.transitions[t],
                linked=linked,
                estimate=theta,
                cov=np.zeros((len(theta), len(theta))),
            )
        return cls(structure=structure, design=design, transitions=transitions, scope=scope)

    def resolved(self, covariates: Mapping[str, Any] | None = None) -> dict[Transition, dict]:
        """Natural-scale parameters of every transition for one profile."""
        Z = self.design.encode(covariates or {}) if self.design.names else None
        return {
            t: {k: float(v[0]) for k, v in f.resolve(Z).items()}
            for t, f in self.transitions.items()
            if not f.pinned
        }

    def obs_loglik(self, dataset: Dataset) -> np.ndarray:
        """Per-row log-likelihood contributions."""
        contributions = np.zeros(len(dataset))
        time = dataset.time
        Z = dataset.Z if dataset.Z.shape[1] else None
        for t, f in self.transitions.items():
            rows, event = transition_rows(dataset, t)
            if not len(rows):
                continue
            Zr = None if Z is None else Z[rows]
            with np.errstate(divide="ignore"):
                values = np.where(event, f.logpdf(time[rows], Zr), f.logsf(time[rows], Zr))
            contributions[rows] += values
        bad = ~np.isfinite(contributions)
        if bad.any():
            raise LikelihoodDomainError(
                "non-finite likelihood contribution", dataset.ids[np.flatnonzero(bad)[0]]
            )
        return contributions

    def sample_next(self, state: str, rng: np.random.Generator, size: int, Z=None):
        """Next destination index and time for `size` individuals in `state`.

        Latent times are drawn independently per destination; the smallest
        wins. Index -1 with time ``inf`` marks individuals who never leave.
        """
        destinations = self.structure.destinations(state)
        latent = np.column_stack(
            [
                np.broadcast_to(self.transitions[(state, s)].sample(rng, size, Z), (size,))
                for s in destinations
            ]
        )
        index = np.argmin(latent, axis=1)
        time = latent[np.arange(size), index]
        never = ~np.isfinite(time)
        return np.where(never, -1, index), np.where(never, np.inf, time)


def csh_obs_loglik(
    observation: Observation,
    structure: ModelStructure,
    spec: CshModelSpec,
    params: Mapping[Transition, Mapping[str, float]],
    scope: str = SCOPE_DEATH,
) -> float:
    """Log-likelihood contribution of one observation given resolved parameters."""
    r, y = observation.from_state, observation.time
    if observation.status == STATUS_PARTIAL:
        terms = structure.partial_destinations(r, scope)
    else:
        terms = structure.destinations(r)
    total = 0.0
    with np.errstate(divide="ignore"):
        for s in terms:
            family = spec.transitions[(r, s)].distribution
            values = params[(r, s)]
            if observation.status == STATUS_EVENT and s == observation.to_state:
                total += float(family.logpdf(y, **values))
            else:
                total += float(family.logsf(y, **values))
    if not np.isfinite(total):
        raise LikelihoodDomainError("non-finite likelihood contribution", observation.subject_id)
    return total


def fit_csh(
    dataset: Dataset,
    spec: CshModelSpec,
    controls: OptimControls | None = None,
    workers: int = 1,
) -> CshFit:
    """Fit every transition independently and combine."""
    structure = dataset.structure
    spec.validate(structure)
    parts = split_by_transition(dataset)

    def run(transition: Transition) -> TransitionFit:
        return fit_transition(parts[transition], spec.transitions[transition], dataset.design, controls)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fits = list(pool.map(run, structure.transitions))
    else:
        fits = [run(t) for t in structure.transitions]
    fit = CshFit(
        structure=structure,
        design=dataset.design,
        transitions={f.transition: f for f in fits},
        scope=dataset.scope,
        max_time=dataset.max_time,
    )
    LOGGER.info("Cause-specific hazards fit: loglik %.3f, k %d, AIC %.3f", fit.loglik, fit.k, fit.aic)
    return fit


def csh_next_event_sample(
    fit: CshFit,
    state: str,
    rng: np.random.Generator,
    covariates: Mapping[str, Any] | None = None,
    size: int | None = None,
):
    """Draw the next state and time from `state` by competing latent times.

    Returns ``(None, inf)`` when every latent time is "never". With `size`
    the result is a pair of arrays of destination names and times.
    """
    Z = fit.design.encode(covariates or {}) if fit.design.names else None
    n = 1 if size is None else int(size)
    index, time = fit.sample_next(state, rng, n, Z)
    destinations = np.array(fit.structure.destinations(state) + (None,), dtype=object)
    names = destinations[index]
    if size is None:
        return names[0], float(time[0])
    return names, time
