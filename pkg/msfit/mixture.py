"""Mixture multi-state models.

On entry to a state the next destination is drawn from a multinomial-logit
membership model; the time to get there follows a destination-specific
distribution. The likelihood factorises by from-state, and each submodel
is fitted by EM.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy import optimize, special
from scipy.linalg import block_diag

from .const import (
    COL_TO,
    COEF_CAP,
    DEFAULT_EM_MAX_ITER,
    DEFAULT_EM_TOL,
    DEFAULT_INNER_TOL,
    FRAMEWORK_MIXTURE,
    LOGGER,
    MIN_MEMBERSHIP,
    SCOPE_DEATH,
    STATUS_EVENT,
    STATUS_PARTIAL,
)
from .dist import TRANSFORM_LOGIT, DistributionSpec, LinkedDistribution
from .exceptions import (
    ConfigError,
    ConvergenceError,
    LikelihoodDomainError,
    NumericalError,
)
from .inference import (
    FittedModel,
    OptimControls,
    covariance_from_hessian,
    maximize,
    numerical_hessian,
)
from .model import (
    CovariateDesign,
    Dataset,
    ModelStructure,
    Observation,
    Transition,
    transition_key,
)

METHOD_EM = "em"
METHOD_DIRECT = "direct"


@dataclass(frozen=True)
class EmControls:
    tol: float = DEFAULT_EM_TOL
    max_iter: int = DEFAULT_EM_MAX_ITER
    inner_tol: float = DEFAULT_INNER_TOL
    method: str = METHOD_EM

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> EmControls:
        data = data or {}
        return cls(
            tol=float(data.get("tol", DEFAULT_EM_TOL)),
            max_iter=int(data.get("max_iter", DEFAULT_EM_MAX_ITER)),
            inner_tol=float(data.get("inner_tol", DEFAULT_INNER_TOL)),
            method=data.get("method", METHOD_EM),
        )


@dataclass(frozen=True)
class MembershipSpec:
    """Multinomial-logit model for the next destination."""

    reference: str | None = None
    covariates: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "covariates", tuple(self.covariates))


@dataclass(frozen=True)
class SubmodelSpec:
    """Membership model plus a conditional time distribution per destination."""

    times: Mapping[str, DistributionSpec]
    membership: MembershipSpec = field(default_factory=MembershipSpec)

    def __post_init__(self) -> None:
        object.__setattr__(self, "times", dict(self.times))

    @classmethod
    def uniform(
        cls,
        destinations: Sequence[str],
        family: str = "gengamma",
        location_covariates: Sequence[str] = (),
        membership_covariates: Sequence[str] = (),
        reference: str | None = None,
    ) -> SubmodelSpec:
        location = DistributionSpec(family).distribution.location
        links = {location: tuple(location_covariates)} if location_covariates else {}
        return cls(
            times={d: DistributionSpec(family, links=links) for d in destinations},
            membership=MembershipSpec(reference, tuple(membership_covariates)),
        )

    def validate(self, state: str, destinations: Sequence[str]) -> SubmodelSpec:
        if set(self.times) != set(destinations):
            raise ConfigError(
                f"mixture submodel {state} must give a time distribution for each of "
                f"{', '.join(destinations)}"
            )
        reference = self.membership.reference
        if reference is not None and reference not in destinations:
            raise ConfigError(f"reference destination {reference} not reachable from {state}")
        for destination, spec in self.times.items():
            if spec.cure:
                raise ConfigError(
                    f"cure fraction not allowed in mixture time model {state}->{destination}"
                )
        return self

    @property
    def label(self) -> str:
        times = "/".join(s.label for s in self.times.values())
        covariates = "+".join(self.membership.covariates) or "1"
        return f"{times} pi~{covariates}"

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "covariates": list(self.membership.covariates),
            "times": {d: s.to_dict() for d, s in self.times.items()},
        }
        if self.membership.reference:
            data["reference"] = self.membership.reference
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SubmodelSpec:
        return cls(
            times={d: DistributionSpec.from_dict(s) for d, s in data["times"].items()},
            membership=MembershipSpec(
                data.get("reference"), tuple(data.get("covariates", ()))
            ),
        )


@dataclass(frozen=True)
class MixtureModelSpec:
    submodels: Mapping[str, SubmodelSpec]

    def __post_init__(self) -> None:
        object.__setattr__(self, "submodels", dict(self.submodels))

    @classmethod
    def uniform(
        cls,
        structure: ModelStructure,
        family: str = "gengamma",
        location_covariates: Sequence[str] = (),
        membership_covariates: Sequence[str] = (),
    ) -> MixtureModelSpec:
        return cls(
            {
                r: SubmodelSpec.uniform(dests, family, location_covariates, membership_covariates)
                for r, dests in structure.submodels.items()
            }
        )

    def validate(self, structure: ModelStructure) -> MixtureModelSpec:
        for state, destinations in structure.submodels.items():
            if state not in self.submodels:
                raise ConfigError(f"mixture spec has no submodel for state {state}")
            self.submodels[state].validate(state, destinations)
        unknown = set(self.submodels) - set(structure.submodels)
        if unknown:
            raise ConfigError(f"mixture spec names non-transient state(s) {', '.join(sorted(unknown))}")
        return self

    def to_dict(self) -> dict[str, Any]:
        return {r: s.to_dict() for r, s in self.submodels.items()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> MixtureModelSpec:
        return cls({r: SubmodelSpec.from_dict(s) for r, s in data.items()})


class Membership:
    """Multinomial-logit next-state probabilities for one from-state."""

    def __init__(
        self,
        state: str,
        destinations: Sequence[str],
        spec: MembershipSpec,
        design: CovariateDesign,
        discharge_state: str | None = None,
    ) -> None:
        self.state = state
        self.destinations = tuple(destinations)
        if spec.reference is not None:
            self.reference = spec.reference
        elif discharge_state in self.destinations:
            self.reference = discharge_state
        else:
            self.reference = self.destinations[0]
        self.ref_index = self.destinations.index(self.reference)
        self.others = tuple(d for d in self.destinations if d != self.reference)
        self.other_index = np.array([self.destinations.index(d) for d in self.others], int)
        self.columns = design.columns_for(spec.covariates)
        self.width = 1 + len(self.columns)
        self.n_coef = len(self.others) * self.width
        labels = [""] + [f":{design.labels[c]}" for c in self.columns]
        self.names = tuple(f"pi:{d}{label}" for d in self.others for label in labels)
        self.transforms = (TRANSFORM_LOGIT,) * self.n_coef

    def design_matrix(self, Z=None, n: int = 1) -> np.ndarray:
        if Z is None or not len(self.columns):
            rows = n if Z is None else len(Z)
            return np.ones((rows, 1))
        return np.column_stack([np.ones(len(Z)), np.asarray(Z)[:, self.columns]])

    def logits(self, beta, Z=None) -> np.ndarray:
        X = self.design_matrix(Z)
        B = np.asarray(beta, dtype=float).reshape(len(self.others), self.width)
        eta = np.zeros((len(X), len(self.destinations)))
        eta[:, self.other_index] = X @ B.T
        return eta

    def log_probs(self, beta, Z=None) -> np.ndarray:
        return special.log_softmax(self.logits(beta, Z), axis=1)

    def probs(self, beta, Z=None) -> np.ndarray:
        return np.exp(self.log_probs(beta, Z))

    def beta_from_natural(self, values: Mapping[str, float]) -> np.ndarray:
        """Coefficients from baseline probabilities keyed by destination and
        link-scale slopes keyed by coefficient name."""
        probs = np.array([float(values.get(d, np.nan)) for d in self.destinations])
        if np.any(~np.isfinite(probs)) or np.any(probs <= 0):
            raise ConfigError(
                f"membership for {self.state} needs a positive probability for each of "
                f"{', '.join(self.destinations)}"
            )
        probs = probs / probs.sum()
        beta = np.zeros(self.n_coef)
        for i, d in enumerate(self.others):
            beta[i * self.width] = np.log(probs[self.destinations.index(d)] / probs[self.ref_index])
        for i, name in enumerate(self.names):
            if name in values:
                beta[i] = float(values[name])
        return beta

    def closed_form(self, W) -> np.ndarray:
        """Intercept-only maximum likelihood estimate from membership weights."""
        totals = np.asarray(W, dtype=float).sum(axis=0)
        probs = totals / totals.sum()
        if np.any(probs < MIN_MEMBERSHIP):
            LOGGER.warning(
                "Membership probability for %s at the boundary (%s), coefficients capped at %g",
                self.state,
                ", ".join(f"{d}={p:.2g}" for d, p in zip(self.destinations, probs)),
                COEF_CAP,
            )
        beta = np.zeros(self.n_coef)
        with np.errstate(divide="ignore"):
            for i, d in enumerate(self.others):
                beta[i * self.width] = np.log(probs[self.destinations.index(d)]) - np.log(
                    probs[self.ref_index]
                )
        return np.clip(np.nan_to_num(beta, nan=0.0), -COEF_CAP, COEF_CAP)

    def fit(self, W, Z=None, beta0=None, tol: float = DEFAULT_INNER_TOL) -> np.ndarray:
        """Weighted multinomial-logit M-step."""
        W = np.asarray(W, dtype=float)
        if not len(self.columns):
            return self.closed_form(W)
        X = self.design_matrix(Z)
        totals = W.sum(axis=1, keepdims=True)

        def objective(beta):
            return -float(np.sum(W * self.log_probs(beta, Z)))

        def gradient(beta):
            P = self.probs(beta, Z)
            resid = W - P * totals
            return -(resid[:, self.other_index].T @ X).ravel()

        beta0 = np.zeros(self.n_coef) if beta0 is None else np.asarray(beta0, dtype=float)
        res = optimize.minimize(
            objective,
            np.clip(beta0, -COEF_CAP, COEF_CAP),
            jac=gradient,
            method="L-BFGS-B",
            bounds=[(-COEF_CAP, COEF_CAP)] * self.n_coef,
            options={"gtol": tol, "maxiter": 1000},
        )
        if np.any(np.abs(res.x) >= COEF_CAP * (1 - 1e-9)):
            LOGGER.warning("Membership coefficient for %s capped at %g", self.state, COEF_CAP)
        return res.x


@dataclass(frozen=True)
class _SubData:
    """Rows leaving one state, as arrays."""

    time: np.ndarray
    status: np.ndarray
    dest: np.ndarray
    Z: np.ndarray | None
    ids: np.ndarray

    @classmethod
    def from_dataset(cls, dataset: Dataset, destinations: Sequence[str]) -> _SubData:
        to_state = dataset.frame[COL_TO].to_numpy(object)
        lookup = {d: i for i, d in enumerate(destinations)}
        dest = np.array([lookup.get(s, -1) for s in to_state], dtype=int)
        return cls(
            time=dataset.time,
            status=dataset.status,
            dest=dest,
            Z=dataset.Z if dataset.Z.shape[1] else None,
            ids=dataset.ids,
        )

    def __len__(self) -> int:
        return len(self.time)

    def rows(self, mask) -> np.ndarray | None:
        return None if self.Z is None else self.Z[mask]


def _censored_terms(logpi, logS, status, survives) -> np.ndarray:
    """Log unnormalised membership masses for censored and partial rows.

    `survives` flags destinations whose time term is dropped for status-3
    rows: those individuals are known to be alive, so the discharge route
    contributes its membership probability only.
    """
    terms = logpi + logS
    partial = status == STATUS_PARTIAL
    if partial.any():
        terms[partial] = np.where(survives, logpi[partial], terms[partial])
    return terms


class _Layout:
    """Coefficient layout of one submodel: membership first, then each
    destination's time model."""

    def __init__(
        self,
        state: str,
        spec: SubmodelSpec,
        structure: ModelStructure,
        design: CovariateDesign,
    ) -> None:
        self.state = state
        self.spec = spec
        self.destinations = structure.destinations(state)
        self.membership = Membership(
            state, self.destinations, spec.membership, design, structure.discharge_state
        )
        self.times = {d: LinkedDistribution(spec.times[d], design) for d in self.destinations}
        self.survives = np.array([d == structure.discharge_state for d in self.destinations])
        self.slices: dict[str, slice] = {}
        offset = self.membership.n_coef
        for d in self.destinations:
            self.slices[d] = slice(offset, offset + self.times[d].n_coef)
            offset += self.times[d].n_coef
        self.n_coef = offset

    @property
    def names(self) -> tuple[str, ...]:
        names = [f"{self.state}:{n}" for n in self.membership.names]
        for d in self.destinations:
            names.extend(f"{transition_key((self.state, d))}:{n}" for n in self.times[d].names)
        return tuple(names)

    @property
    def transforms(self) -> tuple[str, ...]:
        out = list(self.membership.transforms)
        for d in self.destinations:
            out.extend(self.times[d].transforms)
        return tuple(out)

    def beta(self, phi) -> np.ndarray:
        return np.asarray(phi)[: self.membership.n_coef]

    def theta(self, phi, destination: str) -> np.ndarray:
        return np.asarray(phi)[self.slices[destination]]

    def parts(self, phi, data: _SubData):
        n = len(data)
        logpi = np.broadcast_to(self.membership.log_probs(self.beta(phi), data.Z), (n, len(self.destinations)))
        logS = np.column_stack(
            [self.times[d].logsf(data.time, self.theta(phi, d), data.Z) for d in self.destinations]
        ) if n else np.zeros((0, len(self.destinations)))
        return np.array(logpi), np.broadcast_to(logS, (n, len(self.destinations)))

    def rows_loglik(self, phi, data: _SubData) -> np.ndarray:
        """Per-row mixture log-likelihood."""
        out = np.empty(len(data))
        if not len(data):
            return out
        with np.errstate(divide="ignore", invalid="ignore"):
            logpi, logS = self.parts(phi, data)
            terms = _censored_terms(logpi, logS, data.status, self.survives)
            out[:] = special.logsumexp(terms, axis=1)
            for i, d in enumerate(self.destinations):
                mask = (data.status == STATUS_EVENT) & (data.dest == i)
                if mask.any():
                    out[mask] = logpi[mask, i] + self.times[d].logpdf(
                        data.time[mask], self.theta(phi, d), data.rows(mask)
                    )
        return out

    def e_step(self, phi, data: _SubData) -> np.ndarray:
        """Posterior membership weights, one row per observation."""
        with np.errstate(divide="ignore", invalid="ignore"):
            logpi, logS = self.parts(phi, data)
            terms = _censored_terms(logpi, logS, data.status, self.survives)
            norm = special.logsumexp(terms, axis=1, keepdims=True)
        event = data.status == STATUS_EVENT
        bad = ~np.isfinite(norm[:, 0]) & ~event
        if bad.any():
            raise NumericalError(
                f"membership weights underflow for observation {data.ids[np.flatnonzero(bad)[0]]}"
            )
        W = np.exp(terms - np.where(np.isfinite(norm), norm, 0.0))
        W[event] = 0.0
        W[np.flatnonzero(event), data.dest[event]] = 1.0
        return W

    def weighted_time_loglik(self, destination: str, theta, data: _SubData, W) -> float:
        """M-step objective for one destination's time model."""
        i = self.destinations.index(destination)
        linked = self.times[destination]
        event = (data.status == STATUS_EVENT) & (data.dest == i)
        censored = (data.status != STATUS_EVENT) & (W[:, i] > 0)
        if self.survives[i]:
            censored &= data.status != STATUS_PARTIAL
        total = 0.0
        if event.any():
            total += float(np.sum(linked.logpdf(data.time[event], theta, data.rows(event))))
        if censored.any():
            total += float(
                np.sum(W[censored, i] * linked.logsf(data.time[censored], theta, data.rows(censored)))
            )
        return total

    def initial(self, data: _SubData) -> np.ndarray:
        """Membership from observed next states, times from the exact rows alone."""
        event = data.status == STATUS_EVENT
        counts = np.zeros((max(int(event.sum()), 1), len(self.destinations)))
        if event.any():
            counts[np.arange(int(event.sum())), data.dest[event]] = 1.0
        else:
            counts[:] = 1.0
        phi = np.zeros(self.n_coef)
        phi[: self.membership.n_coef] = self.membership.closed_form(counts + 1e-12)
        for i, d in enumerate(self.destinations):
            linked = self.times[d]
            mask = event & (data.dest == i)
            if not mask.any():
                LOGGER.warning("No observed transitions %s->%s", self.state, d)
                phi[self.slices[d]] = linked.initial(data.time, np.zeros(len(data), bool))
                continue
            times = data.time[mask]
            theta0 = linked.initial(times, np.ones(len(times), bool))
            result = maximize(
                lambda th: float(np.sum(linked.logpdf(times, th, data.rows(mask)))),
                theta0,
                OptimControls(gtol=DEFAULT_INNER_TOL),
                hessian=False,
                strict=False,
            )
            phi[self.slices[d]] = result.x
        return phi


@dataclass
class SubmodelFit:
    """Fitted mixture submodel for one from-state."""

    layout: _Layout
    estimate: np.ndarray
    cov: np.ndarray
    loglik: float = 0.0
    n: int = 0
    trace: list[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = True
    method: str = METHOD_EM

    @property
    def state(self) -> str:
        return self.layout.state

    @property
    def spec(self) -> SubmodelSpec:
        return self.layout.spec

    @property
    def k(self) -> int:
        return len(self.estimate)

    def with_estimate(self, phi) -> SubmodelFit:
        return replace(self, estimate=np.asarray(phi, dtype=float))

    def probs(self, Z=None) -> np.ndarray:
        return self.layout.membership.probs(self.layout.beta(self.estimate), Z)

    def time_model(self, destination: str) -> tuple[LinkedDistribution, np.ndarray]:
        return self.layout.times[destination], self.layout.theta(self.estimate, destination)


def fit_submodel(
    dataset: Dataset,
    state: str,
    spec: SubmodelSpec,
    controls: EmControls | None = None,
) -> SubmodelFit:
    """Fit the mixture submodel for `state` from the rows leaving it."""
    controls = controls or EmControls()
    structure = dataset.structure
    layout = _Layout(state, spec, structure, dataset.design)
    data = _SubData.from_dataset(dataset.from_states(state), layout.destinations)
    if not len(data):
        raise ConfigError(f"no observations from state {state}")

    def total(phi) -> float:
        return float(np.sum(layout.rows_loglik(phi, data)))

    phi = layout.initial(data)
    loglik = total(phi)
    if not np.isfinite(loglik):
        raise NumericalError(f"mixture log-likelihood for {state} not finite at initial values")
    trace = [loglik]
    converged = False
    n_iter = 0

    if controls.method == METHOD_DIRECT:
        result = maximize(total, phi, hessian=False)
        phi, loglik, n_iter, converged = result.x, result.loglik, result.n_iter, result.converged
        trace = result.trace
    elif controls.method == METHOD_EM:
        inner = OptimControls(gtol=controls.inner_tol)
        for n_iter in range(1, controls.max_iter + 1):
            W = layout.e_step(phi, data)
            phi = phi.copy()
            beta = layout.membership.fit(W, data.Z, layout.beta(phi), controls.inner_tol)
            phi[: layout.membership.n_coef] = beta
            for d in layout.destinations:
                result = maximize(
                    lambda th, d=d: layout.weighted_time_loglik(d, th, data, W),
                    layout.theta(phi, d),
                    inner,
                    hessian=False,
                    strict=False,
                )
                phi[layout.slices[d]] = result.x
            new = total(phi)
            trace.append(new)
            LOGGER.debug("EM %s iteration %d: loglik %.8f", state, n_iter, new)
            if new < loglik - 1e-8 * max(1.0, abs(loglik)):
                LOGGER.warning("EM log-likelihood for %s decreased by %.3g", state, loglik - new)
            if abs(new - loglik) <= controls.tol * max(1.0, abs(loglik)):
                loglik = new
                converged = True
                break
            loglik = new
        if not converged:
            raise ConvergenceError(
                f"EM for {state} did not converge in {controls.max_iter} iterations", trace
            )
    else:
        raise ConfigError(f"Unknown mixture fitting method '{controls.method}'")

    with np.errstate(all="ignore"):
        cov = covariance_from_hessian(numerical_hessian(total, phi))
    LOGGER.info("Mixture submodel %s: loglik %.3f after %d iterations", state, loglik, n_iter)
    return SubmodelFit(
        layout=layout,
        estimate=np.asarray(phi, dtype=float),
        cov=cov,
        loglik=loglik,
        n=len(data),
        trace=trace,
        n_iter=n_iter,
        converged=converged,
        method=controls.method,
    )


@dataclass
class MixtureFit(FittedModel):
    """Mixture multi-state fit: one `SubmodelFit` per transient state."""

    structure: ModelStructure
    design: CovariateDesign
    submodels: dict[str, SubmodelFit]
    scope: str = SCOPE_DEATH
    max_time: float | None = None
    framework: str = field(default=FRAMEWORK_MIXTURE, init=False)

    @property
    def spec(self) -> MixtureModelSpec:
        return MixtureModelSpec({r: s.spec for r, s in self.submodels.items()})

    @property
    def loglik(self) -> float:
        return float(sum(s.loglik for s in self.submodels.values()))

    @property
    def estimate(self) -> np.ndarray:
        parts = [s.estimate for s in self.submodels.values()]
        return np.concatenate(parts) if parts else np.zeros(0)

    @property
    def cov(self) -> np.ndarray:
        return block_diag(*(s.cov for s in self.submodels.values()))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for s in self.submodels.values() for n in s.layout.names)

    @property
    def transforms(self) -> tuple[str, ...]:
        return tuple(t for s in self.submodels.values() for t in s.layout.transforms)

    @property
    def traces(self) -> dict[str, list[float]]:
        return {r: list(s.trace) for r, s in self.submodels.items()}

    def with_parameters(self, theta) -> MixtureFit:
        theta = np.asarray(theta, dtype=float)
        if len(theta) != self.k:
            raise ConfigError(f"expected {self.k} coefficients, got {len(theta)}")
        submodels = {}
        offset = 0
        for r, s in self.submodels.items():
            submodels[r] = s.with_estimate(theta[offset:offset + s.k])
            offset += s.k
        return replace(self, submodels=submodels)

    @classmethod
    def from_parameters(
        cls,
        structure: ModelStructure,
        spec: MixtureModelSpec,
        parameters: Mapping[str, Mapping[str, Any]],
        design: CovariateDesign | None = None,
        scope: str = SCOPE_DEATH,
    ) -> MixtureFit:
        """A model with known parameters.

        ``parameters[state]`` holds ``"membership"`` (probability per
        destination plus optional slopes) and ``"times"`` (natural-scale
        parameters per destination).
        """
        design = design or CovariateDesign()
        spec.validate(structure)
        submodels = {}
        for r in structure.transient:
            layout = _Layout(r, spec.submodels[r], structure, design)
            values = parameters[r]
            phi = np.zeros(layout.n_coef)
            phi[: layout.membership.n_coef] = layout.membership.beta_from_natural(values["membership"])
            for d in layout.destinations:
                phi[layout.slices[d]] = layout.times[d].theta_from_natural(values["times"][d])
            submodels[r] = SubmodelFit(
                layout=layout, estimate=phi, cov=np.zeros((layout.n_coef, layout.n_coef))
            )
        return cls(structure=structure, design=design, submodels=submodels, scope=scope)

    def membership_probs(self, state: str, covariates: Mapping[str, Any] | None = None) -> dict[str, float]:
        Z = self.design.encode(covariates or {}) if self.design.names else None
        sub = self.submodels[state]
        return dict(zip(sub.layout.destinations, sub.probs(Z)[0].tolist()))

    def time_model(self, transition: Transition) -> tuple[LinkedDistribution, np.ndarray]:
        return self.submodels[transition[0]].time_model(transition[1])

    def obs_loglik(self, dataset: Dataset) -> np.ndarray:
        contributions = np.zeros(len(dataset))
        from_state = dataset.from_state
        for r, sub in self.submodels.items():
            mask = from_state == r
            if not mask.any():
                continue
            data = _SubData.from_dataset(dataset.subset(mask), sub.layout.destinations)
            contributions[mask] = sub.layout.rows_loglik(sub.estimate, data)
        bad = ~np.isfinite(contributions)
        if bad.any():
            raise LikelihoodDomainError(
                "non-finite likelihood contribution", dataset.ids[np.flatnonzero(bad)[0]]
            )
        return contributions

    def sample_next(self, state: str, rng: np.random.Generator, size: int, Z=None):
        """Destination from the membership model, then its conditional time."""
        sub = self.submodels[state]
        probs = np.broadcast_to(sub.probs(Z), (size, len(sub.layout.destinations)))
        u = rng.uniform(size=size)
        index = np.minimum((u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1), probs.shape[1] - 1)
        time = np.empty(size)
        for i, d in enumerate(sub.layout.destinations):
            mask = index == i
            count = int(mask.sum())
            if not count:
                continue
            linked, theta = sub.time_model(d)
            Zd = None if Z is None else (Z if len(Z) == 1 else Z[mask])
            time[mask] = linked.sample(theta, rng, count, Zd)
        return index, time


def fit_mixture(
    dataset: Dataset,
    spec: MixtureModelSpec,
    controls: EmControls | None = None,
    workers: int = 1,
) -> MixtureFit:
    """Fit each from-state submodel and combine."""
    structure = dataset.structure
    spec.validate(structure)
    states = structure.transient

    def run(state: str) -> SubmodelFit:
        return fit_submodel(dataset, state, spec.submodels[state], controls)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fits = list(pool.map(run, states))
    else:
        fits = [run(r) for r in states]
    fit = MixtureFit(
        structure=structure,
        design=dataset.design,
        submodels=dict(zip(states, fits)),
        scope=dataset.scope,
        max_time=dataset.max_time,
    )
    LOGGER.info("Mixture fit: loglik %.3f, k %d, AIC %.3f", fit.loglik, fit.k, fit.aic)
    return fit


def membership_probs(membership: Membership, beta, covariates=None) -> np.ndarray:
    """Next-state probabilities over ``membership.destinations``."""
    Z = None
    if covariates is not None and len(membership.columns):
        Z = np.atleast_2d(np.asarray(covariates, dtype=float))
    probs = membership.probs(beta, Z)
    return probs[0] if probs.shape[0] == 1 else probs


def _single(observation: Observation, structure: ModelStructure, params: Mapping[str, Any]):
    r = observation.from_state
    destinations = structure.destinations(r)
    values = params[r]
    pi = np.array([float(values["membership"][d]) for d in destinations])
    if np.any(pi < 0) or not np.isclose(pi.sum(), 1.0):
        raise ConfigError(f"membership probabilities for {r} must be non-negative and sum to 1")
    return r, destinations, pi, values["times"]


def _logsf_vector(spec, r, destinations, times, y) -> np.ndarray:
    return np.array(
        [float(spec.submodels[r].times[d].distribution.logsf(y, **times[d])) for d in destinations]
    )


def mix_obs_loglik(
    observation: Observation,
    structure: ModelStructure,
    spec: MixtureModelSpec,
    params: Mapping[str, Any],
) -> float:
    """Mixture log-likelihood contribution of one observation.

    ``params[state]`` carries resolved ``"membership"`` probabilities and
    ``"times"`` parameters per destination.
    """
    r, destinations, pi, times = _single(observation, structure, params)
    y = observation.time
    with np.errstate(divide="ignore"):
        logpi = np.log(pi)
        if observation.status == STATUS_EVENT:
            s = observation.to_state
            family = spec.submodels[r].times[s].distribution
            value = logpi[destinations.index(s)] + float(family.logpdf(y, **times[s]))
        else:
            survives = np.array([d == structure.discharge_state for d in destinations])
            terms = _censored_terms(
                logpi[None, :],
                _logsf_vector(spec, r, destinations, times, y)[None, :],
                np.array([observation.status]),
                survives,
            )
            value = float(special.logsumexp(terms[0]))
    if not np.isfinite(value):
        raise LikelihoodDomainError("non-finite likelihood contribution", observation.subject_id)
    return float(value)


def em_e_step(
    observation: Observation,
    structure: ModelStructure,
    spec: MixtureModelSpec,
    params: Mapping[str, Any],
) -> dict[str, float]:
    """Posterior membership weights of one observation."""
    r, destinations, pi, times = _single(observation, structure, params)
    if observation.status == STATUS_EVENT:
        return {d: float(d == observation.to_state) for d in destinations}
    survives = np.array([d == structure.discharge_state for d in destinations])
    with np.errstate(divide="ignore"):
        terms = _censored_terms(
            np.log(pi)[None, :],
            _logsf_vector(spec, r, destinations, times, observation.time)[None, :],
            np.array([observation.status]),
            survives,
        )[0]
    norm = special.logsumexp(terms)
    if not np.isfinite(norm):
        raise NumericalError(f"membership weights underflow for observation {observation.subject_id}")
    return dict(zip(destinations, np.exp(terms - norm).tolist()))
