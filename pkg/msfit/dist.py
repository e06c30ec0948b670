"""Parametric time-to-event distributions.

Every family works on numpy arrays and broadcasts its parameters against
the time argument, so one call evaluates a whole likelihood block. The
generalized gamma follows Prentice's (mu, sigma, Q) parameterisation, with
the log-normal as its Q = 0 limit. Any family can be wrapped in a mixture
cure law with cure probability ``p``.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
import math
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy import special

from .const import Q_ZERO_TOL
from .exceptions import ConfigError, DomainError

if TYPE_CHECKING:
    from .model import CovariateDesign

TRANSFORM_IDENTITY = "identity"
TRANSFORM_LOG = "log"
TRANSFORM_LOGIT = "logit"

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_STIRLING_SWITCH = 1e6


def to_link(value, transform: str):
    """Map a natural-scale value onto its unrestricted link scale."""
    value = np.asarray(value, dtype=float)
    if transform == TRANSFORM_LOG:
        return np.log(value)
    if transform == TRANSFORM_LOGIT:
        return special.logit(value)
    return value


def from_link(value, transform: str):
    """Inverse of `to_link`."""
    value = np.asarray(value, dtype=float)
    if transform == TRANSFORM_LOG:
        return np.exp(value)
    if transform == TRANSFORM_LOGIT:
        return special.expit(value)
    return value


def _check_time(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("time must be positive")
    return t


def _check_positive(name: str, value) -> np.ndarray:
    value = np.asarray(value, dtype=float)
    if np.any(~(value > 0)) or np.any(~np.isfinite(value)):
        raise DomainError(f"{name} must be positive and finite")
    return value


def _check_probability(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if np.any(~((u > 0) & (u < 1))):
        raise DomainError("probability must lie strictly between 0 and 1")
    return u


class Family:
    """A parametric time-to-event family.

    Subclasses implement the vectorised kernels; parameters are passed as
    keyword arrays on the natural scale.
    """

    name: str
    parameters: tuple[str, ...]
    transforms: tuple[str, ...]
    location: str

    def validate(self, **params) -> None:
        for name, transform in zip(self.parameters, self.transforms):
            value = np.asarray(params[name], dtype=float)
            if not np.all(np.isfinite(value)):
                raise DomainError(f"{self.name}: {name} must be finite")
            if transform == TRANSFORM_LOG:
                _check_positive(name, value)

    def logpdf(self, t, **params):
        raise NotImplementedError

    def logsf(self, t, **params):
        raise NotImplementedError

    def cdf(self, t, **params):
        return -np.expm1(self.logsf(t, **params))

    def sf(self, t, **params):
        return np.exp(self.logsf(t, **params))

    def pdf(self, t, **params):
        return np.exp(self.logpdf(t, **params))

    def hazard(self, t, **params):
        with np.errstate(over="ignore", invalid="ignore"):
            return np.exp(self.logpdf(t, **params) - self.logsf(t, **params))

    def quantile(self, u, **params):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size, **params):
        return self.quantile(rng.uniform(size=size), **params)

    def mean(self, **params):
        raise NotImplementedError

    def initial(self, rate: float, mean_time: float) -> dict[str, float]:
        """Starting values given a crude exponential rate estimate."""
        raise NotImplementedError


class GenGamma(Family):
    name = "gengamma"
    parameters = ("mu", "sigma", "Q")
    transforms = (TRANSFORM_IDENTITY, TRANSFORM_LOG, TRANSFORM_IDENTITY)
    location = "mu"

    @staticmethod
    def _parts(t, mu, sigma, Q):
        t, mu, sigma, Q = np.broadcast_arrays(
            np.asarray(t, float), np.asarray(mu, float),
            np.asarray(sigma, float), np.asarray(Q, float),
        )
        w = (np.log(t) - mu) / sigma
        small = np.abs(Q) < Q_ZERO_TOL
        q = np.where(small, 1.0, Q)
        a = 1.0 / q**2
        with np.errstate(over="ignore"):
            u = a * np.exp(q * w)
        return t, w, sigma, small, q, a, u

    def logpdf(self, t, mu, sigma, Q):
        t = _check_time(t)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            t, w, sigma, small, q, a, _ = self._parts(t, mu, sigma, Q)
            # a log a - a - lgamma(a), computed without cancellation for large a
            norm_const = np.where(
                a > _STIRLING_SWITCH,
                0.5 * np.log(a) - _LOG_SQRT_2PI - 1.0 / (12.0 * a),
                a * np.log(a) - a - special.gammaln(a),
            )
            qw = q * w
            kernel = norm_const - a * (np.expm1(qw) - qw)
            gg = np.log(np.abs(q)) + kernel
            ln = -0.5 * w**2 - _LOG_SQRT_2PI
            return np.where(small, ln, gg) - np.log(sigma) - np.log(t)

    def cdf(self, t, mu, sigma, Q):
        t = _check_time(t)
        with np.errstate(over="ignore", invalid="ignore"):
            _, w, _, small, q, a, u = self._parts(t, mu, sigma, Q)
            gg = np.where(q > 0, special.gammainc(a, u), special.gammaincc(a, u))
            return np.where(small, special.ndtr(w), gg)

    def logsf(self, t, mu, sigma, Q):
        t = _check_time(t)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            _, w, _, small, q, a, u = self._parts(t, mu, sigma, Q)
            gg = np.log(np.where(q > 0, special.gammaincc(a, u), special.gammainc(a, u)))
            return np.where(small, special.log_ndtr(-w), gg)

    def sf(self, t, mu, sigma, Q):
        return np.exp(self.logsf(t, mu=mu, sigma=sigma, Q=Q))

    def quantile(self, u, mu, sigma, Q):
        u = _check_probability(u)
        u, mu, sigma, Q = np.broadcast_arrays(
            u, np.asarray(mu, float), np.asarray(sigma, float), np.asarray(Q, float)
        )
        small = np.abs(Q) < Q_ZERO_TOL
        q = np.where(small, 1.0, Q)
        a = 1.0 / q**2
        g = np.where(q > 0, special.gammaincinv(a, u), special.gammainccinv(a, u))
        with np.errstate(divide="ignore"):
            w = np.where(small, special.ndtri(u), np.log(g / a) / q)
        return np.exp(mu + sigma * w)

    def sample(self, rng, size, mu, sigma, Q):
        mu, sigma, Q = np.broadcast_arrays(
            np.asarray(mu, float), np.asarray(sigma, float), np.asarray(Q, float)
        )
        size = np.broadcast_shapes(np.shape(mu), _as_shape(size))
        mu, sigma, Q = (np.broadcast_to(x, size) for x in (mu, sigma, Q))
        small = np.abs(Q) < Q_ZERO_TOL
        q = np.where(small, 1.0, Q)
        a = 1.0 / q**2
        # U = a exp(Q w) is Gamma(a, 1) for either sign of Q
        g = rng.standard_gamma(a)
        z = rng.standard_normal(size)
        with np.errstate(divide="ignore"):
            w = np.where(small, z, np.log(g / a) / q)
        return np.exp(mu + sigma * w)

    def mean(self, mu, sigma, Q):
        mu, sigma, Q = np.broadcast_arrays(
            np.asarray(mu, float), np.asarray(sigma, float), np.asarray(Q, float)
        )
        small = np.abs(Q) < Q_ZERO_TOL
        q = np.where(small, 1.0, Q)
        a = 1.0 / q**2
        c = sigma / q
        finite = a + c > 0
        with np.errstate(invalid="ignore", over="ignore"):
            gg = np.where(
                finite,
                np.exp(mu + c * np.log(q**2)
                       + special.gammaln(np.where(finite, a + c, 1.0))
                       - special.gammaln(a)),
                np.inf,
            )
        return np.where(small, np.exp(mu + 0.5 * sigma**2), gg)

    def initial(self, rate, mean_time):
        return {"mu": math.log(mean_time), "sigma": 1.0, "Q": 1.0}


class Gamma(Family):
    name = "gamma"
    parameters = ("shape", "rate")
    transforms = (TRANSFORM_LOG, TRANSFORM_LOG)
    location = "rate"

    def logpdf(self, t, shape, rate):
        t = _check_time(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            return (shape * np.log(rate) + (shape - 1.0) * np.log(t)
                    - rate * t - special.gammaln(shape))

    def cdf(self, t, shape, rate):
        t = _check_time(t)
        return special.gammainc(shape, rate * t)

    def logsf(self, t, shape, rate):
        t = _check_time(t)
        with np.errstate(divide="ignore"):
            return np.log(special.gammaincc(shape, rate * t))

    def quantile(self, u, shape, rate):
        u = _check_probability(u)
        return special.gammaincinv(shape, u) / rate

    def sample(self, rng, size, shape, rate):
        shape, rate = np.broadcast_arrays(np.asarray(shape, float), np.asarray(rate, float))
        size = np.broadcast_shapes(np.shape(shape), _as_shape(size))
        return rng.standard_gamma(np.broadcast_to(shape, size)) / np.broadcast_to(rate, size)

    def mean(self, shape, rate):
        return np.asarray(shape, float) / np.asarray(rate, float)

    def initial(self, rate, mean_time):
        return {"shape": 1.0, "rate": rate}


class Weibull(Family):
    name = "weibull"
    parameters = ("shape", "scale")
    transforms = (TRANSFORM_LOG, TRANSFORM_LOG)
    location = "scale"

    def logpdf(self, t, shape, scale):
        t = _check_time(t)
        z = np.log(t) - np.log(scale)
        with np.errstate(over="ignore"):
            return np.log(shape) - np.log(scale) + (shape - 1.0) * z - np.exp(shape * z)

    def logsf(self, t, shape, scale):
        t = _check_time(t)
        with np.errstate(over="ignore"):
            return -np.exp(shape * (np.log(t) - np.log(scale)))

    def quantile(self, u, shape, scale):
        u = _check_probability(u)
        return scale * (-np.log1p(-u)) ** (1.0 / shape)

    def sample(self, rng, size, shape, scale):
        shape, scale = np.broadcast_arrays(np.asarray(shape, float), np.asarray(scale, float))
        size = np.broadcast_shapes(np.shape(shape), _as_shape(size))
        e = rng.standard_exponential(size)
        return np.broadcast_to(scale, size) * e ** (1.0 / np.broadcast_to(shape, size))

    def mean(self, shape, scale):
        shape = np.asarray(shape, float)
        return np.asarray(scale, float) * np.exp(special.gammaln(1.0 + 1.0 / shape))

    def initial(self, rate, mean_time):
        return {"shape": 1.0, "scale": mean_time}


class LogNormal(Family):
    name = "lognormal"
    parameters = ("meanlog", "sdlog")
    transforms = (TRANSFORM_IDENTITY, TRANSFORM_LOG)
    location = "meanlog"

    def logpdf(self, t, meanlog, sdlog):
        t = _check_time(t)
        w = (np.log(t) - meanlog) / sdlog
        return -0.5 * w**2 - _LOG_SQRT_2PI - np.log(sdlog) - np.log(t)

    def cdf(self, t, meanlog, sdlog):
        t = _check_time(t)
        return special.ndtr((np.log(t) - meanlog) / sdlog)

    def logsf(self, t, meanlog, sdlog):
        t = _check_time(t)
        return special.log_ndtr(-(np.log(t) - meanlog) / sdlog)

    def quantile(self, u, meanlog, sdlog):
        u = _check_probability(u)
        return np.exp(meanlog + sdlog * special.ndtri(u))

    def sample(self, rng, size, meanlog, sdlog):
        meanlog, sdlog = np.broadcast_arrays(np.asarray(meanlog, float), np.asarray(sdlog, float))
        size = np.broadcast_shapes(np.shape(meanlog), _as_shape(size))
        return np.exp(np.broadcast_to(meanlog, size)
                      + np.broadcast_to(sdlog, size) * rng.standard_normal(size))

    def mean(self, meanlog, sdlog):
        return np.exp(np.asarray(meanlog, float) + 0.5 * np.asarray(sdlog, float) ** 2)

    def initial(self, rate, mean_time):
        return {"meanlog": math.log(mean_time) - 0.5, "sdlog": 1.0}


class Exponential(Family):
    name = "exponential"
    parameters = ("rate",)
    transforms = (TRANSFORM_LOG,)
    location = "rate"

    def logpdf(self, t, rate):
        t = _check_time(t)
        return np.log(rate) - rate * t

    def logsf(self, t, rate):
        t = _check_time(t)
        return -rate * t

    def quantile(self, u, rate):
        u = _check_probability(u)
        return -np.log1p(-u) / rate

    def sample(self, rng, size, rate):
        rate = np.asarray(rate, float)
        size = np.broadcast_shapes(np.shape(rate), _as_shape(size))
        return rng.standard_exponential(size) / np.broadcast_to(rate, size)

    def mean(self, rate):
        return 1.0 / np.asarray(rate, float)

    def initial(self, rate, mean_time):
        return {"rate": rate}


class Cure(Family):
    """Mixture cure wrapper: Pr(T <= t) = (1 - p) F(t)."""

    def __init__(self, base: Family) -> None:
        self.base = base
        self.name = f"{base.name}-cure"
        self.parameters = base.parameters + ("p",)
        self.transforms = base.transforms + (TRANSFORM_LOGIT,)
        self.location = base.location

    @staticmethod
    def _split(params):
        params = dict(params)
        p = np.asarray(params.pop("p"), dtype=float)
        if np.any(~((p >= 0) & (p <= 1))):
            raise DomainError("cure probability must lie in [0, 1]")
        return p, params

    def validate(self, **params):
        p, base = self._split(params)
        self.base.validate(**base)

    def logpdf(self, t, **params):
        p, base = self._split(params)
        with np.errstate(divide="ignore"):
            return np.log1p(-p) + self.base.logpdf(t, **base)

    def logsf(self, t, **params):
        p, base = self._split(params)
        with np.errstate(divide="ignore"):
            return np.logaddexp(np.log(p), np.log1p(-p) + self.base.logsf(t, **base))

    def cdf(self, t, **params):
        p, base = self._split(params)
        return (1.0 - p) * self.base.cdf(t, **base)

    def quantile(self, u, **params):
        p, base = self._split(params)
        u = _check_probability(u)
        u, p = np.broadcast_arrays(u, p)
        reachable = u < 1.0 - p
        inner = np.where(reachable, u / np.where(reachable, 1.0 - p, 1.0), 0.5)
        return np.where(reachable, self.base.quantile(inner, **base), np.inf)

    def sample(self, rng, size, **params):
        p, base = self._split(params)
        size = np.broadcast_shapes(np.shape(p), _as_shape(size))
        cured = rng.uniform(size=size) < p
        times = self.base.sample(rng, size, **base)
        return np.where(cured, np.inf, times)

    def mean(self, **params):
        p, base = self._split(params)
        return np.where(p > 0, np.inf, self.base.mean(**base))

    def initial(self, rate, mean_time):
        return self.base.initial(rate, mean_time)


FAMILIES: dict[str, Family] = {
    f.name: f for f in (GenGamma(), Gamma(), Weibull(), LogNormal(), Exponential())
}
ALIASES = {
    "generalized-gamma": "gengamma",
    "generalised-gamma": "gengamma",
    "log-normal": "lognormal",
    "lnorm": "lognormal",
    "exp": "exponential",
}


def get_family(name: str, cure: bool = False) -> Family:
    """Look up a family by name, optionally cure-wrapped."""
    key = ALIASES.get(name, name)
    if key not in FAMILIES:
        raise ConfigError(
            f"Unknown distribution family '{name}', expected one of {sorted(FAMILIES)}"
        )
    family = FAMILIES[key]
    return Cure(family) if cure else family


def _as_shape(size) -> tuple[int, ...]:
    if size is None:
        return ()
    if isinstance(size, (int, np.integer)):
        return (int(size),)
    return tuple(size)


@dataclass(frozen=True)
class GenGammaParams:
    """Prentice generalized gamma parameters."""

    mu: float
    sigma: float
    Q: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.mu, self.sigma, self.Q)):
            raise DomainError("generalized gamma parameters must be finite")
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")

    def as_dict(self) -> dict[str, float]:
        return {"mu": self.mu, "sigma": self.sigma, "Q": self.Q}


@dataclass(frozen=True)
class CureParams:
    """Cure probability plus parameters of the wrapped distribution."""

    p: float
    base: Mapping[str, float]

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise DomainError("cure probability must lie in [0, 1]")

    def as_dict(self) -> dict[str, float]:
        return {**self.base, "p": self.p}


@dataclass(frozen=True)
class DistributionSpec:
    """A family, an optional cure wrapper and covariate links per parameter."""

    family: str
    cure: bool = False
    links: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        family = get_family(self.family, self.cure)
        object.__setattr__(self, "family", ALIASES.get(self.family, self.family))
        links = {k: tuple(v) for k, v in dict(self.links).items() if v}
        for parameter in links:
            if parameter not in family.parameters:
                raise ConfigError(
                    f"{family.name} has no parameter '{parameter}' "
                    f"(parameters: {', '.join(family.parameters)})"
                )
        object.__setattr__(self, "links", links)

    @property
    def distribution(self) -> Family:
        return get_family(self.family, self.cure)

    @property
    def covariates(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for names in self.links.values():
            seen.update(dict.fromkeys(names))
        return tuple(seen)

    @property
    def label(self) -> str:
        name = self.distribution.name
        if not self.links:
            return name
        parts = [f"{p}:{'+'.join(v)}" for p, v in self.links.items()]
        return f"{name}[{','.join(parts)}]"

    def to_dict(self) -> dict[str, Any]:
        return {
            "family": self.family,
            "cure": self.cure,
            "links": {k: list(v) for k, v in self.links.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> DistributionSpec:
        return cls(
            family=data["family"],
            cure=bool(data.get("cure", False)),
            links={k: tuple(v) for k, v in (data.get("links") or {}).items()},
        )


class LinkedDistribution:
    """A `DistributionSpec` bound to a covariate design.

    The coefficient vector holds, for each parameter in family order, the
    baseline on the parameter's link scale followed by one coefficient per
    design column of the linked covariates.
    """

    def __init__(self, spec: DistributionSpec, design: CovariateDesign) -> None:
        self.spec = spec
        self.family = spec.distribution
        self.design = design
        self.blocks: list[tuple[str, str, slice, np.ndarray]] = []
        names: list[str] = []
        transforms: list[str] = []
        offset = 0
        for parameter, transform in zip(self.family.parameters, self.family.transforms):
            columns = design.columns_for(spec.links.get(parameter, ()))
            width = 1 + len(columns)
            self.blocks.append((parameter, transform, slice(offset, offset + width), columns))
            names.append(parameter)
            names.extend(f"{parameter}:{design.labels[c]}" for c in columns)
            transforms.extend([transform] * width)
            offset += width
        self.names = tuple(names)
        self.transforms = tuple(transforms)
        self.n_coef = offset

    def resolve(self, theta, Z=None) -> dict[str, np.ndarray]:
        """Natural-scale parameters, one value per row of `Z`."""
        theta = np.asarray(theta, dtype=float)
        resolved = {}
        for parameter, transform, block, columns in self.blocks:
            coefs = theta[block]
            eta = np.atleast_1d(coefs[0])
            if len(columns):
                if Z is None:
                    raise ConfigError(
                        f"parameter '{parameter}' needs covariates "
                        f"{', '.join(self.spec.links[parameter])}"
                    )
                eta = coefs[0] + np.asarray(Z)[:, columns] @ coefs[1:]
            resolved[parameter] = from_link(eta, transform)
        return resolved

    def logpdf(self, t, theta, Z=None):
        return self.family.logpdf(t, **self.resolve(theta, Z))

    def logsf(self, t, theta, Z=None):
        return self.family.logsf(t, **self.resolve(theta, Z))

    def cdf(self, t, theta, Z=None):
        return self.family.cdf(t, **self.resolve(theta, Z))

    def hazard(self, t, theta, Z=None):
        return self.family.hazard(t, **self.resolve(theta, Z))

    def quantile(self, u, theta, Z=None):
        return self.family.quantile(u, **self.resolve(theta, Z))

    def mean(self, theta, Z=None):
        return self.family.mean(**self.resolve(theta, Z))

    def sample(self, theta, rng, size=None, Z=None):
        return self.family.sample(rng, size, **self.resolve(theta, Z))

    def theta_from_natural(self, values: Mapping[str, float]) -> np.ndarray:
        """Coefficient vector from natural-scale baselines and link-scale slopes.

        Baselines are keyed by parameter name (``"sigma"``), slopes by
        coefficient name (``"mu:gender=M"``); omitted slopes are zero.
        """
        unknown = sorted(set(values) - set(self.names))
        if unknown:
            raise ConfigError(
                f"Unknown coefficient(s) {', '.join(unknown)} for {self.spec.label}; "
                f"expected {', '.join(self.names)}"
            )
        theta = np.zeros(self.n_coef)
        for parameter, transform, block, _ in self.blocks:
            if parameter not in values:
                raise ConfigError(f"Missing value for parameter '{parameter}' of {self.spec.label}")
            theta[block.start] = float(to_link(values[parameter], transform))
        for i, name in enumerate(self.names):
            if ":" in name and name in values:
                theta[i] = float(values[name])
        return theta

    def natural_baselines(self, theta) -> dict[str, float]:
        theta = np.asarray(theta, dtype=float)
        return {
            parameter: float(from_link(theta[block.start], transform))
            for parameter, transform, block, _ in self.blocks
        }

    def initial(self, times, events, weights=None) -> np.ndarray:
        """Starting coefficients: baselines from a crude rate, slopes zero."""
        times = np.asarray(times, dtype=float)
        events = np.asarray(events, dtype=bool)
        weights = np.ones_like(times) if weights is None else np.asarray(weights, float)
        n_events = max(float(np.sum(weights[events])), 0.5)
        if isinstance(self.family, Cure):
            exposure = max(float(np.sum((weights * times)[events])), 1e-8)
            cure = float(np.clip(1.0 - n_events / max(np.sum(weights), 1.0), 0.05, 0.95))
        else:
            exposure = max(float(np.sum(weights * times)), 1e-8)
            cure = None
        rate = n_events / exposure
        natural = self.family.initial(rate, 1.0 / rate)
        if cure is not None:
            natural["p"] = cure
        theta = np.zeros(self.n_coef)
        for parameter, transform, block, _ in self.blocks:
            theta[block.start] = float(to_link(natural[parameter], transform))
        return theta


def apply_links(spec: DistributionSpec, theta, covariates, design: CovariateDesign):
    """Resolve natural-scale parameters of `spec` for the given covariates.

    `covariates` is a mapping (one profile) or a data frame (one row per
    individual). Unrestricted parameters are linear in the covariates,
    positive ones log-linear and probabilities logit-linear.
    """
    missing = [c for c in spec.covariates if c not in design.names]
    if missing:
        raise ConfigError(f"Unknown covariate(s): {', '.join(missing)}")
    Z = design.encode(covariates) if spec.covariates else None
    return LinkedDistribution(spec, design).resolve(theta, Z)


def gengamma_cdf(t, params: GenGammaParams):
    return FAMILIES["gengamma"].cdf(t, **params.as_dict())


def gengamma_logpdf(t, params: GenGammaParams):
    return FAMILIES["gengamma"].logpdf(t, **params.as_dict())


def cure_cdf(t, cure: CureParams, family: str = "gengamma"):
    return get_family(family, cure=True).cdf(t, **cure.as_dict())


def quantile(u, spec: DistributionSpec, params: Mapping[str, Any]):
    """Inverse CDF; ``inf`` when ``u >= 1 - p`` for a cure distribution."""
    family = spec.distribution
    family.validate(**params)
    return family.quantile(u, **params)


def sample(spec: DistributionSpec, params: Mapping[str, Any], rng: np.random.Generator,
           size: int | Sequence[int] | None = None):
    """Draw event times; cured draws are ``inf`` ("never")."""
    family = spec.distribution
    family.validate(**params)
    return family.sample(rng, size, **params)
