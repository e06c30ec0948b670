"""Maximum-likelihood machinery shared by both frameworks."""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
import itertools
from typing import Any

import numpy as np
import pandas as pd
from scipy import optimize

from .const import (
    ACCEPT_GTOL,
    DEFAULT_GTOL,
    DEFAULT_MAX_ITER,
    DEFAULT_STEP_TOL,
    EIGEN_FLOOR,
    GRADIENT_STEP,
    HESSIAN_STEP,
    LOGGER,
    STREAM_DRAWS,
)
from .exceptions import ConfigError, ConvergenceError, CovarianceError, NumericalError
from .util import named_stream


@dataclass(frozen=True)
class OptimControls:
    max_iter: int = DEFAULT_MAX_ITER
    gtol: float = DEFAULT_GTOL
    step_tol: float = DEFAULT_STEP_TOL

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> OptimControls:
        data = data or {}
        return cls(
            max_iter=int(data.get("max_iter", DEFAULT_MAX_ITER)),
            gtol=float(data.get("gtol", DEFAULT_GTOL)),
            step_tol=float(data.get("step_tol", DEFAULT_STEP_TOL)),
        )


@dataclass
class OptimResult:
    """Maximiser on the transformed scale and its observed-information covariance."""

    x: np.ndarray
    loglik: float
    cov: np.ndarray | None
    converged: bool
    n_iter: int
    message: str = ""
    trace: list[float] = field(default_factory=list)

    @property
    def estimate(self) -> np.ndarray:
        return self.x

    @property
    def se(self) -> np.ndarray:
        if self.cov is None:
            return np.full(len(self.x), np.nan)
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def _steps(x: np.ndarray, rel: float) -> np.ndarray:
    return rel * np.maximum(1.0, np.abs(x))


def numerical_gradient(f: Callable[[np.ndarray], float], x, step: float = GRADIENT_STEP):
    """Central-difference gradient with relative steps."""
    x = np.asarray(x, dtype=float)
    h = _steps(x, step)
    grad = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h[i]
        grad[i] = (f(x + e) - f(x - e)) / (2.0 * h[i])
    return grad


def numerical_hessian(f: Callable[[np.ndarray], float], x, step: float = HESSIAN_STEP):
    """Central-difference Hessian with relative steps; symmetric by construction."""
    x = np.asarray(x, dtype=float)
    k = len(x)
    h = _steps(x, step)
    H = np.empty((k, k))
    f0 = f(x)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(k)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return H


def covariance_from_hessian(H) -> np.ndarray:
    """Invert the observed information ``-H``.

    Eigenvalues below ``EIGEN_FLOOR`` are clipped, with a warning.
    """
    H = np.asarray(H, dtype=float)
    if H.size == 0:
        return np.zeros((0, 0))
    if not np.all(np.isfinite(H)):
        raise CovarianceError("Hessian has non-finite entries")
    info = -0.5 * (H + H.T)
    values, vectors = np.linalg.eigh(info)
    if values.min() >= EIGEN_FLOOR:
        cov = np.linalg.inv(info)
    else:
        LOGGER.warning(
            "Observed information not positive definite (min eigenvalue %.3g), "
            "clipping eigenvalues at %g",
            values.min(),
            EIGEN_FLOOR,
        )
        values = np.maximum(values, EIGEN_FLOOR)
        cov = (vectors / values) @ vectors.T
    return 0.5 * (cov + cov.T)


def maximize(
    loglik: Callable[[np.ndarray], float],
    initial,
    controls: OptimControls | None = None,
    hessian: bool = True,
    strict: bool = True,
) -> OptimResult:
    """BFGS ascent of `loglik` with central-difference gradients.

    Non-finite values met during the line search are replaced by a large
    penalty so the search backtracks. With ``strict`` an unconverged run
    raises `ConvergenceError`; otherwise the best point found is returned.
    """
    controls = controls or OptimControls()
    x0 = np.asarray(initial, dtype=float)
    if len(x0) == 0:
        return OptimResult(x0, float(loglik(x0)), np.zeros((0, 0)), True, 0)
    with np.errstate(all="ignore"):
        start = float(loglik(x0))
    if not np.isfinite(start):
        raise NumericalError("log-likelihood is not finite at the initial values")
    penalty = abs(start) * 1e6 + 1e10

    def objective(x):
        with np.errstate(all="ignore"):
            value = -float(loglik(x))
        return value if np.isfinite(value) else penalty

    def gradient(x):
        return numerical_gradient(objective, x)

    trace = [start]

    def record(xk):
        trace.append(-objective(xk))
        LOGGER.debug("iteration %d: loglik %.6f", len(trace) - 1, trace[-1])

    res = optimize.minimize(
        objective,
        x0,
        jac=gradient,
        method="BFGS",
        callback=record,
        options={"maxiter": controls.max_iter, "gtol": controls.gtol, "xrtol": controls.step_tol},
    )
    value = -float(res.fun)
    grad_norm = float(np.max(np.abs(gradient(res.x))))
    # BFGS often stops on precision loss at the optimum of a large sum
    converged = bool(res.success) or grad_norm < ACCEPT_GTOL
    if converged and not res.success:
        LOGGER.warning(
            "Accepting optimum with gradient norm %.3g after optimizer stopped: %s",
            grad_norm,
            res.message,
        )
    if not converged:
        if strict:
            raise ConvergenceError(
                f"optimizer did not converge: {res.message} (gradient norm {grad_norm:.3g})",
                trace,
            )
        LOGGER.debug("Returning unconverged optimum: %s", res.message)
    cov = None
    if hessian:
        with np.errstate(all="ignore"):
            cov = covariance_from_hessian(numerical_hessian(lambda x: loglik(x), res.x))
    return OptimResult(
        x=np.asarray(res.x, dtype=float),
        loglik=value,
        cov=cov,
        converged=converged,
        n_iter=int(res.nit),
        message=str(res.message),
        trace=trace,
    )


def aic(loglik: float, k: int) -> float:
    """Akaike information criterion."""
    if k < 0:
        raise ValueError("parameter count must be non-negative")
    return -2.0 * loglik + 2.0 * k


@dataclass(frozen=True)
class ParamDraws:
    """B parameter vectors on the transformed scale."""

    values: np.ndarray
    seed: int
    names: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.values)


def draw_params(result, B: int, seed: int, names: Sequence[str] = ()) -> ParamDraws:
    """Multivariate-normal draws around ``result.estimate`` with ``result.cov``."""
    if B < 1:
        raise ConfigError("B must be at least 1")
    mean = np.asarray(result.estimate, dtype=float)
    cov = np.asarray(result.cov, dtype=float).reshape(len(mean), len(mean))
    cov = 0.5 * (cov + cov.T)
    rng = named_stream(seed, STREAM_DRAWS)
    z = rng.standard_normal((B, len(mean)))
    if not np.any(cov):
        factor = np.zeros_like(cov)
    else:
        try:
            factor = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            values, vectors = np.linalg.eigh(cov)
            if values.min() < -1e-8 * max(1.0, values.max()):
                raise CovarianceError(
                    f"covariance is not positive semi-definite (min eigenvalue {values.min():.3g})"
                ) from None
            factor = vectors * np.sqrt(np.clip(values, 0.0, None))
    values = mean + z @ factor.T
    if not np.all(np.isfinite(values)):
        raise CovarianceError("parameter draws are not finite")
    return ParamDraws(values=values, seed=int(seed), names=tuple(names))


class FittedModel:
    """Common surface of fitted cause-specific hazards and mixture models.

    Subclasses provide `estimate`, `cov`, `names`, `transforms`, `loglik`,
    `obs_loglik` and `with_parameters`.
    """

    framework: str

    @property
    def k(self) -> int:
        return len(self.estimate)

    @property
    def aic(self) -> float:
        return aic(self.loglik, self.k)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def parameter_table(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "name": list(self.names),
                "estimate": self.estimate,
                "std_error": self.se,
                "transform": list(self.transforms),
            }
        )

    def draws(self, B: int, seed: int) -> ParamDraws:
        return draw_params(self, B, seed, self.names)


def _group_levels(dataset, grouping: Sequence[str]) -> list[dict[str, str]]:
    levels = []
    for name in grouping:
        if name not in dataset.frame:
            raise ConfigError(f"Unknown grouping covariate '{name}'")
        known = dataset.design.levels.get(name)
        if known is None:
            known = tuple(sorted(dataset.frame[name].astype(str).unique()))
        levels.append(known)
    return [dict(zip(grouping, combo)) for combo in itertools.product(*levels)]


def _label(group: Mapping[str, str]) -> str:
    return ",".join(f"{k}={v}" for k, v in group.items()) or "all"


def subgroup_loglik(fit: FittedModel, dataset, grouping: Sequence[str]) -> pd.DataFrame:
    """Log-likelihood summed within covariate-defined groups.

    One block of rows per from-state submodel and a combined block; empty
    groups appear with zero count.
    """
    grouping = list(grouping)
    contributions = fit.obs_loglik(dataset)
    labels = dataset.group_labels(grouping).to_numpy(object)
    from_state = dataset.from_state
    groups = _group_levels(dataset, grouping)
    rows = []
    for submodel in (*dataset.structure.transient, "all"):
        in_submodel = np.ones(len(dataset), bool) if submodel == "all" else from_state == submodel
        for group in groups:
            mask = in_submodel & (labels == _label(group))
            rows.append(
                {
                    "submodel": submodel,
                    "group": _label(group),
                    "n": int(mask.sum()),
                    "loglik": float(contributions[mask].sum()),
                }
            )
    return pd.DataFrame(rows, columns=["submodel", "group", "n", "loglik"])


def compare_subgroups(first: FittedModel, second: FittedModel, dataset, grouping) -> pd.DataFrame:
    """Per-group log-likelihood of `first` minus that of `second`."""
    left = subgroup_loglik(first, dataset, grouping)
    right = subgroup_loglik(second, dataset, grouping)
    table = left.rename(columns={"loglik": f"loglik_{first.framework}"})
    table[f"loglik_{second.framework}"] = right["loglik"].to_numpy()
    table["difference"] = table[f"loglik_{first.framework}"] - table[f"loglik_{second.framework}"]
    return table
