"""Results JSON for fitted models."""

from __future__ import annotations

from collections.abc import Mapping
import json
import os
from pathlib import Path
from typing import Any

import numpy as np

from .const import FRAMEWORK_CSH, FRAMEWORK_MIXTURE, LOGGER, SCOPE_DEATH, VERSION
from .csh import CshFit, CshModelSpec, TransitionFit
from .dist import LinkedDistribution
from .exceptions import ConfigError
from .inference import FittedModel
from .mixture import MixtureFit, MixtureModelSpec, SubmodelFit, _Layout
from .model import CovariateDesign, ModelStructure, parse_transition_key, transition_key


def _floats(values) -> list[float]:
    return [float(x) for x in np.asarray(values, dtype=float).ravel()]


def _matrix(values) -> list[list[float]]:
    return [_floats(row) for row in np.atleast_2d(np.asarray(values, dtype=float))]


def fit_to_dict(fit: FittedModel, seed: int | None = None) -> dict[str, Any]:
    """Serialisable record of a fit, enough to rebuild it with `fit_from_dict`."""
    table = fit.parameter_table()
    data: dict[str, Any] = {
        "framework": fit.framework,
        "version": VERSION,
        "seed": seed,
        "structure": fit.structure.to_dict(),
        "design": fit.design.to_dict(),
        "scope": fit.scope,
        "max_time": fit.max_time,
        "spec": fit.spec.to_dict(),
        "loglik": float(fit.loglik),
        "aic": float(fit.aic),
        "k": int(fit.k),
        "parameters": [
            {
                "name": row.name,
                "estimate": float(row.estimate),
                "std_error": float(row.std_error),
                "transform": row.transform,
            }
            for row in table.itertuples(index=False)
        ],
    }
    if fit.framework == FRAMEWORK_CSH:
        data["transitions"] = {
            transition_key(t): {
                "estimate": _floats(f.estimate),
                "cov": _matrix(f.cov) if f.k else [],
                "loglik": float(f.loglik),
                "aic": float(-2.0 * f.loglik + 2.0 * f.k),
                "k": f.k,
                "n": int(f.n),
                "n_events": int(f.n_events),
                "converged": bool(f.converged),
                "n_iter": int(f.n_iter),
                "pinned": bool(f.pinned),
            }
            for t, f in fit.transitions.items()
        }
    else:
        data["submodels"] = {
            r: {
                "estimate": _floats(s.estimate),
                "cov": _matrix(s.cov) if s.k else [],
                "loglik": float(s.loglik),
                "aic": float(-2.0 * s.loglik + 2.0 * s.k),
                "k": s.k,
                "n": int(s.n),
                "membership": s.layout.membership.names,
                "trace": _floats(s.trace),
                "n_iter": int(s.n_iter),
                "converged": bool(s.converged),
                "method": s.method,
            }
            for r, s in fit.submodels.items()
        }
    return data


def _cov(block: Mapping[str, Any], k: int) -> np.ndarray:
    cov = np.asarray(block.get("cov") or np.zeros((k, k)), dtype=float)
    return cov.reshape(k, k)


def fit_from_dict(data: Mapping[str, Any]) -> FittedModel:
    """Rebuild a fit written by `fit_to_dict`."""
    try:
        framework = data["framework"]
        structure = ModelStructure.from_dict(data["structure"])
        design = CovariateDesign.from_dict(data.get("design") or {})
        scope = data.get("scope", SCOPE_DEATH)
        max_time = data.get("max_time")
        if framework == FRAMEWORK_CSH:
            spec = CshModelSpec.from_dict(data["spec"])
            transitions = {}
            for key, block in data["transitions"].items():
                t = parse_transition_key(key)
                linked = LinkedDistribution(spec.transitions[t], design)
                estimate = np.asarray(block["estimate"], dtype=float)
                pinned = bool(block.get("pinned", False))
                if not pinned and len(estimate) != linked.n_coef:
                    raise ConfigError(
                        f"{key}: expected {linked.n_coef} coefficients, got {len(estimate)}"
                    )
                transitions[t] = TransitionFit(
                    transition=t,
                    spec=spec.transitions[t],
                    linked=linked,
                    estimate=estimate,
                    cov=_cov(block, len(estimate)),
                    loglik=float(block.get("loglik", 0.0)),
                    n=int(block.get("n", 0)),
                    n_events=int(block.get("n_events", 0)),
                    converged=bool(block.get("converged", True)),
                    n_iter=int(block.get("n_iter", 0)),
                    pinned=pinned,
                )
            ordered = {t: transitions[t] for t in structure.transitions}
            return CshFit(
                structure=structure,
                design=design,
                transitions=ordered,
                scope=scope,
                max_time=max_time,
            )
        if framework == FRAMEWORK_MIXTURE:
            spec = MixtureModelSpec.from_dict(data["spec"]).validate(structure)
            submodels = {}
            for r in structure.transient:
                block = data["submodels"][r]
                layout = _Layout(r, spec.submodels[r], structure, design)
                estimate = np.asarray(block["estimate"], dtype=float)
                if len(estimate) != layout.n_coef:
                    raise ConfigError(
                        f"{r}: expected {layout.n_coef} coefficients, got {len(estimate)}"
                    )
                submodels[r] = SubmodelFit(
                    layout=layout,
                    estimate=estimate,
                    cov=_cov(block, len(estimate)),
                    loglik=float(block.get("loglik", 0.0)),
                    n=int(block.get("n", 0)),
                    trace=list(block.get("trace", [])),
                    n_iter=int(block.get("n_iter", 0)),
                    converged=bool(block.get("converged", True)),
                    method=block.get("method", "em"),
                )
            return MixtureFit(
                structure=structure,
                design=design,
                submodels=submodels,
                scope=scope,
                max_time=max_time,
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"Malformed fit record: {exc!r}") from exc
    raise ConfigError(f"Unknown framework '{framework}' in fit record")


def results_to_dict(
    fits: Mapping[str, FittedModel],
    seed: int | None = None,
    comparison: Mapping[str, Any] | None = None,
    selection: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    data: dict[str, Any] = {
        "version": VERSION,
        "seed": seed,
        "fits": {name: fit_to_dict(fit, seed) for name, fit in fits.items()},
    }
    if comparison is not None:
        data["comparison"] = dict(comparison)
    if selection is not None:
        data["selection"] = dict(selection)
    return data


def load_results(path: str | os.PathLike) -> dict[str, FittedModel]:
    """Fits keyed by framework from a results file or a single fit record."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"Cannot read results from {path}: {exc}") from exc
    records = data.get("fits") if "fits" in data else {data.get("framework", "fit"): data}
    if not records:
        raise ConfigError(f"{path} contains no fits")
    fits = {name: fit_from_dict(record) for name, record in records.items()}
    LOGGER.debug("Loaded %s from %s", ", ".join(fits), path)
    return fits
