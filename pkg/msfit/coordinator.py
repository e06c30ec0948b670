"""Candidate fitting and AIC-based selection for both frameworks.

Both likelihoods factorise, by transition for cause-specific hazards and by
from-state for the mixture model, so each piece is selected on its own and
the selected pieces together minimise the total AIC.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd

from .const import DEFAULT_WORKERS, FRAMEWORK_CSH, FRAMEWORK_MIXTURE, LOGGER
from .csh import CshFit, CshModelSpec, TransitionFit, fit_transition
from .dist import DistributionSpec
from .exceptions import ConfigError, MsfitError, SelectionError
from .inference import OptimControls, aic
from .mixture import (
    EmControls,
    MembershipSpec,
    MixtureFit,
    MixtureModelSpec,
    SubmodelFit,
    SubmodelSpec,
    fit_submodel,
)
from .model import (
    Dataset,
    ModelStructure,
    Transition,
    parse_transition_key,
    split_by_transition,
    transition_key,
)

SELECTION_COLUMNS = ["framework", "submodel", "candidate", "k", "loglik", "aic", "selected", "error"]
ALTERNATIVE_FAMILIES = ("gamma", "weibull", "lognormal")
CURE_FAMILIES = ("gengamma", "lognormal")
MIXTURE_FAMILIES = ("gengamma", "gamma", "weibull", "lognormal")

FIT_ERRORS = (MsfitError, ValueError, ArithmeticError, np.linalg.LinAlgError)


def _location_links(family: str, covariates: Sequence[str]) -> dict[str, tuple[str, ...]]:
    if not covariates:
        return {}
    return {DistributionSpec(family).distribution.location: tuple(covariates)}


def _shared_submodel(template: Mapping[str, Any], destinations: Sequence[str]) -> SubmodelSpec:
    """One time distribution for every destination plus a membership model."""
    spec = DistributionSpec.from_dict(template)
    return SubmodelSpec(
        times={d: spec for d in destinations},
        membership=MembershipSpec(template.get("reference"), tuple(template.get("covariates", ()))),
    )


@dataclass(frozen=True)
class CandidateSet:
    """Alternative specifications per transition and per from-state."""

    csh: Mapping[Transition, Sequence[DistributionSpec]] = field(default_factory=dict)
    mixture: Mapping[str, Sequence[SubmodelSpec]] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], structure: ModelStructure) -> CandidateSet:
        """Parse ``{"csh": {"A->B": [...]}, "mixture": {"A": [...]}}``.

        A list in place of the mapping applies to every transition (csh) or
        every from-state (mixture, one shared family across destinations).
        """
        csh_data = data.get(FRAMEWORK_CSH) or {}
        if isinstance(csh_data, Mapping):
            csh = {
                parse_transition_key(key): [DistributionSpec.from_dict(s) for s in specs]
                for key, specs in csh_data.items()
            }
        else:
            shared = [DistributionSpec.from_dict(s) for s in csh_data]
            csh = {
                t: [s for s in shared if not (s.cure and structure.is_certain(t))]
                for t in structure.transitions
            }
        mix_data = data.get(FRAMEWORK_MIXTURE) or {}
        if isinstance(mix_data, Mapping):
            mixture = {
                r: [SubmodelSpec.from_dict(s) for s in specs] for r, specs in mix_data.items()
            }
        else:
            mixture = {
                r: [_shared_submodel(s, dests) for s in mix_data]
                for r, dests in structure.submodels.items()
            }
        return cls(csh=csh, mixture=mixture)


def procedure_candidates(structure: ModelStructure, covariates: Sequence[str]) -> CandidateSet:
    """The stepwise search as a fixed candidate list.

    Generalized gamma with covariates on its location is the baseline.
    Alternatives are the simpler families, extra covariates on the second or
    third gengamma parameter, and cure variants except on discharge
    transitions. Mixture candidates share one family across destinations
    and always put the covariates on the membership model.
    """
    covariates = tuple(covariates)
    csh: dict[Transition, list[DistributionSpec]] = {}
    for t in structure.transitions:
        specs = [DistributionSpec("gengamma", links=_location_links("gengamma", covariates))]
        specs.extend(
            DistributionSpec(f, links=_location_links(f, covariates)) for f in ALTERNATIVE_FAMILIES
        )
        if covariates:
            specs.append(DistributionSpec("gengamma", links={"mu": covariates, "sigma": covariates}))
            specs.append(DistributionSpec("gengamma", links={"mu": covariates, "Q": covariates}))
        if not structure.is_certain(t):
            for f in CURE_FAMILIES:
                p_links = {"p": covariates} if covariates else {}
                specs.append(DistributionSpec(f, cure=True, links=p_links))
                if covariates:
                    specs.append(
                        DistributionSpec(
                            f, cure=True, links={**p_links, **_location_links(f, covariates)}
                        )
                    )
        csh[t] = list({s.label: s for s in specs}.values())
    mixture: dict[str, list[SubmodelSpec]] = {}
    for r, destinations in structure.submodels.items():
        options = []
        for f in MIXTURE_FAMILIES:
            for location in ((), covariates) if covariates else ((),):
                options.append(
                    SubmodelSpec.uniform(
                        destinations, f, location, membership_covariates=covariates
                    )
                )
        mixture[r] = options
    return CandidateSet(csh=csh, mixture=mixture)


@dataclass
class SelectionResult:
    fit: CshFit | MixtureFit
    table: pd.DataFrame


class ModelSelectionCoordinator:
    """Fit every candidate of a submodel concurrently and keep the lowest AIC."""

    def __init__(
        self,
        dataset: Dataset,
        optimizer: OptimControls | None = None,
        em: EmControls | None = None,
        workers: int = DEFAULT_WORKERS,
    ) -> None:
        self.dataset = dataset
        self.optimizer = optimizer or OptimControls()
        self.em = em or EmControls()
        self.workers = max(1, int(workers))

    def _map(self, func, items):
        if self.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(func, items))
        return [func(item) for item in items]

    @staticmethod
    def _attempt(run, label: str, submodel: str):
        try:
            return run(), None
        except FIT_ERRORS as exc:
            LOGGER.warning("Candidate %s for %s failed: %s", label, submodel, exc)
            return None, str(exc) or type(exc).__name__

    def _rank(self, framework: str, submodel: str, labels, outcomes) -> tuple[int, list[dict]]:
        rows = []
        for label, (fit, error) in zip(labels, outcomes):
            if fit is None:
                rows.append(
                    {
                        "framework": framework,
                        "submodel": submodel,
                        "candidate": label,
                        "k": np.nan,
                        "loglik": np.nan,
                        "aic": np.nan,
                        "selected": False,
                        "error": error,
                    }
                )
                continue
            rows.append(
                {
                    "framework": framework,
                    "submodel": submodel,
                    "candidate": label,
                    "k": fit.k,
                    "loglik": float(fit.loglik),
                    "aic": aic(fit.loglik, fit.k),
                    "selected": False,
                    "error": "",
                }
            )
        scores = [r["aic"] if np.isfinite(r["aic"]) else np.inf for r in rows]
        if not np.isfinite(min(scores, default=np.inf)):
            raise SelectionError(
                {f"{submodel} {r['candidate']}": r["error"] for r in rows}
                or {submodel: "no candidates"}
            )
        best = int(np.argmin(scores))
        rows[best]["selected"] = True
        LOGGER.info("Selected %s for %s (AIC %.2f)", labels[best], submodel, scores[best])
        return best, rows

    @staticmethod
    def _table(rows: list[dict]) -> pd.DataFrame:
        table = pd.DataFrame(rows, columns=SELECTION_COLUMNS)
        return table.sort_values(
            ["framework", "submodel", "aic"], kind="stable", na_position="last"
        ).reset_index(drop=True)

    def select_csh(self, candidates: Mapping[Transition, Sequence[DistributionSpec]]) -> SelectionResult:
        dataset = self.dataset
        structure = dataset.structure
        parts = split_by_transition(dataset)
        transitions: dict[Transition, TransitionFit] = {}
        rows: list[dict] = []
        for t in structure.transitions:
            key = transition_key(t)
            specs = list(candidates.get(t, ()))
            if not specs:
                raise ConfigError(f"no candidates for {key}")
            for spec in specs:
                if spec.cure and structure.is_certain(t):
                    raise ConfigError(f"cure candidate {spec.label} not allowed on {key}")

            def run(spec: DistributionSpec, t=t):
                return self._attempt(
                    lambda: fit_transition(parts[t], spec, dataset.design, self.optimizer),
                    spec.label,
                    transition_key(t),
                )

            outcomes = self._map(run, specs)
            best, ranked = self._rank(FRAMEWORK_CSH, key, [s.label for s in specs], outcomes)
            transitions[t] = outcomes[best][0]
            rows.extend(ranked)
        fit = CshFit(
            structure=structure,
            design=dataset.design,
            transitions=transitions,
            scope=dataset.scope,
            max_time=dataset.max_time,
        )
        LOGGER.info("Selected cause-specific hazards model: AIC %.2f, k %d", fit.aic, fit.k)
        return SelectionResult(fit, self._table(rows))

    def select_mixture(self, candidates: Mapping[str, Sequence[SubmodelSpec]]) -> SelectionResult:
        dataset = self.dataset
        structure = dataset.structure
        submodels: dict[str, SubmodelFit] = {}
        rows: list[dict] = []
        for r in structure.transient:
            specs = list(candidates.get(r, ()))
            if not specs:
                raise ConfigError(f"no mixture candidates for {r}")
            for spec in specs:
                spec.validate(r, structure.destinations(r))

            def run(spec: SubmodelSpec, r=r):
                return self._attempt(
                    lambda: fit_submodel(dataset, r, spec, self.em), spec.label, r
                )

            outcomes = self._map(run, specs)
            best, ranked = self._rank(FRAMEWORK_MIXTURE, r, [s.label for s in specs], outcomes)
            submodels[r] = outcomes[best][0]
            rows.extend(ranked)
        fit = MixtureFit(
            structure=structure,
            design=dataset.design,
            submodels=submodels,
            scope=dataset.scope,
            max_time=dataset.max_time,
        )
        LOGGER.info("Selected mixture model: AIC %.2f, k %d", fit.aic, fit.k)
        return SelectionResult(fit, self._table(rows))

    def select(self, candidates: CandidateSet, frameworks: Sequence[str]) -> dict[str, SelectionResult]:
        out = {}
        if FRAMEWORK_CSH in frameworks:
            out[FRAMEWORK_CSH] = self.select_csh(candidates.csh)
        if FRAMEWORK_MIXTURE in frameworks:
            out[FRAMEWORK_MIXTURE] = self.select_mixture(candidates.mixture)
        return out


def single_candidates(
    structure: ModelStructure,
    csh: CshModelSpec | None = None,
    mixture: MixtureModelSpec | None = None,
) -> CandidateSet:
    """A candidate set holding exactly one specification per submodel."""
    return CandidateSet(
        csh={t: [s] for t, s in csh.validate(structure).transitions.items()} if csh else {},
        mixture={r: [s] for r, s in mixture.validate(structure).submodels.items()} if mixture else {},
    )
