"""Run configuration files."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
import json
import os
from pathlib import Path
from typing import Any

import voluptuous as vol

from .const import (
    CONF_B,
    CONF_CANDIDATES,
    CONF_CSH,
    CONF_DATA,
    CONF_EM,
    CONF_FRAMEWORK,
    CONF_MIXTURE,
    CONF_OPTIMIZER,
    CONF_OUTPUT,
    CONF_PARTIAL_SCOPE,
    CONF_S,
    CONF_SEED,
    CONF_SIMULATE,
    CONF_STRUCTURE,
    CONF_WORKERS,
    CONF_ZERO_TIME,
    DEFAULT_B,
    DEFAULT_S,
    DEFAULT_SEED,
    DEFAULT_WORKERS,
    DEFAULT_ZERO_TIME,
    FRAMEWORK_BOTH,
    FRAMEWORK_CSH,
    FRAMEWORK_MIXTURE,
    SCOPE_ALL_BUT_DISCHARGE,
    SCOPE_DEATH,
)
from .dist import ALIASES, FAMILIES
from .exceptions import ConfigError
from .mixture import METHOD_DIRECT, METHOD_EM
from .model import ModelStructure

FAMILY_NAMES = sorted(FAMILIES) + sorted(ALIASES)

POSITIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=1))
POSITIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))

DIST_SCHEMA = vol.Schema(
    {
        vol.Required("family"): vol.In(FAMILY_NAMES),
        vol.Optional("cure", default=False): bool,
        vol.Optional("links", default={}): {str: [str]},
    }
)

SHARED_SUBMODEL_SCHEMA = DIST_SCHEMA.extend(
    {
        vol.Optional("reference"): str,
        vol.Optional("covariates", default=[]): [str],
    }
)

SUBMODEL_SCHEMA = vol.Schema(
    {
        vol.Optional("reference"): str,
        vol.Optional("covariates", default=[]): [str],
        vol.Required("times"): {str: DIST_SCHEMA},
    }
)

CSH_SCHEMA = vol.Schema({str: DIST_SCHEMA})
MIXTURE_SCHEMA = vol.Schema({str: SUBMODEL_SCHEMA})

CANDIDATES_SCHEMA = vol.Schema(
    {
        vol.Optional(FRAMEWORK_CSH): vol.Any({str: [DIST_SCHEMA]}, [DIST_SCHEMA]),
        vol.Optional(FRAMEWORK_MIXTURE): vol.Any({str: [SUBMODEL_SCHEMA]}, [SHARED_SUBMODEL_SCHEMA]),
    }
)

STRUCTURE_SCHEMA = vol.Schema(
    {
        vol.Required("states"): vol.All([str], vol.Length(min=2)),
        vol.Required("transitions"): [vol.ExactSequence([str, str])],
        vol.Optional("absorbing"): [str],
        vol.Optional("death_state"): str,
        vol.Optional("discharge_state"): str,
    }
)

OPTIMIZER_SCHEMA = vol.Schema(
    {
        vol.Optional("max_iter"): POSITIVE_INT,
        vol.Optional("gtol"): POSITIVE_FLOAT,
        vol.Optional("step_tol"): POSITIVE_FLOAT,
    }
)

EM_SCHEMA = vol.Schema(
    {
        vol.Optional("tol"): POSITIVE_FLOAT,
        vol.Optional("max_iter"): POSITIVE_INT,
        vol.Optional("inner_tol"): POSITIVE_FLOAT,
        vol.Optional("method"): vol.In([METHOD_EM, METHOD_DIRECT]),
    }
)

SIMULATE_SCHEMA = vol.Schema(
    {
        vol.Optional("n"): POSITIVE_INT,
        vol.Optional("truth"): vol.Any(vol.In([FRAMEWORK_CSH, FRAMEWORK_MIXTURE]), dict),
        vol.Optional("frequencies"): {str: {str: vol.All(vol.Coerce(float), vol.Range(min=0))}},
        vol.Optional("window"): vol.Any(None, POSITIVE_FLOAT),
        vol.Optional("status3_fraction"): vol.All(vol.Coerce(float), vol.Range(min=0, max=1)),
        vol.Optional("round_days"): bool,
        vol.Optional("seed"): vol.Coerce(int),
    }
)

RUN_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_STRUCTURE): STRUCTURE_SCHEMA,
        vol.Optional(CONF_DATA): str,
        vol.Optional(CONF_FRAMEWORK, default=FRAMEWORK_BOTH): vol.In(
            [FRAMEWORK_CSH, FRAMEWORK_MIXTURE, FRAMEWORK_BOTH]
        ),
        vol.Optional(CONF_CSH): CSH_SCHEMA,
        vol.Optional(CONF_MIXTURE): MIXTURE_SCHEMA,
        vol.Optional(CONF_CANDIDATES): CANDIDATES_SCHEMA,
        vol.Optional(CONF_OPTIMIZER, default={}): OPTIMIZER_SCHEMA,
        vol.Optional(CONF_EM, default={}): EM_SCHEMA,
        vol.Optional(CONF_B, default=DEFAULT_B): POSITIVE_INT,
        vol.Optional(CONF_S, default=DEFAULT_S): POSITIVE_INT,
        vol.Optional(CONF_SEED, default=DEFAULT_SEED): vol.Coerce(int),
        vol.Optional(CONF_ZERO_TIME, default=DEFAULT_ZERO_TIME): vol.All(
            vol.Coerce(float), vol.Range(min=0)
        ),
        vol.Optional(CONF_PARTIAL_SCOPE, default=SCOPE_DEATH): vol.In(
            [SCOPE_DEATH, SCOPE_ALL_BUT_DISCHARGE]
        ),
        vol.Optional(CONF_WORKERS, default=DEFAULT_WORKERS): POSITIVE_INT,
        vol.Optional(CONF_OUTPUT): str,
        vol.Optional(CONF_SIMULATE, default={}): SIMULATE_SCHEMA,
    }
)


def _humanize(exc: vol.Invalid) -> str:
    path = "/".join(str(p) for p in exc.path)
    return f"{exc.msg} at '{path}'" if path else exc.msg


def validate(schema: vol.Schema, data: Any, what: str) -> Any:
    """Apply `schema`, turning voluptuous errors into `ConfigError`."""
    try:
        return schema(data)
    except vol.MultipleInvalid as exc:
        raise ConfigError(
            f"Invalid {what}: " + "; ".join(_humanize(e) for e in exc.errors)
        ) from exc
    except vol.Invalid as exc:
        raise ConfigError(f"Invalid {what}: {_humanize(exc)}") from exc


def read_json(path: str | os.PathLike) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"File not found: {path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"Cannot read {path}: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    """A validated run configuration.

    Relative paths are resolved against the directory of the config file.
    """

    structure: ModelStructure = field(default_factory=ModelStructure.hospital)
    data: Path | None = None
    framework: str = FRAMEWORK_BOTH
    csh: Mapping[str, Any] | None = None
    mixture: Mapping[str, Any] | None = None
    candidates: Mapping[str, Any] | None = None
    optimizer: Mapping[str, Any] = field(default_factory=dict)
    em: Mapping[str, Any] = field(default_factory=dict)
    B: int = DEFAULT_B
    S: int = DEFAULT_S
    seed: int = DEFAULT_SEED
    zero_time: float = DEFAULT_ZERO_TIME
    scope: str = SCOPE_DEATH
    workers: int = DEFAULT_WORKERS
    output: Path | None = None
    simulate: Mapping[str, Any] = field(default_factory=dict)

    @property
    def frameworks(self) -> tuple[str, ...]:
        if self.framework == FRAMEWORK_BOTH:
            return (FRAMEWORK_CSH, FRAMEWORK_MIXTURE)
        return (self.framework,)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base: str | os.PathLike | None = None) -> RunConfig:
        conf = validate(RUN_SCHEMA, dict(data), "run configuration")
        base = Path(base) if base is not None else Path.cwd()

        def resolve(value: str | None) -> Path | None:
            if value is None:
                return None
            path = Path(value)
            return path if path.is_absolute() else base / path

        structure = ModelStructure.hospital()
        if CONF_STRUCTURE in conf:
            structure = ModelStructure.from_dict(conf[CONF_STRUCTURE])
        return cls(
            structure=structure,
            data=resolve(conf.get(CONF_DATA)),
            framework=conf[CONF_FRAMEWORK],
            csh=conf.get(CONF_CSH),
            mixture=conf.get(CONF_MIXTURE),
            candidates=conf.get(CONF_CANDIDATES),
            optimizer=conf[CONF_OPTIMIZER],
            em=conf[CONF_EM],
            B=conf[CONF_B],
            S=conf[CONF_S],
            seed=conf[CONF_SEED],
            zero_time=conf[CONF_ZERO_TIME],
            scope=conf[CONF_PARTIAL_SCOPE],
            workers=conf[CONF_WORKERS],
            output=resolve(conf.get(CONF_OUTPUT)),
            simulate=conf[CONF_SIMULATE],
        )


def load_run_config(path: str | os.PathLike | None) -> RunConfig:
    """Read and validate a run configuration; no path gives the defaults."""
    if path is None:
        return RunConfig()
    data = read_json(path)
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path} must contain a JSON object")
    return RunConfig.from_dict(data, Path(path).resolve().parent)
