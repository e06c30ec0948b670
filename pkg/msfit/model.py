"""Multi-state structure, observations and covariate design."""

from __future__ import annotations

from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
import itertools
import os
from typing import Any

import numpy as np
import pandas as pd

from .const import (
    BASE_COLUMNS,
    COL_FROM,
    COL_STATUS,
    COL_SUBJECT,
    COL_TIME,
    COL_TO,
    DEFAULT_ZERO_TIME,
    LOGGER,
    SCOPE_ALL_BUT_DISCHARGE,
    SCOPE_DEATH,
    STATE_DEATH,
    STATE_DISCHARGE,
    STATE_HOSPITAL,
    STATE_ICU,
    STATUS_CENSORED,
    STATUS_EVENT,
    STATUS_PARTIAL,
    STATUSES,
)
from .exceptions import ConfigError, DataError, StructureError

Transition = tuple[str, str]


def transition_key(transition: Transition) -> str:
    return f"{transition[0]}->{transition[1]}"


def parse_transition_key(key: str) -> Transition:
    parts = [p.strip() for p in str(key).split("->")]
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"Transition must be written 'From->To', got '{key}'")
    return parts[0], parts[1]


@dataclass(frozen=True)
class ModelStructure:
    """States and permitted instantaneous transitions.

    The first state is where every pathway starts. Absorbing states are the
    declared ones, the named death and discharge states, and any state
    without outgoing transitions.
    """

    states: tuple[str, ...]
    transitions: tuple[Transition, ...]
    declared_absorbing: tuple[str, ...] = ()
    death_state: str = STATE_DEATH
    discharge_state: str = STATE_DISCHARGE

    def __post_init__(self) -> None:
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(
            self, "transitions", tuple((str(r), str(s)) for r, s in self.transitions)
        )
        object.__setattr__(self, "declared_absorbing", tuple(self.declared_absorbing))

    @classmethod
    def hospital(cls) -> ModelStructure:
        """Hospital, ICU, Death and Discharge with the five usual transitions."""
        return cls(
            states=(STATE_HOSPITAL, STATE_ICU, STATE_DEATH, STATE_DISCHARGE),
            transitions=(
                (STATE_HOSPITAL, STATE_ICU),
                (STATE_HOSPITAL, STATE_DEATH),
                (STATE_HOSPITAL, STATE_DISCHARGE),
                (STATE_ICU, STATE_DEATH),
                (STATE_ICU, STATE_DISCHARGE),
            ),
        )

    @property
    def initial(self) -> str:
        return self.states[0]

    @property
    def absorbing(self) -> tuple[str, ...]:
        named = {self.death_state, self.discharge_state, *self.declared_absorbing}
        sources = {r for r, _ in self.transitions}
        return tuple(s for s in self.states if s in named or s not in sources)

    @property
    def transient(self) -> tuple[str, ...]:
        absorbing = set(self.absorbing)
        return tuple(s for s in self.states if s not in absorbing)

    def destinations(self, state: str) -> tuple[str, ...]:
        return tuple(s for r, s in self.transitions if r == state)

    @property
    def submodels(self) -> dict[str, tuple[str, ...]]:
        return {r: self.destinations(r) for r in self.transient}

    def is_certain(self, transition: Transition) -> bool:
        """Transitions that everyone still in the state eventually makes."""
        return transition[1] == self.discharge_state

    def partial_destinations(self, state: str, scope: str = SCOPE_DEATH) -> tuple[str, ...]:
        """Destinations whose times a status-3 row from `state` censors."""
        if scope == SCOPE_ALL_BUT_DISCHARGE:
            return tuple(s for s in self.destinations(state) if s != self.discharge_state)
        return tuple(s for s in self.destinations(state) if s == self.death_state)

    def check(self) -> ModelStructure:
        errors = validate_structure(self)
        if errors:
            raise StructureError(errors)
        return self

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "states": list(self.states),
            "transitions": [list(t) for t in self.transitions],
            "death_state": self.death_state,
            "discharge_state": self.discharge_state,
        }
        if self.declared_absorbing:
            data["absorbing"] = list(self.declared_absorbing)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ModelStructure:
        try:
            structure = cls(
                states=tuple(data["states"]),
                transitions=tuple(tuple(t) for t in data["transitions"]),
                declared_absorbing=tuple(data.get("absorbing", ())),
                death_state=data.get("death_state", STATE_DEATH),
                discharge_state=data.get("discharge_state", STATE_DISCHARGE),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise StructureError([f"malformed structure: {exc}"]) from exc
        return structure.check()


def validate_structure(structure: ModelStructure) -> list[str]:
    """Return every problem found in `structure`; empty when it is usable."""
    errors: list[str] = []
    states = structure.states
    if not states:
        errors.append("no states")
    if len(set(states)) != len(states):
        errors.append("duplicate state names")
    if not structure.transitions:
        errors.append("no transitions")
    known = set(states)
    for name in structure.declared_absorbing:
        if name not in known:
            errors.append(f"unknown absorbing state {name}")
    named_absorbing = {
        structure.death_state, structure.discharge_state, *structure.declared_absorbing
    }
    seen: set[Transition] = set()
    for r, s in structure.transitions:
        if r not in known or s not in known:
            missing = ", ".join(x for x in (r, s) if x not in known)
            errors.append(f"unknown state {missing} in transition {r}->{s}")
            continue
        if r == s:
            errors.append(f"self-transition {r}->{s}")
        if r in named_absorbing:
            errors.append(f"transition out of absorbing state {r}")
        if (r, s) in seen:
            errors.append(f"duplicate transition {r}->{s}")
        seen.add((r, s))
    if states and any(s == states[0] for _, s in structure.transitions):
        errors.append(f"transition into initial state {states[0]}")
    if not errors and _has_cycle(structure):
        errors.append("structure contains a cycle")
    return errors


def _has_cycle(structure: ModelStructure) -> bool:
    graph = {s: structure.destinations(s) for s in structure.states}
    colour = dict.fromkeys(structure.states, 0)

    def visit(node: str) -> bool:
        colour[node] = 1
        for nxt in graph[node]:
            if colour[nxt] == 1 or (colour[nxt] == 0 and visit(nxt)):
                return True
        colour[node] = 2
        return False

    return any(colour[s] == 0 and visit(s) for s in structure.states)


def enumerate_pathways(
    structure: ModelStructure, start: str, target: str
) -> list[tuple[Transition, ...]]:
    """All simple directed paths from `start` to `target`."""
    for name in (start, target):
        if name not in structure.states:
            raise ConfigError(f"Unknown state {name}")
    paths: list[tuple[Transition, ...]] = []

    def walk(node: str, trail: tuple[Transition, ...]) -> None:
        if node == target and trail:
            paths.append(trail)
            return
        for nxt in structure.destinations(node):
            if any(nxt == r for r, _ in trail):
                continue
            walk(nxt, trail + ((node, nxt),))

    if start != target:
        walk(start, ())
    return paths


@dataclass(frozen=True)
class CovariateDesign:
    """Indicator coding of categorical covariates plus continuous columns.

    Each categorical covariate contributes one column per non-reference
    level; the lexicographically first level is the reference.
    """

    names: tuple[str, ...] = ()
    levels: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(
            self, "levels", {k: tuple(str(x) for x in v) for k, v in dict(self.levels).items()}
        )
        labels: list[str] = []
        columns: dict[str, tuple[int, ...]] = {}
        for name in self.names:
            start = len(labels)
            if name in self.levels:
                labels.extend(f"{name}={level}" for level in self.levels[name][1:])
            else:
                labels.append(name)
            columns[name] = tuple(range(start, len(labels)))
        object.__setattr__(self, "labels", tuple(labels))
        object.__setattr__(self, "_columns", columns)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, names: Sequence[str]) -> CovariateDesign:
        levels = {}
        for name in names:
            column = frame[name]
            if not pd.api.types.is_numeric_dtype(column) or pd.api.types.is_bool_dtype(column):
                levels[name] = tuple(sorted(column.astype(str).unique()))
        return cls(names=tuple(names), levels=levels)

    @property
    def width(self) -> int:
        return len(self.labels)

    @property
    def references(self) -> dict[str, str]:
        return {name: levels[0] for name, levels in self.levels.items()}

    def columns_for(self, names: Iterable[str]) -> np.ndarray:
        cols: list[int] = []
        for name in names:
            if name not in self._columns:
                raise ConfigError(
                    f"Unknown covariate '{name}', available: {', '.join(self.names) or 'none'}"
                )
            cols.extend(self._columns[name])
        return np.asarray(cols, dtype=int)

    def encode(self, covariates: pd.DataFrame | Mapping[str, Any]) -> np.ndarray:
        """Design matrix for a frame of rows or a single profile mapping."""
        if isinstance(covariates, Mapping):
            covariates = pd.DataFrame([dict(covariates)])
        Z = np.zeros((len(covariates), self.width))
        for name in self.names:
            if name not in covariates:
                raise ConfigError(f"Missing covariate '{name}'")
            cols = self._columns[name]
            if name in self.levels:
                values = covariates[name].astype(str).to_numpy()
                valid = self.levels[name]
                unknown = sorted(set(values) - set(valid))
                if unknown:
                    raise ConfigError(
                        f"Unknown level(s) {', '.join(unknown)} for covariate '{name}'; "
                        f"valid levels: {', '.join(valid)}"
                    )
                for col, level in zip(cols, valid[1:]):
                    Z[:, col] = values == level
            else:
                values = pd.to_numeric(covariates[name], errors="coerce").to_numpy(float)
                if not np.all(np.isfinite(values)):
                    raise ConfigError(f"Covariate '{name}' must be numeric")
                Z[:, cols[0]] = values
        return Z

    def profiles(self, names: Sequence[str] | None = None) -> list[dict[str, str]]:
        """Every combination of the levels of the categorical covariates."""
        names = [n for n in (self.names if names is None else names)]
        for name in names:
            if name not in self.levels:
                raise ConfigError(f"Covariate '{name}' is not categorical")
        combos = itertools.product(*(self.levels[n] for n in names))
        return [dict(zip(names, combo)) for combo in combos]

    def to_dict(self) -> dict[str, Any]:
        return {
            "names": list(self.names),
            "levels": {k: list(v) for k, v in self.levels.items()},
            "references": self.references,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> CovariateDesign:
        return cls(names=tuple(data.get("names", ())), levels=data.get("levels", {}))


@dataclass(frozen=True)
class Observation:
    subject_id: str
    from_state: str
    to_state: str | None
    time: float
    status: int
    covariates: Mapping[str, Any] = field(default_factory=dict)


class Dataset:
    """Validated observations with their covariate design matrix."""

    def __init__(
        self,
        frame: pd.DataFrame,
        structure: ModelStructure,
        design: CovariateDesign,
        scope: str = SCOPE_DEATH,
    ) -> None:
        self.frame = frame.reset_index(drop=True)
        self.structure = structure
        self.design = design
        self.scope = scope
        self.Z = design.encode(self.frame) if design.names else np.zeros((len(self.frame), 0))

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def covariates(self) -> tuple[str, ...]:
        return self.design.names

    @property
    def time(self) -> np.ndarray:
        return self.frame[COL_TIME].to_numpy(float)

    @property
    def status(self) -> np.ndarray:
        return self.frame[COL_STATUS].to_numpy(int)

    @property
    def from_state(self) -> np.ndarray:
        return self.frame[COL_FROM].to_numpy(object)

    @property
    def to_state(self) -> np.ndarray:
        return self.frame[COL_TO].to_numpy(object)

    @property
    def ids(self) -> np.ndarray:
        return self.frame[COL_SUBJECT].to_numpy(object)

    @property
    def max_time(self) -> float:
        return float(self.frame[COL_TIME].max()) if len(self.frame) else 0.0

    def subset(self, mask) -> Dataset:
        sub = Dataset.__new__(Dataset)
        mask = np.asarray(mask)
        sub.frame = self.frame.loc[mask].reset_index(drop=True)
        sub.structure = self.structure
        sub.design = self.design
        sub.scope = self.scope
        sub.Z = self.Z[mask]
        return sub

    def from_states(self, state: str) -> Dataset:
        return self.subset(self.from_state == state)

    def observations(self) -> Iterator[Observation]:
        names = list(self.design.names)
        for row in self.frame.itertuples(index=False):
            row = row._asdict()
            to_state = row[COL_TO]
            yield Observation(
                subject_id=str(row[COL_SUBJECT]),
                from_state=row[COL_FROM],
                to_state=None if pd.isna(to_state) else to_state,
                time=float(row[COL_TIME]),
                status=int(row[COL_STATUS]),
                covariates={n: row[n] for n in names},
            )

    def group_labels(self, grouping: Sequence[str]) -> pd.Series:
        """A label per row such as ``age_group=85+,gender=M``."""
        for name in grouping:
            if name not in self.frame:
                raise ConfigError(f"Unknown grouping covariate '{name}'")
        if not grouping:
            return pd.Series(["all"] * len(self.frame))
        return self.frame[list(grouping)].astype(str).apply(
            lambda row: ",".join(f"{k}={v}" for k, v in row.items()), axis=1
        )


def read_observations(path: str | os.PathLike) -> pd.DataFrame:
    """Read an observation CSV."""
    try:
        return pd.read_csv(
            path,
            dtype={COL_SUBJECT: str, COL_FROM: str, COL_TO: str},
            keep_default_na=False,
            na_values={COL_TO: [""]},
        )
    except (OSError, pd.errors.ParserError) as exc:
        raise ConfigError(f"Cannot read observations from {path}: {exc}") from exc


def load_dataset(
    rows: pd.DataFrame | Iterable[Mapping[str, Any]],
    structure: ModelStructure,
    zero_time: float = DEFAULT_ZERO_TIME,
    scope: str = SCOPE_DEATH,
    design: CovariateDesign | None = None,
) -> Dataset:
    """Validate observation rows against `structure`.

    Times recorded as zero are moved to `zero_time`. Every column outside the
    base columns is a covariate.
    """
    frame = rows.copy() if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
    frame = frame.reset_index(drop=True)
    missing = [c for c in BASE_COLUMNS if c not in frame]
    if missing:
        raise DataError(f"missing column(s): {', '.join(missing)}")
    if scope not in (SCOPE_DEATH, SCOPE_ALL_BUT_DISCHARGE):
        raise ConfigError(f"Unknown partial outcome scope '{scope}'")

    frame[COL_SUBJECT] = frame[COL_SUBJECT].astype(str)
    frame[COL_FROM] = frame[COL_FROM].astype(str)
    frame[COL_TO] = frame[COL_TO].where(
        frame[COL_TO].notna() & (frame[COL_TO].astype(str).str.len() > 0)
    )
    status = pd.to_numeric(frame[COL_STATUS], errors="coerce")
    time = pd.to_numeric(frame[COL_TIME], errors="coerce")

    transient = set(structure.transient)
    permitted = set(structure.transitions)
    rows_iter = zip(frame[COL_FROM], frame[COL_TO], status, time)
    for i, (r, s, st, y) in enumerate(rows_iter):
        if st not in STATUSES:
            raise DataError(f"status must be 1, 2 or 3, got {frame[COL_STATUS].iloc[i]!r}", i)
        if r not in transient:
            raise DataError(f"from_state {r} is not a transient state", i)
        if not np.isfinite(y) or y < 0:
            raise DataError(f"negative or missing time {frame[COL_TIME].iloc[i]!r}", i)
        if st == STATUS_EVENT:
            if pd.isna(s):
                raise DataError("status 1 requires a to_state", i)
            if (r, s) not in permitted:
                raise DataError(f"transition not permitted: {r}->{s}", i)
        elif not pd.isna(s):
            raise DataError(f"status {int(st)} must not have a to_state", i)
        if st == STATUS_PARTIAL and not structure.partial_destinations(r, scope):
            raise DataError(f"status 3 from {r} has no censorable destination", i)

    zero = time == 0
    if zero.any():
        if not zero_time > 0:
            raise DataError("zero times present and zero-time adjustment disabled")
        LOGGER.debug("Moving %d zero times to %s days", int(zero.sum()), zero_time)
        time = time.where(~zero, float(zero_time))
    frame[COL_TIME] = time.astype(float)
    frame[COL_STATUS] = status.astype(int)

    covariates = [c for c in frame.columns if c not in BASE_COLUMNS]
    for name in covariates:
        if frame[name].isna().any():
            raise DataError(f"missing values in covariate '{name}'")
    if design is None:
        design = CovariateDesign.from_frame(frame, covariates)
    else:
        absent = [n for n in design.names if n not in frame]
        if absent:
            raise DataError(f"missing covariate column(s): {', '.join(absent)}")
    try:
        return Dataset(frame, structure, design, scope)
    except ConfigError as exc:
        raise DataError(str(exc)) from exc


@dataclass(frozen=True)
class TransitionDataset:
    """Right-censored survival data for one transition."""

    transition: Transition
    time: np.ndarray
    event: np.ndarray
    Z: np.ndarray
    rows: np.ndarray

    def __len__(self) -> int:
        return len(self.time)

    @property
    def n_events(self) -> int:
        return int(np.sum(self.event))


def transition_rows(dataset: Dataset, transition: Transition) -> tuple[np.ndarray, np.ndarray]:
    """Row indices contributing to `transition` and their event flags."""
    r, s = transition
    status = dataset.status
    from_r = dataset.from_state == r
    scoped = s in dataset.structure.partial_destinations(r, dataset.scope)
    use = from_r & ((status == STATUS_EVENT) | (status == STATUS_CENSORED))
    if scoped:
        use |= from_r & (status == STATUS_PARTIAL)
    rows = np.flatnonzero(use)
    event = (status[rows] == STATUS_EVENT) & (dataset.to_state[rows] == s)
    return rows, event.astype(bool)


def split_by_transition(
    dataset: Dataset, structure: ModelStructure | None = None
) -> dict[Transition, TransitionDataset]:
    """One right-censored dataset per transition.

    A transition to s censors the competing times at the same instant. A
    status-3 row only censors the destinations selected by the dataset's
    partial-outcome scope.
    """
    structure = structure or dataset.structure
    time = dataset.time
    out = {}
    for transition in structure.transitions:
        rows, event = transition_rows(dataset, transition)
        out[transition] = TransitionDataset(
            transition=transition,
            time=time[rows],
            event=event,
            Z=dataset.Z[rows],
            rows=rows,
        )
    return out
