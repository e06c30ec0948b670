"""Command-line entry point: simulate, fit, predict and gof."""

from __future__ import annotations

import argparse
from collections.abc import Mapping, Sequence
import json
import logging
from pathlib import Path
import sys
from typing import Any

import pandas as pd

from .config import RunConfig, load_run_config, read_json
from .const import (
    DOMAIN,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_USAGE,
    FILE_GOF_AJ,
    FILE_GOF_HIST,
    FILE_GOF_KM,
    FILE_OBSERVATIONS,
    FILE_QUANTITIES,
    FILE_QUANTITIES_JSON,
    FILE_RESULTS,
    FILE_SELECTION,
    FILE_SUBGROUPS,
    FILE_TRUTH,
    FRAMEWORK_BOTH,
    FRAMEWORK_CSH,
    FRAMEWORK_MIXTURE,
    LOGGER,
    VERSION,
)
from .coordinator import (
    CandidateSet,
    ModelSelectionCoordinator,
    procedure_candidates,
    single_candidates,
)
from .csh import CshModelSpec
from .exceptions import ConfigError, MsfitError
from .inference import OptimControls, compare_subgroups
from .mixture import EmControls, MixtureModelSpec
from .model import Dataset, load_dataset, read_observations
from .nonparam import gof_table, histogram_table, km_table
from .quantities import quantities_with_intervals
from .results import load_results, results_to_dict
from .synthdata import SynthConfig, generate
from .util import write_csv, write_json


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=DOMAIN, description="Parametric multi-state survival models."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--out", help="output directory (default: config 'output' or '.')")
    common.add_argument("--seed", type=int, help="root random seed")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="write a synthetic dataset")

    fit = sub.add_parser("fit", parents=[common], help="fit and select models")
    fit.add_argument("--data", help="observation CSV")
    fit.add_argument(
        "--framework", choices=[FRAMEWORK_CSH, FRAMEWORK_MIXTURE, FRAMEWORK_BOTH]
    )
    fit.add_argument("--grouping", help="comma-separated covariates for subgroup log-likelihoods")
    fit.add_argument(
        "--paper-procedure",
        "--stepwise",
        dest="stepwise",
        action="store_true",
        help="use the stepwise family/covariate/cure candidate preset",
    )

    predict = sub.add_parser("predict", parents=[common], help="derived quantities with intervals")
    predict.add_argument("--fit", dest="fit_path", help="results JSON (default: <out>/results.json)")
    predict.add_argument(
        "--framework", choices=[FRAMEWORK_CSH, FRAMEWORK_MIXTURE, FRAMEWORK_BOTH]
    )
    predict.add_argument("--B", type=int, help="parameter draws")
    predict.add_argument("--S", type=int, help="simulated individuals per evaluation")
    predict.add_argument(
        "--profiles",
        help="JSON list of covariate profiles, a path to one, or 'all' for every level combination",
    )

    gof = sub.add_parser("gof", parents=[common], help="goodness-of-fit tables")
    gof.add_argument("--fit", dest="fit_path", help="results JSON (default: <out>/results.json)")
    gof.add_argument("--data", help="observation CSV")
    gof.add_argument(
        "--framework", choices=[FRAMEWORK_CSH, FRAMEWORK_MIXTURE, FRAMEWORK_BOTH]
    )
    gof.add_argument("--grouping", help="comma-separated covariates defining subgroups")
    gof.add_argument("--grid", help="comma-separated evaluation times (days)")
    gof.add_argument("--bins", type=int, default=20, help="histogram bins")
    return parser


def _out_dir(args: argparse.Namespace, config: RunConfig) -> Path:
    if args.out:
        return Path(args.out)
    return config.output or Path(".")


def _seed(args: argparse.Namespace, config: RunConfig) -> int:
    return config.seed if args.seed is None else int(args.seed)


def _frameworks(value: str | None, config: RunConfig) -> tuple[str, ...]:
    if value is None:
        return config.frameworks
    return (FRAMEWORK_CSH, FRAMEWORK_MIXTURE) if value == FRAMEWORK_BOTH else (value,)


def _split(value: str | None) -> list[str] | None:
    if value is None:
        return None
    return [v.strip() for v in value.split(",") if v.strip()]


def _dataset(args: argparse.Namespace, config: RunConfig) -> Dataset:
    path = Path(args.data) if args.data else config.data
    if path is None:
        raise ConfigError("no observation data given (--data or 'data' in the config)")
    return load_dataset(read_observations(path), config.structure, config.zero_time, config.scope)


def _candidates(args: argparse.Namespace, config: RunConfig, dataset: Dataset) -> CandidateSet:
    structure = config.structure
    covariates = dataset.design.names
    if args.stepwise:
        return procedure_candidates(structure, covariates)
    configured = (
        CandidateSet.from_dict(config.candidates, structure) if config.candidates else CandidateSet()
    )
    csh = (
        CshModelSpec.from_dict(config.csh) if config.csh
        else CshModelSpec.uniform(structure, "gengamma", covariates)
    )
    mixture = (
        MixtureModelSpec.from_dict(config.mixture) if config.mixture
        else MixtureModelSpec.uniform(structure, "gengamma", membership_covariates=covariates)
    )
    fallback = single_candidates(structure, csh, mixture)
    return CandidateSet(
        csh=configured.csh or fallback.csh,
        mixture=configured.mixture or fallback.mixture,
    )


def cmd_simulate(args: argparse.Namespace, config: RunConfig) -> int:
    block = dict(config.simulate)
    if args.seed is not None:
        block["seed"] = args.seed
    block.setdefault("seed", config.seed)
    frame, truth = generate(SynthConfig(**block))
    out = _out_dir(args, config)
    write_csv(out / FILE_OBSERVATIONS, frame)
    write_json(out / FILE_TRUTH, truth)
    LOGGER.info("Wrote %s and %s to %s", FILE_OBSERVATIONS, FILE_TRUTH, out)
    return EXIT_OK


def cmd_fit(args: argparse.Namespace, config: RunConfig) -> int:
    dataset = _dataset(args, config)
    frameworks = _frameworks(args.framework, config)
    candidates = _candidates(args, config, dataset)
    coordinator = ModelSelectionCoordinator(
        dataset,
        OptimControls.from_dict(config.optimizer),
        EmControls.from_dict(config.em),
        config.workers,
    )
    selected = coordinator.select(candidates, frameworks)
    fits = {name: result.fit for name, result in selected.items()}
    out = _out_dir(args, config)
    seed = _seed(args, config)

    comparison = None
    if len(fits) == 2:
        grouping = _split(args.grouping)
        grouping = list(dataset.design.levels) if grouping is None else grouping
        table = compare_subgroups(fits[FRAMEWORK_CSH], fits[FRAMEWORK_MIXTURE], dataset, grouping)
        write_csv(out / FILE_SUBGROUPS, table)
        comparison = {
            "aic": {name: fit.aic for name, fit in fits.items()},
            "aic_difference": fits[FRAMEWORK_CSH].aic - fits[FRAMEWORK_MIXTURE].aic,
            "grouping": grouping,
            "subgroups": table.to_dict(orient="records"),
        }
        LOGGER.info(
            "AIC cause-specific hazards %.2f, mixture %.2f",
            fits[FRAMEWORK_CSH].aic,
            fits[FRAMEWORK_MIXTURE].aic,
        )
    selection = pd.concat([r.table for r in selected.values()], ignore_index=True)
    write_csv(out / FILE_SELECTION, selection)
    write_json(
        out / FILE_RESULTS,
        results_to_dict(
            fits,
            seed,
            comparison,
            {"candidates": selection.to_dict(orient="records")},
        ),
    )
    LOGGER.info("Wrote %s and %s to %s", FILE_RESULTS, FILE_SELECTION, out)
    return EXIT_OK


def parse_profiles(value: str | None, design) -> list[dict[str, Any]]:
    """Profiles from inline JSON, a JSON file or ``all``; default is every combination."""
    if value is None or value == "all":
        return design.profiles(list(design.levels)) if design.levels else [{}]
    path = Path(value)
    if path.exists():
        profiles = read_json(path)
    else:
        try:
            profiles = json.loads(value)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--profiles is neither a file nor JSON: {exc}") from exc
    if isinstance(profiles, Mapping):
        profiles = [profiles]
    if not isinstance(profiles, list) or not all(isinstance(p, Mapping) for p in profiles):
        raise ConfigError("profiles must be a JSON object or a list of objects")
    for profile in profiles:
        design.encode(profile)
    return [dict(p) for p in profiles]


def _load_fits(args: argparse.Namespace, config: RunConfig, frameworks: Sequence[str]):
    path = Path(args.fit_path) if args.fit_path else _out_dir(args, config) / FILE_RESULTS
    fits = load_results(path)
    chosen = {name: fit for name, fit in fits.items() if fit.framework in frameworks}
    if not chosen:
        raise ConfigError(f"{path} holds no fit for {', '.join(frameworks)}")
    return chosen


def cmd_predict(args: argparse.Namespace, config: RunConfig) -> int:
    frameworks = _frameworks(args.framework, config)
    fits = _load_fits(args, config, frameworks)
    B = config.B if args.B is None else args.B
    S = config.S if args.S is None else args.S
    seed = _seed(args, config)
    tables = []
    payload: dict[str, Any] = {"seed": seed}
    for name, fit in fits.items():
        profiles = parse_profiles(args.profiles, fit.design)
        summary = quantities_with_intervals(fit, fit.draws(B, seed), profiles, S, seed)
        table = summary.table.copy()
        table.insert(0, "framework", fit.framework)
        tables.append(table)
        payload[name] = summary.to_dict()
    out = _out_dir(args, config)
    write_csv(out / FILE_QUANTITIES, pd.concat(tables, ignore_index=True))
    write_json(out / FILE_QUANTITIES_JSON, payload)
    LOGGER.info("Wrote %s to %s", FILE_QUANTITIES, out)
    return EXIT_OK


def cmd_gof(args: argparse.Namespace, config: RunConfig) -> int:
    frameworks = _frameworks(args.framework, config)
    fits = _load_fits(args, config, frameworks)
    dataset = _dataset(args, config)
    grouping = _split(args.grouping) or []
    grid = None
    if args.grid:
        try:
            grid = sorted(float(x) for x in _split(args.grid))
        except ValueError as exc:
            raise ConfigError(f"--grid must be comma-separated numbers: {exc}") from exc
    aj, km, hist = [], [], []
    for fit in fits.values():
        table = gof_table(fit, dataset, grid, grouping)
        table.insert(0, "framework", fit.framework)
        aj.append(table)
        if fit.framework == FRAMEWORK_CSH:
            km.append(km_table(fit, dataset, grid, grouping))
        else:
            hist.append(histogram_table(fit, dataset, args.bins))
    out = _out_dir(args, config)
    write_csv(out / FILE_GOF_AJ, pd.concat(aj, ignore_index=True))
    if km:
        write_csv(out / FILE_GOF_KM, pd.concat(km, ignore_index=True))
    if hist:
        write_csv(out / FILE_GOF_HIST, pd.concat(hist, ignore_index=True))
    LOGGER.info("Wrote goodness-of-fit tables to %s", out)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "gof": cmd_gof,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_run_config(args.config)
        return COMMANDS[args.command](args, config)
    except ConfigError as exc:
        LOGGER.error("%s", exc)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except MsfitError as exc:
        LOGGER.error("%s", exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
