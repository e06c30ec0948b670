"""Test run configuration loading and validation."""
import json

import pytest

from msfit.config import RUN_SCHEMA, RunConfig, load_run_config, validate
from msfit.const import DEFAULT_B, DEFAULT_SEED, SCOPE_ALL_BUT_DISCHARGE, SCOPE_DEATH
from msfit.exceptions import ConfigError
from msfit.model import ModelStructure


def test_defaults_without_file():
    config = load_run_config(None)
    assert config.structure == ModelStructure.hospital()
    assert config.frameworks == ("csh", "mixture")
    assert config.B == DEFAULT_B
    assert config.seed == DEFAULT_SEED
    assert config.scope == SCOPE_DEATH
    assert config.data is None


def test_relative_paths_resolve_against_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(
        json.dumps(
            {
                "data": "obs.csv",
                "output": "/abs/out",
                "framework": "mixture",
                "partial_outcome_scope": SCOPE_ALL_BUT_DISCHARGE,
                "B": "25",
            }
        )
    )
    config = load_run_config(path)
    assert config.data == tmp_path.resolve() / "obs.csv"
    assert str(config.output) == "/abs/out"
    assert config.frameworks == ("mixture",)
    assert config.scope == SCOPE_ALL_BUT_DISCHARGE
    assert config.B == 25


def test_custom_structure():
    config = RunConfig.from_dict(
        {"structure": {"states": ["Alive", "Dead"], "transitions": [["Alive", "Dead"]]}}
    )
    assert config.structure.transitions == (("Alive", "Dead"),)


@pytest.mark.parametrize(
    "data",
    [
        {"framework": "cox"},
        {"B": 0},
        {"zero_time": -1},
        {"partial_outcome_scope": "everything"},
        {"csh": {"Hospital->ICU": {"family": "pareto"}}},
        {"em": {"method": "newton"}},
        {"simulate": {"status3_fraction": 2}},
        {"unknown_key": 1},
    ],
)
def test_invalid_values(data):
    with pytest.raises(ConfigError, match="Invalid run configuration"):
        RunConfig.from_dict(data)


def test_error_names_the_path():
    with pytest.raises(ConfigError, match="optimizer/max_iter"):
        validate(RUN_SCHEMA, {"optimizer": {"max_iter": -3}}, "run configuration")


def test_unreadable_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_run_config(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        load_run_config(broken)
    listing = tmp_path / "list.json"
    listing.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        load_run_config(listing)
