"""Test the command-line interface end to end."""
import json
from unittest.mock import patch

import pandas as pd
import pytest

from msfit.cli import main, parse_profiles
from msfit.const import (
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_USAGE,
    FILE_GOF_AJ,
    FILE_GOF_KM,
    FILE_OBSERVATIONS,
    FILE_QUANTITIES,
    FILE_RESULTS,
    FILE_SELECTION,
    FILE_SUBGROUPS,
    FILE_TRUTH,
)
from msfit.coordinator import CandidateSet
from msfit.dist import DistributionSpec
from msfit.exceptions import ConfigError, NumericalError
from msfit.model import CovariateDesign, ModelStructure

TRANSITIONS = (
    "Hospital->ICU",
    "Hospital->Death",
    "Hospital->Discharge",
    "ICU->Death",
    "ICU->Discharge",
)


def _config(tmp_path, **extra):
    data = {"simulate": {"n": 300}, "csh": {t: {"family": "exponential"} for t in TRANSITIONS}}
    data.update(extra)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data))
    return str(path)


@pytest.fixture(name="simulated")
def simulated_fixture(tmp_path):
    config = _config(tmp_path)
    out = tmp_path / "run"
    assert main(["simulate", "--config", config, "--out", str(out), "--seed", "7"]) == EXIT_OK
    return config, out


def test_missing_config_is_usage_error(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == EXIT_USAGE


def test_fit_without_data_is_usage_error(tmp_path):
    assert main(["fit", "--config", _config(tmp_path), "--out", str(tmp_path)]) == EXIT_USAGE


def test_numerical_failure_exit_code(tmp_path):
    with patch("msfit.cli.generate", side_effect=NumericalError("diverged")):
        assert main(["simulate", "--out", str(tmp_path)]) == EXIT_NUMERICAL


def test_simulate_is_reproducible(tmp_path, simulated):
    config, first = simulated
    second = tmp_path / "again"
    assert main(["simulate", "--config", config, "--out", str(second), "--seed", "7"]) == EXIT_OK
    for name in (FILE_OBSERVATIONS, FILE_TRUTH):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    frame = pd.read_csv(first / FILE_OBSERVATIONS)
    assert frame["subject_id"].nunique() == 300


def test_fit_predict_gof_csh(simulated):
    config, out = simulated
    data = str(out / FILE_OBSERVATIONS)
    common = ["--config", config, "--out", str(out)]
    assert main(["fit", *common, "--data", data, "--framework", "csh"]) == EXIT_OK
    selection = pd.read_csv(out / FILE_SELECTION)
    assert selection["selected"].sum() == len(TRANSITIONS)
    results = json.loads((out / FILE_RESULTS).read_text())
    assert set(results["fits"]) == {"csh"}
    assert "comparison" not in results

    profile = json.dumps({"age_group": "<45", "gender": "F"})
    assert main(["predict", *common, "--B", "2", "--S", "200", "--profiles", profile]) == EXIT_OK
    quantities = pd.read_csv(out / FILE_QUANTITIES)
    n_keys = 5 + 5 * 4 + 2 * (1 + 4)
    assert len(quantities) == n_keys * 3
    assert set(quantities["framework"]) == {"csh"}
    assert set(quantities["bound"]) == {"est", "lo", "hi"}

    assert main(["gof", *common, "--data", data, "--grid", "0,5,10"]) == EXIT_OK
    aj = pd.read_csv(out / FILE_GOF_AJ)
    assert set(aj["time"]) == {0.0, 5.0, 10.0}
    assert (out / FILE_GOF_KM).exists()


@pytest.mark.parametrize("flag", ["--paper-procedure", "--stepwise"])
def test_fit_procedure_preset(simulated, flag):
    config, out = simulated
    structure = ModelStructure.hospital()
    preset = CandidateSet(
        csh={t: [DistributionSpec("exponential"), DistributionSpec("weibull")] for t in structure.transitions}
    )
    args = ["fit", "--config", config, "--out", str(out), "--data", str(out / FILE_OBSERVATIONS)]
    with patch("msfit.cli.procedure_candidates", return_value=preset) as candidates:
        assert main([*args, "--framework", "csh", flag]) == EXIT_OK
    candidates.assert_called_once()
    assert candidates.call_args.args[0] == structure
    selection = pd.read_csv(out / FILE_SELECTION)
    assert len(selection) == 2 * len(TRANSITIONS)
    assert selection["selected"].sum() == len(TRANSITIONS)


def test_fit_is_reproducible(tmp_path, simulated):
    config, out = simulated
    data = str(out / FILE_OBSERVATIONS)
    for name in ("first", "second"):
        args = ["fit", "--config", config, "--out", str(tmp_path / name), "--data", data]
        assert main([*args, "--framework", "csh"]) == EXIT_OK
    first, second = (tmp_path / name / FILE_RESULTS for name in ("first", "second"))
    assert first.read_bytes() == second.read_bytes()


def test_gof_rejects_bad_grid(simulated):
    config, out = simulated
    args = ["gof", "--config", config, "--out", str(out), "--data", str(out / FILE_OBSERVATIONS)]
    assert main([*args, "--framework", "csh"]) == EXIT_USAGE  # no results yet
    assert main(["fit", "--config", config, "--out", str(out), "--data", str(out / FILE_OBSERVATIONS), "--framework", "csh"]) == EXIT_OK
    assert main([*args, "--grid", "0,soon"]) == EXIT_USAGE


def test_parse_profiles(tmp_path):
    design = CovariateDesign(names=("gender",), levels={"gender": ("F", "M")})
    assert parse_profiles(None, design) == [{"gender": "F"}, {"gender": "M"}]
    assert parse_profiles('{"gender": "M"}', design) == [{"gender": "M"}]
    path = tmp_path / "profiles.json"
    path.write_text(json.dumps([{"gender": "F"}]))
    assert parse_profiles(str(path), design) == [{"gender": "F"}]
    with pytest.raises(ConfigError):
        parse_profiles("[1, 2]", design)
    with pytest.raises(ConfigError):
        parse_profiles('{"gender": "X"}', design)
    with pytest.raises(ConfigError):
        parse_profiles("not json", design)


@pytest.mark.slow
def test_fit_both_frameworks(simulated):
    config, out = simulated
    data = str(out / FILE_OBSERVATIONS)
    assert main(["fit", "--config", config, "--out", str(out), "--data", data]) == EXIT_OK
    results = json.loads((out / FILE_RESULTS).read_text())
    assert set(results["fits"]) == {"csh", "mixture"}
    comparison = results["comparison"]
    assert comparison["aic_difference"] == pytest.approx(
        comparison["aic"]["csh"] - comparison["aic"]["mixture"]
    )
    subgroups = pd.read_csv(out / FILE_SUBGROUPS)
    assert {"loglik_csh", "loglik_mixture", "difference"} <= set(subgroups.columns)
