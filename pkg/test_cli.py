"""
Тестирование командной строки: train, validate, sweep, forecast, gradcheck, sample-data
"""

import json

import numpy as np
import pandas as pd
import pytest

from growthcast.cli.commands import sample_region_names
from growthcast.core.config import RunConfig
from growthcast.main import main


def write_env(path, config: RunConfig, **changes):
    """Записать конфигурацию запуска в dotenv-файл"""
    values = config.model_dump()
    values.update(changes)
    lines = []
    for key, value in values.items():
        if value is None:
            continue
        if isinstance(value, (list, tuple)):
            value = json.dumps(list(value))
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key}={value}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


@pytest.fixture
def env_file(run_config, tmp_path):
    return write_env(tmp_path / "run.env", run_config)


@pytest.fixture
def trained(env_file, run_config):
    """Три обученных чекпоинта"""
    assert main(["train", "--config", env_file, "--trials", "3"]) == 0
    return run_config.OUTPUT_DIR


# =============================================================================
# TRAIN
# =============================================================================

def test_train_writes_checkpoint_and_history(env_file, run_config, capsys):
    assert main(["train", "--config", env_file, "--iterations", "5"]) == 0
    out = run_config.OUTPUT_DIR
    assert (out / "checkpoints" / "model_seed1.ckpt").is_file()
    history = pd.read_csv(out / "loss_seed1.csv")
    assert len(history) == 5
    assert "seed 1: final loss" in capsys.readouterr().out


def test_train_missing_csv(run_config, tmp_path, capsys):
    missing = tmp_path / "nowhere" / "confirmed.csv"
    env = write_env(tmp_path / "bad.env", run_config, CONFIRMED_CSV=missing)
    assert main(["train", "--config", env]) == 2
    assert str(missing) in capsys.readouterr().err


def test_invalid_configuration_value(run_config, tmp_path, capsys):
    env = write_env(tmp_path / "bad.env", run_config, HIDDEN_SIZE=99)
    assert main(["train", "--config", env]) == 2
    assert "HIDDEN_SIZE" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "absent.env")]) == 2
    assert "config file not found" in capsys.readouterr().err


def test_same_seed_gives_identical_checkpoints(env_file, tmp_path):
    """--seed дважды -> побайтно одинаковые чекпоинты"""
    for name in ("first", "second"):
        assert main(["train", "--config", env_file, "--seed", "7", "--out", str(tmp_path / name)]) == 0
    first = (tmp_path / "first" / "checkpoints" / "model_seed7.ckpt").read_bytes()
    second = (tmp_path / "second" / "checkpoints" / "model_seed7.ckpt").read_bytes()
    assert first == second


# =============================================================================
# VALIDATE
# =============================================================================

def test_validate_writes_curves_for_every_region(trained, env_file):
    assert main(["validate", "--config", env_file, "--checkpoint", str(trained / "checkpoints")]) == 0
    svgs = sorted(path.name for path in (trained / "validation").glob("*.svg"))
    assert svgs == ["Argentina.svg", "Indonesia.svg", "Saudi_Arabia.svg", "Sweden.svg"]

    table = pd.read_csv(trained / "validation_rmse.csv")
    assert sorted(table["region"]) == ["Argentina", "Indonesia", "Saudi Arabia", "Sweden"]
    assert (table["trials"] == 3).all()
    cases = pd.read_csv(trained / "validation_cases.csv")
    assert (cases["best_final"] <= cases["worst_final"]).all()

    curves = pd.read_csv(trained / "validation" / "Sweden_trials.csv")
    for _, trial in curves.groupby("trial"):
        assert np.all(np.diff(trial["accum_pred"].to_numpy()) >= 0)


def test_validate_with_empty_region_list(run_config, tmp_path):
    env = write_env(tmp_path / "empty.env", run_config, VALIDATION_REGIONS=[])
    assert main(["validate", "--config", env, "--checkpoint", str(tmp_path / "none.ckpt")]) == 0


def test_validate_rejects_corrupt_checkpoint(env_file, run_config, tmp_path, capsys):
    broken = tmp_path / "broken.ckpt"
    broken.write_bytes(b"not a checkpoint at all")
    assert main(["validate", "--config", env_file, "--checkpoint", str(broken)]) == 2
    assert "checkpoint" in capsys.readouterr().err
    assert not (run_config.OUTPUT_DIR / "validation").exists()
    assert not (run_config.OUTPUT_DIR / "validation_rmse.csv").exists()


def test_validate_rejects_architecture_mismatch(trained, env_file, capsys):
    code = main(["validate", "--config", env_file, "--hidden", "5",
                 "--checkpoint", str(trained / "checkpoints")])
    assert code == 2
    assert "checkpoint v1 architecture" in capsys.readouterr().err


def test_train_and_validate_are_reproducible(run_config, tmp_path):
    """train + validate дважды -> одинаковые CSV"""
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        env = write_env(tmp_path / f"{name}.env", run_config, OUTPUT_DIR=out)
        assert main(["train", "--config", env, "--trials", "3"]) == 0
        assert main(["validate", "--config", env, "--checkpoint", str(out / "checkpoints")]) == 0
        outputs.append(out)
    csvs = sorted(path.relative_to(outputs[0]) for path in outputs[0].rglob("*.csv"))
    assert len(csvs) > 5
    for relative in csvs:
        assert (outputs[0] / relative).read_bytes() == (outputs[1] / relative).read_bytes(), relative


# =============================================================================
# FORECAST
# =============================================================================

def test_forecast_continues_past_anchor(trained, env_file, capsys):
    code = main(["forecast", "--config", env_file, "--checkpoint", str(trained / "checkpoints"),
                 "--anchor-date", "2020-05-01", "--region", "Sweden"])
    assert code == 0
    frame = pd.read_csv(trained / "forecast" / "Sweden_2020-05-01.csv")
    continuation = frame[(frame["series"] == "continuation") & (frame["kind"] == "cumulative")]
    assert continuation["date"].min() == "2020-05-02"
    assert continuation["date"].max() == "2020-06-03"
    assert (trained / "forecast" / "Sweden_2020-05-01.svg").is_file()
    assert (trained / "forecast" / "Sweden_2020-05-01_daily.svg").is_file()

    actual = frame[(frame["series"] == "actual") & (frame["kind"] == "cumulative")]
    assert actual["date"].max() == "2020-05-01"
    assert continuation["value"].min() >= actual["value"].iloc[-1]
    assert "Sweden" in capsys.readouterr().out


def test_forecast_needs_full_input_window(trained, env_file, capsys):
    code = main(["forecast", "--config", env_file, "--checkpoint", str(trained / "checkpoints"),
                 "--anchor-date", "2020-02-15"])
    assert code == 2
    assert "need 67 days" in capsys.readouterr().err


def test_forecast_rejects_bad_date(env_file):
    with pytest.raises(SystemExit):
        main(["forecast", "--config", env_file, "--checkpoint", "x.ckpt", "--anchor-date", "May 1"])


# =============================================================================
# SWEEP, GRADCHECK, SAMPLE DATA
# =============================================================================

def test_sweep_hidden(env_file, run_config):
    assert main(["sweep", "--config", env_file, "--axis", "hidden", "--iterations", "3"]) == 0
    table = pd.read_csv(run_config.OUTPUT_DIR / "sweep_hidden.csv")
    assert table["hidden_size"].tolist() == [1, 4]
    assert (run_config.OUTPUT_DIR / "sweep_hidden.txt").is_file()


def test_sweep_cells(env_file, run_config):
    assert main(["sweep", "--config", env_file, "--axis", "cell", "--iterations", "2"]) == 0
    table = pd.read_csv(run_config.OUTPUT_DIR / "sweep_cell.csv")
    assert table["cell_kind"].tolist() == ["rnn", "lstm"]
    assert "copy_task_loss" not in table.columns


def test_sweep_cells_runs_copy_task(env_file, run_config):
    code = main(["sweep", "--config", env_file, "--axis", "cell", "--iterations", "2",
                 "--copy-task-iterations", "3"])
    assert code == 0
    table = pd.read_csv(run_config.OUTPUT_DIR / "sweep_cell.csv")
    assert table["copy_task_loss"].notna().all()


def test_copy_task_runs_by_default():
    assert RunConfig(_env_file=None).COPY_TASK_ITERATIONS > 0


def test_gradcheck_command(env_file, capsys):
    assert main(["gradcheck", "--config", env_file, "--trials", "2"]) == 0
    assert "passed" in capsys.readouterr().out


def test_sample_data_command(env_file, run_config, tmp_path):
    target = tmp_path / "generated"
    assert main(["sample-data", "--config", env_file, "--dir", str(target), "--days", "100"]) == 0
    confirmed = pd.read_csv(target / "time_series_covid19_confirmed_global.csv")
    assert len(confirmed.columns) == 4 + 100
    assert set(confirmed["Country/Region"]) >= {"China", "Sweden"}
    assert len(confirmed) == len(sample_region_names(run_config))


# =============================================================================
# ДЛИТЕЛЬНЫЙ ПРОГОН
# =============================================================================

@pytest.mark.slow
def test_full_length_run_on_fixture_snapshot(snapshot_csvs, tmp_path):
    """Конфигурация по умолчанию, 10 000 итераций, снимок JHU 22.01.2020 - 01.05.2020"""
    base = RunConfig(_env_file=None, OUTPUT_DIR=tmp_path / "out", WORKERS=4)
    env = write_env(
        tmp_path / "full.env", base,
        CONFIRMED_CSV=snapshot_csvs["confirmed"],
        DEATHS_CSV=snapshot_csvs["deaths"],
        RECOVERED_CSV=snapshot_csvs["recovered"],
    )
    assert main(["train", "--config", env, "--trials", "3"]) == 0

    out = base.OUTPUT_DIR
    assert main(["validate", "--config", env, "--checkpoint", str(out / "checkpoints")]) == 0
    assert len(list((out / "validation").glob("*.svg"))) == 4
    for path in (out / "validation").glob("*_trials.csv"):
        for _, trial in pd.read_csv(path).groupby("trial"):
            assert np.all(np.diff(trial["accum_pred"].to_numpy()) >= 0)
