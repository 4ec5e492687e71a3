"""
CLI command implementations
Команды: train, validate, sweep, forecast, gradcheck, sample-data
"""

from datetime import date
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from growthcast.core.config import RunConfig
from growthcast.core.exceptions import (
    EXIT_OK,
    EXIT_RUNTIME_FAILURE,
    CheckpointError,
    ConfigurationError,
    DataError,
    TrialFailureError,
)
from growthcast.core.logging import get_logger
from growthcast.models.schemas import CheckpointHeader, FeatureScaler, ModelConfig, NetworkParams
from growthcast.services.checkpoint import collect_checkpoints, load_checkpoint, save_checkpoint
from growthcast.services.dataio import (
    assemble_features,
    load_region_csv,
    prepare_datasets,
    select_regions,
    window_ending_at,
)
from growthcast.services.evaluation import (
    build_trial_sets,
    checkpoint_name,
    classify_cases,
    compare_cells,
    rmse_table,
    sweep_hidden_states,
    sweep_layers,
    train_models,
    trend_holds,
    write_table,
)
from growthcast.services.forecast import emit_outputs, forecast_region, predict_daily
from growthcast.services.train import grad_check, write_loss_history
from growthcast.utils.helpers import create_sample_dataset, format_duration, slugify

logger = get_logger(__name__)

LoadedModels = Tuple[ModelConfig, Optional[FeatureScaler], List[Tuple[int, NetworkParams]]]


def _output_dir(config: RunConfig) -> Path:
    path = Path(config.OUTPUT_DIR)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_models(config: RunConfig, checkpoints: Sequence[str]) -> LoadedModels:
    """Загрузить все чекпоинты до любой записи; архитектура и скейлер должны совпадать"""
    paths = collect_checkpoints(checkpoints or [])
    if not paths:
        raise ConfigurationError("no checkpoint files given (use --checkpoint PATH)")

    expected = config.model_config_for()
    headers: List[CheckpointHeader] = []
    models = []
    for path in paths:
        params, header = load_checkpoint(path, expected)
        headers.append(header)
        models.append((header.seed, params))

    scalers = {header.scaler.model_dump_json() if header.scaler else None for header in headers}
    if len(scalers) > 1:
        raise CheckpointError("checkpoints were trained with different scalers")
    return headers[0].model, headers[0].scaler, models


# =============================================================================
# TRAIN
# =============================================================================

def cmd_train(config: RunConfig, trials: Optional[int] = None) -> int:
    """Обучить модель (или несколько seeds) и записать чекпоинты и историю потерь"""
    config.check_paths()
    prepared = prepare_datasets(config)
    if not prepared.train_windows:
        raise DataError("no training windows: check TRAIN_REGIONS and the data date range")

    seeds = list(config.TRIAL_SEEDS[:trials]) if trials else [config.SEED]
    model_config = config.model_config_for()
    out = _output_dir(config)
    checkpoint_dir = out / "checkpoints"
    logger.info("training started", seeds=seeds, windows=len(prepared.train_windows),
                iterations=config.ITERATIONS, workers=config.WORKERS)

    reports, failed = train_models(
        model_config,
        prepared.train_windows,
        seeds,
        iterations=config.ITERATIONS,
        workers=config.WORKERS,
        checkpoint_dir=checkpoint_dir,
        checkpoint_every=config.CHECKPOINT_EVERY,
        scaler=prepared.scaler,
        progress_every=config.PROGRESS_EVERY,
    )
    for seed, report in reports:
        save_checkpoint(checkpoint_dir / checkpoint_name(seed), report.final_params,
                        report.config, seed, prepared.scaler)
        write_loss_history(report, out / f"loss_seed{seed}.csv")
        print(f"seed {seed}: final loss {report.loss_history[-1]:.6g} "
              f"({len(report.loss_history)} iterations, {format_duration(report.wall_time)})")

    if failed:
        print(f"failed seeds: {failed}")
    if not reports:
        raise TrialFailureError(f"all {len(seeds)} training runs diverged")
    return EXIT_OK if not failed else EXIT_RUNTIME_FAILURE


# =============================================================================
# VALIDATE
# =============================================================================

def cmd_validate(config: RunConfig, checkpoints: Sequence[str]) -> int:
    """Каждый чекпоинт - один запуск; кривые, огибающая и RMSE по регионам проверки"""
    if not config.VALIDATION_REGIONS:
        logger.warning("validation region list is empty, nothing to do")
        return EXIT_OK

    model_config, scaler, models = _load_models(config, checkpoints)
    config.check_paths()
    prepared = prepare_datasets(config, scaler)
    trial_sets = build_trial_sets(models, model_config, prepared.validation_windows,
                                  prepared.scaler, rmse_span=config.RMSE_SPAN)
    if not trial_sets:
        logger.warning("no validation region has enough data", regions=config.VALIDATION_REGIONS)
        return EXIT_OK

    out = _output_dir(config) / "validation"
    cases = []
    for region, trial_set in trial_sets.items():
        emit_outputs(trial_set, out / slugify(region))
        if trial_set.trial_count >= 2:
            assignment = classify_cases(trial_set)
            cases.append({
                "region": region,
                "best_seed": assignment.best_seed,
                "worst_seed": assignment.worst_seed,
                "best_final": float(assignment.best_curve[-1]),
                "normal_final": float(assignment.normal_curve[-1]),
                "worst_final": float(assignment.worst_curve[-1]),
            })

    table = rmse_table(trial_sets)
    write_table(table, _output_dir(config) / "validation_rmse")
    if cases:
        write_table(pd.DataFrame(cases), _output_dir(config) / "validation_cases")
    print(table.to_string(index=False, float_format=lambda v: f"{v:.2f}"))
    return EXIT_OK


# =============================================================================
# SWEEP
# =============================================================================

def cmd_sweep(config: RunConfig, axis: str) -> int:
    """Перебор числа скрытых состояний, слоев или типа ячейки"""
    config.check_paths()
    prepared = prepare_datasets(config)
    if not prepared.train_windows or not prepared.validation_windows:
        raise DataError("sweep needs both training and validation windows")

    base = config.model_config_for()
    common = {
        "train_windows": prepared.train_windows,
        "val_windows": prepared.validation_windows,
        "scaler": prepared.scaler,
        "seeds": config.TRIAL_SEEDS,
        "iterations": config.ITERATIONS,
        "workers": config.WORKERS,
        "rmse_span": config.RMSE_SPAN,
    }
    if axis == "hidden":
        table = sweep_hidden_states(config.HIDDEN_GRID, base, fixed_layers=config.SWEEP_FIXED_LAYERS, **common)
    elif axis == "layers":
        table = sweep_layers(config.LAYER_GRID, base, fixed_hidden=config.SWEEP_FIXED_HIDDEN, **common)
    elif axis == "cell":
        table = compare_cells(base, copy_task_iterations=config.COPY_TASK_ITERATIONS, **common)
    else:
        raise ConfigurationError(f"unknown sweep axis: {axis}")

    if axis in ("hidden", "layers"):
        logger.info("sweep trend", axis=axis, decreasing=trend_holds(table["mean_rmse"].tolist()))
    write_table(table, _output_dir(config) / f"sweep_{axis}")
    print(table.to_string(index=False, float_format=lambda v: f"{v:.2f}"))
    return EXIT_OK


# =============================================================================
# FORECAST
# =============================================================================

def cmd_forecast(
    config: RunConfig,
    checkpoints: Sequence[str],
    anchor_date: date,
    regions: Optional[Sequence[str]] = None,
) -> int:
    """Продолжение фактической кривой после даты якоря по каждому региону"""
    model_config, scaler, models = _load_models(config, checkpoints)
    config.check_paths()
    all_regions = load_region_csv(
        config.CONFIRMED_CSV, deaths_path=config.DEATHS_CSV, recovered_path=config.RECOVERED_CSV
    )
    if scaler is None:
        scaler = prepare_datasets(config).scaler
    selected = select_regions(all_regions, regions or config.VALIDATION_REGIONS)
    if not selected:
        raise DataError("none of the requested regions are present in the data")

    out = _output_dir(config) / "forecast"
    anchor = pd.Timestamp(anchor_date)
    for region in selected:
        series = all_regions[region]
        frame = assemble_features(series, config.DIFFERENCE_ALL_COUNTS)
        window = window_ending_at(frame, anchor_date, model_config.input_len)
        scaled = scaler.transform(window)
        per_model = np.stack([predict_daily(params, model_config, scaled, scaler) for _, params in models])

        actual = pd.Series(series.confirmed, index=series.dates)
        result = forecast_region(
            region,
            actual.loc[actual.index <= anchor],
            per_model,
            window_start=window.index[0].date(),
            mode=config.AUGMENT_MODE,
            source=config.CONTINUATION_SOURCE,
        )
        emit_outputs(result, out / f"{slugify(region)}_{anchor_date.isoformat()}")
        continuation = result.continuation.accumulated
        print(f"{region}: {continuation.iloc[0]:.0f} on {anchor_date.isoformat()} -> "
              f"{continuation.iloc[-1]:.0f} on {continuation.index[-1].date().isoformat()}")
    return EXIT_OK


# =============================================================================
# GRADCHECK
# =============================================================================

def cmd_gradcheck(
    config: RunConfig, trials: int = 10, hidden: Optional[int] = None, layers: Optional[int] = None
) -> int:
    """Проверка градиентов на уменьшенной сети; код 1, если ошибка выше порога"""
    check_config = ModelConfig(
        cell_kind=config.CELL_KIND,
        num_layers=layers or 2,
        hidden_size=hidden or 3,
        dropout_rate=config.DROPOUT_RATE,
        head_mode=config.HEAD_MODE,
        input_len=5,
        output_len=6,
        feature_count=5,
        seed=config.SEED,
    )
    report = grad_check(check_config, trials, seed=config.SEED)
    for name, error in report.per_parameter.items():
        print(f"{name:16s} {error:.3e}")
    status = "passed" if report.passed else "FAILED"
    print(f"{report.cell_kind} layers={report.num_layers} hidden={report.hidden_size} trials={report.trials}: "
          f"max relative error {report.max_relative_error:.3e} (threshold {report.threshold:.0e}) {status}")
    return EXIT_OK if report.passed else EXIT_RUNTIME_FAILURE


# =============================================================================
# SAMPLE DATA
# =============================================================================

def sample_region_names(config: RunConfig) -> List[str]:
    """Имена регионов для синтетических данных: "Страна*" дает две провинции"""
    names = []
    for region in list(config.TRAIN_REGIONS) + list(config.VALIDATION_REGIONS):
        if region.endswith("*"):
            country = region[:-1]
            names += [f"{country}/North", f"{country}/South"]
        else:
            names.append(region)
    return names


def cmd_sample_data(config: RunConfig, directory: Path, days: int = 120) -> int:
    """Записать синтетические CSV в формате JHU для всех регионов конфигурации"""
    paths = create_sample_dataset(directory, sample_region_names(config), days=days,
                                  seed=config.SEED, start=config.START_DATE)
    for feature, path in paths.items():
        print(f"{feature}: {path}")
    return EXIT_OK
