"""
Evaluation service
RMSE на накопленных кривых, несколько запусков и огибающая, сценарии, перебор архитектур
"""

from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from growthcast.core.exceptions import ShapeError, TrainingDivergedError, TrialFailureError
from growthcast.core.logging import get_logger
from growthcast.core.metrics import metrics
from growthcast.models.schemas import (
    CaseAssignment,
    FeatureScaler,
    ModelConfig,
    NetworkParams,
    TrainReport,
    TrialSet,
    WindowPair,
)
from growthcast.services.forecast import accumulate, predict_daily, trial_curves_frame
from growthcast.services.nn import init_params, parameter_count, predict
from growthcast.services.train import loss_slice, mse_loss, train
from growthcast.utils.helpers import atomic_write_text, trend_holds

logger = get_logger(__name__)

__all__ = [
    "rmse", "predict_daily", "train_models", "run_trials", "build_trial_sets", "classify_cases",
    "rmse_table", "sweep_hidden_states", "sweep_layers", "compare_cells", "compare_parameters",
    "parameter_shape_differences", "copy_task_benchmark", "trial_curves_frame", "write_table", "trend_holds",
    "variant",
]

DEFAULT_SEEDS = (1, 2, 3, 4, 5)
COPY_TASK_ITERATIONS = 2000
# 0.993 ** 50 of the cell state survives the lag at init
COPY_TASK_FORGET_BIAS = 5.0
TrainedModel = Tuple[int, NetworkParams]


def variant(config: ModelConfig, **changes) -> ModelConfig:
    """Копия конфигурации с изменениями (с валидацией)"""
    return ModelConfig.model_validate({**config.model_dump(), **changes})


def rmse(prediction, actual, span: slice = slice(None)) -> float:
    """sqrt(sum((P - A)^2) / N)"""
    p = np.asarray(prediction, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if p.shape != a.shape:
        raise ShapeError(f"prediction {p.shape} and actual {a.shape} differ in length")
    p, a = p[span], a[span]
    if p.size == 0:
        raise ShapeError("rmse needs at least one value")
    return float(np.sqrt(np.mean((p - a) ** 2)))


# =============================================================================
# ЗАПУСКИ
# =============================================================================

def _train_one(job: Tuple) -> Tuple[int, Optional[TrainReport], str]:
    # верхний уровень модуля: задача должна сериализоваться для пула процессов
    config, windows, iterations, options = job
    try:
        return config.seed, train(config, windows, iterations, **options), ""
    except TrainingDivergedError as error:
        return config.seed, None, str(error)


def checkpoint_name(seed: int) -> str:
    return f"model_seed{seed}.ckpt"


def train_models(
    config: ModelConfig,
    train_windows: Sequence[WindowPair],
    seeds: Sequence[int] = DEFAULT_SEEDS,
    iterations: Optional[int] = None,
    workers: int = 1,
    checkpoint_dir: Optional[Union[str, Path]] = None,
    checkpoint_every: int = 0,
    scaler: Optional[FeatureScaler] = None,
    progress_every: int = 500,
) -> Tuple[List[Tuple[int, TrainReport]], List[int]]:
    """Обучить по модели на каждый seed; результаты в порядке seeds"""
    jobs = []
    for seed in seeds:
        options = {"progress_every": progress_every, "scaler": scaler}
        if checkpoint_dir is not None and checkpoint_every:
            options["checkpoint_every"] = checkpoint_every
            options["checkpoint_path"] = Path(checkpoint_dir) / checkpoint_name(seed)
        jobs.append((variant(config, seed=seed), list(train_windows), iterations, options))
    pooled = workers > 1 and len(jobs) > 1
    if pooled:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as executor:
            results = list(executor.map(_train_one, jobs))
    else:
        results = [_train_one(job) for job in jobs]

    reports: List[Tuple[int, TrainReport]] = []
    failed: List[int] = []
    for seed, report, error in results:
        if report is None:
            failed.append(seed)
            metrics.increment_counter("trials_failed")
            logger.warning("trial failed", seed=seed, error=error)
        else:
            if pooled and report.clip_events:
                # счетчики процессов пула не видны родителю
                metrics.increment_counter("gradient_clip_events", value=report.clip_events)
            reports.append((seed, report))
    return reports, failed


def build_trial_sets(
    models: Sequence[TrainedModel],
    config: ModelConfig,
    val_windows: Sequence[WindowPair],
    scaler: FeatureScaler,
    failed_seeds: Sequence[int] = (),
    rmse_span: str = "full",
) -> Dict[str, TrialSet]:
    """Прогноз каждой моделью по каждому региону проверки, накопление, RMSE и огибающая"""
    total = len(models) + len(failed_seeds)
    required = min(3, total)
    if len(models) < max(required, 1):
        raise TrialFailureError(f"only {len(models)} of {total} trials survived, {max(required, 1)} required")

    seeds = [seed for seed, _ in models]
    span = loss_slice(rmse_span, config.input_len, config.output_len)
    trial_sets: Dict[str, TrialSet] = {}
    for window in val_windows:
        daily = np.stack([predict_daily(params, config, window.input_window, scaler) for _, params in models])
        accumulated = np.cumsum(daily, axis=1)
        actual_daily = np.maximum(scaler.inverse_transform_feature(window.target_window, 0), 0.0)
        actual_accumulated = accumulate(actual_daily)

        low, high = accumulated.min(axis=0), accumulated.max(axis=0)
        per_trial = [rmse(curve, actual_accumulated, span) for curve in accumulated]
        trial_sets[window.region_id] = TrialSet(
            region_id=window.region_id,
            start_date=window.start_date,
            seeds=seeds,
            failed_seeds=list(failed_seeds),
            per_trial_predictions=daily,
            per_trial_accumulated=accumulated,
            actual_daily=actual_daily,
            actual_accumulated=actual_accumulated,
            mean_curve=np.clip(accumulated.mean(axis=0), low, high),
            min_curve=low,
            max_curve=high,
            per_trial_rmse=per_trial,
            mean_rmse=float(np.mean(per_trial)),
        )
        logger.info("region evaluated", region=window.region_id, trials=len(seeds),
                    mean_rmse=round(float(np.mean(per_trial)), 2))
    return trial_sets


def run_trials(
    config: ModelConfig,
    train_windows: Sequence[WindowPair],
    val_windows: Sequence[WindowPair],
    scaler: FeatureScaler,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    iterations: Optional[int] = None,
    workers: int = 1,
    rmse_span: str = "full",
) -> Dict[str, TrialSet]:
    """Независимые запуски по seeds -> TrialSet на каждый регион проверки"""
    if not seeds:
        raise ValueError("at least one trial seed is required")
    reports, failed = train_models(config, train_windows, seeds, iterations, workers)
    models = [(seed, report.final_params) for seed, report in reports]
    return build_trial_sets(models, config, val_windows, scaler, failed, rmse_span)


def classify_cases(trial_set: TrialSet) -> CaseAssignment:
    """Лучший - минимальный итог, худший - максимальный, нормальный - средняя кривая"""
    if trial_set.trial_count < 2:
        raise ValueError("case classification needs at least two surviving trials")
    finals = trial_set.per_trial_accumulated[:, -1]
    best, worst = int(np.argmin(finals)), int(np.argmax(finals))
    return CaseAssignment(
        best_trial=best,
        worst_trial=worst,
        best_seed=trial_set.seeds[best],
        worst_seed=trial_set.seeds[worst],
        best_curve=trial_set.per_trial_accumulated[best],
        normal_curve=trial_set.mean_curve,
        worst_curve=trial_set.per_trial_accumulated[worst],
    )


def rmse_table(trial_sets: Dict[str, TrialSet]) -> pd.DataFrame:
    """Точность по регионам: mean RMSE и разброс по запускам"""
    rows = []
    for region, trial_set in trial_sets.items():
        rows.append({
            "region": region,
            "trials": trial_set.trial_count,
            "failed": len(trial_set.failed_seeds),
            "mean_rmse": trial_set.mean_rmse,
            "min_rmse": min(trial_set.per_trial_rmse),
            "max_rmse": max(trial_set.per_trial_rmse),
        })
    return pd.DataFrame(rows, columns=["region", "trials", "failed", "mean_rmse", "min_rmse", "max_rmse"])


# =============================================================================
# ПЕРЕБОР АРХИТЕКТУР
# =============================================================================

def _unique_sorted(values: Sequence[int], axis: str) -> List[int]:
    if not values:
        raise ValueError(f"{axis} grid must not be empty")
    unique = sorted(set(values))
    if len(unique) != len(values):
        logger.warning("duplicate sweep values removed", axis=axis, values=list(values))
    return unique


def _sweep_point(config, train_windows, val_windows, scaler, seeds, iterations, workers, rmse_span) -> Dict:
    trial_sets = run_trials(config, train_windows, val_windows, scaler, seeds, iterations, workers, rmse_span)
    if not trial_sets:
        raise ValueError("sweep needs at least one validation window")
    mean_rmse = float(np.mean([t.mean_rmse for t in trial_sets.values()]))
    logger.info("sweep point finished", cell=config.cell_kind, layers=config.num_layers,
                hidden=config.hidden_size, mean_rmse=round(mean_rmse, 2))
    return {
        "cell_kind": config.cell_kind,
        "num_layers": config.num_layers,
        "hidden_size": config.hidden_size,
        "parameters": parameter_count(config),
        "trials": len(seeds),
        "mean_rmse": mean_rmse,
    }


def sweep_hidden_states(
    values: Sequence[int],
    base_config: ModelConfig,
    train_windows: Sequence[WindowPair],
    val_windows: Sequence[WindowPair],
    scaler: FeatureScaler,
    fixed_layers: int = 4,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    iterations: Optional[int] = None,
    workers: int = 1,
    rmse_span: str = "full",
) -> pd.DataFrame:
    """Mean RMSE для каждого числа скрытых состояний при fixed_layers слоях"""
    rows = [
        _sweep_point(variant(base_config, hidden_size=hidden, num_layers=fixed_layers),
                     train_windows, val_windows, scaler, seeds, iterations, workers, rmse_span)
        for hidden in _unique_sorted(values, "hidden")
    ]
    return pd.DataFrame(rows).sort_values("hidden_size", kind="stable").reset_index(drop=True)


def sweep_layers(
    values: Sequence[int],
    base_config: ModelConfig,
    train_windows: Sequence[WindowPair],
    val_windows: Sequence[WindowPair],
    scaler: FeatureScaler,
    fixed_hidden: int = 30,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    iterations: Optional[int] = None,
    workers: int = 1,
    rmse_span: str = "full",
) -> pd.DataFrame:
    """Mean RMSE для каждого числа слоев при fixed_hidden скрытых состояниях"""
    rows = [
        _sweep_point(variant(base_config, num_layers=layers, hidden_size=fixed_hidden),
                     train_windows, val_windows, scaler, seeds, iterations, workers, rmse_span)
        for layers in _unique_sorted(values, "layers")
    ]
    return pd.DataFrame(rows).sort_values("num_layers", kind="stable").reset_index(drop=True)


def parameter_shape_differences(first: NetworkParams, second: NetworkParams) -> Dict[str, Tuple]:
    """Имена параметров, формы которых различаются (или которых нет в одной из сетей)"""
    a, b = first.shapes(), second.shapes()
    return {
        name: (a.get(name), b.get(name)) for name in sorted(set(a) | set(b)) if a.get(name) != b.get(name)
    }


def compare_parameters(first: NetworkParams, second: NetworkParams) -> Dict[str, Tuple]:
    """Сравнить формы параметров; при несовпадении - ShapeError со списком различий"""
    differences = parameter_shape_differences(first, second)
    if differences:
        raise ShapeError(f"parameter shapes differ: {differences}")
    return first.shapes()


def compare_cells(
    base_config: ModelConfig,
    train_windows: Sequence[WindowPair],
    val_windows: Sequence[WindowPair],
    scaler: FeatureScaler,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    iterations: Optional[int] = None,
    workers: int = 1,
    rmse_span: str = "full",
    copy_task_iterations: int = COPY_TASK_ITERATIONS,
) -> pd.DataFrame:
    """Однослойные RNN и LSTM с одинаковыми настройками и задача копирования (0 итераций - без нее)"""
    configs = [variant(base_config, cell_kind=cell_kind, num_layers=1) for cell_kind in ("rnn", "lstm")]
    differences = parameter_shape_differences(
        init_params(configs[0], configs[0].seed), init_params(configs[1], configs[1].seed)
    )
    if differences:
        logger.info("cell kinds have different parameter shapes, compared by RMSE only",
                    differing=sorted(differences), rnn=parameter_count(configs[0]), lstm=parameter_count(configs[1]))
    rows = [
        _sweep_point(config, train_windows, val_windows, scaler, seeds, iterations, workers, rmse_span)
        for config in configs
    ]
    table = pd.DataFrame(rows)
    if copy_task_iterations > 0:
        losses = copy_task_benchmark(seeds=seeds, iterations=copy_task_iterations)
        table["copy_task_loss"] = [losses["rnn_loss"].mean(), losses["lstm_loss"].mean()]
    return table


# =============================================================================
# ЗАДАЧА КОПИРОВАНИЯ С ЗАДЕРЖКОЙ
# =============================================================================

def copy_task_windows(count: int, seq_len: int, lag: int, rng: np.random.Generator) -> List[WindowPair]:
    """Значение в момент seq_len-1-lag, нули в остальные моменты; цель - это значение"""
    if not 0 < lag < seq_len:
        raise ValueError(f"lag must be in (0, {seq_len}), got {lag}")
    position = seq_len - 1 - lag
    windows = []
    for n in range(count):
        payload = rng.uniform(0.1, 0.9)
        sequence = np.zeros((seq_len, 1))
        sequence[position, 0] = payload
        windows.append(WindowPair(
            region_id=f"copy-{n}", start_date=pd.Timestamp("2020-01-01").date(),
            input_window=sequence, target_window=[payload],
        ))
    return windows


def copy_task_benchmark(
    hidden: int = 8,
    lag: int = 50,
    seq_len: int = 67,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    iterations: int = COPY_TASK_ITERATIONS,
    learning_rate: float = 0.01,
    train_size: int = 64,
    val_size: int = 64,
    forget_bias: float = COPY_TASK_FORGET_BIAS,
) -> pd.DataFrame:
    """Итоговая ошибка на проверочных последовательностях для RNN и LSTM по каждому seed"""
    rows = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        train_windows = copy_task_windows(train_size, seq_len, lag, rng)
        val_windows = copy_task_windows(val_size, seq_len, lag, rng)
        inputs = np.stack([w.input_window for w in val_windows])
        targets = np.stack([w.target_window for w in val_windows])

        row = {"seed": seed}
        for cell_kind in ("rnn", "lstm"):
            config = ModelConfig(
                cell_kind=cell_kind, num_layers=1, hidden_size=hidden, dropout_rate=0.0, head_mode="last",
                input_len=seq_len, output_len=1, feature_count=1, seed=seed,
                learning_rate=learning_rate, iterations=iterations, forget_bias=forget_bias,
            )
            report = train(config, train_windows, iterations, progress_every=0)
            row[f"{cell_kind}_loss"] = mse_loss(predict(report.final_params, config, inputs), targets)
        logger.info("copy task seed finished", seed=seed, rnn=row["rnn_loss"], lstm=row["lstm_loss"])
        rows.append(row)
    return pd.DataFrame(rows, columns=["seed", "rnn_loss", "lstm_loss"])


# =============================================================================
# ТАБЛИЦЫ
# =============================================================================

def write_table(frame: pd.DataFrame, path: Union[str, Path]) -> Tuple[Path, Path]:
    """CSV и текстовая таблица с тем же именем"""
    path = Path(path)
    csv_path = atomic_write_text(
        path.with_suffix(".csv"), frame.to_csv(index=False, lineterminator="\n", float_format="%.6f")
    )
    text_path = atomic_write_text(
        path.with_suffix(".txt"), frame.to_string(index=False, float_format=lambda v: f"{v:.2f}") + "\n"
    )
    return csv_path, text_path
