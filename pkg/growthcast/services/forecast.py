"""
Forecast service
Накопление прогнозов, продолжение фактической кривой (cut-and-augment), выгрузка CSV и SVG
"""

from datetime import date
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from growthcast.core.logging import get_logger
from growthcast.models.schemas import (
    Continuation,
    FeatureScaler,
    ForecastResult,
    ModelConfig,
    NetworkParams,
    TrialSet,
)
from growthcast.services.nn import predict
from growthcast.services.plotting import plot_curves
from growthcast.utils.helpers import atomic_write_text

logger = get_logger(__name__)

FRAME_COLUMNS = ["region", "date", "series", "kind", "value"]


def accumulate(daily: Sequence[float]) -> np.ndarray:
    """Накопленная сумма ежедневных значений"""
    return np.cumsum(np.asarray(daily, dtype=np.float64))


def predict_daily(
    params: NetworkParams, config: ModelConfig, scaled_input: np.ndarray, scaler: FeatureScaler
) -> np.ndarray:
    """Прогноз в режиме eval -> обратное масштабирование канала confirmed -> floor 0"""
    scaled = predict(params, config, scaled_input)
    return np.maximum(scaler.inverse_transform_feature(scaled, 0), 0.0)


def predict_future(
    models: Union[NetworkParams, Sequence[NetworkParams]],
    config: ModelConfig,
    scaler: FeatureScaler,
    recent_input,
    source: str = "mean",
) -> np.ndarray:
    """Ежедневный прогноз на output_len дней по последним input_len дням (вход уже масштабирован)"""
    values = np.asarray(recent_input, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < config.input_len:
        raise ValueError(
            f"forecast needs the last {config.input_len} days of input, got {values.shape[0] if values.ndim else 0}"
        )
    window = values[-config.input_len:]
    per_model = _per_model_daily(models, config, scaler, window)
    if source == "single":
        return per_model[0]
    if source != "mean":
        raise ValueError(f"unknown continuation source: {source}")
    return per_model.mean(axis=0)


def _per_model_daily(models, config, scaler, window) -> np.ndarray:
    if isinstance(models, NetworkParams):
        models = [models]
    if not models:
        raise ValueError("at least one model is required")
    return np.stack([predict_daily(params, config, window, scaler) for params in models])


# =============================================================================
# ПРОДОЛЖЕНИЕ
# =============================================================================

def cut_and_augment(
    prediction_accum: pd.Series, actual_accum: pd.Series, mode: str = "additive"
) -> Continuation:
    """Обрезать прогноз в конце фактических данных и выровнять по фактическому итогу"""
    if mode not in ("additive", "multiplicative"):
        raise ValueError(f"unknown augment mode: {mode}")
    if actual_accum.empty or prediction_accum.empty:
        raise ValueError("both curves must be non-empty")

    anchor = actual_accum.index[-1]
    if anchor not in prediction_accum.index:
        raise ValueError(f"prediction calendar does not contain the actual end date {anchor.date()}")
    segment = prediction_accum.loc[prediction_accum.index >= anchor].astype(np.float64)
    if len(segment) < 2:
        raise ValueError(f"prediction does not extend beyond {anchor.date()}")

    actual_final = float(actual_accum.iloc[-1])
    at_cut = float(segment.iloc[0])
    if mode == "additive":
        offset, scale = actual_final - at_cut, 1.0
        shifted = segment + offset
    else:
        if at_cut <= 0:
            raise ValueError("multiplicative alignment needs a positive prediction at the cut")
        offset, scale = 0.0, actual_final / at_cut
        shifted = segment * scale
    shifted.iloc[0] = actual_final

    return Continuation(
        anchor_date=anchor.date(),
        mode=mode,
        offset=offset,
        scale=scale,
        raw_segment=segment.diff().iloc[1:],
        shifted_segment=shifted.diff().iloc[1:],
        accumulated=shifted,
    )


def forecast_region(
    region_id: str,
    actual_accum: pd.Series,
    per_model_daily: np.ndarray,
    window_start: date,
    mode: str = "additive",
    source: str = "mean",
) -> ForecastResult:
    """Собрать результат прогноза: кривые моделей с базой на начало окна и продолжение"""
    per_model_daily = np.atleast_2d(np.asarray(per_model_daily, dtype=np.float64))
    # окно 67 дней заканчивается в якоре, горизонт 33 дня: якорь 2020-05-01 -> последний день 2020-06-03
    dates = pd.date_range(window_start, periods=per_model_daily.shape[1], freq="D")
    before = actual_accum.loc[actual_accum.index < pd.Timestamp(window_start)]
    baseline = float(before.iloc[-1]) if len(before) else 0.0

    per_model_accum = baseline + np.cumsum(per_model_daily, axis=1)
    low, high = per_model_accum.min(axis=0), per_model_accum.max(axis=0)
    mean = np.clip(per_model_accum.mean(axis=0), low, high)
    source_curve = mean if source == "mean" else per_model_accum[0]

    continuation = cut_and_augment(pd.Series(source_curve, index=dates), actual_accum, mode)
    logger.info("continuation built", region=region_id, anchor=str(continuation.anchor_date),
                offset=continuation.offset, scale=continuation.scale, days=len(continuation.shifted_segment))
    return ForecastResult(
        region_id=region_id,
        anchor_date=continuation.anchor_date,
        actual=actual_accum,
        mean_accumulated=pd.Series(mean, index=dates),
        min_accumulated=pd.Series(low, index=dates),
        max_accumulated=pd.Series(high, index=dates),
        model_count=per_model_daily.shape[0],
        continuation=continuation,
    )


# =============================================================================
# ВЫГРУЗКА
# =============================================================================

def _daily_of(cumulative: pd.Series, baseline: float = 0.0) -> pd.Series:
    return cumulative.diff().fillna(cumulative.iloc[0] - baseline).clip(lower=0.0)


def _rows(region: str, series: str, kind: str, values: pd.Series) -> List[Tuple]:
    return [(region, day.strftime("%Y-%m-%d"), series, kind, float(value)) for day, value in values.items()]


def forecast_frame(result: ForecastResult) -> pd.DataFrame:
    """Длинная таблица: region, date, series, kind, value"""
    region = result.region_id
    first_model_day = result.mean_accumulated.index[0]
    before = result.actual.loc[result.actual.index < first_model_day]
    baseline = float(before.iloc[-1]) if len(before) else 0.0

    rows: List[Tuple] = []
    rows += _rows(region, "actual", "cumulative", result.actual)
    rows += _rows(region, "actual", "daily", _daily_of(result.actual))
    for name in ("mean", "min", "max"):
        curve = getattr(result, f"{name}_accumulated")
        rows += _rows(region, name, "cumulative", curve)
        rows += _rows(region, name, "daily", _daily_of(curve, baseline))
    continuation = result.continuation
    rows += _rows(region, "continuation", "cumulative", continuation.accumulated.iloc[1:])
    rows += _rows(region, "continuation", "daily", continuation.shifted_segment)
    return pd.DataFrame(rows, columns=FRAME_COLUMNS)


def trial_set_frame(trial_set: TrialSet) -> pd.DataFrame:
    """Огибающая запусков и фактическая кривая в той же длинной схеме"""
    dates = trial_set.dates
    region = trial_set.region_id
    curves: Dict[str, np.ndarray] = {
        "actual": trial_set.actual_accumulated,
        "mean": trial_set.mean_curve,
        "min": trial_set.min_curve,
        "max": trial_set.max_curve,
    }
    rows: List[Tuple] = []
    for name, values in curves.items():
        cumulative = pd.Series(values, index=dates)
        rows += _rows(region, name, "cumulative", cumulative)
        rows += _rows(region, name, "daily", _daily_of(cumulative))
    return pd.DataFrame(rows, columns=FRAME_COLUMNS)


def trial_curves_frame(trial_sets: Union[TrialSet, Sequence[TrialSet]]) -> pd.DataFrame:
    """region, trial, day, daily_pred, accum_pred для каждого запуска"""
    if isinstance(trial_sets, TrialSet):
        trial_sets = [trial_sets]
    frames = []
    for trial_set in trial_sets:
        days = trial_set.per_trial_predictions.shape[1]
        for seed, daily, accum in zip(
            trial_set.seeds, trial_set.per_trial_predictions, trial_set.per_trial_accumulated
        ):
            frames.append(pd.DataFrame({
                "region": trial_set.region_id,
                "trial": seed,
                "day": np.arange(1, days + 1),
                "daily_pred": daily,
                "accum_pred": accum,
            }))
    if not frames:
        return pd.DataFrame(columns=["region", "trial", "day", "daily_pred", "accum_pred"])
    return pd.concat(frames, ignore_index=True)


def write_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    return atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n", float_format="%.6f"))


def emit_outputs(result: Union[ForecastResult, TrialSet], path_prefix: Union[str, Path]) -> List[Path]:
    """CSV + SVG для результата проверки (TrialSet) или прогноза (ForecastResult)"""
    prefix = Path(path_prefix)
    written: List[Path] = []
    if isinstance(result, TrialSet):
        written.append(write_csv(trial_set_frame(result), prefix.with_name(prefix.name + ".csv")))
        written.append(write_csv(trial_curves_frame(result), prefix.with_name(prefix.name + "_trials.csv")))
        dates = result.dates
        written.append(plot_curves(
            prefix.with_name(prefix.name + ".svg"),
            title=f"{result.region_id}: {result.trial_count} trials, mean RMSE {result.mean_rmse:.2f}",
            series={
                "actual": pd.Series(result.actual_accumulated, index=dates),
                "mean prediction": pd.Series(result.mean_curve, index=dates),
            },
            band=(pd.Series(result.min_curve, index=dates), pd.Series(result.max_curve, index=dates)),
            ylabel="cumulative cases",
        ))
        return written

    frame = forecast_frame(result)
    written.append(write_csv(frame, prefix.with_name(prefix.name + ".csv")))
    continuation = result.continuation
    written.append(plot_curves(
        prefix.with_name(prefix.name + ".svg"),
        title=f"{result.region_id}: continuation from {result.anchor_date.isoformat()}",
        series={
            "actual": result.actual,
            "mean prediction": result.mean_accumulated,
            "continuation": continuation.accumulated,
        },
        band=(result.min_accumulated, result.max_accumulated) if result.model_count > 1 else None,
        ylabel="cumulative cases",
    ))
    actual_daily = _daily_of(result.actual)
    written.append(plot_curves(
        prefix.with_name(prefix.name + "_daily.svg"),
        title=f"{result.region_id}: daily cases",
        series={"actual": actual_daily, "continuation": continuation.shifted_segment},
        ylabel="daily cases",
    ))
    return written
