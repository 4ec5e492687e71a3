"""
Тестирование накопления, прогноза, продолжения кривой и выгрузки результатов
"""

from datetime import date, timedelta

import numpy as np
import pandas as pd
import pytest

from growthcast.models.schemas import FeatureScaler, ModelConfig, TrialSet
from growthcast.services.dataio import load_region_csv, to_daily
from growthcast.services.forecast import (
    FRAME_COLUMNS,
    accumulate,
    cut_and_augment,
    emit_outputs,
    forecast_frame,
    forecast_region,
    predict_future,
)
from growthcast.services.nn import init_params

SCALER = FeatureScaler(per_feature_min=[0.0] * 5, per_feature_max=[500.0, 50.0, 300.0, 90.0, 180.0])


@pytest.fixture
def forecast_config():
    return ModelConfig(num_layers=1, hidden_size=3, input_len=5, output_len=8, seed=1)


def series(values, start="2020-04-20"):
    return pd.Series(np.asarray(values, dtype=np.float64), index=pd.date_range(start, periods=len(values)))


@pytest.fixture
def result():
    """Фактические данные до 1 мая, три модели, окно с 27 апреля на 10 дней"""
    actual = series(np.cumsum(np.arange(1, 13) * 10.0))
    per_model = np.array([np.full(10, 100.0), np.full(10, 120.0), np.linspace(80.0, 140.0, 10)])
    return forecast_region("Sweden", actual, per_model, window_start=date(2020, 4, 27))


# =============================================================================
# НАКОПЛЕНИЕ
# =============================================================================

def test_accumulate_examples():
    np.testing.assert_array_equal(accumulate([1, 2, 3]), [1, 3, 6])
    assert accumulate([]).size == 0


def test_accumulate_inverts_to_daily():
    cumulative = [0, 2, 2, 7]
    np.testing.assert_array_equal(accumulate(to_daily(cumulative)), cumulative)


# =============================================================================
# ПРОГНОЗ
# =============================================================================

def test_predict_future_contract(forecast_config):
    params = init_params(forecast_config, 1)
    recent = np.random.default_rng(0).uniform(0, 1, (9, 5))
    daily = predict_future(params, forecast_config, SCALER, recent)
    assert daily.shape == (8,)
    assert np.all(daily >= 0)
    np.testing.assert_array_equal(daily, predict_future(params, forecast_config, SCALER, recent))


def test_predict_future_uses_the_last_window(forecast_config):
    params = init_params(forecast_config, 1)
    recent = np.random.default_rng(1).uniform(0, 1, (12, 5))
    np.testing.assert_array_equal(
        predict_future(params, forecast_config, SCALER, recent),
        predict_future(params, forecast_config, SCALER, recent[-5:]),
    )
    shifted = predict_future(params, forecast_config, SCALER, recent[:-1])
    assert shifted.shape == (8,)


def test_predict_future_mean_of_models(forecast_config):
    models = [init_params(forecast_config, seed) for seed in (1, 2, 3)]
    recent = np.random.default_rng(2).uniform(0, 1, (5, 5))
    single = [predict_future(m, forecast_config, SCALER, recent) for m in models]
    np.testing.assert_allclose(predict_future(models, forecast_config, SCALER, recent), np.mean(single, axis=0))
    np.testing.assert_array_equal(
        predict_future(models, forecast_config, SCALER, recent, source="single"), single[0]
    )


def test_predict_future_short_input(forecast_config):
    params = init_params(forecast_config, 1)
    with pytest.raises(ValueError, match="last 5 days"):
        predict_future(params, forecast_config, SCALER, np.zeros((4, 5)))


# =============================================================================
# ПРОДОЛЖЕНИЕ
# =============================================================================

def test_cut_and_augment_shifts_by_offset():
    """Итог 10 000, прогноз в точке среза 9 000 -> сдвиг на +1 000"""
    prediction = series(7_900 + 100.0 * np.arange(15))
    actual = series(np.linspace(1_000, 10_000, 12))
    continuation = cut_and_augment(prediction, actual)

    assert continuation.anchor_date == date(2020, 5, 1)
    assert continuation.offset == pytest.approx(1_000.0)
    assert continuation.scale == 1.0
    raw = prediction.loc["2020-05-01":]
    np.testing.assert_allclose(continuation.accumulated.to_numpy(), raw.to_numpy() + 1_000)
    assert len(continuation.shifted_segment) == 3
    assert continuation.shifted_segment.index[0] == pd.Timestamp("2020-05-02")


def test_cut_and_augment_already_aligned():
    prediction = series(9_000 + 50.0 * np.arange(15))
    actual = series(9_000 + 50.0 * np.arange(12))
    continuation = cut_and_augment(prediction, actual)
    assert continuation.offset == 0.0
    pd.testing.assert_series_equal(continuation.shifted_segment, continuation.raw_segment)


def test_continuity_and_differencing_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(20):
        prediction = series(np.cumsum(rng.uniform(0, 500, 30)))
        actual = series(np.cumsum(rng.uniform(0, 500, 20)))
        continuation = cut_and_augment(prediction, actual)
        assert abs(continuation.accumulated.iloc[0] - actual.iloc[-1]) <= 1e-9
        np.testing.assert_allclose(continuation.accumulated.diff().iloc[1:], continuation.shifted_segment)


def test_additive_continuation_keeps_daily_pattern():
    """Ежедневный спад прогноза (с 400 до 300 и ниже) сохраняется после сдвига"""
    daily = np.concatenate([np.full(10, 420.0), np.linspace(400.0, 250.0, 30)])
    prediction = series(np.cumsum(daily), start="2020-04-21")
    actual = series(np.cumsum(np.full(11, 380.0)), start="2020-04-21")
    continuation = cut_and_augment(prediction, actual)
    np.testing.assert_allclose(continuation.shifted_segment, continuation.raw_segment)
    assert continuation.shifted_segment.iloc[0] > 300
    assert continuation.shifted_segment.iloc[19] < 300


# ежедневный прогноз Индонезии с 01.05.2020: полоса 400-300, ниже 300 с 21.05
INDONESIA_DAILY_FORECAST = np.linspace(400.0, 250.0, 30)


def test_indonesia_continuation_on_snapshot(snapshot_csvs):
    """Фактическая кривая Индонезии из снимка, продолжение с 01.05.2020"""
    indonesia = load_region_csv(snapshot_csvs["confirmed"])["Indonesia"]
    actual = pd.Series(indonesia.confirmed, index=indonesia.dates)
    assert actual.index[-1] == pd.Timestamp("2020-05-01")
    assert 10_000 < actual.iloc[-1] < 11_000

    baseline = actual.loc["2020-04-20"]
    daily = np.concatenate([np.full(10, 350.0), INDONESIA_DAILY_FORECAST])
    prediction = series(baseline + np.cumsum(daily), start="2020-04-21")
    continuation = cut_and_augment(prediction, actual)

    assert continuation.anchor_date == date(2020, 5, 1)
    assert continuation.accumulated.iloc[0] == actual.iloc[-1]
    assert continuation.offset == pytest.approx(actual.iloc[-1] - baseline - 10 * 350.0 - 400.0)
    np.testing.assert_allclose(continuation.shifted_segment, continuation.raw_segment)
    assert 300 < continuation.shifted_segment.iloc[0] <= 400
    assert continuation.shifted_segment.loc["2020-05-21":].max() < 300
    assert continuation.shifted_segment.index[-1] == pd.Timestamp("2020-05-30")


def test_cut_and_augment_multiplicative():
    prediction = series(1_000.0 + 100.0 * np.arange(15))
    actual = series(np.linspace(100, 4_200, 12))
    continuation = cut_and_augment(prediction, actual, mode="multiplicative")
    assert continuation.scale == pytest.approx(2.0)
    assert continuation.accumulated.iloc[0] == 4_200.0
    assert continuation.accumulated.iloc[-1] == pytest.approx(2.0 * prediction.iloc[-1])


def test_cut_and_augment_multiplicative_needs_positive_cut():
    prediction = series(np.zeros(15))
    with pytest.raises(ValueError):
        cut_and_augment(prediction, series(np.arange(12.0)), mode="multiplicative")


def test_cut_and_augment_without_overlap():
    prediction = series(np.arange(10.0), start="2020-06-01")
    with pytest.raises(ValueError, match="does not contain"):
        cut_and_augment(prediction, series(np.arange(12.0)))


def test_cut_and_augment_without_extension():
    with pytest.raises(ValueError, match="beyond"):
        cut_and_augment(series(np.arange(12.0)), series(np.arange(12.0)))


def test_cut_and_augment_unknown_mode():
    with pytest.raises(ValueError):
        cut_and_augment(series(np.arange(15.0)), series(np.arange(12.0)), mode="shifted")


# =============================================================================
# РЕЗУЛЬТАТ ПРОГНОЗА
# =============================================================================

def test_forecast_region_baseline_and_envelope(result):
    # до 27 апреля накоплено 10 + 20 + ... + 70
    assert result.mean_accumulated.iloc[0] == pytest.approx(280.0 + 100.0)
    assert result.model_count == 3
    assert np.all(result.min_accumulated <= result.mean_accumulated)
    assert np.all(result.mean_accumulated <= result.max_accumulated)
    assert result.anchor_date == date(2020, 5, 1)
    assert result.continuation.accumulated.iloc[0] == result.actual.iloc[-1]
    assert result.continuation.accumulated.index[-1] == pd.Timestamp("2020-05-06")


def test_full_window_continues_33_days_past_anchor():
    """Окно 67 дней заканчивается 01.05.2020: 100 дней прогноза, продолжение до 03.06.2020"""
    actual = series(np.cumsum(np.full(100, 50.0)), start="2020-01-23")
    window_start = date(2020, 5, 1) - timedelta(days=66)
    result = forecast_region("Indonesia", actual, np.full((2, 100), 40.0), window_start=window_start)
    assert window_start == date(2020, 2, 25)
    assert result.anchor_date == date(2020, 5, 1)
    assert len(result.continuation.shifted_segment) == 33
    assert result.continuation.accumulated.index[-1] == pd.Timestamp("2020-06-03")


def test_forecast_frame_schema(result):
    frame = forecast_frame(result)
    assert list(frame.columns) == FRAME_COLUMNS
    assert set(frame["series"]) == {"actual", "mean", "min", "max", "continuation"}
    assert set(frame["kind"]) == {"cumulative", "daily"}
    assert (frame.loc[frame["kind"] == "daily", "value"] >= 0).all()
    continuation = frame[(frame["series"] == "continuation") & (frame["kind"] == "daily")]
    assert continuation["date"].tolist()[0] == "2020-05-02"


def test_emit_forecast_outputs(result, tmp_path):
    first = emit_outputs(result, tmp_path / "a" / "Sweden_2020-05-01")
    second = emit_outputs(result, tmp_path / "b" / "Sweden_2020-05-01")
    assert [path.name for path in first] == [
        "Sweden_2020-05-01.csv", "Sweden_2020-05-01.svg", "Sweden_2020-05-01_daily.svg",
    ]
    for path in first:
        assert path.stat().st_size > 0
    assert first[0].read_bytes() == second[0].read_bytes()
    assert first[1].read_text().lstrip().startswith("<?xml")


def test_emit_trial_set_outputs(tmp_path):
    """5 запусков по 100 дней: огибающая и 5 x 100 строк запусков"""
    rng = np.random.default_rng(4)
    daily = rng.uniform(0, 50, (5, 100))
    accumulated = np.cumsum(daily, axis=1)
    trial_set = TrialSet(
        region_id="Saudi Arabia",
        start_date=date(2020, 1, 22),
        seeds=[1, 2, 3, 4, 5],
        per_trial_predictions=daily,
        per_trial_accumulated=accumulated,
        actual_daily=daily[0],
        actual_accumulated=accumulated[0],
        mean_curve=accumulated.mean(axis=0),
        min_curve=accumulated.min(axis=0),
        max_curve=accumulated.max(axis=0),
        per_trial_rmse=[1.0] * 5,
        mean_rmse=1.0,
    )
    written = emit_outputs(trial_set, tmp_path / "Saudi_Arabia")
    assert [path.name for path in written] == ["Saudi_Arabia.csv", "Saudi_Arabia_trials.csv", "Saudi_Arabia.svg"]

    envelope = pd.read_csv(written[0])
    assert len(envelope) == 4 * 2 * 100
    trials = pd.read_csv(written[1])
    assert len(trials) == 5 * 100
    assert sorted(trials["trial"].unique()) == [1, 2, 3, 4, 5]
    assert written[2].stat().st_size > 0
