"""
Тестирование функции потерь, обратного прохода, Adam и цикла обучения
"""

from collections import OrderedDict
from datetime import date

import numpy as np
import pandas as pd
import pytest

from conftest import make_windows
from growthcast.core.exceptions import ShapeError, TrainingDivergedError
from growthcast.core.metrics import metrics
from growthcast.models.schemas import AdamState, ModelConfig, WindowPair
from growthcast.services.checkpoint import load_checkpoint
from growthcast.services.nn import init_params, network_forward
from growthcast.services.train import (
    adam_step,
    backward,
    clip_gradients,
    grad_check,
    mse_loss,
    mse_loss_gradient,
    relative_error,
    train,
    write_loss_history,
)


# =============================================================================
# MSE
# =============================================================================

def test_mse_examples():
    assert mse_loss([0.3, 0.6], [0.3, 0.6]) == 0.0
    assert mse_loss([1.0, 1.0], [0.0, 0.0]) == pytest.approx(1.0)
    assert mse_loss([0.2, 0.4, 0.9], [0.1, 0.5, 0.7]) == pytest.approx(0.02)


def test_mse_extrapolated_span():
    prediction = [0.0, 0.0, 1.0, 1.0]
    target = [1.0, 1.0, 1.0, 0.0]
    assert mse_loss(prediction, target, "extrapolated", input_len=2) == pytest.approx(0.5)
    gradient = mse_loss_gradient(prediction, target, "extrapolated", input_len=2)
    np.testing.assert_allclose(gradient, [0.0, 0.0, 0.0, 1.0])


def test_mse_length_mismatch():
    with pytest.raises(ShapeError):
        mse_loss([0.1, 0.2], [0.1])


# =============================================================================
# ОБРАТНЫЙ ПРОХОД
# =============================================================================

def test_zero_loss_gradient_gives_zero_gradients(tiny_config):
    params = init_params(tiny_config, 0)
    inputs = np.random.default_rng(0).uniform(0, 1, (2, 5, 3))
    prediction, cache = network_forward(params, tiny_config, inputs)
    grads = backward(params, tiny_config, cache, np.zeros_like(prediction))
    assert list(grads) == list(params.arrays())
    assert all(not g.any() for g in grads.values())


def test_backward_rejects_foreign_cache(tiny_config):
    params = init_params(tiny_config, 0)
    other = ModelConfig(**{**tiny_config.model_dump(), "cell_kind": "rnn"})
    _, cache = network_forward(init_params(other, 0), other, np.zeros((5, 3)))
    with pytest.raises(RuntimeError):
        backward(params, tiny_config, cache, np.zeros(6))


def test_head_only_gradients(tiny_config):
    params = init_params(tiny_config, 0)
    inputs = np.random.default_rng(1).uniform(0, 1, (5, 3))
    prediction, cache = network_forward(params, tiny_config, inputs)
    grads = backward(params, tiny_config, cache, np.ones_like(prediction), head_only=True)
    assert grads["head.bias"].any()
    assert not grads["layer0.w_f"].any()


@pytest.mark.parametrize("cell_kind", ["lstm", "rnn"])
@pytest.mark.parametrize("num_layers, hidden_size", [(1, 3), (2, 2), (2, 3)])
def test_grad_check(cell_kind, num_layers, hidden_size):
    """Аналитические градиенты совпадают с центральными разностями"""
    config = ModelConfig(cell_kind=cell_kind, num_layers=num_layers, hidden_size=hidden_size,
                         dropout_rate=0.0, input_len=5, output_len=6, feature_count=3)
    report = grad_check(config, trial_count=10)
    assert report.trials == 10
    assert report.passed, report.per_parameter
    assert report.max_relative_error < 1e-4


def test_relative_error_is_per_entry():
    """Ошибка 2% в одном из 90 элементов не растворяется в норме массива"""
    analytic = np.ones(90)
    numeric = analytic.copy()
    numeric[17] = 1.02
    assert relative_error(analytic, numeric) == pytest.approx(0.02 / 2.02)
    assert relative_error(np.zeros(4), np.zeros(4)) == 0.0
    # почти нулевые элементы сравниваются с порогом снизу
    assert relative_error(np.array([1e-12]), np.array([2e-12])) < 1e-4


@pytest.mark.parametrize("cell_kind", ["lstm", "rnn"])
def test_grad_check_with_frozen_dropout(cell_kind):
    config = ModelConfig(cell_kind=cell_kind, num_layers=2, hidden_size=3, dropout_rate=0.3,
                         input_len=5, output_len=6, feature_count=3)
    assert grad_check(config, trial_count=10, seed=1).passed


def test_grad_check_extrapolated_span_and_last_head():
    config = ModelConfig(num_layers=2, hidden_size=2, dropout_rate=0.0, head_mode="last",
                         input_len=4, output_len=6, feature_count=2, loss_span="extrapolated")
    assert grad_check(config, trial_count=10).passed


# =============================================================================
# ОПТИМИЗАЦИЯ
# =============================================================================

def test_clip_gradients():
    grads = OrderedDict(a=np.array([3.0, 4.0]))
    same, norm, clipped = clip_gradients(grads, 5.0)
    assert norm == pytest.approx(5.0) and not clipped
    scaled, _, clipped = clip_gradients(grads, 1.0)
    assert clipped
    np.testing.assert_allclose(scaled["a"], [0.6, 0.8])
    assert clip_gradients(grads, None)[2] is False


def test_adam_zero_gradient_keeps_parameters(tiny_config):
    params = init_params(tiny_config, 0)
    state = AdamState.zeros_like(params, 0.001)
    zero = {name: np.zeros_like(a) for name, a in params.arrays().items()}
    current = params
    for _ in range(5):
        current, state = adam_step(state, current, zero)
    for name, array in params.arrays().items():
        np.testing.assert_array_equal(current.arrays()[name], array)
    assert state.step_count == 5


def test_adam_first_step_moves_by_learning_rate(tiny_config):
    """g = 1 из нулевого состояния: шаг lr / (1 + eps)"""
    params = init_params(tiny_config, 0)
    state = AdamState.zeros_like(params, 0.001)
    ones = {name: np.ones_like(a) for name, a in params.arrays().items()}
    updated, _ = adam_step(state, params, ones)
    for name, array in params.arrays().items():
        np.testing.assert_allclose(array - updated.arrays()[name], 0.001 / (1 + 1e-8), rtol=1e-9)


def test_adam_rejects_mismatched_gradient(tiny_config):
    params = init_params(tiny_config, 0)
    grads = {name: np.zeros_like(a) for name, a in params.arrays().items()}
    grads["head.bias"] = np.zeros(2)
    with pytest.raises(ShapeError):
        adam_step(AdamState.zeros_like(params), params, grads)


# =============================================================================
# ЦИКЛ ОБУЧЕНИЯ
# =============================================================================

def test_train_history_and_determinism(tiny_config):
    windows = make_windows(tiny_config, 3)
    first = train(tiny_config, windows, iterations=20, progress_every=0)
    second = train(tiny_config, windows, iterations=20, progress_every=0)
    assert len(first.loss_history) == 20
    assert first.loss_history == second.loss_history
    for name, array in first.final_params.arrays().items():
        np.testing.assert_array_equal(array, second.final_params.arrays()[name])


def test_train_with_dropout_is_deterministic_per_seed(tiny_config):
    config = ModelConfig(**{**tiny_config.model_dump(), "dropout_rate": 0.2})
    windows = make_windows(config, 2)
    assert (train(config, windows, 10, progress_every=0).loss_history
            == train(config, windows, 10, progress_every=0).loss_history)


def test_train_aborts_on_non_finite_loss(tiny_config):
    window = make_windows(tiny_config, 1)[0]
    broken = WindowPair(region_id="nan", start_date=date(2020, 1, 22),
                        input_window=np.full((5, 3), np.nan), target_window=window.target_window)
    with pytest.raises(TrainingDivergedError) as error:
        train(tiny_config, [broken], iterations=5, progress_every=0)
    assert error.value.iteration == 1
    assert "iteration 1" in str(error.value)


def test_train_fits_constant_zero_target():
    """Одно окно с нулевой целью: потери ниже 1e-4 за 2000 итераций"""
    config = ModelConfig(num_layers=1, hidden_size=4, dropout_rate=0.0, seed=1)
    windows = make_windows(config, 1, constant_target=0.0)
    report = train(config, windows, iterations=2000, progress_every=0)
    assert report.loss_history[-1] < 1e-4


def test_frozen_recurrent_layers_loss_does_not_rise():
    """Обучается только выходной слой: потери не растут на отрезках по 500 итераций"""
    config = ModelConfig(num_layers=1, hidden_size=3, dropout_rate=0.0, input_len=10, output_len=12, seed=2)
    windows = make_windows(config, 4, seed=5)
    report = train(config, windows, iterations=1500, freeze_recurrent=True, progress_every=0)
    history = report.loss_history
    for t in range(0, 1000, 500):
        assert history[t + 500] <= history[t] + 1e-6
    initial = init_params(config, config.seed)
    for k, cell in enumerate(initial.cells):
        np.testing.assert_array_equal(report.final_params.cells[k].w_f, cell.w_f)


def test_clip_events_are_counted(tiny_config):
    config = ModelConfig(**{**tiny_config.model_dump(), "clip_norm": 1e-6})
    report = train(config, make_windows(config, 2), iterations=3, progress_every=0)
    assert report.clip_events == 3
    assert metrics.get_counter("gradient_clip_events") == 3


def test_progress_records_loss_metric(tiny_config):
    train(tiny_config, make_windows(tiny_config, 2), iterations=10, progress_every=5)
    assert [point["step"] for point in metrics.get_metric_history("train_loss")] == [5, 10]


def test_periodic_checkpoint(tiny_config, tmp_path):
    path = tmp_path / "periodic.ckpt"
    report = train(tiny_config, make_windows(tiny_config, 2), iterations=10,
                   checkpoint_every=5, checkpoint_path=path, progress_every=0)
    params, header = load_checkpoint(path, tiny_config)
    assert header.seed == tiny_config.seed
    np.testing.assert_array_equal(params.head_bias, report.final_params.head_bias)


def test_write_loss_history(tiny_config, tmp_path):
    report = train(tiny_config, make_windows(tiny_config, 2), iterations=7, progress_every=0)
    path = write_loss_history(report, tmp_path / "loss.csv")
    frame = pd.read_csv(path, float_precision="round_trip")
    assert list(frame.columns) == ["iteration", "mse"]
    assert frame["iteration"].tolist() == list(range(1, 8))
    np.testing.assert_array_equal(frame["mse"].to_numpy(), report.loss_history)


@pytest.mark.slow
def test_train_fits_linear_ramps():
    """Линейные ряды, 1 слой x 10: итоговые потери в 10 раз ниже начальных"""
    config = ModelConfig(num_layers=1, hidden_size=10, dropout_rate=0.0, seed=1)
    days = np.arange(config.output_len) / config.output_len
    windows = []
    for n, slope in enumerate((0.3, 0.5, 0.7, 0.9)):
        target = 0.05 + slope * days
        features = np.column_stack([target[:config.input_len]] * 3 + [np.full(config.input_len, slope)] * 2)
        windows.append(WindowPair(region_id=f"ramp{n}", start_date=date(2020, 1, 22),
                                  input_window=features, target_window=target))
    report = train(config, windows, iterations=2000, progress_every=0)
    assert report.loss_history[-1] < report.loss_history[0] / 10
