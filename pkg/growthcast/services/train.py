"""
Training service
MSE, обратное распространение во времени (BPTT), Adam, цикл обучения и проверка градиентов
"""

import time
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from growthcast.core.exceptions import ShapeError, TrainingDivergedError
from growthcast.core.logging import get_logger
from growthcast.core.metrics import metrics
from growthcast.models.schemas import (
    LSTM_GATES,
    AdamState,
    GradCheckReport,
    ModelConfig,
    NetworkParams,
    TrainReport,
    WindowPair,
)
from growthcast.services.checkpoint import save_checkpoint
from growthcast.services.nn import ForwardCache, LayerCache, init_params, network_forward
from growthcast.utils.helpers import atomic_write_text, format_duration

logger = get_logger(__name__)

Gradients = Dict[str, np.ndarray]


# =============================================================================
# ФУНКЦИЯ ПОТЕРЬ
# =============================================================================

def loss_slice(span: str, input_len: int, output_len: int) -> slice:
    """Дни, входящие в функцию потерь: все или только экстраполированные"""
    if span == "full":
        return slice(0, output_len)
    if span == "extrapolated":
        return slice(input_len, output_len)
    raise ValueError(f"unknown loss span: {span}")


def mse_loss(prediction, target, span: str = "full", input_len: Optional[int] = None) -> float:
    """Средний квадрат ошибки (по всем окнам и дням)"""
    p = np.asarray(prediction, dtype=np.float64)
    a = np.asarray(target, dtype=np.float64)
    if p.shape != a.shape:
        raise ShapeError(f"prediction {p.shape} and target {a.shape} differ in shape")
    if p.size == 0:
        raise ShapeError("mse of empty sequences is undefined")
    window = loss_slice(span, input_len or 0, p.shape[-1])
    return float(np.mean((p[..., window] - a[..., window]) ** 2))


def mse_loss_gradient(prediction, target, span: str = "full", input_len: Optional[int] = None) -> np.ndarray:
    """dL/dprediction для mse_loss"""
    p = np.asarray(prediction, dtype=np.float64)
    a = np.asarray(target, dtype=np.float64)
    if p.shape != a.shape:
        raise ShapeError(f"prediction {p.shape} and target {a.shape} differ in shape")
    window = loss_slice(span, input_len or 0, p.shape[-1])
    grad = np.zeros_like(p)
    count = p[..., window].size
    grad[..., window] = 2.0 * (p[..., window] - a[..., window]) / count
    return grad


# =============================================================================
# ОБРАТНЫЙ ПРОХОД
# =============================================================================

def _lstm_layer_backward(
    weights: np.ndarray, layer: LayerCache, d_hs: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    steps, batch, h = d_hs.shape
    w_h, w_x = weights[:, :h], weights[:, h:]
    d_pre = np.empty((steps, batch, 4 * h))
    dh_next = np.zeros((batch, h))
    dc_next = np.zeros((batch, h))
    for t in reversed(range(steps)):
        f, i, g, o, tanh_c = layer.f[t], layer.i[t], layer.g[t], layer.o[t], layer.tanh_c[t]
        dh = d_hs[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tanh_c ** 2)
        d_pre[t, :, :h] = dc * layer.cs[t] * f * (1.0 - f)
        d_pre[t, :, h:2 * h] = dc * g * i * (1.0 - i)
        d_pre[t, :, 2 * h:3 * h] = dc * i * (1.0 - g ** 2)
        d_pre[t, :, 3 * h:] = dh * tanh_c * o * (1.0 - o)
        dc_next = dc * f
        dh_next = d_pre[t] @ w_h
    return _weight_grads(d_pre, layer, w_x)


def _rnn_layer_backward(
    weights: np.ndarray, layer: LayerCache, d_hs: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    steps, batch, h = d_hs.shape
    w_h, w_x = weights[:, :h], weights[:, h:]
    d_pre = np.empty((steps, batch, h))
    dh_next = np.zeros((batch, h))
    for t in reversed(range(steps)):
        d_pre[t] = (d_hs[t] + dh_next) * (1.0 - layer.hs[t + 1] ** 2)
        dh_next = d_pre[t] @ w_h
    return _weight_grads(d_pre, layer, w_x)


def _weight_grads(d_pre: np.ndarray, layer: LayerCache, w_x: np.ndarray):
    d_w_h = np.tensordot(d_pre, layer.hs[:-1], axes=([0, 1], [0, 1]))
    d_w_x = np.tensordot(d_pre, layer.inputs, axes=([0, 1], [0, 1]))
    return np.concatenate([d_w_h, d_w_x], axis=1), d_pre.sum(axis=(0, 1)), d_pre @ w_x


def backward(
    params: NetworkParams,
    config: ModelConfig,
    cache: ForwardCache,
    loss_gradient: np.ndarray,
    head_only: bool = False,
) -> Gradients:
    """Аналитические градиенты по всем параметрам (маски dropout берутся из кэша)"""
    if cache.cell_kind != params.cell_kind or len(cache.layers) != len(params.cells):
        raise RuntimeError("forward cache does not belong to these parameters")
    d_out = np.asarray(loss_gradient, dtype=np.float64)
    if not cache.batched:
        d_out = d_out[np.newaxis]
    if cache.prediction is None or d_out.shape != cache.prediction.shape:
        raise RuntimeError(
            f"loss gradient shape {np.shape(loss_gradient)} does not match cached prediction"
        )

    grads: Gradients = OrderedDict((name, np.zeros_like(array)) for name, array in params.arrays().items())

    # выходной слой: sigmoid(W x + b)
    prediction = cache.prediction
    d_logits = d_out * prediction * (1.0 - prediction)
    grads["head.weight"] = d_logits.T @ cache.head_input
    grads["head.bias"] = d_logits.sum(axis=0)
    if head_only:
        return grads

    top = cache.layers[-1]
    steps, batch, hidden = top.hs[1:].shape
    d_head_input = d_logits @ params.head_weights
    if config.head_mode == "all":
        d_layer_out = d_head_input.reshape(batch, steps, hidden).transpose(1, 0, 2)
    else:
        d_layer_out = np.zeros((steps, batch, hidden))
        d_layer_out[-1] = d_head_input

    for k in reversed(range(len(params.cells))):
        layer = cache.layers[k]
        d_hs = d_layer_out * layer.mask if layer.mask is not None else d_layer_out
        weights, _ = params.cells[k].stacked()
        if config.cell_kind == "lstm":
            d_w, d_b, d_layer_out = _lstm_layer_backward(weights, layer, d_hs)
            for n, gate in enumerate(LSTM_GATES):
                grads[f"layer{k}.w_{gate}"] = d_w[n * hidden:(n + 1) * hidden]
                grads[f"layer{k}.b_{gate}"] = d_b[n * hidden:(n + 1) * hidden]
        else:
            d_w, d_b, d_layer_out = _rnn_layer_backward(weights, layer, d_hs)
            grads[f"layer{k}.w_h"] = d_w
            grads[f"layer{k}.b_h"] = d_b
    return grads


# =============================================================================
# ОПТИМИЗАЦИЯ
# =============================================================================

def clip_gradients(grads: Gradients, max_norm: Optional[float]) -> Tuple[Gradients, float, bool]:
    """Отсечение по глобальной норме градиента"""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm is None or norm <= max_norm or not np.isfinite(norm):
        return grads, norm, False
    scale = max_norm / norm
    return OrderedDict((name, g * scale) for name, g in grads.items()), norm, True


def adam_step(state: AdamState, params: NetworkParams, grads: Gradients) -> Tuple[NetworkParams, AdamState]:
    """Один шаг Adam с коррекцией смещения"""
    step = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    first, second, updated = {}, {}, {}
    for name, value in params.arrays().items():
        g = grads[name]
        if g.shape != value.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {value.shape}")
        m = b1 * state.first_moment[name] + (1.0 - b1) * g
        v = b2 * state.second_moment[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** step)
        v_hat = v / (1.0 - b2 ** step)
        updated[name] = value - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        first[name], second[name] = m, v

    new_state = state.model_copy(update={"first_moment": first, "second_moment": second, "step_count": step})
    return NetworkParams.from_arrays(params.cell_kind, updated), new_state


# =============================================================================
# ЦИКЛ ОБУЧЕНИЯ
# =============================================================================

def stack_windows(config: ModelConfig, windows: Sequence[WindowPair]) -> Tuple[np.ndarray, np.ndarray]:
    """Окна -> батч входов (B, T, F) и целей (B, out)"""
    if not windows:
        raise ValueError("training needs at least one window")
    inputs = np.stack([w.input_window for w in windows])
    targets = np.stack([w.target_window for w in windows])
    if inputs.shape[1:] != (config.input_len, config.feature_count):
        raise ShapeError(f"windows are {inputs.shape[1:]}, config expects {(config.input_len, config.feature_count)}")
    if targets.shape[1] != config.output_len:
        raise ShapeError(f"targets have {targets.shape[1]} days, config expects {config.output_len}")
    return inputs, targets


def dropout_rng(seed: int) -> np.random.Generator:
    """Поток случайных чисел для dropout, независимый от инициализации"""
    return np.random.default_rng([seed, 1])


def train(
    config: ModelConfig,
    windows: Sequence[WindowPair],
    iterations: Optional[int] = None,
    *,
    freeze_recurrent: bool = False,
    checkpoint_every: Optional[int] = None,
    checkpoint_path: Optional[Union[str, Path]] = None,
    progress_every: int = 500,
    scaler=None,
) -> TrainReport:
    """Полнобатчевое обучение: forward, backward, клиппинг, Adam на каждой итерации"""
    iterations = iterations or config.iterations
    inputs, targets = stack_windows(config, windows)
    log = logger.bind(seed=config.seed, cell=config.cell_kind, layers=config.num_layers, hidden=config.hidden_size)

    params = init_params(config, config.seed)
    state = AdamState.zeros_like(params, config.learning_rate)
    rng = dropout_rng(config.seed)
    history = []
    clip_events = 0
    started = time.perf_counter()

    for iteration in range(1, iterations + 1):
        prediction, cache = network_forward(params, config, inputs, mode="train", rng=rng)
        loss = mse_loss(prediction, targets, config.loss_span, config.input_len)
        if not np.isfinite(loss):
            log.error("training diverged", iteration=iteration, loss=loss)
            raise TrainingDivergedError(iteration, loss)
        history.append(loss)

        grads = backward(
            params, config, cache,
            mse_loss_gradient(prediction, targets, config.loss_span, config.input_len),
            head_only=freeze_recurrent,
        )
        grads, norm, clipped = clip_gradients(grads, config.clip_norm)
        if clipped:
            clip_events += 1
            metrics.increment_counter("gradient_clip_events")
            if clip_events == 1:
                log.info("gradient clipping active", iteration=iteration, norm=round(norm, 4))
        params, state = adam_step(state, params, grads)

        if progress_every and iteration % progress_every == 0:
            metrics.set_gauge("last_train_loss", loss)
            metrics.record_metric("train_loss", loss, step=iteration)
            log.info("training progress", iteration=iteration, loss=loss, clip_events=clip_events)
        if checkpoint_every and checkpoint_path and iteration % checkpoint_every == 0:
            save_checkpoint(checkpoint_path, params, config, config.seed, scaler)

    wall_time = time.perf_counter() - started
    log.info("training finished", iterations=iterations, loss=history[-1], took=format_duration(wall_time))
    return TrainReport(
        config=config,
        loss_history=history,
        final_params=params,
        seed=config.seed,
        wall_time=wall_time,
        clip_events=clip_events,
    )


def write_loss_history(report: TrainReport, path: Union[str, Path]) -> Path:
    """CSV из двух колонок: iteration, mse"""
    frame = pd.DataFrame({
        "iteration": np.arange(1, len(report.loss_history) + 1),
        "mse": report.loss_history,
    })
    return atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n", float_format="%.17g"))


# =============================================================================
# ПРОВЕРКА ГРАДИЕНТОВ
# =============================================================================

RELATIVE_ERROR_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = RELATIVE_ERROR_FLOOR) -> float:
    """max |a - n| / max(|a| + |n|, floor) по элементам"""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)))


def grad_check(
    config: ModelConfig,
    trial_count: int = 10,
    *,
    batch_size: int = 2,
    epsilon: float = 1e-5,
    threshold: float = 1e-4,
    seed: int = 0,
) -> GradCheckReport:
    """Сравнить аналитические градиенты с центральными разностями на случайных параметрах"""
    if config.hidden_size > 4 or config.input_len > 5 or config.output_len > 6:
        logger.warning("gradient check on a large configuration will be slow", hidden=config.hidden_size,
                       steps=config.input_len, outputs=config.output_len)

    rng = np.random.default_rng(seed)
    per_parameter: Dict[str, float] = {}
    worst = 0.0
    for trial in range(trial_count):
        params = init_params(config, int(rng.integers(2 ** 31)))
        # случайные смещения, чтобы bias-градиенты не были вырожденными
        arrays = OrderedDict(
            (name, array + rng.uniform(-0.5, 0.5, size=array.shape)) for name, array in params.arrays().items()
        )
        params = NetworkParams.from_arrays(config.cell_kind, arrays)
        inputs = rng.uniform(0.0, 1.0, size=(batch_size, config.input_len, config.feature_count))
        targets = rng.uniform(0.0, 1.0, size=(batch_size, config.output_len))

        # фиксированные маски dropout
        _, cache = network_forward(params, config, inputs, mode="train", rng=dropout_rng(trial))
        masks = cache.masks

        def loss_at(candidate: NetworkParams) -> float:
            prediction, _ = network_forward(candidate, config, inputs, mode="train", masks=masks)
            return mse_loss(prediction, targets, config.loss_span, config.input_len)

        prediction = cache.prediction
        analytic = backward(
            params, config, cache,
            mse_loss_gradient(prediction, targets, config.loss_span, config.input_len),
        )

        for name, value in arrays.items():
            numeric = np.zeros_like(value)
            for index in np.ndindex(value.shape):
                original = value[index]
                value[index] = original + epsilon
                plus = loss_at(NetworkParams.from_arrays(config.cell_kind, arrays))
                value[index] = original - epsilon
                minus = loss_at(NetworkParams.from_arrays(config.cell_kind, arrays))
                value[index] = original
                numeric[index] = (plus - minus) / (2.0 * epsilon)
            error = relative_error(analytic[name], numeric)
            per_parameter[name] = max(per_parameter.get(name, 0.0), error)
            worst = max(worst, error)

    report = GradCheckReport(
        cell_kind=config.cell_kind,
        num_layers=config.num_layers,
        hidden_size=config.hidden_size,
        trials=trial_count,
        threshold=threshold,
        max_relative_error=worst,
        per_parameter=per_parameter,
    )
    logger.info("gradient check finished", cell=config.cell_kind, layers=config.num_layers,
                max_relative_error=worst, passed=report.passed)
    return report
