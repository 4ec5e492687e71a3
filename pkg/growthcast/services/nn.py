"""
Recurrent network service
LSTM и RNN ячейки, стековая сеть, dropout и выходной слой linear + sigmoid
"""

from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from growthcast.core.exceptions import ShapeError
from growthcast.models.schemas import (
    LstmCellParams,
    ModelConfig,
    NetworkParams,
    RnnCellParams,
)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Численно устойчивая сигмоида"""
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# =============================================================================
# ИНИЦИАЛИЗАЦИЯ
# =============================================================================

def init_params(config: ModelConfig, rng_seed: int) -> NetworkParams:
    """Равномерная инициализация +-1/sqrt(fan_in); bias забывания = config.forget_bias"""
    rng = np.random.default_rng(rng_seed)
    h = config.hidden_size
    cells = []
    for k in range(config.num_layers):
        fan_in = h + config.layer_input_size(k)
        bound = 1.0 / np.sqrt(fan_in)
        if config.cell_kind == "lstm":
            weights = {f"w_{g}": rng.uniform(-bound, bound, size=(h, fan_in)) for g in "fico"}
            biases = {f"b_{g}": np.zeros(h) for g in "fico"}
            biases["b_f"] = np.full(h, config.forget_bias)
            cells.append(LstmCellParams(**weights, **biases))
        else:
            cells.append(RnnCellParams(w_h=rng.uniform(-bound, bound, size=(h, fan_in)), b_h=np.zeros(h)))

    head_bound = 1.0 / np.sqrt(config.head_input_size)
    head_weights = rng.uniform(-head_bound, head_bound, size=(config.output_len, config.head_input_size))
    return NetworkParams(cells=cells, head_weights=head_weights, head_bias=np.zeros(config.output_len))


def parameter_count(config: ModelConfig) -> int:
    """Число параметров по формуле, без построения сети"""
    g, h = config.gate_count, config.hidden_size
    cells = sum(g * h * (h + config.layer_input_size(k)) + g * h for k in range(config.num_layers))
    return cells + config.output_len * config.head_input_size + config.output_len


def check_params(params: NetworkParams, config: ModelConfig) -> None:
    """Проверить, что формы параметров соответствуют конфигурации"""
    if params.cell_kind != config.cell_kind:
        raise ShapeError(f"parameters are {params.cell_kind}, config expects {config.cell_kind}")
    if len(params.cells) != config.num_layers:
        raise ShapeError(f"parameters have {len(params.cells)} layers, config expects {config.num_layers}")
    for k, cell in enumerate(params.cells):
        expected = (config.hidden_size, config.layer_input_size(k))
        if (cell.hidden_size, cell.input_size) != expected:
            raise ShapeError(f"layer {k}: (hidden, input) {(cell.hidden_size, cell.input_size)} != {expected}")
    if params.head_weights.shape != (config.output_len, config.head_input_size):
        raise ShapeError(
            f"head weights {params.head_weights.shape} != {(config.output_len, config.head_input_size)}"
        )


# =============================================================================
# ЯЧЕЙКИ
# =============================================================================

class LstmGateCache(NamedTuple):
    z: np.ndarray
    f: np.ndarray
    i: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c_prev: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


class RnnCache(NamedTuple):
    z: np.ndarray
    h: np.ndarray


def _concat_state(h_prev: np.ndarray, x_t: np.ndarray, hidden: int, inputs: int) -> np.ndarray:
    h_prev = np.asarray(h_prev, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    if h_prev.shape[-1] != hidden or x_t.shape[-1] != inputs or h_prev.shape[:-1] != x_t.shape[:-1]:
        raise ShapeError(
            f"cell expects h of width {hidden} and x of width {inputs}, got {h_prev.shape} and {x_t.shape}"
        )
    return np.concatenate([h_prev, x_t], axis=-1)


def lstm_cell_forward(
    p: LstmCellParams, x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, LstmGateCache]:
    """Один шаг LSTM: f, i, C~, c, o, h"""
    h = p.hidden_size
    z = _concat_state(h_prev, x_t, h, p.input_size)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    if c_prev.shape != z.shape[:-1] + (h,):
        raise ShapeError(f"c_prev shape {c_prev.shape} does not match hidden size {h}")

    f = sigmoid(z @ p.w_f.T + p.b_f)
    i = sigmoid(z @ p.w_i.T + p.b_i)
    g = np.tanh(z @ p.w_c.T + p.b_c)
    c = f * c_prev + i * g
    o = sigmoid(z @ p.w_o.T + p.b_o)
    tanh_c = np.tanh(c)
    h_t = o * tanh_c
    return h_t, c, LstmGateCache(z, f, i, g, o, c_prev, c, tanh_c)


def rnn_cell_forward(p: RnnCellParams, x_t: np.ndarray, h_prev: np.ndarray) -> Tuple[np.ndarray, RnnCache]:
    """Один шаг RNN: h = tanh(W [h_prev, x] + b)"""
    z = _concat_state(h_prev, x_t, p.hidden_size, p.input_size)
    h_t = np.tanh(z @ p.w_h.T + p.b_h)
    return h_t, RnnCache(z, h_t)


# =============================================================================
# СЕТЬ
# =============================================================================

@dataclass
class LayerCache:
    """Кэш одного слоя на всей последовательности (время x батч x ...)"""

    inputs: np.ndarray
    hs: np.ndarray
    cs: Optional[np.ndarray] = None
    f: Optional[np.ndarray] = None
    i: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None
    o: Optional[np.ndarray] = None
    tanh_c: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None


@dataclass
class ForwardCache:
    """Все промежуточные значения прямого прохода для BPTT"""

    cell_kind: str
    batched: bool
    layers: List[LayerCache] = field(default_factory=list)
    head_input: Optional[np.ndarray] = None
    prediction: Optional[np.ndarray] = None

    @property
    def masks(self) -> List[Optional[np.ndarray]]:
        return [layer.mask for layer in self.layers]


def dropout_mask(shape: Tuple[int, ...], rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted dropout: сохраненные активации масштабируются на 1/(1-rate)"""
    return (rng.random(shape) >= rate).astype(np.float64) / (1.0 - rate)


def _lstm_layer(cell: LstmCellParams, inputs: np.ndarray) -> LayerCache:
    steps, batch, _ = inputs.shape
    h = cell.hidden_size
    weights, bias = cell.stacked()
    w_h, w_x = weights[:, :h], weights[:, h:]
    # входная часть предактиваций для всех шагов сразу
    pre_x = inputs @ w_x.T + bias

    hs = np.zeros((steps + 1, batch, h))
    cs = np.zeros((steps + 1, batch, h))
    gates = np.empty((4, steps, batch, h))
    tanh_c = np.empty((steps, batch, h))
    for t in range(steps):
        a = pre_x[t] + hs[t] @ w_h.T
        f = sigmoid(a[:, :h])
        i = sigmoid(a[:, h:2 * h])
        g = np.tanh(a[:, 2 * h:3 * h])
        o = sigmoid(a[:, 3 * h:])
        cs[t + 1] = f * cs[t] + i * g
        tanh_c[t] = np.tanh(cs[t + 1])
        hs[t + 1] = o * tanh_c[t]
        gates[0, t], gates[1, t], gates[2, t], gates[3, t] = f, i, g, o
    return LayerCache(inputs=inputs, hs=hs, cs=cs, f=gates[0], i=gates[1], g=gates[2], o=gates[3], tanh_c=tanh_c)


def _rnn_layer(cell: RnnCellParams, inputs: np.ndarray) -> LayerCache:
    steps, batch, _ = inputs.shape
    h = cell.hidden_size
    w_h, w_x = cell.w_h[:, :h], cell.w_h[:, h:]
    pre_x = inputs @ w_x.T + cell.b_h

    hs = np.zeros((steps + 1, batch, h))
    for t in range(steps):
        hs[t + 1] = np.tanh(pre_x[t] + hs[t] @ w_h.T)
    return LayerCache(inputs=inputs, hs=hs)


def head_input_from(top: np.ndarray, head_mode: str) -> np.ndarray:
    """Вход выходного слоя: все скрытые состояния верхнего слоя подряд или только последнее"""
    if head_mode == "all":
        steps, batch, hidden = top.shape
        return top.transpose(1, 0, 2).reshape(batch, steps * hidden)
    return top[-1]


def network_forward(
    params: NetworkParams,
    config: ModelConfig,
    inputs: np.ndarray,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
    masks: Optional[List[Optional[np.ndarray]]] = None,
) -> Tuple[np.ndarray, ForwardCache]:
    """Прямой проход: слои по всем шагам, dropout между слоями (train), linear + sigmoid"""
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode: {mode}")
    check_params(params, config)

    values = np.asarray(inputs, dtype=np.float64)
    batched = values.ndim == 3
    if not batched:
        values = values[np.newaxis]
    if values.ndim != 3 or values.shape[1:] != (config.input_len, config.feature_count):
        raise ShapeError(
            f"input must be {config.input_len} x {config.feature_count}, got {np.shape(inputs)}"
        )

    use_dropout = mode == "train" and config.dropout_rate > 0
    if use_dropout and masks is None and rng is None:
        raise ValueError("train mode with dropout needs a random generator")

    cache = ForwardCache(cell_kind=config.cell_kind, batched=batched)
    layer_input = values.transpose(1, 0, 2)
    for k, cell in enumerate(params.cells):
        if config.cell_kind == "lstm":
            layer = _lstm_layer(cell, layer_input)
        else:
            layer = _rnn_layer(cell, layer_input)
        output = layer.hs[1:]
        if use_dropout:
            if masks is not None:
                layer.mask = masks[k]
            else:
                layer.mask = dropout_mask(output.shape, config.dropout_rate, rng)
            output = output * layer.mask
        cache.layers.append(layer)
        layer_input = output

    cache.head_input = head_input_from(layer_input, config.head_mode)
    prediction = sigmoid(cache.head_input @ params.head_weights.T + params.head_bias)
    cache.prediction = prediction
    return (prediction if batched else prediction[0]), cache


def predict(params: NetworkParams, config: ModelConfig, inputs: np.ndarray) -> np.ndarray:
    """Детерминированный прогноз в режиме eval"""
    prediction, _ = network_forward(params, config, inputs, mode="eval")
    return prediction
