"""
Data Models and Schemas for growthcast
Модели данных: ряды регионов, скейлер, окна, параметры сети, отчеты
"""

from collections import OrderedDict
from datetime import date
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from growthcast.core.exceptions import ShapeError

FEATURE_COLUMNS = ("confirmed", "deaths", "recovered", "latitude", "longitude")


def _as_float_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


class ArrayModel(BaseModel):
    """Базовая модель с numpy-полями"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True, protected_namespaces=())


# =============================================================================
# ДАННЫЕ
# =============================================================================

class ColumnSchema(BaseModel):
    """Соответствие колонок широкого CSV"""

    province_column: Optional[str] = "Province/State"
    country_column: str = "Country/Region"
    lat_column: str = "Lat"
    lon_column: str = "Long"
    date_format: str = "%m/%d/%y"

    @property
    def key_columns(self) -> List[str]:
        columns = [self.country_column]
        if self.province_column:
            columns.append(self.province_column)
        return columns

    @property
    def meta_columns(self) -> List[str]:
        return self.key_columns + [self.lat_column, self.lon_column]


JHU_SCHEMA = ColumnSchema()


class RegionSeries(ArrayModel):
    """Многомерный дневной ряд одного региона"""

    region_id: str
    latitude: float = Field(ge=-90.0, le=90.0)
    longitude: float = Field(ge=-180.0, le=180.0)
    confirmed: np.ndarray
    deaths: np.ndarray
    recovered: np.ndarray
    dates: pd.DatetimeIndex

    @field_validator("confirmed", "deaths", "recovered", mode="before")
    @classmethod
    def coerce_counts(cls, value):
        counts = np.asarray(value, dtype=np.float64)
        if counts.ndim != 1:
            raise ValueError("count series must be one-dimensional")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        return counts

    @field_validator("dates", mode="before")
    @classmethod
    def coerce_dates(cls, value):
        dates = pd.DatetimeIndex(value)
        if len(dates) > 1:
            steps = np.diff(dates.values).astype("timedelta64[D]").astype(np.int64)
            if np.any(steps != 1):
                raise ValueError("dates must increase in one-day steps")
        return dates

    @model_validator(mode="after")
    def check_lengths(self) -> "RegionSeries":
        n = len(self.dates)
        if not (len(self.confirmed) == len(self.deaths) == len(self.recovered) == n):
            raise ValueError("confirmed, deaths, recovered and dates must share one length")
        return self

    def __len__(self) -> int:
        return len(self.dates)


class FeatureScaler(BaseModel):
    """Min-max скейлер по признакам"""

    model_config = ConfigDict(frozen=True)

    per_feature_min: List[float]
    per_feature_max: List[float]

    @model_validator(mode="after")
    def check_ranges(self) -> "FeatureScaler":
        if len(self.per_feature_min) != len(self.per_feature_max):
            raise ValueError("min and max must have the same feature count")
        for index, (low, high) in enumerate(zip(self.per_feature_min, self.per_feature_max)):
            if high < low:
                raise ValueError(f"feature {index}: max {high} < min {low}")
        return self

    @property
    def n_features(self) -> int:
        return len(self.per_feature_min)

    def _bounds(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        low = np.asarray(self.per_feature_min, dtype=np.float64)
        span = np.asarray(self.per_feature_max, dtype=np.float64) - low
        degenerate = span == 0
        return low, np.where(degenerate, 1.0, span), degenerate

    def _check(self, values: np.ndarray) -> None:
        if values.ndim == 0 or values.shape[-1] != self.n_features:
            raise ShapeError(
                f"expected {self.n_features} features, got shape {values.shape}"
            )

    def transform(self, m):
        """X_scaled = (X - X_min) / (X_max - X_min); без отсечения"""
        values = np.asarray(m, dtype=np.float64)
        self._check(values)
        low, span, degenerate = self._bounds()
        scaled = np.where(degenerate, 0.0, (values - low) / span)
        return _like(m, scaled)

    def inverse_transform(self, m):
        """X = X_scaled * (X_max - X_min) + X_min"""
        values = np.asarray(m, dtype=np.float64)
        self._check(values)
        low, span, degenerate = self._bounds()
        raw = np.where(degenerate, low, values * span + low)
        return _like(m, raw)

    def inverse_transform_feature(self, values, index: int = 0) -> np.ndarray:
        """Обратное преобразование одного канала"""
        values = np.asarray(values, dtype=np.float64)
        low = self.per_feature_min[index]
        span = self.per_feature_max[index] - low
        if span == 0:
            return np.full_like(values, low)
        return values * span + low


def _like(template, values: np.ndarray):
    if isinstance(template, pd.DataFrame):
        return pd.DataFrame(values, index=template.index, columns=template.columns)
    return values


class WindowSplit(BaseModel):
    """Границы окон входа/выхода"""

    start_date: date = date(2020, 1, 22)
    input_len: int = Field(default=67, ge=1)
    output_len: int = Field(default=100, ge=1)


class WindowPair(ArrayModel):
    """Пара окон: 67 дней входа, 100 дней цели"""

    region_id: str
    start_date: date
    input_window: np.ndarray
    target_window: np.ndarray

    @field_validator("input_window", "target_window", mode="before")
    @classmethod
    def coerce(cls, value):
        return _as_float_array(value)

    @model_validator(mode="after")
    def check_shapes(self) -> "WindowPair":
        if self.input_window.ndim != 2:
            raise ValueError("input window must be time x features")
        if self.target_window.ndim != 1:
            raise ValueError("target window must be one-dimensional")
        return self


# =============================================================================
# МОДЕЛЬ
# =============================================================================

class ModelConfig(BaseModel):
    """Архитектура и гиперпараметры обучения"""

    model_config = ConfigDict(frozen=True)

    cell_kind: Literal["lstm", "rnn"] = "lstm"
    num_layers: int = Field(default=2, ge=1, le=4)
    hidden_size: int = Field(default=30, ge=1, le=30)
    dropout_rate: float = Field(default=0.1, ge=0.0, lt=1.0)
    head_mode: Literal["all", "last"] = "all"
    input_len: int = Field(default=67, ge=1)
    output_len: int = Field(default=100, ge=1)
    feature_count: int = Field(default=5, ge=1)
    seed: int = 0
    learning_rate: float = Field(default=0.001, gt=0.0)
    iterations: int = Field(default=10_000, ge=1)
    clip_norm: Optional[float] = 5.0
    forget_bias: float = 1.0
    loss_span: Literal["full", "extrapolated"] = "full"

    @model_validator(mode="after")
    def check_span(self) -> "ModelConfig":
        if self.loss_span == "extrapolated" and self.output_len <= self.input_len:
            raise ValueError("extrapolated loss span needs output_len > input_len")
        return self

    @property
    def gate_count(self) -> int:
        return 4 if self.cell_kind == "lstm" else 1

    def layer_input_size(self, layer: int) -> int:
        return self.feature_count if layer == 0 else self.hidden_size

    @property
    def head_input_size(self) -> int:
        if self.head_mode == "all":
            return self.hidden_size * self.input_len
        return self.hidden_size

    def architecture(self) -> Dict[str, object]:
        """Поля, определяющие формы параметров"""
        return self.model_dump(
            include={"cell_kind", "num_layers", "hidden_size", "head_mode",
                     "input_len", "output_len", "feature_count"}
        )


LSTM_GATES = ("f", "i", "c", "o")


class LstmCellParams(ArrayModel):
    """Параметры LSTM-ячейки"""

    w_f: np.ndarray
    w_i: np.ndarray
    w_c: np.ndarray
    w_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    @field_validator("*", mode="before")
    @classmethod
    def coerce(cls, value):
        return _as_float_array(value)

    @model_validator(mode="after")
    def check_shapes(self) -> "LstmCellParams":
        shape = self.w_f.shape
        if len(shape) != 2 or shape[1] < shape[0]:
            raise ValueError(f"gate weights must be hidden x (hidden + input), got {shape}")
        for gate in LSTM_GATES:
            if getattr(self, f"w_{gate}").shape != shape:
                raise ValueError("all gate weight matrices must share one shape")
            if getattr(self, f"b_{gate}").shape != (shape[0],):
                raise ValueError("all gate biases must have length hidden")
        return self

    @property
    def hidden_size(self) -> int:
        return self.w_f.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_f.shape[1] - self.w_f.shape[0]

    def named_arrays(self) -> List[Tuple[str, np.ndarray]]:
        return [(f"w_{g}", getattr(self, f"w_{g}")) for g in LSTM_GATES] + [
            (f"b_{g}", getattr(self, f"b_{g}")) for g in LSTM_GATES
        ]

    def stacked(self) -> Tuple[np.ndarray, np.ndarray]:
        """Веса четырех гейтов одной матрицей (4h x (h + in))"""
        weights = np.concatenate([self.w_f, self.w_i, self.w_c, self.w_o], axis=0)
        bias = np.concatenate([self.b_f, self.b_i, self.b_c, self.b_o])
        return weights, bias


class RnnCellParams(ArrayModel):
    """Параметры tanh-RNN ячейки"""

    w_h: np.ndarray
    b_h: np.ndarray

    @field_validator("*", mode="before")
    @classmethod
    def coerce(cls, value):
        return _as_float_array(value)

    @model_validator(mode="after")
    def check_shapes(self) -> "RnnCellParams":
        shape = self.w_h.shape
        if len(shape) != 2 or shape[1] < shape[0]:
            raise ValueError(f"w_h must be hidden x (hidden + input), got {shape}")
        if self.b_h.shape != (shape[0],):
            raise ValueError("b_h must have length hidden")
        return self

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_h.shape[1] - self.w_h.shape[0]

    def named_arrays(self) -> List[Tuple[str, np.ndarray]]:
        return [("w_h", self.w_h), ("b_h", self.b_h)]

    def stacked(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.w_h, self.b_h


CellParams = Union[LstmCellParams, RnnCellParams]


class NetworkParams(ArrayModel):
    """Все веса стековой рекуррентной сети и выходного слоя"""

    cells: List[CellParams]
    head_weights: np.ndarray
    head_bias: np.ndarray

    @field_validator("head_weights", "head_bias", mode="before")
    @classmethod
    def coerce(cls, value):
        return _as_float_array(value)

    @model_validator(mode="after")
    def check_stack(self) -> "NetworkParams":
        if not self.cells:
            raise ValueError("network needs at least one layer")
        kinds = {type(cell) for cell in self.cells}
        if len(kinds) != 1:
            raise ValueError("all layers must use the same cell kind")
        for k in range(1, len(self.cells)):
            if self.cells[k].input_size != self.cells[k - 1].hidden_size:
                raise ValueError(f"layer {k} input size must equal hidden size")
        if self.head_weights.ndim != 2 or self.head_bias.shape != (self.head_weights.shape[0],):
            raise ValueError("head bias length must equal head output length")
        return self

    @property
    def cell_kind(self) -> str:
        return "lstm" if isinstance(self.cells[0], LstmCellParams) else "rnn"

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        """Упорядоченный словарь имя -> массив (в объявленном порядке)"""
        named = OrderedDict()
        for k, cell in enumerate(self.cells):
            for name, array in cell.named_arrays():
                named[f"layer{k}.{name}"] = array
        named["head.weight"] = self.head_weights
        named["head.bias"] = self.head_bias
        return named

    @classmethod
    def from_arrays(cls, cell_kind: str, arrays: Dict[str, np.ndarray]) -> "NetworkParams":
        """Собрать параметры из словаря массивов"""
        cell_type = LstmCellParams if cell_kind == "lstm" else RnnCellParams
        cells = []
        k = 0
        while f"layer{k}.{next(iter(cell_type.model_fields))}" in arrays:
            prefix = f"layer{k}."
            cells.append(cell_type(**{
                name[len(prefix):]: value for name, value in arrays.items()
                if name.startswith(prefix)
            }))
            k += 1
        return cls(cells=cells, head_weights=arrays["head.weight"], head_bias=arrays["head.bias"])

    def parameter_count(self) -> int:
        return int(sum(array.size for array in self.arrays().values()))

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: array.shape for name, array in self.arrays().items()}


# =============================================================================
# ОБУЧЕНИЕ
# =============================================================================

class AdamState(ArrayModel):
    """Состояние оптимизатора Adam"""

    first_moment: Dict[str, np.ndarray]
    second_moment: Dict[str, np.ndarray]
    step_count: int = Field(default=0, ge=0)
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: NetworkParams, learning_rate: float = 0.001) -> "AdamState":
        arrays = params.arrays()
        return cls(
            first_moment={name: np.zeros_like(a) for name, a in arrays.items()},
            second_moment={name: np.zeros_like(a) for name, a in arrays.items()},
            learning_rate=learning_rate,
        )


class TrainReport(ArrayModel):
    """Результат обучения"""

    config: ModelConfig
    loss_history: List[float]
    final_params: NetworkParams
    seed: int
    wall_time: float
    clip_events: int = 0


class GradCheckReport(BaseModel):
    """Отчет проверки градиентов конечными разностями"""

    cell_kind: str
    num_layers: int
    hidden_size: int
    trials: int
    threshold: float = 1e-4
    max_relative_error: float
    per_parameter: Dict[str, float]

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.threshold


# =============================================================================
# ОЦЕНКА И ПРОГНОЗ
# =============================================================================

class TrialSet(ArrayModel):
    """Результаты нескольких запусков по одному региону"""

    region_id: str
    start_date: date
    seeds: List[int]
    failed_seeds: List[int] = Field(default_factory=list)
    per_trial_predictions: np.ndarray
    per_trial_accumulated: np.ndarray
    actual_daily: np.ndarray
    actual_accumulated: np.ndarray
    mean_curve: np.ndarray
    min_curve: np.ndarray
    max_curve: np.ndarray
    per_trial_rmse: List[float]
    mean_rmse: float

    @model_validator(mode="after")
    def check_envelope(self) -> "TrialSet":
        if not (np.all(self.min_curve <= self.mean_curve) and np.all(self.mean_curve <= self.max_curve)):
            raise ValueError("envelope must satisfy min <= mean <= max")
        if len(self.per_trial_rmse) != len(self.seeds):
            raise ValueError("one RMSE per surviving trial expected")
        return self

    @property
    def trial_count(self) -> int:
        return len(self.seeds)

    @property
    def dates(self) -> pd.DatetimeIndex:
        return pd.date_range(self.start_date, periods=self.mean_curve.shape[0], freq="D")


class CaseAssignment(ArrayModel):
    """Лучший, нормальный и худший сценарии"""

    best_trial: int
    worst_trial: int
    best_seed: int
    worst_seed: int
    best_curve: np.ndarray
    normal_curve: np.ndarray
    worst_curve: np.ndarray


class Continuation(ArrayModel):
    """Продолжение фактической кривой прогнозом"""

    anchor_date: date
    mode: Literal["additive", "multiplicative"] = "additive"
    offset: float
    scale: float
    raw_segment: pd.Series
    shifted_segment: pd.Series
    accumulated: pd.Series


class ForecastResult(ArrayModel):
    """Прогноз по одному региону: фактическая кривая, прогноз моделей и продолжение"""

    region_id: str
    anchor_date: date
    actual: pd.Series
    mean_accumulated: pd.Series
    min_accumulated: pd.Series
    max_accumulated: pd.Series
    model_count: int = Field(ge=1)
    continuation: Continuation


class ArraySpec(BaseModel):
    """Имя и форма массива в чекпоинте"""

    name: str
    shape: List[int]


class CheckpointHeader(BaseModel):
    """Заголовок чекпоинта"""

    format_version: int
    seed: int
    model: ModelConfig
    scaler: Optional[FeatureScaler] = None
    arrays: List[ArraySpec]
