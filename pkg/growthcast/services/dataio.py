"""
Data ingestion and preparation service
Загрузка CSV в формате JHU, признаки, масштабирование и окна обучения
"""

from datetime import date, datetime
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError

from growthcast.core.exceptions import DataError, DataFormatError, SchemaError
from growthcast.core.logging import get_logger
from growthcast.core.metrics import metrics
from growthcast.models.schemas import (
    FEATURE_COLUMNS,
    JHU_SCHEMA,
    ColumnSchema,
    FeatureScaler,
    RegionSeries,
    WindowPair,
    WindowSplit,
)

logger = get_logger(__name__)

Matrix = Union[np.ndarray, pd.DataFrame]


# =============================================================================
# ЗАГРУЗКА CSV
# =============================================================================

def region_key(country: str, province: Optional[str]) -> str:
    """Ключ региона: "Страна" или "Страна/Провинция" """
    if province is None or (isinstance(province, float) and np.isnan(province)) or str(province).strip() == "":
        return str(country).strip()
    return f"{str(country).strip()}/{str(province).strip()}"


def _parse_date_columns(columns: Sequence[str], schema: ColumnSchema) -> pd.DatetimeIndex:
    parsed = []
    for column in columns:
        try:
            parsed.append(datetime.strptime(str(column).strip(), schema.date_format))
        except ValueError:
            raise SchemaError("unparseable date column header", column=str(column)) from None
    if not parsed:
        raise SchemaError("header has no date columns")
    dates = pd.DatetimeIndex(parsed)
    steps = np.diff(dates.values).astype("timedelta64[D]").astype(np.int64)
    if np.any(steps <= 0):
        raise DataFormatError("date columns are not strictly increasing")
    if np.any(steps != 1):
        raise DataFormatError("date columns are not spaced one day apart")
    return dates


def read_wide_csv(path: Union[str, Path], schema: ColumnSchema = JHU_SCHEMA) -> pd.DataFrame:
    """Прочитать широкий CSV: индекс - ключ региона, колонки - lat, lon и даты"""
    frame = pd.read_csv(path, encoding="utf-8")
    frame.columns = [str(column).strip() for column in frame.columns]

    required = [schema.country_column, schema.lat_column, schema.lon_column]
    missing = [column for column in required if column not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: header is missing columns {missing}")

    meta_columns = [column for column in schema.meta_columns if column in frame.columns]
    date_columns = [column for column in frame.columns if column not in meta_columns]
    dates = _parse_date_columns(date_columns, schema)

    province_column = schema.province_column if schema.province_column in frame.columns else None
    keys = [
        region_key(row[schema.country_column], row[province_column] if province_column else None)
        for _, row in frame.iterrows()
    ]
    duplicated = pd.Index(keys)[pd.Index(keys).duplicated()]
    if len(duplicated):
        raise DataError(f"{path}: duplicate region rows", row=str(duplicated[0]))

    counts = frame[date_columns].apply(pd.to_numeric, errors="coerce")
    counts.index = keys
    counts.columns = dates
    for key, row in counts.iterrows():
        bad = row[row.isna()]
        if len(bad):
            raise DataError("missing or non-numeric count", row=key, column=bad.index[0].strftime("%Y-%m-%d"))
        negative = row[row < 0]
        if len(negative):
            raise DataError("negative count", row=key, column=negative.index[0].strftime("%Y-%m-%d"))

    table = pd.DataFrame(
        {
            "latitude": pd.to_numeric(frame[schema.lat_column], errors="coerce").to_numpy(),
            "longitude": pd.to_numeric(frame[schema.lon_column], errors="coerce").to_numpy(),
        },
        index=keys,
    )
    return pd.concat([table, counts], axis=1)


def load_region_csv(
    path: Union[str, Path],
    schema: ColumnSchema = JHU_SCHEMA,
    deaths_path: Optional[Union[str, Path]] = None,
    recovered_path: Optional[Union[str, Path]] = None,
) -> Dict[str, RegionSeries]:
    """Загрузить ряды регионов; файлы смертей и выздоровлений соединяются inner join"""
    confirmed = read_wide_csv(path, schema)
    tables = {"confirmed": confirmed}
    for feature, companion in (("deaths", deaths_path), ("recovered", recovered_path)):
        if companion is not None:
            tables[feature] = read_wide_csv(companion, schema)
        else:
            logger.info("companion file not given, using zero counts", feature=feature)

    keys = confirmed.index
    dates = _count_columns(confirmed)
    for table in tables.values():
        keys = keys.intersection(table.index, sort=False)
        dates = dates.intersection(_count_columns(table))
    dropped = len(confirmed.index) - len(keys)
    if dropped:
        logger.info("regions dropped by inner join", dropped=dropped)
    if len(dates) != len(_count_columns(confirmed)):
        logger.info("date columns trimmed to the common range", days=len(dates))

    regions: Dict[str, RegionSeries] = {}
    for key in keys:
        latitude, longitude = confirmed.at[key, "latitude"], confirmed.at[key, "longitude"]
        if np.isnan(latitude) or np.isnan(longitude):
            logger.warning("region has no coordinates, skipped", region=key)
            continue
        series = {
            feature: (tables[feature].loc[key, dates].to_numpy(dtype=np.float64)
                      if feature in tables else np.zeros(len(dates)))
            for feature in ("confirmed", "deaths", "recovered")
        }
        try:
            regions[key] = RegionSeries(
                region_id=key, latitude=latitude, longitude=longitude, dates=dates, **series
            )
        except ValidationError as error:
            raise DataError(f"invalid region: {error.errors()[0]['msg']}", row=key) from None

    logger.info("regions loaded", path=str(path), regions=len(regions), days=len(dates))
    return regions


def _count_columns(table: pd.DataFrame) -> pd.DatetimeIndex:
    return pd.DatetimeIndex([column for column in table.columns if isinstance(column, pd.Timestamp)])


def select_regions(regions: Mapping[str, RegionSeries], selectors: Iterable[str]) -> List[str]:
    """Выбрать ключи регионов; "Страна*" - страна и все ее провинции"""
    selected: List[str] = []
    for selector in selectors:
        if selector.endswith("*"):
            country = selector[:-1]
            matches = [key for key in regions if key == country or key.startswith(country + "/")]
        else:
            matches = [selector] if selector in regions else []
        if not matches:
            logger.warning("region not found in data", region=selector)
        for key in matches:
            if key not in selected:
                selected.append(key)
    return selected


# =============================================================================
# ПРИЗНАКИ
# =============================================================================

def to_daily(cumulative: Sequence[float], feature: str = "confirmed") -> np.ndarray:
    """Перевести накопленные значения в ежедневные; отрицательные разности обнуляются"""
    values = np.asarray(cumulative, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cumulative series must not be empty")

    daily = np.empty_like(values)
    daily[0] = values[0]
    daily[1:] = np.diff(values)

    negative = daily < 0
    clamped = int(negative.sum())
    if clamped:
        daily[negative] = 0.0
        metrics.increment_counter("daily_corrections_clamped", {"feature": feature}, clamped)
        logger.info("negative daily counts clamped", feature=feature, clamped=clamped)
    return daily


def assemble_features(series: RegionSeries, difference_all: bool = True) -> pd.DataFrame:
    """Матрица признаков (дни x 5): confirmed, deaths, recovered, latitude, longitude"""
    n = len(series)
    columns = {"confirmed": to_daily(series.confirmed, "confirmed")}
    for feature in ("deaths", "recovered"):
        values = getattr(series, feature)
        columns[feature] = to_daily(values, feature) if difference_all else values.astype(np.float64)
    columns["latitude"] = np.full(n, series.latitude, dtype=np.float64)
    columns["longitude"] = np.full(n, series.longitude, dtype=np.float64)
    return pd.DataFrame(columns, index=series.dates, columns=list(FEATURE_COLUMNS))


# =============================================================================
# МАСШТАБИРОВАНИЕ
# =============================================================================

def fit_scaler(corpus: Iterable[Matrix]) -> FeatureScaler:
    """Min/max по всему обучающему корпусу"""
    blocks = [np.asarray(matrix, dtype=np.float64) for matrix in corpus]
    blocks = [block for block in blocks if block.size]
    if not blocks:
        raise ValueError("cannot fit a scaler on an empty corpus")
    widths = {block.shape[-1] for block in blocks}
    if len(widths) != 1:
        raise ValueError(f"corpus matrices disagree on feature count: {sorted(widths)}")
    stacked = np.concatenate([block.reshape(-1, block.shape[-1]) for block in blocks], axis=0)
    return FeatureScaler(
        per_feature_min=stacked.min(axis=0).tolist(),
        per_feature_max=stacked.max(axis=0).tolist(),
    )


def transform(scaler: FeatureScaler, m: Matrix) -> Matrix:
    return scaler.transform(m)


def inverse_transform(scaler: FeatureScaler, m: Matrix) -> Matrix:
    return scaler.inverse_transform(m)


# =============================================================================
# ОКНА
# =============================================================================

def _from_start(matrix: Matrix, start_date: date) -> Matrix:
    if isinstance(matrix, pd.DataFrame):
        return matrix.loc[matrix.index >= pd.Timestamp(start_date)]
    return matrix


def make_windows(corpus: Mapping[str, Matrix], split: WindowSplit = WindowSplit()) -> List[WindowPair]:
    """Одна пара окон на регион: вход input_len x F, цель - дневные confirmed за output_len дней"""
    windows: List[WindowPair] = []
    for region_id, matrix in corpus.items():
        span = _from_start(matrix, split.start_date)
        values = np.asarray(span, dtype=np.float64)
        if values.shape[0] < split.output_len:
            metrics.increment_counter("regions_skipped_short")
            logger.warning(
                "region shorter than the window, skipped",
                region=region_id, days=int(values.shape[0]), required=split.output_len,
            )
            continue
        if isinstance(span, pd.DataFrame) and len(span):
            start = span.index[0].date()
        else:
            start = split.start_date
        windows.append(WindowPair(
            region_id=region_id,
            start_date=start,
            input_window=values[: split.input_len],
            target_window=values[: split.output_len, 0],
        ))
    return windows


def window_ending_at(frame: pd.DataFrame, anchor_date: date, input_len: int = 67) -> pd.DataFrame:
    """Последние input_len дней, заканчивающиеся датой якоря"""
    history = frame.loc[frame.index <= pd.Timestamp(anchor_date)]
    if len(history) < input_len or history.index[-1] != pd.Timestamp(anchor_date):
        raise ValueError(
            f"need {input_len} days of data ending at {anchor_date}, found {len(history)}"
        )
    return history.iloc[-input_len:]


# =============================================================================
# ПОДГОТОВКА ДАННЫХ ДЛЯ ЗАПУСКА
# =============================================================================

class PreparedData(BaseModel):
    """Данные одного запуска: признаки, скейлер, окна"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    regions: Dict[str, RegionSeries]
    features: Dict[str, pd.DataFrame]
    scaler: FeatureScaler
    split: WindowSplit
    train_ids: List[str]
    validation_ids: List[str]
    train_windows: List[WindowPair]
    validation_windows: List[WindowPair]


def build_corpus(
    regions: Mapping[str, RegionSeries], region_ids: Iterable[str], difference_all: bool = True
) -> Dict[str, pd.DataFrame]:
    return {key: assemble_features(regions[key], difference_all) for key in region_ids}


def prepare_datasets(run_config, scaler: Optional[FeatureScaler] = None) -> PreparedData:
    """Загрузка -> признаки -> скейлер по обучающим регионам -> окна"""
    regions = load_region_csv(
        run_config.CONFIRMED_CSV,
        deaths_path=run_config.DEATHS_CSV,
        recovered_path=run_config.RECOVERED_CSV,
    )
    split = WindowSplit(
        start_date=run_config.START_DATE,
        input_len=run_config.INPUT_LEN,
        output_len=run_config.OUTPUT_LEN,
    )
    train_ids = select_regions(regions, run_config.TRAIN_REGIONS)
    validation_ids = select_regions(regions, run_config.VALIDATION_REGIONS)
    features = build_corpus(regions, train_ids + validation_ids, run_config.DIFFERENCE_ALL_COUNTS)

    if scaler is None:
        spans = [_from_start(features[key], split.start_date).iloc[: split.output_len] for key in train_ids]
        scaler = fit_scaler(spans)

    scaled = {key: scaler.transform(frame) for key, frame in features.items()}
    return PreparedData(
        regions=regions,
        features=features,
        scaler=scaler,
        split=split,
        train_ids=train_ids,
        validation_ids=validation_ids,
        train_windows=make_windows({key: scaled[key] for key in train_ids}, split),
        validation_windows=make_windows({key: scaled[key] for key in validation_ids}, split),
    )
