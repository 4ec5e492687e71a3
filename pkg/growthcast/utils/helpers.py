"""
Utility functions and helpers for growthcast
Утилиты: атомарная запись файлов, синтетические эпидемические кривые, CSV в формате JHU
"""

import os
import re
import tempfile
from datetime import date
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

PathLike = Union[str, Path]


# =============================================================================
# ЗАПИСЬ ФАЙЛОВ
# =============================================================================

def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    """Записать файл через временный файл и os.replace"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def format_duration(seconds: float) -> str:
    """Форматировать продолжительность в читаемый вид"""
    if seconds < 60:
        return f"{seconds:.1f} сек"
    elif seconds < 3600:
        return f"{seconds / 60:.1f} мин"
    return f"{seconds / 3600:.1f} ч"


def slugify(name: str) -> str:
    """Имя региона для имени файла: China/Hubei -> China_Hubei"""
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_") or "region"


def jhu_date_label(day: date) -> str:
    """Заголовок колонки даты как в JHU: 1/22/20"""
    return f"{day.month}/{day.day}/{day:%y}"


# =============================================================================
# СИНТЕТИЧЕСКИЕ ДАННЫЕ
# =============================================================================

def logistic_cumulative(days: int, total: float, midpoint: float, rate: float) -> np.ndarray:
    """Логистическая накопленная кривая"""
    t = np.arange(days, dtype=np.float64)
    return total / (1.0 + np.exp(-rate * (t - midpoint)))


def create_sample_curves(
    names: Sequence[str],
    days: int = 120,
    seed: int = 0,
    noise: float = 0.1,
    midpoint_range: Tuple[float, float] = (0.35, 0.8),
) -> List[Dict[str, object]]:
    """Синтетические регионы: логистические ежедневные формы с шумом; пик в midpoint_range долей периода"""
    rng = np.random.default_rng(seed)
    curves = []
    for name in names:
        total = rng.uniform(2_000, 60_000)
        midpoint = rng.uniform(midpoint_range[0] * days, midpoint_range[1] * days)
        rate = rng.uniform(0.06, 0.16)
        base = logistic_cumulative(days, total, midpoint, rate)
        daily = np.diff(base, prepend=0.0) * (1.0 + noise * rng.standard_normal(days))
        confirmed = np.cumsum(np.round(np.clip(daily, 0.0, None)))
        deaths = np.floor(confirmed * rng.uniform(0.01, 0.06))
        recovered = np.floor(np.concatenate([np.zeros(14), confirmed[:-14]]) * rng.uniform(0.4, 0.9))
        country, _, province = name.partition("/")
        curves.append({
            "country": country,
            "province": province or None,
            "latitude": round(float(rng.uniform(-60, 70)), 4),
            "longitude": round(float(rng.uniform(-170, 170)), 4),
            "confirmed": confirmed,
            "deaths": deaths,
            "recovered": recovered[:days],
        })
    return curves


def write_jhu_csv(path: PathLike, curves: Sequence[Dict[str, object]], feature: str, start: date) -> Path:
    """Записать один широкий CSV (confirmed, deaths или recovered)"""
    days = len(curves[0][feature])
    labels = [jhu_date_label(day.date()) for day in pd.date_range(start, periods=days, freq="D")]
    rows = []
    for curve in curves:
        row = {
            "Province/State": curve["province"] or "",
            "Country/Region": curve["country"],
            "Lat": curve["latitude"],
            "Long": curve["longitude"],
        }
        row.update(zip(labels, np.asarray(curve[feature]).astype(np.int64).tolist()))
        rows.append(row)
    frame = pd.DataFrame(rows, columns=["Province/State", "Country/Region", "Lat", "Long"] + labels)
    return atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))


def create_sample_dataset(
    directory: PathLike,
    names: Sequence[str],
    days: int = 120,
    seed: int = 0,
    start: date = date(2020, 1, 22),
    noise: float = 0.1,
    midpoint_range: Tuple[float, float] = (0.35, 0.8),
) -> Dict[str, Path]:
    """Создать три CSV в формате JHU с синтетическими регионами"""
    directory = Path(directory)
    curves = create_sample_curves(names, days=days, seed=seed, noise=noise, midpoint_range=midpoint_range)
    paths: Dict[str, Path] = {}
    for feature in ("confirmed", "deaths", "recovered"):
        paths[feature] = write_jhu_csv(
            directory / f"time_series_covid19_{feature}_global.csv", curves, feature, start
        )
    return paths


def trend_holds(values: Sequence[float], min_steps: Optional[int] = None) -> bool:
    """Убывающий тренд: число убывающих соседних шагов не меньше min_steps (по умолчанию большинство)"""
    values = list(values)
    steps = len(values) - 1
    if steps <= 0:
        return True
    decreasing = sum(1 for left, right in zip(values, values[1:]) if right < left)
    required = min_steps if min_steps is not None else steps // 2 + 1
    return decreasing >= required
