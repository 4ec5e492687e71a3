"""
Общие фикстуры тестов growthcast: синтетические CSV в формате JHU и малые конфигурации
"""

from datetime import date
from pathlib import Path

import numpy as np
import pytest

from growthcast.core.config import RunConfig
from growthcast.core.metrics import metrics
from growthcast.models.schemas import ModelConfig, WindowPair
from growthcast.utils.helpers import create_sample_dataset

TRAIN_NAMES = [
    "China/North", "China/South", "Germany", "Brazil", "Italy", "Japan", "India", "Chile",
]
VALIDATION_NAMES = ["Indonesia", "Sweden", "Saudi Arabia", "Argentina"]
SAMPLE_DAYS = 110

# снимок JHU 22.01.2020 - 01.05.2020, см. scripts/fetch_jhu_snapshot.py
SNAPSHOT_DIR = Path(__file__).parent / "data"
SNAPSHOT_FEATURES = ("confirmed", "deaths", "recovered")


@pytest.fixture(autouse=True)
def reset_metrics():
    metrics.reset()
    yield
    metrics.reset()


@pytest.fixture(scope="session")
def sample_data_dir(tmp_path_factory):
    """Синтетические данные: 8 регионов обучения и 4 региона проверки, 110 дней"""
    directory = tmp_path_factory.mktemp("jhu")
    create_sample_dataset(directory, TRAIN_NAMES + VALIDATION_NAMES, days=SAMPLE_DAYS, seed=3)
    return directory


@pytest.fixture(scope="session")
def snapshot_csvs():
    """Пути к CSV снимка по признакам; тест пропускается, если снимок не загружен"""
    paths = {feature: SNAPSHOT_DIR / f"time_series_covid19_{feature}_global.csv" for feature in SNAPSHOT_FEATURES}
    missing = [path.name for path in paths.values() if not path.is_file()]
    if missing:
        pytest.skip(f"JHU snapshot missing {', '.join(missing)}: run scripts/fetch_jhu_snapshot.py")
    return paths


@pytest.fixture
def run_config(sample_data_dir, tmp_path):
    """Быстрая конфигурация запуска на синтетических данных"""
    return RunConfig(
        _env_file=None,
        CONFIRMED_CSV=sample_data_dir / "time_series_covid19_confirmed_global.csv",
        DEATHS_CSV=sample_data_dir / "time_series_covid19_deaths_global.csv",
        RECOVERED_CSV=sample_data_dir / "time_series_covid19_recovered_global.csv",
        TRAIN_REGIONS=["China*", "Germany", "Brazil", "Italy", "Japan", "India", "Chile"],
        VALIDATION_REGIONS=VALIDATION_NAMES,
        START_DATE=date(2020, 1, 22),
        NUM_LAYERS=1,
        HIDDEN_SIZE=4,
        ITERATIONS=15,
        TRIAL_SEEDS=[1, 2, 3],
        HIDDEN_GRID=[1, 4],
        LAYER_GRID=[1, 2],
        SWEEP_FIXED_LAYERS=1,
        SWEEP_FIXED_HIDDEN=4,
        COPY_TASK_ITERATIONS=0,
        PROGRESS_EVERY=0,
        OUTPUT_DIR=tmp_path / "out",
        WORKERS=1,
    )


@pytest.fixture
def tiny_config():
    """Маленькая сеть для проверок градиентов и коротких обучений"""
    return ModelConfig(
        cell_kind="lstm", num_layers=2, hidden_size=3, dropout_rate=0.0,
        input_len=5, output_len=6, feature_count=3, seed=0, iterations=50,
    )


def make_windows(config: ModelConfig, count: int, seed: int = 0, constant_target=None):
    """Случайные окна в диапазоне [0, 1] под заданную конфигурацию"""
    rng = np.random.default_rng(seed)
    windows = []
    for n in range(count):
        target = (np.full(config.output_len, constant_target) if constant_target is not None
                  else rng.uniform(0.1, 0.9, config.output_len))
        windows.append(WindowPair(
            region_id=f"r{n}",
            start_date=date(2020, 1, 22),
            input_window=rng.uniform(0.0, 1.0, (config.input_len, config.feature_count)),
            target_window=target,
        ))
    return windows
