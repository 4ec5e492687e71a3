"""
Configuration settings for growthcast
Настройки конфигурации запуска: данные, модель, обучение, оценка, прогноз
"""

from datetime import date
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from growthcast.core.exceptions import ConfigurationError

# Регионы обучения по умолчанию; "*" - все провинции/штаты страны
DEFAULT_TRAIN_REGIONS = [
    "China*", "Germany", "Australia*", "Brazil", "US", "Belgium", "Spain", "Italy",
    "France*", "Malaysia", "Vietnam", "Iran", "United Arab Emirates", "Singapore",
    "Thailand", "Korea, South", "Japan", "Netherlands*", "Russia", "Chile", "India",
    "Greece", "Mexico", "Mongolia", "Philippines", "New Zealand", "South Africa",
    "Botswana", "Uruguay", "Paraguay", "Madagascar", "Peru", "Portugal", "Denmark*",
    "Hungary", "Kenya", "Ireland", "Israel", "Norway", "Mauritius", "Rwanda", "Iceland",
    "Kazakhstan", "Switzerland", "Cyprus", "Zimbabwe",
]

DEFAULT_VALIDATION_REGIONS = ["Indonesia", "Sweden", "Saudi Arabia", "Argentina"]


class RunConfig(BaseSettings):
    """Настройки запуска"""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
        protected_namespaces=(),
    )

    # Основные настройки
    APP_NAME: str = "growthcast"
    APP_VERSION: str = "1.0.0"

    # Данные
    CONFIRMED_CSV: Path = Path("data/time_series_covid19_confirmed_global.csv")
    DEATHS_CSV: Optional[Path] = Path("data/time_series_covid19_deaths_global.csv")
    RECOVERED_CSV: Optional[Path] = Path("data/time_series_covid19_recovered_global.csv")
    TRAIN_REGIONS: List[str] = Field(default_factory=lambda: list(DEFAULT_TRAIN_REGIONS))
    VALIDATION_REGIONS: List[str] = Field(default_factory=lambda: list(DEFAULT_VALIDATION_REGIONS))
    START_DATE: date = date(2020, 1, 22)
    DIFFERENCE_ALL_COUNTS: bool = True

    # Модель
    CELL_KIND: Literal["lstm", "rnn"] = "lstm"
    NUM_LAYERS: int = Field(default=2, ge=1, le=4)
    HIDDEN_SIZE: int = Field(default=30, ge=1, le=30)
    DROPOUT_RATE: float = Field(default=0.1, ge=0.0, lt=1.0)
    HEAD_MODE: Literal["all", "last"] = "all"
    INPUT_LEN: int = 67
    OUTPUT_LEN: int = 100

    # Обучение
    LEARNING_RATE: float = 0.001
    ITERATIONS: int = Field(default=10_000, ge=1)
    SEED: int = 1
    CLIP_NORM: float = 5.0
    LOSS_SPAN: Literal["full", "extrapolated"] = "full"
    CHECKPOINT_EVERY: int = 0
    PROGRESS_EVERY: int = 500

    # Оценка
    TRIAL_SEEDS: List[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5])
    HIDDEN_GRID: List[int] = Field(default_factory=lambda: [1, 5, 10, 30])
    LAYER_GRID: List[int] = Field(default_factory=lambda: [1, 2, 3, 4])
    SWEEP_FIXED_LAYERS: int = 4
    SWEEP_FIXED_HIDDEN: int = 30
    RMSE_SPAN: Literal["full", "extrapolated"] = "full"
    COPY_TASK_ITERATIONS: int = Field(default=2000, ge=0)

    # Прогноз
    AUGMENT_MODE: Literal["additive", "multiplicative"] = "additive"
    CONTINUATION_SOURCE: Literal["mean", "single"] = "mean"

    # Вывод
    OUTPUT_DIR: Path = Path("output")

    # Логирование
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    # Параллельные запуски
    WORKERS: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def check_consistency(self) -> "RunConfig":
        """Проверка согласованности списков"""
        train = {region.rstrip("*") for region in self.TRAIN_REGIONS}
        validation = {region.rstrip("*") for region in self.VALIDATION_REGIONS}
        overlap = sorted(train & validation)
        if overlap:
            raise ValueError(f"train and validation regions overlap: {overlap}")
        if not self.TRIAL_SEEDS:
            raise ValueError("TRIAL_SEEDS must not be empty")
        if not self.HIDDEN_GRID or not self.LAYER_GRID:
            raise ValueError("sweep grids must not be empty")
        if self.INPUT_LEN > self.OUTPUT_LEN:
            raise ValueError("INPUT_LEN must not exceed OUTPUT_LEN")
        return self

    def check_paths(self) -> None:
        """Проверить, что все файлы данных существуют"""
        for name in ("CONFIRMED_CSV", "DEATHS_CSV", "RECOVERED_CSV"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ConfigurationError(f"{name}: data file not found: {path}")

    def model_config_for(self, **overrides):
        """Построить ModelConfig из настроек запуска"""
        from growthcast.models.schemas import ModelConfig

        values = {
            "cell_kind": self.CELL_KIND,
            "num_layers": self.NUM_LAYERS,
            "hidden_size": self.HIDDEN_SIZE,
            "dropout_rate": self.DROPOUT_RATE,
            "head_mode": self.HEAD_MODE,
            "input_len": self.INPUT_LEN,
            "output_len": self.OUTPUT_LEN,
            "learning_rate": self.LEARNING_RATE,
            "iterations": self.ITERATIONS,
            "seed": self.SEED,
            "clip_norm": self.CLIP_NORM,
            "loss_span": self.LOSS_SPAN,
        }
        values.update(overrides)
        return ModelConfig(**values)


def load_run_config(config_path: Optional[Path] = None, **overrides) -> RunConfig:
    """Загрузить конфигурацию из файла; флаги CLI имеют приоритет"""
    overrides = {key: value for key, value in overrides.items() if value is not None}
    if config_path is not None:
        if not Path(config_path).is_file():
            raise ConfigurationError(f"config file not found: {config_path}")
        return RunConfig(_env_file=config_path, **overrides)
    return RunConfig(**overrides)


# Создаем экземпляр настроек
settings = RunConfig()
