"""
Logging setup for growthcast
Настройка логирования: stdlib logging + structlog
"""

import logging
import sys

import structlog

from growthcast.core.config import settings


def _configure_structlog() -> None:
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_log_level,
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.KeyValueRenderer(key_order=["event"], sort_keys=True),
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )


def configure_logging(level: str = None, fmt: str = None) -> None:
    """Настроить логирование по настройкам приложения"""
    level_name = (level or settings.LOG_LEVEL).upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=fmt or settings.LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )


def get_logger(name: str):
    """Получить логгер модуля"""
    return structlog.get_logger(name)


_configure_structlog()
