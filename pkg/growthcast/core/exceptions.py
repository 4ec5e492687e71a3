"""
Error hierarchy for growthcast
Иерархия исключений и коды завершения CLI
"""

EXIT_OK = 0
EXIT_RUNTIME_FAILURE = 1
EXIT_CONFIG_ERROR = 2


class GrowthcastError(Exception):
    """Базовое исключение пакета"""

    exit_code: int = EXIT_RUNTIME_FAILURE


class ConfigurationError(GrowthcastError):
    """Некорректная конфигурация запуска"""

    exit_code = EXIT_CONFIG_ERROR


class DataError(GrowthcastError):
    """Некорректные входные данные"""

    exit_code = EXIT_CONFIG_ERROR

    def __init__(self, message: str, row: str = None, column: str = None):
        self.row = row
        self.column = column
        location = []
        if row is not None:
            location.append(f"row '{row}'")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)


class SchemaError(DataError):
    """Заголовок CSV не соответствует схеме"""


class DataFormatError(DataError):
    """Даты не монотонны или шаг не равен одному дню"""


class CheckpointError(GrowthcastError):
    """Чекпоинт поврежден или несовместим с конфигурацией"""

    exit_code = EXIT_CONFIG_ERROR


class TrainingDivergedError(GrowthcastError):
    """Функция потерь стала нечисловой"""

    def __init__(self, iteration: int, loss: float):
        self.iteration = iteration
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at iteration {iteration}")


class TrialFailureError(GrowthcastError):
    """Слишком мало успешных запусков для построения интервала"""


class ShapeError(GrowthcastError, ValueError):
    """Несовпадение размерностей аргументов"""

    exit_code = EXIT_CONFIG_ERROR


def exit_code_for(error: BaseException) -> int:
    """Код завершения для исключения"""
    if isinstance(error, GrowthcastError):
        return error.exit_code
    if isinstance(error, (FileNotFoundError, ValueError)):
        return EXIT_CONFIG_ERROR
    return EXIT_RUNTIME_FAILURE
