from typing import Optional


class ViscoLabError(Exception):
    """Базовая ошибка симулятора"""

    # номер шага, на котором возникла ошибка (заполняет драйвер)
    step_index: Optional[int] = None


class DomainError(ViscoLabError, ValueError):
    """Аргумент вне области определения функции"""


class ConfigError(ViscoLabError):
    """Ошибка конфигурации запуска, с путём до поля"""

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")


class FormatError(ViscoLabError):
    """Снапшот не соответствует заголовку"""


class GridMismatchError(ViscoLabError):
    pass


class DegenerateFieldError(ViscoLabError):
    pass


class NonconvergenceError(ViscoLabError):
    """Итерации Пикара не сошлись за отведённое число шагов"""

    def __init__(self, message: str, iterations: int = 0, residual: float = float("nan")):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")


class AdmissibilityError(ViscoLabError):
    """Шаг покинул допустимое множество — повторяем с меньшим dt"""

    def __init__(self, message: str, step_index: Optional[int] = None):
        self.step_index = step_index
        super().__init__(message)


class BarrierError(AdmissibilityError):
    """|div u| >= 1/b"""


class PositivityError(AdmissibilityError):
    """min rho <= 0 или min eta < 0"""


EXIT_CODES = {
    ConfigError: 2,
    NonconvergenceError: 3,
    AdmissibilityError: 4,
}


def exit_code_for(error: BaseException) -> int:
    for cls, code in EXIT_CODES.items():
        if isinstance(error, cls):
            return code
    return 1
