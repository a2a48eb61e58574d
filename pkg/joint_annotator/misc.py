from collections.abc import Callable
from functools import wraps
from logging import getLogger
from typing import ParamSpec, TypeVar

T = TypeVar("T")
P = ParamSpec("P")

logger = getLogger(__name__)


class JointAnnotatorError(Exception):
    pass


class CorpusFormatError(JointAnnotatorError):
    def __init__(self, path: str, line_no: int | None, message: str):
        self.path = path
        self.line_no = line_no
        where = f"{path}:{line_no}" if line_no is not None else path
        super().__init__(f"{where}: {message}")


class InvalidTreeError(JointAnnotatorError):
    pass


class VocabError(JointAnnotatorError):
    pass


class ShapeError(JointAnnotatorError):
    pass


class NonFiniteError(JointAnnotatorError):
    pass


class ConfigError(JointAnnotatorError):
    pass


class LeakageError(JointAnnotatorError):
    pass


class CheckpointError(JointAnnotatorError):
    pass


def finite_guard(func: Callable[P, T]) -> Callable[P, T]:
    """`func`の中で`NonFiniteError`が送出された場合に、呼び出し時の引数を添えて送出し直します。"""

    @wraps(func)
    def inner(*args: P.args, **kwargs: P.kwargs) -> T:
        try:
            return func(*args, **kwargs)
        except NonFiniteError as err:
            logger.error(f"{func.__name__}({args=}, {kwargs=}) aborted: {err}")
            raise NonFiniteError(f"{func.__name__}: {err}") from err

    return inner
