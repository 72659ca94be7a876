from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Union

from src.core.config import settings
from src.functions.enums import FallbackReason


@dataclass(frozen=True, slots=True)
class Resubmit:
    fd_index: int
    offset: int
    length: int


@dataclass(frozen=True, slots=True)
class Done:
    result_length: int


@dataclass(frozen=True, slots=True)
class Fallback:
    reason: FallbackReason


StepOutcome = Union[Resubmit, Done, Fallback]


class StepLimitExceeded(Exception):
    pass


class StepContext:
    """Бюджет шагов одного вызова функции; заменяет гарантии верификатора."""

    def __init__(self, max_steps: int = settings.MAX_STEPS_PER_CALL):
        self.max_steps = max_steps
        self.steps = 0

    def tick(self, n: int = 1) -> None:
        self.steps += n
        if self.steps > self.max_steps:
            raise StepLimitExceeded(f"Превышен бюджет шагов: {self.max_steps}")


class StorageFunction(ABC):
    """Функция хранилища: чистый автомат над (блок, scratch).

    Каждый вызов step получает прочитанный блок и изменяемый scratch-буфер и
    решает, что делать дальше: дочитать следующий блок, завершиться или
    отказаться в пользу обычного пути чтения.
    """

    function_id: int
    name: str

    @abstractmethod
    def step(self, block: bytes, scratch: bytearray, ctx: StepContext) -> StepOutcome:
        ...
