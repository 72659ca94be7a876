import logging
import os
import threading
from typing import Optional

from src.core.config import settings
from src.core.errors import DeviceError

logger = logging.getLogger(__name__)


class BlockDevice:
    """Блочное устройство поверх плоского файла (или памяти, если путь не задан).

    Формат файла: сырой массив блоков без заголовка. Геометрия задается
    конфигурацией, а не хранится на диске.
    """

    def __init__(
        self,
        block_size: int = settings.BLOCK_SIZE,
        capacity_blocks: int = settings.CAPACITY_BLOCKS,
        path: Optional[str] = None,
    ):
        if block_size <= 0 or capacity_blocks <= 0:
            raise DeviceError("Размер блока и емкость должны быть положительными")
        self.block_size = block_size
        self.capacity_blocks = capacity_blocks
        self.path = path
        self._lock = threading.Lock()
        self._fd: Optional[int] = None
        self._memory: Optional[bytearray] = None
        if path:
            self._fd = os.open(path, os.O_RDWR | os.O_CREAT, 0o644)
            size = block_size * capacity_blocks
            if os.fstat(self._fd).st_size < size:
                os.ftruncate(self._fd, size)
            logger.info(f"Устройство открыто: {path}, {capacity_blocks} блоков по {block_size} байт")
        else:
            self._memory = bytearray(block_size * capacity_blocks)

    def _check(self, block: int, count: int) -> None:
        if block < 0 or count < 0 or block + count > self.capacity_blocks:
            raise DeviceError(
                f"Блоки [{block}, {block + count}) вне устройства емкостью {self.capacity_blocks}"
            )

    def read_blocks(self, block: int, count: int) -> bytes:
        self._check(block, count)
        start = block * self.block_size
        length = count * self.block_size
        if self._fd is not None:
            data = os.pread(self._fd, length, start)
            if len(data) != length:
                raise DeviceError(f"Короткое чтение с устройства: {len(data)} из {length}")
            return data
        with self._lock:
            return bytes(self._memory[start:start + length])

    def write_blocks(self, block: int, data: bytes) -> None:
        if len(data) % self.block_size:
            raise DeviceError(f"Длина записи {len(data)} не кратна размеру блока {self.block_size}")
        count = len(data) // self.block_size
        self._check(block, count)
        start = block * self.block_size
        if self._fd is not None:
            os.pwrite(self._fd, data, start)
            return
        with self._lock:
            self._memory[start:start + len(data)] = data

    def read_ranges(self, ranges: list[tuple[int, int]]) -> bytes:
        return b"".join(self.read_blocks(block, count) for block, count in ranges)

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
