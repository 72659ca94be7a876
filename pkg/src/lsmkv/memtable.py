import threading
from typing import Iterator, Optional, Union

from src.lsmkv.block import TOMBSTONE, Tombstone

Value = Union[bytes, Tombstone]

_ENTRY_OVERHEAD = 16


class MemTable:
    def __init__(self):
        self._lock = threading.Lock()
        self._data: dict[bytes, Value] = {}
        self.approximate_bytes = 0

    def put(self, key: bytes, value: Value) -> None:
        size = len(key) + (0 if value is TOMBSTONE else len(value)) + _ENTRY_OVERHEAD
        with self._lock:
            self._data[key] = value
            self.approximate_bytes += size

    def get(self, key: bytes) -> Optional[Value]:
        with self._lock:
            return self._data.get(key)

    def __len__(self) -> int:
        with self._lock:
            return len(self._data)

    def sorted_items(self) -> Iterator[tuple[bytes, Value]]:
        with self._lock:
            items = sorted(self._data.items())
        return iter(items)
