import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

from src.lsmkv.memtable import Value

logger = logging.getLogger(__name__)

BlockKey = tuple[int, int]


@dataclass(slots=True)
class CacheCounters:
    hits: int = 0
    misses: int = 0
    inserts: int = 0
    evictions: int = 0

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


class BlockCache:
    """LRU-кэш блоков SST по ключу (inode, смещение).

    Закрепленные блоки (индексы и фильтры) хранятся отдельно и не входят в
    емкость LRU.
    """

    def __init__(self, capacity_bytes: int):
        self.capacity = capacity_bytes
        self._lock = threading.Lock()
        self._lru: OrderedDict[BlockKey, bytes] = OrderedDict()
        self._pinned: dict[BlockKey, bytes] = {}
        self.resident_bytes = 0
        self.counters = CacheCounters()

    def get(self, inode_id: int, offset: int) -> Optional[bytes]:
        key = (inode_id, offset)
        with self._lock:
            data = self._pinned.get(key)
            if data is None:
                data = self._lru.get(key)
                if data is not None:
                    self._lru.move_to_end(key)
            if data is None:
                self.counters.misses += 1
            else:
                self.counters.hits += 1
            return data

    def contains(self, inode_id: int, offset: int) -> bool:
        key = (inode_id, offset)
        with self._lock:
            return key in self._pinned or key in self._lru

    def insert(self, inode_id: int, offset: int, data: bytes) -> None:
        key = (inode_id, offset)
        with self._lock:
            if key in self._pinned or len(data) > self.capacity:
                return
            old = self._lru.pop(key, None)
            if old is not None:
                self.resident_bytes -= len(old)
            self._lru[key] = data
            self.resident_bytes += len(data)
            self.counters.inserts += 1
            while self.resident_bytes > self.capacity:
                _, evicted = self._lru.popitem(last=False)
                self.resident_bytes -= len(evicted)
                self.counters.evictions += 1

    def pin(self, inode_id: int, offset: int, data: bytes) -> None:
        key = (inode_id, offset)
        with self._lock:
            old = self._lru.pop(key, None)
            if old is not None:
                self.resident_bytes -= len(old)
            self._pinned[key] = data

    def evict(self, inode_id: int, offset: int) -> None:
        key = (inode_id, offset)
        with self._lock:
            old = self._lru.pop(key, None)
            if old is not None:
                self.resident_bytes -= len(old)

    def drop_file(self, inode_id: int) -> None:
        with self._lock:
            for key in [k for k in self._lru if k[0] == inode_id]:
                self.resident_bytes -= len(self._lru.pop(key))
            for key in [k for k in self._pinned if k[0] == inode_id]:
                del self._pinned[key]

    def clear(self) -> None:
        """Сброс незакрепленных блоков."""
        with self._lock:
            self._lru.clear()
            self.resident_bytes = 0

    def reset_counters(self) -> None:
        with self._lock:
            self.counters = CacheCounters()


class RowCache:
    """Итоговые значения pushdown-запросов.

    Вставка принимает номер записи, действовавший в начале запроса: если
    после него в хранилище была запись, результат мог устареть и не кэшируется.
    """

    def __init__(self, capacity_entries: int):
        self.capacity = capacity_entries
        self._lock = threading.Lock()
        self._rows: OrderedDict[bytes, Value] = OrderedDict()
        self.write_seq = 0
        self.counters = CacheCounters()

    def get(self, key: bytes) -> Optional[Value]:
        with self._lock:
            value = self._rows.get(key)
            if value is None:
                self.counters.misses += 1
            else:
                self._rows.move_to_end(key)
                self.counters.hits += 1
            return value

    def insert(self, key: bytes, value: Value, seq: int) -> bool:
        with self._lock:
            if seq != self.write_seq or self.capacity <= 0:
                return False
            self._rows[key] = value
            self._rows.move_to_end(key)
            self.counters.inserts += 1
            while len(self._rows) > self.capacity:
                self._rows.popitem(last=False)
                self.counters.evictions += 1
            return True

    def invalidate(self, key: bytes) -> None:
        with self._lock:
            self.write_seq += 1
            self._rows.pop(key, None)

    def __len__(self) -> int:
        with self._lock:
            return len(self._rows)
