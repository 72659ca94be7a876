import logging
import threading
from typing import Optional

from src.core.errors import MalformedRecordError
from src.extent.models import ExtentMap
from src.sync.models import SyncAck, SyncRecord

logger = logging.getLogger(__name__)


class ReplicaTable:
    """Реплика отображений inode на стороне таргета.

    Снимки неизменяемы и заменяются целиком, поэтому читатель всегда видит
    согласованную пару (version, extents).
    """

    def __init__(self, block_size: int):
        self.block_size = block_size
        self._lock = threading.Lock()
        self._maps: dict[int, ExtentMap] = {}

    def get(self, inode_id: int) -> Optional[ExtentMap]:
        with self._lock:
            return self._maps.get(inode_id)

    def version(self, inode_id: int) -> Optional[int]:
        emap = self.get(inode_id)
        return emap.version if emap else None

    def __len__(self) -> int:
        with self._lock:
            return len(self._maps)

    def _validate(self, record: SyncRecord) -> None:
        if record.version < 1:
            raise MalformedRecordError(f"Некорректная версия {record.version} для inode {record.inode_id}")
        offset = 0
        for e in record.extents:
            if e.length_blocks < 1:
                raise MalformedRecordError(f"Пустой экстент в записи inode {record.inode_id}")
            if e.file_offset != offset:
                raise MalformedRecordError(
                    f"Экстенты inode {record.inode_id} не покрывают файл без разрывов"
                )
            offset += e.length_blocks * self.block_size
        if offset != record.file_length:
            raise MalformedRecordError(
                f"Длина файла {record.file_length} не совпадает с экстентами ({offset}) inode {record.inode_id}"
            )

    def apply(self, record: SyncRecord) -> SyncAck:
        self._validate(record)
        with self._lock:
            current = self._maps.get(record.inode_id)
            if current is None or record.version > current.version:
                self._maps[record.inode_id] = record.to_map()
                applied = record.version
            else:
                applied = current.version
                logger.debug(
                    f"Запись inode {record.inode_id} v{record.version} устарела, реплика v{current.version}"
                )
        return SyncAck(record.inode_id, applied)

    def clear(self) -> None:
        with self._lock:
            self._maps.clear()
