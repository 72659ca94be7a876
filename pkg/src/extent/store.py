import bisect
import logging
import random
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

from src.core.config import settings
from src.core.errors import (
    AlignmentError,
    DeviceFullError,
    DuplicateNameError,
    FileDeletedError,
    OutOfRangeError,
    UnknownInodeError,
)
from src.extent.device import BlockDevice
from src.extent.models import Extent, ExtentMap, InodeRef, lookup_extent

logger = logging.getLogger(__name__)

ChangeHook = Callable[[int], None]


@dataclass
class _Inode:
    inode_id: int
    name: str
    version: int = 1
    extents: list[Extent] = field(default_factory=list)
    file_length: int = 0
    refcount: int = 0
    deleted: bool = False


class _FreeSpace:
    """Свободные блоки как отсортированный список непересекающихся отрезков."""

    def __init__(self, capacity: int):
        self.starts: list[int] = [0]
        self.lengths: list[int] = [capacity]

    @property
    def total(self) -> int:
        return sum(self.lengths)

    def take(self, count: int, min_start: int = 0, contiguous: bool = True) -> list[tuple[int, int]]:
        for i, (start, length) in enumerate(zip(self.starts, self.lengths)):
            begin = max(start, min_start)
            avail = start + length - begin
            if avail >= count:
                self._cut(i, begin, count)
                return [(begin, count)]
        if contiguous:
            return []
        pieces: list[tuple[int, int]] = []
        need = count
        while need and self.starts:
            take = min(need, self.lengths[0])
            pieces.append((self.starts[0], take))
            self._cut(0, self.starts[0], take)
            need -= take
        return pieces

    def _cut(self, i: int, begin: int, count: int) -> None:
        start, length = self.starts[i], self.lengths[i]
        head = begin - start
        tail = start + length - (begin + count)
        del self.starts[i], self.lengths[i]
        if tail:
            self.starts.insert(i, begin + count)
            self.lengths.insert(i, tail)
        if head:
            self.starts.insert(i, start)
            self.lengths.insert(i, head)

    def release(self, block: int, count: int) -> None:
        i = bisect.bisect_left(self.starts, block)
        self.starts.insert(i, block)
        self.lengths.insert(i, count)
        # склейка с соседями
        if i + 1 < len(self.starts) and block + count == self.starts[i + 1]:
            self.lengths[i] += self.lengths[i + 1]
            del self.starts[i + 1], self.lengths[i + 1]
        if i > 0 and self.starts[i - 1] + self.lengths[i - 1] == block:
            self.lengths[i - 1] += self.lengths[i]
            del self.starts[i], self.lengths[i]

    def is_free(self, block: int) -> bool:
        i = bisect.bisect_right(self.starts, block) - 1
        return i >= 0 and block < self.starts[i] + self.lengths[i]


class ExtentStore:
    """Файловый слой хоста: файлы как списки экстентов с версионированием.

    Любое изменение экстентов (append, truncate, remap) увеличивает версию
    inode и вызывает зарегистрированные хуки, через которые синхронизатор
    метаданных узнает об изменениях.
    """

    def __init__(
        self,
        device: BlockDevice,
        fragment_probability: float = settings.FRAGMENT_PROBABILITY,
        seed: Optional[int] = None,
    ):
        self.device = device
        self.block_size = device.block_size
        self.fragment_probability = fragment_probability
        self._rng = random.Random(seed)
        self._lock = threading.RLock()
        self._free = _FreeSpace(device.capacity_blocks)
        self._inodes: dict[int, _Inode] = {}
        self._names: dict[str, int] = {}
        self._next_inode = 1
        self._hooks: list[ChangeHook] = []

    def subscribe(self, hook: ChangeHook) -> None:
        self._hooks.append(hook)

    def _notify(self, inode_id: int) -> None:
        for hook in self._hooks:
            try:
                hook(inode_id)
            except Exception as e:
                logger.error(f"Ошибка в обработчике изменений для inode {inode_id}: {e}")

    def _get(self, inode_id: int) -> _Inode:
        inode = self._inodes.get(inode_id)
        if inode is None:
            raise UnknownInodeError(inode_id)
        return inode

    def _get_live(self, inode_id: int) -> _Inode:
        inode = self._get(inode_id)
        if inode.deleted:
            raise FileDeletedError(inode_id)
        return inode

    def create_file(self, name: str) -> int:
        with self._lock:
            if name in self._names:
                raise DuplicateNameError(f"Файл {name!r} уже существует")
            inode_id = self._next_inode
            self._next_inode += 1
            self._inodes[inode_id] = _Inode(inode_id=inode_id, name=name)
            self._names[name] = inode_id
        logger.debug(f"Создан файл {name!r}, inode {inode_id}")
        self._notify(inode_id)
        return inode_id

    def lookup(self, name: str) -> int:
        with self._lock:
            inode_id = self._names.get(name)
        if inode_id is None:
            raise FileNotFoundError(name)
        return inode_id

    def list_inodes(self) -> list[int]:
        with self._lock:
            return [i.inode_id for i in self._inodes.values() if not i.deleted]

    def _allocate(self, count: int) -> list[tuple[int, int]]:
        if count > self._free.total:
            raise DeviceFullError(f"Нет места: нужно {count} блоков, свободно {self._free.total}")
        if count >= 2 and self.fragment_probability > 0 and self._rng.random() < self.fragment_probability:
            head = self._rng.randint(1, count - 1)
            first = self._free.take(head)
            if first:
                # оставляем зазор в один блок, чтобы куски не склеились в один экстент
                second = self._free.take(count - head, min_start=first[0][0] + head + 1)
                if second:
                    return first + second
                self._free.release(*first[0])
        pieces = self._free.take(count)
        if not pieces:
            pieces = self._free.take(count, contiguous=False)
        return pieces

    def append(self, inode_id: int, data: bytes) -> int:
        if len(data) % self.block_size:
            raise AlignmentError(f"Длина {len(data)} не кратна размеру блока {self.block_size}")
        if not data:
            with self._lock:
                return self._get_live(inode_id).file_length
        with self._lock:
            inode = self._get_live(inode_id)
            pieces = self._allocate(len(data) // self.block_size)
            pos = 0
            for block, count in pieces:
                chunk = data[pos:pos + count * self.block_size]
                self.device.write_blocks(block, chunk)
                self._extend(inode, block, count)
                pos += len(chunk)
            inode.version += 1
            length = inode.file_length
        self._notify(inode_id)
        return length

    def _extend(self, inode: _Inode, block: int, count: int) -> None:
        if inode.extents:
            last = inode.extents[-1]
            if last.device_block + last.length_blocks == block:
                inode.extents[-1] = Extent(last.file_offset, last.device_block, last.length_blocks + count)
                inode.file_length += count * self.block_size
                return
        inode.extents.append(Extent(inode.file_length, block, count))
        inode.file_length += count * self.block_size

    def truncate_and_remap(self, inode_id: int, new_length: Optional[int] = None) -> None:
        """Перенос содержимого файла на новые блоки и (опционально) усечение."""
        with self._lock:
            inode = self._get_live(inode_id)
            keep = inode.file_length if new_length is None else new_length
            if keep % self.block_size or keep < 0 or keep > inode.file_length:
                raise OutOfRangeError(f"Некорректная длина усечения {keep} для inode {inode_id}")
            old = inode.extents
            data = self._read_locked(inode, 0, keep) if keep else b""
            pieces = self._allocate(keep // self.block_size) if keep else []
            inode.extents = []
            inode.file_length = 0
            pos = 0
            for block, count in pieces:
                chunk = data[pos:pos + count * self.block_size]
                self.device.write_blocks(block, chunk)
                self._extend(inode, block, count)
                pos += len(chunk)
            for e in old:
                self._free.release(e.device_block, e.length_blocks)
            inode.version += 1
        logger.debug(f"Inode {inode_id} перенесен, длина {keep}")
        self._notify(inode_id)

    def delete_file(self, inode_id: int) -> None:
        with self._lock:
            inode = self._get_live(inode_id)
            inode.deleted = True
            self._names.pop(inode.name, None)
            if inode.refcount == 0:
                self._reclaim(inode)
            else:
                logger.debug(f"Освобождение inode {inode_id} отложено, ссылок: {inode.refcount}")

    def _reclaim(self, inode: _Inode) -> None:
        for e in inode.extents:
            self._free.release(e.device_block, e.length_blocks)
        del self._inodes[inode.inode_id]

    def acquire(self, inode_id: int) -> InodeRef:
        with self._lock:
            inode = self._get_live(inode_id)
            inode.refcount += 1
            return InodeRef(inode_id=inode_id, refcount=inode.refcount)

    def release(self, inode_id: int) -> None:
        with self._lock:
            inode = self._get(inode_id)
            inode.refcount = max(0, inode.refcount - 1)
            if inode.deleted and inode.refcount == 0:
                self._reclaim(inode)

    def refcount(self, inode_id: int) -> int:
        with self._lock:
            return self._get(inode_id).refcount

    def snapshot(self, inode_id: int) -> ExtentMap:
        with self._lock:
            inode = self._get(inode_id)
            return ExtentMap(
                inode_id=inode_id,
                version=inode.version,
                extents=tuple(inode.extents),
                file_length=inode.file_length,
            )

    def version(self, inode_id: int) -> int:
        with self._lock:
            return self._get(inode_id).version

    def file_length(self, inode_id: int) -> int:
        with self._lock:
            return self._get(inode_id).file_length

    def _read_locked(self, inode: _Inode, offset: int, length: int) -> bytes:
        emap = ExtentMap(inode.inode_id, inode.version, tuple(inode.extents), inode.file_length)
        ranges = lookup_extent(emap, offset, length, self.block_size)
        return self.device.read_ranges(ranges)[:length]

    def read(self, inode_id: int, offset: int, length: int) -> bytes:
        with self._lock:
            return self._read_locked(self._get(inode_id), offset, length)

    def owned_blocks(self) -> dict[int, int]:
        """Владелец каждого занятого блока; для проверок аллокатора."""
        owners: dict[int, int] = {}
        with self._lock:
            for inode in self._inodes.values():
                for e in inode.extents:
                    for b in range(e.device_block, e.device_block + e.length_blocks):
                        if b in owners:
                            raise AssertionError(f"Блок {b} принадлежит inode {owners[b]} и {inode.inode_id}")
                        owners[b] = inode.inode_id
        return owners

    def is_free(self, block: int) -> bool:
        with self._lock:
            return self._free.is_free(block)
