import hashlib
import struct
from dataclasses import dataclass, field

from src.core.errors import AlignmentError, OutOfRangeError


@dataclass(frozen=True, slots=True)
class Extent:
    file_offset: int
    device_block: int
    length_blocks: int


@dataclass(frozen=True, slots=True)
class ExtentMap:
    """Неизменяемый снимок отображения файла на блоки устройства."""

    inode_id: int
    version: int
    extents: tuple[Extent, ...] = field(default_factory=tuple)
    file_length: int = 0

    def digest(self) -> str:
        h = hashlib.sha256()
        for e in self.extents:
            h.update(struct.pack("<QQI", e.file_offset, e.device_block, e.length_blocks))
        h.update(struct.pack("<Q", self.file_length))
        return h.hexdigest()

    def device_blocks(self) -> list[int]:
        return [e.device_block + i for e in self.extents for i in range(e.length_blocks)]


@dataclass(slots=True)
class InodeRef:
    inode_id: int
    refcount: int = 0


def lookup_extent(
    emap: ExtentMap, file_offset: int, length: int, block_size: int
) -> list[tuple[int, int]]:
    """Перевод диапазона файла в диапазоны блоков устройства.

    Возвращает список (device_block, length_blocks), покрывающий
    [file_offset, file_offset + length). Хвост последнего блока читается целиком.
    """
    if file_offset % block_size:
        raise AlignmentError(f"Смещение {file_offset} не выровнено по блоку {block_size}")
    if length <= 0:
        raise OutOfRangeError(f"Некорректная длина чтения: {length}")
    end = file_offset + length
    if file_offset >= emap.file_length or end > emap.file_length:
        raise OutOfRangeError(
            f"Диапазон [{file_offset}, {end}) вне файла inode {emap.inode_id} длиной {emap.file_length}"
        )

    first = file_offset // block_size
    last = (end + block_size - 1) // block_size
    ranges: list[tuple[int, int]] = []
    cursor = first
    for e in emap.extents:
        e_first = e.file_offset // block_size
        e_last = e_first + e.length_blocks
        if e_last <= cursor:
            continue
        if e_first > cursor:
            break
        take = min(e_last, last) - cursor
        ranges.append((e.device_block + (cursor - e_first), take))
        cursor += take
        if cursor >= last:
            break
    if cursor < last:
        raise OutOfRangeError(f"Блок {cursor} файла inode {emap.inode_id} не отображен")
    return ranges
