"""Блоки SST (данные и индекс).

Записи: [u16 key_len][key][u32 val_len][val]; val_len = 0xFFFFFFFF означает удаленный
ключ без значения. Хвост блока: u32 смещения точек рестарта, затем u32 их число.
"""
import struct
from dataclasses import dataclass
from typing import Iterator, Optional

from src.core.errors import LsmError

TOMBSTONE_LEN = 0xFFFFFFFF

_KEY_LEN = struct.Struct("<H")
_VAL_LEN = struct.Struct("<I")
_U32 = struct.Struct("<I")
HANDLE = struct.Struct("<QI")


class BlockFormatError(LsmError):
    pass


class Tombstone:
    __slots__ = ()

    def __repr__(self) -> str:
        return "TOMBSTONE"


TOMBSTONE = Tombstone()


@dataclass(frozen=True, slots=True)
class BlockHandle:
    offset: int
    length: int

    def encode(self) -> bytes:
        return HANDLE.pack(self.offset, self.length)

    @classmethod
    def decode(cls, data: bytes) -> "BlockHandle":
        if len(data) != HANDLE.size:
            raise BlockFormatError(f"Некорректная длина ссылки на блок: {len(data)}")
        return cls(*HANDLE.unpack(data))


class BlockBuilder:
    def __init__(self, restart_interval: int = 16):
        self.restart_interval = restart_interval
        self._buf = bytearray()
        self._restarts: list[int] = []
        self._count = 0
        self.last_key: Optional[bytes] = None

    def add(self, key: bytes, value) -> None:
        if self._count % self.restart_interval == 0:
            self._restarts.append(len(self._buf))
        self._buf += _KEY_LEN.pack(len(key)) + key
        if value is TOMBSTONE:
            self._buf += _VAL_LEN.pack(TOMBSTONE_LEN)
        else:
            self._buf += _VAL_LEN.pack(len(value)) + value
        self._count += 1
        self.last_key = key

    def estimated_size(self) -> int:
        return len(self._buf) + 4 * (len(self._restarts) + 1)

    def empty(self) -> bool:
        return self._count == 0

    def finish(self) -> bytes:
        tail = b"".join(_U32.pack(r) for r in self._restarts) + _U32.pack(len(self._restarts))
        return bytes(self._buf) + tail


class BlockReader:
    """Разбор блока; tick вызывается на каждое сравнение ключей."""

    def __init__(self, data: bytes, tick=None):
        if len(data) < 4:
            raise BlockFormatError("Блок короче хвоста")
        (n,) = _U32.unpack_from(data, len(data) - 4)
        end = len(data) - 4 - 4 * n
        if n == 0 or end < 0:
            raise BlockFormatError(f"Некорректное число точек рестарта: {n}")
        self.data = data
        self.end = end
        self.restarts = struct.unpack_from(f"<{n}I", data, end)
        if any(r >= end for r in self.restarts):
            raise BlockFormatError("Точка рестарта вне области записей")
        self._tick = tick or (lambda n=1: None)

    def _entry(self, pos: int):
        if pos + 2 > self.end:
            raise BlockFormatError("Запись блока усечена")
        (klen,) = _KEY_LEN.unpack_from(self.data, pos)
        kpos = pos + 2
        vpos = kpos + klen + 4
        if vpos > self.end:
            raise BlockFormatError("Запись блока усечена")
        key = self.data[kpos:kpos + klen]
        (vlen,) = _VAL_LEN.unpack_from(self.data, kpos + klen)
        if vlen == TOMBSTONE_LEN:
            return key, TOMBSTONE, vpos
        if vpos + vlen > self.end:
            raise BlockFormatError("Значение выходит за границу блока")
        return key, self.data[vpos:vpos + vlen], vpos + vlen

    def __iter__(self) -> Iterator[tuple[bytes, object]]:
        pos = 0
        while pos < self.end:
            key, value, pos = self._entry(pos)
            yield key, value

    def seek(self, target: bytes):
        """Первая запись с ключом >= target, либо None."""
        lo, hi = 0, len(self.restarts) - 1
        # последняя точка рестарта с ключом < target
        start = 0
        while lo <= hi:
            mid = (lo + hi) // 2
            self._tick()
            key, _, _ = self._entry(self.restarts[mid])
            if key < target:
                start = mid
                lo = mid + 1
            else:
                hi = mid - 1
        pos = self.restarts[start]
        while pos < self.end:
            self._tick()
            key, value, pos = self._entry(pos)
            if key >= target:
                return key, value
        return None

    def get(self, target: bytes):
        """Значение ключа, TOMBSTONE или None, если ключа в блоке нет."""
        hit = self.seek(target)
        if hit is not None and hit[0] == target:
            return hit[1]
        return None
