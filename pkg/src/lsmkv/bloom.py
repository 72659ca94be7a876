import hashlib
import math
import struct
from typing import Iterable

from src.lsmkv.block import BlockFormatError

_HEADER = struct.Struct("<BI")
_HALVES = struct.Struct("<QQ")


def _hashes(key: bytes) -> tuple[int, int]:
    h1, h2 = _HALVES.unpack(hashlib.blake2b(key, digest_size=16).digest())
    return h1, h2 | 1


class BloomFilter:
    """Фильтр Блума одного SST; k позиций по схеме двойного хеширования.

    Формат блока: u8 k, u32 число бит, затем битовый массив.
    """

    def __init__(self, bits: bytearray, nbits: int, k: int):
        self.bits = bits
        self.nbits = nbits
        self.k = k

    @classmethod
    def build(cls, keys: Iterable[bytes], bits_per_key: int) -> "BloomFilter":
        keys = list(keys)
        nbits = max(64, len(keys) * bits_per_key)
        k = max(1, min(30, round(bits_per_key * math.log(2))))
        bf = cls(bytearray((nbits + 7) // 8), nbits, k)
        for key in keys:
            bf.add(key)
        return bf

    def _positions(self, key: bytes):
        h1, h2 = _hashes(key)
        for i in range(self.k):
            yield (h1 + i * h2) % self.nbits

    def add(self, key: bytes) -> None:
        for pos in self._positions(key):
            self.bits[pos >> 3] |= 1 << (pos & 7)

    def may_contain(self, key: bytes) -> bool:
        return all(self.bits[pos >> 3] & (1 << (pos & 7)) for pos in self._positions(key))

    def encode(self) -> bytes:
        return _HEADER.pack(self.k, self.nbits) + bytes(self.bits)

    @classmethod
    def decode(cls, data: bytes) -> "BloomFilter":
        if len(data) < _HEADER.size:
            raise BlockFormatError("Блок фильтра усечен")
        k, nbits = _HEADER.unpack_from(data)
        size = (nbits + 7) // 8
        if k == 0 or nbits == 0 or len(data) < _HEADER.size + size:
            raise BlockFormatError("Некорректный блок фильтра")
        return cls(bytearray(data[_HEADER.size:_HEADER.size + size]), nbits, k)
