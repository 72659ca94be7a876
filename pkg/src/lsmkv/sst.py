"""Формат SST-файла (little-endian).

[блоки данных][блок фильтра][индексный блок][footer]

Каждый блок начинается с границы блока устройства и дополнен нулями до нее,
поэтому хост и таргет читают блок одной выровненной командой. Индексный блок
сопоставляет последний ключ каждого блока данных с его BlockHandle
(u64 offset, u32 length). Footer занимает последние 28 байт файла:
u64 index_offset, u32 index_length, u64 filter_offset, u32 filter_length, u32 magic;
filter_length = 0 означает, что фильтра нет.
"""
import struct
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Iterator, Optional

from src.lsmkv.block import BlockBuilder, BlockFormatError, BlockHandle, BlockReader
from src.lsmkv.bloom import BloomFilter
from src.lsmkv.memtable import Value

if TYPE_CHECKING:
    from src.host.client import FileHandle

FOOTER_MAGIC = 0x5353544B
FOOTER = struct.Struct("<QIQII")


def _pad(data: bytes, block_size: int) -> bytes:
    rem = len(data) % block_size
    return data + b"\0" * (block_size - rem) if rem else data


@dataclass(frozen=True, slots=True)
class SstImage:
    data: bytes
    index: BlockHandle
    index_block: bytes
    filter: Optional[BlockHandle]
    filter_block: Optional[bytes]
    data_handles: tuple[BlockHandle, ...]
    min_key: bytes
    max_key: bytes
    entries: int


class SstWriter:
    def __init__(self, block_size: int, data_block_bytes: int, bloom_bits_per_key: int = 0,
                 restart_interval: int = 16):
        self.block_size = block_size
        self.data_block_bytes = data_block_bytes
        self.bloom_bits_per_key = bloom_bits_per_key
        self.restart_interval = restart_interval

    def build(self, items: Iterable[tuple[bytes, Value]]) -> SstImage:
        out = bytearray()
        index = BlockBuilder(restart_interval=1)
        handles: list[BlockHandle] = []
        keys: list[bytes] = []
        block = BlockBuilder(self.restart_interval)

        def flush_block():
            nonlocal block
            raw = block.finish()
            handle = BlockHandle(len(out), len(raw))
            out.extend(_pad(raw, self.block_size))
            index.add(block.last_key, handle.encode())
            handles.append(handle)
            block = BlockBuilder(self.restart_interval)

        for key, value in items:
            if keys and key <= keys[-1]:
                raise BlockFormatError("Ключи SST должны строго возрастать")
            block.add(key, value)
            keys.append(key)
            if block.estimated_size() >= self.data_block_bytes:
                flush_block()
        if not block.empty():
            flush_block()
        if not keys:
            raise BlockFormatError("Пустой SST")

        filter_handle = filter_block = None
        if self.bloom_bits_per_key > 0:
            filter_block = BloomFilter.build(keys, self.bloom_bits_per_key).encode()
            filter_handle = BlockHandle(len(out), len(filter_block))
            out.extend(_pad(filter_block, self.block_size))

        index_block = index.finish()
        index_handle = BlockHandle(len(out), len(index_block))
        out.extend(index_block)
        footer = FOOTER.pack(index_handle.offset, index_handle.length,
                             filter_handle.offset if filter_handle else 0,
                             filter_handle.length if filter_handle else 0, FOOTER_MAGIC)
        # footer прижат к концу последнего блока файла
        room = -len(out) % self.block_size
        if room < FOOTER.size:
            room += self.block_size
        out.extend(b"\0" * (room - FOOTER.size) + footer)

        return SstImage(bytes(out), index_handle, index_block, filter_handle, filter_block,
                        tuple(handles), keys[0], keys[-1], len(keys))


def read_footer(data: bytes) -> tuple[BlockHandle, Optional[BlockHandle]]:
    if len(data) < FOOTER.size:
        raise BlockFormatError("Файл короче footer")
    index_off, index_len, filter_off, filter_len, magic = FOOTER.unpack_from(data, len(data) - FOOTER.size)
    if magic != FOOTER_MAGIC:
        raise BlockFormatError(f"Неверная сигнатура SST: {magic:#x}")
    return BlockHandle(index_off, index_len), (BlockHandle(filter_off, filter_len) if filter_len else None)


def iter_entries(data: bytes) -> Iterator[tuple[bytes, Value]]:
    """Все записи файла по порядку ключей."""
    index, _ = read_footer(data)
    for _, raw in BlockReader(data[index.offset:index.offset + index.length]):
        handle = BlockHandle.decode(bytes(raw))
        yield from BlockReader(data[handle.offset:handle.offset + handle.length])


@dataclass(eq=False)
class SstFile:
    inode_id: int
    level: int
    min_key: bytes
    max_key: bytes
    index: BlockHandle
    data_handles: tuple[BlockHandle, ...]
    file_length: int
    entries: int
    filter: Optional[BlockHandle] = None
    bloom: Optional[BloomFilter] = None
    handle: Optional["FileHandle"] = field(default=None, repr=False)

    def contains(self, key: bytes) -> bool:
        return self.min_key <= key <= self.max_key

    def overlaps(self, lo: bytes, hi: bytes) -> bool:
        return not (self.max_key < lo or hi < self.min_key)

    @property
    def size(self) -> int:
        return self.file_length
