"""Формат файла BPF-KV (little-endian).

[заголовок: один узел][внутренние узлы по уровням от корня][листья][лог]

Узел (node_size байт): u32 magic, u8 kind, u8 level, u16 count, u64 next_leaf,
затем count × (u64 key, u64 pointer). Во внутреннем узле pointer хранит смещение
дочернего узла, key равен минимальному ключу поддерева; в листе pointer хранит смещение
записи в логе, next_leaf хранит смещение соседнего листа справа (0, если его нет).

Лог: блоки по node_size байт, в каждом node_size // 72 записей (u64 key, 64 байта значения).
"""
import bisect
import struct
from dataclasses import dataclass, field

from src.core.errors import CorruptNodeError

FILE_MAGIC = 0x564B5042
NODE_MAGIC = 0x4E4B5042
LAYOUT_VERSION = 1

KEY_SIZE = 8
VALUE_SIZE = 64

FILE_HEADER = struct.Struct("<IHHHHQQQQQ")
NODE_HEADER = struct.Struct("<IBBHQ")
NODE_ENTRY = struct.Struct("<QQ")
LOG_RECORD = struct.Struct(f"<Q{VALUE_SIZE}s")

KIND_INTERNAL = 0
KIND_LEAF = 1


def max_fanout(node_size: int) -> int:
    return (node_size - NODE_HEADER.size) // NODE_ENTRY.size


def records_per_log_block(node_size: int) -> int:
    return node_size // LOG_RECORD.size


@dataclass(frozen=True, slots=True)
class FileHeader:
    depth: int
    fanout: int
    node_size: int
    n_keys: int
    root_offset: int
    leaves_offset: int
    log_offset: int
    log_blocks: int
    version: int = LAYOUT_VERSION

    def encode(self) -> bytes:
        raw = FILE_HEADER.pack(FILE_MAGIC, self.version, self.depth, self.fanout, self.node_size,
                               self.n_keys, self.root_offset, self.leaves_offset,
                               self.log_offset, self.log_blocks)
        return raw.ljust(self.node_size, b"\0")

    @classmethod
    def decode(cls, data: bytes) -> "FileHeader":
        if len(data) < FILE_HEADER.size:
            raise CorruptNodeError("Заголовок BPF-KV усечен")
        (magic, version, depth, fanout, node_size, n_keys, root, leaves,
         log_offset, log_blocks) = FILE_HEADER.unpack_from(data)
        if magic != FILE_MAGIC:
            raise CorruptNodeError(f"Неверная сигнатура файла BPF-KV: {magic:#x}")
        return cls(depth, fanout, node_size, n_keys, root, leaves, log_offset, log_blocks, version)


@dataclass(slots=True)
class Node:
    kind: int
    level: int
    keys: list[int] = field(default_factory=list)
    pointers: list[int] = field(default_factory=list)
    next_leaf: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.kind == KIND_LEAF

    def encode(self, node_size: int) -> bytes:
        parts = [NODE_HEADER.pack(NODE_MAGIC, self.kind, self.level, len(self.keys), self.next_leaf)]
        parts.extend(NODE_ENTRY.pack(k, p) for k, p in zip(self.keys, self.pointers))
        return b"".join(parts).ljust(node_size, b"\0")

    def child_for(self, key: int) -> int:
        """Дочерний узел, в поддереве которого может лежать key."""
        i = bisect.bisect_right(self.keys, key) - 1
        return self.pointers[max(i, 0)]

    def find(self, key: int) -> int | None:
        i = bisect.bisect_left(self.keys, key)
        if i < len(self.keys) and self.keys[i] == key:
            return self.pointers[i]
        return None


def decode_node(data: bytes) -> Node:
    if len(data) < NODE_HEADER.size:
        raise CorruptNodeError("Узел усечен")
    magic, kind, level, count, next_leaf = NODE_HEADER.unpack_from(data)
    if magic != NODE_MAGIC:
        raise CorruptNodeError(f"Неверная сигнатура узла: {magic:#x}")
    if kind not in (KIND_INTERNAL, KIND_LEAF):
        raise CorruptNodeError(f"Неизвестный тип узла: {kind}")
    if count == 0 or NODE_HEADER.size + count * NODE_ENTRY.size > len(data):
        raise CorruptNodeError(f"Некорректное число записей в узле: {count}")
    flat = struct.unpack_from(f"<{2 * count}Q", data, NODE_HEADER.size)
    keys = list(flat[0::2])
    if any(a >= b for a, b in zip(keys, keys[1:])):
        raise CorruptNodeError("Ключи узла не отсортированы")
    return Node(kind, level, keys, list(flat[1::2]), next_leaf)


def log_block_offset(pointer: int, node_size: int) -> int:
    return pointer - pointer % node_size


def read_log_record(block: bytes, pointer: int, node_size: int) -> tuple[int, bytes]:
    rel = pointer % node_size
    if rel + LOG_RECORD.size > len(block):
        raise CorruptNodeError(f"Запись лога по смещению {pointer} выходит за блок")
    return LOG_RECORD.unpack_from(block, rel)
