"""Точечный поиск в BPF-KV.

Scratch (v1): u16 magic, u8 layout_version, u8 state, u16 node_size, u64 key, u64 log_ptr;
при state=FOUND следом 64 байта значения.
"""
import struct
from dataclasses import dataclass
from typing import Optional

from src.bpfkv.layout import VALUE_SIZE, decode_node, log_block_offset, read_log_record
from src.core.errors import CorruptNodeError
from src.functions.base import Done, Fallback, Resubmit, StepContext, StepOutcome, StorageFunction
from src.functions.enums import FallbackReason, FunctionId

MAGIC = 0xB7A1
LAYOUT_VERSION = 1
HEADER = struct.Struct("<HBBHQQ")

DESCEND = 0
LOG = 1
FOUND = 2
NOT_FOUND = 3


@dataclass(slots=True)
class LookupScratch:
    state: int
    node_size: int
    key: int
    log_ptr: int = 0
    value: Optional[bytes] = None

    def encode(self) -> bytes:
        raw = HEADER.pack(MAGIC, LAYOUT_VERSION, self.state, self.node_size, self.key, self.log_ptr)
        return raw + (self.value or b"")

    @classmethod
    def decode(cls, data: bytes) -> Optional["LookupScratch"]:
        if len(data) < HEADER.size:
            return None
        magic, version, state, node_size, key, log_ptr = HEADER.unpack_from(data)
        if magic != MAGIC or version != LAYOUT_VERSION:
            return None
        value = bytes(data[HEADER.size:HEADER.size + VALUE_SIZE]) if state == FOUND else None
        return cls(state, node_size, key, log_ptr, value)


def encode_query(key: int, node_size: int, log_ptr: Optional[int] = None) -> bytes:
    """Запрос начинается со спуска по узлам или, если лист уже разобран на хосте, с чтения лога."""
    if log_ptr is None:
        return LookupScratch(DESCEND, node_size, key).encode()
    return LookupScratch(LOG, node_size, key, log_ptr).encode()


def decode_result(data: bytes) -> tuple[bool, Optional[bytes]]:
    s = LookupScratch.decode(data)
    if s is None or s.state not in (FOUND, NOT_FOUND):
        raise ValueError("Scratch не содержит завершенного результата поиска")
    return s.state == FOUND, s.value


class BTreeLookup(StorageFunction):
    function_id = FunctionId.BTREE_LOOKUP
    name = "btree_lookup"

    def step(self, block: bytes, scratch: bytearray, ctx: StepContext) -> StepOutcome:
        s = LookupScratch.decode(scratch)
        if s is None:
            return Fallback(FallbackReason.BAD_LAYOUT)
        if len(block) < s.node_size:
            return Fallback(FallbackReason.SPLIT_BLOCK)

        if s.state == DESCEND:
            try:
                node = decode_node(block)
            except CorruptNodeError:
                return Fallback(FallbackReason.BAD_NODE)
            ctx.tick(len(node.keys))
            if not node.is_leaf:
                return Resubmit(0, node.child_for(s.key), s.node_size)
            ptr = node.find(s.key)
            if ptr is None:
                s.state = NOT_FOUND
                scratch[:] = s.encode()
                return Done(HEADER.size)
            s.state, s.log_ptr = LOG, ptr
            scratch[:] = s.encode()
            return Resubmit(0, log_block_offset(ptr, s.node_size), s.node_size)

        if s.state == LOG:
            try:
                key, value = read_log_record(block, s.log_ptr, s.node_size)
            except CorruptNodeError:
                return Fallback(FallbackReason.BAD_NODE)
            if key != s.key:
                return Fallback(FallbackReason.BAD_NODE)
            s.state, s.value = FOUND, value
            scratch[:] = s.encode()
            return Done(HEADER.size + VALUE_SIZE)

        return Fallback(FallbackReason.BAD_LAYOUT)
