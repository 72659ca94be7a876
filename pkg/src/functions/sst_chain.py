"""Разбор цепочки SST по плану обхода.

Scratch (v1): u16 magic, u8 layout_version, u8 state, u8 plan_count, u8 cursor, u8 stage,
u16 key_len, u32 cur_len, key, plan_count × (u8 fd_index, u8 stage, u64 offset, u32 length);
при state=FOUND следом u32 val_len и значение.
"""
import struct
from dataclasses import dataclass, field
from typing import Optional

from src.functions.base import Done, Fallback, Resubmit, StepContext, StepOutcome, StorageFunction
from src.functions.enums import FallbackReason, FunctionId, SstStage
from src.lsmkv.block import TOMBSTONE, BlockFormatError, BlockHandle, BlockReader

MAGIC = 0x55A7
LAYOUT_VERSION = 1
HEADER = struct.Struct("<HBBBBBHI")
PLAN_ENTRY = struct.Struct("<BBQI")
VALUE_LEN = struct.Struct("<I")

MAX_PLAN = 255

SEARCHING = 0
FOUND = 1
DELETED = 2
EXHAUSTED = 3


@dataclass(frozen=True, slots=True)
class SstPlanEntry:
    fd_index: int
    start_stage: SstStage
    offset: int
    length: int


@dataclass(slots=True)
class ChainScratch:
    state: int
    key: bytes
    plan: list[SstPlanEntry]
    cursor: int = 0
    stage: int = SstStage.INDEX_BLOCK
    cur_len: int = 0
    value: Optional[bytes] = None

    def encode(self) -> bytes:
        parts = [HEADER.pack(MAGIC, LAYOUT_VERSION, self.state, len(self.plan), self.cursor,
                             self.stage, len(self.key), self.cur_len), self.key]
        parts.extend(PLAN_ENTRY.pack(e.fd_index, e.start_stage, e.offset, e.length) for e in self.plan)
        if self.state == FOUND:
            parts.append(VALUE_LEN.pack(len(self.value)))
            parts.append(self.value)
        return b"".join(parts)

    @classmethod
    def decode(cls, data: bytes) -> Optional["ChainScratch"]:
        if len(data) < HEADER.size:
            return None
        magic, version, state, count, cursor, stage, key_len, cur_len = HEADER.unpack_from(data)
        if magic != MAGIC or version != LAYOUT_VERSION or count == 0 or cursor >= count:
            return None
        pos = HEADER.size
        key = bytes(data[pos:pos + key_len])
        pos += key_len
        if len(data) < pos + count * PLAN_ENTRY.size:
            return None
        plan = []
        for _ in range(count):
            fd, st, off, length = PLAN_ENTRY.unpack_from(data, pos)
            if st not in (SstStage.INDEX_BLOCK, SstStage.DATA_BLOCK):
                return None
            plan.append(SstPlanEntry(fd, SstStage(st), off, length))
            pos += PLAN_ENTRY.size
        value = None
        if state == FOUND:
            if len(data) < pos + VALUE_LEN.size:
                return None
            (vlen,) = VALUE_LEN.unpack_from(data, pos)
            value = bytes(data[pos + VALUE_LEN.size:pos + VALUE_LEN.size + vlen])
        return cls(state, key, plan, cursor, stage, cur_len, value)


def encode_query(key: bytes, plan: list[SstPlanEntry]) -> bytes:
    if not plan or len(plan) > MAX_PLAN:
        raise ValueError(f"План обхода должен содержать от 1 до {MAX_PLAN} записей")
    first = plan[0]
    return ChainScratch(SEARCHING, key, list(plan), 0, first.start_stage, first.length).encode()


def decode_result(data: bytes) -> tuple[int, Optional[bytes]]:
    """(state, value): FOUND со значением, DELETED или EXHAUSTED."""
    s = ChainScratch.decode(data)
    if s is None or s.state == SEARCHING:
        raise ValueError("Scratch не содержит завершенного результата обхода")
    return s.state, s.value


class SstChain(StorageFunction):
    function_id = FunctionId.SST_CHAIN
    name = "sst_chain"

    def step(self, block: bytes, scratch: bytearray, ctx: StepContext) -> StepOutcome:
        s = ChainScratch.decode(scratch)
        if s is None or s.state != SEARCHING:
            return Fallback(FallbackReason.BAD_LAYOUT)
        # блок, разрезанный между экстентами, приходит не целиком
        if len(block) < s.cur_len:
            return Fallback(FallbackReason.SPLIT_BLOCK)
        entry = s.plan[s.cursor]
        try:
            reader = BlockReader(bytes(block[:s.cur_len]), tick=ctx.tick)
            if s.stage == SstStage.INDEX_BLOCK:
                hit = reader.seek(s.key)
                if hit is not None:
                    handle = BlockHandle.decode(hit[1])
                    s.stage, s.cur_len = SstStage.DATA_BLOCK, handle.length
                    scratch[:] = s.encode()
                    return Resubmit(entry.fd_index, handle.offset, handle.length)
            else:
                value = reader.get(s.key)
                if value is TOMBSTONE:
                    s.state = DELETED
                    scratch[:] = s.encode()
                    return Done(len(scratch))
                if value is not None:
                    s.state, s.value = FOUND, bytes(value)
                    scratch[:] = s.encode()
                    return Done(len(scratch))
        except BlockFormatError:
            return Fallback(FallbackReason.PARSE_ERROR)

        # ключа в этом файле нет: следующий файл плана
        s.cursor += 1
        if s.cursor >= len(s.plan):
            s.cursor -= 1
            s.state = EXHAUSTED
            scratch[:] = s.encode()
            return Done(len(scratch))
        nxt = s.plan[s.cursor]
        s.stage, s.cur_len = nxt.start_stage, nxt.length
        scratch[:] = s.encode()
        return Resubmit(nxt.fd_index, nxt.offset, nxt.length)
