"""Диапазонный поиск в BPF-KV: спуск к первому листу, затем обход соседних листов.

Scratch (v2): заголовок HEADER, область ожидающих записей (ключ, указатель в лог)
емкостью max_fanout(node_size), затем накопленные пары (u64 key, 64 байта значения).
В завершенном результате (DONE / PARTIAL) область ожидающих записей удалена и пары
идут сразу за заголовком. Продолжение после PARTIAL делается новым запросом от last_key.

max_reads ограничивает число чтений устройства за один вызов: как только страница
собрала хотя бы одну пару и бюджет исчерпан, результат закрывается как PARTIAL.
Лог перемешан, поэтому почти каждая пара стоит отдельного чтения блока лога.
"""
import struct
from dataclasses import dataclass, field
from typing import Optional

from src.bpfkv.layout import decode_node, log_block_offset, max_fanout, read_log_record
from src.core.errors import CorruptNodeError
from src.functions.base import Done, Fallback, Resubmit, StepContext, StepOutcome, StorageFunction
from src.functions.enums import FallbackReason, FunctionId
from src.wire.messages import MAX_SCRATCH

MAGIC = 0xB7A2
LAYOUT_VERSION = 2
HEADER = struct.Struct("<HBBHHQQQQHBBHH")
PENDING = struct.Struct("<QQ")
PAIR = struct.Struct("<Q64s")

DESCEND = 0
LOG = 1
DONE = 2
PARTIAL = 3

HAS_LAST = 0x01
STOP = 0x02

MAX_KEY = (1 << 64) - 1
MAX_READS = 0xFFFF


def pending_area(node_size: int) -> int:
    return max_fanout(node_size) * PENDING.size


def max_results_for(node_size: int, scratch_limit: int = MAX_SCRATCH) -> int:
    return (scratch_limit - HEADER.size - pending_area(node_size)) // PAIR.size


@dataclass(slots=True)
class RangeScratch:
    state: int
    node_size: int
    max_results: int
    lo: int
    hi: int
    last_key: int = 0
    leaf_next: int = 0
    flags: int = 0
    max_reads: int = 0
    reads: int = 0
    pending: list[tuple[int, int]] = field(default_factory=list)
    pairs: list[tuple[int, bytes]] = field(default_factory=list)

    @property
    def finished(self) -> bool:
        return self.state in (DONE, PARTIAL)

    def encode(self) -> bytes:
        head = HEADER.pack(MAGIC, LAYOUT_VERSION, self.state, self.node_size, self.max_results,
                           self.lo, self.hi, self.last_key, self.leaf_next, len(self.pairs),
                           0 if self.finished else len(self.pending), self.flags,
                           self.max_reads, self.reads)
        body = b"".join(PAIR.pack(k, v) for k, v in self.pairs)
        if self.finished:
            return head + body
        pend = b"".join(PENDING.pack(k, p) for k, p in self.pending)
        return head + pend.ljust(pending_area(self.node_size), b"\0") + body

    @classmethod
    def decode(cls, data: bytes) -> Optional["RangeScratch"]:
        if len(data) < HEADER.size:
            return None
        (magic, version, state, node_size, max_results, lo, hi, last_key, leaf_next,
         count, pcount, flags, max_reads, reads) = HEADER.unpack_from(data)
        if magic != MAGIC or version != LAYOUT_VERSION:
            return None
        s = cls(state, node_size, max_results, lo, hi, last_key, leaf_next, flags, max_reads, reads)
        pos = HEADER.size
        if not s.finished:
            if pcount > max_fanout(node_size) or len(data) < pos + pending_area(node_size):
                return None
            s.pending = [PENDING.unpack_from(data, pos + i * PENDING.size) for i in range(pcount)]
            pos += pending_area(node_size)
        if len(data) < pos + count * PAIR.size:
            return None
        s.pairs = [PAIR.unpack_from(data, pos + i * PAIR.size) for i in range(count)]
        return s


def encode_query(lo: int, hi: int, node_size: int, max_results: int,
                 after_key: Optional[int] = None, max_reads: int = 0) -> bytes:
    """max_reads = 0 снимает ограничение на число чтений."""
    if not 0 <= max_reads <= MAX_READS:
        raise ValueError(f"max_reads {max_reads} вне [0, {MAX_READS}]")
    s = RangeScratch(DESCEND, node_size, max(1, max_results), lo, hi, max_reads=max_reads)
    if after_key is not None:
        s.last_key, s.flags = after_key, HAS_LAST
    return s.encode()


def decode_result(data: bytes) -> tuple[list[tuple[int, bytes]], Optional[int]]:
    """Пары результата и ключ продолжения (None, если диапазон исчерпан)."""
    s = RangeScratch.decode(data)
    if s is None or not s.finished:
        raise ValueError("Scratch не содержит завершенного результата диапазона")
    token = s.last_key if s.state == PARTIAL and s.flags & HAS_LAST else None
    return [(k, bytes(v)) for k, v in s.pairs], token


class BTreeRange(StorageFunction):
    function_id = FunctionId.BTREE_RANGE
    name = "btree_range"

    def step(self, block: bytes, scratch: bytearray, ctx: StepContext) -> StepOutcome:
        s = RangeScratch.decode(scratch)
        if s is None or s.finished:
            return Fallback(FallbackReason.BAD_LAYOUT)
        if len(block) < s.node_size:
            return Fallback(FallbackReason.SPLIT_BLOCK)
        s.reads = min(s.reads + 1, MAX_READS)
        try:
            if s.state == DESCEND:
                outcome = self._on_node(block, s, ctx)
            else:
                outcome = self._on_log(block, s, ctx)
        except CorruptNodeError:
            return Fallback(FallbackReason.BAD_NODE)
        scratch[:] = s.encode()
        if isinstance(outcome, Done):
            return Done(len(scratch))
        return outcome

    def _start_key(self, s: RangeScratch) -> Optional[int]:
        if not s.flags & HAS_LAST:
            return s.lo
        if s.last_key == MAX_KEY:
            return None
        return max(s.lo, s.last_key + 1)

    def _on_node(self, block: bytes, s: RangeScratch, ctx: StepContext) -> StepOutcome:
        node = decode_node(block)
        ctx.tick(len(node.keys))
        start = self._start_key(s)
        if not node.is_leaf:
            return Resubmit(0, node.child_for(start if start is not None else s.hi), s.node_size)
        if start is None or start > s.hi:
            s.flags |= STOP
        else:
            for key, ptr in zip(node.keys, node.pointers):
                if key < start:
                    continue
                if key > s.hi:
                    s.flags |= STOP
                    break
                s.pending.append((key, ptr))
        s.leaf_next = node.next_leaf
        return self._advance(s)

    def _on_log(self, block: bytes, s: RangeScratch, ctx: StepContext) -> StepOutcome:
        if not s.pending:
            raise CorruptNodeError("Чтение лога без ожидающих записей")
        current = log_block_offset(s.pending[0][1], s.node_size)
        while s.pending and log_block_offset(s.pending[0][1], s.node_size) == current:
            ctx.tick()
            if len(s.pairs) >= s.max_results:
                return self._finish(s, PARTIAL)
            key, ptr = s.pending[0]
            rec_key, value = read_log_record(block, ptr, s.node_size)
            if rec_key != key:
                raise CorruptNodeError(f"Ключ лога {rec_key} не совпадает с листом {key}")
            s.pairs.append((key, value))
            s.last_key = key
            s.flags |= HAS_LAST
            s.pending.pop(0)
        return self._advance(s)

    def _out_of_budget(self, s: RangeScratch) -> bool:
        # бюджет действует только после первой пары страницы
        return bool(s.max_reads) and bool(s.pairs) and s.reads >= s.max_reads

    def _advance(self, s: RangeScratch) -> StepOutcome:
        if s.pending:
            if len(s.pairs) >= s.max_results or self._out_of_budget(s):
                return self._finish(s, PARTIAL)
            s.state = LOG
            return Resubmit(0, log_block_offset(s.pending[0][1], s.node_size), s.node_size)
        if s.flags & STOP or s.leaf_next == 0:
            return self._finish(s, DONE)
        if len(s.pairs) >= s.max_results or self._out_of_budget(s):
            return self._finish(s, PARTIAL)
        s.state = DESCEND
        return Resubmit(0, s.leaf_next, s.node_size)

    def _finish(self, s: RangeScratch, state: int) -> Done:
        s.state = state
        s.pending = []
        return Done(0)
