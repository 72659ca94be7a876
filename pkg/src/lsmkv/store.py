"""LSM-хранилище поверх файлового слоя хоста.

Запись идет в MemTable; заполненная MemTable сбрасывается в SST уровня 0,
уровни уплотняются слиянием. Чтение: MemTable, кэш строк, затем разделение
запроса на кэшируемую часть и план удаленного обхода, который исполняет
функция sst_chain на таргете. Часть запросов (выборка) идет обычным путем и
обновляет кэш блоков.
"""
import heapq
import logging
import threading
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

from src.core.config import settings
from src.core.errors import FileDeletedError, LsmError, UnknownInodeError, VersionMismatchError
from src.functions.enums import FunctionId
from src.functions.sst_chain import (
    DELETED,
    FOUND,
    MAX_PLAN,
    SstPlanEntry,
    decode_result,
    encode_query,
)
from src.host.client import FileHandle, HostClient
from src.host.enums import AbortReason
from src.lsmkv.block import TOMBSTONE, BlockHandle, BlockReader
from src.lsmkv.bloom import BloomFilter
from src.lsmkv.cache import BlockCache, RowCache
from src.lsmkv.enums import CachePolicy, ReadMode
from src.lsmkv.memtable import MemTable, Value
from src.lsmkv.planner import (
    FoundValue,
    LocalAnswer,
    TraversalPlan,
    build_plan,
    candidate_files,
)
from src.lsmkv.sampling import SamplingPolicy
from src.lsmkv.schemas import LsmStats, Manifest, ManifestEntry
from src.lsmkv.sst import SstFile, SstWriter, iter_entries
from src.wire.messages import MAX_FDS, MAX_SCRATCH

logger = logging.getLogger(__name__)

MAX_KEY_BYTES = 0xFFFF
MAX_VALUE_BYTES = 0xFFFFFFFE

_MISMATCH_REASONS = {AbortReason.PRE_CHECK, AbortReason.POST_CHECK, AbortReason.VERSION_MISMATCH}
# полное чтение на хосте повторяется, пока набор файлов или их версии меняются
_FALLBACK_ATTEMPTS = 8


@dataclass(frozen=True, slots=True)
class _State:
    mem: MemTable
    imm: tuple[MemTable, ...]
    levels: tuple[tuple[SstFile, ...], ...]


def _answer_value(answer: LocalAnswer) -> Optional[bytes]:
    return answer.value if isinstance(answer, FoundValue) else None


def _tagged(rank: int, entries: Iterator[tuple[bytes, Value]]) -> Iterator[tuple[bytes, int, Value]]:
    for key, value in entries:
        yield key, rank, value


class LsmStore:
    def __init__(
        self,
        client: HostClient,
        mode: ReadMode = ReadMode.PUSHDOWN,
        *,
        name: str = "lsm",
        memtable_bytes: int = settings.MEMTABLE_BYTES,
        sst_target_bytes: int = settings.SST_TARGET_BYTES,
        data_block_bytes: int = settings.DATA_BLOCK_BYTES,
        l0_compaction_trigger: int = settings.L0_COMPACTION_TRIGGER,
        level_size_ratio: int = settings.LEVEL_SIZE_RATIO,
        l1_max_bytes: int = settings.L1_MAX_BYTES,
        bloom_bits_per_key: int = settings.BLOOM_BITS_PER_KEY,
        pin_index_blocks: bool = settings.PIN_INDEX_BLOCKS,
        cache_bytes: int = settings.CACHE_BYTES,
        sampling: Optional[SamplingPolicy] = None,
        cache_policy: CachePolicy = CachePolicy(settings.PUSHDOWN_CACHE_POLICY),
        row_cache_entries: int = 1 << 16,
        max_levels: int = 7,
    ):
        self.client = client
        self.extents = client.store
        self.mode = ReadMode(mode)
        self.name = name
        self.memtable_bytes = memtable_bytes
        self.sst_target_bytes = sst_target_bytes
        self.l0_compaction_trigger = l0_compaction_trigger
        self.level_size_ratio = level_size_ratio
        self.l1_max_bytes = l1_max_bytes
        self.pin_index_blocks = pin_index_blocks
        self.max_levels = max_levels
        self.cache_policy = CachePolicy(cache_policy)
        self.writer = SstWriter(self.extents.block_size, data_block_bytes, bloom_bits_per_key)
        self.cache = BlockCache(cache_bytes)
        self.rows = RowCache(row_cache_entries if self.cache_policy == CachePolicy.FINAL_ONLY else 0)
        self.sampling = sampling if sampling is not None else SamplingPolicy()
        self._write_lock = threading.RLock()
        self._stats_lock = threading.Lock()
        self._stats = LsmStats()
        self._file_seq = 0
        self._compact_pointer: dict[int, bytes] = {}
        self._state = _State(MemTable(), (), ((),))

    # запись

    def _check_sizes(self, key: bytes, value: Optional[bytes]) -> None:
        if not key or len(key) > MAX_KEY_BYTES:
            raise LsmError(f"Длина ключа {len(key)} вне [1, {MAX_KEY_BYTES}]")
        if value is not None and len(value) > MAX_VALUE_BYTES:
            raise LsmError(f"Значение {len(value)} байт слишком велико")

    def put(self, key: bytes, value: bytes) -> None:
        self._check_sizes(key, value)
        self._write(key, bytes(value))

    def delete(self, key: bytes) -> None:
        self._check_sizes(key, None)
        self._write(key, TOMBSTONE)

    def _write(self, key: bytes, value: Value) -> None:
        with self._write_lock:
            self._state.mem.put(key, value)
            self.rows.invalidate(key)
            if self._state.mem.approximate_bytes >= self.memtable_bytes:
                self._flush_locked()

    def flush(self) -> None:
        with self._write_lock:
            self._flush_locked()

    def _flush_locked(self) -> None:
        state = self._state
        mem = state.mem
        if not len(mem):
            return
        self._state = _State(MemTable(), (mem,) + state.imm, state.levels)
        sst = self._write_sst(mem.sorted_items(), level=0)
        state = self._state
        self._state = _State(
            state.mem,
            tuple(m for m in state.imm if m is not mem),
            ((sst,) + state.levels[0],) + state.levels[1:],
        )
        self._bump("flushes")
        logger.info(f"MemTable сброшена в L0: inode {sst.inode_id}, записей {sst.entries}")
        self._maybe_compact()

    def _write_sst(self, items: Iterable[tuple[bytes, Value]], level: int) -> SstFile:
        image = self.writer.build(items)
        self._file_seq += 1
        inode_id = self.extents.create_file(f"{self.name}-{self._file_seq:06d}.sst")
        self.extents.append(inode_id, image.data)
        bloom = BloomFilter.decode(image.filter_block) if image.filter_block else None
        if image.filter is not None:
            self.cache.pin(inode_id, image.filter.offset, image.filter_block)
        if self.pin_index_blocks:
            self.cache.pin(inode_id, image.index.offset, image.index_block)
        self.client.sync.kick()
        return SstFile(
            inode_id=inode_id,
            level=level,
            min_key=image.min_key,
            max_key=image.max_key,
            index=image.index,
            data_handles=image.data_handles,
            file_length=len(image.data),
            entries=image.entries,
            filter=image.filter,
            bloom=bloom,
            handle=self.client.open(inode_id),
        )

    def _write_run(self, items: Iterable[tuple[bytes, Value]], level: int) -> list[SstFile]:
        out: list[SstFile] = []
        batch: list[tuple[bytes, Value]] = []
        size = 0
        for key, value in items:
            batch.append((key, value))
            size += len(key) + (0 if value is TOMBSTONE else len(value)) + 6
            if size >= self.sst_target_bytes:
                out.append(self._write_sst(batch, level))
                batch, size = [], 0
        if batch:
            out.append(self._write_sst(batch, level))
        return out

    # уплотнение

    def _level_limit(self, level: int) -> int:
        return self.l1_max_bytes * self.level_size_ratio ** (level - 1)

    def _maybe_compact(self) -> None:
        while True:
            levels = self._state.levels
            if len(levels[0]) >= self.l0_compaction_trigger:
                self._compact(0)
                continue
            for level in range(1, min(len(levels), self.max_levels - 1)):
                if sum(f.size for f in levels[level]) > self._level_limit(level):
                    self._compact(level)
                    break
            else:
                return

    def _merge(self, sources: Sequence[SstFile], drop_tombstones: bool) -> Iterator[tuple[bytes, Value]]:
        """sources упорядочены от новых к старым; из дубликатов остается самая новая версия."""
        streams = []
        for rank, sst in enumerate(sources):
            data = self.extents.read(sst.inode_id, 0, sst.file_length)
            streams.append(_tagged(rank, iter_entries(data)))
        last = None
        for key, _, value in heapq.merge(*streams, key=lambda t: (t[0], t[1])):
            if key == last:
                continue
            last = key
            if value is TOMBSTONE:
                if not drop_tombstones:
                    yield key, TOMBSTONE
                continue
            yield bytes(key), bytes(value)

    def _compact(self, level: int) -> None:
        levels = [list(files) for files in self._state.levels]
        while len(levels) < level + 2:
            levels.append([])
        if level == 0:
            inputs = list(levels[0])
        else:
            # файлы уровня выбираются по кругу, начиная после последнего уплотненного ключа
            pointer = self._compact_pointer.get(level, b"")
            inputs = [next((f for f in levels[level] if f.min_key > pointer), levels[level][0])]
            self._compact_pointer[level] = inputs[0].max_key
        lo = min(f.min_key for f in inputs)
        hi = max(f.max_key for f in inputs)
        overlapping = [f for f in levels[level + 1] if f.overlaps(lo, hi)]
        bottom = all(not files for files in levels[level + 2:])
        outputs = self._write_run(self._merge(inputs + overlapping, drop_tombstones=bottom), level + 1)

        retired = set(map(id, inputs + overlapping))
        levels[level] = [f for f in levels[level] if id(f) not in retired]
        levels[level + 1] = sorted(
            [f for f in levels[level + 1] if id(f) not in retired] + outputs, key=lambda f: f.min_key
        )
        self._publish_levels(levels)
        self._retire(inputs + overlapping)
        self._bump("compactions")
        logger.info(
            f"Уплотнение L{level}→L{level + 1}: {len(inputs) + len(overlapping)} файлов в {len(outputs)}"
        )

    def compact_all(self) -> None:
        """Полное уплотнение всех уровней в один нижний; удаленные ключи отбрасываются."""
        with self._write_lock:
            self._flush_locked()
            levels = [list(files) for files in self._state.levels]
            sources = [f for files in levels for f in files]
            if not sources:
                return
            target = max(1, max(i for i, files in enumerate(levels) if files))
            outputs = self._write_run(self._merge(sources, drop_tombstones=True), target)
            new_levels: list[list[SstFile]] = [[] for _ in range(target + 1)]
            new_levels[target] = outputs
            self._publish_levels(new_levels)
            self._retire(sources)
            self._bump("compactions")
            logger.info(f"Полное уплотнение: {len(sources)} файлов в {len(outputs)} на L{target}")

    def _publish_levels(self, levels: list[list[SstFile]]) -> None:
        while len(levels) > 1 and not levels[-1]:
            levels.pop()
        for i, files in enumerate(levels):
            for f in files:
                f.level = i
        state = self._state
        self._state = _State(state.mem, state.imm, tuple(tuple(files) for files in levels))

    def _retire(self, files: Iterable[SstFile]) -> None:
        for sst in files:
            if sst.handle is not None:
                sst.handle.close()
            self.extents.delete_file(sst.inode_id)
            self.cache.drop_file(sst.inode_id)

    # чтение

    def _bump(self, counter: str, n: int = 1) -> None:
        with self._stats_lock:
            setattr(self._stats, counter, getattr(self._stats, counter) + n)

    def _open_all(self, files: Sequence[SstFile]) -> Optional[list[FileHandle]]:
        handles: list[FileHandle] = []
        try:
            for sst in files:
                handles.append(self.client.open(sst.inode_id))
        except (FileDeletedError, UnknownInodeError):
            for fh in handles:
                fh.close()
            return None
        return handles

    def get(self, key: bytes) -> Optional[bytes]:
        self._bump("gets")
        seq = self.rows.write_seq
        state = self._state
        for mem in (state.mem,) + state.imm:
            value = mem.get(key)
            if value is not None:
                self._bump("memtable_hits")
                return None if value is TOMBSTONE else value
        row = self.rows.get(key)
        if row is not None:
            self._bump("row_cache_hits")
            return None if row is TOMBSTONE else row

        for attempt in range(2):
            if attempt:
                self._bump("retries")
            candidates = candidate_files(self._state.levels, key)
            if not candidates:
                return None
            handles = self._open_all(candidates)
            if handles is None:
                continue
            try:
                if self.mode == ReadMode.BASELINE:
                    self._bump("remote_gets")
                    return self._read_path(key, candidates, handles)
                # выборка решается до обхода кэша, чтобы не менять порядок LRU
                if self.sampling.decide():
                    value = self._read_path(key, candidates, handles)
                    self._bump("sampled")
                    return value
                plan = build_plan(self.cache, candidates, key)
                if not isinstance(plan, TraversalPlan):
                    self._bump("local_answers")
                    return _answer_value(plan)
                self._bump("remote_gets")
                done, value, reason = self._pushdown(key, plan, candidates, handles, seq)
                if done:
                    return value
                if reason not in _MISMATCH_REASONS:
                    break
            except VersionMismatchError:
                self._bump("mismatches")
                continue
            finally:
                for fh in handles:
                    fh.close()
        return self._fallback(key)

    def _fallback(self, key: bytes) -> Optional[bytes]:
        for _ in range(_FALLBACK_ATTEMPTS):
            candidates = candidate_files(self._state.levels, key)
            handles = self._open_all(candidates)
            if handles is None:
                continue
            try:
                return self._read_path(key, candidates, handles)
            except VersionMismatchError:
                self._bump("mismatches")
            finally:
                for fh in handles:
                    fh.close()
        raise LsmError(f"Набор файлов для ключа {key!r} менялся во время каждой попытки чтения")

    def _pushdown(self, key: bytes, plan: TraversalPlan, candidates: Sequence[SstFile],
                  handles: Sequence[FileHandle], seq: int) -> tuple[bool, Optional[bytes], Optional[AbortReason]]:
        if len(plan.steps) > min(MAX_FDS, MAX_PLAN):
            return False, None, AbortReason.FUNCTION_FALLBACK
        by_file = {id(sst): fh for sst, fh in zip(candidates, handles)}
        files = [by_file[id(step.sst)] for step in plan.steps]
        entries = [SstPlanEntry(i, step.io.start_stage, step.io.offset, step.io.length)
                   for i, step in enumerate(plan.steps)]
        scratch = encode_query(key, entries)
        if len(scratch) > MAX_SCRATCH:
            self._bump("fallbacks")
            return False, None, AbortReason.FUNCTION_FALLBACK
        self._bump("pushdowns")
        result = self.client.read_pushdown(files, entries[0].offset, entries[0].length,
                                           FunctionId.SST_CHAIN, scratch)
        if result.aborted:
            if result.reason in _MISMATCH_REASONS:
                self._bump("mismatches")
            else:
                self._bump("fallbacks")
            logger.debug(f"Pushdown ключа {key!r} прерван: {result.reason.value}")
            return False, None, result.reason
        try:
            state, value = decode_result(result.value)
        except ValueError as e:
            logger.warning(f"Некорректный результат sst_chain для ключа {key!r}: {e}")
            self._bump("fallbacks")
            return False, None, AbortReason.FUNCTION_ERROR
        self._bump("pushdown_ok")
        if state == FOUND:
            answer: Optional[bytes] = value
        elif state == DELETED:
            answer = None
        else:
            answer = _answer_value(plan.default)
        if self.cache_policy == CachePolicy.FINAL_ONLY:
            self.rows.insert(key, answer if answer is not None else TOMBSTONE, seq)
        return True, answer, None

    def _block(self, sst: SstFile, fh: FileHandle, handle: BlockHandle, pin: bool) -> bytes:
        data = self.cache.get(sst.inode_id, handle.offset)
        if data is not None:
            return data
        data = self.client.read_remote(fh, handle.offset, handle.length)
        if pin:
            self.cache.pin(sst.inode_id, handle.offset, data)
        else:
            self.cache.insert(sst.inode_id, handle.offset, data)
        return data

    def _read_path(self, key: bytes, candidates: Sequence[SstFile], handles: Sequence[FileHandle]) -> Optional[bytes]:
        """Обычный путь чтения: блок за блоком, все прочитанные блоки попадают в кэш."""
        for sst, fh in zip(candidates, handles):
            if sst.bloom is not None and not sst.bloom.may_contain(key):
                continue
            index = self._block(sst, fh, sst.index, pin=self.pin_index_blocks)
            hit = BlockReader(index).seek(key)
            if hit is None:
                continue
            data = self._block(sst, fh, BlockHandle.decode(bytes(hit[1])), pin=False)
            value = BlockReader(data).get(key)
            if value is TOMBSTONE:
                return None
            if value is not None:
                return bytes(value)
        return None

    # служебное

    def levels(self) -> tuple[tuple[SstFile, ...], ...]:
        return self._state.levels

    def manifest(self) -> Manifest:
        return Manifest(files=[
            ManifestEntry(level=level, inode_id=f.inode_id, min_key=f.min_key.hex(), max_key=f.max_key.hex(),
                          entries=f.entries, file_length=f.file_length)
            for level, files in enumerate(self._state.levels) for f in files
        ])

    def file_entries(self, sst: SstFile) -> list[tuple[bytes, Value]]:
        data = self.extents.read(sst.inode_id, 0, sst.file_length)
        return [(bytes(k), v if v is TOMBSTONE else bytes(v)) for k, v in iter_entries(data)]

    def stats(self) -> LsmStats:
        with self._stats_lock:
            stats = self._stats.model_copy()
        stats.block_cache_hits = self.cache.counters.hits
        stats.block_cache_misses = self.cache.counters.misses
        return stats

    def reset_stats(self) -> None:
        with self._stats_lock:
            self._stats = LsmStats()
        self.cache.reset_counters()

    def close(self) -> None:
        with self._write_lock:
            for files in self._state.levels:
                for sst in files:
                    if sst.handle is not None:
                        sst.handle.close()
