"""Разделение запроса: спекулятивный проход по кэшу и план удаленного обхода.

cache_get никогда не выполняет ввод-вывод. build_plan вызывает его для всех
файлов-кандидатов сверху вниз и останавливается на первом уровне, где ответ
известен локально: более глубокие уровни затенены.
"""
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

from src.functions.enums import SstStage
from src.lsmkv.block import TOMBSTONE, BlockFormatError, BlockHandle, BlockReader
from src.lsmkv.cache import BlockCache
from src.lsmkv.sst import SstFile


@dataclass(frozen=True, slots=True)
class FoundValue:
    value: bytes


@dataclass(frozen=True, slots=True)
class FoundDeleted:
    pass


@dataclass(frozen=True, slots=True)
class FoundNothing:
    pass


@dataclass(frozen=True, slots=True)
class FilteredOut:
    pass


@dataclass(frozen=True, slots=True)
class NeedsIo:
    start_stage: SstStage
    offset: int
    length: int


CacheGetResult = Union[FoundValue, FoundDeleted, FoundNothing, FilteredOut, NeedsIo]
LocalAnswer = Union[FoundValue, FoundDeleted, FoundNothing]


def cache_get(cache: BlockCache, sst: SstFile, key: bytes) -> CacheGetResult:
    if sst.bloom is not None and not sst.bloom.may_contain(key):
        return FilteredOut()
    index = cache.get(sst.inode_id, sst.index.offset)
    if index is None:
        return NeedsIo(SstStage.INDEX_BLOCK, sst.index.offset, sst.index.length)
    try:
        hit = BlockReader(index).seek(key)
        if hit is None:
            return FoundNothing()
        handle = BlockHandle.decode(bytes(hit[1]))
        data = cache.get(sst.inode_id, handle.offset)
        if data is None:
            return NeedsIo(SstStage.DATA_BLOCK, handle.offset, handle.length)
        value = BlockReader(data).get(key)
    except BlockFormatError:
        # поврежденный кэш не должен давать ответ, читаем с устройства
        cache.evict(sst.inode_id, sst.index.offset)
        return NeedsIo(SstStage.INDEX_BLOCK, sst.index.offset, sst.index.length)
    if value is TOMBSTONE:
        return FoundDeleted()
    if value is None:
        return FoundNothing()
    return FoundValue(bytes(value))


@dataclass(frozen=True, slots=True)
class PlanStep:
    sst: SstFile
    io: NeedsIo


@dataclass(slots=True)
class TraversalPlan:
    """Неразрешенные файлы в порядке уровней и ответ на случай, если ни один не содержит ключа."""

    steps: list[PlanStep] = field(default_factory=list)
    default: LocalAnswer = field(default_factory=FoundNothing)

    def __len__(self) -> int:
        return len(self.steps)


def build_plan(cache: BlockCache, candidates: Sequence[SstFile], key: bytes) -> Union[LocalAnswer, TraversalPlan]:
    """candidates упорядочены от верхнего уровня к нижнему (L0 от новых к старым)."""
    plan = TraversalPlan()
    for sst in candidates:
        result = cache_get(cache, sst, key)
        if isinstance(result, (FilteredOut, FoundNothing)):
            continue
        if isinstance(result, NeedsIo):
            plan.steps.append(PlanStep(sst, result))
            continue
        plan.default = result
        break
    if not plan.steps:
        return plan.default
    return plan


def candidate_files(levels: Sequence[Sequence[SstFile]], key: bytes) -> list[SstFile]:
    out: list[SstFile] = []
    for level, files in enumerate(levels):
        if level == 0:
            out.extend(f for f in files if f.contains(key))
            continue
        hit = _find_in_level(files, key)
        if hit is not None:
            out.append(hit)
    return out


def _find_in_level(files: Sequence[SstFile], key: bytes) -> Optional[SstFile]:
    lo, hi = 0, len(files)
    while lo < hi:
        mid = (lo + hi) // 2
        if files[mid].max_key < key:
            lo = mid + 1
        else:
            hi = mid
    if lo < len(files) and files[lo].contains(key):
        return files[lo]
    return None
