"""Драйвер хоста: обычные удаленные чтения и pushdown-чтения с проверками версий.

Перед отправкой (проверка до отправки) версия каждого файла запроса должна
совпадать с последней версией, подтвержденной таргетом. После ответа
(проверка после завершения) версии сравниваются с записанными при отправке;
при расхождении scratch-буфер обнуляется, а запрос прерывается.
"""
import itertools
import logging
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

from src.core.config import settings
from src.core.errors import (
    HostError,
    InvalidMessageError,
    OutOfRangeError,
    RemoteIOError,
    TransportError,
    VersionMismatchError,
)
from src.extent.models import InodeRef
from src.extent.store import ExtentStore
from src.functions.base import Done, Fallback, Resubmit, StepContext
from src.host.enums import AbortReason, Outcome
from src.host.transport import Exchange, Transport
from src.sync.host import MetadataSynchronizer
from src.target.registry import FunctionRegistry, default_registry
from src.target.schemas import ExecutionLimits
from src.wire.enums import Status
from src.wire.messages import (
    MAX_FDS,
    MAX_SCRATCH,
    FileRef,
    InitialRead,
    PushdownCapsule,
    PushdownResponse,
    ReadCapsule,
    ReadResponse,
)

logger = logging.getLogger(__name__)

ResultDecoder = Callable[[bytes], Optional[Any]]

_STATUS_REASONS = {
    Status.VERSION_MISMATCH: AbortReason.VERSION_MISMATCH,
    Status.FUNCTION_FALLBACK: AbortReason.FUNCTION_FALLBACK,
    Status.FUNCTION_ERROR: AbortReason.FUNCTION_ERROR,
    Status.IO_ERROR: AbortReason.IO_ERROR,
    Status.LIMIT_EXCEEDED: AbortReason.LIMIT_EXCEEDED,
}


@dataclass(slots=True)
class RequestStats:
    round_trips: int = 0
    device_reads: int = 0
    resubmissions: int = 0
    bytes_sent: int = 0
    bytes_received: int = 0

    def add_exchange(self, exchange: Exchange) -> None:
        self.round_trips += 1
        self.bytes_sent += exchange.bytes_sent
        self.bytes_received += exchange.bytes_received

    def merge(self, other: "RequestStats") -> None:
        self.round_trips += other.round_trips
        self.device_reads += other.device_reads
        self.resubmissions += other.resubmissions
        self.bytes_sent += other.bytes_sent
        self.bytes_received += other.bytes_received


@dataclass(slots=True)
class PushdownResult:
    outcome: Outcome
    value: Any = None
    reason: Optional[AbortReason] = None
    scratch: bytearray = field(default_factory=bytearray)
    stats: RequestStats = field(default_factory=RequestStats)

    @property
    def found(self) -> bool:
        return self.outcome == Outcome.FOUND

    @property
    def aborted(self) -> bool:
        return self.outcome == Outcome.ABORTED


class FileHandle:
    """Открытый файл хоста; пока он открыт, блоки inode не освобождаются."""

    def __init__(self, store: ExtentStore, inode_id: int):
        self.store = store
        self.inode_id = inode_id
        self.ref: Optional[InodeRef] = store.acquire(inode_id)

    @property
    def closed(self) -> bool:
        return self.ref is None

    def close(self) -> None:
        if self.ref is not None:
            self.store.release(self.inode_id)
            self.ref = None

    def __enter__(self) -> "FileHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __repr__(self) -> str:
        return f"FileHandle(inode={self.inode_id}, closed={self.closed})"


class HostClient:
    def __init__(
        self,
        store: ExtentStore,
        synchronizer: MetadataSynchronizer,
        transport: Transport,
        registry: Optional[FunctionRegistry] = None,
        limits: Optional[ExecutionLimits] = None,
        read_retries: int = settings.READ_RETRIES,
        resync_wait_s: float = 0.1,
    ):
        self.store = store
        self.sync = synchronizer
        self.transport = transport
        self.registry = registry or default_registry()
        self.limits = limits or ExecutionLimits()
        self.read_retries = read_retries
        self.resync_wait_s = resync_wait_s
        self._ids = itertools.count(1)
        self._id_lock = threading.Lock()
        self._stats_lock = threading.Lock()
        self.totals = RequestStats()
        self.aborts: Counter = Counter()
        self.pushdowns = 0
        self.remote_reads = 0
        self.read_mismatches = 0

    def _next_id(self) -> int:
        with self._id_lock:
            return next(self._ids)

    def open(self, inode_id: int) -> FileHandle:
        return FileHandle(self.store, inode_id)

    def _record(self, stats: RequestStats, reason: Optional[AbortReason] = None) -> None:
        with self._stats_lock:
            self.totals.merge(stats)
            if reason is not None:
                self.aborts[reason] += 1

    def reset_stats(self) -> None:
        with self._stats_lock:
            self.totals = RequestStats()
            self.aborts = Counter()
            self.pushdowns = 0
            self.remote_reads = 0
            self.read_mismatches = 0

    def pre_submit_check(self, files: Sequence[FileHandle]) -> Optional[list[int]]:
        """Версии файлов для запроса или None, если хоть один файл не синхронизирован."""
        versions = []
        for fh in files:
            current = self.store.version(fh.inode_id)
            sent = self.sync.table.get(fh.inode_id)
            if sent is None or sent != current:
                logger.debug(f"Проверка до отправки: inode {fh.inode_id} v{current}, отправлено {sent}")
                return None
            versions.append(current)
        return versions

    def post_complete_check(self, files: Sequence[FileHandle], recorded: Sequence[int],
                            scratch: bytearray) -> bool:
        for fh, version in zip(files, recorded):
            if self.store.version(fh.inode_id) != version:
                logger.debug(f"Проверка после завершения: inode {fh.inode_id} изменился в полете")
                scratch[:] = bytes(len(scratch))
                return False
        return True

    def _abort(self, reason: AbortReason, scratch: bytearray, stats: RequestStats) -> PushdownResult:
        self._record(stats, reason)
        return PushdownResult(Outcome.ABORTED, reason=reason, scratch=scratch, stats=stats)

    def _complete(self, scratch: bytearray, decode: Optional[ResultDecoder],
                  stats: RequestStats) -> PushdownResult:
        raw = bytes(scratch)
        value = decode(raw) if decode else raw
        self._record(stats)
        outcome = Outcome.NOT_FOUND if value is None else Outcome.FOUND
        return PushdownResult(outcome, value=value, scratch=scratch, stats=stats)

    def read_pushdown(
        self,
        files: Sequence[FileHandle],
        first_offset: int,
        first_length: int,
        function_id: int,
        scratch_in: bytes,
        decode: Optional[ResultDecoder] = None,
        fd_index: int = 0,
    ) -> PushdownResult:
        """Цепочка чтений на таргете за один сетевой обмен.

        decode превращает итоговый scratch в значение; None означает, что
        ключ не найден.
        """
        if not 1 <= len(files) <= MAX_FDS:
            raise InvalidMessageError(f"Число файлов {len(files)} вне [1, {MAX_FDS}]")
        if len(scratch_in) > MAX_SCRATCH:
            raise InvalidMessageError(f"Scratch {len(scratch_in)} байт больше {MAX_SCRATCH}")
        stats = RequestStats()
        with self._stats_lock:
            self.pushdowns += 1

        versions = self.pre_submit_check(files)
        if versions is None:
            self.sync.kick()
            return self._abort(AbortReason.PRE_CHECK, bytearray(scratch_in), stats)

        capsule = PushdownCapsule(
            request_id=self._next_id(),
            function_id=function_id,
            fds=tuple(FileRef(fh.inode_id, v) for fh, v in zip(files, versions)),
            initial_read=InitialRead(fd_index, first_offset, first_length),
            scratch=bytes(scratch_in),
        )
        try:
            exchange = self.transport.exchange(capsule)
        except TransportError as e:
            logger.warning(f"Pushdown {capsule.request_id} не доставлен: {e}")
            return self._abort(AbortReason.TRANSPORT, bytearray(scratch_in), stats)
        stats.add_exchange(exchange)
        response = exchange.response
        if not isinstance(response, PushdownResponse) or response.request_id != capsule.request_id:
            logger.error(f"Неожиданный ответ на pushdown {capsule.request_id}: {response}")
            return self._abort(AbortReason.TRANSPORT, bytearray(scratch_in), stats)
        stats.device_reads += response.device_reads
        stats.resubmissions += response.resubmission_count

        scratch = bytearray(response.scratch or b"")
        if not self.post_complete_check(files, versions, scratch):
            return self._abort(AbortReason.POST_CHECK, scratch, stats)
        if response.status == Status.OK:
            return self._complete(scratch, decode, stats)
        if response.status == Status.VERSION_MISMATCH:
            # таргет отстал от таблицы отправленных версий, например после рестарта
            logger.warning(f"Таргет отклонил pushdown {capsule.request_id}: устаревшая реплика")
            for fh in files:
                self.sync.request_resync(fh.inode_id)
            self.sync.kick()
        return self._abort(_STATUS_REASONS[response.status], scratch, stats)

    def _resync(self, inode_id: int, force: bool) -> None:
        if force:
            self.sync.request_resync(inode_id)
        else:
            self.sync.notify_change(inode_id)
        self.sync.kick(timeout=self.resync_wait_s)

    def read_remote(self, handle: FileHandle, offset: int, length: int,
                    stats: Optional[RequestStats] = None) -> bytes:
        """Одно удаленное чтение; при несовпадении версий синхронизирует inode и повторяет."""
        local = RequestStats()
        try:
            return self._read_remote(handle, offset, length, local)
        finally:
            self._record(local)
            if stats is not None:
                stats.merge(local)

    def _read_remote(self, handle: FileHandle, offset: int, length: int, stats: RequestStats) -> bytes:
        if length <= 0 or offset < 0 or offset + length > self.store.file_length(handle.inode_id):
            raise OutOfRangeError(f"Чтение [{offset}, {offset + length}) вне файла inode {handle.inode_id}")
        for attempt in range(self.read_retries + 1):
            version = self.store.version(handle.inode_id)
            if self.sync.table.get(handle.inode_id) != version:
                self._resync(handle.inode_id, force=False)
                continue
            capsule = ReadCapsule(self._next_id(), handle.inode_id, version, offset, length)
            exchange = self.transport.exchange(capsule)
            stats.add_exchange(exchange)
            response = exchange.response
            if not isinstance(response, ReadResponse) or response.request_id != capsule.request_id:
                raise TransportError(f"Неожиданный ответ на чтение {capsule.request_id}")
            with self._stats_lock:
                self.remote_reads += 1
            if response.status == Status.OK:
                if self.store.version(handle.inode_id) == version:
                    return response.data
                logger.debug(f"Inode {handle.inode_id} изменился во время чтения, повтор")
                continue
            if response.status == Status.VERSION_MISMATCH:
                with self._stats_lock:
                    self.read_mismatches += 1
                logger.warning(f"Несовпадение версии inode {handle.inode_id} v{version}, попытка {attempt + 1}")
                self._resync(handle.inode_id, force=True)
                continue
            raise RemoteIOError(f"Ошибка чтения inode {handle.inode_id} [{offset}, {offset + length}): "
                                f"{response.status.name}")
        raise VersionMismatchError(
            f"Inode {handle.inode_id}: версия не согласована после {self.read_retries + 1} попыток"
        )

    def fallback_read_path(
        self,
        files: Sequence[FileHandle],
        first_offset: int,
        first_length: int,
        function_id: int,
        scratch_in: bytes,
        decode: Optional[ResultDecoder] = None,
        fd_index: int = 0,
    ) -> PushdownResult:
        """Тот же запрос, исполненный на хосте: каждый зависимый блок читается отдельным обменом."""
        fn = self.registry.get(function_id)
        ctx = StepContext(self.limits.max_steps_per_call)
        stats = RequestStats()
        scratch = bytearray(scratch_in)
        fd, offset, length = fd_index, first_offset, first_length
        resubmissions = 0
        while True:
            if fd >= len(files):
                raise HostError(f"Функция {function_id} запросила файл {fd} из {len(files)}")
            block = self.read_remote(files[fd], offset, length, stats)
            stats.device_reads += 1
            outcome = fn.step(block, scratch, ctx)
            if isinstance(outcome, Done):
                del scratch[outcome.result_length:]
                return self._local_result(scratch, decode, stats)
            if isinstance(outcome, Fallback):
                raise HostError(f"Функция {function_id} не смогла разобрать данные: {outcome.reason.name}")
            if isinstance(outcome, Resubmit):
                if resubmissions >= self.limits.max_resubmissions:
                    raise HostError(f"Функция {function_id} превысила {self.limits.max_resubmissions} чтений")
                resubmissions += 1
                stats.resubmissions += 1
                fd, offset, length = outcome.fd_index, outcome.offset, outcome.length

    def _local_result(self, scratch: bytearray, decode: Optional[ResultDecoder],
                      stats: RequestStats) -> PushdownResult:
        raw = bytes(scratch)
        value = decode(raw) if decode else raw
        outcome = Outcome.NOT_FOUND if value is None else Outcome.FOUND
        return PushdownResult(outcome, value=value, scratch=scratch, stats=stats)

    def read_with_fallback(self, files: Sequence[FileHandle], first_offset: int, first_length: int,
                           function_id: int, scratch_in: bytes,
                           decode: Optional[ResultDecoder] = None) -> PushdownResult:
        result = self.read_pushdown(files, first_offset, first_length, function_id, scratch_in, decode)
        if not result.aborted:
            return result
        local = self.fallback_read_path(files, first_offset, first_length, function_id, scratch_in, decode)
        local.stats.merge(result.stats)
        local.reason = result.reason
        return local
