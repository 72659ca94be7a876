import logging
import threading
import time
from typing import Optional

from src.core.config import settings
from src.core.errors import SyncTransportError, UnknownInodeError
from src.extent.store import ExtentStore
from src.sync.channel import SyncChannel
from src.sync.models import SyncRecord

logger = logging.getLogger(__name__)


class SentVersionTable:
    """Последняя версия inode, подтвержденная таргетом."""

    def __init__(self):
        self._lock = threading.Lock()
        self._versions: dict[int, int] = {}

    def get(self, inode_id: int) -> Optional[int]:
        with self._lock:
            return self._versions.get(inode_id)

    def update(self, inode_id: int, version: int) -> None:
        with self._lock:
            if version > self._versions.get(inode_id, 0):
                self._versions[inode_id] = version

    def items(self) -> dict[int, int]:
        with self._lock:
            return dict(self._versions)


class ChangeQueue:
    """Очередь inode на синхронизацию; повторные уведомления схлопываются."""

    def __init__(self):
        self._cond = threading.Condition()
        self._pending: dict[int, None] = {}
        self._forced: set[int] = set()

    def push(self, inode_id: int, force: bool = False) -> None:
        with self._cond:
            self._pending[inode_id] = None
            if force:
                self._forced.add(inode_id)
            self._cond.notify()

    def take_all(self) -> tuple[list[int], set[int]]:
        with self._cond:
            batch, forced = list(self._pending), self._forced
            self._pending, self._forced = {}, set()
            return batch, forced

    def wait(self, timeout: float) -> bool:
        with self._cond:
            if not self._pending:
                self._cond.wait(timeout)
            return bool(self._pending)

    def wake(self) -> None:
        with self._cond:
            self._cond.notify_all()

    def __len__(self) -> int:
        with self._cond:
            return len(self._pending)

    def __contains__(self, inode_id: int) -> bool:
        with self._cond:
            return inode_id in self._pending


class MetadataSynchronizer:
    """Асинхронная репликация отображений inode с хоста на таргет.

    Подписывается на изменения ExtentStore, копит inode в очереди и
    отправляет полные списки экстентов по отдельному каналу. Путь данных
    никогда не ждет синхронизацию: проверка версий читает только таблицу
    подтвержденных версий.
    """

    def __init__(
        self,
        store: ExtentStore,
        channel: SyncChannel,
        poll_interval_ms: float = settings.SYNC_POLL_INTERVAL_MS,
    ):
        self.store = store
        self.channel = channel
        self.poll_interval = poll_interval_ms / 1000.0
        self.table = SentVersionTable()
        self.queue = ChangeQueue()
        self.records_sent = 0
        self._drain_lock = threading.Lock()
        self._idle = threading.Condition()
        self._stop = threading.Event()
        self._worker: Optional[threading.Thread] = None
        store.subscribe(self.notify_change)

    def notify_change(self, inode_id: int) -> None:
        self.queue.push(inode_id)

    def request_resync(self, inode_id: int) -> None:
        """Повторная отправка записи независимо от таблицы версий (например, после рестарта таргета)."""
        self.queue.push(inode_id, force=True)

    def drain_once(self, blocking: bool = True) -> int:
        if not self._drain_lock.acquire(blocking=blocking):
            return 0
        try:
            return self._drain_locked()
        finally:
            self._drain_lock.release()
            with self._idle:
                self._idle.notify_all()

    def _drain_locked(self) -> int:
        batch, forced = self.queue.take_all()
        sent = 0
        for idx, inode_id in enumerate(batch):
            try:
                emap = self.store.snapshot(inode_id)
            except UnknownInodeError:
                logger.warning(f"Синхронизация пропущена: inode {inode_id} не существует")
                continue
            acked = self.table.get(inode_id)
            if inode_id not in forced and acked is not None and emap.version <= acked:
                continue
            try:
                ack = self.channel.send(SyncRecord.from_map(emap))
            except (SyncTransportError, OSError) as e:
                logger.warning(f"Синхронизация прервана: {e}; в очереди осталось {len(batch) - idx}")
                for rest in batch[idx:]:
                    self.queue.push(rest, force=rest in forced)
                break
            self.table.update(inode_id, min(ack.version, emap.version))
            sent += 1
        self.records_sent += sent
        return sent

    def wait_idle(self, timeout: float) -> bool:
        """Ожидание, пока очередь не опустеет и текущая выгрузка не завершится."""
        deadline = time.monotonic() + timeout
        with self._idle:
            while len(self.queue) or self._drain_lock.locked():
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self._idle.wait(min(remaining, self.poll_interval or 0.001))
        return True

    def kick(self, timeout: float = 0.0) -> None:
        """Внеочередная синхронизация: будит фоновый поток или выгружает очередь сразу."""
        if self._worker is not None:
            self.queue.wake()
            if timeout:
                self.wait_idle(timeout)
        else:
            self.drain_once(blocking=False)

    @property
    def running(self) -> bool:
        return self._worker is not None

    def drain_until_idle(self, max_rounds: int = 100) -> int:
        total = 0
        for _ in range(max_rounds):
            if not len(self.queue):
                break
            total += self.drain_once()
        return total

    def _run(self) -> None:
        while not self._stop.is_set():
            if self.queue.wait(self.poll_interval):
                try:
                    self.drain_once()
                except Exception as e:
                    logger.error(f"Ошибка фонового синхронизатора: {e}")

    def start(self) -> None:
        if self._worker is not None:
            return
        self._stop.clear()
        self._worker = threading.Thread(target=self._run, name="metadata-sync", daemon=True)
        self._worker.start()
        logger.info("Фоновый синхронизатор метаданных запущен")

    def stop(self) -> None:
        if self._worker is None:
            return
        self._stop.set()
        self.queue.wake()
        self._worker.join()
        self._worker = None
        logger.info("Фоновый синхронизатор метаданных остановлен")
