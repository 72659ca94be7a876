import logging
import socket
import threading
from typing import Optional, Protocol

from src.core.config import settings
from src.core.errors import MalformedRecordError, SyncTransportError
from src.sync.codec import ACK, decode_ack, decode_record, encode_ack, encode_record
from src.sync.models import SyncAck, SyncRecord
from src.sync.replica import ReplicaTable

logger = logging.getLogger(__name__)


class SyncChannel(Protocol):
    def send(self, record: SyncRecord) -> SyncAck: ...

    def close(self) -> None: ...


class LoopbackSyncChannel:
    """Канал синхронизации в пределах процесса, с возможностью задержки и обрыва.

    Запись проходит через кодек, как по сети.
    """

    def __init__(self, replicas: ReplicaTable):
        self.replicas = replicas
        self.bytes_sent = 0
        self.records_sent = 0
        self._open = threading.Event()
        self._open.set()
        self._failures = 0
        self._lock = threading.Lock()

    def stall(self) -> None:
        self._open.clear()

    def resume(self) -> None:
        self._open.set()

    def fail_next(self, count: int = 1) -> None:
        with self._lock:
            self._failures += count

    def send(self, record: SyncRecord) -> SyncAck:
        with self._lock:
            if self._failures:
                self._failures -= 1
                raise SyncTransportError("Соединение синхронизации разорвано")
        self._open.wait()
        payload = encode_record(record)
        self.bytes_sent += len(payload)
        self.records_sent += 1
        ack = self.replicas.apply(decode_record(payload))
        return decode_ack(encode_ack(ack))

    def close(self) -> None:
        self._open.set()


class TcpSyncChannel:
    """Отдельное TCP-соединение для синхронизации метаданных."""

    def __init__(self, host: str = settings.TARGET_HOST, port: int = settings.SYNC_PORT,
                 timeout: float = settings.REQUEST_TIMEOUT_S):
        self.host = host
        self.port = port
        self.timeout = timeout
        self._sock: Optional[socket.socket] = None

    def _connect(self) -> socket.socket:
        if self._sock is None:
            try:
                self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
                self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            except OSError as e:
                raise SyncTransportError(f"Не удалось подключиться к {self.host}:{self.port}: {e}") from e
            logger.info(f"Канал синхронизации подключен к {self.host}:{self.port}")
        return self._sock

    def _recv_exact(self, sock: socket.socket, size: int) -> bytes:
        buf = bytearray()
        while len(buf) < size:
            chunk = sock.recv(size - len(buf))
            if not chunk:
                raise SyncTransportError("Таргет закрыл соединение синхронизации")
            buf.extend(chunk)
        return bytes(buf)

    def send(self, record: SyncRecord) -> SyncAck:
        sock = self._connect()
        try:
            sock.sendall(encode_record(record))
            return decode_ack(self._recv_exact(sock, ACK.size))
        except (OSError, SyncTransportError, MalformedRecordError) as e:
            self.close()
            raise SyncTransportError(f"Ошибка канала синхронизации: {e}") from e

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None
