"""Транспорты пути данных хоста.

Loopback прогоняет каждую капсулу через кодек и вызывает сервис таргета в
том же процессе; счетчики точные. TCP мультиплексирует запросы по
request_id поверх одного или нескольких соединений.
"""
import itertools
import logging
import socket
import threading
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

from src.core.config import settings
from src.core.errors import TransportError, WireError
from src.target.service import TargetService
from src.wire.codec import LENGTH_PREFIX, decode_exact, encode, frame_length
from src.wire.messages import Message

logger = logging.getLogger(__name__)

MessageHook = Callable[[Message], None]


@dataclass(frozen=True, slots=True)
class Exchange:
    response: Message
    bytes_sent: int
    bytes_received: int


@dataclass(slots=True)
class TransportCounters:
    round_trips: int = 0
    bytes_sent: int = 0
    bytes_received: int = 0


class Transport(Protocol):
    def exchange(self, msg: Message) -> Exchange: ...

    def close(self) -> None: ...


class _Counted:
    def __init__(self):
        self._counter_lock = threading.Lock()
        self.counters = TransportCounters()

    def _count(self, sent: int, received: int) -> None:
        with self._counter_lock:
            self.counters.round_trips += 1
            self.counters.bytes_sent += sent
            self.counters.bytes_received += received

    def reset_counters(self) -> TransportCounters:
        with self._counter_lock:
            old, self.counters = self.counters, TransportCounters()
        return old


class LoopbackTransport(_Counted):
    """Транспорт в пределах процесса.

    before_deliver вызывается до исполнения капсулы на таргете, before_reply:
    после исполнения, но до того, как ответ увидит хост. Через них тесты
    вклиниваются в полет запроса.
    """

    def __init__(
        self,
        service: TargetService,
        before_deliver: Optional[MessageHook] = None,
        before_reply: Optional[MessageHook] = None,
    ):
        super().__init__()
        self.service = service
        self.before_deliver = before_deliver
        self.before_reply = before_reply
        self._failures = 0
        self._fail_lock = threading.Lock()

    def fail_next(self, count: int = 1) -> None:
        with self._fail_lock:
            self._failures += count

    def exchange(self, msg: Message) -> Exchange:
        with self._fail_lock:
            if self._failures:
                self._failures -= 1
                raise TransportError("Соединение с таргетом разорвано")
        request = encode(msg)
        delivered = decode_exact(request)
        if self.before_deliver:
            self.before_deliver(delivered)
        response = encode(self.service.handle(delivered))
        if self.before_reply:
            self.before_reply(delivered)
        self._count(len(request), len(response))
        return Exchange(decode_exact(response), len(request), len(response))

    def close(self) -> None:
        pass


class _Connection:
    def __init__(self, host: str, port: int, timeout: float, on_message: Callable[[Message, int], None],
                 on_lost: Callable[["_Connection", Exception], None]):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as e:
            raise TransportError(f"Не удалось подключиться к {host}:{port}: {e}") from e
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.sock.settimeout(None)
        self.send_lock = threading.Lock()
        self._on_message = on_message
        self._on_lost = on_lost
        self.closed = False
        self._reader = threading.Thread(target=self._read_loop, name=f"dp-reader-{port}", daemon=True)
        self._reader.start()

    def _recv_exact(self, size: int) -> bytes:
        buf = bytearray()
        while len(buf) < size:
            chunk = self.sock.recv(size - len(buf))
            if not chunk:
                raise TransportError("Таргет закрыл соединение")
            buf.extend(chunk)
        return bytes(buf)

    def _read_loop(self) -> None:
        try:
            while True:
                prefix = self._recv_exact(LENGTH_PREFIX.size)
                body = self._recv_exact(frame_length(prefix))
                self._on_message(decode_exact(prefix + body), len(prefix) + len(body))
        except (OSError, TransportError, WireError) as e:
            if not self.closed:
                self._on_lost(self, e)

    def send(self, frame: bytes) -> None:
        with self.send_lock:
            self.sock.sendall(frame)

    def close(self) -> None:
        self.closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class TcpTransport(_Counted):
    """Потокобезопасный клиент пути данных; ответы сопоставляются по request_id."""

    def __init__(
        self,
        host: str = settings.TARGET_HOST,
        port: int = settings.TARGET_PORT,
        connections: int = 1,
        timeout: float = settings.REQUEST_TIMEOUT_S,
    ):
        super().__init__()
        self.timeout = timeout
        self._pending: dict[int, Future] = {}
        self._pending_lock = threading.Lock()
        self._conns = [_Connection(host, port, timeout, self._deliver, self._lost)
                       for _ in range(max(1, connections))]
        self._next = itertools.cycle(range(len(self._conns)))
        logger.info(f"Путь данных подключен к {host}:{port}, соединений: {len(self._conns)}")

    def _deliver(self, msg: Message, size: int) -> None:
        with self._pending_lock:
            future = self._pending.pop(msg.request_id, None)
        if future is None:
            logger.warning(f"Ответ на неизвестный запрос {msg.request_id}")
            return
        future.set_result((msg, size))

    def _lost(self, conn: _Connection, error: Exception) -> None:
        logger.error(f"Соединение с таргетом потеряно: {error}")
        with self._pending_lock:
            pending, self._pending = self._pending, {}
        for future in pending.values():
            future.set_exception(TransportError(f"Соединение потеряно: {error}"))

    def exchange(self, msg: Message) -> Exchange:
        frame = encode(msg)
        future: Future = Future()
        with self._pending_lock:
            if msg.request_id in self._pending:
                raise TransportError(f"Запрос {msg.request_id} уже в полете")
            self._pending[msg.request_id] = future
            conn = self._conns[next(self._next)]
        try:
            conn.send(frame)
            response, size = future.result(timeout=self.timeout)
        except FutureTimeout as e:
            raise TransportError(f"Нет ответа на запрос {msg.request_id} за {self.timeout} с") from e
        except OSError as e:
            raise TransportError(f"Ошибка отправки запроса {msg.request_id}: {e}") from e
        finally:
            with self._pending_lock:
                self._pending.pop(msg.request_id, None)
        self._count(len(frame), size)
        return Exchange(response, len(frame), size)

    def close(self) -> None:
        for conn in self._conns:
            conn.close()
