"""Кадрирование и кодирование сообщений пути данных.

Кадр: [u32 total_len][u8 msg_type][payload], total_len = 1 + len(payload).
Все целые в little-endian. Полезная нагрузка:

READ          u64 request_id, u64 inode, u64 expected_version, u64 offset, u32 length
READ_RESP     u64 request_id, u8 status, u32 data_len, data
PUSHDOWN      u64 request_id, u32 function_id, u8 fd_count,
              fd_count × (u64 inode, u64 expected_version),
              u8 fd_index, u64 offset, u32 length, u32 scratch_len, scratch
PUSHDOWN_RESP u64 request_id, u8 status, u32 resubmission_count, u32 device_reads,
              u32 scratch_len, scratch (только для OK и FUNCTION_FALLBACK)
"""
import struct

from src.core.errors import (
    FrameTooLargeError,
    InvalidMessageError,
    TruncatedFrameError,
    UnknownMessageError,
)
from src.wire.enums import SCRATCH_STATUSES, MessageType, Status
from src.wire.messages import (
    MAX_FDS,
    MAX_FRAME,
    MAX_SCRATCH,
    FileRef,
    InitialRead,
    Message,
    PushdownCapsule,
    PushdownResponse,
    ReadCapsule,
    ReadResponse,
)

FRAME_HEADER = struct.Struct("<IB")
LENGTH_PREFIX = struct.Struct("<I")

_READ = struct.Struct("<QQQQI")
_READ_RESP = struct.Struct("<QBI")
_PUSHDOWN_HEAD = struct.Struct("<QIB")
_FD = struct.Struct("<QQ")
_INITIAL = struct.Struct("<BQI")
_U32 = struct.Struct("<I")
_PUSHDOWN_RESP = struct.Struct("<QBIII")


def _frame(msg_type: MessageType, payload: bytes) -> bytes:
    if len(payload) + 1 > MAX_FRAME:
        raise FrameTooLargeError(f"Кадр {len(payload) + 1} байт больше предела {MAX_FRAME}")
    return FRAME_HEADER.pack(len(payload) + 1, msg_type) + payload


def _validate_pushdown(msg: PushdownCapsule) -> None:
    if not 1 <= len(msg.fds) <= MAX_FDS:
        raise InvalidMessageError(f"Число дескрипторов {len(msg.fds)} вне [1, {MAX_FDS}]")
    if msg.initial_read.fd_index >= len(msg.fds):
        raise InvalidMessageError(f"fd_index {msg.initial_read.fd_index} >= fd_count {len(msg.fds)}")
    if len(msg.scratch) > MAX_SCRATCH:
        raise InvalidMessageError(f"Scratch {len(msg.scratch)} байт больше {MAX_SCRATCH}")


def _validate_response_scratch(status: Status, scratch) -> None:
    if status in SCRATCH_STATUSES:
        if scratch is None:
            raise InvalidMessageError(f"Статус {status.name} требует scratch-буфер")
        if len(scratch) > MAX_SCRATCH:
            raise InvalidMessageError(f"Scratch {len(scratch)} байт больше {MAX_SCRATCH}")
    elif scratch is not None:
        raise InvalidMessageError(f"Статус {status.name} не несет scratch-буфер")


def encode(msg: Message) -> bytes:
    try:
        if isinstance(msg, ReadCapsule):
            return _frame(MessageType.READ, _READ.pack(
                msg.request_id, msg.inode_id, msg.expected_version, msg.offset, msg.length))
        if isinstance(msg, ReadResponse):
            if msg.status != Status.OK and msg.data:
                raise InvalidMessageError("Данные допустимы только в ответе со статусом OK")
            return _frame(MessageType.READ_RESP,
                          _READ_RESP.pack(msg.request_id, msg.status, len(msg.data)) + msg.data)
        if isinstance(msg, PushdownCapsule):
            _validate_pushdown(msg)
            parts = [_PUSHDOWN_HEAD.pack(msg.request_id, msg.function_id, len(msg.fds))]
            parts.extend(_FD.pack(f.inode_id, f.expected_version) for f in msg.fds)
            r = msg.initial_read
            parts.append(_INITIAL.pack(r.fd_index, r.offset, r.length))
            parts.append(_U32.pack(len(msg.scratch)))
            parts.append(msg.scratch)
            return _frame(MessageType.PUSHDOWN, b"".join(parts))
        if isinstance(msg, PushdownResponse):
            _validate_response_scratch(msg.status, msg.scratch)
            scratch = msg.scratch or b""
            return _frame(MessageType.PUSHDOWN_RESP, _PUSHDOWN_RESP.pack(
                msg.request_id, msg.status, msg.resubmission_count, msg.device_reads,
                len(scratch)) + scratch)
    except struct.error as e:
        raise InvalidMessageError(f"Значение поля вне допустимого диапазона: {e}") from e
    raise InvalidMessageError(f"Неизвестный тип сообщения: {type(msg).__name__}")


class _Cursor:
    def __init__(self, buf: memoryview):
        self.buf = buf
        self.pos = 0

    def unpack(self, st: struct.Struct) -> tuple:
        if self.pos + st.size > len(self.buf):
            raise TruncatedFrameError("Полезная нагрузка кадра усечена")
        values = st.unpack_from(self.buf, self.pos)
        self.pos += st.size
        return values

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.buf):
            raise TruncatedFrameError(f"Заявлено {size} байт, в кадре осталось {len(self.buf) - self.pos}")
        data = bytes(self.buf[self.pos:self.pos + size])
        self.pos += size
        return data

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise InvalidMessageError(f"Лишние {len(self.buf) - self.pos} байт в конце кадра")


def _status(value: int) -> Status:
    try:
        return Status(value)
    except ValueError:
        raise InvalidMessageError(f"Неизвестный статус: {value}") from None


def frame_length(prefix: bytes) -> int:
    """Размер кадра по 4-байтному префиксу (без самого префикса), с проверкой предела."""
    if len(prefix) < LENGTH_PREFIX.size:
        raise TruncatedFrameError("Префикс длины кадра усечен")
    (total,) = LENGTH_PREFIX.unpack_from(prefix)
    if total < 1:
        raise InvalidMessageError("Кадр без типа сообщения")
    if total > MAX_FRAME:
        raise FrameTooLargeError(f"Заявлен кадр {total} байт, предел {MAX_FRAME}")
    return total


def decode(data: bytes) -> tuple[Message, int]:
    """Декодирование одного кадра с начала буфера; возвращает сообщение и число прочитанных байт."""
    total = frame_length(data)
    if len(data) < LENGTH_PREFIX.size + total:
        raise TruncatedFrameError(f"Заявлено {total} байт, доступно {len(data) - LENGTH_PREFIX.size}")
    view = memoryview(data)[LENGTH_PREFIX.size:LENGTH_PREFIX.size + total]
    msg_type = view[0]
    cur = _Cursor(view[1:])

    if msg_type == MessageType.READ:
        msg = ReadCapsule(*cur.unpack(_READ))
    elif msg_type == MessageType.READ_RESP:
        request_id, status, data_len = cur.unpack(_READ_RESP)
        status = _status(status)
        if status != Status.OK and data_len:
            raise InvalidMessageError("Данные в ответе с ошибкой")
        msg = ReadResponse(request_id, status, cur.take(data_len))
    elif msg_type == MessageType.PUSHDOWN:
        request_id, function_id, fd_count = cur.unpack(_PUSHDOWN_HEAD)
        if not 1 <= fd_count <= MAX_FDS:
            raise InvalidMessageError(f"Число дескрипторов {fd_count} вне [1, {MAX_FDS}]")
        fds = tuple(FileRef(*cur.unpack(_FD)) for _ in range(fd_count))
        initial = InitialRead(*cur.unpack(_INITIAL))
        if initial.fd_index >= fd_count:
            raise InvalidMessageError(f"fd_index {initial.fd_index} >= fd_count {fd_count}")
        (scratch_len,) = cur.unpack(_U32)
        if scratch_len > MAX_SCRATCH:
            raise InvalidMessageError(f"Scratch {scratch_len} байт больше {MAX_SCRATCH}")
        msg = PushdownCapsule(request_id, function_id, fds, initial, cur.take(scratch_len))
    elif msg_type == MessageType.PUSHDOWN_RESP:
        request_id, status, resubmissions, reads, scratch_len = cur.unpack(_PUSHDOWN_RESP)
        status = _status(status)
        if scratch_len > MAX_SCRATCH:
            raise InvalidMessageError(f"Scratch {scratch_len} байт больше {MAX_SCRATCH}")
        if status in SCRATCH_STATUSES:
            scratch = cur.take(scratch_len)
        elif scratch_len:
            raise InvalidMessageError(f"Статус {status.name} не несет scratch-буфер")
        else:
            scratch = None
        msg = PushdownResponse(request_id, status, resubmissions, reads, scratch)
    else:
        raise UnknownMessageError(f"Неизвестный тип сообщения: {msg_type:#04x}")

    cur.done()
    return msg, LENGTH_PREFIX.size + total


def decode_exact(data: bytes) -> Message:
    msg, consumed = decode(data)
    if consumed != len(data):
        raise InvalidMessageError(f"После кадра осталось {len(data) - consumed} байт")
    return msg
