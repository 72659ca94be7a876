from enum import IntEnum


class MessageType(IntEnum):
    READ = 0x01
    READ_RESP = 0x02
    PUSHDOWN = 0x03
    PUSHDOWN_RESP = 0x04


class Status(IntEnum):
    OK = 0
    VERSION_MISMATCH = 1
    FUNCTION_FALLBACK = 2
    FUNCTION_ERROR = 3
    IO_ERROR = 4
    LIMIT_EXCEEDED = 5


# Статусы, при которых ответ несет scratch-буфер
SCRATCH_STATUSES = frozenset({Status.OK, Status.FUNCTION_FALLBACK})
