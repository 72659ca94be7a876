from dataclasses import dataclass
from typing import Optional, Union

from src.wire.enums import Status

MAX_FDS = 16
MAX_SCRATCH = 64 * 1024
MAX_FRAME = 16 * 1024 * 1024


@dataclass(frozen=True, slots=True)
class FileRef:
    inode_id: int
    expected_version: int


@dataclass(frozen=True, slots=True)
class InitialRead:
    fd_index: int
    offset: int
    length: int


@dataclass(frozen=True, slots=True)
class ReadCapsule:
    request_id: int
    inode_id: int
    expected_version: int
    offset: int
    length: int


@dataclass(frozen=True, slots=True)
class ReadResponse:
    request_id: int
    status: Status
    data: bytes = b""


@dataclass(frozen=True, slots=True)
class PushdownCapsule:
    request_id: int
    function_id: int
    fds: tuple[FileRef, ...]
    initial_read: InitialRead
    scratch: bytes = b""

    @property
    def fd_count(self) -> int:
        return len(self.fds)


@dataclass(frozen=True, slots=True)
class PushdownResponse:
    request_id: int
    status: Status
    resubmission_count: int = 0
    device_reads: int = 0
    scratch: Optional[bytes] = None


Message = Union[ReadCapsule, ReadResponse, PushdownCapsule, PushdownResponse]
