import random
import struct

import pytest

from src.core.errors import (
    FrameTooLargeError,
    InvalidMessageError,
    TruncatedFrameError,
    UnknownMessageError,
    WireError,
)
from src.wire.codec import decode, decode_exact, encode, frame_length
from src.wire.enums import Status
from src.wire.messages import (
    MAX_FDS,
    MAX_FRAME,
    MAX_SCRATCH,
    FileRef,
    InitialRead,
    PushdownCapsule,
    PushdownResponse,
    ReadCapsule,
    ReadResponse,
)


def pushdown(fds: int = 1, scratch: bytes = b"", fd_index: int = 0) -> PushdownCapsule:
    return PushdownCapsule(
        request_id=9,
        function_id=1,
        fds=tuple(FileRef(i + 1, 2) for i in range(fds)),
        initial_read=InitialRead(fd_index, 4096, 512),
        scratch=scratch,
    )


MESSAGES = [
    ReadCapsule(1, 7, 3, 1024, 512),
    ReadResponse(1, Status.OK, b"\xaa" * 512),
    ReadResponse(2, Status.VERSION_MISMATCH),
    pushdown(),
    pushdown(fds=MAX_FDS, scratch=b"s" * 100, fd_index=MAX_FDS - 1),
    PushdownResponse(9, Status.OK, 6, 7, b"result"),
    PushdownResponse(9, Status.OK, 0, 1, b""),
    PushdownResponse(9, Status.FUNCTION_FALLBACK, 1, 2, b"\x00" * 16),
    PushdownResponse(9, Status.IO_ERROR, 2, 3),
]


@pytest.mark.parametrize("msg", MESSAGES, ids=lambda m: type(m).__name__)
def test_round_trip(msg):
    frame = encode(msg)
    assert decode_exact(frame) == msg
    assert frame_length(frame) == len(frame) - 4


def test_read_capsule_layout():
    frame = encode(ReadCapsule(0x0102, 5, 3, 4096, 512))
    assert frame[:5] == struct.pack("<IB", 37, 0x01)
    assert frame[5:13] == (0x0102).to_bytes(8, "little")
    assert len(frame) == 41


def test_decode_reports_consumed_bytes():
    first, second = encode(MESSAGES[0]), encode(MESSAGES[2])
    msg, consumed = decode(first + second)
    assert msg == MESSAGES[0]
    assert consumed == len(first)
    assert decode((first + second)[consumed:])[0] == MESSAGES[2]


def test_truncated_frames():
    frame = encode(pushdown(scratch=b"x" * 32))
    for cut in (0, 3, 5, len(frame) - 1):
        with pytest.raises(TruncatedFrameError):
            decode(frame[:cut])


def test_frame_too_large():
    with pytest.raises(FrameTooLargeError):
        decode(struct.pack("<IB", MAX_FRAME + 1, 0x01))


def test_unknown_type():
    with pytest.raises(UnknownMessageError):
        decode(struct.pack("<IB", 1, 0x7F))


def test_unknown_status():
    frame = bytearray(encode(PushdownResponse(1, Status.IO_ERROR)))
    frame[13] = 0x33
    with pytest.raises(InvalidMessageError):
        decode_exact(bytes(frame))


@pytest.mark.parametrize(
    "msg",
    [
        pushdown(fds=0),
        pushdown(fds=MAX_FDS + 1),
        pushdown(fds=2, fd_index=2),
        pushdown(scratch=b"x" * (MAX_SCRATCH + 1)),
        PushdownResponse(1, Status.OK, 0, 0, None),
        PushdownResponse(1, Status.VERSION_MISMATCH, 0, 0, b"leak"),
        ReadResponse(1, Status.IO_ERROR, b"data"),
        ReadCapsule(-1, 1, 1, 0, 512),
    ],
    ids=["no-fds", "too-many-fds", "bad-fd-index", "big-scratch", "ok-without-scratch",
         "error-with-scratch", "error-with-data", "negative-field"],
)
def test_encode_rejects_invalid(msg):
    with pytest.raises(InvalidMessageError):
        encode(msg)


def test_decode_rejects_fd_count_out_of_range():
    frame = bytearray(encode(pushdown()))
    frame[17] = MAX_FDS + 1
    with pytest.raises(InvalidMessageError):
        decode_exact(bytes(frame))


def test_trailing_bytes_rejected():
    with pytest.raises(InvalidMessageError):
        decode_exact(encode(MESSAGES[0]) + b"\x00")


def u64(rng: random.Random) -> int:
    return rng.choice([0, 1, 2 ** 64 - 1, rng.getrandbits(64)])


def random_message(rng: random.Random):
    kind = rng.randrange(4)
    if kind == 0:
        return ReadCapsule(u64(rng), u64(rng), u64(rng), u64(rng), rng.getrandbits(32))
    if kind == 1:
        status = rng.choice(list(Status))
        data = rng.randbytes(rng.randrange(600)) if status == Status.OK else b""
        return ReadResponse(u64(rng), status, data)
    if kind == 2:
        fds = tuple(FileRef(u64(rng), u64(rng)) for _ in range(rng.randint(1, MAX_FDS)))
        initial = InitialRead(rng.randrange(len(fds)), u64(rng), rng.getrandbits(32))
        scratch = rng.randbytes(rng.choice([0, rng.randrange(2000), MAX_SCRATCH]))
        return PushdownCapsule(u64(rng), rng.getrandbits(32), fds, initial, scratch)
    status = rng.choice(list(Status))
    scratch = None
    if status in (Status.OK, Status.FUNCTION_FALLBACK):
        scratch = rng.randbytes(rng.choice([0, rng.randrange(2000)]))
    return PushdownResponse(u64(rng), status, rng.getrandbits(32), rng.getrandbits(32), scratch)


def check_round_trips(count: int, seed: int) -> None:
    rng = random.Random(seed)
    for _ in range(count):
        msg = random_message(rng)
        frame = encode(msg)
        assert decode_exact(frame) == msg
        assert frame_length(frame) == len(frame) - 4


def test_generated_round_trips():
    check_round_trips(1000, seed=7)


@pytest.mark.slow
def test_generated_round_trips_long():
    check_round_trips(100_000, seed=8)


def random_frame(rng: random.Random, frames: list[bytes]) -> bytes:
    if rng.random() < 0.5:
        base = bytearray(rng.choice(frames))
        for _ in range(rng.randint(1, 4)):
            base[rng.randrange(len(base))] = rng.randrange(256)
        if rng.random() < 0.3:
            base = base[:rng.randrange(len(base))]
        return bytes(base)
    body = rng.randbytes(rng.randrange(1, 200))
    length = len(body) if rng.random() < 0.8 else rng.getrandbits(32)
    return struct.pack("<I", length) + body


def check_random_frames(count: int, seed: int) -> None:
    rng = random.Random(seed)
    frames = [encode(m) for m in MESSAGES]
    for _ in range(count):
        frame = random_frame(rng, frames)
        try:
            msg, consumed = decode(frame)
        except WireError:
            continue
        assert encode(msg) == frame[:consumed]


def test_random_frames_never_crash():
    check_random_frames(5000, seed=2024)


@pytest.mark.slow
def test_random_frames_never_crash_long():
    check_random_frames(1_000_000, seed=2025)
