"""Формат сообщений синхронизатора (little-endian).

Запись: [u32 0x53594E43][u64 inode][u64 version][u64 file_length][u32 extent_count]
        extent_count × (u64 file_offset, u64 device_block, u32 length_blocks)
Подтверждение: [u32 0x53594E41][u64 inode][u64 version]
"""
import struct

from src.core.errors import MalformedRecordError
from src.extent.models import Extent
from src.sync.models import SyncAck, SyncRecord

RECORD_MAGIC = 0x53594E43
ACK_MAGIC = 0x53594E41

RECORD_HEADER = struct.Struct("<IQQQI")
EXTENT = struct.Struct("<QQI")
ACK = struct.Struct("<IQQ")

MAX_EXTENTS = 1 << 20


def encode_record(record: SyncRecord) -> bytes:
    parts = [RECORD_HEADER.pack(RECORD_MAGIC, record.inode_id, record.version,
                                record.file_length, len(record.extents))]
    parts.extend(EXTENT.pack(e.file_offset, e.device_block, e.length_blocks) for e in record.extents)
    return b"".join(parts)


def decode_record_header(data: bytes) -> tuple[int, int, int, int]:
    if len(data) < RECORD_HEADER.size:
        raise MalformedRecordError("Усеченный заголовок записи синхронизации")
    magic, inode_id, version, file_length, count = RECORD_HEADER.unpack_from(data)
    if magic != RECORD_MAGIC:
        raise MalformedRecordError(f"Неверная сигнатура записи: {magic:#x}")
    if count > MAX_EXTENTS:
        raise MalformedRecordError(f"Слишком много экстентов: {count}")
    return inode_id, version, file_length, count


def decode_record(data: bytes) -> SyncRecord:
    inode_id, version, file_length, count = decode_record_header(data)
    expected = RECORD_HEADER.size + count * EXTENT.size
    if len(data) != expected:
        raise MalformedRecordError(f"Длина записи {len(data)}, ожидалось {expected}")
    extents = tuple(
        Extent(*EXTENT.unpack_from(data, RECORD_HEADER.size + i * EXTENT.size))
        for i in range(count)
    )
    return SyncRecord(inode_id, version, extents, file_length)


def encode_ack(ack: SyncAck) -> bytes:
    return ACK.pack(ACK_MAGIC, ack.inode_id, ack.version)


def decode_ack(data: bytes) -> SyncAck:
    if len(data) != ACK.size:
        raise MalformedRecordError(f"Длина подтверждения {len(data)}, ожидалось {ACK.size}")
    magic, inode_id, version = ACK.unpack(data)
    if magic != ACK_MAGIC:
        raise MalformedRecordError(f"Неверная сигнатура подтверждения: {magic:#x}")
    return SyncAck(inode_id, version)
