from dataclasses import dataclass

from src.extent.models import Extent, ExtentMap


@dataclass(frozen=True, slots=True)
class SyncRecord:
    inode_id: int
    version: int
    extents: tuple[Extent, ...]
    file_length: int

    @classmethod
    def from_map(cls, emap: ExtentMap) -> "SyncRecord":
        return cls(emap.inode_id, emap.version, emap.extents, emap.file_length)

    def to_map(self) -> ExtentMap:
        return ExtentMap(self.inode_id, self.version, self.extents, self.file_length)


@dataclass(frozen=True, slots=True)
class SyncAck:
    inode_id: int
    version: int
