from pydantic import BaseModel


class LsmStats(BaseModel):
    gets: int = 0
    memtable_hits: int = 0
    row_cache_hits: int = 0
    local_answers: int = 0
    remote_gets: int = 0
    pushdowns: int = 0
    pushdown_ok: int = 0
    sampled: int = 0
    mismatches: int = 0
    fallbacks: int = 0
    retries: int = 0
    flushes: int = 0
    compactions: int = 0
    block_cache_hits: int = 0
    block_cache_misses: int = 0


class ManifestEntry(BaseModel):
    level: int
    inode_id: int
    min_key: str
    max_key: str
    entries: int
    file_length: int


class Manifest(BaseModel):
    files: list[ManifestEntry]
