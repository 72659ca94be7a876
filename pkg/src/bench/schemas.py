from typing import Optional

from pydantic import BaseModel, Field

from src.bench.enums import Distribution, System, Workload
from src.core.config import settings
from src.lsmkv.enums import CachePolicy, ReadMode


class WorkloadSpec(BaseModel):
    workload: Workload = Workload.YCSB_C
    distribution: Optional[Distribution] = None
    n_keys: int = Field(10_000, gt=0)
    n_ops: int = Field(10_000, ge=0)
    value_size: int = Field(100, ge=1, le=4096)
    scan_length: int = Field(100, ge=1)
    seed: int = 42
    trace_path: Optional[str] = None


class CacheConfig(BaseModel):
    cache_bytes: int = Field(settings.CACHE_BYTES, ge=0)
    sampling_rate: float = Field(settings.SAMPLING_RATE, ge=0.0, le=1.0)
    cache_policy: CachePolicy = CachePolicy(settings.PUSHDOWN_CACHE_POLICY)
    bloom_bits_per_key: int = Field(settings.BLOOM_BITS_PER_KEY, ge=0)
    pin_index_blocks: bool = settings.PIN_INDEX_BLOCKS
    cached_levels: int = Field(0, ge=0)


class BenchReport(BaseModel):
    system: System
    mode: ReadMode
    workload: Workload
    distribution: Distribution
    n_keys: int
    n_ops: int
    workers: int
    seed: int
    cache_bytes: int
    sampling_rate: float

    elapsed_s: float
    throughput_ops: float
    latency_p50_us: float
    latency_p99_us: float

    reads: int = 0
    updates: int = 0
    inserts: int = 0
    scans: int = 0
    found: int = 0
    not_found: int = 0

    round_trips: int = 0
    device_reads: int = 0
    resubmissions: int = 0
    bytes_sent: int = 0
    bytes_received: int = 0

    sampled_count: int = 0
    mismatch_count: int = 0
    fallback_count: int = 0
    cache_hits: int = 0
    cache_misses: int = 0
    cache_hit_rate: float = 0.0

    result_digest: str


class CompareReport(BaseModel):
    baseline: BenchReport
    pushdown: BenchReport
    digests_match: bool
    round_trip_ratio: float
    bytes_received_ratio: float


class SweepReport(BaseModel):
    rates: list[float]
    runs: list[BenchReport]
