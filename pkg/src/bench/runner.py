"""Прогон нагрузки против LSM или BPF-KV в выбранном режиме чтения."""
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Sequence

import numpy as np

from src.bench.enums import OpKind, System, Workload
from src.bench.metrics import WorkerCounters, percentiles_us, result_digest
from src.bench.schemas import BenchReport, CacheConfig, CompareReport, SweepReport, WorkloadSpec
from src.bench.workload import Op, distribution_for, generate_ops, lsm_key
from src.bpfkv.store import BpfKvStore, generate_items, node_levels_for
from src.core.config import parse_address, settings
from src.core.errors import BenchError, StorageError
from src.extent.device import BlockDevice
from src.extent.store import ExtentStore
from src.host.client import HostClient
from src.host.transport import LoopbackTransport, TcpTransport, Transport
from src.lsmkv.enums import ReadMode
from src.lsmkv.sampling import SamplingPolicy
from src.lsmkv.store import LsmStore
from src.sync.channel import LoopbackSyncChannel, TcpSyncChannel
from src.sync.host import MetadataSynchronizer
from src.sync.replica import ReplicaTable
from src.target.service import TargetService

logger = logging.getLogger(__name__)

DEFAULT_SWEEP_RATES = (0.0, 0.001, 0.01, 0.1, 1.0)


class Testbed:
    """Хост и таргет одного прогона: в процессе или удаленный таргет с общим файлом устройства."""

    __test__ = False

    def __init__(self, device: BlockDevice, store: ExtentStore, sync: MetadataSynchronizer,
                 transport: Transport, service: Optional[TargetService] = None):
        self.device = device
        self.store = store
        self.sync = sync
        self.transport = transport
        self.service = service
        self.client = HostClient(store, sync, transport)

    @classmethod
    def local(
        cls,
        block_size: int = settings.BLOCK_SIZE,
        capacity_blocks: int = settings.CAPACITY_BLOCKS,
        fragment_probability: float = settings.FRAGMENT_PROBABILITY,
        seed: Optional[int] = None,
    ) -> "Testbed":
        device = BlockDevice(block_size, capacity_blocks)
        replicas = ReplicaTable(block_size)
        service = TargetService(device, replicas)
        store = ExtentStore(device, fragment_probability, seed)
        sync = MetadataSynchronizer(store, LoopbackSyncChannel(replicas))
        return cls(device, store, sync, LoopbackTransport(service), service)

    @classmethod
    def remote(
        cls,
        target: str,
        backing: str,
        sync_target: Optional[str] = None,
        block_size: int = settings.BLOCK_SIZE,
        capacity_blocks: int = settings.CAPACITY_BLOCKS,
        connections: int = 1,
    ) -> "Testbed":
        if not backing:
            raise BenchError("Для удаленного таргета нужен общий файл устройства (--backing)")
        host, port = parse_address(target)
        sync_host, sync_port = parse_address(sync_target) if sync_target else (host, settings.SYNC_PORT)
        device = BlockDevice(block_size, capacity_blocks, backing)
        store = ExtentStore(device)
        sync = MetadataSynchronizer(store, TcpSyncChannel(sync_host, sync_port))
        try:
            transport = TcpTransport(host, port, connections)
        except StorageError as e:
            device.close()
            raise BenchError(f"Таргет {target} недоступен: {e}") from e
        return cls(device, store, sync, transport)

    def start(self) -> None:
        self.sync.start()

    def close(self) -> None:
        self.sync.stop()
        self.sync.channel.close()
        self.transport.close()
        self.device.close()

    def __enter__(self) -> "Testbed":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class _Driver:
    """Общий интерфейс к хранилищу для исполнения операций нагрузки."""

    def execute(self, op: Op) -> Optional[bytes]:
        raise NotImplementedError

    def counters(self) -> dict[str, int]:
        return {}

    def reset(self) -> None:
        pass

    def close(self) -> None:
        pass


class _LsmDriver(_Driver):
    def __init__(self, bed: Testbed, spec: WorkloadSpec, mode: ReadMode, cache: CacheConfig):
        self.store = LsmStore(
            bed.client,
            mode,
            cache_bytes=cache.cache_bytes,
            sampling=SamplingPolicy(cache.sampling_rate, seed=spec.seed),
            cache_policy=cache.cache_policy,
            bloom_bits_per_key=cache.bloom_bits_per_key,
            pin_index_blocks=cache.pin_index_blocks,
        )
        rng = np.random.default_rng(spec.seed ^ 0x5EED)
        for index in rng.permutation(spec.n_keys):
            self.store.put(lsm_key(int(index)), rng.bytes(spec.value_size))
        self.store.flush()
        bed.sync.kick(timeout=settings.REQUEST_TIMEOUT_S)
        logger.info(f"LSM загружено: {spec.n_keys} ключей, уровней {len(self.store.levels())}")

    def execute(self, op: Op) -> Optional[bytes]:
        key = lsm_key(op.key)
        if op.kind == OpKind.READ:
            return self.store.get(key)
        if op.kind == OpKind.RMW:
            old = self.store.get(key)
            self.store.put(key, op.value)
            return old
        if op.kind in (OpKind.UPDATE, OpKind.INSERT):
            self.store.put(key, op.value)
            return None
        raise BenchError(f"LSM не поддерживает операцию {op.kind.value}")

    def counters(self) -> dict[str, int]:
        s = self.store.stats()
        return {
            "sampled_count": s.sampled,
            "mismatch_count": s.mismatches,
            "fallback_count": s.fallbacks,
            "cache_hits": s.block_cache_hits,
            "cache_misses": s.block_cache_misses,
        }

    def reset(self) -> None:
        self.store.reset_stats()
        self.store.cache.reset_counters()

    def close(self) -> None:
        self.store.close()


class _BpfKvDriver(_Driver):
    def __init__(self, bed: Testbed, spec: WorkloadSpec, mode: ReadMode, cache: CacheConfig):
        self.items = generate_items(spec.n_keys, spec.seed)
        self.keys = [k for k, _ in self.items]
        fanout = settings.BTREE_FANOUT
        depth = node_levels_for(spec.n_keys, fanout) + 1
        self.store = BpfKvStore.create(bed.client, self.items, depth, fanout,
                                       mode=mode, cached_levels=cache.cached_levels, seed=spec.seed)

    def execute(self, op: Op) -> Optional[bytes]:
        if op.kind == OpKind.READ:
            if op.key >= len(self.keys):
                return self.store.get(self.keys[-1] + 1 + op.key)
            return self.store.get(self.keys[op.key])
        if op.kind == OpKind.SCAN:
            lo = self.keys[min(op.key, len(self.keys) - 1)]
            hi = self.keys[min(op.key + op.span, len(self.keys)) - 1]
            pairs = self.store.get_range(lo, hi)
            return b"".join(k.to_bytes(8, "little") + v for k, v in pairs)
        raise BenchError(f"BPF-KV только для чтения, операция {op.kind.value} не поддерживается")

    def counters(self) -> dict[str, int]:
        s = self.store.stats()
        return {"mismatch_count": s.mismatches, "fallback_count": s.fallbacks}

    def close(self) -> None:
        self.store.close()


_DRIVERS: dict[System, Callable[..., _Driver]] = {
    System.LSMKV: _LsmDriver,
    System.BPFKV: _BpfKvDriver,
}


def _execute_all(driver: _Driver, ops: Sequence[Op], workers: int) -> tuple[list[Optional[bytes]], WorkerCounters]:
    results: list[Optional[bytes]] = [None] * len(ops)
    errors: list[BaseException] = []
    errors_lock = threading.Lock()

    def worker(index: int) -> WorkerCounters:
        counters = WorkerCounters()
        for i in range(index, len(ops), workers):
            op = ops[i]
            started = time.perf_counter_ns()
            try:
                value = driver.execute(op)
            except StorageError as e:
                with errors_lock:
                    errors.append(e)
                logger.error(f"Операция {i} ({op.kind.value}) завершилась ошибкой: {e}")
                return counters
            found = None if op.kind in (OpKind.UPDATE, OpKind.INSERT) else value is not None
            counters.record(op.kind, time.perf_counter_ns() - started, found)
            results[i] = value
        return counters

    total = WorkerCounters()
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="bench") as pool:
        for counters in pool.map(worker, range(workers)):
            total.merge(counters)
    if errors:
        raise BenchError(f"Прогон прерван: {len(errors)} ошибок, первая: {errors[0]}") from errors[0]
    return results, total


def run(
    spec: WorkloadSpec,
    system: System = System.LSMKV,
    mode: ReadMode = ReadMode.PUSHDOWN,
    cache: Optional[CacheConfig] = None,
    workers: int = 1,
    testbed: Optional[Callable[[], Testbed]] = None,
) -> BenchReport:
    """Загрузка данных, затем замер потока операций. Счетчики сбрасываются после загрузки."""
    cache = cache or CacheConfig()
    system, mode = System(system), ReadMode(mode)
    if workers < 1:
        raise BenchError("Число потоков должно быть положительным")
    if system == System.LSMKV and spec.workload == Workload.RANGE_READ:
        raise BenchError("Диапазонные запросы поддерживает только BPF-KV")
    ops = generate_ops(spec)
    with (testbed or Testbed.local)() as bed:
        driver = _DRIVERS[system](bed, spec, mode, cache)
        try:
            bed.sync.kick(timeout=settings.REQUEST_TIMEOUT_S)
            driver.reset()
            bed.client.reset_stats()
            logger.info(f"Замер: {system.value}/{mode.value}, {spec.workload.value}, {len(ops)} операций")

            started = time.perf_counter()
            results, counters = _execute_all(driver, ops, workers)
            elapsed = time.perf_counter() - started
            totals = bed.client.totals
            extra = driver.counters()
        finally:
            driver.close()

    p50, p99 = percentiles_us(counters.latencies_ns)
    hits, misses = extra.get("cache_hits", 0), extra.get("cache_misses", 0)
    return BenchReport(
        system=system,
        mode=mode,
        workload=spec.workload,
        distribution=distribution_for(spec),
        n_keys=spec.n_keys,
        n_ops=len(ops),
        workers=workers,
        seed=spec.seed,
        cache_bytes=cache.cache_bytes,
        sampling_rate=cache.sampling_rate,
        elapsed_s=elapsed,
        throughput_ops=len(ops) / elapsed if elapsed > 0 else 0.0,
        latency_p50_us=p50,
        latency_p99_us=p99,
        reads=counters.reads,
        updates=counters.updates,
        inserts=counters.inserts,
        scans=counters.scans,
        found=counters.found,
        not_found=counters.not_found,
        round_trips=totals.round_trips,
        device_reads=totals.device_reads + bed.client.remote_reads,
        resubmissions=totals.resubmissions,
        bytes_sent=totals.bytes_sent,
        bytes_received=totals.bytes_received,
        cache_hit_rate=hits / (hits + misses) if hits + misses else 0.0,
        result_digest=result_digest(results),
        **extra,
    )


def compare(
    spec: WorkloadSpec,
    system: System = System.LSMKV,
    cache: Optional[CacheConfig] = None,
    workers: int = 1,
    testbed: Optional[Callable[[], Testbed]] = None,
) -> CompareReport:
    """Парный прогон baseline и pushdown с одним seed; ответы должны совпасть."""
    baseline = run(spec, system, ReadMode.BASELINE, cache, workers, testbed)
    pushdown = run(spec, system, ReadMode.PUSHDOWN, cache, workers, testbed)
    match = baseline.result_digest == pushdown.result_digest
    if not match:
        logger.error("Ответы baseline и pushdown различаются")
    return CompareReport(
        baseline=baseline,
        pushdown=pushdown,
        digests_match=match,
        round_trip_ratio=pushdown.round_trips / baseline.round_trips if baseline.round_trips else 0.0,
        bytes_received_ratio=(pushdown.bytes_received / baseline.bytes_received
                              if baseline.bytes_received else 0.0),
    )


def sweep_sampling(
    spec: WorkloadSpec,
    rates: Sequence[float] = DEFAULT_SWEEP_RATES,
    cache: Optional[CacheConfig] = None,
    workers: int = 1,
    testbed: Optional[Callable[[], Testbed]] = None,
) -> SweepReport:
    """Один и тот же LSM-прогон в режиме pushdown при разных частотах выборки."""
    cache = cache or CacheConfig()
    runs = []
    for rate in rates:
        runs.append(run(spec, System.LSMKV, ReadMode.PUSHDOWN,
                        cache.model_copy(update={"sampling_rate": rate}), workers, testbed))
    return SweepReport(rates=list(rates), runs=runs)
