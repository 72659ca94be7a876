import random
import threading

import pytest

from src.bench.runner import Testbed
from src.core.errors import LsmError, StorageError
from src.functions.enums import SstStage
from src.lsmkv.block import TOMBSTONE, BlockBuilder, BlockReader
from src.lsmkv.bloom import BloomFilter
from src.lsmkv.cache import BlockCache, RowCache
from src.lsmkv.enums import CachePolicy, ReadMode
from src.lsmkv.planner import FoundNothing, FoundValue, TraversalPlan, build_plan, candidate_files
from src.lsmkv.sampling import SamplingPolicy
from src.lsmkv.sst import SstWriter, iter_entries, read_footer
from src.lsmkv.store import LsmStore
from src.wire.messages import PushdownCapsule

SMALL = dict(
    memtable_bytes=2048,
    sst_target_bytes=8192,
    data_block_bytes=512,
    l0_compaction_trigger=3,
    l1_max_bytes=16384,
    level_size_ratio=4,
)


def make_store(bed, mode=ReadMode.PUSHDOWN, rate=0.0, **kwargs):
    options = {**SMALL, "cache_bytes": 1 << 20, **kwargs}
    return LsmStore(bed.client, mode, sampling=SamplingPolicy(rate, seed=3), **options)


def key(i: int) -> bytes:
    return b"key%06d" % i


def test_block_seek_and_get():
    builder = BlockBuilder(restart_interval=4)
    for i in range(0, 40, 2):
        builder.add(key(i), TOMBSTONE if i == 10 else b"v%d" % i)
    reader = BlockReader(builder.finish())
    assert reader.get(key(4)) == b"v4"
    assert reader.get(key(10)) is TOMBSTONE
    assert reader.get(key(5)) is None
    assert reader.seek(key(5))[0] == key(6)
    assert reader.seek(key(99)) is None
    assert [k for k, _ in reader] == [key(i) for i in range(0, 40, 2)]


def test_sst_layout_is_block_aligned():
    image = SstWriter(512, 256, bloom_bits_per_key=10).build((key(i), b"x" * 30) for i in range(200))
    assert len(image.data) % 512 == 0
    assert all(h.offset % 512 == 0 for h in image.data_handles)
    index, bloom = read_footer(image.data)
    assert index == image.index and bloom == image.filter
    assert [k for k, _ in iter_entries(image.data)] == [key(i) for i in range(200)]


def test_bloom_has_no_false_negatives():
    keys = [key(i) for i in range(1000)]
    bf = BloomFilter.decode(BloomFilter.build(keys, 10).encode())
    assert all(bf.may_contain(k) for k in keys)
    false_positives = sum(bf.may_contain(key(i)) for i in range(1000, 11000))
    assert false_positives < 300


def test_block_cache_lru_and_pins():
    cache = BlockCache(1000)
    cache.pin(1, 0, b"i" * 600)
    cache.insert(1, 512, b"a" * 400)
    cache.insert(1, 1024, b"b" * 400)
    cache.get(1, 512)
    cache.insert(1, 1536, b"c" * 400)
    assert cache.contains(1, 0)
    assert cache.contains(1, 512) and not cache.contains(1, 1024)
    assert cache.resident_bytes == 800
    cache.insert(2, 0, b"z" * 2000)
    assert not cache.contains(2, 0)
    cache.drop_file(1)
    assert not cache.contains(1, 0) and cache.resident_bytes == 0
    assert cache.counters.evictions == 1


def test_row_cache_rejects_stale_insert():
    rows = RowCache(4)
    seq = rows.write_seq
    rows.invalidate(b"k")
    assert not rows.insert(b"k", b"old", seq)
    assert rows.insert(b"k", b"new", rows.write_seq)
    assert rows.get(b"k") == b"new"


def test_sampling_rate_is_respected():
    policy = SamplingPolicy(0.01, seed=11)
    for _ in range(100_000):
        policy.decide()
    assert 0.0085 <= policy.sampled / policy.decisions <= 0.0115
    assert SamplingPolicy(0.0).decide() is False
    assert SamplingPolicy(1.0).decide() is True
    with pytest.raises(ValueError):
        SamplingPolicy(1.5)


def test_key_limits(bed):
    store = make_store(bed)
    with pytest.raises(LsmError):
        store.put(b"", b"v")
    with pytest.raises(LsmError):
        store.put(b"k" * 0x10000, b"v")
    store.put(b"k" * 0xFFFF, b"v")
    assert store.get(b"k" * 0xFFFF) == b"v"


def check_against_dict(store, rng: random.Random, n_ops: int, n_keys: int, flush_every: int) -> None:
    oracle: dict[bytes, bytes] = {}
    for step in range(n_ops):
        k = key(rng.randrange(n_keys))
        action = rng.random()
        if action < 0.45:
            value = rng.randbytes(rng.randint(1, 60))
            store.put(k, value)
            oracle[k] = value
        elif action < 0.55:
            store.delete(k)
            oracle.pop(k, None)
        else:
            assert store.get(k) == oracle.get(k), f"шаг {step}, ключ {k!r}"
        if step % flush_every == flush_every - 1:
            store.flush()
    store.flush()
    for i in range(n_keys):
        assert store.get(key(i)) == oracle.get(key(i))
    stats = store.stats()
    assert stats.mismatches == 0 and stats.fallbacks == 0


@pytest.mark.parametrize("mode", [ReadMode.BASELINE, ReadMode.PUSHDOWN])
@pytest.mark.parametrize("cache_bytes", [0, 1 << 20])
@pytest.mark.parametrize("rate", [0.0, 0.1, 1.0])
@pytest.mark.parametrize("bloom", [0, 10])
def test_matches_dict_oracle(bed, mode, cache_bytes, rate, bloom):
    store = make_store(bed, mode, rate, cache_bytes=cache_bytes, bloom_bits_per_key=bloom)
    rng = random.Random(f"{mode}-{cache_bytes}-{rate}-{bloom}")
    check_against_dict(store, rng, 1500, 300, 500)


@pytest.mark.slow
@pytest.mark.parametrize("mode", [ReadMode.BASELINE, ReadMode.PUSHDOWN])
@pytest.mark.parametrize("cache_bytes", [0, 16 * 1024, 1 << 22])
@pytest.mark.parametrize("rate", [0.0, 0.01, 1.0])
@pytest.mark.parametrize("seed", range(20))
def test_matches_dict_oracle_long(mode, cache_bytes, rate, seed):
    testbed = Testbed.local(block_size=512, capacity_blocks=1 << 16, seed=seed)
    try:
        store = make_store(testbed, mode, rate, cache_bytes=cache_bytes, bloom_bits_per_key=10)
        check_against_dict(store, random.Random(seed), 10_000, 2000, 2500)
    finally:
        testbed.close()


def sampled_share(bed, gets: int) -> float:
    store = make_store(bed, rate=0.01, cache_bytes=0, cache_policy=CachePolicy.NONE)
    for i in range(500):
        store.put(key(i), b"v%d" % i)
    store.flush()
    bed.client.reset_stats()
    rng = random.Random(17)
    for _ in range(gets):
        i = rng.randrange(500)
        assert store.get(key(i)) == b"v%d" % i
    stats = store.stats()
    assert stats.gets == gets
    # без кэша строк каждое чтение либо попадает в выборку, либо уходит на таргет
    assert stats.sampled + stats.pushdowns == gets
    assert stats.pushdown_ok == stats.pushdowns
    assert stats.sampled == store.sampling.sampled
    return stats.sampled / gets


def test_store_samples_requested_share(bed):
    assert 0.005 <= sampled_share(bed, 20_000) <= 0.015


@pytest.mark.slow
def test_store_samples_requested_share_long(bed):
    assert 0.0085 <= sampled_share(bed, 100_000) <= 0.0115


@pytest.fixture
def three_files(bed):
    store = make_store(bed, memtable_bytes=1 << 20, l0_compaction_trigger=100)
    for i in range(100):
        store.put(key(i), b"first")
    store.flush()
    store.put(key(0), b"second")
    store.put(key(98), b"second")
    store.flush()
    store.put(key(1), b"third")
    store.put(key(97), b"third")
    store.flush()
    return store


def test_plan_lists_every_uncached_candidate(three_files):
    store = three_files
    candidates = candidate_files(store.levels(), key(50))
    assert len(candidates) == 3
    assert [c.inode_id for c in candidates] == [f.inode_id for f in store.levels()[0]]

    plan = build_plan(store.cache, candidates, key(50))
    assert isinstance(plan, TraversalPlan)
    assert len(plan) == 3
    assert [s.sst for s in plan.steps] == candidates
    # индексы закреплены в кэше, поэтому каждый шаг начинается с блока данных
    assert all(s.io.start_stage == SstStage.DATA_BLOCK for s in plan.steps)


def test_unpinned_index_starts_chain_at_index(bed):
    store = make_store(bed, pin_index_blocks=False)
    store.put(key(1), b"v")
    store.flush()
    plan = build_plan(store.cache, candidate_files(store.levels(), key(1)), key(1))
    assert plan.steps[0].io.start_stage == SstStage.INDEX_BLOCK


def test_chain_resolves_in_one_round_trip(bed, three_files):
    store = three_files
    before = bed.transport.counters.round_trips
    assert store.get(key(50)) == b"first"
    assert bed.transport.counters.round_trips - before == 1
    assert store.stats().pushdown_ok == 1
    # ответ запомнен в кэше строк
    assert store.get(key(50)) == b"first"
    assert bed.transport.counters.round_trips - before == 1
    assert store.stats().row_cache_hits == 1


def test_fully_cached_query_sends_nothing(bed, three_files):
    store = three_files
    store.sampling = SamplingPolicy(1.0)
    assert store.get(key(50)) == b"first"
    store.sampling = SamplingPolicy(0.0)
    before = bed.transport.counters.round_trips
    assert store.get(key(50)) == b"first"
    assert bed.transport.counters.round_trips == before
    assert store.stats().local_answers == 1


def test_local_answer_shadows_older_levels(three_files):
    store = three_files
    store.sampling = SamplingPolicy(1.0)
    assert store.get(key(97)) == b"third"
    plan = build_plan(store.cache, candidate_files(store.levels(), key(97)), key(97))
    assert plan == FoundValue(b"third")
    assert build_plan(store.cache, [], key(97)) == FoundNothing()


def test_full_sampling_costs_the_same_as_baseline():
    def measure(mode, rate):
        bed = Testbed.local(block_size=512, capacity_blocks=1 << 16, seed=1)
        try:
            store = make_store(bed, mode, rate, cache_bytes=64 << 10)
            rng = random.Random(5)
            for i in rng.sample(range(2000), 2000):
                store.put(key(i), b"v" * 40)
            store.flush()
            bed.client.reset_stats()
            values = [store.get(key(rng.randrange(2500))) for _ in range(500)]
            return values, bed.client.totals.bytes_received, bed.client.totals.round_trips
        finally:
            bed.close()

    base = measure(ReadMode.BASELINE, 0.0)
    full = measure(ReadMode.PUSHDOWN, 1.0)
    assert base == full


def test_compaction_keeps_levels_sorted(bed):
    store = make_store(bed)
    oracle = {}
    for i in range(3000):
        k = key((i * 7919) % 1000)
        value = b"%d" % i
        store.put(k, value)
        oracle[k] = value
    store.flush()
    assert store.stats().compactions > 0
    levels = store.levels()
    assert len(levels) > 1
    for files in levels[1:]:
        assert all(a.max_key < b.min_key for a, b in zip(files, files[1:]))
    for k, v in oracle.items():
        assert store.get(k) == v
    manifest = store.manifest()
    assert sum(e.entries for e in manifest.files) >= len(oracle)


def test_compact_all_drops_tombstones(bed):
    store = make_store(bed)
    for i in range(400):
        store.put(key(i), b"v")
    for i in range(0, 400, 2):
        store.delete(key(i))
    store.compact_all()
    files = [f for level in store.levels() for f in level]
    entries = [e for f in files for e in store.file_entries(f)]
    assert all(v is not TOMBSTONE for _, v in entries)
    assert len(entries) == 200
    assert store.get(key(2)) is None and store.get(key(3)) == b"v"


def test_retired_files_are_deleted(bed):
    store = make_store(bed)
    for i in range(2000):
        store.put(key(i % 500), b"x" * 20)
    store.compact_all()
    live = {f.inode_id for level in store.levels() for f in level}
    assert set(bed.store.list_inodes()) == live


def test_write_invalidates_cached_row(bed, three_files):
    store = three_files
    assert store.get(key(60)) == b"first"
    assert len(store.rows) == 1
    store.put(key(60), b"fresh")
    store.flush()
    assert len(store.rows) == 0
    assert store.get(key(60)) == b"fresh"


def test_no_row_cache_without_final_policy(bed):
    store = make_store(bed, cache_policy=CachePolicy.NONE)
    store.put(key(1), b"v")
    store.flush()
    assert store.get(key(1)) == b"v"
    assert len(store.rows) == 0


def test_bloom_filter_avoids_remote_reads(bed):
    store = make_store(bed, bloom_bits_per_key=10)
    for i in range(0, 1000, 2):
        store.put(key(i), b"v")
    store.flush()
    before = bed.transport.counters.round_trips
    for i in range(1, 1000, 2):
        assert store.get(key(i)) is None
    assert bed.transport.counters.round_trips - before < 50


def test_remap_in_flight_recovers(bed, three_files):
    store = three_files
    target = store.levels()[0][-1].inode_id
    fired = []

    def remap(msg):
        if isinstance(msg, PushdownCapsule) and not fired:
            fired.append(msg.request_id)
            bed.store.truncate_and_remap(target)

    bed.transport.before_reply = remap
    assert store.get(key(40)) == b"first"
    assert fired
    assert store.stats().mismatches >= 1
    assert store.get(key(41)) == b"first"


def hammer(bed, writes: int, readers: int):
    store = make_store(bed, memtable_bytes=4096)
    n = 200
    committed = {i: 0 for i in range(n)}
    for i in range(n):
        store.put(key(i), b"%d" % 0)
    store.flush()
    bed.sync.kick(timeout=5)
    stop = threading.Event()
    failures: list[str] = []

    def writer():
        rng = random.Random(1)
        for version in range(1, writes):
            i = rng.randrange(n)
            store.put(key(i), b"%d" % version)
            committed[i] = version
        stop.set()

    def remapper():
        rng = random.Random(2)
        while not stop.is_set():
            files = [f for level in store.levels() for f in level]
            if files:
                try:
                    bed.store.truncate_and_remap(rng.choice(files).inode_id)
                except StorageError:
                    pass
            stop.wait(0.001)

    def reader(seed):
        rng = random.Random(seed)
        while not stop.is_set():
            i = rng.randrange(n)
            floor = committed[i]
            try:
                raw = store.get(key(i))
            except StorageError as e:
                failures.append(f"ключ {i}: {e!r}")
                return
            if raw is None or int(raw) < floor:
                failures.append(f"ключ {i}: {raw!r} < {floor}")
                return

    threads = [threading.Thread(target=writer), threading.Thread(target=remapper)]
    threads += [threading.Thread(target=reader, args=(s,)) for s in range(readers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(120)
    assert not failures, failures[:5]
    return store.stats()


def test_concurrent_remaps_never_return_stale_data(bed):
    bed.start()
    hammer(bed, 1500, readers=2)


@pytest.mark.slow
def test_concurrent_remaps_long_run(bed):
    bed.start()
    stats = hammer(bed, 30000, readers=4)
    assert stats.gets > 0
