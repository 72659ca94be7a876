import math

import pytest

from src.bpfkv.store import BpfKvStore, build_image, generate_items, keys_for_depth, node_levels_for
from src.core.errors import SizingError
from src.host.enums import AbortReason, Outcome
from src.lsmkv.enums import ReadMode
from src.wire.messages import PushdownCapsule

NODE = 512
DEPTH = 7
FANOUT = 4


@pytest.fixture(scope="module")
def items():
    return generate_items(keys_for_depth(DEPTH, FANOUT), seed=7)


def make_tree(bed, items, mode=ReadMode.PUSHDOWN, cached_levels=0, name="bpfkv"):
    store = BpfKvStore.create(bed.client, items, DEPTH, FANOUT, NODE, name=name,
                              mode=mode, cached_levels=cached_levels, seed=7)
    bed.client.reset_stats()
    return store


def test_sizing():
    assert keys_for_depth(2, 4) == 1
    assert keys_for_depth(7, 4) == 4 ** 5 + 1
    assert node_levels_for(keys_for_depth(7, 4), 4) == 6
    assert node_levels_for(keys_for_depth(7, 4) - 1, 4) == 5
    with pytest.raises(SizingError):
        keys_for_depth(1, 4)


@pytest.mark.parametrize(
    "n_keys, depth, fanout, node_size",
    [
        (0, 2, 4, NODE),
        (17, 5, 4, NODE),
        (17, 4, 1, NODE),
        (17, 4, 10_000, NODE),
        (17, 4, 4, 700),
        (17, 17, 4, NODE),
    ],
    ids=["empty", "wrong-depth", "fanout-too-small", "fanout-too-large", "unaligned-node", "too-deep"],
)
def test_build_rejects_bad_geometry(n_keys, depth, fanout, node_size):
    with pytest.raises(SizingError):
        build_image(generate_items(n_keys) if n_keys else [], depth, fanout, node_size, NODE)


def test_build_rejects_unsorted_keys():
    items = generate_items(17)
    with pytest.raises(SizingError):
        build_image(items[::-1], 4, 4, NODE, NODE)


def test_generate_items_is_deterministic():
    assert generate_items(100, seed=3) == generate_items(100, seed=3)
    assert generate_items(100, seed=3) != generate_items(100, seed=4)
    keys = [k for k, _ in generate_items(100, seed=3)]
    assert keys == sorted(set(keys))


def test_baseline_reads_every_level(bed, items):
    store = make_tree(bed, items, ReadMode.BASELINE)
    key, value = items[500]
    result = store.lookup(key)
    assert result.value == value
    assert result.stats.round_trips == DEPTH
    assert result.stats.device_reads == DEPTH


def test_pushdown_walks_tree_in_one_round_trip(bed, items):
    store = make_tree(bed, items)
    key, value = items[500]
    result = store.lookup(key)
    assert result.outcome == Outcome.FOUND
    assert result.value == value
    assert result.stats.round_trips == 1
    assert result.stats.resubmissions == DEPTH - 1
    assert result.stats.device_reads == DEPTH
    assert store.stats().pushdowns == 1


def test_pushdown_moves_less_data(bed, items):
    baseline = make_tree(bed, items, ReadMode.BASELINE, name="base")
    pushdown = make_tree(bed, items, name="push")
    keys = [k for k, _ in items[::37]]

    bed.client.reset_stats()
    for key in keys:
        baseline.get(key)
    base_bytes = bed.client.totals.bytes_received
    base_trips = bed.client.totals.round_trips

    bed.client.reset_stats()
    for key in keys:
        pushdown.get(key)
    assert bed.client.totals.round_trips * DEPTH == base_trips
    assert bed.client.totals.bytes_received <= 0.25 * base_bytes


def test_absent_key(bed, items):
    store = make_tree(bed, items)
    result = store.lookup(items[-1][0] + 1)
    assert result.outcome == Outcome.NOT_FOUND
    assert result.value is None
    assert result.stats.device_reads == DEPTH - 1


@pytest.mark.parametrize("cached, nodes", [(1, 1), (3, 8), (5, 90)])
def test_cached_levels_shorten_the_walk(bed, items, cached, nodes):
    base = make_tree(bed, items, ReadMode.BASELINE, cached, name="base")
    push = make_tree(bed, items, ReadMode.PUSHDOWN, cached, name="push")
    assert len(base.cache) == len(push.cache) == nodes
    key, value = items[123]
    b = base.lookup(key)
    p = push.lookup(key)
    assert b.value == p.value == value
    assert b.stats.round_trips == DEPTH - cached
    assert p.stats.round_trips == 1
    assert p.stats.device_reads == DEPTH - cached


def test_fully_cached_tree(bed, items):
    store = make_tree(bed, items, cached_levels=100)
    assert store.cache.cached_levels == DEPTH - 1
    key, value = items[9]
    hit = store.lookup(key)
    assert hit.value == value
    assert hit.stats.round_trips == 1 and hit.stats.device_reads == 1
    # промах решается по листу в памяти
    miss = store.lookup(items[-1][0] + 1)
    assert miss.outcome == Outcome.NOT_FOUND
    assert miss.stats.round_trips == 0


def test_single_key_tree(bed):
    items = generate_items(1, seed=2)
    store = BpfKvStore.create(bed.client, items, 2, FANOUT, NODE)
    result = store.lookup(items[0][0])
    assert result.value == items[0][1]
    assert result.stats.device_reads == 2
    assert store.get(items[0][0] + 1) is None


def test_large_nodes_span_blocks(bed):
    items = generate_items(keys_for_depth(4, 8), seed=4)
    store = BpfKvStore.create(bed.client, items, 4, 8, 2 * NODE)
    for key, value in items[::5]:
        assert store.get(key) == value


def test_every_key_matches(bed, items):
    store = make_tree(bed, items, cached_levels=2)
    for key, value in items:
        assert store.get(key) == value
    assert store.stats().gets == len(items)
    assert store.stats().mismatches == 0


@pytest.mark.parametrize("mode", [ReadMode.BASELINE, ReadMode.PUSHDOWN])
@pytest.mark.parametrize("cached", [0, 2])
def test_range_matches_oracle(bed, items, mode, cached):
    store = make_tree(bed, items, mode, cached)
    lo, hi = items[100][0] - 1, items[160][0]
    expected = [(k, v) for k, v in items if lo <= k <= hi]
    pairs, stats = store.scan(lo, hi, page_size=5)
    assert pairs == expected
    assert store.stats().range_pages >= math.ceil(len(expected) / 5)
    if mode == ReadMode.PUSHDOWN:
        assert stats.round_trips == store.stats().range_pages


def test_range_edges(bed, items):
    store = make_tree(bed, items)
    assert store.get_range(items[-1][0] + 1, items[-1][0] + 100) == []
    assert store.get_range(items[10][0], items[5][0]) == []
    assert store.get_range(0, 2 ** 64 - 1) == items
    single = items[42]
    assert store.get_range(single[0], single[0]) == [single]


def test_remap_during_lookup_falls_back(bed, items):
    store = make_tree(bed, items)
    fired = []

    def remap(msg):
        if isinstance(msg, PushdownCapsule) and not fired:
            fired.append(msg.request_id)
            bed.store.truncate_and_remap(store.handle.inode_id)

    bed.transport.before_reply = remap
    key, value = items[77]
    result = store.lookup(key)
    assert fired
    assert result.value == value
    assert result.reason == AbortReason.POST_CHECK
    assert store.stats().mismatches == 1
    assert store.get(items[78][0]) == items[78][1]


def test_reopen_reads_header(bed, items):
    store = make_tree(bed, items)
    inode = store.handle.inode_id
    store.close()
    reopened = BpfKvStore.open(bed.client, inode, cached_levels=1)
    assert reopened.header.n_keys == len(items)
    assert reopened.header.depth == DEPTH
    assert reopened.get(items[0][0]) == items[0][1]
    reopened.close()


def test_long_range_fits_target_limits(bed):
    items = generate_items(keys_for_depth(4, 31), seed=11)
    store = BpfKvStore.create(bed.client, items, 4, 31, NODE)
    pairs, stats = store.scan(items[200][0], items[299][0])
    assert pairs == items[200:300]
    s = store.stats()
    assert s.fallbacks == 0 and s.mismatches == 0
    assert s.range_pages > 1
    assert stats.resubmissions <= s.range_pages * bed.client.limits.max_resubmissions
    assert store.get_range(0, 2 ** 64 - 1) == items
