import pytest

from src.bpfkv.layout import Node, KIND_LEAF, decode_node
from src.bpfkv.store import build_image, generate_items, keys_for_depth
from src.functions import btree_lookup, btree_range, sst_chain
from src.functions.base import Done, Fallback, Resubmit, StepContext, StepLimitExceeded
from src.functions.btree_lookup import BTreeLookup
from src.functions.btree_range import BTreeRange
from src.functions.enums import FallbackReason, SstStage
from src.functions.sst_chain import SstChain, SstPlanEntry
from src.lsmkv.block import TOMBSTONE
from src.lsmkv.sst import SstWriter

NODE = 512


def run_local(fn, files, fd, offset, length, scratch, max_steps=1 << 20):
    """Исполнение цепочки над байтами в памяти, как на таргете; возвращает (исход, scratch, чтения)."""
    ctx = StepContext(max_steps)
    buf = bytearray(scratch)
    reads = 0
    while True:
        reads += 1
        outcome = fn.step(files[fd][offset:offset + length], buf, ctx)
        if isinstance(outcome, Resubmit):
            fd, offset, length = outcome.fd_index, outcome.offset, outcome.length
            continue
        if isinstance(outcome, Done):
            return outcome, bytes(buf[:outcome.result_length]), reads
        return outcome, bytes(buf), reads


@pytest.fixture(scope="module")
def tree():
    items = generate_items(keys_for_depth(5, 4), seed=13)
    image, header = build_image(items, 5, 4, NODE, NODE, seed=13)
    return image, header, items


def test_lookup_walks_every_level(tree):
    image, header, items = tree
    for key, value in items:
        outcome, raw, reads = run_local(BTreeLookup(), [image], 0, header.root_offset, NODE,
                                        btree_lookup.encode_query(key, NODE))
        assert isinstance(outcome, Done)
        assert reads == header.depth
        assert btree_lookup.decode_result(raw) == (True, value)


def test_lookup_absent_keys(tree):
    image, header, items = tree
    present = {k for k, _ in items}
    for key in (0, items[0][0] - 1, items[-1][0] + 1, *(k + 1 for k, _ in items[:20])):
        if key in present:
            continue
        _, raw, reads = run_local(BTreeLookup(), [image], 0, header.root_offset, NODE,
                                  btree_lookup.encode_query(key, NODE))
        assert btree_lookup.decode_result(raw) == (False, None)
        assert reads == header.depth - 1


def test_lookup_from_log_pointer(tree):
    image, header, items = tree
    leaf_offset = header.leaves_offset
    leaf = decode_node(image[leaf_offset:leaf_offset + NODE])
    ptr = leaf.find(leaf.keys[0])
    expected = dict(items)[leaf.keys[0]]
    outcome, raw, reads = run_local(BTreeLookup(), [image], 0, ptr - ptr % NODE, NODE,
                                    btree_lookup.encode_query(leaf.keys[0], NODE, ptr))
    assert reads == 1
    assert btree_lookup.decode_result(raw) == (True, expected)


def test_lookup_rejects_garbage(tree):
    image, header, items = tree
    fn = BTreeLookup()
    scratch = bytearray(btree_lookup.encode_query(items[0][0], NODE))
    assert fn.step(b"\xff" * NODE, scratch, StepContext()) == Fallback(FallbackReason.BAD_NODE)
    assert fn.step(image[:NODE // 2], scratch, StepContext()) == Fallback(FallbackReason.SPLIT_BLOCK)
    assert fn.step(image[:NODE], bytearray(b"junk"), StepContext()) == Fallback(FallbackReason.BAD_LAYOUT)

    # запись лога с чужим ключом
    wrong = bytearray(btree_lookup.encode_query(items[0][0] + 10**9, NODE, header.log_offset))
    log_block = image[header.log_offset:header.log_offset + NODE]
    assert fn.step(log_block, wrong, StepContext()) == Fallback(FallbackReason.BAD_NODE)


def test_lookup_respects_step_budget(tree):
    image, header, items = tree
    with pytest.raises(StepLimitExceeded):
        run_local(BTreeLookup(), [image], 0, header.root_offset, NODE,
                  btree_lookup.encode_query(items[0][0], NODE), max_steps=2)


def range_oracle(items, lo, hi):
    return [(k, v) for k, v in items if lo <= k <= hi]


def test_range_single_page(tree):
    image, header, items = tree
    lo, hi = items[3][0], items[40][0]
    _, raw, _ = run_local(BTreeRange(), [image], 0, header.root_offset, NODE,
                          btree_range.encode_query(lo, hi, NODE, 1000))
    pairs, token = btree_range.decode_result(raw)
    assert pairs == range_oracle(items, lo, hi)
    assert token is None


def test_range_pages_continue_from_last_key(tree):
    image, header, items = tree
    lo, hi = items[0][0] - 1, items[-1][0] + 1
    collected, after, pages = [], None, 0
    while True:
        _, raw, _ = run_local(BTreeRange(), [image], 0, header.root_offset, NODE,
                              btree_range.encode_query(lo, hi, NODE, 7, after_key=after))
        pairs, token = btree_range.decode_result(raw)
        assert len(pairs) <= 7
        collected.extend(pairs)
        pages += 1
        if token is None:
            break
        after = token
    assert collected == items
    assert pages >= len(items) // 7


def test_range_empty_and_inverted(tree):
    image, header, items = tree
    last = items[-1][0]
    for lo, hi in ((last + 1, last + 5), (items[20][0], items[10][0])):
        _, raw, _ = run_local(BTreeRange(), [image], 0, header.root_offset, NODE,
                              btree_range.encode_query(lo, hi, NODE, 10))
        assert btree_range.decode_result(raw) == ([], None)


def test_range_result_fits_scratch_limit():
    assert btree_range.max_results_for(NODE) > 0
    assert btree_range.max_results_for(NODE) * btree_range.PAIR.size < 64 * 1024


@pytest.fixture(scope="module")
def ssts():
    writer = SstWriter(block_size=512, data_block_bytes=256)
    newer = writer.build([(b"k%03d" % i, TOMBSTONE if i % 10 == 0 else b"new%03d" % i)
                          for i in range(0, 100, 2)])
    older = writer.build([(b"k%03d" % i, b"old%03d" % i) for i in range(100)])
    return newer, older


def chain_plan(images):
    return [SstPlanEntry(fd, SstStage.INDEX_BLOCK, img.index.offset, img.index.length)
            for fd, img in enumerate(images)]


def chain(images, key, plan=None):
    plan = plan or chain_plan(images)
    first = plan[0]
    _, raw, reads = run_local(SstChain(), [img.data for img in images], first.fd_index, first.offset,
                              first.length, sst_chain.encode_query(key, plan))
    return sst_chain.decode_result(raw), reads


def test_chain_newest_version_wins(ssts):
    assert chain(ssts, b"k004")[0] == (sst_chain.FOUND, b"new004")
    assert chain(ssts, b"k005")[0] == (sst_chain.FOUND, b"old005")
    assert chain(ssts, b"k010")[0] == (sst_chain.DELETED, None)
    assert chain(ssts, b"zzz")[0] == (sst_chain.EXHAUSTED, None)


def test_chain_reads(ssts):
    # индекс и блок данных первого файла
    assert chain(ssts, b"k004")[1] == 2
    # первый файл без ключа: индекс + данные, затем индекс + данные второго
    assert chain(ssts, b"k005")[1] == 4


def test_chain_starts_from_cached_index(ssts):
    newer, older = ssts
    handle = older.data_handles[0]
    plan = [SstPlanEntry(1, SstStage.DATA_BLOCK, handle.offset, handle.length)]
    result, reads = chain(ssts, b"k001", plan)
    assert result == (sst_chain.FOUND, b"old001")
    assert reads == 1


def test_chain_fallbacks(ssts):
    newer, _ = ssts
    fn = SstChain()
    scratch = bytearray(sst_chain.encode_query(b"k004", chain_plan(ssts)))
    index = newer.data[newer.index.offset:newer.index.offset + newer.index.length]
    assert fn.step(index[:-1], bytearray(scratch), StepContext()) == Fallback(FallbackReason.SPLIT_BLOCK)
    assert fn.step(b"\0" * len(index), bytearray(scratch), StepContext()) == Fallback(FallbackReason.PARSE_ERROR)
    assert fn.step(index, bytearray(b"nope"), StepContext()) == Fallback(FallbackReason.BAD_LAYOUT)


def test_chain_query_validation():
    with pytest.raises(ValueError):
        sst_chain.encode_query(b"k", [])
    with pytest.raises(ValueError):
        sst_chain.decode_result(b"\0" * 4)


def test_node_encoding_round_trip():
    node = Node(KIND_LEAF, 2, [1, 5, 9], [100, 200, 300], next_leaf=4096)
    assert decode_node(node.encode(NODE)) == node
    assert node.child_for(6) == 200
    assert node.find(5) == 200 and node.find(6) is None


def test_range_page_stops_at_read_budget(tree):
    image, header, items = tree
    lo, hi = items[0][0], items[-1][0]
    collected, after, pages = [], None, 0
    while True:
        _, raw, reads = run_local(BTreeRange(), [image], 0, header.root_offset, NODE,
                                  btree_range.encode_query(lo, hi, NODE, 1000, after_key=after, max_reads=12))
        pairs, token = btree_range.decode_result(raw)
        assert reads <= 12
        assert pairs or token is None
        collected.extend(pairs)
        pages += 1
        if token is None:
            break
        assert token == pairs[-1][0]
        after = token
    assert collected == items
    assert pages > 1


def test_range_budget_validation():
    with pytest.raises(ValueError):
        btree_range.encode_query(1, 2, NODE, 10, max_reads=-1)
    with pytest.raises(ValueError):
        btree_range.encode_query(1, 2, NODE, 10, max_reads=btree_range.MAX_READS + 1)
