"""BPF-KV: B+-дерево с узлами фиксированного размера и значениями в неупорядоченном логе.

Глубина дерева считается вместе с уровнем лога: при depth = 7 поиск без
кэша читает 6 узлов и один блок лога. Хост держит в памяти верхние уровни
(LevelCache) и отправляет на таргет только оставшуюся часть цепочки.
"""
import logging
import math
import random
import threading
from typing import Optional, Sequence

from src.core.config import settings
from src.core.errors import CorruptNodeError, SizingError
from src.functions import btree_lookup, btree_range
from src.functions.enums import FunctionId
from src.host.client import FileHandle, HostClient, PushdownResult, RequestStats
from src.host.enums import AbortReason, Outcome
from src.bpfkv.layout import (
    KIND_INTERNAL,
    KIND_LEAF,
    LOG_RECORD,
    VALUE_SIZE,
    FileHeader,
    Node,
    decode_node,
    log_block_offset,
    max_fanout,
    records_per_log_block,
)
from src.bpfkv.schemas import BpfKvStats
from src.lsmkv.enums import ReadMode

logger = logging.getLogger(__name__)

MAX_DEPTH = 16

_MISMATCH_REASONS = {AbortReason.PRE_CHECK, AbortReason.POST_CHECK, AbortReason.VERSION_MISMATCH}


def node_levels_for(n_keys: int, fanout: int) -> int:
    """Число уровней узлов (корень..листья) для n_keys ключей."""
    nodes = math.ceil(n_keys / fanout)
    levels = 1
    while nodes > 1:
        nodes = math.ceil(nodes / fanout)
        levels += 1
    return levels


def keys_for_depth(depth: int, fanout: int) -> int:
    """Наименьшее число ключей, при котором дерево получает ровно depth уровней чтения."""
    if depth < 2:
        raise SizingError(f"Минимальная глубина дерева 2, запрошено {depth}")
    return 1 if depth == 2 else fanout ** (depth - 2) + 1


def generate_items(n_keys: int, seed: int = 0, key_space: Optional[int] = None) -> list[tuple[int, bytes]]:
    """Отсортированные уникальные ключи u64 со случайными 64-байтными значениями."""
    rng = random.Random(seed)
    space = key_space or max(n_keys * 8, 1024)
    keys = sorted(rng.sample(range(1, space + 1), n_keys))
    return [(k, rng.randbytes(VALUE_SIZE)) for k in keys]


def build_image(items: Sequence[tuple[int, bytes]], depth: int, fanout: int, node_size: int,
                block_size: int, seed: int = 0) -> tuple[bytes, FileHeader]:
    n = len(items)
    if n == 0:
        raise SizingError("Дерево без ключей")
    if not 2 <= fanout <= max_fanout(node_size):
        raise SizingError(f"Fanout {fanout} вне [2, {max_fanout(node_size)}] для узла {node_size} байт")
    if node_size % block_size:
        raise SizingError(f"Размер узла {node_size} не кратен блоку {block_size}")
    if not 2 <= depth <= MAX_DEPTH:
        raise SizingError(f"Глубина {depth} вне [2, {MAX_DEPTH}]")
    levels_needed = node_levels_for(n, fanout)
    if levels_needed != depth - 1:
        raise SizingError(
            f"{n} ключей при fanout {fanout} дают глубину {levels_needed + 1}, запрошено {depth}"
        )
    if any(a[0] >= b[0] for a, b in zip(items, items[1:])):
        raise SizingError("Ключи должны быть уникальны и отсортированы")

    # уровни снизу вверх: каждый узел хранит (ключи, индексы детей)
    leaves = [list(range(i, min(i + fanout, n))) for i in range(0, n, fanout)]
    tree: list[list[list[int]]] = [leaves]
    while len(tree[-1]) > 1:
        below = tree[-1]
        tree.append([list(range(i, min(i + fanout, len(below)))) for i in range(0, len(below), fanout)])
    tree.reverse()

    # смещения: заголовок, затем уровни от корня
    offset = node_size
    level_offsets = []
    for level in tree:
        level_offsets.append(offset)
        offset += len(level) * node_size
    log_offset = offset
    rpb = records_per_log_block(node_size)
    log_blocks = math.ceil(n / rpb)

    rng = random.Random(seed)
    order = list(range(n))
    rng.shuffle(order)
    pointers = [0] * n
    log = bytearray(log_blocks * node_size)
    for slot, idx in enumerate(order):
        rel = (slot // rpb) * node_size + (slot % rpb) * LOG_RECORD.size
        LOG_RECORD.pack_into(log, rel, items[idx][0], items[idx][1])
        pointers[idx] = log_offset + rel

    min_keys: list[list[int]] = [[] for _ in tree]
    nodes: list[list[Node]] = [[] for _ in tree]
    leaf_level = len(tree) - 1
    for li, children in enumerate(tree[leaf_level]):
        keys = [items[i][0] for i in children]
        nxt = level_offsets[leaf_level] + (li + 1) * node_size if li + 1 < len(tree[leaf_level]) else 0
        nodes[leaf_level].append(Node(KIND_LEAF, leaf_level, keys, [pointers[i] for i in children], nxt))
        min_keys[leaf_level].append(keys[0])
    for level in range(leaf_level - 1, -1, -1):
        for children in tree[level]:
            keys = [min_keys[level + 1][c] for c in children]
            ptrs = [level_offsets[level + 1] + c * node_size for c in children]
            nodes[level].append(Node(KIND_INTERNAL, level, keys, ptrs))
            min_keys[level].append(keys[0])

    header = FileHeader(depth, fanout, node_size, n, level_offsets[0], level_offsets[-1], log_offset, log_blocks)
    parts = [header.encode()]
    for level in nodes:
        parts.extend(node.encode(node_size) for node in level)
    parts.append(bytes(log))
    return b"".join(parts), header


class LevelCache:
    """Верхние уровни дерева в памяти хоста, по смещению узла."""

    def __init__(self, cached_levels: int):
        self.cached_levels = cached_levels
        self.nodes: dict[int, Node] = {}

    def get(self, offset: int) -> Optional[Node]:
        return self.nodes.get(offset)

    def __len__(self) -> int:
        return len(self.nodes)


class BpfKvStore:
    def __init__(self, client: HostClient, handle: FileHandle, header: FileHeader,
                 mode: ReadMode = ReadMode.PUSHDOWN, cached_levels: int = 0):
        self.client = client
        self.handle = handle
        self.header = header
        self.node_size = header.node_size
        self.mode = ReadMode(mode)
        self.cache = LevelCache(max(0, min(cached_levels, header.depth - 1)))
        self._stats_lock = threading.Lock()
        self._stats = BpfKvStats()

    @classmethod
    def create(
        cls,
        client: HostClient,
        items: Sequence[tuple[int, bytes]],
        depth: int,
        fanout: int = settings.BTREE_FANOUT,
        node_size: int = settings.BTREE_NODE_SIZE,
        *,
        name: str = "bpfkv",
        mode: ReadMode = ReadMode.PUSHDOWN,
        cached_levels: int = 0,
        seed: int = 0,
    ) -> "BpfKvStore":
        image, header = build_image(items, depth, fanout, node_size, client.store.block_size, seed)
        inode_id = client.store.create_file(name)
        client.store.append(inode_id, image)
        client.sync.kick(timeout=settings.REQUEST_TIMEOUT_S)
        logger.info(
            f"BPF-KV построено: {header.n_keys} ключей, глубина {depth}, fanout {fanout}, "
            f"{len(image) // node_size} блоков"
        )
        return cls.open(client, inode_id, mode=mode, cached_levels=cached_levels)

    @classmethod
    def open(cls, client: HostClient, inode_id: int, mode: ReadMode = ReadMode.PUSHDOWN,
             cached_levels: int = 0) -> "BpfKvStore":
        handle = client.open(inode_id)
        raw = client.read_remote(handle, 0, client.store.block_size)
        header = FileHeader.decode(raw)
        store = cls(client, handle, header, mode, cached_levels)
        store.load_cache()
        return store

    def load_cache(self) -> None:
        """Чтение верхних уровней в память; стоит по одному обмену на узел."""
        self.cache.nodes.clear()
        frontier = [self.header.root_offset]
        for _ in range(self.cache.cached_levels):
            nxt = []
            for offset in frontier:
                node = decode_node(self.client.read_remote(self.handle, offset, self.node_size))
                self.cache.nodes[offset] = node
                if not node.is_leaf:
                    nxt.extend(node.pointers)
            frontier = nxt

    def close(self) -> None:
        self.handle.close()

    def _bump(self, counter: str) -> None:
        with self._stats_lock:
            setattr(self._stats, counter, getattr(self._stats, counter) + 1)

    def stats(self) -> BpfKvStats:
        with self._stats_lock:
            return self._stats.model_copy()

    def _run(self, function_id: int, offset: int, scratch: bytes, decode) -> PushdownResult:
        files = [self.handle]
        if self.mode == ReadMode.BASELINE:
            return self.client.fallback_read_path(files, offset, self.node_size, function_id, scratch, decode)
        self._bump("pushdowns")
        result = self.client.read_pushdown(files, offset, self.node_size, function_id, scratch, decode)
        if not result.aborted:
            return result
        self._bump("mismatches" if result.reason in _MISMATCH_REASONS else "fallbacks")
        local = self.client.fallback_read_path(files, offset, self.node_size, function_id, scratch, decode)
        local.stats.merge(result.stats)
        local.reason = result.reason
        return local

    def lookup(self, key: int) -> PushdownResult:
        self._bump("gets")
        offset = self.header.root_offset
        node = self.cache.get(offset)
        while node is not None:
            if node.is_leaf:
                ptr = node.find(key)
                if ptr is None:
                    return PushdownResult(Outcome.NOT_FOUND)
                return self._run(FunctionId.BTREE_LOOKUP, log_block_offset(ptr, self.node_size),
                                 btree_lookup.encode_query(key, self.node_size, ptr), _lookup_value)
            offset = node.child_for(key)
            node = self.cache.get(offset)
        return self._run(FunctionId.BTREE_LOOKUP, offset,
                         btree_lookup.encode_query(key, self.node_size), _lookup_value)

    def get(self, key: int) -> Optional[bytes]:
        return self.lookup(key).value

    def _range_start(self, key: int) -> int:
        """Первый узел, который надо читать удаленно; лист всегда читается с таргета."""
        offset = self.header.root_offset
        node = self.cache.get(offset)
        while node is not None and not node.is_leaf:
            offset = node.child_for(key)
            node = self.cache.get(offset)
        return offset

    def scan(self, lo: int, hi: int, page_size: Optional[int] = None) -> tuple[list[tuple[int, bytes]], RequestStats]:
        """Все пары [lo, hi] по порядку ключей; страницы результата продолжаются по последнему ключу."""
        self._bump("ranges")
        page = page_size or btree_range.max_results_for(self.node_size)
        # страница укладывается в лимит повторных чтений одного вызова на таргете
        reads = min(btree_range.MAX_READS, self.client.limits.max_resubmissions + 1)
        stats = RequestStats()
        pairs: list[tuple[int, bytes]] = []
        after: Optional[int] = None
        while True:
            if after is not None and after >= btree_range.MAX_KEY:
                break
            self._bump("range_pages")
            start = lo if after is None else max(lo, after + 1)
            scratch = btree_range.encode_query(lo, hi, self.node_size, page, after_key=after,
                                               max_reads=reads)
            result = self._run(FunctionId.BTREE_RANGE, self._range_start(start), scratch,
                               btree_range.decode_result)
            stats.merge(result.stats)
            chunk, token = result.value
            pairs.extend(chunk)
            if token is None:
                break
            after = token
        return pairs, stats

    def get_range(self, lo: int, hi: int, page_size: Optional[int] = None) -> list[tuple[int, bytes]]:
        return self.scan(lo, hi, page_size)[0]


def _lookup_value(raw: bytes) -> Optional[bytes]:
    try:
        found, value = btree_lookup.decode_result(raw)
    except ValueError as e:
        raise CorruptNodeError(f"Некорректный результат поиска: {e}") from e
    return value if found else None
