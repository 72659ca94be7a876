"""Генерация потока операций для YCSB-подобных нагрузок.

Ключи задаются индексами: индекс i < n_keys загружен до начала замера,
индексы от n_keys и выше появляются через INSERT. Один и тот же seed
всегда дает один и тот же поток.
"""
import csv
import logging
from typing import NamedTuple, Optional

import numpy as np

from src.bench.enums import Distribution, OpKind, Workload
from src.bench.schemas import WorkloadSpec
from src.core.errors import BenchError

logger = logging.getLogger(__name__)

ZIPF_THETA = 0.99

# доли (read, update, insert, rmw, scan)
MIXES: dict[Workload, tuple[float, float, float, float, float]] = {
    Workload.YCSB_A: (0.5, 0.5, 0.0, 0.0, 0.0),
    Workload.YCSB_B: (0.95, 0.05, 0.0, 0.0, 0.0),
    Workload.YCSB_C: (1.0, 0.0, 0.0, 0.0, 0.0),
    Workload.YCSB_D: (0.95, 0.0, 0.05, 0.0, 0.0),
    Workload.YCSB_F: (0.5, 0.0, 0.0, 0.5, 0.0),
    Workload.UNIFORM_READ: (1.0, 0.0, 0.0, 0.0, 0.0),
    Workload.UNIFORM_5050: (0.5, 0.5, 0.0, 0.0, 0.0),
    Workload.RANGE_READ: (0.0, 0.0, 0.0, 0.0, 1.0),
}

DEFAULT_DISTRIBUTION = {
    Workload.YCSB_D: Distribution.LATEST,
    Workload.UNIFORM_READ: Distribution.UNIFORM,
    Workload.UNIFORM_5050: Distribution.UNIFORM,
    Workload.RANGE_READ: Distribution.UNIFORM,
}

_KINDS = (OpKind.READ, OpKind.UPDATE, OpKind.INSERT, OpKind.RMW, OpKind.SCAN)


class Op(NamedTuple):
    kind: OpKind
    key: int
    value: Optional[bytes] = None
    span: int = 0


def distribution_for(spec: WorkloadSpec) -> Distribution:
    if spec.distribution is not None:
        return spec.distribution
    return DEFAULT_DISTRIBUTION.get(spec.workload, Distribution.ZIPFIAN)


def lsm_key(index: int) -> bytes:
    return f"user{index:012d}".encode()


class ZipfianGenerator:
    """Zipf(theta) над рангами [0, count) по накопленным весам, без отбрасывания.

    Верхнюю границу count можно сужать при каждом вызове: это нужно для
    распределения latest, где пространство ключей растет по мере вставок.
    """

    def __init__(self, max_items: int, rng: np.random.Generator, theta: float = ZIPF_THETA):
        if max_items <= 0:
            raise BenchError("Пустое пространство ключей")
        weights = 1.0 / np.power(np.arange(1, max_items + 1, dtype=np.float64), theta)
        self._cumulative = np.cumsum(weights)
        self._rng = rng

    def rank(self, count: int) -> int:
        u = self._rng.random() * self._cumulative[count - 1]
        return min(int(np.searchsorted(self._cumulative, u, side="right")), count - 1)


class KeyChooser:
    def __init__(self, distribution: Distribution, n_keys: int, max_keys: int, rng: np.random.Generator):
        self.distribution = distribution
        self.rng = rng
        self.count = n_keys
        self._zipf = ZipfianGenerator(max_keys, rng) if distribution != Distribution.UNIFORM else None
        # горячие ранги разбросаны по пространству ключей
        self._scramble = rng.permutation(n_keys) if distribution == Distribution.ZIPFIAN else None

    def next_key(self) -> int:
        if self.distribution == Distribution.UNIFORM:
            return int(self.rng.integers(0, self.count))
        rank = self._zipf.rank(self.count)
        if self.distribution == Distribution.LATEST:
            return self.count - 1 - rank
        if rank < len(self._scramble):
            return int(self._scramble[rank])
        return rank

    def next_insert(self) -> int:
        key = self.count
        self.count += 1
        return key


def generate_ops(spec: WorkloadSpec) -> list[Op]:
    if spec.workload == Workload.TRACE:
        if not spec.trace_path:
            raise BenchError("Для нагрузки trace нужен путь к файлу трассы")
        return load_trace(spec.trace_path, spec.seed)
    rng = np.random.default_rng(spec.seed)
    mix = MIXES[spec.workload]
    max_keys = spec.n_keys + spec.n_ops if mix[2] else spec.n_keys
    chooser = KeyChooser(distribution_for(spec), spec.n_keys, max_keys, rng)
    kinds = rng.choice(len(_KINDS), size=spec.n_ops, p=np.array(mix))
    ops: list[Op] = []
    for k in kinds:
        kind = _KINDS[int(k)]
        if kind == OpKind.INSERT:
            ops.append(Op(kind, chooser.next_insert(), rng.bytes(spec.value_size)))
        elif kind in (OpKind.UPDATE, OpKind.RMW):
            ops.append(Op(kind, chooser.next_key(), rng.bytes(spec.value_size)))
        elif kind == OpKind.SCAN:
            ops.append(Op(kind, chooser.next_key(), span=spec.scan_length))
        else:
            ops.append(Op(kind, chooser.next_key()))
    logger.debug(f"Сгенерировано {len(ops)} операций {spec.workload.value}")
    return ops


def load_trace(path: str, seed: int = 0) -> list[Op]:
    """Трасса CSV со столбцами op,key,value_size; строка заголовка необязательна."""
    rng = np.random.default_rng(seed)
    ops: list[Op] = []
    try:
        with open(path, newline="") as f:
            for lineno, row in enumerate(csv.reader(f), start=1):
                if not row or row[0].strip().lower() == "op":
                    continue
                if len(row) < 2:
                    raise BenchError(f"{path}:{lineno}: ожидается op,key[,value_size]")
                try:
                    kind = OpKind(row[0].strip().lower())
                    key = int(row[1])
                    size = int(row[2]) if len(row) > 2 and row[2].strip() else 0
                except ValueError as e:
                    raise BenchError(f"{path}:{lineno}: {e}") from e
                if key < 0:
                    raise BenchError(f"{path}:{lineno}: отрицательный ключ {key}")
                if kind in (OpKind.UPDATE, OpKind.INSERT, OpKind.RMW):
                    ops.append(Op(kind, key, rng.bytes(max(size, 1))))
                elif kind == OpKind.SCAN:
                    ops.append(Op(kind, key, span=max(size, 1)))
                else:
                    ops.append(Op(kind, key))
    except OSError as e:
        raise BenchError(f"Не удалось прочитать трассу {path}: {e}") from e
    logger.info(f"Трасса {path}: {len(ops)} операций")
    return ops


def write_trace(path: str, ops: list[Op]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["op", "key", "value_size"])
        for op in ops:
            size = len(op.value) if op.value is not None else op.span
            writer.writerow([op.kind.value, op.key, size])
