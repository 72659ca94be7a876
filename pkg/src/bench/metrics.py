import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from src.bench.enums import OpKind
from src.bench.schemas import BenchReport


@dataclass(slots=True)
class WorkerCounters:
    """Счетчики одного потока нагрузки; сливаются после завершения прогона."""

    latencies_ns: list[int] = field(default_factory=list)
    reads: int = 0
    updates: int = 0
    inserts: int = 0
    scans: int = 0
    found: int = 0
    not_found: int = 0

    def record(self, kind: OpKind, latency_ns: int, found: Optional[bool] = None) -> None:
        self.latencies_ns.append(latency_ns)
        if kind == OpKind.READ or kind == OpKind.RMW:
            self.reads += 1
        if kind == OpKind.UPDATE or kind == OpKind.RMW:
            self.updates += 1
        elif kind == OpKind.INSERT:
            self.inserts += 1
        elif kind == OpKind.SCAN:
            self.scans += 1
        if found is True:
            self.found += 1
        elif found is False:
            self.not_found += 1

    def merge(self, other: "WorkerCounters") -> None:
        self.latencies_ns.extend(other.latencies_ns)
        self.reads += other.reads
        self.updates += other.updates
        self.inserts += other.inserts
        self.scans += other.scans
        self.found += other.found
        self.not_found += other.not_found


def percentiles_us(latencies_ns: Sequence[int], qs: Iterable[float] = (50, 99)) -> list[float]:
    if not latencies_ns:
        return [0.0 for _ in qs]
    values = np.percentile(np.asarray(latencies_ns, dtype=np.float64), list(qs))
    return [float(v) / 1000.0 for v in values]


def result_digest(results: Sequence[Optional[bytes]]) -> str:
    """Хеш ответов в порядке операций; None (нет ключа) отличается от пустого значения."""
    h = hashlib.blake2b(digest_size=16)
    for value in results:
        if value is None:
            h.update(b"\x00")
        else:
            h.update(b"\x01" + len(value).to_bytes(4, "little") + value)
    return h.hexdigest()


_COLUMNS = (
    ("mode", lambda r: r.mode.value),
    ("ops/s", lambda r: f"{r.throughput_ops:.0f}"),
    ("p50 us", lambda r: f"{r.latency_p50_us:.1f}"),
    ("p99 us", lambda r: f"{r.latency_p99_us:.1f}"),
    ("rtt", lambda r: str(r.round_trips)),
    ("dev reads", lambda r: str(r.device_reads)),
    ("resub", lambda r: str(r.resubmissions)),
    ("bytes rx", lambda r: str(r.bytes_received)),
    ("sampled", lambda r: str(r.sampled_count)),
    ("mismatch", lambda r: str(r.mismatch_count)),
    ("fallback", lambda r: str(r.fallback_count)),
    ("hit rate", lambda r: f"{r.cache_hit_rate:.3f}"),
)


def format_table(reports: Sequence[BenchReport], label: Optional[Sequence[str]] = None) -> str:
    headers = (["run"] if label else []) + [name for name, _ in _COLUMNS]
    rows = []
    for i, report in enumerate(reports):
        row = [fmt(report) for _, fmt in _COLUMNS]
        rows.append(([label[i]] if label else []) + row)
    widths = [max(len(h), *(len(r[c]) for r in rows)) if rows else len(h) for c, h in enumerate(headers)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(headers, widths))]
    lines.extend("  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in rows)
    return "\n".join(lines)
