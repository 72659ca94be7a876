"""Командная строка нагрузочного стенда: python -m src.bench {run,compare,sweep}."""
import argparse
import functools
import logging
import sys
from typing import Optional, Sequence

from pydantic import BaseModel

from src.bench.enums import Distribution, System, Workload
from src.bench.metrics import format_table
from src.bench.runner import DEFAULT_SWEEP_RATES, Testbed, compare, run, sweep_sampling
from src.bench.schemas import CacheConfig, WorkloadSpec
from src.core.config import settings
from src.core.errors import StorageError
from src.core.log import setup_logging
from src.lsmkv.enums import CachePolicy, ReadMode

logger = logging.getLogger(__name__)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--system", choices=[s.value for s in System], default=System.LSMKV.value)
    parser.add_argument("--workload", choices=[w.value for w in Workload], default=Workload.YCSB_C.value)
    parser.add_argument("--distribution", choices=[d.value for d in Distribution], default=None,
                        help="По умолчанию зависит от нагрузки")
    parser.add_argument("--keys", type=int, default=10_000)
    parser.add_argument("--ops", type=int, default=10_000)
    parser.add_argument("--value-size", type=int, default=100)
    parser.add_argument("--scan-length", type=int, default=100)
    parser.add_argument("--trace", default=None, help="CSV-трасса op,key,value_size")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--cache-mb", type=float, default=settings.CACHE_BYTES / (1 << 20))
    parser.add_argument("--sampling", type=float, default=settings.SAMPLING_RATE)
    parser.add_argument("--cache-policy", choices=[p.value for p in CachePolicy],
                        default=settings.PUSHDOWN_CACHE_POLICY)
    parser.add_argument("--bloom-bits", type=int, default=settings.BLOOM_BITS_PER_KEY)
    parser.add_argument("--cached-levels", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--connections", type=int, default=1)
    parser.add_argument("--target", default=None, help="host:port таргета; без него таргет запускается в процессе")
    parser.add_argument("--sync-target", default=None)
    parser.add_argument("--backing", default=settings.BACKING_PATH, help="Общий с таргетом файл устройства")
    parser.add_argument("--block-size", type=int, default=settings.BLOCK_SIZE)
    parser.add_argument("--capacity-blocks", type=int, default=settings.CAPACITY_BLOCKS)
    parser.add_argument("--report", default=None, help="Путь к JSON-отчету")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description="Нагрузочный стенд pushdown-хранилища")
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="Один прогон")
    _common(run_parser)
    run_parser.add_argument("--mode", choices=[m.value for m in ReadMode], default=ReadMode.PUSHDOWN.value)

    compare_parser = sub.add_parser("compare", help="Парный прогон baseline и pushdown")
    _common(compare_parser)

    sweep_parser = sub.add_parser("sweep", help="Прогоны LSM с разной частотой выборки")
    _common(sweep_parser)
    sweep_parser.add_argument("--rates", type=float, nargs="+", default=list(DEFAULT_SWEEP_RATES))
    return parser


def _spec(args: argparse.Namespace) -> WorkloadSpec:
    return WorkloadSpec(
        workload=Workload(args.workload),
        distribution=Distribution(args.distribution) if args.distribution else None,
        n_keys=args.keys,
        n_ops=args.ops,
        value_size=args.value_size,
        scan_length=args.scan_length,
        seed=args.seed,
        trace_path=args.trace,
    )


def _cache(args: argparse.Namespace) -> CacheConfig:
    return CacheConfig(
        cache_bytes=int(args.cache_mb * (1 << 20)),
        sampling_rate=args.sampling,
        cache_policy=CachePolicy(args.cache_policy),
        bloom_bits_per_key=args.bloom_bits,
        cached_levels=args.cached_levels,
    )


def _testbed(args: argparse.Namespace):
    if args.target:
        return functools.partial(Testbed.remote, args.target, args.backing, args.sync_target,
                                 args.block_size, args.capacity_blocks, args.connections)
    return functools.partial(Testbed.local, args.block_size, args.capacity_blocks)


def _write_report(path: Optional[str], report: BaseModel) -> None:
    if not path:
        return
    with open(path, "w") as f:
        f.write(report.model_dump_json(indent=2))
    logger.info(f"Отчет записан в {path}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    spec, cache, bed = _spec(args), _cache(args), _testbed(args)
    system = System(args.system)
    try:
        if args.command == "run":
            report = run(spec, system, ReadMode(args.mode), cache, args.workers, bed)
            print(format_table([report]))
        elif args.command == "compare":
            report = compare(spec, system, cache, args.workers, bed)
            print(format_table([report.baseline, report.pushdown]))
            print(f"ответы совпадают: {report.digests_match}, "
                  f"обмены: {report.round_trip_ratio:.3f}, байты: {report.bytes_received_ratio:.3f}")
        else:
            report = sweep_sampling(spec, args.rates, cache, args.workers, bed)
            print(format_table(report.runs, [f"{rate:g}" for rate in report.rates]))
    except (StorageError, ValueError) as e:
        logger.error(f"Прогон не выполнен: {e}")
        return 1
    _write_report(args.report, report)
    if args.command == "compare" and not report.digests_match:
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
