"""commkit 集合通信基准测试 - 命令行入口

在模拟网络上对 11 种集合操作做 mpiBench 风格的延迟扫描，
比较 ergonomic API 与直接驱动 fabric 的 raw 模式。
rank 数代替了物理集群上的节点数。
"""
import argparse
import logging
import sys
from typing import Optional

from commkit import config
from commkit.errors import CommError
from commkit.services.bench_service import (
    BenchConfig,
    emit_csv,
    emit_summary,
    geometric_mean,
    overhead_ratios,
    run_sweep,
    summary_path,
)

logger = logging.getLogger("commkit.bench")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bench",
        description="Collective latency sweep over the simulated fabric. "
                    "The rank count stands in for the node count of a physical cluster.",
    )
    parser.add_argument("--ranks", type=int, default=config.BENCH_RANKS,
                        help="number of simulated ranks (substitutes for node count)")
    parser.add_argument("--min-exp", type=int, default=config.BENCH_MIN_EXP,
                        help="smallest message length is 2^MIN_EXP bytes")
    parser.add_argument("--max-exp", type=int, default=config.BENCH_MAX_EXP,
                        help="largest message length is 2^MAX_EXP bytes")
    parser.add_argument("--iters", type=int, default=config.BENCH_ITERATIONS,
                        help="timed rounds per operation and length")
    parser.add_argument("--ops", default=",".join(config.BENCH_OPERATIONS),
                        help="comma-separated collective names")
    parser.add_argument("--mode", choices=["ergonomic", "raw", "both"], default="both")
    parser.add_argument("--output", default=config.BENCH_OUTPUT, help="CSV file for per-operation records")
    parser.add_argument("--log-file", default=None, help="also write logs to this file")
    return parser


def setup_logging(log_file: Optional[str] = None) -> None:
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(level=config.LOG_LEVEL, format=config.LOG_FORMAT, handlers=handlers, force=True)


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_file)

    cfg = BenchConfig(
        ranks=args.ranks,
        min_exp=args.min_exp,
        max_exp=args.max_exp,
        iterations=args.iters,
        operations=[op.strip() for op in args.ops.split(",") if op.strip()],
        modes=list(config.BENCH_MODES) if args.mode == "both" else [args.mode],
        output=args.output,
    )

    logger.info("=" * 50)
    logger.info(f"[BENCH] ranks={cfg.ranks} lengths=2^{cfg.min_exp}..2^{cfg.max_exp} "
                f"iters={cfg.iterations} modes={cfg.modes}")
    logger.info("=" * 50)
    try:
        records = run_sweep(cfg)
        summaries = geometric_mean(records)
        emit_csv(records, cfg.output)
        emit_summary(summaries, summary_path(cfg.output))
    except CommError as e:
        logger.error(f"[BENCH] Failed: {e.code}")
        print(str(e.code), file=sys.stderr)
        return 1

    for length, ratio in overhead_ratios(summaries).items():
        logger.info(f"[BENCH] {length:>7} bytes: ergonomic/raw = {ratio:.3f}")
    logger.info("[BENCH] Done")
    return 0


if __name__ == "__main__":
    sys.exit(main())
