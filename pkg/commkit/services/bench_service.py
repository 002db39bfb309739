"""集合通信基准测试服务

对每个 (操作, 消息长度) 先做预热，再计时若干轮，取去掉首尾各 10% 后的平均。
两种模式在同一个 world 中逐轮交替，每轮计时前做一次 raw barrier。
ergonomic 模式经过完整的通信子 API；raw 模式直接在 fabric 上运行同一套调度，
跳过缓冲区适配、Request 与错误策略。两种模式的结果缓冲区校验和必须一致。
"""
import gc
import logging
import math
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd

from commkit import config
from commkit.api import collectives
from commkit.api.comm import Communicator, world
from commkit.errors import ErrorClass, fail
from commkit.services.fabric import Fabric, FabricConfig, spawn_world

logger = logging.getLogger(__name__)

RECORD_COLUMNS = ["op", "length_bytes", "mode", "mean_ns", "reps"]
SUMMARY_COLUMNS = ["length_bytes", "mode", "geomean_ns"]

# 每个 rank 的发送数据是 world_size 倍长度的操作
_PER_RANK_BLOCKS = {"scatter", "all_to_all", "reduce_scatter"}
_EMPTY = np.zeros(0, dtype=np.uint8)


@dataclass
class BenchConfig:
    ranks: int = config.BENCH_RANKS
    min_exp: int = config.BENCH_MIN_EXP
    max_exp: int = config.BENCH_MAX_EXP
    iterations: int = config.BENCH_ITERATIONS
    operations: list[str] = field(default_factory=lambda: list(config.BENCH_OPERATIONS))
    modes: list[str] = field(default_factory=lambda: list(config.BENCH_MODES))
    output: str = config.BENCH_OUTPUT
    warmup: int = config.BENCH_WARMUP_ROUNDS
    seed: int = config.DEFAULT_SEED

    def validate(self) -> None:
        if self.ranks < 1:
            raise fail(ErrorClass.INVALID_ARGUMENT, 16, f"ranks must be >= 1, got {self.ranks}")
        if not 0 < self.min_exp <= self.max_exp:
            raise fail(ErrorClass.INVALID_ARGUMENT, 16,
                       f"need 0 < min_exp <= max_exp, got {self.min_exp}..{self.max_exp}")
        if self.iterations < 1:
            raise fail(ErrorClass.INVALID_ARGUMENT, 16, f"iterations must be >= 1, got {self.iterations}")
        unknown = [op for op in self.operations if op not in collectives.COLLECTIVES]
        if unknown:
            raise fail(ErrorClass.INVALID_ARGUMENT, 14, f"unknown operations: {', '.join(unknown)}")
        bad_modes = [m for m in self.modes if m not in config.BENCH_MODES]
        if bad_modes or not self.modes or len(set(self.modes)) != len(self.modes):
            raise fail(ErrorClass.INVALID_ARGUMENT, 16, f"modes must be a non-empty subset of {config.BENCH_MODES}")

    @property
    def lengths(self) -> list[int]:
        return [2 ** n for n in range(self.min_exp, self.max_exp + 1)]


@dataclass(frozen=True)
class BenchRecord:
    op: str
    length_bytes: int
    mode: str
    mean_ns: float
    reps: int


@dataclass(frozen=True)
class BenchSummary:
    length_bytes: int
    mode: str
    geomean_ns: float


@dataclass
class _RankResult:
    timings: list[tuple[str, int, str, float]] = field(default_factory=list)
    checksums: dict[tuple[str, str, int], int] = field(default_factory=dict)


def _checksum(result: Optional[np.ndarray]) -> int:
    return 0 if result is None else zlib.crc32(np.ascontiguousarray(result).tobytes())


def _input(cfg: BenchConfig, rank: int, op: str, length: int) -> np.ndarray:
    """两种模式下内容相同的发送数据"""
    size = length * cfg.ranks if op in _PER_RANK_BLOCKS else length
    rng = np.random.default_rng([cfg.seed, rank, length])
    return rng.integers(0, 256, size=size, dtype=np.uint8)


def _ergonomic_call(
    comm: Communicator, op: str, data: np.ndarray, out: np.ndarray, size: int, is_root: bool
) -> Optional[np.ndarray]:
    if op == "barrier":
        comm.barrier()
        return None
    if op == "broadcast":
        comm.broadcast(out)
        return out
    if op == "gather":
        comm.gather(data, out if is_root else None)
        return out if is_root else None
    if op == "scatter":
        block = out[: len(data) // size]
        comm.scatter(data, block)
        return block
    if op == "all_gather":
        comm.all_gather(data, out)
        return out
    if op == "all_to_all":
        comm.all_to_all(data, out)
        return out
    if op == "reduce":
        return comm.reduce(data, collectives.SUM)
    if op == "all_reduce":
        return comm.all_reduce(data, collectives.SUM)
    if op == "reduce_scatter":
        return comm.reduce_scatter(data, collectives.SUM)
    if op == "scan":
        return comm.scan(data, collectives.SUM)
    if op == "exclusive_scan":
        return comm.exclusive_scan(data, collectives.SUM)
    raise fail(ErrorClass.INVALID_ARGUMENT, 14, f"unknown collective {op!r}")


def trimmed_mean(samples: list[float]) -> float:
    """去掉最快和最慢各 10% 的轮次后取平均（至少 4 轮时每侧至少去掉一轮）"""
    ordered = np.sort(np.asarray(samples, dtype=float))
    cut = max(1, len(ordered) // 10) if len(ordered) >= 4 else 0
    kept = ordered[cut:len(ordered) - cut]
    return max(float(kept.mean()), 1.0)


class _Runner:
    """单个 rank 上的全部计时。各模式在同一个 world 中逐轮交替运行，共享同样的调度噪声"""

    def __init__(self, cfg: BenchConfig, rank: int, fabric: Fabric):
        self.cfg = cfg
        self.rank = rank
        self.fabric = fabric
        self.size = fabric.world_size
        self.is_root = rank == 0
        self.comm: Optional[Communicator] = None
        if "ergonomic" in cfg.modes:
            # raw 调度占用 world context 的集合通道，ergonomic 走复制出的独立 context
            with world(fabric, rank) as base:
                self.comm = base.duplicate()
        self._seq = 0

    def _raw(self, op: str, data: np.ndarray) -> Optional[np.ndarray]:
        self._seq += 1
        return collectives.raw_collective(self.fabric, self.rank, self._seq, op, data)

    def barrier(self) -> None:
        self._raw("barrier", _EMPTY)

    def prepare(self, op: str, length: int) -> tuple[np.ndarray, np.ndarray]:
        data = _input(self.cfg, self.rank, op, length)
        if op == "broadcast":
            return data, data.copy()
        return data, np.zeros(length * self.size if op != "scatter" else len(data), dtype=np.uint8)

    def call(self, mode: str, op: str, data: np.ndarray, out: np.ndarray) -> Optional[np.ndarray]:
        if mode == "ergonomic":
            return _ergonomic_call(self.comm, op, data, out, self.size, self.is_root)
        return self._raw(op, out if op == "broadcast" else data)

    def run(self) -> _RankResult:
        result = _RankResult()
        modes = list(self.cfg.modes)
        last = self.cfg.iterations - 1
        for op in self.cfg.operations:
            for length in self.cfg.lengths:
                data, out = self.prepare(op, length)
                for mode in modes:
                    for _ in range(self.cfg.warmup):
                        self.call(mode, op, data, out)
                samples: dict[str, list[float]] = {mode: [] for mode in modes}
                for i in range(self.cfg.iterations):
                    # 每轮交换模式的先后顺序
                    for mode in (modes if i % 2 == 0 else modes[::-1]):
                        self.barrier()
                        t0 = time.perf_counter_ns()
                        value = self.call(mode, op, data, out)
                        samples[mode].append(time.perf_counter_ns() - t0)
                        if i == last:
                            result.checksums[(mode, op, length)] = _checksum(value)
                if self.is_root:
                    for mode in modes:
                        result.timings.append((op, length, mode, trimmed_mean(samples[mode])))
                    gc.collect()
        if self.comm is not None:
            self.comm.free()
        return result


def run_sweep(cfg: BenchConfig) -> list[BenchRecord]:
    cfg.validate()
    logger.info(f"[BENCH] Sweep: {len(cfg.operations)} ops x {len(cfg.lengths)} lengths x modes {cfg.modes} "
                f"on {cfg.ranks} ranks")
    start = time.perf_counter()

    def rank_main(rank: int, fabric: Fabric) -> _RankResult:
        return _Runner(cfg, rank, fabric).run()

    # 计时期间关闭循环垃圾回收，rank 0 在每个 (操作, 长度) 之间手动回收
    enabled = gc.isenabled()
    gc.disable()
    try:
        results = spawn_world(FabricConfig(world_size=cfg.ranks, seed=cfg.seed), rank_main)
    finally:
        if enabled:
            gc.enable()
    logger.info(f"[BENCH] Sweep finished in {time.perf_counter() - start:.2f}s")

    mode_order = {mode: i for i, mode in enumerate(cfg.modes)}
    timings = sorted(results[0].timings, key=lambda t: mode_order[t[2]])
    records = [BenchRecord(op, length, mode, mean, cfg.iterations) for op, length, mode, mean in timings]

    if len(cfg.modes) > 1:
        reference, *others = cfg.modes
        for rank, r in enumerate(results):
            diff = sorted(
                (op, length)
                for (mode, op, length), value in r.checksums.items()
                if mode in others and value != r.checksums[(reference, op, length)]
            )
            if diff:
                raise fail(ErrorClass.INTERNAL, 4, f"rank {rank} results differ between modes for {diff[:3]}")
        logger.info("[BENCH] Checksums identical across modes")
    return records


def geometric_mean(records: list[BenchRecord]) -> list[BenchSummary]:
    """按 (length, mode) 分组，对各操作的平均时间取几何平均"""
    if not records:
        raise fail(ErrorClass.EMPTY_SET, 4, "no benchmark records to summarize")
    df = pd.DataFrame([asdict(r) for r in records], columns=RECORD_COLUMNS)
    if (df["mean_ns"] <= 0).any():
        raise fail(ErrorClass.INVALID_ARGUMENT, 17, "mean times must be positive")
    df["log_ns"] = np.log(df["mean_ns"].astype(float))
    grouped = df.groupby(["length_bytes", "mode"], sort=True)["log_ns"].mean()
    return [
        BenchSummary(int(length), str(mode), float(math.exp(value)))
        for (length, mode), value in grouped.items()
    ]


def _write(df: pd.DataFrame, path: str | Path) -> None:
    try:
        df.to_csv(path, index=False)
    except OSError as e:
        raise fail(ErrorClass.INTERNAL, 5, f"cannot write {path}: {e}")


def emit_csv(records: list[BenchRecord], path: str | Path) -> None:
    df = pd.DataFrame([asdict(r) for r in records], columns=RECORD_COLUMNS)
    _write(df, path)
    logger.info(f"[BENCH] Wrote {len(records)} records to {path}")


def emit_summary(summaries: list[BenchSummary], path: str | Path) -> None:
    df = pd.DataFrame([asdict(s) for s in summaries], columns=SUMMARY_COLUMNS)
    _write(df, path)
    logger.info(f"[BENCH] Wrote {len(summaries)} summary rows to {path}")


def summary_path(output: str | Path) -> Path:
    output = Path(output)
    return output.with_name(f"{output.stem}.summary.csv")


def load_records(path: str | Path) -> list[BenchRecord]:
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.EmptyDataError) as e:
        raise fail(ErrorClass.INVALID_ARGUMENT, 18, f"cannot read {path}: {e}")
    missing = [c for c in RECORD_COLUMNS if c not in df.columns]
    if missing:
        raise fail(ErrorClass.INVALID_ARGUMENT, 18, f"{path} is missing columns {missing}")
    return [
        BenchRecord(str(row.op), int(row.length_bytes), str(row.mode), float(row.mean_ns), int(row.reps))
        for row in df.itertuples(index=False)
    ]


def overhead_ratios(summaries: list[BenchSummary]) -> dict[int, float]:
    """每个长度上 geomean(ergonomic) / geomean(raw)"""
    table: dict[tuple[int, str], float] = {(s.length_bytes, s.mode): s.geomean_ns for s in summaries}
    lengths = sorted({s.length_bytes for s in summaries})
    return {
        length: table[(length, "ergonomic")] / table[(length, "raw")]
        for length in lengths
        if (length, "ergonomic") in table and (length, "raw") in table
    }
