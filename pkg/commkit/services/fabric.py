"""进程内模拟网络 (fabric)

每个 rank 是一个线程；消息按 (source, dest, tag, context) 信封匹配，
遵循不超车 (non-overtaking) 规则，支持通配 source / tag 与探测。
所有发送均为 eager 协议：缓冲后立即完成，fabric 持有一份副本。
"""
import logging
import random
import threading
import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Hashable, Optional

from commkit import config
from commkit.errors import (
    CommError,
    ErrorClass,
    ErrorCode,
    WorldError,
    exception_for,
    fail,
)

logger = logging.getLogger(__name__)

ANY_SOURCE = -1
ANY_TAG = -1
WORLD_CONTEXT = 0
# 集合通信使用同一 context 的独立通道
COLLECTIVE_BIT = 1 << 30


def collective_context(context: int) -> int:
    return context | COLLECTIVE_BIT


@dataclass(frozen=True)
class Envelope:
    source: int
    dest: int
    tag: int
    context: int
    length: int = 0

    def matches(self, pattern: "Envelope") -> bool:
        """self 是具体消息，pattern 可能带通配符"""
        return (
            self.dest == pattern.dest
            and self.context == pattern.context
            and pattern.source in (ANY_SOURCE, self.source)
            and pattern.tag in (ANY_TAG, self.tag)
        )


class TokenState(str, Enum):
    PENDING = "pending"
    COMPLETE = "complete"
    FAILED = "failed"


@dataclass
class SendToken:
    envelope: Envelope
    state: TokenState = TokenState.COMPLETE
    error: Optional[ErrorCode] = None

    @property
    def done(self) -> bool:
        return self.state is not TokenState.PENDING


@dataclass
class RecvToken:
    pattern: Envelope
    capacity: Optional[int]
    state: TokenState = TokenState.PENDING
    envelope: Optional[Envelope] = None
    payload: bytes = b""
    error: Optional[ErrorCode] = None

    @property
    def done(self) -> bool:
        return self.state is not TokenState.PENDING


@dataclass
class FabricConfig:
    world_size: int = 1
    seed: int = config.DEFAULT_SEED
    watchdog_timeout: Optional[float] = config.WATCHDOG_TIMEOUT
    jitter: float = 0.0  # 每次投递前的随机延迟上限（秒），用于测试打乱交错顺序
    trace: Optional[Callable[[str, Envelope], None]] = None


@dataclass
class _Message:
    envelope: Envelope
    payload: bytes
    seq: int


@dataclass
class RankOutcome:
    rank: int
    value: Any = None
    error: Optional[BaseException] = None

    @property
    def ok(self) -> bool:
        return self.error is None


class Fabric:
    def __init__(self, cfg: FabricConfig):
        if cfg.world_size < 1:
            raise fail(ErrorClass.INVALID_ARGUMENT, 6, f"world_size must be >= 1, got {cfg.world_size}")
        self.config = cfg
        self.world_size = cfg.world_size
        self._cond = threading.Condition(threading.RLock())
        self._unexpected: dict[tuple[int, int], list[_Message]] = defaultdict(list)
        self._posted: dict[tuple[int, int], list[RecvToken]] = defaultdict(list)
        self._seq = 0
        self._epoch = 0
        self._alive: set[int] = set(range(cfg.world_size))
        self._blocked: set[int] = set()
        self._checking: dict[int, float] = {}  # rank -> 正在执行 predicate 的起始时间
        self._deadlock: Optional[ErrorCode] = None
        self._abort: Optional[ErrorCode] = None  # 第一个异常退出的 rank，幸存 rank 在下次阻塞时放弃
        self._stats: Counter = Counter()
        self._refcounts: dict[int, int] = {WORLD_CONTEXT: 0}
        self._agreed: dict[Hashable, list[int]] = {}  # key -> [context, 尚未读取的成员数]
        self._next_context = WORLD_CONTEXT + 1
        self._local = threading.local()
        self._rngs = [random.Random(f"{cfg.seed}:{r}") for r in range(cfg.world_size)]

    # ---- rank 上下文 ----

    def current_rank(self) -> Optional[int]:
        return getattr(self._local, "rank", None)

    def _bind(self, rank: int) -> None:
        self._local.rank = rank

    def _retire(self, rank: int, error: Optional[BaseException] = None) -> None:
        with self._cond:
            self._alive.discard(rank)
            if error is not None and self._abort is None and not _is_secondary(error):
                self._abort = ErrorCode(
                    ErrorClass.INTERNAL, 6, f"rank {rank} failed: {_describe(error)}",
                )
                logger.warning(f"[FABRIC] Rank {rank} failed, aborting blocked ranks: {_describe(error)}")
            self._epoch += 1
            self._cond.notify_all()

    def _jitter(self, rank: int) -> None:
        if self.config.jitter > 0 and 0 <= rank < self.world_size:
            time.sleep(self._rngs[rank].uniform(0, self.config.jitter))

    def _trace(self, event: str, env: Envelope) -> None:
        if self.config.trace is not None:
            self.config.trace(event, env)

    def _check_rank(self, rank: int, detail: int, what: str) -> None:
        if not isinstance(rank, int) or not 0 <= rank < self.world_size:
            raise fail(ErrorClass.INVALID_RANK, detail, f"{what} {rank} outside [0, {self.world_size})")

    # ---- 点对点 ----

    def post_send(self, env: Envelope, payload: bytes) -> SendToken:
        self._check_rank(env.dest, 1, "destination")
        self._check_rank(env.source, 2, "source")
        if env.tag < 0:
            raise fail(ErrorClass.INVALID_TAG, 1, f"send tag must be >= 0, got {env.tag}")
        if len(payload) != env.length:
            raise fail(ErrorClass.LENGTH_MISMATCH, 5, f"envelope length {env.length} != payload {len(payload)}")
        self._jitter(env.source)

        with self._cond:
            self._seq += 1
            msg = _Message(env, bytes(payload), self._seq)
            self._stats["sent"] += 1
            self._trace("send", env)
            key = (env.dest, env.context)
            posted = self._posted[key]
            for i, token in enumerate(posted):
                if env.matches(token.pattern):
                    del posted[i]
                    self._complete(token, msg)
                    break
            else:
                self._unexpected[key].append(msg)
            self._epoch += 1
            self._cond.notify_all()
        logger.debug(f"[FABRIC] send {env}")
        return SendToken(env)

    def post_recv(self, pattern: Envelope, capacity: Optional[int]) -> RecvToken:
        self._check_rank(pattern.dest, 3, "receiver")
        if pattern.source != ANY_SOURCE:
            self._check_rank(pattern.source, 2, "source")
        if pattern.tag < 0 and pattern.tag != ANY_TAG:
            raise fail(ErrorClass.INVALID_TAG, 2, f"receive tag must be >= 0 or ANY_TAG, got {pattern.tag}")
        if capacity is not None and capacity < 0:
            raise fail(ErrorClass.INVALID_ARGUMENT, 7, f"capacity must be >= 0, got {capacity}")
        self._jitter(pattern.dest)

        token = RecvToken(pattern, capacity)
        with self._cond:
            queue = self._unexpected[(pattern.dest, pattern.context)]
            for i, msg in enumerate(queue):
                if msg.envelope.matches(pattern):
                    del queue[i]
                    self._complete(token, msg)
                    self._epoch += 1
                    self._cond.notify_all()
                    break
            else:
                self._posted[(pattern.dest, pattern.context)].append(token)
        return token

    def _complete(self, token: RecvToken, msg: _Message) -> None:
        # 调用方持有锁
        token.envelope = msg.envelope
        if token.capacity is not None and msg.envelope.length > token.capacity:
            token.error = ErrorCode(
                ErrorClass.TRUNCATION, 1,
                f"message of {msg.envelope.length} bytes exceeds capacity {token.capacity}",
            )
            token.state = TokenState.FAILED
            self._stats["truncated"] += 1
            self._trace("truncate", msg.envelope)
            return
        token.payload = msg.payload
        token.state = TokenState.COMPLETE
        self._stats["matched"] += 1
        self._trace("match", msg.envelope)

    def probe(self, pattern: Envelope, blocking: bool = False) -> Optional[Envelope]:
        """返回最早的匹配消息信封，不消费消息"""
        found: list[Envelope] = []

        def scan() -> bool:
            with self._cond:
                for msg in self._unexpected[(pattern.dest, pattern.context)]:
                    if msg.envelope.matches(pattern):
                        found.append(msg.envelope)
                        self._trace("probe", msg.envelope)
                        return True
            return False

        if scan():
            return found[0]
        if not blocking:
            return None
        self.block_until(scan)
        return found[0]

    # ---- 阻塞与死锁检测 ----

    def block_until(self, predicate: Callable[[], bool]) -> None:
        """唯一的阻塞原语：等待 predicate 成立

        第一次等待后 rank 计入 watchdog 的阻塞集合。predicate 可能执行
        continuation 等用户代码：执行超过一个轮询间隔的 rank 视为仍在运行。
        """
        rank = self.current_rank()
        try:
            while True:
                with self._cond:
                    epoch = self._epoch
                done = self._evaluate(rank, predicate)
                if done:
                    return
                with self._cond:
                    if self._deadlock is not None:
                        raise exception_for(self._deadlock)
                    if self._abort is not None:
                        raise exception_for(self._abort)
                    if self._epoch == epoch:
                        paused = None
                        if rank is not None:
                            self._blocked.add(rank)
                            paused = self._checking.pop(rank, None)
                        self._cond.wait(timeout=config.POLL_INTERVAL)
                        if paused is not None:
                            self._checking[rank] = time.monotonic()
        finally:
            if rank is not None:
                with self._cond:
                    self._blocked.discard(rank)

    def track(self, op: Any) -> None:
        """登记本线程上一个多轮操作（带 poll() -> bool）；任何阻塞或测试调用都会顺带推进它"""
        pending = getattr(self._local, "pending", None)
        if pending is None:
            pending = self._local.pending = []
        pending.append(op)

    def progress(self) -> None:
        """推进本线程登记的全部操作，移除已结束的"""
        pending = getattr(self._local, "pending", None)
        if not pending:
            return
        for op in list(pending):
            if op.poll() and op in pending:
                pending.remove(op)

    def _evaluate(self, rank: Optional[int], predicate: Callable[[], bool]) -> bool:
        if rank is None:
            self.progress()
            return predicate()
        with self._cond:
            outer = self._checking.get(rank)
            self._checking[rank] = time.monotonic()
        try:
            self.progress()
            return predicate()
        finally:
            with self._cond:
                # 嵌套的 block_until 恢复外层的计时起点
                if outer is None:
                    self._checking.pop(rank, None)
                else:
                    self._checking[rank] = outer

    def _stalled(self, now: float) -> bool:
        # 调用方持有锁
        running = {r for r, since in self._checking.items() if now - since > config.POLL_INTERVAL}
        return bool(self._alive) and self._alive <= (self._blocked - running)

    def _watch(self, threads: list[threading.Thread]) -> None:
        timeout = self.config.watchdog_timeout
        last_epoch = -1
        stalled_since = time.monotonic()
        while any(t.is_alive() for t in threads):
            for t in threads:
                t.join(timeout=config.POLL_INTERVAL)
                if t.is_alive():
                    break
            if timeout is None:
                continue
            with self._cond:
                now = time.monotonic()
                stalled = self._stalled(now)
                if not stalled or self._epoch != last_epoch:
                    last_epoch = self._epoch
                    stalled_since = now
                elif now - stalled_since >= timeout and self._deadlock is None:
                    self._deadlock = ErrorCode(
                        ErrorClass.DEADLOCK_SUSPECTED, 1,
                        f"ranks {sorted(self._blocked)} blocked for {timeout}s with no matching message",
                    )
                    logger.error(f"[FABRIC] Deadlock suspected: {self._deadlock.message}; "
                                 f"pending={self.pending_messages()}")
                    self._cond.notify_all()

    # ---- communicator context 注册表 ----

    def agree_context(self, key: Hashable, members: int) -> int:
        """同一次集合派生调用中的 members 个 rank 得到同一个新 context id

        最后一个成员取走后删除这条约定。
        """
        if members < 1:
            raise fail(ErrorClass.INVALID_ARGUMENT, 19, f"context agreement needs >= 1 member, got {members}")
        with self._cond:
            entry = self._agreed.get(key)
            if entry is None:
                entry = [self._next_context, members]
                self._next_context += 1
                self._agreed[key] = entry
                self._refcounts[entry[0]] = 0
            entry[1] -= 1
            if entry[1] == 0:
                del self._agreed[key]
            return entry[0]

    def acquire_context(self, context: int) -> None:
        with self._cond:
            if context not in self._refcounts:
                raise fail(ErrorClass.USE_AFTER_FREE, 3, f"context {context} is not registered")
            self._refcounts[context] += 1

    def release_context(self, context: int) -> None:
        with self._cond:
            if self._refcounts.get(context, 0) <= 0:
                raise fail(ErrorClass.USE_AFTER_FREE, 2, f"context {context} released more often than acquired")
            self._refcounts[context] -= 1
            self._stats["released"] += 1

    def context_refcount(self, context: int) -> int:
        with self._cond:
            return self._refcounts.get(context, 0)

    def live_contexts(self) -> dict[int, int]:
        with self._cond:
            return {ctx: n for ctx, n in self._refcounts.items() if n > 0}

    # ---- 统计 ----

    def pending_messages(self) -> int:
        with self._cond:
            return sum(len(q) for q in self._unexpected.values())

    def stats(self) -> dict[str, int]:
        with self._cond:
            out = dict(self._stats)
            out["pending"] = sum(len(q) for q in self._unexpected.values())
            out["posted"] = sum(len(q) for q in self._posted.values())
            out["agreements"] = len(self._agreed)
            return out


def _describe(error: BaseException) -> ErrorCode:
    if isinstance(error, CommError):
        return error.code
    return ErrorCode(ErrorClass.INTERNAL, 3, f"{type(error).__name__}: {error}")


def spawn_world(cfg: FabricConfig, rank_main: Callable[[int, Fabric], Any]) -> list[Any]:
    """并发运行 world_size 个 rank，按 rank 顺序返回各自的结果

    任一 rank 失败时抛出 WorldError，outcomes 中记录每个 rank 的结果或异常。
    """
    fabric = Fabric(cfg)
    outcomes = [RankOutcome(r) for r in range(cfg.world_size)]

    def run(rank: int) -> None:
        fabric._bind(rank)
        try:
            outcomes[rank].value = rank_main(rank, fabric)
        except BaseException as e:  # noqa: B036 - 需要把任何失败归属到对应 rank
            outcomes[rank].error = e
            logger.debug(f"[FABRIC] rank {rank} failed: {e!r}")
        finally:
            fabric._retire(rank, outcomes[rank].error)

    logger.info(f"[FABRIC] Spawning world of {cfg.world_size} ranks (seed={cfg.seed})")
    threads = [
        threading.Thread(target=run, args=(r,), name=f"rank-{r}", daemon=True)
        for r in range(cfg.world_size)
    ]
    for t in threads:
        t.start()
    fabric._watch(threads)
    for t in threads:
        t.join()

    failed = [o for o in outcomes if not o.ok]
    if failed:
        # 优先报告根因，其余 rank 的死锁或中止只是连带结果
        root = next((o for o in failed if not _is_secondary(o.error)), failed[0])
        code = _describe(root.error)
        logger.info(f"[FABRIC] World failed at rank {root.rank}: {code}")
        raise WorldError(code, root.rank, outcomes) from root.error

    logger.info(f"[FABRIC] World of {cfg.world_size} ranks finished, stats={fabric.stats()}")
    return [o.value for o in outcomes]


def _is_secondary(error: BaseException) -> bool:
    if not isinstance(error, CommError):
        return False
    return error.code.cls is ErrorClass.DEADLOCK_SUSPECTED or error.code.key() == (int(ErrorClass.INTERNAL), 6)
