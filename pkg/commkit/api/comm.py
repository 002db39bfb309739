"""通信子 (Communicator)、组、状态与请求

点对点通信（阻塞、立即、持久）、探测以及句柄所有权：
- managed 句柄拥有其 context，free() 或被回收时恰好释放一次；
- unmanaged 句柄只借用已有的 context，从不释放。
API 中的 rank 均为通信子内的相对编号。
"""
import itertools
import logging
import weakref
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Generator, Iterable, Optional, Sequence

from commkit.errors import (
    SUCCESS,
    CommError,
    ErrorClass,
    ErrorCode,
    checked,
    exception_for,
    fail,
)
from commkit.services.buffers import RecvBuffer, SendBuffer, as_recv_buffer, as_send_buffer, codec_for
from commkit.services.fabric import (
    ANY_SOURCE,
    ANY_TAG,
    WORLD_CONTEXT,
    Envelope,
    Fabric,
    RecvToken,
    TokenState,
)

logger = logging.getLogger(__name__)

UNDEFINED = -1


@dataclass(frozen=True)
class Group:
    ranks: tuple[int, ...]

    def __post_init__(self):
        if not self.ranks:
            raise fail(ErrorClass.INVALID_ARGUMENT, 9, "group must not be empty")
        if len(set(self.ranks)) != len(self.ranks):
            raise fail(ErrorClass.INVALID_ARGUMENT, 10, f"group has duplicate ranks: {self.ranks}")

    @property
    def size(self) -> int:
        return len(self.ranks)

    def rank_of(self, world_rank: int) -> Optional[int]:
        try:
            return self.ranks.index(world_rank)
        except ValueError:
            return None


@dataclass(frozen=True)
class Status:
    source: int = ANY_SOURCE
    tag: int = ANY_TAG
    error: ErrorCode = SUCCESS
    count: int = 0


class Comparison(str, Enum):
    IDENTICAL = "identical"
    CONGRUENT = "congruent"
    SIMILAR = "similar"
    UNEQUAL = "unequal"


class RequestKind(str, Enum):
    IMMEDIATE = "immediate"
    PERSISTENT = "persistent"


class RequestState(str, Enum):
    INACTIVE = "inactive"
    ACTIVE = "active"
    COMPLETE = "complete"
    CONSUMED = "consumed"


# ---- 进行中的操作 ----

class Operation:
    """一次进行中的操作；poll() 推进并返回是否已结束"""
    status: Optional[Status] = None
    error: Optional[CommError] = None
    value: Any = None

    def poll(self) -> bool:
        raise NotImplementedError


class SendOp(Operation):
    def __init__(self, comm: "Communicator", buffer: SendBuffer, dest: int, tag: int):
        payload = buffer.payload
        env = Envelope(comm.own_world_rank, comm.world_rank_of(dest, 1), tag, comm.context, len(payload))
        comm.fabric.post_send(env, payload)
        self.status = Status(comm.own_rank, tag, SUCCESS, buffer.count)

    def poll(self) -> bool:
        return True


class RecvOp(Operation):
    def __init__(self, comm: "Communicator", target: RecvBuffer, source: int, tag: int):
        self._comm = comm
        self._target = target
        src = ANY_SOURCE if source == ANY_SOURCE else comm.world_rank_of(source, 2)
        pattern = Envelope(src, comm.own_world_rank, tag, comm.context)
        self._token: RecvToken = comm.fabric.post_recv(pattern, target.capacity_bytes)
        self._finished = False
        target.guard()

    def poll(self) -> bool:
        if self._finished:
            return True
        if not self._token.done:
            return False
        self._finished = True
        env = self._token.envelope
        if self._token.state is TokenState.FAILED:
            self._target.release()
            self.error = exception_for(self._token.error)
            return True
        try:
            count = self._target.deliver(self._token.payload)
        except CommError as e:
            self._target.release()
            self.error = e
            return True
        self.status = Status(self._comm.group.rank_of(env.source), env.tag, SUCCESS, count)
        return True


class ScheduleOp(Operation):
    """按生成器描述的多轮通信：生成器 yield 待完成的接收 token，返回 (Status, value)

    给出 fabric 时未完成的调度登记到本 rank，由任何阻塞或测试调用顺带推进。
    """

    def __init__(self, schedule: Generator, fabric: Optional[Fabric] = None):
        self._schedule = schedule
        self._waiting: Optional[list[RecvToken]] = None
        self._finished = False
        self._started = False
        self._polling = False
        if not self.poll() and fabric is not None:
            fabric.track(self)

    def poll(self) -> bool:
        if self._finished:
            return True
        if self._polling:
            # 归约函数内部的阻塞调用会重入推进，生成器不能重入
            return False
        self._polling = True
        try:
            return self._advance()
        finally:
            self._polling = False

    def _advance(self) -> bool:
        try:
            while True:
                if self._waiting is not None and not all(t.done for t in self._waiting):
                    return False
                tokens, self._waiting = self._waiting, None
                if not self._started:
                    self._started = True
                    nxt = next(self._schedule)
                else:
                    nxt = self._schedule.send(tokens)
                self._waiting = [nxt] if isinstance(nxt, RecvToken) else list(nxt)
        except StopIteration as stop:
            self.status, self.value = stop.value
        except CommError as e:
            self.error = e
        except Exception as e:
            # 用户归约函数等抛出的异常：生成器已终止，按 internal 错误完成
            logger.warning(f"[COMM] Schedule raised {type(e).__name__}: {e}")
            self.error = exception_for(ErrorCode(ErrorClass.INTERNAL, 7, f"{type(e).__name__}: {e}"))
            self.error.__cause__ = e
        self._finished = True
        return True


# ---- 请求 ----

class Request:
    """非阻塞操作的句柄。立即请求只能完成一次；持久请求完成后回到 inactive，可再次 start"""

    def __init__(
        self,
        comm: "Communicator",
        kind: RequestKind,
        op: Optional[Operation] = None,
        factory: Optional[Callable[[], Operation]] = None,
    ):
        self.comm = comm
        self.kind = kind
        self._op = op
        self._factory = factory
        self._consumed = False
        self.value: Any = None

    @property
    def fabric(self) -> Fabric:
        return self.comm.fabric

    @property
    def state(self) -> RequestState:
        if self._consumed:
            return RequestState.CONSUMED
        if self._op is None:
            return RequestState.INACTIVE
        return RequestState.COMPLETE if self._op.poll() else RequestState.ACTIVE

    @property
    def active(self) -> bool:
        return self.state in (RequestState.ACTIVE, RequestState.COMPLETE)

    def __copy__(self):
        raise TypeError("requests cannot be copied")

    def _poll(self) -> bool:
        return self._op is None or self._op.poll()

    def _ensure_usable(self, detail: int) -> None:
        if self._consumed:
            raise fail(ErrorClass.USE_OF_COMPLETED_REQUEST, detail, "immediate request was already completed")

    def _collect(self) -> Status:
        """取走已完成操作的结果并更新状态"""
        op = self._op
        if self.kind is RequestKind.IMMEDIATE:
            self._consumed = True
        else:
            self._op = None
        self.value = op.value
        if op.error is not None:
            raise op.error
        return op.status

    def _collect_status(self) -> Status:
        """wait_all / when_all 使用：失败按位置记录在 Status.error 中"""
        if self._op is None:
            return Status()
        try:
            return self._collect()
        except CommError as e:
            return Status(error=e.code)

    @checked
    def wait(self) -> Status:
        self._ensure_usable(1)
        if self._op is None:
            return Status()
        self.fabric.block_until(self._poll)
        return self._collect()

    @checked
    def test(self) -> Optional[Status]:
        self._ensure_usable(2)
        self.fabric.progress()
        if self._op is None or not self._op.poll():
            return None
        return self._collect()

    @checked
    def start(self) -> None:
        if self.kind is not RequestKind.PERSISTENT:
            raise fail(ErrorClass.INVALID_ARGUMENT, 4, "only persistent requests can be started")
        if self._op is not None:
            raise fail(ErrorClass.START_ON_ACTIVE, 1, "persistent request is already active")
        self.comm.ensure_live()
        self.value = None
        self._op = self._factory()


def wait(request: Request) -> Status:
    return request.wait()


def test(request: Request) -> Optional[Status]:
    return request.test()


def start(request: Request) -> None:
    return request.start()


@checked
def start_all(requests: Iterable[Request]) -> None:
    for r in requests:
        r.start()


def _fabric_of(requests: Sequence[Request]) -> Optional[Fabric]:
    return requests[0].fabric if requests else None


@checked
def wait_all(requests: Sequence[Request]) -> list[Status]:
    """一次阻塞等待全部完成；失败按位置记录在 Status.error"""
    for r in requests:
        r._ensure_usable(1)
    fabric = _fabric_of(requests)
    if fabric is not None:
        fabric.block_until(lambda: all([r._poll() for r in requests]))
    return [r._collect_status() for r in requests]


@checked
def test_all(requests: Sequence[Request]) -> Optional[list[Status]]:
    for r in requests:
        r._ensure_usable(2)
    fabric = _fabric_of(requests)
    if fabric is not None:
        fabric.progress()
    if not all([r._poll() for r in requests]):
        return None
    return [r._collect_status() for r in requests]


def _first_done(requests: Sequence[Request]) -> Optional[int]:
    for i, r in enumerate(requests):
        if r._op is not None and r._op.poll():
            return i
    return None


@checked
def wait_any(requests: Sequence[Request]) -> tuple[int, Status]:
    if not requests:
        raise fail(ErrorClass.EMPTY_SET, 2, "wait_any needs at least one request")
    for r in requests:
        r._ensure_usable(1)
    index = block_until_any(requests)
    if index == UNDEFINED:
        return UNDEFINED, Status()
    return index, requests[index]._collect()


def block_until_any(requests: Sequence[Request]) -> int:
    """阻塞到任一活动请求完成，返回其下标但不取走结果；没有活动请求时返回 UNDEFINED"""
    if all(r._op is None for r in requests):
        return UNDEFINED
    found: list[int] = []

    def ready() -> bool:
        index = _first_done(requests)
        if index is not None:
            found.append(index)
        return index is not None

    requests[0].fabric.block_until(ready)
    return found[0]


@checked
def test_any(requests: Sequence[Request]) -> Optional[tuple[int, Status]]:
    if not requests:
        raise fail(ErrorClass.EMPTY_SET, 3, "test_any needs at least one request")
    for r in requests:
        r._ensure_usable(2)
    requests[0].fabric.progress()
    index = _first_done(requests)
    if index is None:
        return None
    return index, requests[index]._collect()


# ---- 通信子 ----

class _Sequencer:
    """同一 context 的所有句柄共享的序号（集合调用、派生调用）"""

    def __init__(self):
        self._collective = itertools.count()
        self._derive = itertools.count()

    def next_collective(self) -> int:
        return next(self._collective)

    def next_derive(self) -> int:
        return next(self._derive)


class Communicator:
    def __init__(
        self,
        fabric: Fabric,
        context: int,
        group: Group,
        own_rank: int,
        managed: bool = True,
        sequencer: Optional[_Sequencer] = None,
    ):
        if not 0 <= own_rank < group.size:
            raise fail(ErrorClass.INVALID_RANK, 4, f"own rank {own_rank} outside group of {group.size}")
        self.fabric = fabric
        self.context = context
        self.group = group
        self.own_rank = own_rank
        self.managed = managed
        self._sequencer = sequencer or _Sequencer()
        self._freed = False
        self._finalizer = None
        if managed:
            fabric.acquire_context(context)
            self._finalizer = weakref.finalize(self, fabric.release_context, context)
            self._finalizer.atexit = False

    @classmethod
    def unmanaged(cls, comm: "Communicator") -> "Communicator":
        """借用已有通信子的 context，不负责释放"""
        comm.ensure_live()
        return cls(comm.fabric, comm.context, comm.group, comm.own_rank,
                   managed=False, sequencer=comm._sequencer)

    # ---- 生命周期 ----

    def ensure_live(self) -> None:
        if self._freed:
            raise fail(ErrorClass.USE_AFTER_FREE, 1, f"communicator (context {self.context}) was freed")

    @property
    def freed(self) -> bool:
        return self._freed

    @checked
    def free(self) -> None:
        if self._freed:
            raise fail(ErrorClass.USE_AFTER_FREE, 2, f"communicator (context {self.context}) freed twice")
        self._freed = True
        if self._finalizer is not None:
            self._finalizer()

    def __enter__(self) -> "Communicator":
        return self

    def __exit__(self, *exc) -> None:
        if not self._freed:
            self.free()

    def __copy__(self) -> "Communicator":
        return self.duplicate()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Communicator):
            return NotImplemented
        return self.context == other.context and self.group == other.group

    def __hash__(self) -> int:
        return hash((self.context, self.group))

    def __repr__(self) -> str:
        return f"Communicator(context={self.context}, rank={self.own_rank}, size={self.group.size})"

    # ---- 基本属性 ----

    @checked
    def rank(self) -> int:
        self.ensure_live()
        return self.own_rank

    @checked
    def size(self) -> int:
        self.ensure_live()
        return self.group.size

    @property
    def own_world_rank(self) -> int:
        return self.group.ranks[self.own_rank]

    def world_rank_of(self, rank: int, detail: int) -> int:
        if isinstance(rank, bool) or not isinstance(rank, int) or not 0 <= rank < self.group.size:
            raise fail(ErrorClass.INVALID_RANK, detail, f"rank {rank} outside [0, {self.group.size})")
        return self.group.ranks[rank]

    def next_collective_tag(self) -> int:
        return self._sequencer.next_collective()

    # ---- 派生 ----

    @checked
    def duplicate(self) -> "Communicator":
        self.ensure_live()
        ctx = self.fabric.agree_context(("dup", self.context, self._sequencer.next_derive()), self.group.size)
        logger.debug(f"[COMM] duplicate context {self.context} -> {ctx}")
        return Communicator(self.fabric, ctx, self.group, self.own_rank)

    @checked
    def split(self, color: int, key: int = 0) -> Optional["Communicator"]:
        """按 color 划分；同色 rank 按 (key, 原 rank) 排序。color 为 UNDEFINED 时返回 None"""
        self.ensure_live()
        if isinstance(color, bool) or not isinstance(color, int) or (color < 0 and color != UNDEFINED):
            raise fail(ErrorClass.INVALID_ARGUMENT, 8, f"split color must be >= 0 or UNDEFINED, got {color!r}")
        if isinstance(key, bool) or not isinstance(key, int):
            raise fail(ErrorClass.INVALID_ARGUMENT, 8, f"split key must be an integer, got {key!r}")
        seq = self._sequencer.next_derive()
        table: list = [None] * self.group.size
        _collectives.all_gather(self, (color, key), table, datatype=tuple[int, int])
        if color == UNDEFINED:
            return None
        members = sorted(
            (i for i, (c, _) in enumerate(table) if c == color),
            key=lambda i: (table[i][1], i),
        )
        group = Group(tuple(self.group.ranks[i] for i in members))
        ctx = self.fabric.agree_context(("split", self.context, seq, color), len(members))
        return Communicator(self.fabric, ctx, group, members.index(self.own_rank))

    # ---- 点对点 ----

    def _check_send_tag(self, tag: int) -> None:
        if isinstance(tag, bool) or not isinstance(tag, int) or tag < 0:
            raise fail(ErrorClass.INVALID_TAG, 1, f"send tag must be a non-negative integer, got {tag!r}")

    def _check_recv_args(self, source: int, tag: int) -> None:
        if source != ANY_SOURCE:
            self.world_rank_of(source, 2)
        if isinstance(tag, bool) or not isinstance(tag, int) or (tag < 0 and tag != ANY_TAG):
            raise fail(ErrorClass.INVALID_TAG, 2, f"receive tag must be >= 0 or ANY_TAG, got {tag!r}")

    def _send_op(self, value: Any, dest: int, tag: int, datatype: Any) -> SendOp:
        self.ensure_live()
        self._check_send_tag(tag)
        self.world_rank_of(dest, 1)
        return SendOp(self, as_send_buffer(value, datatype), dest, tag)

    def _recv_op(self, into: Any, source: int, tag: int, datatype: Any) -> RecvOp:
        self.ensure_live()
        self._check_recv_args(source, tag)
        return RecvOp(self, as_recv_buffer(into, datatype), source, tag)

    @checked
    def send(self, value: Any, dest: int, tag: int = 0, datatype: Any = None) -> None:
        self._send_op(value, dest, tag, datatype)

    @checked
    def receive(self, into: Any, source: int = ANY_SOURCE, tag: int = ANY_TAG, datatype: Any = None) -> Status:
        op = self._recv_op(into, source, tag, datatype)
        self.fabric.block_until(op.poll)
        if op.error is not None:
            raise op.error
        return op.status

    @checked
    def immediate_send(self, value: Any, dest: int, tag: int = 0, datatype: Any = None) -> Request:
        """发送数据在调用时即被复制，调用返回后可以安全地修改 value"""
        return Request(self, RequestKind.IMMEDIATE, op=self._send_op(value, dest, tag, datatype))

    @checked
    def immediate_receive(
        self, into: Any, source: int = ANY_SOURCE, tag: int = ANY_TAG, datatype: Any = None
    ) -> Request:
        """完成前 into 必须保持存活且不被修改；numpy 目标在挂起期间被设为只读"""
        return Request(self, RequestKind.IMMEDIATE, op=self._recv_op(into, source, tag, datatype))

    @checked
    def persistent_send(self, value: Any, dest: int, tag: int = 0, datatype: Any = None) -> Request:
        """每次 start() 时读取 value 的当前内容"""
        self.ensure_live()
        self._check_send_tag(tag)
        self.world_rank_of(dest, 1)
        as_send_buffer(value, datatype)
        return Request(self, RequestKind.PERSISTENT,
                       factory=lambda: self._send_op(value, dest, tag, datatype))

    @checked
    def persistent_receive(
        self, into: Any, source: int = ANY_SOURCE, tag: int = ANY_TAG, datatype: Any = None
    ) -> Request:
        self.ensure_live()
        self._check_recv_args(source, tag)
        as_recv_buffer(into, datatype)
        return Request(self, RequestKind.PERSISTENT,
                       factory=lambda: self._recv_op(into, source, tag, datatype))

    @checked
    def send_receive(
        self,
        value: Any,
        dest: int,
        into: Any,
        source: int = ANY_SOURCE,
        send_tag: int = 0,
        recv_tag: int = ANY_TAG,
        datatype: Any = None,
    ) -> Status:
        recv = self._recv_op(into, source, recv_tag, datatype)
        self._send_op(value, dest, send_tag, datatype)
        self.fabric.block_until(recv.poll)
        if recv.error is not None:
            raise recv.error
        return recv.status

    def _probe_status(self, env: Envelope, datatype: Any) -> Status:
        if datatype is None:
            count = env.length
        else:
            size = codec_for(datatype).typemap.size
            count = env.length // size if env.length % size == 0 else UNDEFINED
        return Status(self.group.rank_of(env.source), env.tag, SUCCESS, count)

    def _probe_pattern(self, source: int, tag: int) -> Envelope:
        self.ensure_live()
        self._check_recv_args(source, tag)
        src = ANY_SOURCE if source == ANY_SOURCE else self.world_rank_of(source, 2)
        return Envelope(src, self.own_world_rank, tag, self.context)

    @checked
    def immediate_probe(
        self, source: int = ANY_SOURCE, tag: int = ANY_TAG, datatype: Any = None
    ) -> Optional[Status]:
        """没有待收消息时返回 None；给定 datatype 时 count 以元素计，否则以字节计"""
        env = self.fabric.probe(self._probe_pattern(source, tag), blocking=False)
        return None if env is None else self._probe_status(env, datatype)

    @checked
    def probe(self, source: int = ANY_SOURCE, tag: int = ANY_TAG, datatype: Any = None) -> Status:
        env = self.fabric.probe(self._probe_pattern(source, tag), blocking=True)
        return self._probe_status(env, datatype)

    # ---- 集合通信 ----

    def barrier(self, **kwargs) -> Status:
        return _collectives.barrier(self, **kwargs)

    def immediate_barrier(self, **kwargs) -> Request:
        return _collectives.immediate_barrier(self, **kwargs)

    def broadcast(self, value: Any, root: int = 0, **kwargs) -> Status:
        return _collectives.broadcast(self, value, root, **kwargs)

    def immediate_broadcast(self, value: Any, root: int = 0, **kwargs) -> Request:
        return _collectives.immediate_broadcast(self, value, root, **kwargs)

    def gather(self, value: Any, out: Any = None, root: int = 0, **kwargs) -> Status:
        return _collectives.gather(self, value, out, root, **kwargs)

    def immediate_gather(self, value: Any, out: Any = None, root: int = 0, **kwargs) -> Request:
        return _collectives.immediate_gather(self, value, out, root, **kwargs)

    def scatter(self, values: Any, out: Any, root: int = 0, **kwargs) -> Status:
        return _collectives.scatter(self, values, out, root, **kwargs)

    def immediate_scatter(self, values: Any, out: Any, root: int = 0, **kwargs) -> Request:
        return _collectives.immediate_scatter(self, values, out, root, **kwargs)

    def all_gather(self, value: Any, out: Any, **kwargs) -> Status:
        return _collectives.all_gather(self, value, out, **kwargs)

    def immediate_all_gather(self, value: Any, out: Any, **kwargs) -> Request:
        return _collectives.immediate_all_gather(self, value, out, **kwargs)

    def all_to_all(self, values: Any, out: Any, **kwargs) -> Status:
        return _collectives.all_to_all(self, values, out, **kwargs)

    def immediate_all_to_all(self, values: Any, out: Any, **kwargs) -> Request:
        return _collectives.immediate_all_to_all(self, values, out, **kwargs)

    def reduce(self, value: Any, op: "_collectives.ReduceOp", root: int = 0, **kwargs) -> Any:
        return _collectives.reduce(self, value, op, root, **kwargs)

    def immediate_reduce(self, value: Any, op: "_collectives.ReduceOp", root: int = 0, **kwargs) -> Request:
        return _collectives.immediate_reduce(self, value, op, root, **kwargs)

    def all_reduce(self, value: Any, op: "_collectives.ReduceOp", **kwargs) -> Any:
        return _collectives.all_reduce(self, value, op, **kwargs)

    def immediate_all_reduce(self, value: Any, op: "_collectives.ReduceOp", **kwargs) -> Request:
        return _collectives.immediate_all_reduce(self, value, op, **kwargs)

    def reduce_scatter(self, values: Any, op: "_collectives.ReduceOp", **kwargs) -> Any:
        return _collectives.reduce_scatter(self, values, op, **kwargs)

    def immediate_reduce_scatter(self, values: Any, op: "_collectives.ReduceOp", **kwargs) -> Request:
        return _collectives.immediate_reduce_scatter(self, values, op, **kwargs)

    def scan(self, value: Any, op: "_collectives.ReduceOp", **kwargs) -> Any:
        return _collectives.scan(self, value, op, **kwargs)

    def immediate_scan(self, value: Any, op: "_collectives.ReduceOp", **kwargs) -> Request:
        return _collectives.immediate_scan(self, value, op, **kwargs)

    def exclusive_scan(self, value: Any, op: "_collectives.ReduceOp", **kwargs) -> Any:
        return _collectives.exclusive_scan(self, value, op, **kwargs)

    def immediate_exclusive_scan(self, value: Any, op: "_collectives.ReduceOp", **kwargs) -> Request:
        return _collectives.immediate_exclusive_scan(self, value, op, **kwargs)


@checked
def world(fabric: Fabric, rank: Optional[int] = None) -> Communicator:
    """覆盖全部 rank 的 managed 通信子，context 0"""
    if rank is None:
        rank = fabric.current_rank()
    if rank is None:
        raise fail(ErrorClass.INVALID_RANK, 5, "world() called outside a rank context; pass rank explicitly")
    return Communicator(fabric, WORLD_CONTEXT, Group(tuple(range(fabric.world_size))), rank,
                        sequencer=_world_sequencer(fabric, rank))


_world_sequencers: "weakref.WeakKeyDictionary[Fabric, dict[int, _Sequencer]]" = weakref.WeakKeyDictionary()


def _world_sequencer(fabric: Fabric, rank: int) -> _Sequencer:
    # 同一 rank 上的多个 world 句柄是同一个通信子，共享序号
    per_rank = _world_sequencers.setdefault(fabric, {})
    return per_rank.setdefault(rank, _Sequencer())


def compare(a: Communicator, b: Communicator) -> Comparison:
    if a.context == b.context and a.group == b.group:
        return Comparison.IDENTICAL
    if a.group == b.group:
        return Comparison.CONGRUENT
    if set(a.group.ranks) == set(b.group.ranks):
        return Comparison.SIMILAR
    return Comparison.UNEQUAL


# 放在末尾导入以避免循环依赖：collectives 依赖本模块中的 Communicator / Request
from commkit.api import collectives as _collectives  # noqa: E402
