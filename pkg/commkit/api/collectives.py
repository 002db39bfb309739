"""集合通信

每个集合操作是一个生成器调度：发出本轮的发送，yield 本轮要等待的接收 token，
恢复后进入下一轮。调度在 wait / test / future 中内联推进，不使用后台线程。
集合流量走通信子 context 的独立通道，tag 由集合序号和阶段号组成。
"""
import functools
import hashlib
import logging
import operator
from dataclasses import dataclass, field
from typing import Any, Callable, Generator, Optional, Sequence

import numpy as np

from commkit import config
from commkit.api.comm import (
    UNDEFINED,
    Communicator,
    Request,
    RequestKind,
    ScheduleOp,
    Status,
)
from commkit.errors import SUCCESS, ErrorClass, checked, exception_for, fail
from commkit.services.buffers import (
    BYTE_CODEC,
    Codec,
    RecvBuffer,
    SendBuffer,
    as_recv_buffer,
    as_send_buffer,
    codec_for,
)
from commkit.services.fabric import (
    ANY_TAG,
    WORLD_CONTEXT,
    Envelope,
    Fabric,
    RecvToken,
    TokenState,
    collective_context,
)

logger = logging.getLogger(__name__)

ALGORITHMS = ("auto", "linear")
_PHASE_BITS = 3
_SIGNATURE_SIZE = 8

Schedule = Generator[Any, Any, Any]


# ---- 归约操作 ----

@dataclass(frozen=True)
class ReduceOp:
    closure: Callable[[Any, Any], Any]
    commutative: bool = True
    identity: Any = None
    name: str = ""
    ufunc: Optional[np.ufunc] = field(default=None, compare=False)

    def __call__(self, a: Any, b: Any) -> Any:
        return self.closure(a, b)

    @property
    def key(self) -> str:
        return self.name or getattr(self.closure, "__qualname__", repr(self.closure))

    def combine(self, codec: Codec, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        """逐元素计算 left op right，left 来自较小的 rank"""
        if len(left) != len(right):
            raise fail(ErrorClass.LENGTH_MISMATCH, 6,
                       f"reduction operands have {len(left)} and {len(right)} elements")
        try:
            if self.ufunc is not None and codec.plain:
                return self.ufunc(left, right).astype(codec.dtype, copy=False)
            return codec.encode([self.closure(a, b) for a, b in zip(codec.decode(left), codec.decode(right))])
        except TypeError as e:
            raise fail(ErrorClass.INVALID_ARGUMENT, 11, f"{self.key} is not defined for {codec.dtype}: {e}")


def _land(a: Any, b: Any) -> bool:
    return bool(a) and bool(b)


def _lor(a: Any, b: Any) -> bool:
    return bool(a) or bool(b)


SUM = ReduceOp(operator.add, True, 0, "sum", np.add)
PROD = ReduceOp(operator.mul, True, 1, "prod", np.multiply)
MIN = ReduceOp(min, True, None, "min", np.minimum)
MAX = ReduceOp(max, True, None, "max", np.maximum)
LAND = ReduceOp(_land, True, True, "land", np.logical_and)
LOR = ReduceOp(_lor, True, False, "lor", np.logical_or)
BAND = ReduceOp(operator.and_, True, -1, "band", np.bitwise_and)
BOR = ReduceOp(operator.or_, True, 0, "bor", np.bitwise_or)
BXOR = ReduceOp(operator.xor, True, 0, "bxor", np.bitwise_xor)

BUILTIN_OPS = {op.name: op for op in (SUM, PROD, MIN, MAX, LAND, LOR, BAND, BOR, BXOR)}


# ---- 消息通道 ----

class _Channel:
    """一次集合调用的消息通道；每条消息头部带 8 字节参数签名"""

    def __init__(
        self,
        fabric: Fabric,
        context: int,
        ranks: Sequence[int],
        own: int,
        seq: int,
        codec: Codec,
        name: str,
        signature: tuple = (),
    ):
        self.fabric = fabric
        self.context = collective_context(context)
        self.ranks = tuple(ranks)
        self.own = own
        self.size = len(self.ranks)
        self.seq = seq
        self.codec = codec
        self.name = name
        self.signature = hashlib.blake2b(repr((name, *signature)).encode(), digest_size=_SIGNATURE_SIZE).digest()

    @classmethod
    def for_comm(cls, comm: Communicator, codec: Codec, name: str, *signature: Any) -> "_Channel":
        return cls(comm.fabric, comm.context, comm.group.ranks, comm.own_rank,
                   comm.next_collective_tag(), codec, name, signature)

    def _tag(self, phase: int) -> int:
        return (self.seq << _PHASE_BITS) | phase

    def send(self, dest: int, arr: np.ndarray, phase: int = 0) -> None:
        payload = self.signature + self.codec.to_bytes(arr)
        env = Envelope(self.ranks[self.own], self.ranks[dest], self._tag(phase), self.context, len(payload))
        self.fabric.post_send(env, payload)

    def recv(self, source: int, phase: int = 0) -> RecvToken:
        pattern = Envelope(self.ranks[source], self.ranks[self.own], self._tag(phase), self.context)
        return self.fabric.post_recv(pattern, None)

    def array(self, token: RecvToken) -> np.ndarray:
        if token.state is TokenState.FAILED:
            raise exception_for(token.error)
        head, body = token.payload[:_SIGNATURE_SIZE], token.payload[_SIGNATURE_SIZE:]
        if head != self.signature:
            source = self.ranks.index(token.envelope.source)
            raise fail(ErrorClass.INVALID_ARGUMENT, 5,
                       f"{self.name}: rank {source} called with mismatched collective arguments")
        return self.codec.from_bytes(body, self.codec.count_of(len(body)))


# ---- 调度 ----

def _barrier(ch: _Channel, algorithm: str) -> Schedule:
    n, r = ch.size, ch.own
    empty = np.zeros(0, dtype=ch.codec.dtype)
    if algorithm == "linear":
        if r == 0:
            tokens = [ch.recv(i) for i in range(1, n)]
            yield tokens
            for t in tokens:
                ch.array(t)
            for i in range(1, n):
                ch.send(i, empty, phase=1)
        else:
            ch.send(0, empty)
            tok = ch.recv(0, phase=1)
            yield tok
            ch.array(tok)
        return None
    # dissemination: 第 k 轮向 r+2^k 发送、从 r-2^k 接收
    k = 1
    while k < n:
        ch.send((r + k) % n, empty)
        tok = ch.recv((r - k) % n)
        yield tok
        ch.array(tok)
        k <<= 1
    return None


def _broadcast(ch: _Channel, data: Optional[np.ndarray], root: int, algorithm: str, phase: int = 0) -> Schedule:
    """data 只在 root 上有效，返回每个 rank 上的结果"""
    n, r = ch.size, ch.own
    if n == 1:
        return data
    if algorithm == "linear":
        if r == root:
            for i in range(n):
                if i != root:
                    ch.send(i, data, phase)
            return data
        tok = ch.recv(root, phase)
        yield tok
        return ch.array(tok)

    vr = (r - root) % n
    mask = 1
    while mask < n:
        if vr & mask:
            tok = ch.recv((r - mask) % n, phase)
            yield tok
            data = ch.array(tok)
            break
        mask <<= 1
    mask >>= 1
    while mask > 0:
        if vr + mask < n:
            ch.send((r + mask) % n, data, phase)
        mask >>= 1
    return data


def _gather(ch: _Channel, data: np.ndarray, root: int, phase: int = 0) -> Schedule:
    n, r = ch.size, ch.own
    if r != root:
        ch.send(root, data, phase)
        return None
    tokens = {i: ch.recv(i, phase) for i in range(n) if i != root}
    yield list(tokens.values())
    return np.concatenate([data if i == root else ch.array(tokens[i]) for i in range(n)])


def _scatter(ch: _Channel, data: Optional[np.ndarray], root: int, count: int, phase: int = 0) -> Schedule:
    """root 上 data 有 size*count 个元素，返回本 rank 的那一块"""
    n, r = ch.size, ch.own
    if r == root:
        for i in range(n):
            if i != root:
                ch.send(i, data[i * count:(i + 1) * count], phase)
        return data[root * count:(root + 1) * count].copy()
    tok = ch.recv(root, phase)
    yield tok
    return ch.array(tok)


def _all_gather(ch: _Channel, data: np.ndarray, algorithm: str, phase: int = 0) -> Schedule:
    n, r = ch.size, ch.own
    blocks: list[Optional[np.ndarray]] = [None] * n
    blocks[r] = data
    if algorithm == "linear":
        for i in range(n):
            if i != r:
                ch.send(i, data, phase)
        tokens = {i: ch.recv(i, phase) for i in range(n) if i != r}
        yield list(tokens.values())
        for i, tok in tokens.items():
            blocks[i] = ch.array(tok)
    else:
        # ring: 第 s 步把 (r-s) 块传给右邻，从左邻收到 (r-s-1) 块
        right, left = (r + 1) % n, (r - 1) % n
        for step in range(n - 1):
            ch.send(right, blocks[(r - step) % n], phase)
            tok = ch.recv(left, phase)
            yield tok
            blocks[(r - step - 1) % n] = ch.array(tok)
    return np.concatenate(blocks)


def _all_to_all(ch: _Channel, data: np.ndarray, count: int, phase: int = 0) -> Schedule:
    n, r = ch.size, ch.own
    blocks: list[Optional[np.ndarray]] = [None] * n
    blocks[r] = data[r * count:(r + 1) * count].copy()
    for step in range(1, n):
        dst, src = (r + step) % n, (r - step) % n
        ch.send(dst, data[dst * count:(dst + 1) * count], phase)
        tok = ch.recv(src, phase)
        yield tok
        blocks[src] = ch.array(tok)
    return np.concatenate(blocks)


def _reduce(ch: _Channel, data: np.ndarray, op: ReduceOp, root: int, algorithm: str, phase: int = 0) -> Schedule:
    """root 上返回归约结果，其他 rank 返回 None；占用 phase 和 phase+1"""
    n, r = ch.size, ch.own
    combine = functools.partial(op.combine, ch.codec)
    if algorithm == "linear":
        if r != root:
            ch.send(root, data, phase)
            return None
        tokens = {i: ch.recv(i, phase) for i in range(n) if i != root}
        yield list(tokens.values())
        acc = None
        for i in range(n):
            part = data if i == root else ch.array(tokens[i])
            acc = part if acc is None else combine(acc, part)
        return acc

    # 不可交换的操作在以 0 为根的树上保持 rank 顺序，结果再转给 root
    tree_root = root if op.commutative else 0
    vr = (r - tree_root) % n
    acc = data
    mask = 1
    while mask < n:
        if vr & mask:
            ch.send(((vr - mask) + tree_root) % n, acc, phase)
            acc = None
            break
        if vr | mask < n:
            tok = ch.recv(((vr | mask) + tree_root) % n, phase)
            yield tok
            acc = combine(acc, ch.array(tok))
        mask <<= 1
    if tree_root != root:
        if r == tree_root:
            ch.send(root, acc, phase + 1)
            return None
        if r == root:
            tok = ch.recv(tree_root, phase + 1)
            yield tok
            return ch.array(tok)
    return acc


def _all_reduce(ch: _Channel, data: np.ndarray, op: ReduceOp, algorithm: str) -> Schedule:
    n, r = ch.size, ch.own
    combine = functools.partial(op.combine, ch.codec)
    if algorithm != "linear" and n & (n - 1) == 0:
        # recursive doubling，较小 rank 一侧的部分结果总在左边
        acc = data
        mask = 1
        while mask < n:
            partner = r ^ mask
            ch.send(partner, acc)
            tok = ch.recv(partner)
            yield tok
            other = ch.array(tok)
            acc = combine(other, acc) if partner < r else combine(acc, other)
            mask <<= 1
        return acc
    acc = yield from _reduce(ch, data, op, 0, algorithm, phase=0)
    return (yield from _broadcast(ch, acc, 0, algorithm, phase=2))


def _reduce_scatter(ch: _Channel, data: np.ndarray, op: ReduceOp, count: int, algorithm: str) -> Schedule:
    acc = yield from _reduce(ch, data, op, 0, algorithm, phase=0)
    return (yield from _scatter(ch, acc, 0, count, phase=2))


def _scan(ch: _Channel, data: np.ndarray, op: ReduceOp, algorithm: str, inclusive: bool = True) -> Schedule:
    """inclusive: rank i 得到 0..i 的归约；否则得到 0..i-1 的归约，rank 0 为 None"""
    n, r = ch.size, ch.own
    combine = functools.partial(op.combine, ch.codec)
    if algorithm == "linear":
        for i in range(r + 1, n):
            ch.send(i, data)
        tokens = [ch.recv(i) for i in range(r)]
        yield tokens
        acc = None
        for part in [ch.array(t) for t in tokens] + ([data] if inclusive else []):
            acc = part if acc is None else combine(acc, part)
        return acc

    partial = data
    acc = data if inclusive else None
    mask = 1
    while mask < n:
        dst = r ^ mask
        if dst < n:
            ch.send(dst, partial)
            tok = ch.recv(dst)
            yield tok
            other = ch.array(tok)
            if r > dst:
                partial = combine(other, partial)
                acc = other if acc is None else combine(other, acc)
            else:
                partial = combine(partial, other)
        mask <<= 1
    return acc


# ---- 参数检查与启动 ----

def _algorithm(algorithm: Optional[str]) -> str:
    algo = algorithm or config.COLLECTIVE_ALGORITHM
    if algo not in ALGORITHMS:
        raise fail(ErrorClass.INVALID_ARGUMENT, 12, f"unknown collective algorithm {algo!r}, expected {ALGORITHMS}")
    return algo


def _check_root(comm: Communicator, root: int) -> None:
    comm.ensure_live()
    comm.world_rank_of(root, 6)


def _blocks(comm: Communicator, sb: SendBuffer, name: str) -> int:
    n = comm.group.size
    if sb.count % n:
        raise fail(ErrorClass.LENGTH_MISMATCH, 8,
                   f"{name}: {sb.count} elements cannot be split evenly over {n} ranks")
    return sb.count // n


def _check_capacity(rb: RecvBuffer, expected: int, name: str) -> None:
    if rb.capacity is not None and rb.capacity != expected:
        raise fail(ErrorClass.LENGTH_MISMATCH, 7,
                   f"{name}: output holds {rb.capacity} elements, expected {expected}")


def _launch(comm: Communicator, schedule: Schedule, buffers: Sequence[RecvBuffer] = ()) -> Request:
    def guarded():
        for b in buffers:
            b.guard()
        try:
            return (yield from schedule)
        finally:
            for b in buffers:
                b.release()

    return Request(comm, RequestKind.IMMEDIATE, op=ScheduleOp(guarded(), comm.fabric))


def _value_result(sb: SendBuffer, acc: Optional[np.ndarray], rb: Optional[RecvBuffer]) -> tuple[Status, Any]:
    if acc is None:
        return Status(UNDEFINED, ANY_TAG, SUCCESS, 0), None
    if rb is not None:
        rb.deliver_array(acc)
    return Status(UNDEFINED, ANY_TAG, SUCCESS, len(acc)), sb.rebuild(acc)


def _out_buffer(out: Any, datatype: Any, codec: Codec) -> Optional[RecvBuffer]:
    if out is None:
        return None
    return as_recv_buffer(out, datatype if datatype is not None else codec)


# ---- 数据搬运 ----

@checked
def immediate_barrier(comm: Communicator, algorithm: Optional[str] = None) -> Request:
    comm.ensure_live()
    algo = _algorithm(algorithm)
    ch = _Channel.for_comm(comm, BYTE_CODEC, "barrier", algo)

    def run():
        yield from _barrier(ch, algo)
        return Status(UNDEFINED, ANY_TAG, SUCCESS, 0), None

    return _launch(comm, run())


@checked
def barrier(comm: Communicator, algorithm: Optional[str] = None) -> Status:
    return immediate_barrier(comm, algorithm).wait()


@checked
def immediate_broadcast(
    comm: Communicator, value: Any, root: int = 0, datatype: Any = None, algorithm: Optional[str] = None
) -> Request:
    """root 发送 value；其他 rank 的 value 必须是可写容器，被原地覆盖"""
    _check_root(comm, root)
    algo = _algorithm(algorithm)
    is_root = comm.own_rank == root
    if is_root:
        sb, rb = as_send_buffer(value, datatype), None
        codec = sb.codec
    else:
        sb, rb = None, as_recv_buffer(value, datatype)
        codec = rb.codec
    ch = _Channel.for_comm(comm, codec, "broadcast", root, codec.typemap.size, algo)

    def run():
        data = yield from _broadcast(ch, sb.array if is_root else None, root, algo)
        if rb is not None:
            rb.deliver_array(data)
        return Status(root, ANY_TAG, SUCCESS, len(data)), None

    return _launch(comm, run(), [rb] if rb is not None else [])


@checked
def broadcast(
    comm: Communicator, value: Any, root: int = 0, datatype: Any = None, algorithm: Optional[str] = None
) -> Status:
    return immediate_broadcast(comm, value, root, datatype, algorithm).wait()


@checked
def immediate_gather(comm: Communicator, value: Any, out: Any = None, root: int = 0, datatype: Any = None) -> Request:
    """root 的 out 第 i 段为 rank i 的 value；非 root 的 out 被忽略"""
    _check_root(comm, root)
    sb = as_send_buffer(value, datatype)
    rb = None
    if comm.own_rank == root:
        if out is None:
            raise fail(ErrorClass.INVALID_ARGUMENT, 13, "gather needs an output container at the root")
        rb = _out_buffer(out, datatype, sb.codec)
        _check_capacity(rb, comm.group.size * sb.count, "gather")
    ch = _Channel.for_comm(comm, sb.codec, "gather", root, sb.count, sb.typemap.size)

    def run():
        data = yield from _gather(ch, sb.array, root)
        if data is None:
            return Status(root, ANY_TAG, SUCCESS, 0), None
        rb.deliver_array(data)
        return Status(root, ANY_TAG, SUCCESS, len(data)), None

    return _launch(comm, run(), [rb] if rb is not None else [])


@checked
def gather(comm: Communicator, value: Any, out: Any = None, root: int = 0, datatype: Any = None) -> Status:
    return immediate_gather(comm, value, out, root, datatype).wait()


@checked
def immediate_scatter(comm: Communicator, values: Any, out: Any, root: int = 0, datatype: Any = None) -> Request:
    """root 的 values 均分为 size 段，第 i 段写入 rank i 的 out；非 root 的 values 被忽略"""
    _check_root(comm, root)
    is_root = comm.own_rank == root
    sb, count = None, 0
    if is_root:
        sb = as_send_buffer(values, datatype)
        count = _blocks(comm, sb, "scatter")
        rb = _out_buffer(out, datatype, sb.codec)
        _check_capacity(rb, count, "scatter")
    else:
        rb = as_recv_buffer(out, datatype)
    codec = sb.codec if is_root else rb.codec
    ch = _Channel.for_comm(comm, codec, "scatter", root, codec.typemap.size)

    def run():
        data = yield from _scatter(ch, sb.array if is_root else None, root, count)
        rb.deliver_array(data)
        return Status(root, ANY_TAG, SUCCESS, len(data)), None

    return _launch(comm, run(), [rb])


@checked
def scatter(comm: Communicator, values: Any, out: Any, root: int = 0, datatype: Any = None) -> Status:
    return immediate_scatter(comm, values, out, root, datatype).wait()


@checked
def immediate_all_gather(
    comm: Communicator, value: Any, out: Any, datatype: Any = None, algorithm: Optional[str] = None
) -> Request:
    comm.ensure_live()
    algo = _algorithm(algorithm)
    sb = as_send_buffer(value, datatype)
    rb = _out_buffer(out, datatype, sb.codec)
    _check_capacity(rb, comm.group.size * sb.count, "all_gather")
    ch = _Channel.for_comm(comm, sb.codec, "all_gather", sb.count, sb.typemap.size, algo)

    def run():
        data = yield from _all_gather(ch, sb.array, algo)
        rb.deliver_array(data)
        return Status(UNDEFINED, ANY_TAG, SUCCESS, len(data)), None

    return _launch(comm, run(), [rb])


@checked
def all_gather(
    comm: Communicator, value: Any, out: Any, datatype: Any = None, algorithm: Optional[str] = None
) -> Status:
    return immediate_all_gather(comm, value, out, datatype, algorithm).wait()


@checked
def immediate_all_to_all(comm: Communicator, values: Any, out: Any, datatype: Any = None) -> Request:
    """rank i 的 out 第 j 段 = rank j 的 values 第 i 段"""
    comm.ensure_live()
    sb = as_send_buffer(values, datatype)
    count = _blocks(comm, sb, "all_to_all")
    rb = _out_buffer(out, datatype, sb.codec)
    _check_capacity(rb, sb.count, "all_to_all")
    ch = _Channel.for_comm(comm, sb.codec, "all_to_all", count, sb.typemap.size)

    def run():
        data = yield from _all_to_all(ch, sb.array, count)
        rb.deliver_array(data)
        return Status(UNDEFINED, ANY_TAG, SUCCESS, len(data)), None

    return _launch(comm, run(), [rb])


@checked
def all_to_all(comm: Communicator, values: Any, out: Any, datatype: Any = None) -> Status:
    return immediate_all_to_all(comm, values, out, datatype).wait()


# ---- 归约 ----

def _value(request: Request) -> Any:
    request.wait()
    return request.value


@checked
def immediate_reduce(
    comm: Communicator,
    value: Any,
    op: ReduceOp,
    root: int = 0,
    out: Any = None,
    datatype: Any = None,
    algorithm: Optional[str] = None,
) -> Request:
    """完成后 Request.value 在 root 上是与 value 同形的结果，其他 rank 为 None"""
    _check_root(comm, root)
    algo = _algorithm(algorithm)
    sb = as_send_buffer(value, datatype)
    rb = _out_buffer(out, datatype, sb.codec) if comm.own_rank == root else None
    ch = _Channel.for_comm(comm, sb.codec, "reduce", root, sb.count, sb.typemap.size, op.key, algo)

    def run():
        acc = yield from _reduce(ch, sb.array, op, root, algo)
        return _value_result(sb, acc, rb)

    return _launch(comm, run(), [rb] if rb is not None else [])


@checked
def reduce(
    comm: Communicator,
    value: Any,
    op: ReduceOp,
    root: int = 0,
    out: Any = None,
    datatype: Any = None,
    algorithm: Optional[str] = None,
) -> Any:
    return _value(immediate_reduce(comm, value, op, root, out, datatype, algorithm))


@checked
def immediate_all_reduce(
    comm: Communicator, value: Any, op: ReduceOp, out: Any = None, datatype: Any = None,
    algorithm: Optional[str] = None,
) -> Request:
    comm.ensure_live()
    algo = _algorithm(algorithm)
    sb = as_send_buffer(value, datatype)
    rb = _out_buffer(out, datatype, sb.codec)
    ch = _Channel.for_comm(comm, sb.codec, "all_reduce", sb.count, sb.typemap.size, op.key, algo)

    def run():
        acc = yield from _all_reduce(ch, sb.array, op, algo)
        return _value_result(sb, acc, rb)

    return _launch(comm, run(), [rb] if rb is not None else [])


@checked
def all_reduce(
    comm: Communicator, value: Any, op: ReduceOp, out: Any = None, datatype: Any = None,
    algorithm: Optional[str] = None,
) -> Any:
    return _value(immediate_all_reduce(comm, value, op, out, datatype, algorithm))


@checked
def immediate_reduce_scatter(
    comm: Communicator, values: Any, op: ReduceOp, out: Any = None, datatype: Any = None,
    algorithm: Optional[str] = None,
) -> Request:
    """rank i 得到所有 rank 的 values 第 i 段的归约"""
    comm.ensure_live()
    algo = _algorithm(algorithm)
    sb = as_send_buffer(values, datatype)
    count = _blocks(comm, sb, "reduce_scatter")
    rb = _out_buffer(out, datatype, sb.codec)
    if rb is not None:
        _check_capacity(rb, count, "reduce_scatter")
    ch = _Channel.for_comm(comm, sb.codec, "reduce_scatter", sb.count, sb.typemap.size, op.key, algo)

    def run():
        acc = yield from _reduce_scatter(ch, sb.array, op, count, algo)
        return _value_result(sb, acc, rb)

    return _launch(comm, run(), [rb] if rb is not None else [])


@checked
def reduce_scatter(
    comm: Communicator, values: Any, op: ReduceOp, out: Any = None, datatype: Any = None,
    algorithm: Optional[str] = None,
) -> Any:
    return _value(immediate_reduce_scatter(comm, values, op, out, datatype, algorithm))


def _immediate_scan(
    comm: Communicator, value: Any, op: ReduceOp, out: Any, datatype: Any, algorithm: Optional[str],
    inclusive: bool,
) -> Request:
    comm.ensure_live()
    algo = _algorithm(algorithm)
    sb = as_send_buffer(value, datatype)
    rb = _out_buffer(out, datatype, sb.codec)
    name = "scan" if inclusive else "exclusive_scan"
    ch = _Channel.for_comm(comm, sb.codec, name, sb.count, sb.typemap.size, op.key, algo)

    def run():
        acc = yield from _scan(ch, sb.array, op, algo, inclusive)
        return _value_result(sb, acc, rb)

    return _launch(comm, run(), [rb] if rb is not None else [])


@checked
def immediate_scan(
    comm: Communicator, value: Any, op: ReduceOp, out: Any = None, datatype: Any = None,
    algorithm: Optional[str] = None,
) -> Request:
    return _immediate_scan(comm, value, op, out, datatype, algorithm, inclusive=True)


@checked
def scan(
    comm: Communicator, value: Any, op: ReduceOp, out: Any = None, datatype: Any = None,
    algorithm: Optional[str] = None,
) -> Any:
    return _value(immediate_scan(comm, value, op, out, datatype, algorithm))


@checked
def immediate_exclusive_scan(
    comm: Communicator, value: Any, op: ReduceOp, out: Any = None, datatype: Any = None,
    algorithm: Optional[str] = None,
) -> Request:
    """rank 0 的结果为 None，out 不被写入"""
    return _immediate_scan(comm, value, op, out, datatype, algorithm, inclusive=False)


@checked
def exclusive_scan(
    comm: Communicator, value: Any, op: ReduceOp, out: Any = None, datatype: Any = None,
    algorithm: Optional[str] = None,
) -> Any:
    return _value(immediate_exclusive_scan(comm, value, op, out, datatype, algorithm))


# ---- 基准测试用的裸调度 ----

COLLECTIVES = (
    "barrier",
    "broadcast",
    "gather",
    "scatter",
    "all_gather",
    "all_to_all",
    "reduce",
    "all_reduce",
    "reduce_scatter",
    "scan",
    "exclusive_scan",
)


def raw_collective(
    fabric: Fabric,
    rank: int,
    seq: int,
    name: str,
    data: np.ndarray,
    op: ReduceOp = SUM,
    root: int = 0,
    algorithm: str = "auto",
) -> Optional[np.ndarray]:
    """绕过缓冲区适配、Request 与错误策略，直接在 fabric 的 world 上运行一次集合调度

    data 是一维数组；scatter / all_to_all / reduce_scatter 的 data 长度须为 world_size 的倍数。
    """
    n = fabric.world_size
    ch = _Channel(fabric, WORLD_CONTEXT, range(n), rank, seq, codec_for(data.dtype), name)
    count = len(data) // n
    schedules: dict[str, Callable[[], Schedule]] = {
        "barrier": lambda: _barrier(ch, algorithm),
        "broadcast": lambda: _broadcast(ch, data, root, algorithm),
        "gather": lambda: _gather(ch, data, root),
        "scatter": lambda: _scatter(ch, data, root, count),
        "all_gather": lambda: _all_gather(ch, data, algorithm),
        "all_to_all": lambda: _all_to_all(ch, data, count),
        "reduce": lambda: _reduce(ch, data, op, root, algorithm),
        "all_reduce": lambda: _all_reduce(ch, data, op, algorithm),
        "reduce_scatter": lambda: _reduce_scatter(ch, data, op, count, algorithm),
        "scan": lambda: _scan(ch, data, op, algorithm, True),
        "exclusive_scan": lambda: _scan(ch, data, op, algorithm, False),
    }
    if name not in schedules:
        raise fail(ErrorClass.INVALID_ARGUMENT, 14, f"unknown collective {name!r}")

    def bare():
        result = yield from schedules[name]()
        return None, result

    op_ = ScheduleOp(bare())
    fabric.block_until(op_.poll)
    if op_.error is not None:
        raise op_.error
    return op_.value
