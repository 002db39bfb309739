"""集合通信测试：与逐 rank 直接计算的结果对比"""
import functools
import random
import threading
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from commkit.api import comm as comm_api
from commkit.api.collectives import (
    BAND,
    BOR,
    BXOR,
    COLLECTIVES,
    LAND,
    LOR,
    MAX,
    MIN,
    PROD,
    SUM,
    ReduceOp,
    raw_collective,
)
from commkit.errors import InternalError, InvalidArgument, InvalidRank, LengthMismatch
from commkit.services.buffers import codec_for
from commkit.services.fabric import FabricConfig, spawn_world
from commkit.services.typemap import Array, compliant

INT_OPS = [SUM, PROD, MIN, MAX, BAND, BOR, BXOR]
RANK_COUNTS = [1, 2, 3, 4, 5, 8]
ELEMENT_COUNTS = [1, 3, 17]


@compliant
@dataclass
class Digits:
    """十进制拼接：结合但不可交换"""
    value: np.int64
    width: np.int64


def _concat(a: Digits, b: Digits) -> Digits:
    return Digits(a.value * 10 ** b.width + b.value, a.width + b.width)


CONCAT = ReduceOp(_concat, commutative=False)


@compliant
@dataclass
class Sample:
    id: np.uint64
    position: Array[np.float32, 3]


def _int_input(n, count, rank):
    return np.random.default_rng([n, count, rank]).integers(-50, 50, size=n * count, dtype=np.int64)


def _fold(op, arrays):
    return functools.reduce(op.ufunc, arrays)


# ---- 全部集合操作与直接计算对比 ----

def _run_all(comm, count):
    n, r = comm.size(), comm.rank()
    data = _int_input(n, count, r)
    mine = data[:count]
    root = n - 1
    out = {}

    comm.barrier()

    b = mine.copy() if r == root else np.zeros(count, dtype=np.int64)
    comm.broadcast(b, root=root)
    out["broadcast"] = b

    g = np.zeros(n * count, dtype=np.int64) if r == 0 else None
    comm.gather(mine, g, root=0)
    out["gather"] = g

    s = np.zeros(count, dtype=np.int64)
    comm.scatter(data, s, root=root)
    out["scatter"] = s

    ag = np.zeros(n * count, dtype=np.int64)
    comm.all_gather(mine, ag)
    out["all_gather"] = ag

    a2a = np.zeros(n * count, dtype=np.int64)
    comm.all_to_all(data, a2a)
    out["all_to_all"] = a2a

    for op in INT_OPS:
        out[("reduce", op.name)] = comm.reduce(mine, op, root=n // 2)
        out[("all_reduce", op.name)] = comm.all_reduce(mine, op)
        out[("reduce_scatter", op.name)] = comm.reduce_scatter(data, op)
        out[("scan", op.name)] = comm.scan(mine, op)
        out[("exclusive_scan", op.name)] = comm.exclusive_scan(mine, op)
    return out


def _assert_same(actual, expected):
    if expected is None:
        assert actual is None
    else:
        assert actual is not None
        assert np.array_equal(actual, expected)


@pytest.mark.parametrize("count", ELEMENT_COUNTS)
@pytest.mark.parametrize("n", RANK_COUNTS)
def test_collectives_match_direct_computation(run_world, n, count):
    results = run_world(n, lambda comm: _run_all(comm, count))
    inputs = [_int_input(n, count, r) for r in range(n)]
    mine = [x[:count] for x in inputs]

    def block(x, i):
        return x[i * count:(i + 1) * count]

    for r, res in enumerate(results):
        _assert_same(res["broadcast"], mine[n - 1])
        _assert_same(res["gather"], np.concatenate(mine) if r == 0 else None)
        _assert_same(res["scatter"], block(inputs[n - 1], r))
        _assert_same(res["all_gather"], np.concatenate(mine))
        _assert_same(res["all_to_all"], np.concatenate([block(x, r) for x in inputs]))
        for op in INT_OPS:
            _assert_same(res[("reduce", op.name)], _fold(op, mine) if r == n // 2 else None)
            _assert_same(res[("all_reduce", op.name)], _fold(op, mine))
            _assert_same(res[("reduce_scatter", op.name)], _fold(op, [block(x, r) for x in inputs]))
            _assert_same(res[("scan", op.name)], _fold(op, mine[:r + 1]))
            _assert_same(res[("exclusive_scan", op.name)], _fold(op, mine[:r]) if r else None)


@pytest.mark.parametrize("n", RANK_COUNTS)
def test_float_sums_within_tolerance(run_world, n):
    def value(r):
        return np.random.default_rng([7, r]).uniform(1.0, 2.0, size=17)

    def fn(comm):
        x = value(comm.rank())
        return comm.all_reduce(x, SUM), comm.scan(x, SUM)

    for r, (total, prefix) in enumerate(run_world(n, fn)):
        np.testing.assert_allclose(total, np.sum([value(i) for i in range(n)], axis=0), rtol=1e-12)
        np.testing.assert_allclose(prefix, np.sum([value(i) for i in range(r + 1)], axis=0), rtol=1e-12)


@pytest.mark.parametrize("n", [1, 3, 4])
def test_logical_ops(run_world, n):
    def value(r):
        return np.random.default_rng([3, r]).random(5) < 0.5

    def fn(comm):
        x = value(comm.rank())
        return comm.all_reduce(x, LAND), comm.all_reduce(x, LOR)

    land, lor = run_world(n, fn)[0]
    values = [value(r) for r in range(n)]
    assert np.array_equal(land, np.logical_and.reduce(values))
    assert np.array_equal(lor, np.logical_or.reduce(values))


def test_sum_of_rank_ids(run_world):
    n = 5
    assert run_world(n, lambda comm: comm.all_reduce(comm.rank(), SUM)) == [n * (n - 1) // 2] * n


# ---- 不可交换的归约 ----

@pytest.mark.parametrize("algorithm", ["auto", "linear"])
def test_non_commutative_reduce_keeps_rank_order(run_world, algorithm):
    def fn(comm):
        mine = Digits(comm.rank() + 1, 1)
        result = comm.reduce(mine, CONCAT, root=2, algorithm=algorithm)
        return None if result is None else result.value

    assert run_world(4, fn) == [None, None, 1234, None]


@pytest.mark.parametrize("n", [3, 4])
@pytest.mark.parametrize("algorithm", ["auto", "linear"])
def test_non_commutative_all_reduce(run_world, n, algorithm):
    expected = int("".join(str(i + 1) for i in range(n)))

    def fn(comm):
        return comm.all_reduce(Digits(comm.rank() + 1, 1), CONCAT, algorithm=algorithm).value

    assert run_world(n, fn) == [expected] * n


@pytest.mark.parametrize("algorithm", ["auto", "linear"])
def test_non_commutative_scan(run_world, algorithm):
    def fn(comm):
        mine = Digits(comm.rank() + 1, 1)
        inclusive = comm.scan(mine, CONCAT, algorithm=algorithm)
        exclusive = comm.exclusive_scan(mine, CONCAT, algorithm=algorithm)
        return inclusive.value, None if exclusive is None else exclusive.value

    assert run_world(5, fn) == [(1, None), (12, 1), (123, 12), (1234, 123), (12345, 1234)]


# ---- 算法交叉验证 ----

@pytest.mark.parametrize("n", [2, 3, 5, 8])
def test_linear_and_auto_agree(run_world, n):
    def fn(comm):
        x = np.random.default_rng([11, comm.rank()]).integers(0, 1000, size=6)
        out = {}
        for algorithm in ("auto", "linear"):
            comm.barrier(algorithm=algorithm)
            b = x.copy() if comm.rank() == 1 else np.zeros(6, dtype=np.int64)
            comm.broadcast(b, root=1, algorithm=algorithm)
            ag = np.zeros(6 * n, dtype=np.int64)
            comm.all_gather(x, ag, algorithm=algorithm)
            out[algorithm] = (
                b,
                ag,
                comm.reduce(x, SUM, root=n - 1, algorithm=algorithm),
                comm.all_reduce(x, MAX, algorithm=algorithm),
                comm.scan(x, SUM, algorithm=algorithm),
            )
        return out

    for res in run_world(n, fn):
        for auto, linear in zip(res["auto"], res["linear"]):
            _assert_same(auto, linear)


def test_unknown_algorithm(run_world):
    def fn(comm):
        with pytest.raises(InvalidArgument) as e:
            comm.barrier(algorithm="butterfly")
        return e.value.code.detail

    assert run_world(1, fn) == [12]


# ---- 容器与类型 ----

def test_gather_and_broadcast_compliant_instances(run_world):
    def fn(comm):
        r = comm.rank()
        mine = Sample(r, [float(r), 0.5, -1.0])
        gathered: list = []
        comm.gather(mine, gathered if r == 0 else None, root=0)
        target = Sample(99, [9.0, 9.0, 9.0]) if r else Sample(7, [1.0, 2.0, 3.0])
        comm.broadcast(target)
        return [s.id for s in gathered], target

    results = run_world(3, fn)
    assert results[0][0] == [0, 1, 2]
    assert all(t == Sample(7, [1.0, 2.0, 3.0]) for _, t in results)


def test_scatter_then_gather_is_identity(run_world):
    values = list(range(10, 90, 10))

    def fn(comm):
        mine = np.zeros(2, dtype=np.int64)
        comm.scatter(np.array(values) if comm.rank() == 0 else None, mine, root=0)
        back = np.zeros(8, dtype=np.int64) if comm.rank() == 0 else None
        comm.gather(mine, back, root=0)
        return mine.tolist(), None if back is None else back.tolist()

    results = run_world(4, fn)
    assert [mine for mine, _ in results] == [values[2 * i:2 * i + 2] for i in range(4)]
    assert results[0][1] == values


def test_all_to_all_is_transpose(run_world):
    n = 4

    def fn(comm):
        r = comm.rank()
        out = np.zeros(n, dtype=np.int64)
        comm.all_to_all(np.array([r * n + j for j in range(n)]), out)
        return out.tolist()

    matrix = np.arange(n * n).reshape(n, n)
    assert run_world(n, fn) == matrix.T.tolist()


def test_value_collectives_fill_out(run_world):
    def fn(comm):
        out = np.zeros(2, dtype=np.int64)
        value = comm.all_reduce(np.array([1, comm.rank()]), SUM, out=out)
        return value.tolist(), out.tolist()

    assert run_world(3, fn) == [([3, 3], [3, 3])] * 3


# ---- 错误 ----

def test_mismatched_arguments_detected(run_world):
    def fn(comm):
        x = np.zeros(2 + comm.rank(), dtype=np.int64)
        with pytest.raises(InvalidArgument) as e:
            comm.all_reduce(x, SUM)
        return e.value.code.detail

    assert run_world(2, fn) == [5, 5]


def test_mismatched_op_detected(run_world):
    def fn(comm):
        op = SUM if comm.rank() == 0 else MAX
        with pytest.raises(InvalidArgument) as e:
            comm.all_reduce(np.zeros(2, dtype=np.int64), op)
        return e.value.code.detail

    assert run_world(2, fn) == [5, 5]


def test_length_mismatches(run_world):
    def fn(comm):
        details = []
        for call in (
            lambda: comm.all_to_all(np.zeros(3, dtype=np.int64), np.zeros(3, dtype=np.int64)),
            lambda: comm.all_gather(np.zeros(2, dtype=np.int64), np.zeros(3, dtype=np.int64)),
            lambda: comm.reduce_scatter(np.zeros(5, dtype=np.int64), SUM),
        ):
            with pytest.raises(LengthMismatch) as e:
                call()
            details.append(e.value.code.detail)
        return details

    assert run_world(2, fn)[0] == [8, 7, 8]


def test_invalid_root_and_missing_output(run_world):
    def fn(comm):
        with pytest.raises(InvalidRank) as bad_root:
            comm.broadcast(np.zeros(1), root=5)
        with pytest.raises(InvalidArgument) as no_out:
            comm.gather(1, None, root=0)
        return bad_root.value.code.detail, no_out.value.code.detail

    assert run_world(1, fn) == [(6, 13)]


def test_combine_errors():
    with pytest.raises(LengthMismatch) as e:
        SUM.combine(codec_for(np.int64), np.zeros(2, dtype=np.int64), np.zeros(3, dtype=np.int64))
    assert e.value.code.detail == 6
    broken = ReduceOp(lambda a, b: a + "x")
    with pytest.raises(InvalidArgument) as e:
        broken.combine(codec_for(np.int64), np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64))
    assert e.value.code.detail == 11


def test_raising_reduction_closure_is_internal_error(run_world):
    broken = ReduceOp(lambda a, b: a // 0, name="div_by_zero")

    def fn(comm):
        x = np.array([1, 2], dtype=np.int64)
        if comm.rank() != 0:
            return comm.reduce(x, broken, root=0)
        with pytest.raises(InternalError) as e:
            comm.reduce(x, broken, root=0)
        return e.value.code.detail, type(e.value.__cause__).__name__

    assert run_world(2, fn) == [(7, "ZeroDivisionError"), None]


# ---- 立即集合与并发 ----

def test_concurrent_immediate_collectives_on_duplicates(run_world):
    n = 4

    def fn(comm):
        r = comm.rank()
        with comm.duplicate() as a, comm.duplicate() as b:
            if r % 2:
                rb = b.immediate_all_reduce(r * 10, SUM)
                ra = a.immediate_all_reduce(r, SUM)
            else:
                ra = a.immediate_all_reduce(r, SUM)
                rb = b.immediate_all_reduce(r * 10, SUM)
            comm_api.wait_all([rb, ra])
            return ra.value, rb.value

    assert run_world(n, fn) == [(6, 60)] * n


def test_concurrent_immediate_collectives_on_one_communicator(run_world):
    def fn(comm):
        r = comm.rank()
        target = np.array([5]) if r == 0 else np.zeros(1, dtype=np.int64)
        first = comm.immediate_all_reduce(r + 1, PROD)
        second = comm.immediate_broadcast(target)
        second.wait()
        first.wait()
        return first.value, int(target[0])

    assert run_world(3, fn) == [(6, 5)] * 3


def _start_every_collective(comm, count):
    n, r = comm.size(), comm.rank()
    data = _int_input(n, count, r)
    mine = data[:count]
    root = n - 1
    buffers = {
        "broadcast": mine.copy() if r == root else np.zeros(count, dtype=np.int64),
        "gather": np.zeros(n * count, dtype=np.int64) if r == 0 else None,
        "scatter": np.zeros(count, dtype=np.int64),
        "all_gather": np.zeros(n * count, dtype=np.int64),
        "all_to_all": np.zeros(n * count, dtype=np.int64),
    }
    requests = {
        "barrier": comm.immediate_barrier(),
        "broadcast": comm.immediate_broadcast(buffers["broadcast"], root=root),
        "gather": comm.immediate_gather(mine, buffers["gather"], root=0),
        "scatter": comm.immediate_scatter(data, buffers["scatter"], root=root),
        "all_gather": comm.immediate_all_gather(mine, buffers["all_gather"]),
        "all_to_all": comm.immediate_all_to_all(data, buffers["all_to_all"]),
        "reduce": comm.immediate_reduce(mine, SUM, root=n // 2),
        "all_reduce": comm.immediate_all_reduce(mine, SUM),
        "reduce_scatter": comm.immediate_reduce_scatter(data, SUM),
        "scan": comm.immediate_scan(mine, SUM),
        "exclusive_scan": comm.immediate_exclusive_scan(mine, SUM),
    }
    return buffers, requests


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_every_immediate_collective_completes_in_any_order(run_world, n, seed):
    """各 rank 同时发起全部立即集合，再按各自随机的顺序用 wait / wait_any 完成"""
    count = 3

    def fn(comm):
        buffers, requests = _start_every_collective(comm, count)
        assert set(requests) == set(COLLECTIVES)
        rng = random.Random(seed * 100 + comm.rank())
        remaining = list(requests)
        rng.shuffle(remaining)
        while remaining:
            if rng.random() < 0.5:
                requests[remaining.pop(0)].wait()
            else:
                index, _ = comm_api.wait_any([requests[name] for name in remaining])
                remaining.pop(index)
        return {name: buffers[name] if name in buffers else requests[name].value for name in COLLECTIVES}

    results = run_world(n, fn, seed=seed, jitter=0.0002)
    inputs = [_int_input(n, count, r) for r in range(n)]
    mine = [x[:count] for x in inputs]

    def block(x, i):
        return x[i * count:(i + 1) * count]

    for r, res in enumerate(results):
        assert res["barrier"] is None
        _assert_same(res["broadcast"], mine[n - 1])
        _assert_same(res["gather"], np.concatenate(mine) if r == 0 else None)
        _assert_same(res["scatter"], block(inputs[n - 1], r))
        _assert_same(res["all_gather"], np.concatenate(mine))
        _assert_same(res["all_to_all"], np.concatenate([block(x, r) for x in inputs]))
        _assert_same(res["reduce"], _fold(SUM, mine) if r == n // 2 else None)
        _assert_same(res["all_reduce"], _fold(SUM, mine))
        _assert_same(res["reduce_scatter"], _fold(SUM, [block(x, r) for x in inputs]))
        _assert_same(res["scan"], _fold(SUM, mine[:r + 1]))
        _assert_same(res["exclusive_scan"], _fold(SUM, mine[:r]) if r else None)


def test_barrier_waits_for_everyone(run_world):
    n = 5
    lock = threading.Lock()
    arrived = []

    def fn(comm):
        with lock:
            arrived.append(comm.rank())
        request = comm.immediate_barrier()
        request.wait()
        with lock:
            return len(arrived)

    assert run_world(n, fn) == [n] * n


@pytest.mark.parametrize("seed", range(3))
def test_collectives_under_jitter(run_world, seed):
    n = 5

    def fn(comm):
        x = np.full(3, comm.rank(), dtype=np.int64)
        return comm.all_reduce(x, SUM).tolist(), comm.scan(x, MAX).tolist()

    results = run_world(n, fn, seed=seed, jitter=0.0005)
    assert results == [([10, 10, 10], [r] * 3) for r in range(n)]


def test_raw_collective_matches_api():
    def main(rank, fabric):
        data = np.arange(4, dtype=np.uint8) + rank
        return raw_collective(fabric, rank, 1, "all_reduce", data).tolist()

    results = spawn_world(FabricConfig(world_size=2, watchdog_timeout=2.0), main)
    assert results == [[1, 3, 5, 7]] * 2


# ---- 性质测试 ----

@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(min_value=2, max_value=8), st.data())
def test_broadcast_random_payload(run_world, n, data):
    root = data.draw(st.integers(min_value=0, max_value=n - 1))
    payload = data.draw(st.binary(max_size=64))

    def fn(comm):
        if comm.rank() == root:
            comm.broadcast(payload, root=root)
            return payload
        out = bytearray()
        comm.broadcast(out, root=root)
        return bytes(out)

    assert run_world(n, fn) == [payload] * n


INT_DTYPES = [np.int8, np.int16, np.int32, np.int64, np.uint8, np.uint16, np.uint32, np.uint64]


@st.composite
def _int_triples(draw):
    dtype = draw(st.sampled_from(INT_DTYPES))
    info = np.iinfo(dtype)
    size = draw(st.integers(min_value=1, max_value=8))
    elements = st.lists(st.integers(min_value=int(info.min), max_value=int(info.max)), min_size=size, max_size=size)
    return dtype, [np.array(draw(elements), dtype=dtype) for _ in range(3)]


def _check_laws(op, codec, a, b, c):
    left = op.combine(codec, op.combine(codec, a, b), c)
    right = op.combine(codec, a, op.combine(codec, b, c))
    assert np.array_equal(left, right)
    if op.commutative:
        assert np.array_equal(op.combine(codec, a, b), op.combine(codec, b, a))


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(INT_OPS + [LAND, LOR]), _int_triples())
def test_builtin_ops_on_integer_arrays(op, triple):
    dtype, (a, b, c) = triple
    _check_laws(op, codec_for(dtype), a, b, c)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from([MIN, MAX]), st.lists(st.floats(allow_nan=False, width=64), min_size=3, max_size=3))
def test_min_max_on_floats(op, values):
    a, b, c = (np.array([v]) for v in values)
    _check_laws(op, codec_for(np.float64), a, b, c)


@settings(max_examples=200, deadline=None)
@given(
    st.sampled_from(INT_OPS + [LAND, LOR]),
    st.lists(st.integers(min_value=-2**40, max_value=2**40), min_size=3, max_size=3),
)
def test_builtin_closures_on_python_ints(op, values):
    a, b, c = values
    assert op(op(a, b), c) == op(a, op(b, c))
    if op.commutative:
        assert op(a, b) == op(b, a)
