"""错误类别、错误码与检查策略

每个错误码 (ErrorCode) 归属于一个错误类别 (ErrorClass)。公开 API 的失败
一律以 CommError 子类抛出，或在 return 策略下直接返回错误码。
"""
import functools
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Callable, Iterator, Optional, TypeVar

import orjson

from commkit import config

T = TypeVar("T")


class ErrorClass(IntEnum):
    """错误类别，整数值稳定（用于 trace 序列化）"""
    SUCCESS = 0
    INVALID_RANK = 1
    INVALID_TAG = 2
    INVALID_ARGUMENT = 3
    TRUNCATION = 4
    NON_COMPLIANT_TYPE = 5
    USE_AFTER_FREE = 6
    USE_OF_COMPLETED_REQUEST = 7
    START_ON_ACTIVE = 8
    INACTIVE_REQUEST = 9
    EMPTY_SET = 10
    LENGTH_MISMATCH = 11
    INTERNAL = 12
    # 扩展类别：模拟网络的诊断信息，标准中没有对应项
    DEADLOCK_SUSPECTED = 100
    CONSUMED_FUTURE = 101

    @property
    def is_extension(self) -> bool:
        return self.value >= 100

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class ErrorCode:
    cls: ErrorClass
    detail: int = 0
    message: str = ""

    def __post_init__(self):
        if (self.cls is ErrorClass.SUCCESS) != (self.detail == 0):
            raise ValueError(f"detail must be 0 iff class is success: {self.cls.label}/{self.detail}")

    @property
    def ok(self) -> bool:
        return self.cls is ErrorClass.SUCCESS

    def key(self) -> tuple[int, int]:
        return int(self.cls), self.detail

    def __str__(self) -> str:
        return f"{self.cls.label}:{self.detail}:{self.message}"

    def to_json(self) -> bytes:
        return orjson.dumps({"class": int(self.cls), "detail": self.detail, "message": self.message})

    @classmethod
    def from_json(cls, data: bytes | str) -> "ErrorCode":
        obj = orjson.loads(data)
        return cls(ErrorClass(obj["class"]), obj["detail"], obj["message"])


# 默认错误码
SUCCESS = ErrorCode(ErrorClass.SUCCESS)
INVALID_RANK = ErrorCode(ErrorClass.INVALID_RANK, 1, "invalid rank")
INVALID_TAG = ErrorCode(ErrorClass.INVALID_TAG, 1, "invalid tag")
INVALID_ARGUMENT = ErrorCode(ErrorClass.INVALID_ARGUMENT, 1, "invalid argument")
TRUNCATION = ErrorCode(ErrorClass.TRUNCATION, 1, "message truncated")
NON_COMPLIANT_TYPE = ErrorCode(ErrorClass.NON_COMPLIANT_TYPE, 1, "type is not compliant")
USE_AFTER_FREE = ErrorCode(ErrorClass.USE_AFTER_FREE, 1, "handle already freed")
USE_OF_COMPLETED_REQUEST = ErrorCode(ErrorClass.USE_OF_COMPLETED_REQUEST, 1, "request already completed")
START_ON_ACTIVE = ErrorCode(ErrorClass.START_ON_ACTIVE, 1, "request is already active")
INACTIVE_REQUEST = ErrorCode(ErrorClass.INACTIVE_REQUEST, 1, "request is inactive")
CONSUMED_FUTURE = ErrorCode(ErrorClass.CONSUMED_FUTURE, 1, "future already consumed")
EMPTY_SET = ErrorCode(ErrorClass.EMPTY_SET, 1, "empty set")
LENGTH_MISMATCH = ErrorCode(ErrorClass.LENGTH_MISMATCH, 1, "length mismatch")
DEADLOCK_SUSPECTED = ErrorCode(ErrorClass.DEADLOCK_SUSPECTED, 1, "all ranks blocked without progress")
INTERNAL = ErrorCode(ErrorClass.INTERNAL, 1, "internal error")


class CommError(Exception):
    """公开 API 唯一的失败通道"""
    error_class = ErrorClass.INTERNAL

    def __init__(self, code: ErrorCode):
        super().__init__(str(code))
        self.code = code


class InvalidRank(CommError):
    error_class = ErrorClass.INVALID_RANK


class InvalidTag(CommError):
    error_class = ErrorClass.INVALID_TAG


class InvalidArgument(CommError):
    error_class = ErrorClass.INVALID_ARGUMENT


class Truncation(CommError):
    error_class = ErrorClass.TRUNCATION


class NonCompliantType(CommError):
    error_class = ErrorClass.NON_COMPLIANT_TYPE


class UseAfterFree(CommError):
    error_class = ErrorClass.USE_AFTER_FREE


class UseOfCompletedRequest(CommError):
    error_class = ErrorClass.USE_OF_COMPLETED_REQUEST


class StartOnActive(CommError):
    error_class = ErrorClass.START_ON_ACTIVE


class InactiveRequest(CommError):
    error_class = ErrorClass.INACTIVE_REQUEST


class ConsumedFuture(CommError):
    error_class = ErrorClass.CONSUMED_FUTURE


class EmptySet(CommError):
    error_class = ErrorClass.EMPTY_SET


class LengthMismatch(CommError):
    error_class = ErrorClass.LENGTH_MISMATCH


class DeadlockSuspected(CommError):
    error_class = ErrorClass.DEADLOCK_SUSPECTED


class InternalError(CommError):
    error_class = ErrorClass.INTERNAL


class WorldError(CommError):
    """spawn_world 中某个 rank 失败；outcomes 按 rank 记录每个 rank 的结果"""

    def __init__(self, code: ErrorCode, rank: int, outcomes: list):
        super().__init__(code)
        self.rank = rank
        self.outcomes = outcomes

    def __str__(self) -> str:
        return f"rank {self.rank}: {self.code}"


_EXCEPTIONS: dict[ErrorClass, type[CommError]] = {
    exc.error_class: exc
    for exc in (
        InvalidRank, InvalidTag, InvalidArgument, Truncation, NonCompliantType,
        UseAfterFree, UseOfCompletedRequest, StartOnActive, InactiveRequest,
        ConsumedFuture, EmptySet, LengthMismatch, DeadlockSuspected, InternalError,
    )
}


def exception_for(code: ErrorCode) -> CommError:
    return _EXCEPTIONS.get(code.cls, InternalError)(code)


def fail(cls: ErrorClass, detail: int, message: str) -> CommError:
    """构造一个待抛出的异常: raise fail(...)"""
    return exception_for(ErrorCode(cls, detail, message))


def class_of(code: ErrorCode) -> ErrorClass:
    return code.cls


# ---- 检查策略 ----

class ErrorPolicy(str, Enum):
    RAISE = "raise"
    RETURN = "return"


_policy = ErrorPolicy(config.ERROR_POLICY)


class _Depth(threading.local):
    value = 0


_depth = _Depth()


def get_error_policy() -> ErrorPolicy:
    return _policy


def set_error_policy(policy: ErrorPolicy | str) -> None:
    """策略是进程级的：对所有 rank 线程同时生效，应在 spawn_world 之前设置"""
    global _policy
    _policy = ErrorPolicy(policy)


@contextmanager
def error_policy(policy: ErrorPolicy | str) -> Iterator[None]:
    """临时切换进程级策略。

    不要在某个 rank 线程内使用：切换会立刻影响同一 world 中的其他 rank。
    """
    previous = _policy
    set_error_policy(policy)
    try:
        yield
    finally:
        set_error_policy(previous)


def check(result: ErrorCode) -> Optional[ErrorCode]:
    """检查返回值: 成功则直接通过，否则按策略抛出或返回错误码"""
    if result.ok:
        return None
    if _policy is ErrorPolicy.RETURN:
        return result
    raise exception_for(result)


def checked(fn: Callable[..., T]) -> Callable[..., T]:
    """公开 API 装饰器

    只在最外层调用上应用策略：库内部的嵌套调用始终抛出异常，
    这样 return 策略下内部代码不会把错误码当成普通结果继续使用。
    """

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        depth = _depth.value
        _depth.value = depth + 1
        try:
            return fn(*args, **kwargs)
        except CommError as e:
            if depth == 0 and _policy is ErrorPolicy.RETURN:
                return e.code
            raise
        finally:
            _depth.value = depth

    return wrapper
