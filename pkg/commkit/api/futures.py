"""把 Request 转换为可组合的 Future

进度推进完全内联：continuation 在调用 get() / ready() 的 rank 线程中执行，
没有后台执行器。
"""
import logging
from typing import Any, Callable, Optional, Sequence, Union

from commkit.api.comm import Request, RequestState, Status, block_until_any, wait_all
from commkit.errors import CommError, ErrorClass, checked, exception_for, fail
from commkit.services.fabric import Fabric

logger = logging.getLogger(__name__)


class _Stage:
    """Future 背后的一段计算；poll() 推进一次并返回是否已就绪"""
    fabric: Optional[Fabric] = None

    def poll(self) -> bool:
        raise NotImplementedError

    def result(self) -> Any:
        raise NotImplementedError

    def block(self) -> None:
        if not self.poll():
            self.fabric.block_until(self.poll)


class _ValueStage(_Stage):
    def __init__(self, value: Any = None, error: Optional[BaseException] = None):
        self._value = value
        self._error = error

    def poll(self) -> bool:
        return True

    def result(self) -> Any:
        if self._error is not None:
            raise self._error
        return self._value


class _RequestStage(_Stage):
    def __init__(self, request: Request):
        self.request = request
        self.fabric = request.fabric
        self._outcome: Optional[_ValueStage] = None

    @property
    def settled(self) -> bool:
        return self._outcome is not None

    def settle(self, status: Status) -> None:
        error = None if status.error.ok else exception_for(status.error)
        self._outcome = _ValueStage(status, error)

    def poll(self) -> bool:
        if self._outcome is not None:
            return True
        if not self.request._poll():
            return False
        try:
            self._outcome = _ValueStage(self.request._collect())
        except CommError as e:
            self._outcome = _ValueStage(error=e)
        return True

    def result(self) -> Any:
        return self._outcome.result()


class _ContinuationStage(_Stage):
    def __init__(self, predecessor: _Stage, continuation: Callable[["Future"], Any]):
        self._predecessor = predecessor
        self._continuation = continuation
        self._next: Optional[_Stage] = None

    @property
    def fabric(self) -> Optional[Fabric]:
        stage = self._next if self._next is not None else self._predecessor
        return stage.fabric

    def poll(self) -> bool:
        if self._next is None:
            if not self._predecessor.poll():
                return False
            try:
                out = self._continuation(Future(self._predecessor))
            except Exception as e:  # 用户 continuation 的任何失败都留到 get() 时抛出
                logger.debug(f"[FUTURE] continuation failed: {e!r}")
                self._next = _ValueStage(error=e)
            else:
                try:
                    self._next = _stage_of(out)
                except CommError as e:
                    self._next = _ValueStage(error=e)
        return self._next.poll()

    def result(self) -> Any:
        return self._next.result()


def _aggregate_entry(stage: _Stage) -> Any:
    """when_all / when_any 的单项结果：失败记为带错误码的 Status"""
    try:
        return stage.result()
    except CommError as e:
        return Status(error=e.code)


class _AllStage(_Stage):
    def __init__(self, stages: list[_Stage]):
        self._stages = stages
        self.fabric = next((s.fabric for s in stages if s.fabric is not None), None)

    def poll(self) -> bool:
        return all([s.poll() for s in self._stages])

    def block(self) -> None:
        bare = [s for s in self._stages if isinstance(s, _RequestStage) and not s.settled]
        if bare and len(bare) == len(self._stages):
            # 全部是裸请求时一次性交给 wait_all
            statuses = wait_all([s.request for s in bare])
            for stage, status in zip(bare, statuses):
                stage.settle(status)
            return
        super().block()

    def result(self) -> list:
        return [_aggregate_entry(s) for s in self._stages]


class _AnyStage(_Stage):
    def __init__(self, futures: list["Future"]):
        self._futures = futures
        self._winner: Optional[int] = None
        self.fabric = next((f._stage.fabric for f in futures if f._stage.fabric is not None), None)

    def _claim(self, index: int) -> None:
        self._winner = index
        self._futures[index]._consumed = True

    def poll(self) -> bool:
        if self._winner is not None:
            return True
        for i, f in enumerate(self._futures):
            if not f._consumed and f._stage.poll():
                self._claim(i)
                return True
        return False

    def block(self) -> None:
        stages = [f._stage for f in self._futures]
        if all(isinstance(s, _RequestStage) and not s.settled for s in stages):
            index = block_until_any([s.request for s in stages])
            stages[index].poll()
            self._claim(index)
            return
        super().block()

    def result(self) -> tuple[int, Any]:
        return self._winner, _aggregate_entry(self._futures[self._winner]._stage)


def _stage_of(out: Any) -> _Stage:
    if isinstance(out, Request):
        return _request_stage(out)
    if isinstance(out, Future):
        out._take()
        return out._stage
    return _ValueStage(out)


def _request_stage(request: Request) -> _RequestStage:
    state = request.state
    if state is RequestState.INACTIVE:
        raise fail(ErrorClass.INACTIVE_REQUEST, 1, "cannot make a future of an inactive persistent request")
    if state is RequestState.CONSUMED:
        raise fail(ErrorClass.USE_OF_COMPLETED_REQUEST, 3, "request was already completed")
    return _RequestStage(request)


class Future:
    """只能被消费一次：get() 或 then() 或作为 when_all 的输入"""

    def __init__(self, stage: _Stage):
        self._stage = stage
        self._consumed = False

    def __copy__(self):
        raise TypeError("futures cannot be copied")

    @property
    def consumed(self) -> bool:
        return self._consumed

    def _take(self) -> None:
        if self._consumed:
            raise fail(ErrorClass.CONSUMED_FUTURE, 1, "future was already consumed")
        self._consumed = True

    def ready(self) -> bool:
        """推进一次，不阻塞"""
        if self._consumed:
            return False
        return self._stage.poll()

    @checked
    def get(self) -> Any:
        self._take()
        self._stage.block()
        return self._stage.result()

    @checked
    def then(self, continuation: Callable[["Future"], Union[Request, "Future", Any]]) -> "Future":
        """前驱就绪后以一个已就绪的 Future 调用 continuation，恰好一次"""
        self._take()
        return Future(_ContinuationStage(self._stage, continuation))


@checked
def future(request: Request) -> Future:
    return Future(_request_stage(request))


def make_ready_future(value: Any = None) -> Future:
    return Future(_ValueStage(Status() if value is None else value))


@checked
def when_all(futures: Sequence[Future]) -> Future:
    """就绪时得到按输入顺序排列的结果列表，失败项为带错误码的 Status"""
    for f in futures:
        f._take()
    return Future(_AllStage([f._stage for f in futures]))


@checked
def when_any(futures: Sequence[Future]) -> Future:
    """就绪时得到 (index, 结果)；只有胜出的 Future 被消费，其余仍可单独 get()"""
    if not futures:
        raise fail(ErrorClass.EMPTY_SET, 1, "when_any needs at least one future")
    for f in futures:
        if f._consumed:
            raise fail(ErrorClass.CONSUMED_FUTURE, 2, "when_any input was already consumed")
    return Future(_AnyStage(list(futures)))
