# commkit: 进程内模拟网络上的消息传递库
from commkit.api.collectives import (
    BAND,
    BOR,
    BUILTIN_OPS,
    BXOR,
    LAND,
    LOR,
    MAX,
    MIN,
    PROD,
    SUM,
    ReduceOp,
)
from commkit.api.comm import (
    UNDEFINED,
    Communicator,
    Comparison,
    Group,
    Request,
    RequestKind,
    RequestState,
    Status,
    compare,
    start,
    start_all,
    test,
    test_all,
    test_any,
    wait,
    wait_all,
    wait_any,
    world,
)
from commkit.api.futures import Future, future, make_ready_future, when_all, when_any
from commkit.errors import (
    CommError,
    ErrorClass,
    ErrorCode,
    ErrorPolicy,
    WorldError,
    check,
    class_of,
    error_policy,
    get_error_policy,
    set_error_policy,
)
from commkit.services.fabric import ANY_SOURCE, ANY_TAG, Fabric, FabricConfig, spawn_world
from commkit.services.typemap import Array, compliant, derive_typemap, typemap_of

__version__ = "0.1.0"
