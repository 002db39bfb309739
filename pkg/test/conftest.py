"""pytest 公共夹具"""
import pytest

from commkit.api.comm import world
from commkit.errors import ErrorPolicy, error_policy
from commkit.services.fabric import FabricConfig, spawn_world

WATCHDOG_TIMEOUT = 2.0


def _run_world(n, fn, seed=0, jitter=0.0, trace=None, watchdog=WATCHDOG_TIMEOUT):
    """在 n 个 rank 上运行 fn(comm)，按 rank 顺序返回结果"""

    def main(rank, fabric):
        comm = world(fabric)
        try:
            return fn(comm)
        finally:
            if not comm.freed:
                comm.free()

    cfg = FabricConfig(world_size=n, seed=seed, watchdog_timeout=watchdog, jitter=jitter, trace=trace)
    return spawn_world(cfg, main)


@pytest.fixture
def run_world():
    return _run_world


@pytest.fixture
def return_policy():
    with error_policy(ErrorPolicy.RETURN):
        yield
