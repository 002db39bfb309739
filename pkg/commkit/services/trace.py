"""fabric 事件记录器 (trace hook)"""
import logging
import threading
from collections import Counter
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, Optional

import orjson

from commkit.services.fabric import Envelope

logger = logging.getLogger(__name__)


class TraceRecorder:
    """作为 FabricConfig.trace 传入，线程安全地收集 (event, Envelope)"""

    def __init__(self, events: Optional[Iterable[str]] = None):
        self._lock = threading.Lock()
        self._filter = set(events) if events is not None else None
        self.events: list[tuple[str, Envelope]] = []

    def __call__(self, event: str, env: Envelope) -> None:
        if self._filter is not None and event not in self._filter:
            return
        with self._lock:
            self.events.append((event, env))

    def of(self, event: str) -> list[Envelope]:
        with self._lock:
            return [env for ev, env in self.events if ev == event]

    def counts(self) -> Counter:
        with self._lock:
            return Counter(ev for ev, _ in self.events)

    def dumps(self) -> bytes:
        """JSON lines: 每行一个事件"""
        with self._lock:
            rows = [orjson.dumps({"event": ev, **asdict(env)}) for ev, env in self.events]
        return b"\n".join(rows) + (b"\n" if rows else b"")

    def dump(self, path: str | Path) -> int:
        data = self.dumps()
        Path(path).write_bytes(data)
        logger.info(f"[TRACE] Wrote {len(self.events)} events to {path}")
        return len(self.events)


def load_trace(data: bytes) -> list[tuple[str, Envelope]]:
    events = []
    for line in data.splitlines():
        if not line.strip():
            continue
        obj = orjson.loads(line)
        event = obj.pop("event")
        events.append((event, Envelope(**obj)))
    return events
