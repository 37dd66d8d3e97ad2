"""In-memory publish-subscribe variable store.

The engine is the shared-variable layer every other part talks through: the
plant publishes into it, controllers read their view from it, and any client
that can reach it may read or write any path. There is deliberately no
authentication or per-client authorization; access control is absent by
design, because that is the weakness under study.

Guarantees that *are* provided:

- per-path version numbers increase by one per committed write,
- a read returns a snapshot of some committed version, never a torn mix,
- subscribers receive updates in commit order; a subscriber that cannot keep
  up has oldest events replaced by a gap notice naming the skipped versions
  rather than being silently truncated.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from .clusters import LEVEL, SIGNAL, refresh_level_alarms


class EngineError(KeyError):
    """A rejected operation; ``code`` is the wire-level error identifier."""

    def __init__(self, code: str, detail: str):
        super().__init__(detail)
        self.code = code
        self.detail = detail


@dataclass(frozen=True)
class WriteRecord:
    """One committed write, journaled for the plant's tick loop."""

    seq: int
    path: str
    fields: dict[str, Any]
    source: str
    version: int


@dataclass(frozen=True)
class Update:
    path: str
    version: int
    value: dict[str, Any]


class Subscription:
    """Bounded update feed for one consumer.

    ``next_frame`` yields dict frames ready for the wire: ``update`` frames in
    commit order, preceded by ``gap`` frames for anything this consumer was
    too slow to take.
    """

    def __init__(self, prefix: str, maxlen: int):
        self.prefix = prefix
        self.maxlen = maxlen
        self._events: deque[Update] = deque()
        self._gaps: dict[str, list[int]] = {}
        self._cond = threading.Condition()
        self._closed = False

    def _push(self, update: Update) -> None:
        with self._cond:
            if self._closed:
                return
            if len(self._events) >= self.maxlen:
                dropped = self._events.popleft()
                span = self._gaps.setdefault(
                    dropped.path, [dropped.version, dropped.version]
                )
                span[0] = min(span[0], dropped.version)
                span[1] = max(span[1], dropped.version)
            self._events.append(update)
            self._cond.notify()

    def next_frame(self, timeout: float | None = None) -> dict[str, Any] | None:
        with self._cond:
            if not self._gaps and not self._events:
                self._cond.wait(timeout)
            if self._gaps:
                path, (lo, hi) = next(iter(self._gaps.items()))
                del self._gaps[path]
                return {"event": "gap", "path": path,
                        "from_version": lo, "to_version": hi}
            if self._events:
                u = self._events.popleft()
                return {"event": "update", "path": u.path,
                        "version": u.version, "value": u.value}
            return None

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def closed(self) -> bool:
        return self._closed


class VariableEngine:
    """Thread-safe path -> cluster store with journaled writes."""

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._clusters: dict[str, dict[str, Any]] = {}
        self._kinds: dict[str, str] = {}
        self._versions: dict[str, int] = {}
        self._subs: list[Subscription] = []
        self._journal: list[WriteRecord] = []
        self._seq = 0

    # -- structure ---------------------------------------------------------

    def create(self, path: str, fields: dict[str, Any], kind: str = SIGNAL) -> None:
        with self._lock:
            if path in self._clusters:
                raise EngineError("duplicate_path", f"path already exists: {path}")
            self._clusters[path] = dict(fields)
            self._kinds[path] = kind
            self._versions[path] = 1

    def paths(self, prefix: str = "") -> list[str]:
        with self._lock:
            return sorted(p for p in self._clusters if p.startswith(prefix))

    def kind(self, path: str) -> str:
        with self._lock:
            self._require(path)
            return self._kinds[path]

    # -- data plane ---------------------------------------------------------

    def read(self, path: str) -> tuple[int, dict[str, Any]]:
        with self._lock:
            self._require(path)
            return self._versions[path], dict(self._clusters[path])

    def value(self, path: str) -> dict[str, Any]:
        return self.read(path)[1]

    def write(self, path: str, fields: dict[str, Any], source: str) -> int:
        """Merge fields into a cluster. Any source may write anything.

        Rejected only for structural reasons: unknown path, unknown field, or
        a value whose JSON type does not match the field it targets.
        """
        if not fields:
            raise EngineError("empty_write", "write carries no fields")
        with self._lock:
            self._require(path)
            cluster = self._clusters[path]
            staged: dict[str, Any] = {}
            for name, value in fields.items():
                if name not in cluster:
                    raise EngineError(
                        "unknown_field", f"no field {name!r} at {path}"
                    )
                staged[name] = self._coerce(path, name, cluster[name], value)
            cluster.update(staged)
            if self._kinds[path] == LEVEL:
                refresh_level_alarms(cluster)
            self._versions[path] += 1
            version = self._versions[path]
            self._seq += 1
            self._journal.append(
                WriteRecord(self._seq, path, dict(staged), source, version)
            )
            update = Update(path, version, dict(cluster))
            for sub in self._subs:
                if path.startswith(sub.prefix):
                    sub._push(update)
            return version

    def drain_writes(self) -> list[WriteRecord]:
        """Hand the journal to the tick loop and start a fresh one."""
        with self._lock:
            journal, self._journal = self._journal, []
            return journal

    # -- subscriptions -------------------------------------------------------

    def subscribe(self, prefix: str = "", maxlen: int = 1024) -> Subscription:
        sub = Subscription(prefix, maxlen)
        with self._lock:
            self._subs.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)
        sub.close()

    # -- internals -----------------------------------------------------------

    def _require(self, path: str) -> None:
        if path not in self._clusters:
            raise EngineError("unknown_path", f"no such path: {path}")

    @staticmethod
    def _coerce(path: str, name: str, current: Any, value: Any) -> Any:
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise EngineError("bad_type", f"{path}#{name} expects a boolean")
            return value
        if isinstance(current, (int, float)):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise EngineError("bad_type", f"{path}#{name} expects a number")
            return float(value)
        if isinstance(current, str):
            if not isinstance(value, str):
                raise EngineError("bad_type", f"{path}#{name} expects a string")
            return value
        return value
