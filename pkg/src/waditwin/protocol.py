"""Newline-delimited JSON protocol over TCP for the variable engine.

One request or event per line. Frames are JSON objects with sorted keys and
no inner whitespace, so identical operations produce byte-identical lines
(documented with worked examples in PROTOCOL.md and pinned by golden tests).

The listener accepts every connection and honors every structurally valid
request; there is no authentication, session state beyond an optional
self-declared client name, or authorization. Clients self-identify via the
``hello`` op purely for log attribution, and nothing verifies the claim.
"""

from __future__ import annotations

import json
import os
import socket
import threading
from typing import Any, Iterator

from .engine import EngineError, Subscription, VariableEngine

DEFAULT_PORT = 5055
PORT_ENV_VAR = "WADI_PORT"


def default_port() -> int:
    raw = os.environ.get(PORT_ENV_VAR)
    if raw is None:
        return DEFAULT_PORT
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{PORT_ENV_VAR} must be an integer, got {raw!r}") from None


def encode_frame(frame: dict[str, Any]) -> bytes:
    return json.dumps(frame, sort_keys=True, separators=(",", ":")).encode() + b"\n"


def decode_frames(raw: bytes) -> Iterator[dict[str, Any]]:
    for line in raw.splitlines():
        if line.strip():
            yield json.loads(line)


class ProtocolError(RuntimeError):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


class Dispatcher:
    """Transport-independent request handling for one engine.

    The TCP server runs one session per connection and the HTTP bridge one
    per websocket; both feed parsed frames to :meth:`dispatch` and hand it
    a ``send`` callable for subscription events. ``send`` must simply
    return False once its transport is gone.
    """

    def __init__(self, engine: VariableEngine):
        self.engine = engine
        self._stop = threading.Event()

    def stop(self) -> None:
        self._stop.set()

    def dispatch(self, request: Any, client: dict[str, str],
                 subs: list[Subscription], send) -> dict[str, Any] | None:
        if not isinstance(request, dict):
            return {"ok": False, "id": None, "error": "bad_frame",
                    "detail": "frame must be a JSON object"}
        rid = request.get("id")
        op = request.get("op")
        try:
            if op == "hello":
                name = request.get("client")
                if isinstance(name, str) and name:
                    client["name"] = name
                return {"ok": True, "id": rid, "client": client["name"]}
            if op == "read":
                version, value = self.engine.read(self._path(request))
                return {"ok": True, "id": rid, "path": request["path"],
                        "version": version, "value": value}
            if op == "write":
                fields = request.get("fields")
                if not isinstance(fields, dict):
                    raise ProtocolError("missing_field", "write needs a fields object")
                version = self.engine.write(
                    self._path(request), fields, source=client["name"]
                )
                return {"ok": True, "id": rid, "path": request["path"],
                        "version": version}
            if op == "list":
                prefix = request.get("prefix", "")
                return {"ok": True, "id": rid, "paths": self.engine.paths(prefix)}
            if op == "subscribe":
                prefix = request.get("prefix", "")
                maxlen = int(request.get("buffer", 1024))
                sub = self.engine.subscribe(prefix, maxlen=maxlen)
                subs.append(sub)
                threading.Thread(
                    target=self._pump(sub, send), daemon=True,
                    name="wadi-sub-pump",
                ).start()
                return {"ok": True, "id": rid, "subscription": len(subs),
                        "prefix": prefix}
            raise ProtocolError("unknown_op", f"unsupported op {op!r}")
        except EngineError as exc:
            return {"ok": False, "id": rid, "error": exc.code, "detail": exc.detail}
        except ProtocolError as exc:
            return {"ok": False, "id": rid, "error": exc.code, "detail": exc.detail}

    def _pump(self, sub: Subscription, send):
        def run() -> None:
            while not sub.closed and not self._stop.is_set():
                frame = sub.next_frame(timeout=0.5)
                if frame is not None and not send(frame):
                    break
            self.engine.unsubscribe(sub)

        return run

    def release(self, subs: list[Subscription]) -> None:
        for sub in subs:
            self.engine.unsubscribe(sub)

    @staticmethod
    def _path(request: dict[str, Any]) -> str:
        path = request.get("path")
        if not isinstance(path, str):
            raise ProtocolError("missing_field", "request needs a path")
        return path


class ProtocolServer:
    """Serves one VariableEngine to any number of TCP clients."""

    def __init__(self, engine: VariableEngine, host: str = "127.0.0.1",
                 port: int | None = None):
        self.engine = engine
        self.dispatcher = Dispatcher(engine)
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, default_port() if port is None else port))
        self._listener.listen(16)
        self._listener.settimeout(1.0)  # lets the accept loop notice shutdown
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._conns: list[socket.socket] = []
        self._lock = threading.Lock()

    @property
    def port(self) -> int:
        return self._listener.getsockname()[1]

    def start(self) -> "ProtocolServer":
        t = threading.Thread(target=self._accept_loop, name="wadi-accept", daemon=True)
        t.start()
        self._threads.append(t)
        return self

    def stop(self) -> None:
        self._stop.set()
        self.dispatcher.stop()
        with self._lock:
            conns, self._conns = self._conns, []
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()
        self._listener.close()

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            with self._lock:
                self._conns.append(conn)
            t = threading.Thread(
                target=self._serve_client, args=(conn, addr),
                name=f"wadi-client-{addr[1]}", daemon=True,
            )
            t.start()
            self._threads.append(t)

    def _serve_client(self, conn: socket.socket, addr: tuple[str, int]) -> None:
        send_lock = threading.Lock()
        subs: list[Subscription] = []
        client = {"name": f"remote:{addr[0]}:{addr[1]}"}

        def send(frame: dict[str, Any]) -> bool:
            try:
                with send_lock:
                    conn.sendall(encode_frame(frame))
                return True
            except OSError:
                return False

        try:
            reader = conn.makefile("rb")
            for raw in reader:
                line = raw.strip()
                if not line:
                    continue
                try:
                    request = json.loads(line)
                except json.JSONDecodeError:
                    send({"ok": False, "id": None, "error": "bad_json",
                          "detail": "line is not valid JSON"})
                    continue
                reply = self.dispatcher.dispatch(request, client, subs, send)
                if reply is not None and not send(reply):
                    break
        except OSError:
            pass
        finally:
            self.dispatcher.release(subs)
            conn.close()


class ProtocolClient:
    """Blocking request/reply client with a background event reader."""

    def __init__(self, host: str, port: int, client_name: str | None = None,
                 timeout: float = 10.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._sock.settimeout(timeout)
        self._timeout = timeout
        self._send_lock = threading.Lock()
        self._next_id = 0
        self._pending: dict[int, list] = {}
        self._pending_cond = threading.Condition()
        self._events: list[dict[str, Any]] = []
        self._reader = threading.Thread(target=self._read_loop, daemon=True,
                                        name="wadi-client-reader")
        self._reader.start()
        if client_name:
            self.request("hello", client=client_name)

    def _read_loop(self) -> None:
        try:
            reader = self._sock.makefile("rb")
            for raw in reader:
                line = raw.strip()
                if not line:
                    continue
                frame = json.loads(line)
                with self._pending_cond:
                    if "event" in frame:
                        self._events.append(frame)
                    else:
                        self._pending.setdefault(frame.get("id"), []).append(frame)
                    self._pending_cond.notify_all()
        except (OSError, ValueError):
            pass
        finally:
            with self._pending_cond:
                self._pending[None] = [{"ok": False, "error": "closed",
                                        "detail": "connection closed"}]
                self._pending_cond.notify_all()

    def request(self, op: str, **kw: Any) -> dict[str, Any]:
        with self._send_lock:
            self._next_id += 1
            rid = self._next_id
        frame = {"op": op, "id": rid, **kw}
        self._sock.sendall(encode_frame(frame))
        deadline = self._timeout
        with self._pending_cond:
            while True:
                if rid in self._pending and self._pending[rid]:
                    reply = self._pending[rid].pop(0)
                    break
                if None in self._pending:
                    raise ProtocolError("closed", "connection closed")
                if not self._pending_cond.wait(deadline):
                    raise ProtocolError("timeout", f"no reply to request {rid}")
        if not reply.get("ok", False):
            raise ProtocolError(reply.get("error", "error"), reply.get("detail", ""))
        return reply

    def read(self, path: str) -> dict[str, Any]:
        return self.request("read", path=path)["value"]

    def read_versioned(self, path: str) -> tuple[int, dict[str, Any]]:
        reply = self.request("read", path=path)
        return reply["version"], reply["value"]

    def write(self, path: str, fields: dict[str, Any]) -> int:
        return self.request("write", path=path, fields=fields)["version"]

    def list_paths(self, prefix: str = "") -> list[str]:
        return self.request("list", prefix=prefix)["paths"]

    def subscribe(self, prefix: str = "", buffer: int = 1024) -> None:
        self.request("subscribe", prefix=prefix, buffer=buffer)

    def next_event(self, timeout: float = 5.0) -> dict[str, Any] | None:
        with self._pending_cond:
            if not self._events:
                self._pending_cond.wait(timeout)
            if self._events:
                return self._events.pop(0)
            return None

    @property
    def closed(self) -> bool:
        with self._pending_cond:
            return None in self._pending

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    def __enter__(self) -> "ProtocolClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
