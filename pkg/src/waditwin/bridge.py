"""Browser access: static file serving plus a websocket protocol bridge.

``GET /ws`` upgrades to a websocket where every text message is one
protocol frame with exactly the TCP protocol's schema (requests in, replies
and subscription events out), so a browser console needs no translation
layer. Everything else is served from a static directory when one is
configured. The websocket layer implements the hybi framing rules this
endpoint needs: masked client frames, text and close and ping opcodes,
fragment reassembly, unmasked server frames.
"""
from __future__ import annotations

import base64
import hashlib
import json
import socket
import struct
import threading
from pathlib import Path
from typing import Any

from .engine import VariableEngine
from .protocol import Dispatcher

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
    ".map": "application/json",
}

_OP_TEXT = 0x1
_OP_CLOSE = 0x8
_OP_PING = 0x9
_OP_PONG = 0xA


def websocket_accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + _WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def encode_ws_frame(payload: bytes, opcode: int = _OP_TEXT) -> bytes:
    head = bytes([0x80 | opcode])
    n = len(payload)
    if n < 126:
        head += bytes([n])
    elif n < 1 << 16:
        head += bytes([126]) + struct.pack(">H", n)
    else:
        head += bytes([127]) + struct.pack(">Q", n)
    return head + payload


class _SocketReader:
    def __init__(self, conn: socket.socket):
        self._conn = conn
        self._buf = b""

    def exactly(self, n: int) -> bytes:
        while len(self._buf) < n:
            chunk = self._conn.recv(65536)
            if not chunk:
                raise ConnectionError("peer closed")
            self._buf += chunk
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def until(self, marker: bytes, limit: int = 65536) -> bytes:
        while marker not in self._buf:
            if len(self._buf) > limit:
                raise ConnectionError("header too large")
            chunk = self._conn.recv(65536)
            if not chunk:
                raise ConnectionError("peer closed")
            self._buf += chunk
        i = self._buf.index(marker) + len(marker)
        out, self._buf = self._buf[:i], self._buf[i:]
        return out


def read_ws_message(
    reader: _SocketReader, pending: dict[str, Any] | None = None
) -> tuple[int, bytes]:
    """One complete message: reassembles fragments, unmasks, returns opcode.

    Control frames may legally interleave with a fragmented message; passing
    the same ``pending`` dict on every call lets reassembly resume after one
    is returned.
    """
    state = pending if pending is not None else {}
    state.setdefault("opcode", None)
    state.setdefault("parts", [])
    while True:
        b1, b2 = reader.exactly(2)
        fin = bool(b1 & 0x80)
        frame_op = b1 & 0x0F
        masked = bool(b2 & 0x80)
        length = b2 & 0x7F
        if length == 126:
            (length,) = struct.unpack(">H", reader.exactly(2))
        elif length == 127:
            (length,) = struct.unpack(">Q", reader.exactly(8))
        mask = reader.exactly(4) if masked else b""
        payload = reader.exactly(length)
        if masked:
            payload = bytes(c ^ mask[i % 4] for i, c in enumerate(payload))
        if frame_op in (_OP_CLOSE, _OP_PING, _OP_PONG):
            return frame_op, payload  # control frames never fragment
        if state["opcode"] is None:
            state["opcode"] = frame_op
        state["parts"].append(payload)
        if fin:
            opcode, data = state["opcode"], b"".join(state["parts"])
            state["opcode"], state["parts"] = None, []
            return opcode, data


class HmiBridge:
    """HTTP listener with a ``/ws`` protocol endpoint and optional static UI."""

    def __init__(
        self,
        engine: VariableEngine,
        host: str = "127.0.0.1",
        port: int = 0,
        ui_dir: str | Path | None = None,
    ):
        self.dispatcher = Dispatcher(engine)
        self.ui_dir = Path(ui_dir).resolve() if ui_dir is not None else None
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(16)
        self._listener.settimeout(1.0)
        self._stop = threading.Event()
        self._conns: list[socket.socket] = []
        self._lock = threading.Lock()
        self._session_count = 0

    @property
    def port(self) -> int:
        return self._listener.getsockname()[1]

    def start(self) -> "HmiBridge":
        threading.Thread(
            target=self._accept_loop, name="wadi-http-accept", daemon=True
        ).start()
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
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            with self._lock:
                self._conns.append(conn)
            threading.Thread(
                target=self._serve, args=(conn,), name="wadi-http", daemon=True
            ).start()

    # -- HTTP ---------------------------------------------------------------

    def _serve(self, conn: socket.socket) -> None:
        try:
            reader = _SocketReader(conn)
            head = reader.until(b"\r\n\r\n").decode("latin-1")
            request_line, _, rest = head.partition("\r\n")
            method, _, _ = request_line.partition(" ")
            target = request_line.split(" ")[1] if " " in request_line else "/"
            headers: dict[str, str] = {}
            for line in rest.split("\r\n"):
                name, sep, value = line.partition(":")
                if sep:
                    headers[name.strip().lower()] = value.strip()
            path = target.split("?", 1)[0]
            if path == "/ws":
                self._serve_websocket(conn, reader, method, headers)
            elif method == "GET":
                self._serve_static(conn, path)
            else:
                _send_http(conn, 405, b"method not allowed")
        except (ConnectionError, OSError, UnicodeDecodeError):
            pass
        finally:
            conn.close()

    def _serve_static(self, conn: socket.socket, path: str) -> None:
        if self.ui_dir is None:
            _send_http(conn, 404, b"no UI directory configured")
            return
        name = path.lstrip("/") or "index.html"
        target = (self.ui_dir / name).resolve()
        if not str(target).startswith(str(self.ui_dir)) or not target.is_file():
            _send_http(conn, 404, b"not found")
            return
        ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        _send_http(conn, 200, target.read_bytes(), ctype)

    # -- websocket ----------------------------------------------------------

    def _serve_websocket(
        self,
        conn: socket.socket,
        reader: _SocketReader,
        method: str,
        headers: dict[str, str],
    ) -> None:
        key = headers.get("sec-websocket-key")
        if (
            method != "GET"
            or key is None
            or "websocket" not in headers.get("upgrade", "").lower()
        ):
            _send_http(conn, 400, b"expected websocket upgrade")
            return
        conn.sendall(
            b"HTTP/1.1 101 Switching Protocols\r\n"
            b"Upgrade: websocket\r\n"
            b"Connection: Upgrade\r\n"
            b"Sec-WebSocket-Accept: "
            + websocket_accept_key(key).encode()
            + b"\r\n\r\n"
        )

        with self._lock:
            self._session_count += 1
            client = {"name": f"ws:{self._session_count}"}
        subs: list[Any] = []
        send_lock = threading.Lock()

        def send(frame: dict[str, Any]) -> bool:
            data = json.dumps(frame, sort_keys=True, separators=(",", ":"))
            try:
                with send_lock:
                    conn.sendall(encode_ws_frame(data.encode()))
                return True
            except OSError:
                return False

        try:
            pending: dict[str, Any] = {}
            while not self._stop.is_set():
                opcode, payload = read_ws_message(reader, pending)
                if opcode == _OP_CLOSE:
                    with send_lock:
                        conn.sendall(encode_ws_frame(payload, _OP_CLOSE))
                    break
                if opcode == _OP_PING:
                    with send_lock:
                        conn.sendall(encode_ws_frame(payload, _OP_PONG))
                    continue
                if opcode != _OP_TEXT:
                    continue
                try:
                    request = json.loads(payload.decode("utf-8"))
                except (json.JSONDecodeError, UnicodeDecodeError):
                    send({"ok": False, "id": None, "error": "bad_json",
                          "detail": "message is not valid JSON"})
                    continue
                reply = self.dispatcher.dispatch(request, client, subs, send)
                if reply is not None and not send(reply):
                    break
        except (ConnectionError, OSError):
            pass
        finally:
            self.dispatcher.release(subs)


def _send_http(
    conn: socket.socket, status: int, body: bytes, ctype: str = "text/plain"
) -> None:
    reason = {200: "OK", 400: "Bad Request", 404: "Not Found",
              405: "Method Not Allowed"}.get(status, "Error")
    conn.sendall(
        f"HTTP/1.1 {status} {reason}\r\n"
        f"Content-Type: {ctype}\r\n"
        f"Content-Length: {len(body)}\r\n"
        f"Access-Control-Allow-Origin: *\r\n"
        f"Connection: close\r\n\r\n".encode() + body
    )
