"""WebSocket framing and the HTTP bridge that shares the dispatcher."""

from __future__ import annotations

import json
import socket
import struct

import pytest

from waditwin.bridge import (
    HmiBridge,
    _SocketReader,
    encode_ws_frame,
    read_ws_message,
    websocket_accept_key,
)
from waditwin.engine import VariableEngine


def make_engine() -> VariableEngine:
    engine = VariableEngine()
    engine.create("A/x", {"PV": 0.0})
    return engine


# --- framing helpers -------------------------------------------------------------


def test_accept_key_matches_rfc_example():
    assert websocket_accept_key("dGhlIHNhbXBsZSBub25jZQ==") == \
        "s3pPLMBiTxaQ9kYGzzhZRbK+xOo="


def test_encode_frame_length_forms():
    small = encode_ws_frame(b"hi")
    assert small == b"\x81\x02hi"
    medium = encode_ws_frame(b"x" * 200)
    assert medium[:4] == b"\x81\x7e" + struct.pack(">H", 200)
    large = encode_ws_frame(b"y" * 70000)
    assert large[:10] == b"\x81\x7f" + struct.pack(">Q", 70000)
    assert len(large) == 10 + 70000


def masked_client_frame(payload: bytes, opcode: int = 0x1, *,
                        fin: bool = True, mask: bytes = b"\x01\x02\x03\x04") -> bytes:
    head = bytes([(0x80 if fin else 0) | opcode])
    n = len(payload)
    if n < 126:
        head += bytes([0x80 | n])
    else:
        head += bytes([0x80 | 126]) + struct.pack(">H", n)
    body = bytes(c ^ mask[i % 4] for i, c in enumerate(payload))
    return head + mask + body


def feed(data: bytes) -> _SocketReader:
    a, b = socket.socketpair()
    a.sendall(data)
    a.close()
    return _SocketReader(b)


def test_read_message_unmasks_client_payload():
    reader = feed(masked_client_frame(b'{"op":"hello"}'))
    opcode, payload = read_ws_message(reader)
    assert opcode == 0x1 and payload == b'{"op":"hello"}'


def test_read_message_reassembles_fragments():
    first = masked_client_frame(b"hello ", opcode=0x1, fin=False)
    rest = masked_client_frame(b"world", opcode=0x0, fin=True)
    opcode, payload = read_ws_message(feed(first + rest))
    assert opcode == 0x1 and payload == b"hello world"


def test_control_frame_passes_between_fragments():
    ping = masked_client_frame(b"beat", opcode=0x9)
    reader = feed(masked_client_frame(b"a", fin=False) + ping
                  + masked_client_frame(b"b", opcode=0x0, fin=True))
    pending: dict = {}
    assert read_ws_message(reader, pending) == (0x9, b"beat")
    assert read_ws_message(reader, pending) == (0x1, b"ab")


# --- live bridge -----------------------------------------------------------------


@pytest.fixture
def bridge(tmp_path):
    (tmp_path / "index.html").write_text("<html>console</html>")
    (tmp_path / "app.js").write_text("// ui")
    b = HmiBridge(make_engine(), ui_dir=tmp_path).start()
    yield b
    b.stop()


def http_get(port: int, target: str) -> tuple[int, bytes]:
    with socket.create_connection(("127.0.0.1", port), timeout=5.0) as conn:
        conn.sendall(f"GET {target} HTTP/1.1\r\nHost: x\r\n\r\n".encode())
        reader = _SocketReader(conn)
        head = reader.until(b"\r\n\r\n").decode()
        status = int(head.split(" ")[1])
        length = 0
        for line in head.split("\r\n"):
            if line.lower().startswith("content-length:"):
                length = int(line.split(":")[1])
        return status, reader.exactly(length)


def test_static_files_served_with_index_default(bridge):
    status, body = http_get(bridge.port, "/")
    assert status == 200 and b"console" in body
    status, _ = http_get(bridge.port, "/app.js")
    assert status == 200


def test_static_missing_and_traversal_rejected(bridge):
    assert http_get(bridge.port, "/ghost.html")[0] == 404
    assert http_get(bridge.port, "/../../etc/hostname")[0] == 404


def test_no_ui_dir_means_404():
    b = HmiBridge(make_engine()).start()
    try:
        assert http_get(b.port, "/")[0] == 404
    finally:
        b.stop()


class WsClient:
    """Tiny test-only websocket client speaking the bridge's frames."""

    def __init__(self, port: int):
        self.conn = socket.create_connection(("127.0.0.1", port), timeout=5.0)
        self.conn.sendall(
            b"GET /ws HTTP/1.1\r\nHost: x\r\nUpgrade: websocket\r\n"
            b"Connection: Upgrade\r\nSec-WebSocket-Key: dGhlIHNhbXBsZSBub25jZQ==\r\n"
            b"Sec-WebSocket-Version: 13\r\n\r\n")
        self.reader = _SocketReader(self.conn)
        self.handshake = self.reader.until(b"\r\n\r\n").decode()

    def send_json(self, obj) -> None:
        self.conn.sendall(masked_client_frame(json.dumps(obj).encode()))

    def recv_json(self):
        opcode, payload = read_ws_message(self.reader)
        assert opcode == 0x1
        return json.loads(payload)

    def close(self) -> None:
        self.conn.close()


@pytest.fixture
def ws(bridge):
    client = WsClient(bridge.port)
    yield client
    client.close()


def test_handshake_carries_computed_accept_key(ws):
    assert "101 Switching Protocols" in ws.handshake
    assert "Sec-WebSocket-Accept: s3pPLMBiTxaQ9kYGzzhZRbK+xOo=" in ws.handshake


def test_ws_requests_share_protocol_semantics(bridge, ws):
    ws.send_json({"op": "hello", "id": 1, "client": "console"})
    assert ws.recv_json() == {"ok": True, "id": 1, "client": "console"}
    ws.send_json({"op": "read", "id": 2, "path": "A/x"})
    reply = ws.recv_json()
    assert reply["ok"] and reply["value"] == {"PV": 0.0}
    ws.send_json({"op": "write", "id": 3, "path": "A/x", "fields": {"PV": 2.5}})
    assert ws.recv_json()["version"] == 2
    (record,) = bridge.dispatcher.engine.drain_writes()
    assert record.source == "console"  # named via hello, like the TCP lane
    ws.send_json({"op": "read", "id": 4, "path": "nope"})
    assert ws.recv_json()["error"] == "unknown_path"


def test_ws_subscription_pushes_engine_updates(bridge, ws):
    ws.send_json({"op": "subscribe", "id": 1, "prefix": "A/"})
    assert ws.recv_json()["ok"]
    bridge.dispatcher.engine.write("A/x", {"PV": 7.0}, source="PLANT")
    event = ws.recv_json()
    assert event == {"event": "update", "path": "A/x", "version": 2,
                     "value": {"PV": 7.0}}


def test_ws_ping_answered_with_pong(ws):
    ws.conn.sendall(masked_client_frame(b"beat", opcode=0x9))
    assert read_ws_message(ws.reader) == (0xA, b"beat")


def test_ws_close_echoed(ws):
    ws.conn.sendall(masked_client_frame(b"", opcode=0x8))
    assert read_ws_message(ws.reader)[0] == 0x8


def test_ws_bad_json_answered_with_error_frame(ws):
    ws.conn.sendall(masked_client_frame(b"not json"))
    assert ws.recv_json()["error"] == "bad_json"
