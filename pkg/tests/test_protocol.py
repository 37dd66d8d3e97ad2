"""Wire format, dispatcher semantics, and live TCP round trips."""

from __future__ import annotations

import json

import pytest

from waditwin.engine import VariableEngine
from waditwin.protocol import (
    Dispatcher,
    ProtocolClient,
    ProtocolError,
    ProtocolServer,
    decode_frames,
    default_port,
    encode_frame,
)


def engine_with_paths() -> VariableEngine:
    engine = VariableEngine()
    engine.create("A/x", {"PV": 0.0, "on": False})
    engine.create("A/y", {"PV": 1.0})
    return engine


@pytest.fixture
def server():
    srv = ProtocolServer(engine_with_paths(), port=0).start()
    yield srv
    srv.stop()


def connect(srv: ProtocolServer, name: str | None = None) -> ProtocolClient:
    return ProtocolClient("127.0.0.1", srv.port, client_name=name, timeout=5.0)


# --- frame encoding -----------------------------------------------------------


def test_frames_are_canonical_ndjson():
    # golden strings: sorted keys, no spaces, newline terminated
    assert encode_frame({"op": "read", "id": 1, "path": "A/x"}) == \
        b'{"id":1,"op":"read","path":"A/x"}\n'
    assert encode_frame({"ok": True, "id": 2, "version": 3}) == \
        b'{"id":2,"ok":true,"version":3}\n'


def test_decode_frames_splits_lines_and_skips_blanks():
    raw = b'{"op":"hello","id":1}\n\n{"op":"list","id":2}\n'
    assert list(decode_frames(raw)) == [
        {"op": "hello", "id": 1}, {"op": "list", "id": 2}]


def test_encode_decode_round_trip():
    frame = {"op": "write", "id": 9, "path": "A/x",
             "fields": {"PV": 1.5, "on": True}}
    (back,) = decode_frames(encode_frame(frame))
    assert back == frame


def test_default_port_env_override(monkeypatch):
    monkeypatch.delenv("WADI_PORT", raising=False)
    assert default_port() == 5055
    monkeypatch.setenv("WADI_PORT", "6001")
    assert default_port() == 6001
    monkeypatch.setenv("WADI_PORT", "not-a-port")
    with pytest.raises(ValueError):
        default_port()


# --- dispatcher (transport-independent) ----------------------------------------


def dispatch_one(request, engine=None, client_name="tester"):
    dispatcher = Dispatcher(engine or engine_with_paths())
    return dispatcher.dispatch(request, {"name": client_name}, [], lambda f: True)


def test_dispatch_hello_renames_client():
    client = {"name": "remote:1"}
    reply = Dispatcher(engine_with_paths()).dispatch(
        {"op": "hello", "id": 1, "client": "attacker"}, client, [], lambda f: True)
    assert reply == {"ok": True, "id": 1, "client": "attacker"}
    assert client["name"] == "attacker"


def test_dispatch_read_and_list():
    reply = dispatch_one({"op": "read", "id": 2, "path": "A/y"})
    assert reply["ok"] and reply["version"] == 1 and reply["value"] == {"PV": 1.0}
    reply = dispatch_one({"op": "list", "id": 3, "prefix": "A/"})
    assert reply["paths"] == ["A/x", "A/y"]


def test_dispatch_write_attributes_client_name():
    engine = engine_with_paths()
    dispatcher = Dispatcher(engine)
    reply = dispatcher.dispatch(
        {"op": "write", "id": 4, "path": "A/x", "fields": {"PV": 7.0}},
        {"name": "intruder"}, [], lambda f: True)
    assert reply["ok"] and reply["version"] == 2
    (record,) = engine.drain_writes()
    assert record.source == "intruder"


def test_dispatch_error_frames():
    cases = [
        ({"op": "read", "id": 1, "path": "nope"}, "unknown_path"),
        ({"op": "read", "id": 2}, "missing_field"),
        ({"op": "write", "id": 3, "path": "A/x"}, "missing_field"),
        ({"op": "write", "id": 4, "path": "A/x", "fields": {"ghost": 1}},
         "unknown_field"),
        ({"op": "nope", "id": 5}, "unknown_op"),
    ]
    for request, code in cases:
        reply = dispatch_one(request)
        assert reply["ok"] is False and reply["error"] == code
        assert reply["id"] == request["id"]
    reply = dispatch_one(["not", "a", "dict"])
    assert reply["ok"] is False and reply["error"] == "bad_frame"


# --- live server --------------------------------------------------------------


def test_round_trip_read_write_list(server):
    with connect(server) as client:
        assert client.list_paths() == ["A/x", "A/y"]
        version = client.write("A/x", {"PV": 4.5})
        assert version == 2
        assert client.read("A/x") == {"PV": 4.5, "on": False}
        assert client.read_versioned("A/x")[0] == 2


def test_anonymous_client_writes_land_with_socket_attribution(server):
    with connect(server) as client:  # no hello
        client.write("A/x", {"on": True})
    (record,) = server.engine.drain_writes()
    assert record.source.startswith("remote:127.0.0.1:")


def test_named_client_attribution(server):
    with connect(server, name="console-7") as client:
        client.write("A/x", {"PV": 1.0})
    (record,) = server.engine.drain_writes()
    assert record.source == "console-7"


def test_engine_errors_surface_as_protocol_errors(server):
    with connect(server) as client:
        with pytest.raises(ProtocolError) as err:
            client.read("missing/path")
        assert err.value.code == "unknown_path"
        with pytest.raises(ProtocolError) as err:
            client.write("A/x", {"PV": "high"})
        assert err.value.code == "bad_type"


def test_subscription_pushes_updates_to_other_clients(server):
    with connect(server, name="watcher") as watcher, \
         connect(server, name="writer") as writer:
        watcher.subscribe(prefix="A/x")
        writer.write("A/x", {"PV": 3.25})
        event = watcher.next_event(timeout=5.0)
        assert event["event"] == "update" and event["path"] == "A/x"
        assert event["value"]["PV"] == 3.25 and event["version"] == 2
        # unrelated paths stay quiet
        writer.write("A/y", {"PV": 8.0})
        assert watcher.next_event(timeout=0.3) is None


def test_slow_subscriber_sees_gap_event(server):
    with connect(server, name="slow") as slow, connect(server, name="fast") as fast:
        slow.subscribe(prefix="A/x", buffer=1)
        import time

        time.sleep(0.1)  # let the pump thread attach
        for i in range(20):
            fast.write("A/x", {"PV": float(i)})
        events = []
        while True:
            event = slow.next_event(timeout=1.0)
            if event is None:
                break
            events.append(event)
        kinds = {e["event"] for e in events}
        assert "update" in kinds
        if "gap" in kinds:  # timing-dependent, but versions must stay ordered
            gap = next(e for e in events if e["event"] == "gap")
            assert gap["from_version"] <= gap["to_version"]
        versions = [e["version"] for e in events if e["event"] == "update"]
        assert versions == sorted(versions)
        assert versions[-1] == 21  # newest write always arrives


def test_malformed_json_line_gets_error_frame(server):
    import socket as socketlib

    with socketlib.create_connection(("127.0.0.1", server.port), timeout=5.0) as raw:
        raw.sendall(b"this is not json\n")
        reply = json.loads(raw.makefile("rb").readline())
        assert reply["ok"] is False and reply["error"] == "bad_json"


def test_server_stop_closes_clients(server):
    client = connect(server)
    assert client.list_paths()
    server.stop()
    with pytest.raises(ProtocolError) as err:
        client.list_paths()
    assert err.value.code in ("closed", "timeout")
    client.close()
