import base64
import hashlib
import socket
import struct
import time

import numpy as np
import pytest

from drillvox.drill import Burr
from drillvox.gateway import GatewayServer
from drillvox.protocol import (
    BurrList,
    ErrorMsg,
    FrameDecoder,
    Hello,
    InputFrame,
    StateFrame,
    VolumeSnapshot,
    assemble_snapshot,
    encode,
)
from drillvox.session import Session, SessionConfig
from drillvox.volume import grid_digest

from conftest import make_volume


class Client:
    """Minimal raw-TCP protocol client for loopback tests."""

    def __init__(self, port):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=5)
        self.dec = FrameDecoder()
        self.msgs = []

    def send(self, msg):
        self.sock.sendall(encode(msg))

    def pump_recv(self, want, timeout=5.0):
        """Read until ``want(msgs)`` is satisfied; returns all messages so far."""
        deadline = time.monotonic() + timeout
        self.sock.settimeout(0.2)
        while not want(self.msgs):
            if time.monotonic() > deadline:
                raise TimeoutError(f"still waiting after {len(self.msgs)} messages")
            try:
                data = self.sock.recv(65536)
            except socket.timeout:
                continue
            if not data:
                break
            self.msgs.extend(self.dec.feed(data))
        return self.msgs

    def handshake(self):
        def done(msgs):
            return any(isinstance(m, BurrList) for m in msgs)
        msgs = self.pump_recv(done)
        hello = next(m for m in msgs if isinstance(m, Hello))
        chunks = [m for m in msgs if isinstance(m, VolumeSnapshot)]
        burrs = next(m for m in msgs if isinstance(m, BurrList))
        return hello, chunks, burrs

    def close(self):
        self.sock.close()


@pytest.fixture
def server():
    vol = make_volume((16, 16, 16), labels=np.ones((16, 16, 16), dtype=np.uint16))
    cfg = SessionConfig(tick_rate_hz=1000.0,
                        burrs=[Burr(2.0, "cutting", brr=4000.0),
                               Burr(2.0, "diamond", brr=640.0)])
    gw = GatewayServer(Session(vol, cfg), state_rate_hz=100.0)
    gw.start()
    yield gw
    gw.stop()


class TestHandshake:
    def test_hello_snapshot_burrs(self, server):
        c = Client(server.port)
        hello, chunks, burrs = c.handshake()
        assert hello.dims == (16, 16, 16)
        assert hello.digest == server.session.digest()
        mirror = assemble_snapshot(hello, chunks)
        assert grid_digest(mirror) == hello.digest
        assert len(burrs.burrs) == 2
        assert burrs.burrs[0][2] == "cutting"
        c.close()

    def test_two_spectators_get_identical_snapshots(self, server):
        a, b = Client(server.port), Client(server.port)
        ha, ca, _ = a.handshake()
        hb, cb, _ = b.handshake()
        assert ha == hb
        va = assemble_snapshot(ha, ca)
        vb = assemble_snapshot(hb, cb)
        assert np.array_equal(va.labels, vb.labels)
        a.close()
        b.close()


class TestControl:
    def test_input_drives_state(self, server):
        c = Client(server.port)
        c.handshake()
        c.send(InputFrame(1, (8.0, 8.0, 8.0), pedal=1.0))
        time.sleep(0.1)
        server.pump(max_ticks=100)
        msgs = c.pump_recv(lambda m: sum(isinstance(x, StateFrame) for x in m) >= 10)
        states = [m for m in msgs if isinstance(m, StateFrame)]
        assert server.applied_seqs == [1]
        assert states[0].drill_pose[:3] == pytest.approx((8.0, 8.0, 8.0))
        assert any(s.removed for s in states)
        c.close()

    def test_second_controller_rejected(self, server):
        a, b = Client(server.port), Client(server.port)
        a.handshake()
        b.handshake()
        a.send(InputFrame(1, (0.0, 0.0, 0.0)))
        time.sleep(0.1)
        b.send(InputFrame(1, (0.0, 0.0, 0.0)))
        msgs = b.pump_recv(lambda m: any(isinstance(x, ErrorMsg) for x in m))
        err = next(m for m in msgs if isinstance(m, ErrorMsg))
        assert err.code == 1    # busy
        a.close()
        b.close()

    def test_controller_slot_freed_on_disconnect(self, server):
        a = Client(server.port)
        a.handshake()
        a.send(InputFrame(1, (0.0, 0.0, 0.0)))
        time.sleep(0.1)
        a.close()
        time.sleep(0.2)
        b = Client(server.port)
        b.handshake()
        b.send(InputFrame(5, (1.0, 1.0, 1.0)))
        time.sleep(0.1)
        server.pump(max_ticks=10)
        assert 5 in server.applied_seqs
        b.close()

    def test_input_coalescing_applies_a_subsequence(self, server):
        c = Client(server.port)
        c.handshake()
        sent = list(range(1, 201))
        for seq in sent:
            c.send(InputFrame(seq, (float(seq), 0.0, 0.0)))
        time.sleep(0.3)
        server.pump(max_ticks=300)
        applied = server.applied_seqs
        assert applied, "no input reached the simulation"
        assert applied == sorted(applied)
        assert set(applied) <= set(sent)
        assert applied[-1] == 200    # the newest input wins eventually
        c.close()


class TestStateFrames:
    def test_final_frame_carries_matching_digest(self, server):
        c = Client(server.port)
        hello, chunks, _ = c.handshake()
        mirror = assemble_snapshot(hello, chunks)
        c.send(InputFrame(1, (8.0, 8.0, 8.0), pedal=1.0))
        time.sleep(0.1)
        server.pump(max_ticks=200)
        msgs = c.pump_recv(
            lambda m: any(isinstance(x, StateFrame) and x.digest is not None
                          for x in m))
        states = [m for m in msgs if isinstance(m, StateFrame)]
        final = [s for s in states if s.digest is not None][-1]
        assert final.digest == server.session.digest()
        # replaying the streamed removals over the mirror reproduces the digest
        for s in states:
            for i, j, k, _label in s.removed:
                mirror.labels[i, j, k] = 0
        assert grid_digest(mirror) == final.digest
        c.close()

    def test_frame_cadence(self, server):
        c = Client(server.port)
        c.handshake()
        server.pump(max_ticks=1000)   # 1 kHz session, 100 Hz state rate
        msgs = c.pump_recv(
            lambda m: sum(isinstance(x, StateFrame) for x in m) >= 100)
        states = [m for m in msgs if isinstance(m, StateFrame)]
        assert len(states) == 100
        assert [s.seq for s in states] == list(range(100))
        ts = [s.t for s in states]
        assert np.allclose(np.diff(ts), 0.01, atol=1e-12)
        c.close()


class TestSlowConsumer:
    def test_stalled_reader_is_dropped_not_blocking(self):
        vol = make_volume((16, 16, 16),
                          labels=np.ones((16, 16, 16), dtype=np.uint16))
        gw = GatewayServer(Session(vol, SessionConfig(tick_rate_hz=1000.0)),
                           state_rate_hz=1000.0, outq_limit=8)
        gw.start()
        try:
            stalled = Client(gw.port)
            stalled.handshake()
            # pause the writer drain by flooding: stop reading entirely
            t0 = time.perf_counter()
            gw.pump(max_ticks=2000)
            elapsed = time.perf_counter() - t0
            assert elapsed < 5.0            # tick never blocked on the socket
            assert gw.session.tick_count == 2000
            time.sleep(0.2)
            assert stalled not in gw._clients
            stalled.close()
        finally:
            gw.stop()


class TestWebSocket:
    def test_upgrade_and_hello(self, server):
        sock = socket.create_connection(("127.0.0.1", server.port), timeout=5)
        key = base64.b64encode(b"0123456789abcdef").decode()
        req = ("GET / HTTP/1.1\r\nHost: x\r\nUpgrade: websocket\r\n"
               "Connection: Upgrade\r\nSec-WebSocket-Version: 13\r\n"
               f"Sec-WebSocket-Key: {key}\r\n\r\n")
        sock.sendall(req.encode())
        resp = b""
        while b"\r\n\r\n" not in resp:
            resp += sock.recv(4096)
        head, rest = resp.split(b"\r\n\r\n", 1)
        assert b"101" in head.split(b"\r\n")[0]
        expected = base64.b64encode(
            hashlib.sha1((key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11").encode())
            .digest()).decode()
        assert expected.encode() in head

        # each binary ws message carries one protocol frame
        buf = bytearray(rest)
        dec = FrameDecoder()
        msgs = []
        sock.settimeout(5)
        while not any(isinstance(m, BurrList) for m in msgs):
            while True:
                frame = _ws_unwrap(buf)
                if frame is None:
                    break
                got = dec.feed(frame)
                assert len(got) == 1
                msgs.extend(got)
            if not any(isinstance(m, BurrList) for m in msgs):
                buf += sock.recv(65536)
        assert isinstance(msgs[0], Hello)
        sock.close()


def _ws_unwrap(buf: bytearray):
    """Pop one server-to-client frame payload, or None if incomplete."""
    if len(buf) < 2:
        return None
    length = buf[1] & 0x7F
    off = 2
    if length == 126:
        if len(buf) < 4:
            return None
        length = struct.unpack_from("!H", buf, 2)[0]
        off = 4
    elif length == 127:
        if len(buf) < 10:
            return None
        length = struct.unpack_from("!Q", buf, 2)[0]
        off = 10
    if len(buf) < off + length:
        return None
    payload = bytes(buf[off:off + length])
    del buf[:off + length]
    return payload
