"""Network gateway: one controller, many spectators, lock-free simulation tick.

The simulation loop runs in a single thread and never touches sockets; each
connection gets a reader thread (inputs in) and a writer thread draining a
bounded queue (frames out). A slow consumer fills its queue and is dropped
with an Error frame instead of stalling the tick.

Raw TCP carries the framed protocol directly. A browser speaking the
web-socket standard is detected by its HTTP upgrade request on the same port;
each binary web-socket message then carries exactly one protocol frame.
"""

from __future__ import annotations

import base64
import hashlib
import queue
import socket
import struct
import threading
import time

from .drill import DrillInput
from .errors import StateError
from .protocol import (
    ERR_BUSY,
    ERR_SLOW_CONSUMER,
    Ack,
    BurrList,
    ErrorMsg,
    FrameDecoder,
    Hello,
    InputFrame,
    StateFrame,
    encode,
    snapshot_chunks,
)
from .session import Session

__all__ = ["GatewayServer"]

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
FAR_AWAY = (1.0e6, 1.0e6, 1.0e6)


def _ws_accept_key(key: str) -> str:
    return base64.b64encode(hashlib.sha1((key + _WS_GUID).encode()).digest()).decode()


def _ws_wrap(payload: bytes) -> bytes:
    """Server-to-client binary frame (unmasked)."""
    head = b"\x82"
    n = len(payload)
    if n < 126:
        head += struct.pack("!B", n)
    elif n < 1 << 16:
        head += struct.pack("!BH", 126, n)
    else:
        head += struct.pack("!BQ", 127, n)
    return head + payload


class _WsStream:
    """Unwraps masked client frames into the raw protocol byte stream."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._buf = bytearray()

    def recv(self) -> bytes:
        while True:
            msg = self._next_frame()
            if msg is None:
                return b""
            opcode, payload = msg
            if opcode == 8:      # close
                return b""
            if opcode == 9:      # ping
                self.sock.sendall(b"\x8a" + struct.pack("!B", len(payload)) + payload)
                continue
            if opcode in (1, 2):
                return payload

    def _fill(self, need: int) -> bool:
        while len(self._buf) < need:
            data = self.sock.recv(65536)
            if not data:
                return False
            self._buf += data
        return True

    def _next_frame(self):
        if not self._fill(2):
            return None
        b0, b1 = self._buf[0], self._buf[1]
        opcode = b0 & 0x0F
        masked = bool(b1 & 0x80)
        length = b1 & 0x7F
        off = 2
        if length == 126:
            if not self._fill(4):
                return None
            length = struct.unpack_from("!H", self._buf, 2)[0]
            off = 4
        elif length == 127:
            if not self._fill(10):
                return None
            length = struct.unpack_from("!Q", self._buf, 2)[0]
            off = 10
        need = off + (4 if masked else 0) + length
        if not self._fill(need):
            return None
        if masked:
            mask = self._buf[off:off + 4]
            off += 4
            payload = bytes(b ^ mask[i % 4] for i, b in
                            enumerate(self._buf[off:off + length]))
        else:
            payload = bytes(self._buf[off:off + length])
        del self._buf[:need]
        return opcode, payload


class _Connection:
    def __init__(self, server: "GatewayServer", sock: socket.socket, websocket: bool):
        self.server = server
        self.sock = sock
        self.websocket = websocket
        self.ws_stream = _WsStream(sock) if websocket else None
        self.outq: queue.Queue[bytes] = queue.Queue(maxsize=server.outq_limit)
        self.alive = True
        self.is_controller = False
        self._writer = threading.Thread(target=self._write_loop, daemon=True)
        self._reader = threading.Thread(target=self._read_loop, daemon=True)

    def start(self):
        self._writer.start()
        self._reader.start()

    def send(self, frame: bytes) -> None:
        """Queue an already-encoded protocol frame; drop the client when full."""
        if not self.alive:
            return
        try:
            self.outq.put_nowait(frame)
        except queue.Full:
            self.alive = False
            self.server._drop(self, ErrorMsg(ERR_SLOW_CONSUMER, "send queue overflow"))

    def send_now(self, frame: bytes) -> None:
        try:
            self.sock.sendall(_ws_wrap(frame) if self.websocket else frame)
        except OSError:
            self.alive = False

    def _write_loop(self):
        while self.alive:
            try:
                frame = self.outq.get(timeout=0.2)
            except queue.Empty:
                continue
            try:
                self.sock.sendall(_ws_wrap(frame) if self.websocket else frame)
            except OSError:
                self.alive = False
        try:
            self.sock.close()
        except OSError:
            pass

    def _read_loop(self):
        decoder = FrameDecoder()
        while self.alive:
            try:
                data = self.ws_stream.recv() if self.websocket else self.sock.recv(65536)
            except OSError:
                break
            if not data:
                break
            try:
                msgs = decoder.feed(data)
            except Exception:
                break
            for msg in msgs:
                self.server._on_message(self, msg)
        self.alive = False
        self.server._forget(self)


class GatewayServer:
    """Serves one drilling session; exactly one controller at a time."""

    def __init__(self, session: Session, host: str = "127.0.0.1", port: int = 0,
                 state_rate_hz: float = 60.0, verify_interval: int = 60,
                 outq_limit: int = 256):
        self.session = session
        self.state_rate_hz = state_rate_hz
        self.verify_interval = verify_interval
        self.outq_limit = outq_limit
        self._sock = socket.create_server((host, port))
        self.host, self.port = self._sock.getsockname()[:2]
        self._clients: list[_Connection] = []
        self._lock = threading.Lock()
        self._controller: _Connection | None = None
        self._latest_input: InputFrame | None = None
        self._running = False
        self._accept_thread: threading.Thread | None = None
        self.applied_seqs: list[int] = []
        self.tick_times: list[float] = []
        self._frame_seq = 0
        self._held_input: DrillInput | None = None

    def start(self) -> None:
        self._running = True
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    # -- connection management ------------------------------------------------

    def _accept_loop(self):
        self._sock.settimeout(0.2)
        while self._running:
            try:
                sock, _addr = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            threading.Thread(target=self._handshake, args=(sock,), daemon=True).start()

    def _handshake(self, sock: socket.socket):
        # Browsers speak first (the HTTP upgrade request); raw-TCP clients wait
        # for the Hello. Peek briefly and treat silence as raw TCP.
        sock.settimeout(0.25)
        try:
            first = sock.recv(4, socket.MSG_PEEK)
        except socket.timeout:
            first = b""
        except OSError:
            sock.close()
            return
        sock.settimeout(10.0)
        websocket = first.startswith(b"GET ")
        if websocket:
            if not self._ws_handshake(sock):
                sock.close()
                return
        sock.settimeout(None)
        conn = _Connection(self, sock, websocket)
        with self._lock:
            self._clients.append(conn)
        conn.start()
        digest = self.session.digest()
        conn.send(encode(Hello.for_volume(self.session.vol, digest)))
        for chunk in snapshot_chunks(self.session.vol):
            conn.send(encode(chunk))
        burrs = tuple((i, b.radius_mm, b.tip, b.brr)
                      for i, b in enumerate(self.session.cfg.burrs))
        conn.send(encode(BurrList(burrs)))

    def _ws_handshake(self, sock: socket.socket) -> bool:
        data = b""
        while b"\r\n\r\n" not in data:
            chunk = sock.recv(4096)
            if not chunk:
                return False
            data += chunk
        headers = {}
        for line in data.decode("latin-1").split("\r\n")[1:]:
            if ": " in line:
                k, v = line.split(": ", 1)
                headers[k.lower()] = v
        key = headers.get("sec-websocket-key")
        if not key:
            return False
        resp = ("HTTP/1.1 101 Switching Protocols\r\n"
                "Upgrade: websocket\r\nConnection: Upgrade\r\n"
                f"Sec-WebSocket-Accept: {_ws_accept_key(key)}\r\n\r\n")
        sock.sendall(resp.encode("latin-1"))
        return True

    def _on_message(self, conn: _Connection, msg):
        if isinstance(msg, InputFrame):
            with self._lock:
                if self._controller is None:
                    self._controller = conn
                    conn.is_controller = True
                if self._controller is not conn:
                    conn.send(encode(ErrorMsg(ERR_BUSY, "another controller is active")))
                    return
                self._latest_input = msg
        elif isinstance(msg, Ack):
            pass

    def _drop(self, conn: _Connection, err: ErrorMsg | None = None):
        if err is not None:
            conn.send_now(encode(err))
        conn.alive = False
        self._forget(conn)

    def _forget(self, conn: _Connection):
        with self._lock:
            if conn in self._clients:
                self._clients.remove(conn)
            if self._controller is conn:
                self._controller = None

    # -- simulation pump ------------------------------------------------------

    def pump(self, duration_s: float | None = None, max_ticks: int | None = None,
             realtime: bool = False, trajectory=None, record_tick_times: bool = False):
        """Run the simulation loop, coalescing inputs and emitting state frames.

        With ``realtime`` the loop paces itself to the session tick rate;
        otherwise it runs flat out (tests, scripted runs).
        """
        if not self._running and not self._clients:
            # pump without start() is fine for loopback tests that pre-connect
            pass
        cfg = self.session.cfg
        tick_dt = 1.0 / cfg.tick_rate_hz
        ticks_per_frame = max(1, round(cfg.tick_rate_hz / self.state_rate_hz))
        if max_ticks is None:
            if duration_s is None:
                raise StateError("pump needs duration_s or max_ticks")
            max_ticks = round(duration_s * cfg.tick_rate_hz)

        pending_removals: list[tuple[int, int, int, int]] = []
        pending_warnings: dict[tuple[int, str], str] = {}
        next_deadline = time.perf_counter() + tick_dt
        frame_idx = 0
        for n in range(max_ticks):
            with self._lock:
                latest = self._latest_input
                self._latest_input = None
            if latest is not None:
                self.applied_seqs.append(latest.seq)
                inp = DrillInput(latest.tip_position, latest.tip_orientation,
                                 latest.pedal, latest.burr_id)
                self._held_input = inp
                cam = latest.camera_pose
            elif trajectory is not None:
                from .session import sample_trajectory
                t_next = (self.session.tick_count + 1) / cfg.tick_rate_hz
                inp = sample_trajectory(trajectory, t_next, self.session.burr_id)
                cam = None
            elif self._held_input is not None:
                # no fresh packet this tick: the drill stays where it was
                inp = self._held_input
                cam = None
            else:
                inp = DrillInput(FAR_AWAY, burr_id=self.session.burr_id)
                cam = None
            report = self.session.step(inp, cam)
            if record_tick_times:
                self.tick_times.append(time.perf_counter())
            for idx, label in report.outcome.removed:
                pending_removals.append((*idx, label))
            for w in report.outcome.warnings:
                key = (w.label, w.kind)
                pending_warnings[key] = w.name

            if (n + 1) % ticks_per_frame == 0 or n + 1 == max_ticks:
                frame_idx += 1
                digest = None
                is_verify = self.verify_interval and frame_idx % self.verify_interval == 0
                if is_verify or n + 1 == max_ticks:
                    digest = self.session.digest()
                frame = StateFrame(
                    seq=self._frame_seq,
                    t=report.t,
                    drill_pose=report.drill_pose,
                    F_haptic=tuple(float(f) for f in report.outcome.F_haptic),
                    pitch=report.outcome.pitch,
                    warnings=tuple((lb, kind, name) for (lb, kind), name
                                   in sorted(pending_warnings.items())),
                    removed=tuple(pending_removals),
                    digest=digest,
                )
                self._frame_seq += 1
                pending_removals = []
                pending_warnings = {}
                data = encode(frame)
                with self._lock:
                    clients = list(self._clients)
                for conn in clients:
                    conn.send(data)

            if realtime:
                now = time.perf_counter()
                if next_deadline > now:
                    time.sleep(next_deadline - now)
                next_deadline += tick_dt

    def final_frame_digest(self) -> int:
        return self.session.digest()

    def stop(self) -> None:
        self._running = False
        try:
            self._sock.close()
        except OSError:
            pass
        with self._lock:
            clients = list(self._clients)
        for conn in clients:
            conn.alive = False
            try:
                conn.sock.close()
            except OSError:
                pass
