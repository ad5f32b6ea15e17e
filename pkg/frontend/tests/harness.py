"""Loopback test server for the browser client.

Starts a gateway on an ephemeral port, waits for a controller, pumps 60
simulated seconds (flat out, not wall-clock paced), then prints the final
grid digest. The vitest loopback suite talks to it over raw TCP using the
same framed protocol the WebSocket endpoint carries.

stdout protocol:  "PORT <n>"  once listening, "FINAL <hex digest>" after the
pump, one line each, flushed.
"""

import sys
import time

import numpy as np

from drillvox.drill import Burr
from drillvox.gateway import GatewayServer
from drillvox.session import Session, SessionConfig
from drillvox.volume import LabeledVolume, Segment, SegmentTable


def make_volume() -> LabeledVolume:
    dims = (48, 48, 48)
    spacing = (0.5, 0.5, 0.5)
    labels = np.zeros(dims, dtype=np.uint16)
    center = np.array([23.5, 23.5, 23.5])
    idx = np.stack(np.meshgrid(*[np.arange(d) for d in dims], indexing="ij"), axis=-1)
    dist = np.linalg.norm(idx - center, axis=-1)
    labels[dist < 20] = 1
    labels[dist < 5] = 2            # sensitive core
    table = SegmentTable()
    table.add(1, Segment("bone", (0.8, 0.8, 0.7), False))
    table.add(2, Segment("nerve", (1.0, 0.2, 0.2), True))
    return LabeledVolume(dims, spacing, (0.0, 0.0, 0.0), labels, table)


def main() -> int:
    duration_s = float(sys.argv[1]) if len(sys.argv) > 1 else 60.0
    cfg = SessionConfig(burrs=[Burr(1.0, "cutting", 5000.0),
                               Burr(2.0, "diamond", 800.0)])
    session = Session(make_volume(), cfg)
    server = GatewayServer(session, port=0, state_rate_hz=60.0,
                           verify_interval=30, outq_limit=16384)
    server.start()
    print(f"PORT {server.port}", flush=True)

    deadline = time.monotonic() + 15.0
    while server._controller is None:
        if time.monotonic() > deadline:
            print("ERROR no controller connected", flush=True)
            return 1
        time.sleep(0.01)

    server.pump(duration_s=duration_s)
    # let every client's send queue drain before tearing the sockets down
    deadline = time.monotonic() + 15.0
    while time.monotonic() < deadline and any(
            c.outq.qsize() for c in list(server._clients)):
        time.sleep(0.05)
    time.sleep(0.5)
    print(f"FINAL {server.final_frame_digest():#018x}", flush=True)
    server.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
