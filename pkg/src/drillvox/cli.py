"""Command-line entry point: import/convert/simulate/serve/replay/metrics/render/export."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .errors import (
    ConflictError,
    ContractViolation,
    CorruptionError,
    DrillvoxError,
    IncompleteRecordingError,
    InsufficientDataError,
    OrderingError,
    ParseError,
    StateError,
    TruncationError,
    UnsupportedFeatureError,
    ValidationError,
    WrongAnatomyError,
)
from .imagestack import export_image_stack, import_image_stack
from .nrrd import parse_nrrd, write_nrrd
from .recording import RecordingMeta, export_hdf5, open_recording, read_recording, replay_to_grid
from .volume import IntensityVolume, LabeledVolume, grid_digest

EXIT_CODES = [
    (ParseError, 3),
    (UnsupportedFeatureError, 4),
    (TruncationError, 5),
    (CorruptionError, 6),
    (IncompleteRecordingError, 7),
    (WrongAnatomyError, 8),
    (InsufficientDataError, 9),
    (ValidationError, 10),
    (StateError, 11),
    (OrderingError, 12),
    (ConflictError, 13),
    (ContractViolation, 14),
    (DrillvoxError, 20),
    (OSError, 15),
]

SUMMARY_NAME = "summary.json"


def _fail(exc: BaseException) -> int:
    sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return 1


def _load_volume(path: str) -> LabeledVolume | IntensityVolume:
    return parse_nrrd(Path(path).read_bytes())


def _require_labeled(vol) -> LabeledVolume:
    if not isinstance(vol, LabeledVolume):
        raise ValidationError("this command needs a segmented (labeled) volume")
    return vol


def cmd_import(args) -> int:
    vol = _load_volume(args.nrrd)
    kind = "labeled" if isinstance(vol, LabeledVolume) else "intensity"
    print(f"parsed {kind} volume dims={vol.dims} spacing={vol.spacing}")
    if isinstance(vol, LabeledVolume):
        print(f"digest={grid_digest(vol):#018x} segments={len(vol.segment_table)}")
    if args.output:
        Path(args.output).write_bytes(write_nrrd(vol))
        print(f"cached canonical copy at {args.output}")
    return 0


def cmd_convert(args) -> int:
    vol = _require_labeled(_load_volume(args.nrrd))
    count = export_image_stack(vol, args.to_stack, args.format)
    print(f"wrote {count} slices to {args.to_stack}")
    return 0


def _build_session(vol_path: str, config_path: str | None):
    from .session import Session

    vol = _require_labeled(_load_volume(vol_path))
    cfg = load_config(config_path)
    return vol, cfg


def cmd_simulate(args) -> int:
    from .session import Session, load_trajectory, run_script

    vol, cfg = _build_session(args.volume, args.config)
    traj = load_trajectory(args.script)
    recorder = None
    if args.record:
        start = args.fixed_clock if args.fixed_clock is not None else time.time()
        meta = RecordingMeta(
            anatomy_digest=grid_digest(vol),
            participant_id=args.participant,
            config=cfg.snapshot(),
            start_wallclock=start,
            tick_rate_hz=cfg.tick_rate_hz,
        )
        recorder = open_recording(args.record, meta, cfg.batch_size)
    session = Session(vol, cfg, recorder)
    summary = run_script(session, traj)
    if recorder is not None:
        recorder.close()
        (Path(args.record) / SUMMARY_NAME).write_text(json.dumps({
            "steps": summary.steps,
            "removed_voxels": summary.removed_voxels,
            "max_force": summary.max_force,
            "warning_count": summary.warning_count,
            "final_digest": summary.final_digest,
        }, sort_keys=True, indent=1))
    print(f"steps={summary.steps} removed={summary.removed_voxels} "
          f"max_force={summary.max_force:.4f} warnings={summary.warning_count}")
    print(f"final digest={summary.final_digest:#018x}")
    return 0


def cmd_serve(args) -> int:
    from .gateway import GatewayServer
    from .session import Session

    vol, cfg = _build_session(args.volume, args.config)
    host, _, port = args.endpoint.rpartition(":")
    session = Session(vol, cfg)
    server = GatewayServer(session, host or "127.0.0.1", int(port),
                           state_rate_hz=args.state_rate)
    server.start()
    print(f"serving on {server.host}:{server.port} "
          f"(tick {cfg.tick_rate_hz} Hz, state {args.state_rate} Hz)")
    try:
        while True:
            server.pump(duration_s=3600.0, realtime=True)
    except KeyboardInterrupt:
        server.stop()
    return 0


def cmd_replay(args) -> int:
    vol = _require_labeled(_load_volume(args.volume))
    meta, events = read_recording(args.recording)
    replayed = replay_to_grid(vol, events, expected_digest=meta.anatomy_digest)
    digest = grid_digest(replayed)
    print(f"replayed digest={digest:#018x}")
    if args.verify:
        summary_path = Path(args.recording) / SUMMARY_NAME
        if not summary_path.exists():
            raise IncompleteRecordingError(f"{SUMMARY_NAME} missing; cannot verify")
        expected = json.loads(summary_path.read_text())["final_digest"]
        if digest != expected:
            raise CorruptionError(
                f"digest mismatch: replay {digest:#x} vs live {expected:#x}")
        print("digest match")
    return 0


def cmd_metrics(args) -> int:
    from .metrics import render_json, render_table, report

    table = None
    sensitive = None
    voxel_volume = 1.0
    if args.volume:
        vol = _require_labeled(_load_volume(args.volume))
        table = vol.segment_table
        sensitive = table.sensitive_labels()
        voxel_volume = vol.voxel_volume_mm3
    rep = report(args.recording, table, sensitive, voxel_volume)
    print(render_json(rep) if args.format == "json" else render_table(rep))
    return 0


def cmd_render(args) -> int:
    from PIL import Image

    from .isosurface import render_ortho_maps

    vol = _require_labeled(_load_volume(args.volume))
    try:
        c, v, u, wh = args.camera.split(";")
        center = tuple(float(x) for x in c.split(","))
        view = tuple(float(x) for x in v.split(","))
        up = tuple(float(x) for x in u.split(","))
        width_mm, height_mm = (float(x) for x in wh.split(","))
    except ValueError as exc:
        raise ValidationError(
            "camera spec is 'cx,cy,cz;vx,vy,vz;ux,uy,uz;width_mm,height_mm'") from exc
    camera = {"center": center, "view": view, "up": up,
              "width_mm": width_mm, "height_mm": height_mm}
    depth, labels, _normals = render_ortho_maps(vol, camera, (args.res, args.res))

    depth_path, label_path = args.output.split(",")
    finite = depth[np.isfinite(depth)]
    scale = float(finite.max()) if len(finite) else 1.0
    # 16-bit quantization: 0 = miss, 1..65535 spans [0, max finite depth]
    q = np.zeros(depth.shape, dtype=np.uint16)
    hitmask = np.isfinite(depth)
    if scale > 0:
        q[hitmask] = 1 + np.round(depth[hitmask] / scale * 65534).astype(np.uint16)
    Image.fromarray(q).save(depth_path)
    lut = np.zeros((max([0] + vol.segment_table.labels()) + 1, 3), dtype=np.uint8)
    for lb in vol.segment_table.labels():
        lut[lb] = [int(round(255 * x)) for x in vol.segment_table[lb].color]
    Image.fromarray(lut[labels], mode="RGB").save(label_path)
    print(f"wrote {depth_path} and {label_path} ({args.res}x{args.res})")
    return 0


def cmd_export(args) -> int:
    export_hdf5(args.recording, args.hdf5)
    print(f"exported {args.recording} to {args.hdf5}")
    return 0


def cmd_stack_import(args) -> int:
    vol = import_image_stack(args.stack)
    Path(args.output).write_bytes(write_nrrd(vol))
    print(f"rebuilt volume dims={vol.dims} digest={grid_digest(vol):#018x}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drillvox",
                                description="volumetric drilling simulator toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("import", help="validate an NRRD/seg.nrrd scan")
    s.add_argument("nrrd")
    s.add_argument("-o", "--output", help="write a canonical cached copy")
    s.set_defaults(func=cmd_import)

    s = sub.add_parser("convert", help="export a labeled volume to an image stack")
    s.add_argument("nrrd")
    s.add_argument("--to-stack", required=True)
    s.add_argument("--format", choices=["png", "jpeg"], default="png")
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("stack-import", help="rebuild a volume from a PNG stack")
    s.add_argument("stack")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_stack_import)

    s = sub.add_parser("simulate", help="run a scripted headless session")
    s.add_argument("volume")
    s.add_argument("--script", required=True)
    s.add_argument("--record")
    s.add_argument("--config")
    s.add_argument("--participant", default="anonymous")
    s.add_argument("--fixed-clock", type=float, default=None,
                   help="pin the recording wall clock (golden tests)")
    s.add_argument("--seed", type=int, default=None,
                   help="reserved; the core is deterministic")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("serve", help="serve an interactive session")
    s.add_argument("volume")
    s.add_argument("--endpoint", default="127.0.0.1:7420")
    s.add_argument("--state-rate", type=float, default=60.0)
    s.add_argument("--config")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("replay", help="replay a recording onto a volume")
    s.add_argument("recording")
    s.add_argument("volume")
    s.add_argument("--verify", action="store_true")
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("metrics", help="compute skill metrics from a recording")
    s.add_argument("recording")
    s.add_argument("--format", choices=["json", "table"], default="table")
    s.add_argument("--volume", help="labeled volume for per-label volumes")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("render", help="render orthographic depth/label maps")
    s.add_argument("volume")
    s.add_argument("--camera", required=True,
                   help="'cx,cy,cz;vx,vy,vz;ux,uy,uz;width_mm,height_mm'")
    s.add_argument("--res", type=int, default=128)
    s.add_argument("-o", "--output", required=True, help="depth.png,label.png")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("export", help="export a recording to HDF5")
    s.add_argument("recording")
    s.add_argument("--hdf5", required=True)
    s.set_defaults(func=cmd_export)

    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:   # noqa: BLE001 - mapped to documented exit codes
        return _fail(exc)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
