import json
import struct
import zlib
from pathlib import Path

import numpy as np
import pytest

from drillvox.errors import (
    CorruptionError,
    IncompleteRecordingError,
    OrderingError,
    StateError,
    WrongAnatomyError,
)
from drillvox.events import BurrChange, DepthFrame, ForceSample, Kinematics, VoxelRemoved
from drillvox.recording import (
    Recorder,
    RecordingMeta,
    naive_log_size,
    read_recording,
    recording_size,
    replay_to_grid,
)
from drillvox.volume import grid_digest

from conftest import make_volume


def sample_events(n=100, seed=0):
    """A plausible mixed stream with non-decreasing timestamps."""
    rng = np.random.default_rng(seed)
    events = []
    t = 0.0
    for i in range(n):
        t += float(rng.uniform(0.0, 0.01))
        r = i % 10
        if r < 4:
            events.append(VoxelRemoved(t, (i % 16, (i * 3) % 16, (i * 7) % 16),
                                       1 + i % 3, (0.8, 0.8, 0.7)))
        elif r < 7:
            events.append(ForceSample(t, tuple(rng.normal(size=3))))
        elif r < 9:
            events.append(Kinematics(t, tuple(rng.normal(size=7)),
                                     tuple(rng.normal(size=7))))
        elif i % 20 == 9:
            events.append(BurrChange(t, 2.0, "diamond"))
        else:
            events.append(DepthFrame(t, i))
    return events


def record(tmp_path, events, batch_size=50, digest=0) -> Path:
    rec = Recorder(tmp_path, RecordingMeta(anatomy_digest=digest), batch_size)
    for ev in events:
        rec.append(ev)
    rec.close()
    return Path(tmp_path)


class TestRecorder:
    def test_round_trip_lossless(self, tmp_path):
        events = sample_events(200)
        record(tmp_path, events, batch_size=64)
        meta, stream = read_recording(tmp_path)
        assert meta.anatomy_digest == 0
        assert list(stream) == events

    @pytest.mark.parametrize("batch_size", [1, 10, 1000])
    def test_batch_size_invariance(self, tmp_path, batch_size):
        events = sample_events(120)
        d = tmp_path / str(batch_size)
        record(d, events, batch_size=batch_size)
        assert list(read_recording(d)[1]) == events

    def test_batch_file_count(self, tmp_path):
        record(tmp_path, sample_events(100), batch_size=30)
        files = sorted(p.name for p in tmp_path.glob("batch_*.fvr"))
        assert files == ["batch_000.fvr", "batch_001.fvr",
                         "batch_002.fvr", "batch_003.fvr"]

    def test_out_of_order_append_rejected(self, tmp_path):
        rec = Recorder(tmp_path, RecordingMeta(anatomy_digest=0), 10)
        rec.append(ForceSample(1.0, (0, 0, 0)))
        with pytest.raises(OrderingError):
            rec.append(ForceSample(0.5, (0, 0, 0)))

    def test_equal_timestamps_allowed(self, tmp_path):
        rec = Recorder(tmp_path, RecordingMeta(anatomy_digest=0), 10)
        rec.append(ForceSample(1.0, (0, 0, 0)))
        rec.append(ForceSample(1.0, (1, 0, 0)))
        rec.close()
        assert len(list(read_recording(tmp_path)[1])) == 2

    def test_append_after_close(self, tmp_path):
        rec = Recorder(tmp_path, RecordingMeta(anatomy_digest=0), 10)
        rec.close()
        with pytest.raises(StateError):
            rec.append(ForceSample(0.0, (0, 0, 0)))

    def test_empty_recording(self, tmp_path):
        rec = Recorder(tmp_path, RecordingMeta(anatomy_digest=7), 10)
        manifest = rec.close()
        assert manifest["event_count"] == 0
        assert manifest["batches"] == []
        meta, stream = read_recording(tmp_path)
        assert meta.anatomy_digest == 7
        assert list(stream) == []

    def test_manifest_metadata(self, tmp_path):
        meta = RecordingMeta(anatomy_digest=42, participant_id="p01",
                             config={"tick_rate_hz": 500.0}, tick_rate_hz=500.0)
        rec = Recorder(tmp_path, meta, 10)
        rec.append(ForceSample(0.0, (0, 0, 0)))
        rec.close()
        back, _ = read_recording(tmp_path)
        assert back.participant_id == "p01"
        assert back.config == {"tick_rate_hz": 500.0}
        assert back.tick_rate_hz == 500.0


class TestIntegrity:
    def test_missing_batch_detected(self, tmp_path):
        record(tmp_path, sample_events(100), batch_size=30)
        (tmp_path / "batch_002.fvr").unlink()
        with pytest.raises(IncompleteRecordingError):
            read_recording(tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(IncompleteRecordingError):
            read_recording(tmp_path)

    def test_payload_corruption_detected(self, tmp_path):
        record(tmp_path, sample_events(100), batch_size=100)
        path = tmp_path / "batch_000.fvr"
        data = bytearray(path.read_bytes())
        data[len(data) // 2] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(CorruptionError):
            list(read_recording(tmp_path)[1])

    def test_truncation_detected(self, tmp_path):
        record(tmp_path, sample_events(100), batch_size=100)
        path = tmp_path / "batch_000.fvr"
        path.write_bytes(path.read_bytes()[:-20])
        with pytest.raises(CorruptionError):
            list(read_recording(tmp_path)[1])

    def test_batch_header_fields(self, tmp_path):
        record(tmp_path, sample_events(10), batch_size=4)
        data = (tmp_path / "batch_001.fvr").read_bytes()
        assert data[:4] == b"FVR1"
        assert data[-4:] == b"1RVF"
        schema, batch_index, meta_len = struct.unpack_from("<HII", data, 4)
        assert schema == 1
        assert batch_index == 1
        meta = json.loads(data[14:14 + meta_len])
        assert meta["schema_version"] == 1
        stored = struct.unpack("<I", data[-8:-4])[0]
        assert stored == zlib.crc32(data[:-8])


class TestReplay:
    def test_replay_reproduces_removals(self, tmp_path, solid_cube):
        events = [VoxelRemoved(i * 0.001, (i, i, i), 1, (0.8, 0.8, 0.7))
                  for i in range(8)]
        record(tmp_path, events, digest=grid_digest(solid_cube))
        meta, stream = read_recording(tmp_path)
        out = replay_to_grid(solid_cube, stream, meta.anatomy_digest)
        assert out.occupied_count() == solid_cube.occupied_count() - 8
        for i in range(8):
            assert out.labels[i, i, i] == 0
        # the source volume is untouched
        assert solid_cube.labels[0, 0, 0] == 1

    def test_wrong_anatomy_rejected(self, tmp_path, solid_cube):
        record(tmp_path, sample_events(10), digest=12345)
        meta, stream = read_recording(tmp_path)
        with pytest.raises(WrongAnatomyError):
            replay_to_grid(solid_cube, stream, meta.anatomy_digest)


class TestCompression:
    def test_smaller_than_naive_log(self, tmp_path):
        # redundant streams, as real sessions produce
        events = []
        for i in range(20000):
            t = i * 0.001
            events.append(Kinematics(t, (0.1 * i, 5.0, 5.0, 1, 0, 0, 0),
                                     (0, 0, 0, 1, 0, 0, 0)))
            if i % 10 == 0:
                events.append(ForceSample(t, (0.5, 0.0, 0.1)))
        record(tmp_path, events, batch_size=10000)
        assert recording_size(tmp_path) < naive_log_size(events) / 10

    def test_naive_log_widths(self):
        assert naive_log_size([VoxelRemoved(0, (0, 0, 0), 1, (0, 0, 0))]) == 28
        assert naive_log_size([ForceSample(0, (0, 0, 0))]) == 20
        assert naive_log_size([BurrChange(0, 1.0, "cutting")]) == 13
        assert naive_log_size([Kinematics(0, (0,) * 7, (0,) * 7)]) == 64
        assert naive_log_size([DepthFrame(0, 0)]) == 12


def test_hdf5_export(tmp_path):
    h5py = pytest.importorskip("h5py")
    events = sample_events(100)
    record(tmp_path / "rec", events)
    out = tmp_path / "rec.h5"
    from drillvox.recording import export_hdf5
    export_hdf5(tmp_path / "rec", out)
    with h5py.File(out) as f:
        assert "metadata" in f
        n_vox = len([e for e in events if isinstance(e, VoxelRemoved)])
        assert f["voxels_removed/time"].shape == (n_vox,)
        assert f["voxels_removed/index"].shape == (n_vox, 3)
        n_force = len([e for e in events if isinstance(e, ForceSample)])
        assert np.allclose(f["force_feedback/force"][:],
                           [e.force for e in events if isinstance(e, ForceSample)])
        assert f["force_feedback/time"].shape == (n_force,)
