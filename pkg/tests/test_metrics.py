import json

import numpy as np
import pytest

from drillvox.errors import InsufficientDataError
from drillvox.events import ForceSample, Kinematics, VoxelRemoved
from drillvox.metrics import (
    KinematicsSeries,
    export_removed_ply,
    force_metrics,
    kinematics_metrics,
    removal_metrics,
    render_json,
    render_table,
    report_from_events,
)

from conftest import make_table

IDENT = (1.0, 0.0, 0.0, 0.0)
CAM = (0.0,) * 3 + IDENT


def kin_events(ts, positions):
    return [Kinematics(float(t), tuple(p) + IDENT, CAM)
            for t, p in zip(ts, positions)]


class TestKinematics:
    def test_constant_velocity(self):
        # x = 3t mm along +x: speed exactly 3, accel and jerk ~0
        dt = 0.01
        t = np.arange(0, 1.0, dt)
        pos = np.column_stack([3.0 * t, np.zeros_like(t), np.zeros_like(t)])
        series = KinematicsSeries(0.0, dt, pos)
        stats = kinematics_metrics(series)
        assert stats.mean_speed == pytest.approx(3.0, abs=1e-9)
        assert stats.max_speed == pytest.approx(3.0, abs=1e-9)
        assert stats.max_accel <= 1e-9
        assert stats.max_jerk <= 1e-9
        assert stats.path_length_mm == pytest.approx(3.0 * (len(t) - 1) * dt)

    def test_sinusoid_derivative_magnitudes(self):
        # x = A sin(w t): interior |v| peaks at A*w, |a| at A*w^2, |j| at A*w^3
        A, w = 2.0, 2 * np.pi
        dt = 1e-4
        t = np.arange(0, 1.0 + dt / 2, dt)
        pos = np.column_stack([A * np.sin(w * t),
                               np.zeros_like(t), np.zeros_like(t)])
        stats = kinematics_metrics(KinematicsSeries(0.0, dt, pos))
        assert stats.max_speed == pytest.approx(A * w, rel=1e-3)
        assert stats.max_accel == pytest.approx(A * w ** 2, rel=1e-3)
        assert stats.max_jerk == pytest.approx(A * w ** 3, rel=1e-3)

    def test_too_few_samples(self):
        with pytest.raises(InsufficientDataError):
            kinematics_metrics(KinematicsSeries(0.0, 0.1, np.zeros((1, 3))))

    def test_jerk_needs_four(self):
        with pytest.raises(InsufficientDataError):
            kinematics_metrics(KinematicsSeries(0.0, 0.1, np.zeros((3, 3))))

    def test_from_events_resamples_irregular(self):
        # irregular timestamps on a linear path still yield exact positions
        ts = [0.0, 0.013, 0.021, 0.05, 0.08, 0.1]
        events = kin_events(ts, [(10 * t, 0, 0) for t in ts])
        series = KinematicsSeries.from_events(events, dt=0.01)
        assert np.allclose(series.positions[:, 0],
                           10 * (series.t0 + 0.01 * np.arange(len(series.positions))),
                           atol=1e-5)

    def test_from_events_requires_two(self):
        with pytest.raises(InsufficientDataError):
            KinematicsSeries.from_events(kin_events([0.0], [(0, 0, 0)]), 0.01)


class TestForce:
    def test_no_samples(self):
        assert force_metrics([]) is None

    def test_mean_and_max(self):
        events = [ForceSample(0.0, (3.0, 4.0, 0.0)),    # |F| = 5
                  ForceSample(0.1, (1.0, 0.0, 0.0))]    # |F| = 1
        assert force_metrics(events) == pytest.approx((3.0, 5.0))


class TestRemoval:
    def test_counts_and_volumes(self):
        table = make_table(sensitive_label=2)
        events = [VoxelRemoved(0.0, (0, 0, 0), 1, (0.8, 0.8, 0.7)),
                  VoxelRemoved(0.1, (1, 0, 0), 1, (0.8, 0.8, 0.7)),
                  VoxelRemoved(0.2, (2, 0, 0), 2, (1.0, 1.0, 0.0))]
        stats = removal_metrics(events, table, {2}, voxel_volume_mm3=0.5)
        assert stats.counts == {1: 2, 2: 1}
        assert stats.volumes_mm3 == {1: 1.0, 2: 0.5}
        assert stats.total == 3
        assert stats.unintended is True
        assert stats.sensitive_counts == {2: 1}

    def test_no_sensitive_touch(self):
        table = make_table()
        events = [VoxelRemoved(0.0, (0, 0, 0), 1, (0.8, 0.8, 0.7))]
        stats = removal_metrics(events, table, set())
        assert stats.unintended is False

    def test_unknown_labels_reported(self):
        stats = removal_metrics([VoxelRemoved(0.0, (0, 0, 0), 9, (0, 0, 0))],
                                make_table(), set())
        assert stats.unknown_labels == [9]


class TestReport:
    def test_empty_recording_rejected(self):
        with pytest.raises(InsufficientDataError):
            report_from_events([])

    def test_report_without_kinematics(self):
        rep = report_from_events([ForceSample(0.0, (1, 0, 0)),
                                  ForceSample(0.5, (2, 0, 0))])
        assert rep.kinematics is None
        assert rep.force_max == pytest.approx(2.0)
        assert rep.duration_s == pytest.approx(0.5)

    def test_json_rendering_is_stable(self):
        events = kin_events(np.arange(0, 0.1, 0.01),
                            [(t, 0, 0) for t in np.arange(0, 0.1, 0.01)])
        a = render_json(report_from_events(events))
        b = render_json(report_from_events(events))
        assert a == b
        doc = json.loads(a)
        assert set(doc) == {"participant_id", "duration_s", "kinematics",
                            "force", "removal"}

    def test_table_rendering(self):
        events = [ForceSample(0.0, (1, 0, 0)),
                  VoxelRemoved(0.1, (0, 0, 0), 1, (0.8, 0.8, 0.7))]
        text = render_table(report_from_events(events, table=make_table()))
        assert "voxels removed" in text
        assert "force mean/max" in text


class TestPlyExport:
    def test_header_and_rows(self, tmp_path):
        stats = removal_metrics(
            [VoxelRemoved(0.0, (1, 2, 3), 1, (1.0, 0.0, 0.0))],
            make_table(), set())
        out = tmp_path / "removed.ply"
        assert export_removed_ply(stats, out) == 1
        lines = out.read_text().splitlines()
        assert lines[0] == "ply"
        assert "element vertex 1" in lines
        assert lines[-1] == "1 2 3 255 0 0"
