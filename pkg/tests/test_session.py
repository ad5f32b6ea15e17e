import numpy as np
import pytest

from drillvox.drill import Burr, DrillInput
from drillvox.errors import ContractViolation, StateError, ValidationError
from drillvox.events import BurrChange, ForceSample, Kinematics, VoxelRemoved
from drillvox.session import (
    Keyframe,
    Session,
    SessionConfig,
    Trajectory,
    default_burr_id,
    load_trajectory,
    run_script,
    sample_trajectory,
)

from conftest import make_volume


def fast_config(**kw):
    """Small catalog with an aggressive burr so tests remove material quickly."""
    kw.setdefault("burrs", [Burr(1.0, "cutting", brr=5000.0),
                            Burr(1.0, "diamond", brr=800.0)])
    return SessionConfig(**kw)


class TestConfig:
    def test_rejects_zero_tick_rate(self):
        with pytest.raises(ContractViolation):
            SessionConfig(tick_rate_hz=0)

    def test_rejects_zero_batch(self):
        with pytest.raises(ContractViolation):
            SessionConfig(batch_size=0)

    def test_snapshot_is_json_safe(self):
        import json
        json.dumps(SessionConfig().snapshot())

    def test_default_burr_is_largest_cutting(self):
        cfg = SessionConfig()
        b = cfg.burrs[default_burr_id(cfg.burrs)]
        assert b.tip == "cutting"
        assert b.radius_mm == max(x.radius_mm for x in cfg.burrs)


class TestSession:
    def test_empty_volume_rejected(self):
        with pytest.raises(ContractViolation):
            Session(make_volume((4, 4, 4)))

    def test_time_is_tick_over_rate(self, solid_cube):
        s = Session(solid_cube, fast_config(tick_rate_hz=1000.0))
        for _ in range(10):
            s.step(DrillInput((100.0, 0, 0)))
        assert s.t == 10 / 1000.0
        assert s.tick_count == 10

    def test_no_time_drift_over_many_ticks(self, solid_cube):
        s = Session(solid_cube, fast_config(tick_rate_hz=1000.0))
        inp = DrillInput((100.0, 0, 0))
        for _ in range(3000):
            s.step(inp)
        assert s.t == 3000 / 1000.0   # exact, not accumulated

    def test_step_after_close_raises(self, solid_cube):
        s = Session(solid_cube, fast_config())
        s.close()
        with pytest.raises(StateError):
            s.step(DrillInput((0, 0, 0)))

    def test_double_close_raises(self, solid_cube):
        s = Session(solid_cube, fast_config())
        s.close()
        with pytest.raises(StateError):
            s.close()

    def test_summary_accounting(self, solid_cube):
        s = Session(solid_cube, fast_config())
        before = solid_cube.occupied_count()
        for n in range(50):
            s.step(DrillInput((2.0 + n * 0.2, 8.0, 8.0), pedal=1.0))
        summary = s.close()
        assert summary.steps == 50
        assert summary.removed_voxels == before - solid_cube.occupied_count()
        assert summary.removed_voxels > 0
        assert summary.max_force > 0
        assert summary.final_digest == s.digest()

    def test_events_emitted_in_order(self, solid_cube):
        events = []
        s = Session(solid_cube, fast_config(force_sample_hz=1000.0))
        s.listeners.append(events.append)
        s.step(DrillInput((8.0, 8.0, 8.0), pedal=1.0))
        kinds = [type(e) for e in events]
        assert kinds.count(ForceSample) == 1
        assert kinds.count(Kinematics) == 1
        assert VoxelRemoved in kinds
        # removals precede the tick's force and kinematics samples
        assert kinds.index(ForceSample) > max(
            i for i, k in enumerate(kinds) if k is VoxelRemoved)
        assert kinds[-1] is Kinematics

    def test_force_sample_decimation(self, solid_cube):
        events = []
        s = Session(solid_cube, fast_config(tick_rate_hz=1000.0,
                                            force_sample_hz=100.0))
        s.listeners.append(events.append)
        for _ in range(100):
            s.step(DrillInput((100.0, 0, 0)))
        forces = [e for e in events if isinstance(e, ForceSample)]
        kins = [e for e in events if isinstance(e, Kinematics)]
        assert len(forces) == 10      # every 10th tick
        assert len(kins) == 100       # every tick by default

    def test_burr_change_event(self, solid_cube):
        events = []
        s = Session(solid_cube, fast_config())
        s.listeners.append(events.append)
        s.step(DrillInput((100.0, 0, 0), burr_id=1))
        changes = [e for e in events if isinstance(e, BurrChange)]
        assert len(changes) == 1
        assert changes[0].tip == "diamond"
        assert s.burr_id == 1
        # steady state: no further change events
        s.step(DrillInput((100.0, 0, 0), burr_id=1))
        assert len([e for e in events if isinstance(e, BurrChange)]) == 1

    def test_unknown_burr_id(self, solid_cube):
        s = Session(solid_cube, fast_config())
        with pytest.raises(ContractViolation):
            s.step(DrillInput((0, 0, 0), burr_id=9))

    def test_sensitive_from_table(self, bone_and_nerve):
        s = Session(bone_and_nerve, fast_config())
        s.step(DrillInput((7.0, 7.0, 8.0), pedal=1.0))
        summary = s.close()
        assert summary.warning_count > 0


class TestTrajectory:
    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            Trajectory([])

    def test_first_keyframe_not_at_zero(self):
        with pytest.raises(ValidationError):
            Trajectory([Keyframe(1.0, (0, 0, 0))])

    def test_non_increasing_times(self):
        with pytest.raises(ValidationError):
            Trajectory([Keyframe(0.0, (0, 0, 0)), Keyframe(0.0, (1, 0, 0))])

    def test_unknown_mode(self):
        with pytest.raises(ValidationError):
            Trajectory([Keyframe(0.0, (0, 0, 0))], mode="cubic")

    def test_linear_position_interpolation(self):
        traj = Trajectory([Keyframe(0.0, (0, 0, 0), pedal=0.0),
                           Keyframe(2.0, (4, 0, 0), pedal=1.0)])
        inp = sample_trajectory(traj, 0.5, current_burr=0)
        assert inp.tip_position == pytest.approx((1.0, 0.0, 0.0))
        assert inp.pedal == pytest.approx(0.25)

    def test_hold_mode_steps(self):
        traj = Trajectory([Keyframe(0.0, (0, 0, 0), pedal=0.2),
                           Keyframe(1.0, (9, 9, 9), pedal=0.9)], mode="hold")
        inp = sample_trajectory(traj, 0.99, current_burr=0)
        assert inp.tip_position == (0.0, 0.0, 0.0)
        assert inp.pedal == 0.2

    def test_clamped_outside_range(self):
        traj = Trajectory([Keyframe(0.0, (0, 0, 0)), Keyframe(1.0, (2, 2, 2))])
        assert sample_trajectory(traj, 5.0, 0).tip_position == (2.0, 2.0, 2.0)

    def test_slerp_midpoint_is_unit(self):
        qa = (1.0, 0.0, 0.0, 0.0)
        qb = (0.0, 1.0, 0.0, 0.0)       # 180 deg about x as a quat flip
        traj = Trajectory([Keyframe(0.0, (0, 0, 0), quat=qa),
                           Keyframe(1.0, (0, 0, 0), quat=qb)])
        inp = sample_trajectory(traj, 0.5, 0)
        assert np.linalg.norm(inp.tip_orientation) == pytest.approx(1.0)

    def test_burr_switch_from_keyframe(self):
        traj = Trajectory([Keyframe(0.0, (0, 0, 0), burr_id=1),
                           Keyframe(1.0, (1, 0, 0))])
        assert sample_trajectory(traj, 0.5, current_burr=0).burr_id == 1

    def test_load_from_json_bytes(self):
        doc = b'{"mode": "hold", "keyframes": [{"t": 0, "pos": [1, 2, 3], "pedal": 0.5}]}'
        traj = load_trajectory(doc)
        assert traj.mode == "hold"
        assert traj.keyframes[0].pos == (1.0, 2.0, 3.0)
        assert traj.keyframes[0].pedal == 0.5

    def test_load_from_path(self, tmp_path):
        p = tmp_path / "traj.json"
        p.write_text('{"keyframes": [{"t": 0, "pos": [0, 0, 0]}, '
                     '{"t": 1, "pos": [1, 1, 1], "burr": 2}]}')
        traj = load_trajectory(p)
        assert traj.duration == 1.0
        assert traj.keyframes[1].burr_id == 2

    def test_load_malformed(self):
        with pytest.raises(ValidationError):
            load_trajectory({"keyframes": [{"pos": [0, 0, 0]}]})

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ValidationError):
            load_trajectory(tmp_path / "nope.json")


class TestRunScript:
    def test_tick_count_matches_duration(self, solid_cube):
        s = Session(solid_cube, fast_config(tick_rate_hz=100.0))
        traj = Trajectory([Keyframe(0.0, (100.0, 0, 0)),
                           Keyframe(0.5, (100.0, 0, 0))])
        summary = run_script(s, traj)
        assert summary.steps == 50

    def test_scripted_runs_identical(self):
        def run():
            vol = make_volume((12, 12, 12),
                              labels=np.ones((12, 12, 12), dtype=np.uint16))
            s = Session(vol, fast_config(tick_rate_hz=200.0))
            traj = Trajectory([
                Keyframe(0.0, (0.0, 6.0, 6.0), pedal=1.0),
                Keyframe(1.0, (11.0, 6.0, 6.0), pedal=1.0),
            ])
            return run_script(s, traj)

        a, b = run(), run()
        assert a.final_digest == b.final_digest
        assert a.removed_voxels == b.removed_voxels
        assert a.max_force == b.max_force
