"""Tests for flight tasks, reference windows and disturbance profiles"""

import numpy as np
import pytest

from src.rigid_body_sim import PhysicalParams
from src.trajectories import (
    TASKS,
    DisturbanceProfile,
    DisturbanceSpec,
    TrajectoryTask,
    make_reference,
    profile_for_run,
    task_by_name,
)


class TestTasks:
    """Test the reference geometry"""

    def test_hover_is_origin(self):
        """Hover references the origin at rest"""
        p, v = TASKS["hover"].desired(1.0)
        np.testing.assert_array_equal(p, np.zeros(3))
        np.testing.assert_array_equal(v, np.zeros(3))

    @pytest.mark.parametrize("t", [0.0, 0.25, 0.5])
    def test_ramp_takeoff_hold(self, t):
        """The ramp tasks hover at the origin for the first half second"""
        for name in ("t1", "t2"):
            p, v = TASKS[name].desired(t)
            np.testing.assert_array_equal(p, np.zeros(3))
            assert TASKS[name].ramp_start == 0.5

    def test_ramp_midpoint(self):
        """Half-way through the ramp each axis is at 1.5 cm"""
        p, v = TASKS["t1"].desired(1.0)
        np.testing.assert_allclose(p, np.full(3, 0.015))
        np.testing.assert_allclose(v, np.full(3, 0.03))

    def test_ramp_holds_after_end(self):
        """After the ramp the target is held"""
        p, v = TASKS["t1"].desired(2.5)
        np.testing.assert_allclose(p, np.full(3, 0.03))
        np.testing.assert_array_equal(v, np.zeros(3))

    def test_circle_radius(self):
        """Every circle sample lies on the circle"""
        task = TASKS["t3"]
        for t in np.linspace(0.0, task.duration, 200):
            p, _ = task.desired(t)
            assert np.linalg.norm(p - task.circle_center) == pytest.approx(task.circle_radius, abs=1e-12)
            assert p[1] == 0.0

    def test_circle_starts_at_origin(self):
        """The circle starts at the origin at rest"""
        p, v = TASKS["t3"].desired(0.0)
        np.testing.assert_allclose(p, np.zeros(3), atol=1e-15)
        np.testing.assert_array_equal(v, np.zeros(3))

    def test_circle_speed(self):
        """The desired speed during the lap equals the circle speed"""
        task = TASKS["t3"]
        _, v = task.desired(task.takeoff + 1.0)
        assert np.linalg.norm(v) == pytest.approx(task.circle_speed)

    def test_unknown_task(self):
        """Unknown names and kinds are rejected"""
        with pytest.raises(ValueError):
            task_by_name("t9")
        with pytest.raises(ValueError):
            TrajectoryTask("figure_eight", duration=1.0)

    def test_task_lookup_is_case_insensitive(self):
        """T1 and t1 name the same task"""
        assert task_by_name("T1") is TASKS["t1"]


class TestReferenceStream:
    """Test sliding reference windows"""

    def test_window_shape(self):
        """Windows have N + 1 rows of linear states"""
        stream = make_reference(TASKS["t1"], 0.02, 50)
        window = stream.window(0)
        assert window.states.shape == (51, 10)
        assert window.N == 50
        assert stream.n_steps == 150

    def test_window_rows_follow_time(self):
        """Row i is the reference at t + i Tc"""
        stream = make_reference(TASKS["t1"], 0.02, 10)
        window = stream.window(5)
        np.testing.assert_allclose(window.states[3, :3], TASKS["t1"].desired(8 * 0.02)[0])
        np.testing.assert_array_equal(window.states[:, 6:], 0.0)

    def test_hold_past_end(self):
        """Windows past the task end repeat the final reference"""
        stream = make_reference(TASKS["t1"], 0.02, 10)
        window = stream.window(stream.n_steps)
        np.testing.assert_allclose(window.states[-1], window.states[0])

    def test_unknown_end_policy(self):
        """Only the hold policy is supported"""
        with pytest.raises(ValueError):
            make_reference(TASKS["t1"], 0.02, 10, horizon_end_policy="extrapolate")


class TestDisturbanceProfile:
    """Test reproducible disturbance signals"""

    def test_none_is_zero(self):
        """No disturbance gives zero signals of the right length"""
        profile = DisturbanceProfile.build(DisturbanceSpec(), 1.0, 5e-4, PhysicalParams())
        assert profile.n_steps == 2001
        assert not profile.f_ext.any() and not profile.tau_ext.any()

    def test_constant_force(self):
        """A sustained force has the requested magnitude"""
        params = PhysicalParams()
        profile = DisturbanceProfile.build(DisturbanceSpec.sustained(0.15, (0.0, 1.0, 0.0)), 0.1, 5e-4, params)
        np.testing.assert_allclose(profile.f_ext[0], [0.0, 0.15 * params.weight, 0.0])
        np.testing.assert_array_equal(profile.f_ext[-1], profile.f_ext[0])

    def test_pulses(self):
        """Tether taps contain force and torque pulses of the specified size"""
        params = PhysicalParams()
        spec = DisturbanceSpec.tether_taps()
        profile = DisturbanceProfile.build(spec, 6.0, 5e-4, params, seed=3)
        magnitudes = np.linalg.norm(profile.f_ext, axis=1)
        active = magnitudes > 0
        assert active.sum() >= int(round(spec.pulse_width / 5e-4))
        assert magnitudes.max() <= spec.n_pulses * 0.3 * params.weight + 1e-15
        np.testing.assert_array_equal(profile.f_ext[:, 2], 0.0)
        np.testing.assert_array_equal(profile.tau_ext[:, 2], 0.0)
        assert not profile.f_ext[: int(1.0 / 5e-4)].any()

    def test_digest_reproducible(self):
        """The same seed gives the same digest, another seed a different one"""
        params = PhysicalParams()
        spec = DisturbanceSpec.tether_taps()
        a = DisturbanceProfile.build(spec, 6.0, 5e-4, params, seed=1).digest()
        b = DisturbanceProfile.build(spec, 6.0, 5e-4, params, seed=1).digest()
        c = DisturbanceProfile.build(spec, 6.0, 5e-4, params, seed=2).digest()
        assert a == b
        assert a != c

    def test_csv_round_trip(self, tmp_path):
        """Profiles survive a CSV round trip with the same digest"""
        profile = DisturbanceProfile.build(DisturbanceSpec.tether_taps(), 6.0, 5e-4, PhysicalParams(), seed=4)
        path = tmp_path / "profile.csv"
        digest = profile.write(path)
        back = DisturbanceProfile.read(path)
        np.testing.assert_array_equal(back.f_ext, profile.f_ext)
        np.testing.assert_array_equal(back.tau_ext, profile.tau_ext)
        assert digest == profile.digest()

    def test_profile_covers_run(self):
        """Run profiles extend one second past the task"""
        profile = profile_for_run(TASKS["hover"], PhysicalParams(), 5e-4, seed=0)
        assert profile.n_steps * 5e-4 > TASKS["hover"].duration + 0.99

    def test_invalid_spec(self):
        """Unknown kinds and negative magnitudes are rejected"""
        with pytest.raises(ValueError):
            DisturbanceSpec(kind="gusts")
        with pytest.raises(ValueError):
            DisturbanceSpec(kind="constant", force_frac=-0.1)
