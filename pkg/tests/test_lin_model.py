"""Tests for the hover linearization"""

import numpy as np
import pytest
from scipy.linalg import expm

from src.attitude_control import AttitudeGains
from src.exceptions import FormatVersionMismatch, GimbalLock
from src.lin_model import (
    NU,
    NX,
    AttitudeLoopParams,
    BoxSet,
    DiscreteLtiModel,
    EulerZyx,
    build_continuous,
    default_constraints,
    discretize_zoh,
    disturbance_set,
    euler_to_rotation,
    fit_attitude_loop,
    hover_model,
    lin_state,
    perturbation_step,
    read_model,
    rotation_to_euler,
    write_model,
    yaw_frame_transform,
)
from src.rigid_body_sim import PhysicalParams, RigidBodyState


class TestEulerAngles:
    """Test the z-y-x conversions"""

    def test_zero_angles(self):
        """(0, 0, 0) gives the identity"""
        np.testing.assert_array_equal(euler_to_rotation(EulerZyx()), np.eye(3))

    def test_quarter_yaw(self):
        """psi = pi/2 gives Rot_z(90 deg)"""
        R = euler_to_rotation(EulerZyx(psi=np.pi / 2))
        np.testing.assert_allclose(R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)

    def test_round_trip(self):
        """rotation_to_euler inverts euler_to_rotation away from gimbal lock"""
        rng = np.random.default_rng(4)
        for _ in range(50):
            e = EulerZyx(rng.uniform(-3.0, 3.0), rng.uniform(-1.2, 1.2), rng.uniform(-3.0, 3.0))
            back = rotation_to_euler(euler_to_rotation(e))
            assert back.psi == pytest.approx(e.psi, abs=1e-12)
            assert back.theta == pytest.approx(e.theta, abs=1e-12)
            assert back.phi == pytest.approx(e.phi, abs=1e-12)

    def test_gimbal_lock(self):
        """Pitch of 90 deg is rejected"""
        with pytest.raises(GimbalLock):
            rotation_to_euler(euler_to_rotation(EulerZyx(theta=np.pi / 2)))


class TestYawFrame:
    """Test the (roll, pitch) yaw rotation"""

    def test_identity_at_zero_yaw(self):
        """psi = 0 is the identity"""
        np.testing.assert_array_equal(yaw_frame_transform([0.3, -0.1], 0.0), [0.3, -0.1])

    def test_quarter_turn(self):
        """psi = pi/2 maps (1, 0) to (0, -1)"""
        np.testing.assert_allclose(yaw_frame_transform([1.0, 0.0], np.pi / 2), [0.0, -1.0], atol=1e-15)

    def test_inverse(self):
        """The inverse transform undoes the forward one"""
        v = np.array([0.2, -0.4])
        for psi in (-2.0, 0.3, 1.7):
            np.testing.assert_allclose(yaw_frame_transform(yaw_frame_transform(v, psi), psi, inverse=True), v,
                                       atol=1e-15)

    def test_lin_state_layout(self):
        """The linear state stacks p, v, inertial tilt and the command integrators"""
        state = RigidBodyState(np.array([1.0, 2.0, 3.0]), np.array([0.1, 0.2, 0.3]),
                               euler_to_rotation(EulerZyx(phi=0.05, theta=-0.02)))
        x = lin_state(state, np.array([0.01, 0.02]))
        assert x.shape == (NX,)
        np.testing.assert_allclose(x, [1, 2, 3, 0.1, 0.2, 0.3, 0.05, -0.02, 0.01, 0.02], atol=1e-12)


class TestContinuousModel:
    """Test the sparsity pattern of Ac and Bc"""

    def test_structure(self):
        """Position is integrated, gravity couples tilt to velocity"""
        params = PhysicalParams()
        Ac, Bc = build_continuous(params, AttitudeLoopParams(k_theta=1.0, tau_theta=0.1))
        assert Ac.shape == (NX, NX) and Bc.shape == (NX, NU)
        np.testing.assert_array_equal(Ac[:, 0], 0.0)
        np.testing.assert_array_equal(Ac[0:3, 3:6], np.eye(3))
        assert Ac[3, 7] == params.g
        assert Ac[4, 6] == -params.g
        assert Ac[7, 7] == pytest.approx(-10.0)
        assert Ac[7, 9] == pytest.approx(10.0)
        assert Bc[5, 2] == 1.0
        np.testing.assert_array_equal(Bc[3:5, :], 0.0)
        assert Bc[8, 0] == 1.0 and Bc[9, 1] == 1.0

    def test_invalid_attitude_loop(self):
        """Time constants must be positive"""
        with pytest.raises(ValueError):
            AttitudeLoopParams(tau_phi=0.0)


class TestDiscretization:
    """Test the zero-order-hold discretization"""

    def test_zero_dynamics(self):
        """Ac = 0 gives A = I, B = Bc Tc"""
        Bc = np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 1.0]])
        A, B = discretize_zoh(np.zeros((3, 3)), Bc, 0.1)
        np.testing.assert_allclose(A, np.eye(3), atol=1e-15)
        np.testing.assert_allclose(B, Bc * 0.1, atol=1e-15)

    def test_double_integrator(self):
        """A = [[1, T], [0, 1]], B = [T^2/2, T]"""
        T = 0.02
        A, B = discretize_zoh(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]]), T)
        np.testing.assert_allclose(A, [[1.0, T], [0.0, 1.0]], atol=1e-15)
        np.testing.assert_allclose(B, [[T * T / 2], [T]], atol=1e-15)

    def test_attitude_block_eigenvalues(self):
        """The attitude block of A has eigenvalues exp(lambda(Ac) Tc)"""
        Tc = 0.02
        Ac, Bc = build_continuous(PhysicalParams(), AttitudeLoopParams())
        A, _ = discretize_zoh(Ac, Bc, Tc)
        expected = np.sort(np.exp(np.linalg.eigvals(Ac[6:, 6:]) * Tc).real)
        np.testing.assert_allclose(np.sort(np.linalg.eigvals(A[6:, 6:]).real), expected, atol=1e-9)
        np.testing.assert_allclose(A[6:, 6:], expm(Ac[6:, 6:] * Tc), atol=1e-12)

    def test_half_step_composition(self):
        """Two half steps compose to one full step"""
        Tc = 0.02
        Ac, Bc = build_continuous(PhysicalParams(), AttitudeLoopParams())
        A, B = discretize_zoh(Ac, Bc, Tc)
        Ah, Bh = discretize_zoh(Ac, Bc, Tc / 2)
        np.testing.assert_allclose(Ah @ Ah, A, atol=1e-9)
        np.testing.assert_allclose(Ah @ Bh + Bh, B, atol=1e-9)

    def test_rejects_non_positive_period(self):
        """Tc <= 0 is rejected"""
        with pytest.raises(ValueError):
            discretize_zoh(np.zeros((2, 2)), np.zeros((2, 1)), 0.0)


class TestDisturbanceAndConstraints:
    """Test the disturbance box and the constraint boxes"""

    def test_zero_force_bound(self):
        """f_bar = 0 gives W = {0}"""
        W = disturbance_set(0.0, PhysicalParams(), 0.02)
        np.testing.assert_array_equal(W.lo, 0.0)
        np.testing.assert_array_equal(W.hi, 0.0)

    def test_fifteen_percent_of_weight(self):
        """0.15 m g over 20 ms bounds each velocity by 0.0294 m/s"""
        params = PhysicalParams()
        W = disturbance_set(0.15 * params.weight, params, 0.02)
        np.testing.assert_allclose(W.hi[3:6], 0.15 * 9.81 * 0.02, rtol=1e-12)
        np.testing.assert_array_equal(W.hi[:3], 0.0)
        np.testing.assert_array_equal(W.hi[6:], 0.0)
        np.testing.assert_array_equal(W.lo, -W.hi)

    def test_linear_in_force(self):
        """Doubling the force doubles the box"""
        params = PhysicalParams()
        W1 = disturbance_set(1e-3, params, 0.02)
        W2 = disturbance_set(2e-3, params, 0.02)
        np.testing.assert_allclose(W2.hi, 2 * W1.hi, rtol=1e-15)

    def test_default_constraints(self):
        """Tilt limits cover the attitude and command states"""
        X, U = default_constraints(g=9.81, max_tilt_deg=25.0)
        np.testing.assert_allclose(X.hi[6:], np.deg2rad(25.0))
        np.testing.assert_allclose(U.hi, [10.0, 10.0, 0.8 * 9.81])
        assert X.contains(np.zeros(NX)) and U.contains(np.zeros(NU))

    def test_box_set(self):
        """Box helpers behave on a simple box"""
        box = BoxSet([-1.0, -2.0], [1.0, 0.5])
        np.testing.assert_array_equal(box.half_width, [1.0, 2.0])
        assert box.contains([0.5, 0.5]) and not box.contains([0.5, 0.6])
        assert BoxSet([1.0], [0.0]).is_empty
        with pytest.raises(ValueError):
            BoxSet([0.0, 0.0], [1.0])


class TestModelFile:
    """Test the model text format"""

    def test_round_trip(self, tmp_path):
        """write_model then read_model restores the model exactly"""
        model = hover_model(PhysicalParams(), AttitudeLoopParams(), 0.02, 0.15)
        path = tmp_path / "model.txt"
        write_model(model, path)
        back = read_model(path)
        np.testing.assert_array_equal(back.A, model.A)
        np.testing.assert_array_equal(back.B, model.B)
        np.testing.assert_array_equal(back.W.hi, model.W.hi)
        assert back.Tc == model.Tc

    def test_wrong_header(self, tmp_path):
        """Unknown format versions are rejected"""
        path = tmp_path / "model.txt"
        path.write_text("#linmodel=2\n1 1 0.1\n1\n1\n0\n0\n")
        with pytest.raises(FormatVersionMismatch):
            read_model(path)

    def test_truncated_file(self, tmp_path):
        """Missing rows are rejected"""
        model = DiscreteLtiModel(np.eye(2), np.ones((2, 1)), 0.1, BoxSet.zeros(2))
        path = tmp_path / "model.txt"
        write_model(model, path)
        path.write_text("\n".join(path.read_text().splitlines()[:-1]) + "\n")
        with pytest.raises(FormatVersionMismatch):
            read_model(path)


class TestLinearization:
    """Compare the linear model against the nonlinear cascade"""

    def test_translational_perturbation(self):
        """Position, velocity and thrust perturbations propagate identically"""
        params = PhysicalParams(c_Dv=0.0, c_Dw=0.0)
        model = hover_model(params, AttitudeLoopParams(), 0.02, 0.0)
        rng = np.random.default_rng(5)
        for delta in (1e-2, 1e-3):
            x0 = np.zeros(NX)
            x0[:6] = delta * rng.normal(size=6)
            u = np.array([0.0, 0.0, delta])
            x_lin, x_nl = perturbation_step(params, AttitudeGains(), model, x0, u)
            assert np.linalg.norm(x_lin - x_nl) <= 1e-9

    def test_fitted_attitude_loop(self):
        """The fitted first-order loop has unit gain and a short time constant"""
        att = fit_attitude_loop(PhysicalParams(), AttitudeGains())
        assert att.k_phi == pytest.approx(1.0, abs=0.1)
        assert att.k_theta == pytest.approx(1.0, abs=0.1)
        assert 0.005 < att.tau_phi < 0.2
        assert 0.005 < att.tau_theta < 0.2
