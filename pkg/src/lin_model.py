"""Hover linearization - Euler frames, 10-state model, ZOH discretization, disturbance box"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from scipy.linalg import expm
from scipy.optimize import curve_fit

from src.attitude_control import AttitudeGains, AttitudeSetpoint, control_torque
from src.exceptions import FormatVersionMismatch, GimbalLock
from src.rigid_body_sim import PhysicalParams, RigidBodyState, Wrench, step_dynamics

logger = logging.getLogger(__name__)

STATE_NAMES = ("px", "py", "pz", "vx", "vy", "vz", "phi_I", "theta_I", "dphi_cmd_I", "dtheta_cmd_I")
INPUT_NAMES = ("phi_rate_cmd", "theta_rate_cmd", "df_cmd")
NX = len(STATE_NAMES)
NU = len(INPUT_NAMES)

IDX_P = slice(0, 3)
IDX_V = slice(3, 6)
IDX_PHI, IDX_THETA, IDX_DPHI_CMD, IDX_DTHETA_CMD = 6, 7, 8, 9

MODEL_HEADER = "#linmodel=1"


@dataclass(frozen=True)
class EulerZyx:
    """Intrinsic z-y-x angles: R = Rz(psi) Ry(theta) Rx(phi)"""

    psi: float = 0.0
    theta: float = 0.0
    phi: float = 0.0


@dataclass(frozen=True)
class AttitudeLoopParams:
    """First-order closed-loop attitude response: x_dot = (k x_cmd - x) / tau"""

    k_phi: float = 1.0
    k_theta: float = 1.0
    tau_phi: float = 0.04
    tau_theta: float = 0.04

    def __post_init__(self):
        for name in ("k_phi", "k_theta", "tau_phi", "tau_theta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class BoxSet:
    """Axis-aligned box {x : lo <= x <= hi}; lo > hi anywhere marks it empty"""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float)).copy()
        if lo.shape != hi.shape:
            raise ValueError(f"Box bounds differ in shape: {lo.shape} vs {hi.shape}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def symmetric(cls, half_width) -> "BoxSet":
        h = np.abs(np.atleast_1d(np.asarray(half_width, dtype=float)))
        return cls(-h, h)

    @classmethod
    def zeros(cls, n: int) -> "BoxSet":
        return cls(np.zeros(n), np.zeros(n))

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def is_empty(self) -> bool:
        return bool(np.any(self.lo > self.hi))

    @property
    def half_width(self) -> np.ndarray:
        """Largest absolute coordinate per dimension (the symmetric hull)"""
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def scaled(self, factor: float) -> "BoxSet":
        return BoxSet(self.lo * factor, self.hi * factor)


@dataclass(frozen=True)
class DiscreteLtiModel:
    """x+ = A x + B u + w, w in W, sampled at Tc"""

    A: np.ndarray
    B: np.ndarray
    Tc: float
    W: BoxSet

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ValueError(f"Inconsistent model shapes A{A.shape}, B{B.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("Model matrices must be finite")
        if self.Tc <= 0:
            raise ValueError(f"Sampling period must be positive, got {self.Tc}")
        if self.W.dim != A.shape[0] or not self.W.contains(np.zeros(A.shape[0])):
            raise ValueError("Disturbance set must match the state dimension and contain the origin")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.B.shape[1]


def _rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rotation(e: EulerZyx) -> np.ndarray:
    return _rot_z(e.psi) @ _rot_y(e.theta) @ _rot_x(e.phi)


def rotation_to_euler(R: np.ndarray) -> EulerZyx:
    """
    Recover z-y-x angles from a rotation matrix

    Raises:
        GimbalLock: If |R[2, 0]| >= 1 - 1e-9 (pitch at +-90 deg)
    """
    if abs(R[2, 0]) >= 1.0 - 1e-9:
        raise GimbalLock(f"Pitch at gimbal lock (R[2,0] = {R[2, 0]:.12f})")
    return EulerZyx(
        psi=float(np.arctan2(R[1, 0], R[0, 0])),
        theta=float(-np.arcsin(R[2, 0])),
        phi=float(np.arctan2(R[2, 1], R[2, 2])),
    )


def yaw_frame_transform(phi_theta: np.ndarray, psi: float, inverse: bool = False) -> np.ndarray:
    """Rotate a (roll, pitch) pair between the yaw-aligned inertial frame and the body frame"""
    c, s = np.cos(psi), np.sin(psi)
    R_BI = np.array([[c, s], [-s, c]])
    return (R_BI.T if inverse else R_BI) @ np.asarray(phi_theta, dtype=float)


def lin_state(state: RigidBodyState, cmd_I: np.ndarray) -> np.ndarray:
    """Assemble the 10-vector linear state from the full state and the commanded-attitude integrators"""
    e = rotation_to_euler(state.R)
    phi_I, theta_I = yaw_frame_transform([e.phi, e.theta], e.psi, inverse=True)
    return np.concatenate([state.p_W, state.v_W, [phi_I, theta_I], np.asarray(cmd_I, dtype=float)])


def build_continuous(params: PhysicalParams, att: AttitudeLoopParams) -> Tuple[np.ndarray, np.ndarray]:
    """Continuous hover model (Ac, Bc) in the fixed state/input ordering"""
    Ac = np.zeros((NX, NX))
    Bc = np.zeros((NX, NU))
    Ac[IDX_P, IDX_V] = np.eye(3)
    Ac[3, IDX_THETA] = params.g
    Ac[4, IDX_PHI] = -params.g
    Bc[5, 2] = 1.0
    Ac[IDX_PHI, IDX_PHI] = -1.0 / att.tau_phi
    Ac[IDX_PHI, IDX_DPHI_CMD] = att.k_phi / att.tau_phi
    Ac[IDX_THETA, IDX_THETA] = -1.0 / att.tau_theta
    Ac[IDX_THETA, IDX_DTHETA_CMD] = att.k_theta / att.tau_theta
    Bc[IDX_DPHI_CMD, 0] = 1.0
    Bc[IDX_DTHETA_CMD, 1] = 1.0
    return Ac, Bc


def discretize_zoh(Ac: np.ndarray, Bc: np.ndarray, Tc: float) -> Tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization via the augmented matrix exponential"""
    if Tc <= 0:
        raise ValueError(f"Sampling period must be positive, got {Tc}")
    Ac = np.atleast_2d(np.asarray(Ac, dtype=float))
    Bc = np.atleast_2d(np.asarray(Bc, dtype=float))
    n, m = Bc.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = Ac
    M[:n, n:] = Bc
    E = expm(M * Tc)
    return E[:n, :n], E[:n, n:]


def disturbance_set(f_ext_bar: float, params: PhysicalParams, Tc: float) -> BoxSet:
    """Per-step velocity increment box caused by |f_ext| <= f_ext_bar on each axis"""
    if f_ext_bar < 0:
        raise ValueError(f"Force bound must be non-negative, got {f_ext_bar}")
    hi = np.zeros(NX)
    hi[IDX_V] = f_ext_bar / params.m * Tc
    return BoxSet(-hi, hi)


def default_constraints(
    g: float = 9.81,
    max_tilt_deg: float = 25.0,
    dfcmd_frac: float = 0.8,
    max_rate: float = 10.0,
    max_vel: float = 2.0,
    max_pos: float = 1.0,
) -> Tuple[BoxSet, BoxSet]:
    """State box X and input box U around hover"""
    tilt = np.deg2rad(max_tilt_deg)
    x_hi = np.array([max_pos] * 3 + [max_vel] * 3 + [tilt] * 4)
    u_hi = np.array([max_rate, max_rate, dfcmd_frac * g])
    return BoxSet.symmetric(x_hi), BoxSet.symmetric(u_hi)


def hover_model(params: PhysicalParams, att: AttitudeLoopParams, Tc: float, fext_frac: float) -> DiscreteLtiModel:
    Ac, Bc = build_continuous(params, att)
    A, B = discretize_zoh(Ac, Bc, Tc)
    W = disturbance_set(fext_frac * params.weight, params, Tc)
    logger.info(f"Hover model discretized at Tc={Tc} s, |w_v| <= {W.hi[3]:.4g} m/s per step")
    return DiscreteLtiModel(A, B, Tc, W)


def _first_order(t, k, tau):
    return k * (1.0 - np.exp(-t / tau))


def _step_response(params: PhysicalParams, gains: AttitudeGains, axis: int, step: float,
                   Ts: float, n_steps: int) -> np.ndarray:
    """Simulate the inner loop for a roll (axis 0) or pitch (axis 1) step; return the angle trace"""
    e_cmd = EulerZyx(phi=step) if axis == 0 else EulerZyx(theta=step)
    sp = AttitudeSetpoint(R_d=euler_to_rotation(e_cmd))
    state = RigidBodyState()
    trace = np.empty(n_steps + 1)
    trace[0] = 0.0
    for k in range(n_steps):
        tau = control_torque(state.R, state.w_B, sp, np.zeros(3), gains, params.J)
        tau[2] = 0.0
        e = rotation_to_euler(state.R)
        f = params.weight / max(np.cos(e.phi) * np.cos(e.theta), 0.5)
        state = step_dynamics(state, Wrench(f, tau), np.zeros(3), np.zeros(3), params, Ts)
        e = rotation_to_euler(state.R)
        trace[k + 1] = e.phi if axis == 0 else e.theta
    return trace


def fit_attitude_loop(
    params: PhysicalParams,
    gains: AttitudeGains,
    Ts: float = 5e-4,
    step_deg: float = 5.0,
    duration: float = 0.4,
) -> AttitudeLoopParams:
    """
    Fit the first-order attitude model to simulated inner-loop step responses

    Args:
        params: Physical parameters
        gains: Attitude controller gains
        Ts: Inner-loop step [s]
        step_deg: Step amplitude [deg]
        duration: Simulated response length [s]

    Returns:
        Fitted AttitudeLoopParams (least squares on k (1 - exp(-t / tau)))
    """
    n_steps = int(round(duration / Ts))
    t = np.arange(n_steps + 1) * Ts
    step = np.deg2rad(step_deg)
    fitted: List[float] = []
    for axis in (0, 1):
        trace = _step_response(params, gains, axis, step, Ts, n_steps) / step
        (k, tau), _ = curve_fit(_first_order, t, trace, p0=(1.0, 0.05), bounds=([1e-6, 1e-6], [10.0, 10.0]))
        fitted.extend([float(k), float(tau)])
    att = AttitudeLoopParams(k_phi=fitted[0], tau_phi=fitted[1], k_theta=fitted[2], tau_theta=fitted[3])
    logger.info(f"Fitted attitude loop: k_phi={att.k_phi:.3f}, tau_phi={att.tau_phi:.4f} s, "
                f"k_theta={att.k_theta:.3f}, tau_theta={att.tau_theta:.4f} s")
    return att


def _format_row(values: np.ndarray) -> str:
    return " ".join(f"{v:.17g}" for v in values)


def write_model(model: DiscreteLtiModel, path: Union[str, Path]) -> None:
    """Dump A, B (row-major), Tc and the W bounds as text"""
    lines = [MODEL_HEADER, f"{model.nx} {model.nu} {model.Tc:.17g}"]
    lines += [_format_row(row) for row in model.A]
    lines += [_format_row(row) for row in model.B]
    lines += [_format_row(model.W.lo), _format_row(model.W.hi)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_model(path: Union[str, Path]) -> DiscreteLtiModel:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != MODEL_HEADER:
        raise FormatVersionMismatch(f"Expected '{MODEL_HEADER}' header in {path}")
    try:
        nx_str, nu_str, tc_str = lines[1].split()
        nx, nu, Tc = int(nx_str), int(nu_str), float(tc_str)
        rows = [np.array(line.split(), dtype=float) for line in lines[2:]]
    except (IndexError, ValueError) as e:
        raise FormatVersionMismatch(f"Malformed model file {path}: {e}")
    if len(rows) != 2 * nx + 2:
        raise FormatVersionMismatch(f"Expected {2 * nx + 2} data rows in {path}, found {len(rows)}")
    A = np.vstack(rows[:nx])
    B = np.vstack(rows[nx:2 * nx]).reshape(nx, nu)
    return DiscreteLtiModel(A, B, Tc, BoxSet(rows[2 * nx], rows[2 * nx + 1]))


def perturbation_step(
    params: PhysicalParams,
    gains: AttitudeGains,
    model: DiscreteLtiModel,
    x0: np.ndarray,
    u: np.ndarray,
    Ts: float = 5e-4,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Propagate the same perturbation one outer step through both models

    The nonlinear side runs the inner attitude loop at Ts, holding the
    commanded attitude at the midpoint of the integrated rate input.

    Returns:
        (x_next_linear, x_next_nonlinear)
    """
    x0 = np.asarray(x0, dtype=float)
    u = np.asarray(u, dtype=float)
    R0 = euler_to_rotation(EulerZyx(psi=0.0, theta=x0[IDX_THETA], phi=x0[IDX_PHI]))
    state = RigidBodyState(x0[IDX_P].copy(), x0[IDX_V].copy(), R0, np.zeros(3))
    cmd = x0[[IDX_DPHI_CMD, IDX_DTHETA_CMD]]
    cmd_mid = cmd + 0.5 * model.Tc * u[:2]
    n_inner = int(round(model.Tc / Ts))
    for _ in range(n_inner):
        e = rotation_to_euler(state.R)
        f_acc = (u[2] + params.g) / (np.cos(e.phi) * np.cos(e.theta))
        phi_c, theta_c = params.g / f_acc * yaw_frame_transform(cmd_mid, e.psi)
        sp = AttitudeSetpoint(R_d=euler_to_rotation(EulerZyx(e.psi, theta_c, phi_c)))
        tau = control_torque(state.R, state.w_B, sp, np.zeros(3), gains, params.J)
        tau[2] = 0.0
        state = step_dynamics(state, Wrench(f_acc * params.m, tau), np.zeros(3), np.zeros(3), params, Ts)
    x_lin = model.A @ x0 + model.B @ u
    x_nl = lin_state(state, cmd + model.Tc * u[:2])
    return x_lin, x_nl


def state_names(n: int) -> Tuple[str, ...]:
    return STATE_NAMES if n == NX else tuple(f"x{i}" for i in range(n))


def input_names(m: int) -> Tuple[str, ...]:
    return INPUT_NAMES if m == NU else tuple(f"u{i}" for i in range(m))

