"""Rigid body simulator - Mixer, actuator calibration and Newton-Euler RK4 plant"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
from dotenv import dotenv_values

from src.exceptions import ActuatorSaturation, NonFiniteState, NotSkew

logger = logging.getLogger(__name__)

E_Z = np.array([0.0, 0.0, 1.0])
AXES = ("x", "y", "z")


def read_flat_file(path: Union[str, Path]) -> Dict[str, str]:
    """
    Read a flat key=value parameter file

    Args:
        path: Path to the file (dotenv syntax, one scalar per key)

    Returns:
        Mapping of key -> raw string value

    Raises:
        FileNotFoundError: If the file does not exist
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Parameter file not found: {path}")
    values = dotenv_values(path)
    return {key: value for key, value in values.items() if value is not None}


def matrix_from_keys(values: Dict[str, str], name: str, default: np.ndarray) -> np.ndarray:
    """Assemble a 3x3 matrix stored row-major under `name.xx`, `name.xy`, ... keys"""
    out = np.array(default, dtype=float, copy=True)
    for i, row in enumerate(AXES):
        for j, col in enumerate(AXES):
            key = f"{name}.{row}{col}"
            if key in values:
                out[i, j] = float(values[key])
    return out


def vector_from_keys(values: Dict[str, str], name: str, default: np.ndarray) -> np.ndarray:
    """Assemble a vector stored under `name.1`, `name.2`, ... keys (1-based)"""
    out = np.array(default, dtype=float, copy=True)
    for i in range(out.size):
        key = f"{name}.{i + 1}"
        if key in values:
            out[i] = float(values[key])
    return out


@dataclass(frozen=True)
class PhysicalParams:
    """Mass, inertia, drag and geometry of the vehicle (SI units)"""

    m: float = 0.7e-3
    J: np.ndarray = field(default_factory=lambda: np.diag([7.0e-8, 7.0e-8, 4.0e-8]))
    g: float = 9.81
    c_Dv: float = 2.0e-4
    c_Dw: float = 1.0e-9
    l_x: float = 0.01
    l_y: float = 0.01

    def __post_init__(self):
        J = np.asarray(self.J, dtype=float)
        object.__setattr__(self, "J", J)
        if self.m <= 0:
            raise ValueError(f"Mass must be positive, got {self.m}")
        if J.shape != (3, 3) or np.any(np.abs(J - np.diag(np.diag(J))) > 0.0):
            raise ValueError("Inertia J must be a diagonal 3x3 matrix")
        if np.any(np.diag(J) <= 0):
            raise ValueError("Inertia J must have strictly positive diagonal entries")
        if self.g <= 0:
            raise ValueError(f"Gravity must be positive, got {self.g}")
        if self.c_Dv < 0 or self.c_Dw < 0:
            raise ValueError("Drag coefficients must be non-negative")
        if self.l_x <= 0 or self.l_y <= 0:
            raise ValueError("Lever arms must be positive")

    @cached_property
    def J_inv(self) -> np.ndarray:
        return np.diag(1.0 / np.diag(self.J))

    @cached_property
    def allocation(self) -> np.ndarray:
        """3x4 mixer matrix mapping lift forces to (f_cmd, tau_x, tau_y)"""
        ly, lx = self.l_y, self.l_x
        return np.array([
            [1.0, 1.0, 1.0, 1.0],
            [-ly, ly, ly, -ly],
            [-lx, -lx, lx, lx],
        ])

    @cached_property
    def allocation_pinv(self) -> np.ndarray:
        return np.linalg.pinv(self.allocation)

    @property
    def weight(self) -> float:
        return self.m * self.g

    @classmethod
    def default(cls) -> "PhysicalParams":
        """Insect-scale defaults (m = 0.7 g); the remaining constants are placeholders"""
        return cls()


@dataclass(frozen=True)
class ActuatorCalibration:
    """Linear voltage-to-lift map f = alpha * v + beta with per-actuator lift bounds"""

    alpha: np.ndarray = field(default_factory=lambda: np.full(4, 2.5e-6))
    beta: np.ndarray = field(default_factory=lambda: np.full(4, -1.0e-3))
    f_min: np.ndarray = field(default_factory=lambda: np.zeros(4))
    f_max: np.ndarray = field(default_factory=lambda: np.full(4, 4.0e-3))

    def __post_init__(self):
        for name in ("alpha", "beta", "f_min", "f_max"):
            value = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (4,)).copy()
            object.__setattr__(self, name, value)
        if np.any(self.alpha <= 0):
            raise ValueError("Calibration gains alpha must be positive")
        if np.any(self.f_min > self.f_max):
            raise ValueError("Lift bounds must satisfy f_min <= f_max")


@dataclass
class RigidBodyState:
    """Full nonlinear state: world position/velocity, body->world rotation, body rates"""

    p_W: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v_W: np.ndarray = field(default_factory=lambda: np.zeros(3))
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    w_B: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def copy(self) -> "RigidBodyState":
        return RigidBodyState(self.p_W.copy(), self.v_W.copy(), self.R.copy(), self.w_B.copy())

    def orthonormality_error(self) -> float:
        return float(np.linalg.norm(self.R.T @ self.R - np.eye(3)))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p_W, self.v_W, self.R.reshape(-1), self.w_B])


@dataclass(frozen=True)
class Wrench:
    """Collective thrust [N] and body torque [N m]; tau_B[z] is never actuated"""

    f_cmd: float
    tau_B: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass
class SimConfig:
    """Integration step, RNG seed and time-indexed disturbance signals sampled at Ts"""

    Ts: float = 5e-4
    seed: int = 0
    f_ext_profile: Optional[np.ndarray] = None
    tau_ext_profile: Optional[np.ndarray] = None
    gyro_noise_std: float = 0.0

    def __post_init__(self):
        if self.Ts <= 0:
            raise ValueError(f"Integration step must be positive, got {self.Ts}")
        for name in ("f_ext_profile", "tau_ext_profile"):
            profile = getattr(self, name)
            if profile is not None:
                profile = np.asarray(profile, dtype=float)
                if profile.ndim != 2 or profile.shape[1] != 3:
                    raise ValueError(f"{name} must have shape (n_steps, 3)")
                setattr(self, name, profile)

    def check_horizon(self, n_steps: int) -> None:
        """Raise if a disturbance profile does not cover the simulated horizon"""
        for name in ("f_ext_profile", "tau_ext_profile"):
            profile = getattr(self, name)
            if profile is not None and profile.shape[0] < n_steps:
                raise ValueError(f"{name} covers {profile.shape[0]} steps, run needs {n_steps}")

    def disturbance_at(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        f_ext = self.f_ext_profile[k] if self.f_ext_profile is not None else np.zeros(3)
        tau_ext = self.tau_ext_profile[k] if self.tau_ext_profile is not None else np.zeros(3)
        return f_ext, tau_ext


def load_params(path: Union[str, Path]) -> Tuple[PhysicalParams, ActuatorCalibration]:
    """
    Load physical parameters and actuator calibration from a flat parameter file

    Missing keys keep their defaults.

    Args:
        path: Parameter file (keys m, g, J.xx..J.zz, c_Dv, c_Dw, l_x, l_y,
              alpha.1..4, beta.1..4, f_min, f_max)

    Returns:
        (PhysicalParams, ActuatorCalibration)
    """
    values = read_flat_file(path)
    base = PhysicalParams()
    params = PhysicalParams(
        m=float(values.get("m", base.m)),
        J=matrix_from_keys(values, "J", base.J),
        g=float(values.get("g", base.g)),
        c_Dv=float(values.get("c_Dv", base.c_Dv)),
        c_Dw=float(values.get("c_Dw", base.c_Dw)),
        l_x=float(values.get("l_x", base.l_x)),
        l_y=float(values.get("l_y", base.l_y)),
    )
    cal_base = ActuatorCalibration()
    cal = ActuatorCalibration(
        alpha=vector_from_keys(values, "alpha", cal_base.alpha),
        beta=vector_from_keys(values, "beta", cal_base.beta),
        f_min=float(values["f_min"]) if "f_min" in values else cal_base.f_min,
        f_max=float(values["f_max"]) if "f_max" in values else cal_base.f_max,
    )
    logger.info(f"Loaded parameters from {path}: m={params.m:g} kg, J=diag{tuple(np.diag(params.J))}")
    return params, cal


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix such that hat(v) @ r == cross(v, r)"""
    x, y, z = v
    return np.array([
        [0.0, -z, y],
        [z, 0.0, -x],
        [-y, x, 0.0],
    ])


def vee(M: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """
    Inverse of hat()

    Raises:
        NotSkew: If ||M + M^T||_F exceeds tol
    """
    M = np.asarray(M, dtype=float)
    asym = np.linalg.norm(M + M.T)
    if asym > tol:
        raise NotSkew(f"Matrix is not skew-symmetric (||M + M^T||_F = {asym:.3e})")
    return np.array([M[2, 1], M[0, 2], M[1, 0]])


def mixer_matrix(params: PhysicalParams) -> np.ndarray:
    return params.allocation.copy()


def mixer_forward(forces: np.ndarray, params: PhysicalParams) -> np.ndarray:
    """Map four lift forces [N] to (f_cmd, tau_x, tau_y)"""
    return params.allocation @ np.asarray(forces, dtype=float)


def mixer_inverse(f_cmd: float, tau_x: float, tau_y: float, params: PhysicalParams) -> np.ndarray:
    """Minimum-norm lift forces producing (f_cmd, tau_x, tau_y), via the Moore-Penrose inverse"""
    return params.allocation_pinv @ np.array([f_cmd, tau_x, tau_y], dtype=float)


def saturate(forces: np.ndarray, cal: ActuatorCalibration, strict: bool = False) -> Tuple[np.ndarray, bool]:
    """
    Clamp lift forces to the per-actuator bounds

    Args:
        forces: Commanded forces [N]
        cal: Calibration holding f_min / f_max
        strict: Raise instead of clamping

    Returns:
        (clamped forces, saturation flag)

    Raises:
        ActuatorSaturation: If strict and any force is out of bounds
    """
    clamped = np.clip(forces, cal.f_min, cal.f_max)
    saturated = bool(np.any(clamped != forces))
    if saturated:
        if strict:
            raise ActuatorSaturation(f"Lift command {forces} outside [{cal.f_min}, {cal.f_max}]")
        logger.debug(f"Actuator saturation: {forces} -> {clamped}")
    return clamped, saturated


def voltage_to_force(v: np.ndarray, cal: ActuatorCalibration) -> np.ndarray:
    """Linear voltage-to-lift map f_i = alpha_i v_i + beta_i"""
    return cal.alpha * np.asarray(v, dtype=float) + cal.beta


def force_to_voltage(f: np.ndarray, cal: ActuatorCalibration) -> np.ndarray:
    return (np.asarray(f, dtype=float) - cal.beta) / cal.alpha


def _derivatives(v, R, w, f_cmd, tau, f_ext, tau_ext, params: PhysicalParams):
    # m v_dot = f R e_z - m g e_z - c_Dv v + f_ext
    acc = (f_cmd * R[:, 2] - params.weight * E_Z - params.c_Dv * v + f_ext) / params.m
    J = params.J
    Jw = J @ w
    w_dot = params.J_inv @ (-np.cross(w, Jw) + tau - params.c_Dw * w + tau_ext)
    R_dot = R @ hat(w)
    return v, acc, R_dot, w_dot


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Polar projection onto SO(3)"""
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        U[:, -1] = -U[:, -1]
        out = U @ Vt
    return out


def step_dynamics(
    state: RigidBodyState,
    wrench: Wrench,
    f_ext: np.ndarray,
    tau_ext: np.ndarray,
    params: PhysicalParams,
    Ts: float,
) -> RigidBodyState:
    """
    Advance the Newton-Euler dynamics by one RK4 step

    Args:
        state: Current state (not modified)
        wrench: Applied thrust and body torque, held over the step
        f_ext: External world-frame force [N]
        tau_ext: External body-frame torque [N m]
        params: Physical parameters
        Ts: Step length [s]

    Returns:
        New state with R projected back onto SO(3)

    Raises:
        NonFiniteState: If any component of the result is NaN or Inf
    """
    if Ts <= 0:
        raise ValueError(f"Step length must be positive, got {Ts}")
    f_cmd = float(wrench.f_cmd)
    tau = np.asarray(wrench.tau_B, dtype=float)
    f_ext = np.asarray(f_ext, dtype=float)
    tau_ext = np.asarray(tau_ext, dtype=float)
    p, v, R, w = state.p_W, state.v_W, state.R, state.w_B

    k1 = _derivatives(v, R, w, f_cmd, tau, f_ext, tau_ext, params)
    h = 0.5 * Ts
    k2 = _derivatives(v + h * k1[1], R + h * k1[2], w + h * k1[3], f_cmd, tau, f_ext, tau_ext, params)
    k3 = _derivatives(v + h * k2[1], R + h * k2[2], w + h * k2[3], f_cmd, tau, f_ext, tau_ext, params)
    k4 = _derivatives(v + Ts * k3[1], R + Ts * k3[2], w + Ts * k3[3], f_cmd, tau, f_ext, tau_ext, params)

    c = Ts / 6.0
    p_new = p + c * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    v_new = v + c * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    R_new = R + c * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    w_new = w + c * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])

    if not (np.all(np.isfinite(p_new)) and np.all(np.isfinite(v_new))
            and np.all(np.isfinite(R_new)) and np.all(np.isfinite(w_new))):
        raise NonFiniteState(f"Non-finite state after step: p={p_new}, v={v_new}, w={w_new}")

    return RigidBodyState(p_new, v_new, orthonormalize(R_new), w_new)
