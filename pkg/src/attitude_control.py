"""Attitude control - Geometric SO(3) control law with a Kalman torque observer"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from src.riccati import solve_dare_iterative
from src.rigid_body_sim import (
    PhysicalParams,
    hat,
    matrix_from_keys,
    read_flat_file,
    vee,
)

logger = logging.getLogger(__name__)


def _check_positive_diagonal(name: str, M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.shape != (3, 3) or np.any(M != np.diag(np.diag(M))) or np.any(np.diag(M) <= 0):
        raise ValueError(f"{name} must be a 3x3 diagonal matrix with positive entries")
    return M


def _check_spd(name: str, M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.shape != (3, 3) or not np.allclose(M, M.T):
        raise ValueError(f"{name} must be a symmetric 3x3 matrix")
    if np.any(np.linalg.eigvalsh(M) <= 0):
        raise ValueError(f"{name} must be positive definite")
    return M


@dataclass(frozen=True)
class AttitudeGains:
    K_R: np.ndarray = field(default_factory=lambda: np.diag([1.1e-4, 1.1e-4, 1.0e-5]))
    K_w: np.ndarray = field(default_factory=lambda: np.diag([4.5e-6, 4.5e-6, 1.0e-7]))

    def __post_init__(self):
        object.__setattr__(self, "K_R", _check_positive_diagonal("K_R", self.K_R))
        object.__setattr__(self, "K_w", _check_positive_diagonal("K_w", self.K_w))


@dataclass(frozen=True)
class ObserverConfig:
    """Noise covariances of the torque observer model, sampled at dt"""

    Q_w: np.ndarray = field(default_factory=lambda: np.eye(3) * 1.0e-6)
    Q_tau: np.ndarray = field(default_factory=lambda: np.diag([1.5e-15, 1.5e-15, 5.0e-16]))
    R_m: np.ndarray = field(default_factory=lambda: np.eye(3) * 1.0e-4)
    dt: float = 5e-4

    def __post_init__(self):
        for name in ("Q_w", "Q_tau", "R_m"):
            object.__setattr__(self, name, _check_spd(name, getattr(self, name)))
        if self.dt <= 0:
            raise ValueError(f"Observer step must be positive, got {self.dt}")


@dataclass
class ObserverState:
    w_hat: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tau_ext_hat: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass(frozen=True)
class AttitudeSetpoint:
    R_d: np.ndarray = field(default_factory=lambda: np.eye(3))
    w_d: np.ndarray = field(default_factory=lambda: np.zeros(3))


def load_attitude_config(path: Union[str, Path]) -> Tuple[AttitudeGains, ObserverConfig]:
    """Read K_R.*, K_w.*, Q_w.*, Q_tau.*, R_m.* and observer_dt from a parameter file"""
    values = read_flat_file(path)
    gains_base = AttitudeGains()
    obs_base = ObserverConfig()
    gains = AttitudeGains(
        K_R=matrix_from_keys(values, "K_R", gains_base.K_R),
        K_w=matrix_from_keys(values, "K_w", gains_base.K_w),
    )
    cfg = ObserverConfig(
        Q_w=matrix_from_keys(values, "Q_w", obs_base.Q_w),
        Q_tau=matrix_from_keys(values, "Q_tau", obs_base.Q_tau),
        R_m=matrix_from_keys(values, "R_m", obs_base.R_m),
        dt=float(values.get("observer_dt", obs_base.dt)),
    )
    return gains, cfg


def attitude_error(R: np.ndarray, R_d: np.ndarray) -> np.ndarray:
    """e_R = 1/2 vee(R_d' R - R' R_d)"""
    return 0.5 * vee(R_d.T @ R - R.T @ R_d)


def angular_velocity_error(w_B: np.ndarray, R: np.ndarray, R_d: np.ndarray, w_d: np.ndarray) -> np.ndarray:
    return w_B - R.T @ R_d @ w_d


def control_torque(
    R: np.ndarray,
    w_B: np.ndarray,
    sp: AttitudeSetpoint,
    tau_ext_hat: np.ndarray,
    gains: AttitudeGains,
    J: np.ndarray,
) -> np.ndarray:
    """
    Geometric attitude law with torque-disturbance compensation

    The desired angular acceleration is taken as zero. The z-component is
    returned as computed; the cascade drops it before allocation.

    Args:
        R: Current body->world rotation
        w_B: Measured body rate [rad/s]
        sp: Attitude setpoint (R_d, w_d)
        tau_ext_hat: Estimated external torque [N m]
        gains: K_R, K_w
        J: Inertia

    Returns:
        Commanded body torque [N m]
    """
    e_R = attitude_error(R, sp.R_d)
    e_w = angular_velocity_error(w_B, R, sp.R_d, sp.w_d)
    Jw = J @ w_B
    return (
        -gains.K_R @ e_R
        - gains.K_w @ e_w
        + np.cross(w_B, Jw)
        - J @ (hat(w_B) @ R.T @ sp.R_d @ sp.w_d)
        - np.asarray(tau_ext_hat, dtype=float)
    )


def _observer_model(J: np.ndarray, cfg: ObserverConfig):
    """Discrete observer model in acceleration-scaled coordinates (a = J^-1 tau)"""
    dt = cfg.dt
    J_inv = np.linalg.inv(J)
    I3, Z3 = np.eye(3), np.zeros((3, 3))
    F = np.block([[Z3, I3], [Z3, Z3]])
    # exact: F is nilpotent, so exp(F dt) = I + F dt
    Fd = np.eye(6) + F * dt
    Qc = np.block([[cfg.Q_w, Z3], [Z3, J_inv @ cfg.Q_tau @ J_inv]])
    Qd = Qc * dt + (F @ Qc + Qc @ F.T) * dt ** 2 / 2.0 + F @ Qc @ F.T * dt ** 3 / 3.0
    H = np.hstack([I3, Z3])
    return Fd, 0.5 * (Qd + Qd.T), H


def observer_design(J: np.ndarray, cfg: ObserverConfig) -> np.ndarray:
    """
    Steady-state Kalman gain for the [w; tau_ext] torque observer

    Args:
        J: Inertia (diagonal)
        cfg: Observer covariances and step

    Returns:
        L: 6x3 gain applied to the innovation z - w_hat_prior

    Raises:
        NoConvergence: Riccati iteration cap reached
    """
    J = np.asarray(J, dtype=float)
    Fd, Qd, H = _observer_model(J, cfg)
    # filter DARE is the control DARE of the dual pair (Fd', H')
    P_prior, iterations = solve_dare_iterative(Fd.T, H.T, Qd, cfg.R_m)
    S = H @ P_prior @ H.T + cfg.R_m
    L_scaled = np.linalg.solve(S.T, (P_prior @ H.T).T).T
    scale = np.block([[np.eye(3), np.zeros((3, 3))], [np.zeros((3, 3)), J]])
    L = scale @ L_scaled
    logger.info(f"Observer gain designed ({iterations} Riccati iterations)")
    return L


def observer_input(tau_cmd: np.ndarray, w_meas: np.ndarray, J: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Split the observer input into the applied torque and the gyroscopic term w x Jw"""
    return np.asarray(tau_cmd, dtype=float), np.cross(w_meas, J @ w_meas)


def observer_step(
    obs: ObserverState,
    tau_cmd: np.ndarray,
    w_B_model_terms: np.ndarray,
    z_meas: np.ndarray,
    L: np.ndarray,
    J: np.ndarray,
    dt: float,
) -> ObserverState:
    """
    Predict-correct step of the torque observer

    Args:
        obs: Current estimate
        tau_cmd: Torque applied over the step [N m]
        w_B_model_terms: Gyroscopic term w x Jw from the measured rate
        z_meas: Rate measurement at the end of the step
        L: Observer gain
        J: Inertia
        dt: Step [s]

    Returns:
        Updated estimate
    """
    u_o = np.asarray(tau_cmd, dtype=float) - np.asarray(w_B_model_terms, dtype=float)
    J_inv = np.diag(1.0 / np.diag(J))
    w_prior = obs.w_hat + dt * (J_inv @ (u_o + obs.tau_ext_hat))
    innovation = np.asarray(z_meas, dtype=float) - w_prior
    correction = L @ innovation
    return ObserverState(w_prior + correction[:3], obs.tau_ext_hat + correction[3:])


class TorqueObserver:
    """Stateful observer owned by one rollout"""

    def __init__(self, L: np.ndarray, J: np.ndarray, dt: float, state: Optional[ObserverState] = None):
        self.L = np.asarray(L, dtype=float)
        if self.L.shape != (6, 3):
            raise ValueError(f"Observer gain must be 6x3, got {self.L.shape}")
        self.J = np.asarray(J, dtype=float)
        self.dt = dt
        self.state = state or ObserverState()

    def reset(self, w0: Optional[np.ndarray] = None) -> None:
        self.state = ObserverState(w_hat=np.zeros(3) if w0 is None else np.array(w0, dtype=float))

    def update(self, tau_applied: np.ndarray, w_meas: np.ndarray, z_next: np.ndarray) -> ObserverState:
        """Propagate with the torque applied at the measured rate w_meas, correct with z_next"""
        tau, gyro = observer_input(tau_applied, w_meas, self.J)
        self.state = observer_step(self.state, tau, gyro, z_next, self.L, self.J, self.dt)
        return self.state

    @property
    def tau_ext_hat(self) -> np.ndarray:
        return self.state.tau_ext_hat


class AttitudeController:
    """Geometric attitude controller bound to one vehicle"""

    def __init__(self, gains: AttitudeGains, params: PhysicalParams):
        self.gains = gains
        self.J = params.J

    def torque(self, R: np.ndarray, w_B: np.ndarray, sp: AttitudeSetpoint,
               tau_ext_hat: Optional[np.ndarray] = None) -> np.ndarray:
        tau_hat = np.zeros(3) if tau_ext_hat is None else tau_ext_hat
        return control_torque(R, w_B, sp, tau_hat, self.gains, self.J)
