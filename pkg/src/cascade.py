"""Cascaded flight stack - Outer law at 1/Tc, geometric inner loop and observer at 1/Ts"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Protocol, Union

import numpy as np
import pandas as pd

from src.attitude_control import (
    AttitudeGains,
    AttitudeSetpoint,
    ObserverConfig,
    TorqueObserver,
    control_torque,
    load_attitude_config,
    observer_design,
)
from src.lin_model import (
    AttitudeLoopParams,
    BoxSet,
    DiscreteLtiModel,
    default_constraints,
    fit_attitude_loop,
    hover_model,
    lin_state,
    rotation_to_euler,
    yaw_frame_transform,
)
from src.rigid_body_sim import (
    ActuatorCalibration,
    PhysicalParams,
    RigidBodyState,
    SimConfig,
    Wrench,
    force_to_voltage,
    load_params,
    mixer_forward,
    mixer_inverse,
    saturate,
    step_dynamics,
    voltage_to_force,
)
from src.rtmpc import (
    CostParams,
    ReferenceWindow,
    TubeController,
    TubeMpcController,
    compensate,
    design_tube_controller,
    setpoints,
)
from src.trajectories import ReferenceStream

logger = logging.getLogger(__name__)

LOG_COLUMNS = (
    ["t", "px", "py", "pz", "vx", "vy", "vz"]
    + [f"r{i}{j}" for i in range(3) for j in range(3)]
    + ["wx", "wy", "wz", "fcmd", "taux", "tauy"]
    + ["fext_x", "fext_y", "fext_z", "tauext_x", "tauext_y", "tauext_z", "sat_flag"]
    + ["tauhat_x", "tauhat_y", "tauhat_z", "what_x", "what_y", "what_z"]
)


class OuterLaw(Protocol):
    def act(self, x_t: np.ndarray, ref: ReferenceWindow) -> np.ndarray: ...

    def reset(self) -> None: ...


@dataclass
class FlightSetup:
    """Everything designed once and shared (read-only) by all runs"""

    params: PhysicalParams
    cal: ActuatorCalibration
    gains: AttitudeGains
    observer_cfg: ObserverConfig
    L: np.ndarray
    att: AttitudeLoopParams
    model: DiscreteLtiModel
    cost: CostParams
    X: BoxSet
    U: BoxSet
    tube: TubeController
    N: int
    Ts: float
    euler_variant: str = "printed"

    @property
    def Tc(self) -> float:
        return self.model.Tc

    @property
    def inner_steps(self) -> int:
        return int(round(self.Tc / self.Ts))

    def rtmpc(self, fallback: bool = True) -> TubeMpcController:
        return TubeMpcController(self.model, self.cost, self.tube, self.N, fallback=fallback)


@dataclass
class OuterRecord:
    step: int
    x: np.ndarray
    u: np.ndarray
    u_bar: np.ndarray
    x_bar: np.ndarray
    window: np.ndarray


@dataclass
class FlightLog:
    frame: pd.DataFrame
    records: List[OuterRecord] = field(default_factory=list)
    saturation_steps: int = 0
    infeasible_steps: int = 0
    profile_digest: Optional[str] = None

    def write(self, path: Union[str, Path]) -> None:
        """CSV log; the disturbance digest goes in a leading comment line"""
        with open(path, "w", newline="") as f:
            f.write(f"# profile_sha256={self.profile_digest or 'none'}\n")
            self.frame.to_csv(f, index=False, float_format="%.10g")


def read_log(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def build_setup(config) -> FlightSetup:
    """
    Design every controller component from a configuration object

    Args:
        config: Object exposing the Config attributes (PARAMS_FILE, TC, TS, N, ...)

    Returns:
        FlightSetup with observer gain, linear model and tube controller
    """
    params_file = Path(config.PARAMS_FILE) if config.PARAMS_FILE else None
    if params_file is not None and params_file.exists():
        params, cal = load_params(params_file)
        gains, observer_cfg = load_attitude_config(params_file)
    else:
        logger.warning(f"Parameter file {params_file} not found, using built-in defaults")
        params, cal = PhysicalParams.default(), ActuatorCalibration()
        gains, observer_cfg = AttitudeGains(), ObserverConfig()

    ratio = config.TC / config.TS
    if abs(ratio - round(ratio)) > 1e-9:
        raise ValueError(f"Tc={config.TC} must be an integer multiple of Ts={config.TS}")
    if abs(observer_cfg.dt - config.TS) > 1e-15:
        observer_cfg = ObserverConfig(observer_cfg.Q_w, observer_cfg.Q_tau, observer_cfg.R_m, config.TS)

    L = observer_design(params.J, observer_cfg)
    if config.FIT_ATTITUDE_LOOP:
        att = fit_attitude_loop(params, gains, Ts=config.TS)
    else:
        att = AttitudeLoopParams(config.ATT_K_PHI, config.ATT_K_THETA, config.ATT_TAU_PHI, config.ATT_TAU_THETA)

    model = hover_model(params, att, config.TC, config.FEXT_FRAC)
    X, U = default_constraints(params.g, config.MAX_TILT_DEG, config.DFCMD_FRAC,
                               config.MAX_RATE_CMD, config.MAX_VEL, config.MAX_POS)
    cost = CostParams.diagonal(config.Q_POS, config.Q_VEL, config.Q_ATT, config.Q_CMD,
                               config.R_RATE, config.R_THRUST)
    tube = design_tube_controller(model, cost, X, U, config.TUBE_ROLLOUTS, config.TUBE_HORIZON,
                                  config.TUBE_SEED, config.TUBE_SAMPLING)
    return FlightSetup(params, cal, gains, observer_cfg, L, att, model, cost, X, U, tube,
                       config.N, config.TS, config.EULER_RATE_MATRIX)


class FlightStack:
    """
    Closed-loop simulation of outer law + inner attitude loop + plant

    The outer command is computed every Tc and held for exactly Tc / Ts
    inner steps. The commanded-attitude integrators live here; the applied
    attitude command uses their value at the middle of the hold interval.
    """

    def __init__(self, setup: FlightSetup, law: OuterLaw, sim_cfg: Optional[SimConfig] = None,
                 use_observer: bool = True):
        self.setup = setup
        self.law = law
        self.sim_cfg = sim_cfg or SimConfig(Ts=setup.Ts)
        if abs(self.sim_cfg.Ts - setup.Ts) > 1e-15:
            raise ValueError(f"Simulation step {self.sim_cfg.Ts} differs from the inner-loop step {setup.Ts}")
        self.observer = TorqueObserver(setup.L, setup.params.J, setup.Ts) if use_observer else None

    def _measure(self, rng: np.random.Generator, w: np.ndarray) -> np.ndarray:
        std = self.sim_cfg.gyro_noise_std
        return w + rng.normal(0.0, std, 3) if std > 0 else w.copy()

    def run(self, reference: ReferenceStream, n_outer: Optional[int] = None, record_outer: bool = False,
            initial_state: Optional[RigidBodyState] = None, profile_digest: Optional[str] = None) -> FlightLog:
        """
        Simulate n_outer outer-loop intervals

        Args:
            reference: Reference window stream
            n_outer: Number of outer decisions (defaults to the task length)
            record_outer: Keep per-decision records (state, input, plan, window)
            initial_state: Starting state (rest at the origin by default)
            profile_digest: Disturbance digest stored with the log

        Returns:
            FlightLog with one row per inner step
        """
        s = self.setup
        params, cal, gains, J = s.params, s.cal, s.gains, s.params.J
        ratio = s.inner_steps
        n_outer = reference.n_steps if n_outer is None else n_outer
        n_inner = n_outer * ratio
        self.sim_cfg.check_horizon(n_inner)

        rng = np.random.default_rng(self.sim_cfg.seed)
        state = initial_state.copy() if initial_state is not None else RigidBodyState()
        self.law.reset()
        if self.observer is not None:
            self.observer.reset(state.w_B)
        cmd_I = np.zeros(2)
        sp = AttitudeSetpoint()
        thrust = params.weight
        rows = np.zeros((n_inner, len(LOG_COLUMNS)))
        records: List[OuterRecord] = []
        sat_steps = 0
        w_meas = self._measure(rng, state.w_B)

        for k in range(n_inner):
            if k % ratio == 0:
                j = k // ratio
                euler = rotation_to_euler(state.R)
                x_t = lin_state(state, cmd_I)
                window = reference.window(j)
                u = self.law.act(x_t, window)
                if record_outer:
                    plan = getattr(self.law, "last_plan", None)
                    u_bar = plan.U_bar[0].copy() if plan is not None else u.copy()
                    x_bar = plan.X_bar[0].copy() if plan is not None else x_t.copy()
                    records.append(OuterRecord(j, x_t, u.copy(), u_bar, x_bar, window.states))
                cmd_mid = cmd_I + 0.5 * s.Tc * u[:2]
                cmd_I = cmd_I + s.Tc * u[:2]
                f_acc, phi_c, theta_c = compensate(u, euler, cmd_mid, params.g)
                phi_rate_B, theta_rate_B = yaw_frame_transform(u[:2], euler.psi)
                sp = setpoints(phi_c, theta_c, euler.psi, theta_rate_B, phi_rate_B, s.euler_variant)
                thrust = f_acc * params.m

            tau_hat = self.observer.tau_ext_hat if self.observer is not None else np.zeros(3)
            tau_cmd = control_torque(state.R, w_meas, sp, tau_hat, gains, J)
            # tau_cmd[2] is not actuated
            forces, sat = saturate(mixer_inverse(thrust, tau_cmd[0], tau_cmd[1], params), cal)
            sat_steps += int(sat)
            f_cmd, tau_x, tau_y = mixer_forward(voltage_to_force(force_to_voltage(forces, cal), cal), params)
            applied = Wrench(f_cmd, np.array([tau_x, tau_y, 0.0]))
            f_ext, tau_ext = self.sim_cfg.disturbance_at(k)

            if self.observer is not None:
                obs_state = self.observer.state
                tau_hat_log, w_hat_log = obs_state.tau_ext_hat, obs_state.w_hat
            else:
                tau_hat_log, w_hat_log = np.zeros(3), np.zeros(3)
            rows[k] = np.concatenate([
                [k * s.Ts], state.p_W, state.v_W, state.R.reshape(-1), state.w_B,
                [f_cmd, tau_x, tau_y], f_ext, tau_ext, [float(sat)], tau_hat_log, w_hat_log,
            ])

            state = step_dynamics(state, applied, f_ext, tau_ext, params, s.Ts)
            w_next = self._measure(rng, state.w_B)
            if self.observer is not None:
                self.observer.update(applied.tau_B, w_meas, w_next)
            w_meas = w_next

        if sat_steps:
            logger.warning(f"Actuator saturation on {sat_steps}/{n_inner} inner steps")
        infeasible = int(getattr(self.law, "infeasible_steps", 0))
        logger.info(f"Run finished: {n_outer} outer steps, {n_inner} inner steps, {infeasible} infeasible")
        return FlightLog(pd.DataFrame(rows, columns=LOG_COLUMNS), records, sat_steps, infeasible, profile_digest)
