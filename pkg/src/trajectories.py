"""Flight tasks, reference windows and reproducible disturbance profiles"""

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd

from src.lin_model import NX
from src.rigid_body_sim import PhysicalParams, SimConfig
from src.rtmpc import ReferenceWindow

logger = logging.getLogger(__name__)

TASK_KINDS = ("hover", "ramp", "disturbed_ramp", "circle")
DISTURBANCE_KINDS = ("none", "constant", "pulses")
PROFILE_COLUMNS = ["t", "fext_x", "fext_y", "fext_z", "tauext_x", "tauext_y", "tauext_z"]


@dataclass(frozen=True)
class DisturbanceSpec:
    """
    Description of the external force / torque signal for a run

    Attributes:
        kind: none | constant | pulses
        force_frac: Force magnitude as a fraction of the weight
        direction: Unit world direction for `constant`
        n_pulses: Number of pulses for `pulses`
        pulse_width: Pulse length [s]
        torque_frac: Torque pulse magnitude as a fraction of m g l_x
        window: Interval [s] inside which pulses start
    """

    kind: str = "none"
    force_frac: float = 0.0
    direction: Tuple[float, float, float] = (1.0, 0.0, 0.0)
    n_pulses: int = 3
    pulse_width: float = 0.05
    torque_frac: float = 0.2
    window: Tuple[float, float] = (1.0, 5.5)

    def __post_init__(self):
        if self.kind not in DISTURBANCE_KINDS:
            raise ValueError(f"Unknown disturbance kind '{self.kind}', expected one of {DISTURBANCE_KINDS}")
        if self.force_frac < 0 or self.torque_frac < 0:
            raise ValueError("Disturbance magnitudes must be non-negative")

    @classmethod
    def sustained(cls, force_frac: float, direction=(1.0, 0.0, 0.0)) -> "DisturbanceSpec":
        return cls(kind="constant", force_frac=force_frac, direction=tuple(direction))

    @classmethod
    def tether_taps(cls) -> "DisturbanceSpec":
        """Three short horizontal force pulses at 0.3 m g plus torque pulses"""
        return cls(kind="pulses", force_frac=0.3)


@dataclass(frozen=True)
class DisturbanceProfile:
    """Time-indexed external force [N] and torque [N m] sampled at Ts"""

    Ts: float
    f_ext: np.ndarray
    tau_ext: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.f_ext.shape[0]

    @classmethod
    def build(cls, spec: DisturbanceSpec, duration: float, Ts: float, params: PhysicalParams,
              seed: int = 0) -> "DisturbanceProfile":
        """
        Sample a profile covering `duration` seconds

        Args:
            spec: Disturbance description
            duration: Horizon [s]
            Ts: Sample period [s]
            params: Vehicle parameters (weight and lever arm set the magnitudes)
            seed: Seed for pulse timing and directions

        Returns:
            DisturbanceProfile with ceil(duration / Ts) + 1 rows
        """
        n = int(np.ceil(duration / Ts)) + 1
        f_ext = np.zeros((n, 3))
        tau_ext = np.zeros((n, 3))
        if spec.kind == "constant":
            direction = np.asarray(spec.direction, dtype=float)
            direction = direction / np.linalg.norm(direction)
            f_ext[:] = spec.force_frac * params.weight * direction
        elif spec.kind == "pulses":
            rng = np.random.default_rng(seed)
            t0, t1 = spec.window
            t1 = min(t1, duration - spec.pulse_width)
            slots = np.linspace(t0, t1, spec.n_pulses + 1)
            width = int(round(spec.pulse_width / Ts))
            for i in range(spec.n_pulses):
                start_t = rng.uniform(slots[i], slots[i + 1])
                start = int(round(start_t / Ts))
                heading = rng.uniform(0.0, 2.0 * np.pi)
                tilt_axis = rng.uniform(0.0, 2.0 * np.pi)
                force = spec.force_frac * params.weight * np.array([np.cos(heading), np.sin(heading), 0.0])
                torque = spec.torque_frac * params.weight * params.l_x * np.array([np.cos(tilt_axis), np.sin(tilt_axis), 0.0])
                f_ext[start:start + width] += force
                tau_ext[start:start + width] += torque
        return cls(Ts, f_ext, tau_ext)

    def digest(self) -> str:
        """SHA-256 of the sampled signals"""
        h = hashlib.sha256()
        h.update(np.float64(self.Ts).tobytes())
        h.update(np.ascontiguousarray(self.f_ext, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.tau_ext, dtype=np.float64).tobytes())
        return h.hexdigest()

    def sim_config(self, seed: int = 0, gyro_noise_std: float = 0.0) -> SimConfig:
        return SimConfig(Ts=self.Ts, seed=seed, f_ext_profile=self.f_ext, tau_ext_profile=self.tau_ext,
                         gyro_noise_std=gyro_noise_std)

    def to_frame(self) -> pd.DataFrame:
        data = np.column_stack([np.arange(self.n_steps) * self.Ts, self.f_ext, self.tau_ext])
        return pd.DataFrame(data, columns=PROFILE_COLUMNS)

    def write(self, path: Union[str, Path]) -> str:
        """Store as CSV; returns the digest"""
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return self.digest()

    @classmethod
    def read(cls, path: Union[str, Path]) -> "DisturbanceProfile":
        df = pd.read_csv(path, float_precision="round_trip")
        if list(df.columns) != PROFILE_COLUMNS:
            raise ValueError(f"Unexpected disturbance profile columns in {path}: {list(df.columns)}")
        t = df["t"].to_numpy()
        Ts = float(t[1] - t[0]) if len(t) > 1 else 0.0
        return cls(Ts, df[PROFILE_COLUMNS[1:4]].to_numpy(), df[PROFILE_COLUMNS[4:]].to_numpy())


@dataclass(frozen=True)
class TrajectoryTask:
    """
    Reference geometry for one flight task

    Ramps hover at the origin for `ramp_start` seconds, then move every axis
    by `ramp_amplitude` over `ramp_duration` seconds.
    The circle lies in the x-z plane, starts at the origin after the
    takeoff hold and runs one lap at `circle_speed`.
    """

    kind: str
    duration: float
    ramp_amplitude: float = 0.03
    ramp_duration: float = 1.0
    ramp_start: float = 0.5
    circle_radius: float = 0.05
    circle_speed: float = 0.052
    takeoff: float = 0.75
    disturbance: DisturbanceSpec = DisturbanceSpec()

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"Unknown task kind '{self.kind}', expected one of {TASK_KINDS}")
        if self.duration <= 0 or self.ramp_duration <= 0:
            raise ValueError("Task durations must be positive")
        if self.kind == "circle" and (self.circle_radius <= 0 or self.circle_speed <= 0):
            raise ValueError("Circle radius and speed must be positive")

    @property
    def circle_period(self) -> float:
        return 2.0 * np.pi * self.circle_radius / self.circle_speed

    @property
    def circle_center(self) -> np.ndarray:
        return np.array([-self.circle_radius, 0.0, 0.0])

    def desired(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """Desired (position, velocity) at time t; the final state is held past the end"""
        t = min(max(float(t), 0.0), self.duration)
        p, v = np.zeros(3), np.zeros(3)
        if self.kind in ("ramp", "disturbed_ramp"):
            s = (t - self.ramp_start) / self.ramp_duration
            p[:] = self.ramp_amplitude * np.clip(s, 0.0, 1.0)
            if 0.0 <= s < 1.0:
                v[:] = self.ramp_amplitude / self.ramp_duration
        elif self.kind == "circle":
            omega = self.circle_speed / self.circle_radius
            tau = np.clip(t - self.takeoff, 0.0, self.circle_period)
            angle = omega * tau
            r = self.circle_radius
            p = self.circle_center + r * np.array([np.cos(angle), 0.0, np.sin(angle)])
            if self.takeoff <= t < self.takeoff + self.circle_period:
                v = r * omega * np.array([-np.sin(angle), 0.0, np.cos(angle)])
        return p, v

    def desired_positions(self, times: np.ndarray) -> np.ndarray:
        return np.array([self.desired(t)[0] for t in times])

    def with_disturbance(self, spec: DisturbanceSpec) -> "TrajectoryTask":
        return TrajectoryTask(self.kind, self.duration, self.ramp_amplitude, self.ramp_duration,
                              self.ramp_start, self.circle_radius, self.circle_speed, self.takeoff, spec)


TASKS: Dict[str, TrajectoryTask] = {
    "hover": TrajectoryTask("hover", duration=2.0),
    "t1": TrajectoryTask("ramp", duration=3.0),
    "t2": TrajectoryTask("disturbed_ramp", duration=6.0, disturbance=DisturbanceSpec.tether_taps()),
    "t3": TrajectoryTask("circle", duration=7.5),
}


def task_by_name(name: str) -> TrajectoryTask:
    key = name.lower()
    if key not in TASKS:
        raise ValueError(f"Unknown task '{name}', expected one of {sorted(TASKS)}")
    return TASKS[key]


class ReferenceStream:
    """Sliding N+1 reference windows at the outer-loop period"""

    def __init__(self, task: TrajectoryTask, Tc: float, N: int, horizon_end_policy: str = "hold"):
        if horizon_end_policy != "hold":
            raise ValueError(f"Unsupported horizon end policy '{horizon_end_policy}'")
        self.task = task
        self.Tc = Tc
        self.N = N
        self.n_steps = int(round(task.duration / Tc))

    def state_at(self, t: float) -> np.ndarray:
        p, v = self.task.desired(t)
        x = np.zeros(NX)
        x[0:3] = p
        x[3:6] = v
        return x

    def window(self, k: int) -> ReferenceWindow:
        t0 = k * self.Tc
        return ReferenceWindow(np.array([self.state_at(t0 + i * self.Tc) for i in range(self.N + 1)]))


def make_reference(task: TrajectoryTask, Tc: float, N: int, horizon_end_policy: str = "hold") -> ReferenceStream:
    return ReferenceStream(task, Tc, N, horizon_end_policy)


def profile_for_run(task: TrajectoryTask, params: PhysicalParams, Ts: float, seed: int,
                    override: Optional[DisturbanceSpec] = None) -> DisturbanceProfile:
    spec = override if override is not None else task.disturbance
    profile = DisturbanceProfile.build(spec, task.duration + 1.0, Ts, params, seed)
    logger.debug(f"Disturbance profile '{spec.kind}' (seed {seed}): sha256={profile.digest()[:12]}")
    return profile
