"""Closed-loop evaluation harness - runs, tracking metrics and controller comparison tables"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd

from src.cascade import FlightLog, FlightSetup, FlightStack, OuterLaw
from src.exceptions import DimensionMismatch, TubeMavError
from src.imitation import input_size
from src.mlp import MlpPolicy, weights_read
from src.trajectories import (
    DisturbanceProfile,
    DisturbanceSpec,
    TrajectoryTask,
    make_reference,
    profile_for_run,
)

logger = logging.getLogger(__name__)

AXES = ("x", "y", "z")
CONTROLLER_KINDS = ("rtmpc", "policy")


@dataclass
class RunMetrics:
    """
    Position tracking errors after takeoff

    Attributes:
        rmse: Per-axis root mean squared error [m]
        mae: Per-axis maximum absolute error [m]
        t0: Metric start time [s]
        window: Length of the metric window [s]
        infeasible_steps: Outer steps where the QP was infeasible
        saturation_steps: Inner steps with clamped actuator forces
    """

    rmse: np.ndarray
    mae: np.ndarray
    t0: float = 0.5
    window: float = 0.0
    infeasible_steps: int = 0
    saturation_steps: int = 0

    def __post_init__(self):
        if np.any(self.rmse > self.mae * (1.0 + 1e-12) + 1e-15):
            raise ValueError(f"RMSE {self.rmse} exceeds max error {self.mae}")

    def as_dict(self) -> Dict[str, float]:
        row = {f"rmse_{a}": float(v) for a, v in zip(AXES, self.rmse)}
        row.update({f"mae_{a}": float(v) for a, v in zip(AXES, self.mae)})
        row.update(t0=self.t0, window=self.window, infeasible_steps=self.infeasible_steps,
                   saturation_steps=self.saturation_steps)
        return row


def compute_metrics(frame: pd.DataFrame, task: TrajectoryTask, t0: float = 0.5,
                    infeasible_steps: int = 0, saturation_steps: int = 0) -> RunMetrics:
    """RMSE and maximum absolute position error over samples with t >= t0"""
    t = frame["t"].to_numpy()
    mask = t >= t0 - 1e-12
    if not np.any(mask):
        raise ValueError(f"No samples after t0={t0} (log ends at {t[-1] if t.size else 0.0})")
    err = frame.loc[mask, ["px", "py", "pz"]].to_numpy() - task.desired_positions(t[mask])
    rmse = np.sqrt(np.mean(err ** 2, axis=0))
    mae = np.max(np.abs(err), axis=0)
    window = float(t[mask][-1] - t[mask][0]) if mask.sum() > 1 else 0.0
    return RunMetrics(rmse, mae, t0, window, infeasible_steps, saturation_steps)


def load_policy(path: Union[str, Path], setup: FlightSetup) -> MlpPolicy:
    """Read weights and check them against the controller's input/output contract"""
    if not Path(path).exists():
        raise FileNotFoundError(f"Weights file not found: {path}")
    policy = weights_read(path)
    expected = input_size(setup.N, setup.model.nx)
    if policy.sizes[0] != expected or policy.sizes[-1] != setup.model.nu:
        raise DimensionMismatch(f"Policy sizes {policy.sizes} do not match input {expected} / output {setup.model.nu}")
    return policy


def make_controller(kind: str, setup: FlightSetup, weights: Optional[Union[str, Path, MlpPolicy]] = None) -> OuterLaw:
    if kind == "rtmpc":
        return setup.rtmpc(fallback=True)
    if kind == "policy":
        if weights is None:
            raise ValueError("The policy controller needs a weights file")
        return weights if isinstance(weights, MlpPolicy) else load_policy(weights, setup)
    raise ValueError(f"Unknown controller '{kind}', expected one of {CONTROLLER_KINDS}")


def run_closed_loop(
    setup: FlightSetup,
    controller: OuterLaw,
    task: TrajectoryTask,
    seed: int = 0,
    disturbance: Optional[DisturbanceSpec] = None,
    profile: Optional[DisturbanceProfile] = None,
    gyro_noise_std: float = 0.0,
    t0: float = 0.5,
    use_observer: bool = True,
) -> Tuple[FlightLog, RunMetrics]:
    """
    Fly one task through the full cascade

    Args:
        setup: Designed controller components
        controller: Outer-loop law (tube MPC or learned policy)
        task: Flight task
        seed: Seed for the disturbance profile and gyro noise
        disturbance: Overrides the task's own disturbance
        profile: Pre-built disturbance profile (overrides `disturbance`)
        gyro_noise_std: Gyro noise standard deviation [rad/s]
        t0: Metric start time [s]
        use_observer: Close the torque observer loop

    Returns:
        (log, metrics)
    """
    profile = profile or profile_for_run(task, setup.params, setup.Ts, seed, override=disturbance)
    stack = FlightStack(setup, controller, profile.sim_config(seed, gyro_noise_std), use_observer)
    log = stack.run(make_reference(task, setup.Tc, setup.N), profile_digest=profile.digest())
    metrics = compute_metrics(log.frame, task, t0, log.infeasible_steps, log.saturation_steps)
    logger.info(
        f"{getattr(controller, 'name', type(controller).__name__)} on {task.kind} (seed {seed}): "
        f"RMSE {np.round(metrics.rmse * 100, 3)} cm, max {np.round(metrics.mae * 100, 3)} cm"
    )
    return log, metrics


@dataclass
class Comparison:
    table: pd.DataFrame
    runs: pd.DataFrame
    failures: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _summarize(task: str, controller: str, metrics: List[RunMetrics], n_failed: int) -> List[dict]:
    rows = []
    for metric in ("rmse", "mae"):
        values = np.array([getattr(m, metric) for m in metrics]) if metrics else np.full((1, 3), np.nan)
        for i, axis in enumerate(AXES):
            rows.append({
                "task": task,
                "controller": controller,
                "metric": metric.upper(),
                "axis": axis,
                "AVG": float(np.mean(values[:, i])),
                "MIN": float(np.min(values[:, i])),
                "MAX": float(np.max(values[:, i])),
                "runs": len(metrics),
                "failed": n_failed,
            })
    return rows


def compare(
    setup: FlightSetup,
    controllers: Mapping[str, OuterLaw],
    tasks: Mapping[str, TrajectoryTask],
    n_seeds: int = 3,
    disturbance: Optional[DisturbanceSpec] = None,
    gyro_noise_std: float = 0.0,
    t0: float = 0.5,
) -> Comparison:
    """
    Run every controller on every task for seeds 0..n_seeds-1

    A run that raises is recorded as a failure; its cell aggregates only the
    runs that completed (NaN when none did).

    Returns:
        Comparison with the AVG/MIN/MAX table, one row per run, and the failures
    """
    if n_seeds < 1:
        raise ValueError(f"n_seeds must be at least 1, got {n_seeds}")
    table_rows, run_rows, failures = [], [], []
    for task_name, task in tasks.items():
        for ctrl_name, controller in controllers.items():
            done: List[RunMetrics] = []
            n_failed = 0
            for seed in range(n_seeds):
                try:
                    _, metrics = run_closed_loop(setup, controller, task, seed, disturbance,
                                                 gyro_noise_std=gyro_noise_std, t0=t0)
                except (TubeMavError, ValueError) as e:
                    n_failed += 1
                    failures.append(f"{task_name}/{ctrl_name}/seed {seed}: {e}")
                    logger.error(f"Run failed ({task_name}, {ctrl_name}, seed {seed}): {e}")
                    continue
                done.append(metrics)
                run_rows.append({"task": task_name, "controller": ctrl_name, "seed": seed, **metrics.as_dict()})
            table_rows.extend(_summarize(task_name, ctrl_name, done, n_failed))
    return Comparison(pd.DataFrame(table_rows), pd.DataFrame(run_rows), failures)


def format_table(table: pd.DataFrame) -> str:
    """Console rendering in centimeters, failed cells marked"""
    shown = table.copy()
    for col in ("AVG", "MIN", "MAX"):
        shown[col] = [("FAILED" if np.isnan(v) else f"{v * 100:.3f}") for v in table[col]]
    return shown.to_string(index=False)
