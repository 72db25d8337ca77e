"""Demonstration collection, tube-based augmentation and dataset files"""

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from src.cascade import FlightSetup, FlightStack
from src.exceptions import DimensionMismatch, FormatVersionMismatch
from src.lin_model import NX, BoxSet
from src.rigid_body_sim import SimConfig
from src.rtmpc import ReferenceWindow
from src.trajectories import TrajectoryTask, make_reference

logger = logging.getLogger(__name__)

DATASET_HEADER = "#fmt=1"
ROW_TAGS = ("demo", "augmented")
REF_CHANNELS = 6


def input_size(N: int, nx: int = NX) -> int:
    return nx + REF_CHANNELS * N


def assemble_input(x: np.ndarray, window: Union[ReferenceWindow, np.ndarray]) -> np.ndarray:
    """
    Policy input [x; p_des(1), v_des(1), ..., p_des(N), v_des(N)]

    Args:
        x: Linear state (10)
        window: Reference window with N+1 rows (row 0 is not used)

    Returns:
        Vector of length 10 + 6 N
    """
    x = np.asarray(x, dtype=float)
    states = window.states if isinstance(window, ReferenceWindow) else np.atleast_2d(np.asarray(window, dtype=float))
    if x.shape != (NX,) or states.ndim != 2 or states.shape[1] != NX:
        raise DimensionMismatch(f"Expected state ({NX},) and window (N+1, {NX}), got {x.shape} and {states.shape}")
    return np.concatenate([x, states[1:, :REF_CHANNELS].reshape(-1)])


@dataclass
class DemoStep:
    x: np.ndarray
    u: np.ndarray
    u_bar: np.ndarray
    x_bar: np.ndarray
    window: np.ndarray


@dataclass
class Demonstration:
    """T+1 logged outer-loop decisions of the expert"""

    task: str
    Tc: float
    steps: List[DemoStep] = field(default_factory=list)

    def __post_init__(self):
        lengths = {s.window.shape[0] for s in self.steps}
        if len(lengths) > 1:
            raise ValueError(f"Demonstration windows differ in length: {sorted(lengths)}")
        for s in self.steps:
            if not (np.all(np.isfinite(s.x)) and np.all(np.isfinite(s.u))):
                raise ValueError("Demonstration contains non-finite states or inputs")

    @property
    def T(self) -> int:
        return len(self.steps) - 1

    @property
    def N(self) -> int:
        return self.steps[0].window.shape[0] - 1 if self.steps else 0

    def stacked(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.steps])


def collect_demonstration(task: TrajectoryTask, setup: FlightSetup, T: int, law=None) -> Demonstration:
    """
    Fly the expert on an undisturbed task and log T+1 decisions

    The simulation runs without external disturbances and without the
    torque observer.

    Args:
        task: Flight task providing the reference
        setup: FlightSetup holding the designed controllers
        T: Number of steps (T+1 tuples are logged)
        law: Outer-loop law to imitate (the tube MPC without fallback by default)

    Returns:
        Demonstration

    Raises:
        Infeasible: If the tracking QP has no solution at some step
    """
    if T < 0:
        raise ValueError(f"T must be non-negative, got {T}")
    law = law if law is not None else setup.rtmpc(fallback=False)
    stack = FlightStack(setup, law, SimConfig(Ts=setup.Ts), use_observer=False)
    reference = make_reference(task, setup.Tc, setup.N)
    log = stack.run(reference, n_outer=T + 1, record_outer=True)
    steps = [DemoStep(r.x, r.u, r.u_bar, r.x_bar, r.window) for r in log.records]
    logger.info(f"Collected {len(steps)}-step demonstration on '{task.kind}'")
    return Demonstration(task.kind, setup.Tc, steps)


def write_demonstration(demo: Demonstration, path: Union[str, Path]) -> None:
    np.savez(
        path,
        task=np.array(demo.task),
        Tc=np.array(demo.Tc),
        x=demo.stacked("x"),
        u=demo.stacked("u"),
        u_bar=demo.stacked("u_bar"),
        x_bar=demo.stacked("x_bar"),
        window=demo.stacked("window"),
    )


def read_demonstration(path: Union[str, Path]) -> Demonstration:
    with np.load(path) as data:
        steps = [
            DemoStep(data["x"][i], data["u"][i], data["u_bar"][i], data["x_bar"][i], data["window"][i])
            for i in range(data["x"].shape[0])
        ]
        return Demonstration(str(data["task"]), float(data["Tc"]), steps)


@dataclass
class AugmentedDataset:
    """Rows of (policy input, target command), tagged demo or augmented"""

    inputs: np.ndarray
    targets: np.ndarray
    tags: np.ndarray
    steps: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        self.tags = np.asarray(self.tags, dtype=object)
        self.steps = np.asarray(self.steps, dtype=np.int64)
        n = self.inputs.shape[0]
        if self.inputs.ndim != 2 or self.targets.ndim != 2:
            raise DimensionMismatch("Dataset inputs and targets must be 2-D")
        if not (self.targets.shape[0] == self.tags.shape[0] == self.steps.shape[0] == n):
            raise DimensionMismatch("Dataset columns differ in length")
        bad = set(self.tags.tolist()) - set(ROW_TAGS)
        if bad:
            raise ValueError(f"Unknown row tags {sorted(bad)}")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.targets.shape[1]

    @classmethod
    def empty(cls, input_dim: int, output_dim: int = 3) -> "AugmentedDataset":
        return cls(np.zeros((0, input_dim)), np.zeros((0, output_dim)), np.array([], dtype=object),
                   np.zeros(0, dtype=np.int64))

    def subset(self, idx: np.ndarray) -> "AugmentedDataset":
        return AugmentedDataset(self.inputs[idx], self.targets[idx], self.tags[idx], self.steps[idx])

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs).tobytes())
        h.update(np.ascontiguousarray(self.targets).tobytes())
        h.update("\n".join(self.tags.tolist()).encode())
        h.update(np.ascontiguousarray(self.steps).tobytes())
        return h.hexdigest()

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"tag": self.tags, "t": self.steps})
        ins = pd.DataFrame(self.inputs, columns=[f"in_{i}" for i in range(self.input_dim)])
        outs = pd.DataFrame(self.targets, columns=[f"out_{i}" for i in range(self.output_dim)])
        return pd.concat([frame, ins, outs], axis=1)


def augment(demo: Demonstration, Z: BoxSet, K: np.ndarray, n_extra_per_step: int = 200,
            seed: int = 0) -> AugmentedDataset:
    """
    Sample extra states uniformly inside the tube around the nominal plan

    For step t each sample x+ is drawn uniformly from x_bar_t + Z and labeled
    with the ancillary command u_bar_t + K (x+ - x_bar_t). Rows are ordered by
    t with the demonstration row first; each step draws from its own RNG
    substream of `seed`.

    Returns:
        Dataset of (T+1) (1 + n_extra_per_step) rows
    """
    if n_extra_per_step < 0:
        raise ValueError(f"n_extra_per_step must be non-negative, got {n_extra_per_step}")
    if not demo.steps:
        return AugmentedDataset.empty(input_size(0))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    z = Z.half_width
    streams = np.random.SeedSequence(seed).spawn(len(demo.steps))
    per_step = 1 + n_extra_per_step
    n_rows = len(demo.steps) * per_step
    d = input_size(demo.N, demo.steps[0].x.size)

    inputs = np.empty((n_rows, d))
    targets = np.empty((n_rows, K.shape[0]))
    tags = np.empty(n_rows, dtype=object)
    steps = np.repeat(np.arange(len(demo.steps)), per_step)

    for t, (step, stream) in enumerate(zip(demo.steps, streams)):
        row = t * per_step
        ref_part = step.window[1:, :REF_CHANNELS].reshape(-1)
        inputs[row] = np.concatenate([step.x, ref_part])
        targets[row] = step.u
        tags[row] = "demo"
        if n_extra_per_step == 0:
            continue
        rng = np.random.default_rng(stream)
        dx = rng.uniform(-z, z, size=(n_extra_per_step, z.size))
        x_plus = step.x_bar + dx
        rows = slice(row + 1, row + per_step)
        inputs[rows, :x_plus.shape[1]] = x_plus
        inputs[rows, x_plus.shape[1]:] = ref_part
        targets[rows] = step.u_bar + dx @ K.T
        tags[rows] = "augmented"

    logger.info(f"Augmented {len(demo.steps)} steps with {n_extra_per_step} tube samples each: {n_rows} rows")
    return AugmentedDataset(inputs, targets, tags, steps)


def dataset_write(ds: AugmentedDataset, path: Union[str, Path]) -> str:
    """Write the versioned CSV; returns the checksum"""
    with open(path, "w", newline="") as f:
        f.write(f"{DATASET_HEADER}\n")
        ds.to_frame().to_csv(f, index=False, float_format="%.17g")
    return ds.checksum()


def dataset_read(path: Union[str, Path]) -> AugmentedDataset:
    """
    Read a dataset file written by dataset_write

    Raises:
        FormatVersionMismatch: Missing or unknown version line, or unexpected columns
    """
    with open(path, "r") as f:
        first = f.readline().strip()
    if first != DATASET_HEADER:
        raise FormatVersionMismatch(f"{path}: expected '{DATASET_HEADER}', found '{first[:40]}'")
    df = pd.read_csv(path, skiprows=1, float_precision="round_trip", dtype={"tag": str})
    in_cols = [c for c in df.columns if c.startswith("in_")]
    out_cols = [c for c in df.columns if c.startswith("out_")]
    expected = ["tag", "t"] + [f"in_{i}" for i in range(len(in_cols))] + [f"out_{i}" for i in range(len(out_cols))]
    if list(df.columns) != expected:
        raise FormatVersionMismatch(f"{path}: unexpected dataset columns")
    return AugmentedDataset(
        df[in_cols].to_numpy(dtype=float).reshape(len(df), len(in_cols)),
        df[out_cols].to_numpy(dtype=float).reshape(len(df), len(out_cols)),
        df["tag"].to_numpy(dtype=object),
        df["t"].to_numpy(dtype=np.int64),
    )


def split_holdout(ds: AugmentedDataset, fraction: float = 0.1,
                  seed: int = 0) -> Tuple[AugmentedDataset, AugmentedDataset]:
    """Random (train, holdout) split with round(fraction * rows) held out"""
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"Holdout fraction must be in [0, 1), got {fraction}")
    perm = np.random.default_rng(seed).permutation(len(ds))
    n_hold = int(round(fraction * len(ds)))
    return ds.subset(np.sort(perm[n_hold:])), ds.subset(np.sort(perm[:n_hold]))


def ancillary_targets(ds: AugmentedDataset, demo: Demonstration, K: np.ndarray,
                      nx: Optional[int] = None) -> np.ndarray:
    """Ancillary-law commands for every dataset row, recomputed from the demonstration plan"""
    nx = nx or demo.steps[0].x.size
    K = np.atleast_2d(np.asarray(K, dtype=float))
    x_bar = demo.stacked("x_bar")[ds.steps]
    u_bar = demo.stacked("u_bar")[ds.steps]
    return u_bar + (ds.inputs[:, :nx] - x_bar) @ K.T
