"""Fully connected tanh policy network with MSE training and ADAM"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.exceptions import DimensionMismatch, FormatVersionMismatch, NonFiniteLoss
from src.imitation import AugmentedDataset, assemble_input
from src.rtmpc import ReferenceWindow

logger = logging.getLogger(__name__)

MLP_HEADER = "#mlpfmt=1"
DEFAULT_SIZES = (310, 32, 32, 3)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 15
    batch_size: int = 256
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    normalize: bool = True

    def __post_init__(self):
        # lr = 0 is accepted: it freezes the network
        if self.lr < 0:
            raise ValueError(f"Learning rate must be non-negative, got {self.lr}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")


@dataclass
class MlpPolicy:
    """
    Dense network: tanh on hidden layers, identity output

    Weights are stored as (n_out, n_in) per layer. Inputs are standardized
    with (in_mean, in_scale) on entry and outputs mapped back with
    (out_mean, out_scale) on exit.
    """

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    in_mean: np.ndarray
    in_scale: np.ndarray
    out_mean: np.ndarray
    out_scale: np.ndarray

    name = "policy"

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise DimensionMismatch("Need one bias vector per weight matrix")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise DimensionMismatch(f"Layer {i}: weight {W.shape} and bias {b.shape} disagree")
            if i > 0 and W.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionMismatch(f"Layer {i} expects {W.shape[1]} inputs, previous layer gives {self.weights[i - 1].shape[0]}")
        if self.in_mean.shape != (self.sizes[0],) or self.in_scale.shape != (self.sizes[0],):
            raise DimensionMismatch("Input normalization does not match the input layer")
        if self.out_mean.shape != (self.sizes[-1],) or self.out_scale.shape != (self.sizes[-1],):
            raise DimensionMismatch("Output normalization does not match the output layer")
        if np.any(self.in_scale <= 0) or np.any(self.out_scale <= 0):
            raise ValueError("Normalization scales must be positive")

    @property
    def sizes(self) -> Tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(W.shape[0] for W in self.weights)

    def parameters(self) -> List[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def with_parameters(self, params: Sequence[np.ndarray]) -> "MlpPolicy":
        return MlpPolicy(list(params[0::2]), list(params[1::2]), self.in_mean, self.in_scale,
                         self.out_mean, self.out_scale)

    def reset(self) -> None:
        pass

    def act(self, x_t: np.ndarray, ref: ReferenceWindow) -> np.ndarray:
        """Outer-loop law interface: command from the state and the reference window"""
        return forward(self, assemble_input(x_t, ref))


@dataclass
class Gradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def parameters(self) -> List[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, net: MlpPolicy) -> "AdamState":
        params = net.parameters()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def init_policy(sizes: Sequence[int] = DEFAULT_SIZES, seed: int = 0) -> MlpPolicy:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases, identity normalization"""
    if len(sizes) < 2:
        raise ValueError(f"Need at least input and output sizes, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpPolicy(weights, biases, np.zeros(sizes[0]), np.ones(sizes[0]),
                     np.zeros(sizes[-1]), np.ones(sizes[-1]))


def _scale(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    # constant columns are left unscaled
    return mean, np.where(std > 1e-12, std, 1.0)


def fit_normalization(net: MlpPolicy, inputs: np.ndarray, targets: np.ndarray) -> MlpPolicy:
    in_mean, in_scale = _scale(np.asarray(inputs, dtype=float))
    out_mean, out_scale = _scale(np.asarray(targets, dtype=float))
    return MlpPolicy([W.copy() for W in net.weights], [b.copy() for b in net.biases],
                     in_mean, in_scale, out_mean, out_scale)


def _check_input(net: MlpPolicy, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.sizes[0]:
        raise DimensionMismatch(f"Network expects {net.sizes[0]} inputs, got {x.shape[-1]}")
    return x


def _activations(net: MlpPolicy, x: np.ndarray) -> List[np.ndarray]:
    h = [(x - net.in_mean) / net.in_scale]
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = h[-1] @ W.T + b
        h.append(z if i == last else np.tanh(z))
    return h


def forward(net: MlpPolicy, x: np.ndarray) -> np.ndarray:
    """
    Evaluate the network on one input vector or a batch of rows

    Raises:
        DimensionMismatch: If the last axis differs from the input layer size
    """
    x = _check_input(net, x)
    return net.out_mean + net.out_scale * _activations(net, x)[-1]


def mse_and_gradient(net: MlpPolicy, inputs: np.ndarray, targets: np.ndarray,
                     weights: Optional[np.ndarray] = None) -> Tuple[float, Gradients]:
    """
    Batch loss mean_b sum_j w_j (y_hat_bj - y_bj)^2 and its parameter gradient

    Args:
        net: Network
        inputs: (B, n_in) rows
        targets: (B, n_out) rows
        weights: Per-output weights (ones by default)

    Returns:
        (loss, Gradients) by reverse-mode accumulation
    """
    X = np.atleast_2d(_check_input(net, inputs))
    Y = np.atleast_2d(np.asarray(targets, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("Empty batch")
    w = np.ones(Y.shape[1]) if weights is None else np.asarray(weights, dtype=float)
    h = _activations(net, X)
    err = net.out_mean + net.out_scale * h[-1] - Y
    n = X.shape[0]
    loss = float(np.sum(w * err ** 2) / n)

    delta = 2.0 * w * err * net.out_scale / n
    gW: List[np.ndarray] = [np.empty(0)] * len(net.weights)
    gb: List[np.ndarray] = [np.empty(0)] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        gW[i] = delta.T @ h[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i]) * (1.0 - h[i] ** 2)
    return loss, Gradients(gW, gb)


def adam_step(net: MlpPolicy, grads: Gradients, state: AdamState,
              cfg: TrainConfig) -> Tuple[MlpPolicy, AdamState]:
    """Bias-corrected ADAM update; returns the new network and optimizer state"""
    params = net.parameters()
    g_all = grads.parameters()
    if len(state.m) != len(params) or any(m.shape != p.shape for m, p in zip(state.m, params)):
        raise DimensionMismatch("Optimizer state does not match the network parameters")
    t = state.t + 1
    m_new, v_new, updated = [], [], []
    for p, g, m, v in zip(params, g_all, state.m, state.v):
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g ** 2
        m_hat = m / (1.0 - cfg.beta1 ** t)
        v_hat = v / (1.0 - cfg.beta2 ** t)
        updated.append(p - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps))
        m_new.append(m)
        v_new.append(v)
    return net.with_parameters(updated), AdamState(m_new, v_new, t)


def dataset_mse(net: MlpPolicy, inputs: np.ndarray, targets: np.ndarray) -> float:
    """Unweighted mean over rows of ||pi(x) - u||^2"""
    err = np.atleast_2d(forward(net, inputs)) - np.atleast_2d(np.asarray(targets, dtype=float))
    return float(np.mean(np.sum(err ** 2, axis=1)))


def train(ds: AugmentedDataset, cfg: TrainConfig = TrainConfig(), sizes: Optional[Sequence[int]] = None,
          history: Optional[List[float]] = None) -> MlpPolicy:
    """
    Fit a policy to the dataset with mini-batch ADAM

    The loss is weighted by 1 / out_scale^2 so every command channel counts
    equally. Shuffling uses cfg.seed; the final-epoch network is returned.

    Args:
        ds: Training rows
        cfg: Optimizer settings
        sizes: Layer sizes (input and output sizes taken from the dataset by default)
        history: Receives the unweighted full-dataset MSE before training and after each epoch

    Raises:
        NonFiniteLoss: If a batch loss becomes NaN or Inf
    """
    if len(ds) == 0:
        raise ValueError("Cannot train on an empty dataset")
    X, Y = ds.inputs, ds.targets
    sizes = tuple(sizes) if sizes is not None else (X.shape[1], 32, 32, Y.shape[1])
    net = init_policy(sizes, cfg.seed)
    if cfg.normalize:
        net = fit_normalization(net, X, Y)
    w = 1.0 / net.out_scale ** 2
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.zeros(net)
    losses = history if history is not None else []

    initial = dataset_mse(net, X, Y)
    losses.append(initial)
    n = len(ds)
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, grads = mse_and_gradient(net, X[idx], Y[idx], w)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"Loss became {loss} in epoch {epoch}")
            net, state = adam_step(net, grads, state, cfg)
        epoch_loss = dataset_mse(net, X, Y)
        losses.append(epoch_loss)
        logger.info(f"Epoch {epoch}/{cfg.epochs}: MSE {epoch_loss:.6g}")

    if losses[-1] > initial:
        logger.warning(f"Final MSE {losses[-1]:.6g} above initial MSE {initial:.6g}")
    return net


def _format(values: np.ndarray) -> str:
    return " ".join(f"{v:.17g}" for v in np.ravel(values))


def weights_write(net: MlpPolicy, path: Union[str, Path]) -> None:
    lines = [MLP_HEADER, " ".join(str(s) for s in net.sizes)]
    for W, b in zip(net.weights, net.biases):
        lines.extend(_format(row) for row in W)
        lines.append(_format(b))
    for vec in (net.in_mean, net.in_scale, net.out_mean, net.out_scale):
        lines.append(_format(vec))
    Path(path).write_text("\n".join(lines) + "\n")


def weights_read(path: Union[str, Path]) -> MlpPolicy:
    """
    Read a weights file written by weights_write

    Raises:
        FormatVersionMismatch: Unknown header or a layer layout that does not match the size line
    """
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != MLP_HEADER:
        raise FormatVersionMismatch(f"{path}: expected '{MLP_HEADER}' header")
    try:
        sizes = [int(s) for s in lines[1].split()]
    except (IndexError, ValueError):
        raise FormatVersionMismatch(f"{path}: malformed layer size line")
    expected = sum(n_out + 1 for n_out in sizes[1:]) + 4 + 2
    if len(sizes) < 2 or len(lines) != expected:
        raise FormatVersionMismatch(f"{path}: {len(lines)} lines do not match layer sizes {sizes}")

    def parse(line: str, n: int) -> np.ndarray:
        values = np.array([float(v) for v in line.split()])
        if values.size != n:
            raise FormatVersionMismatch(f"{path}: expected {n} values, found {values.size}")
        return values

    pos = 2
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        weights.append(np.array([parse(lines[pos + r], n_in) for r in range(n_out)]))
        pos += n_out
        biases.append(parse(lines[pos], n_out))
        pos += 1
    in_mean, in_scale = parse(lines[pos], sizes[0]), parse(lines[pos + 1], sizes[0])
    out_mean, out_scale = parse(lines[pos + 2], sizes[-1]), parse(lines[pos + 3], sizes[-1])
    return MlpPolicy(weights, biases, in_mean, in_scale, out_mean, out_scale)
