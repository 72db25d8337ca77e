"""Tests for the policy network, its gradients, ADAM and the weights file"""

import numpy as np
import pytest

from src.exceptions import DimensionMismatch, FormatVersionMismatch
from src.imitation import AugmentedDataset
from src.mlp import (
    AdamState,
    Gradients,
    MlpPolicy,
    TrainConfig,
    adam_step,
    fit_normalization,
    forward,
    init_policy,
    mse_and_gradient,
    train,
    weights_read,
    weights_write,
)
from src.rtmpc import ReferenceWindow


def make_dataset(X, Y) -> AugmentedDataset:
    n = X.shape[0]
    return AugmentedDataset(X, Y, np.array(["augmented"] * n, dtype=object), np.zeros(n, dtype=np.int64))


def zero_policy(sizes):
    net = init_policy(sizes)
    return net.with_parameters([np.zeros_like(p) for p in net.parameters()])


class TestForward:
    """Test network evaluation"""

    def test_zero_weights(self):
        """Zero parameters give a zero output"""
        np.testing.assert_array_equal(forward(zero_policy((5, 4, 3)), np.ones(5)), np.zeros(3))

    def test_one_neuron(self):
        """A 1-1-1 network computes w2 tanh(w1 x)"""
        net = MlpPolicy([np.array([[0.7]]), np.array([[-1.3]])], [np.zeros(1), np.zeros(1)],
                        np.zeros(1), np.ones(1), np.zeros(1), np.ones(1))
        assert forward(net, np.array([0.4]))[0] == pytest.approx(-1.3 * np.tanh(0.7 * 0.4), rel=1e-15)

    def test_batch_matches_rows(self):
        """A batch evaluates like its rows one at a time"""
        net = init_policy((6, 8, 8, 3), seed=2)
        X = np.random.default_rng(0).normal(size=(10, 6))
        batch = forward(net, X)
        for i in range(10):
            np.testing.assert_allclose(batch[i], forward(net, X[i]), rtol=1e-12, atol=1e-15)

    def test_wrong_input_size(self):
        """Inputs of the wrong length are rejected"""
        with pytest.raises(DimensionMismatch):
            forward(init_policy((6, 4, 3)), np.zeros(5))

    def test_policy_acts_on_window(self):
        """act() assembles the input from the state and the window"""
        net = init_policy((10 + 6 * 2, 8, 3), seed=1)
        u = net.act(np.zeros(10), ReferenceWindow.constant(np.zeros(10), 2))
        assert u.shape == (3,)

    def test_layer_mismatch(self):
        """Consecutive layers must agree in size"""
        with pytest.raises(DimensionMismatch):
            MlpPolicy([np.zeros((4, 3)), np.zeros((2, 5))], [np.zeros(4), np.zeros(2)],
                      np.zeros(3), np.ones(3), np.zeros(2), np.ones(2))


class TestGradient:
    """Test the analytic loss gradient"""

    def test_perfect_fit(self):
        """Targets equal to the output give zero loss and zero gradient"""
        net = init_policy((4, 5, 2), seed=3)
        X = np.random.default_rng(1).normal(size=(8, 4))
        loss, grads = mse_and_gradient(net, X, forward(net, X))
        assert loss == 0.0
        for g in grads.parameters():
            np.testing.assert_array_equal(g, 0.0)

    def test_linear_layer(self):
        """A single linear layer has gradient 2 (y_hat - y) x' / B"""
        net = init_policy((3, 2), seed=4)
        X = np.array([[0.5, -1.0, 2.0]])
        Y = np.array([[0.1, 0.2]])
        _, grads = mse_and_gradient(net, X, Y)
        err = forward(net, X) - Y
        np.testing.assert_allclose(grads.weights[0], 2.0 * err.T @ X, rtol=1e-12)
        np.testing.assert_allclose(grads.biases[0], 2.0 * err[0], rtol=1e-12)

    def test_finite_differences(self):
        """Every parameter gradient agrees with central differences"""
        rng = np.random.default_rng(5)
        X = rng.normal(size=(12, 4))
        Y = rng.normal(size=(12, 2))
        net = fit_normalization(init_policy((4, 5, 5, 2), seed=6), X * 2.0 + 1.0, Y * 3.0)
        weights = np.array([1.0, 2.0])
        _, grads = mse_and_gradient(net, X, Y, weights)
        params = net.parameters()
        h = 1e-6
        for k, (p, g) in enumerate(zip(params, grads.parameters())):
            fd = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                plus = [q.copy() for q in params]
                minus = [q.copy() for q in params]
                plus[k][idx] += h
                minus[k][idx] -= h
                lp, _ = mse_and_gradient(net.with_parameters(plus), X, Y, weights)
                lm, _ = mse_and_gradient(net.with_parameters(minus), X, Y, weights)
                fd[idx] = (lp - lm) / (2 * h)
            rel = np.linalg.norm(fd - g) / max(np.linalg.norm(fd) + np.linalg.norm(g), 1e-12)
            assert rel <= 1e-4, f"parameter block {k}: relative error {rel:.2e}"


class TestAdam:
    """Test the optimizer step"""

    def test_first_step_is_signed_learning_rate(self):
        """With zero moments the first step moves every parameter by lr sign(g)"""
        net = init_policy((3, 4, 2), seed=0)
        rng = np.random.default_rng(2)
        g = [np.where(rng.random(p.shape) > 0.5, 0.5, -0.3) for p in net.parameters()]
        grads = Gradients(g[0::2], g[1::2])
        cfg = TrainConfig(lr=1e-3)
        new, state = adam_step(net, grads, AdamState.zeros(net), cfg)
        assert state.t == 1
        for p_new, p_old, gi in zip(new.parameters(), net.parameters(), g):
            np.testing.assert_allclose(p_new, p_old - cfg.lr * np.sign(gi), atol=1e-10)

    def test_zero_gradient(self):
        """Zero gradients with zero moments leave the parameters unchanged"""
        net = init_policy((3, 4, 2), seed=0)
        zeros = [np.zeros_like(p) for p in net.parameters()]
        new, _ = adam_step(net, Gradients(zeros[0::2], zeros[1::2]), AdamState.zeros(net), TrainConfig())
        for a, b in zip(new.parameters(), net.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_state_shape_mismatch(self):
        """Optimizer state must match the network"""
        net = init_policy((3, 4, 2))
        other = init_policy((3, 5, 2))
        zeros = [np.zeros_like(p) for p in net.parameters()]
        with pytest.raises(DimensionMismatch):
            adam_step(net, Gradients(zeros[0::2], zeros[1::2]), AdamState.zeros(other), TrainConfig())


class TestTrain:
    """Test mini-batch training"""

    def test_identical_rows(self):
        """Identical rows are fit to zero loss"""
        X = np.tile(np.random.default_rng(0).normal(size=8), (64, 1))
        Y = np.tile([0.1, -0.2, 0.3], (64, 1))
        history = []
        net = train(make_dataset(X, Y), TrainConfig(epochs=15, batch_size=16), history=history)
        assert len(history) == 16
        assert history[-1] <= 1e-6
        np.testing.assert_allclose(forward(net, X[0]), Y[0], atol=1e-6)

    def test_loss_decreases(self):
        """Training lowers the loss on a smooth regression problem"""
        rng = np.random.default_rng(1)
        X = rng.normal(size=(512, 6))
        Y = np.tanh(X @ rng.normal(size=(6, 3)) * 0.5)
        history = []
        train(make_dataset(X, Y), TrainConfig(lr=1e-2, epochs=20, batch_size=64), history=history)
        assert history[-1] < history[0]

    def test_zero_learning_rate(self):
        """lr = 0 returns the initial weights"""
        rng = np.random.default_rng(2)
        ds = make_dataset(rng.normal(size=(40, 5)), rng.normal(size=(40, 3)))
        net = train(ds, TrainConfig(lr=0.0, epochs=2, batch_size=8, seed=7), sizes=(5, 6, 3))
        init = init_policy((5, 6, 3), seed=7)
        for a, b in zip(net.parameters(), init.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_history_is_plain_mse(self):
        """The recorded loss is the unweighted mean of ||pi(x) - u||^2, not the scale-weighted training loss"""
        rng = np.random.default_rng(4)
        X = rng.normal(size=(60, 5))
        Y = rng.normal(size=(60, 3)) * np.array([1.0, 100.0, 0.01])
        history = []
        net = train(make_dataset(X, Y), TrainConfig(lr=0.0, epochs=1, batch_size=16, seed=3), sizes=(5, 6, 3),
                    history=history)
        plain = np.mean(np.sum((forward(net, X) - Y) ** 2, axis=1))
        assert history[0] == pytest.approx(plain, rel=1e-12)
        assert history[1] == pytest.approx(plain, rel=1e-12)
        assert mse_and_gradient(net, X, Y)[0] == pytest.approx(plain, rel=1e-12)
        weighted, _ = mse_and_gradient(net, X, Y, 1.0 / net.out_scale ** 2)
        assert weighted != pytest.approx(plain, rel=1e-3)

    def test_deterministic(self):
        """A fixed seed gives bit-identical weights"""
        rng = np.random.default_rng(3)
        ds = make_dataset(rng.normal(size=(100, 5)), rng.normal(size=(100, 3)))
        cfg = TrainConfig(epochs=3, batch_size=32, seed=11)
        a = train(ds, cfg, sizes=(5, 8, 3))
        b = train(ds, cfg, sizes=(5, 8, 3))
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa, pb)

    def test_empty_dataset(self):
        """Training needs at least one row"""
        with pytest.raises(ValueError):
            train(AugmentedDataset.empty(5))

    def test_invalid_config(self):
        """Negative learning rates and empty epochs are rejected"""
        with pytest.raises(ValueError):
            TrainConfig(lr=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)


class TestWeightsFile:
    """Test the weights text format"""

    def test_round_trip(self, tmp_path):
        """Parameters and outputs survive a write/read exactly"""
        X = np.random.default_rng(4).normal(size=(20, 7))
        net = fit_normalization(init_policy((7, 5, 3), seed=8), X, X[:, :3] * 2.0)
        path = tmp_path / "policy.txt"
        weights_write(net, path)
        back = weights_read(path)
        assert back.sizes == (7, 5, 3)
        for a, b in zip(back.parameters(), net.parameters()):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(forward(back, X), forward(net, X))

    def test_header(self, tmp_path):
        """The file starts with the format version and the layer sizes"""
        path = tmp_path / "policy.txt"
        weights_write(init_policy((4, 3, 2)), path)
        lines = path.read_text().splitlines()
        assert lines[0] == "#mlpfmt=1"
        assert lines[1] == "4 3 2"

    def test_wrong_layer_count(self, tmp_path):
        """A size line that disagrees with the body is rejected"""
        path = tmp_path / "policy.txt"
        weights_write(init_policy((4, 3, 2)), path)
        lines = path.read_text().splitlines()
        lines[1] = "4 3 3 2"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatVersionMismatch):
            weights_read(path)

    def test_wrong_header(self, tmp_path):
        """Unknown format versions are rejected"""
        path = tmp_path / "policy.txt"
        path.write_text("#mlpfmt=9\n1 1\n0\n0\n0\n1\n0\n1\n")
        with pytest.raises(FormatVersionMismatch):
            weights_read(path)
