"""Shared fixtures for the TubeMAV test suite"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from config import TestingConfig
from src.cascade import build_setup
from src.lin_model import BoxSet, DiscreteLtiModel
from src.rtmpc import CostParams, ReferenceWindow, TubeController, lqr_design


@pytest.fixture(scope="session")
def testing_setup():
    """Controller stack designed with the small testing budgets"""
    return build_setup(TestingConfig())


def double_integrator(dt: float = 0.1):
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[0.5 * dt ** 2], [dt]])
    return A, B


def small_problem(u_max: float = 1e9, x_max: float = 1e9, r_weight: float = 0.1, dt: float = 0.1):
    """Double-integrator tracking problem with a pinned initial state (Z = 0)"""
    A, B = double_integrator(dt)
    model = DiscreteLtiModel(A, B, dt, BoxSet.zeros(2))
    cost = CostParams(np.eye(2), np.array([[r_weight]]))
    K, Px = lqr_design(A, B, cost.Qx, cost.Ru)
    X = BoxSet.symmetric([x_max, x_max])
    U = BoxSet.symmetric([u_max])
    tube = TubeController(K, Px, BoxSet.zeros(2), X, U, X, U)
    return model, cost, tube


def condensed(model: DiscreteLtiModel, N: int):
    """Prediction matrices with x_i = Phi_i x0 + Gamma_i u"""
    nx, nu = model.nx, model.nu
    Phi = [np.eye(nx)]
    Gamma = [np.zeros((nx, N * nu))]
    for i in range(N):
        Phi.append(model.A @ Phi[-1])
        G = model.A @ Gamma[-1]
        G[:, i * nu:(i + 1) * nu] += model.B
        Gamma.append(G)
    return Phi, Gamma


def condensed_cost(u: np.ndarray, x0: np.ndarray, ref: ReferenceWindow, model, cost, Px) -> float:
    N = ref.N
    Phi, Gamma = condensed(model, N)
    total = 0.0
    for i in range(N + 1):
        dx = Phi[i] @ x0 + Gamma[i] @ u - ref.states[i]
        total += dx @ (Px if i == N else cost.Qx) @ dx
    U = u.reshape(N, model.nu)
    return float(total + np.einsum("ij,jk,ik->", U, cost.Ru, U))
