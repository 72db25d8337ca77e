"""Robust tube MPC - LQR ingredients, Monte-Carlo tube, tightening, tracking QP, setpoints"""

import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import osqp
from scipy import sparse
from scipy.sparse.linalg import spsolve

from src.attitude_control import AttitudeSetpoint
from src.exceptions import (
    DimensionMismatch,
    Divergence,
    EmptyTightenedSet,
    Infeasible,
    MaxIter,
    NotStabilizable,
)
from src.lin_model import (
    BoxSet,
    DiscreteLtiModel,
    EulerZyx,
    euler_to_rotation,
    input_names,
    state_names,
    yaw_frame_transform,
)
from src.riccati import solve_dare_iterative

logger = logging.getLogger(__name__)

TUBE_CHUNK = 250
DIVERGENCE_RADIUS = 1e6
MAX_VERTEX_DIM = 16
SAMPLING_MODES = ("vertex", "uniform")
EULER_RATE_VARIANTS = ("printed", "zyx")


def _check_spd(name: str, M: np.ndarray) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T):
        raise ValueError(f"{name} must be symmetric")
    if np.any(np.linalg.eigvalsh(M) <= 0):
        raise ValueError(f"{name} must be positive definite")
    return M


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M))))


@dataclass(frozen=True)
class CostParams:
    Qx: np.ndarray
    Ru: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Qx", _check_spd("Qx", self.Qx))
        object.__setattr__(self, "Ru", _check_spd("Ru", self.Ru))

    @classmethod
    def diagonal(cls, q_pos: float, q_vel: float, q_att: float, q_cmd: float,
                 r_rate: float, r_thrust: float) -> "CostParams":
        """Diagonal weights on the hover model's state and input groups"""
        Qx = np.diag([q_pos] * 3 + [q_vel] * 3 + [q_att] * 2 + [q_cmd] * 2)
        Ru = np.diag([r_rate, r_rate, r_thrust])
        return cls(Qx, Ru)

    def scaled_input_weight(self, factor: float) -> "CostParams":
        return CostParams(self.Qx, self.Ru * factor)


@dataclass(frozen=True)
class TubeController:
    """Ancillary gain, terminal cost, tube cross-section and tightened boxes"""

    K: np.ndarray
    Px: np.ndarray
    Z: BoxSet
    X_tight: BoxSet
    U_tight: BoxSet
    X: BoxSet
    U: BoxSet

    def __post_init__(self):
        if not np.allclose(self.Z.lo, -self.Z.hi):
            raise ValueError("Tube cross-section must be symmetric about the origin")
        if not (np.all(self.X_tight.lo >= self.X.lo - 1e-12) and np.all(self.X_tight.hi <= self.X.hi + 1e-12)):
            raise ValueError("Tightened state box must lie inside X")
        if not (np.all(self.U_tight.lo >= self.U.lo - 1e-12) and np.all(self.U_tight.hi <= self.U.hi + 1e-12)):
            raise ValueError("Tightened input box must lie inside U")


@dataclass(frozen=True)
class ReferenceWindow:
    """N+1 desired linear states, row i at t + i Tc"""

    states: np.ndarray

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if states.shape[0] < 1 or not np.all(np.isfinite(states)):
            raise ValueError("Reference window must be a finite (N+1, nx) array")
        object.__setattr__(self, "states", states)

    @property
    def N(self) -> int:
        return self.states.shape[0] - 1

    @classmethod
    def constant(cls, x: np.ndarray, N: int) -> "ReferenceWindow":
        return cls(np.tile(np.asarray(x, dtype=float), (N + 1, 1)))


@dataclass
class SafePlan:
    X_bar: np.ndarray
    U_bar: np.ndarray
    kkt_residual: float = 0.0
    objective: float = 0.0
    status: str = "optimal"
    iterations: int = 0

    @property
    def N(self) -> int:
        return self.U_bar.shape[0]

    def shifted(self, model: DiscreteLtiModel) -> "SafePlan":
        """Plan advanced by one step, repeating the last input"""
        u_last = self.U_bar[-1]
        x_next = model.A @ self.X_bar[-1] + model.B @ u_last
        return SafePlan(
            X_bar=np.vstack([self.X_bar[1:], x_next]),
            U_bar=np.vstack([self.U_bar[1:], u_last]),
            kkt_residual=np.nan,
            objective=np.nan,
            status="fallback",
        )


def lqr_design(A: np.ndarray, B: np.ndarray, Qx: np.ndarray, Ru: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Infinite-horizon discrete LQR

    Returns:
        (K, Px) with u = K x stabilizing and Px the Riccati solution

    Raises:
        NoConvergence: Riccati iteration cap reached
        NotStabilizable: Riccati residual stalled or rho(A + BK) >= 1
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Px, iterations = solve_dare_iterative(A, B, Qx, Ru)
    K = -np.linalg.solve(np.atleast_2d(Ru) + B.T @ Px @ B, B.T @ Px @ A)
    rho = spectral_radius(A + B @ K)
    if rho >= 1.0:
        raise NotStabilizable(f"LQR closed loop unstable (spectral radius {rho:.6f})")
    logger.info(f"LQR designed in {iterations} iterations, closed-loop spectral radius {rho:.4f}")
    return K, Px


def _sample_disturbances(rng: np.random.Generator, W: BoxSet, horizon: int, sampling: str) -> np.ndarray:
    if sampling == "vertex":
        upper = rng.integers(0, 2, size=(horizon, W.dim)).astype(bool)
        return np.where(upper, W.hi, W.lo)
    u = rng.random((horizon, W.dim))
    return W.lo + u * (W.hi - W.lo)


def compute_tube(
    A: np.ndarray,
    B: np.ndarray,
    K: np.ndarray,
    W: BoxSet,
    n_rollouts: int = 1000,
    horizon_steps: int = 500,
    seed: int = 42,
    sampling: str = "uniform",
) -> BoxSet:
    """
    Monte-Carlo estimate of the disturbance-invariant box of x+ = (A + BK) x + w

    Each rollout owns a substream spawned from `seed`, so the result does not
    depend on how rollouts are batched.

    Args:
        A, B: Discrete model
        K: Ancillary gain
        W: Origin-symmetric disturbance box
        n_rollouts: Number of rollouts from x = 0
        horizon_steps: Steps per rollout
        seed: Root seed
        sampling: "uniform" (w uniform in W) or "vertex" (w at random vertices of W, opt-in)

    Returns:
        Symmetric box of the componentwise max |x| over all rollouts and steps

    Raises:
        Divergence: If any rollout leaves the 1e6 ball
    """
    if sampling not in SAMPLING_MODES:
        raise ValueError(f"Unknown sampling mode '{sampling}', expected one of {SAMPLING_MODES}")
    if not np.allclose(W.lo, -W.hi):
        raise ValueError("Disturbance box must be symmetric about the origin")
    A_K = np.atleast_2d(A) + np.atleast_2d(B) @ np.atleast_2d(K)
    n = A_K.shape[0]
    streams = np.random.SeedSequence(seed).spawn(n_rollouts)

    z = np.zeros(n)
    for start in range(0, n_rollouts, TUBE_CHUNK):
        batch = streams[start:start + TUBE_CHUNK]
        w = np.stack([_sample_disturbances(np.random.default_rng(s), W, horizon_steps, sampling) for s in batch])
        x = np.zeros((len(batch), n))
        for k in range(horizon_steps):
            x = x @ A_K.T + w[:, k]
            np.maximum(z, np.abs(x).max(axis=0), out=z)
            if np.max(np.linalg.norm(x, axis=1)) > DIVERGENCE_RADIUS:
                raise Divergence(f"Tube rollout diverged at step {k} (rollouts {start}..{start + len(batch) - 1})")

    logger.info(f"Tube computed from {n_rollouts} x {horizon_steps} {sampling} samples: max |z| = {z.max():.4g}")
    return BoxSet.symmetric(z)


def _vertex_hull(K: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Componentwise max |K v| over the vertices v of the box [-z, z]"""
    if z.size > MAX_VERTEX_DIM:
        return np.abs(K) @ z
    vertices = np.array(list(itertools.product(*[(-zi, zi) for zi in z])))
    return np.abs(vertices @ K.T).max(axis=0)


def tighten(X: BoxSet, U: BoxSet, Z: BoxSet, K: np.ndarray) -> Tuple[BoxSet, BoxSet]:
    """
    Shrink the state box by Z and the input box by the hull of K Z

    Raises:
        EmptyTightenedSet: If any tightened interval is empty
    """
    z = Z.half_width
    K = np.atleast_2d(np.asarray(K, dtype=float))
    X_tight = BoxSet(X.lo + z, X.hi - z)
    kz = _vertex_hull(K, z)
    U_tight = BoxSet(U.lo + kz, U.hi - kz)
    for label, box, names in (("state", X_tight, state_names(X.dim)), ("input", U_tight, input_names(U.dim))):
        if box.is_empty:
            empty = [names[i] for i in np.flatnonzero(box.lo > box.hi)]
            raise EmptyTightenedSet(f"Tightened {label} box is empty along {', '.join(empty)}")
    return X_tight, U_tight


def design_tube_controller(
    model: DiscreteLtiModel,
    cost: CostParams,
    X: BoxSet,
    U: BoxSet,
    n_rollouts: int = 1000,
    horizon_steps: int = 500,
    seed: int = 42,
    sampling: str = "uniform",
) -> TubeController:
    K, Px = lqr_design(model.A, model.B, cost.Qx, cost.Ru)
    Z = compute_tube(model.A, model.B, K, model.W, n_rollouts, horizon_steps, seed, sampling)
    X_tight, U_tight = tighten(X, U, Z, K)
    logger.info(f"Tube controller ready: U_tight = [{U_tight.lo}, {U_tight.hi}]")
    return TubeController(K, Px, Z, X_tight, U_tight, X, U)


def write_tube(tube: TubeController, path: Union[str, Path]) -> None:
    """One line per state dimension: `name lo hi`"""
    names = state_names(tube.Z.dim)
    lines = [f"{names[i]} {tube.Z.lo[i]:.17g} {tube.Z.hi[i]:.17g}" for i in range(tube.Z.dim)]
    Path(path).write_text("\n".join(lines) + "\n")


class TrackingQp:
    """
    Sparse tracking QP over z = [x_0 .. x_N, u_0 .. u_{N-1}]

    The problem structure is built once; each solve updates the linear cost
    and the bounds. OSQP provides the first solution and the active set it
    identifies is then refined with a primal-dual active-set iteration on the
    reduced KKT system, which enforces the dynamics to round-off.
    """

    def __init__(self, model: DiscreteLtiModel, cost: CostParams, tube: TubeController, N: int,
                 eps: float = 1e-7, max_iter: int = 20000, polish_iter: int = 50):
        if N < 1:
            raise ValueError(f"Horizon must be at least 1, got {N}")
        self.model = model
        self.cost = cost
        self.tube = tube
        self.N = N
        self.polish_iter = polish_iter
        nx, nu = model.nx, model.nu
        self.n_var = (N + 1) * nx + N * nu
        self.n_eq = N * nx

        self.H = (2.0 * sparse.block_diag(
            [sparse.kron(sparse.eye(N), cost.Qx), sparse.csc_matrix(tube.Px), sparse.kron(sparse.eye(N), cost.Ru)]
        )).tocsc()
        Sx = sparse.kron(sparse.eye(N, N + 1, k=1), sparse.eye(nx)) - sparse.kron(sparse.eye(N, N + 1), model.A)
        Su = -sparse.kron(sparse.eye(N), model.B)
        self.E = sparse.hstack([Sx, Su]).tocsc()

        self.lb = np.concatenate([np.tile(tube.X_tight.lo, N + 1), np.tile(tube.U_tight.lo, N)])
        self.ub = np.concatenate([np.tile(tube.X_tight.hi, N + 1), np.tile(tube.U_tight.hi, N)])

        xn, un = state_names(nx), input_names(nu)
        self.var_names = [f"x_bar[{i}].{xn[j]}" for i in range(N + 1) for j in range(nx)]
        self.var_names += [f"u_bar[{i}].{un[j]}" for i in range(N) for j in range(nu)]
        self.eq_names = [f"dynamics[{i}].{xn[j]}" for i in range(N) for j in range(nx)]

        self._solver = osqp.OSQP()
        self._solver.setup(
            P=sparse.triu(self.H).tocsc(),
            q=np.zeros(self.n_var),
            A=sparse.vstack([self.E, sparse.eye(self.n_var)]).tocsc(),
            l=np.concatenate([np.zeros(self.n_eq), self.lb]),
            u=np.concatenate([np.zeros(self.n_eq), self.ub]),
            verbose=False,
            eps_abs=eps,
            eps_rel=eps,
            max_iter=max_iter,
        )
        self._warm: Optional[np.ndarray] = None

    def reset(self) -> None:
        self._warm = None

    def _linear_cost(self, ref: ReferenceWindow) -> np.ndarray:
        Q, Px = self.cost.Qx, self.tube.Px
        xdes = ref.states
        stage = -2.0 * (xdes[:-1] @ Q.T).reshape(-1)
        terminal = -2.0 * (Px @ xdes[-1])
        return np.concatenate([stage, terminal, np.zeros(self.N * self.model.nu)])

    def _bounds(self, x_t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        nx = self.model.nx
        z = self.tube.Z.half_width
        lb, ub = self.lb.copy(), self.ub.copy()
        lb[:nx] = np.maximum(lb[:nx], x_t - z)
        ub[:nx] = np.minimum(ub[:nx], x_t + z)
        bad = np.flatnonzero(lb > ub)
        if bad.size:
            raise Infeasible("Initial tube constraint incompatible with the tightened state box",
                             constraint=self.var_names[bad[0]])
        return lb, ub

    def _unpack(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        nx, nu, N = self.model.nx, self.model.nu, self.N
        X_bar = z[:(N + 1) * nx].reshape(N + 1, nx)
        U_bar = z[(N + 1) * nx:].reshape(N, nu)
        return X_bar, U_bar

    def _pack_warm(self, z: np.ndarray) -> np.ndarray:
        X_bar, U_bar = self._unpack(z)
        plan = SafePlan(X_bar, U_bar).shifted(self.model)
        return np.concatenate([plan.X_bar.reshape(-1), plan.U_bar.reshape(-1)])

    def _solve_reduced(self, fixed: np.ndarray, z_fix: np.ndarray, h: np.ndarray,
                       reg: float = 1e-14) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        free_idx = np.flatnonzero(~fixed)
        fixed_idx = np.flatnonzero(fixed)
        if free_idx.size == 0:
            return None
        H_rows = self.H[free_idx]
        Hff = H_rows[:, free_idx]
        Ef = self.E[:, free_idx]
        rhs_x = -h[free_idx]
        rhs_eq = np.zeros(self.n_eq)
        if fixed_idx.size:
            zF = z_fix[fixed_idx]
            rhs_x = rhs_x - H_rows[:, fixed_idx] @ zF
            rhs_eq = rhs_eq - self.E[:, fixed_idx] @ zF
        # quasi-definite: nonsingular even if fixing variables removes rank from E
        kkt = sparse.bmat([[Hff, Ef.T], [Ef, -reg * sparse.eye(self.n_eq)]], format="csc")
        sol = spsolve(kkt, np.concatenate([rhs_x, rhs_eq]))
        if not np.all(np.isfinite(sol)):
            return None
        z = z_fix.copy()
        z[free_idx] = sol[:free_idx.size]
        return z, sol[free_idx.size:]

    def _bound_multipliers(self, z: np.ndarray, nu: np.ndarray, h: np.ndarray) -> np.ndarray:
        return -(self.H @ z + h + self.E.T @ nu)

    def kkt_residual(self, z: np.ndarray, nu: np.ndarray, mu: np.ndarray, h: np.ndarray) -> float:
        """Scaled stationarity and equality residual"""
        Hz = self.H @ z
        stationarity = Hz + h + self.E.T @ nu + mu
        scale = max(1.0, float(np.max(np.abs(h))), float(np.max(np.abs(Hz))))
        primal = float(np.max(np.abs(self.E @ z))) if self.n_eq else 0.0
        return max(float(np.max(np.abs(stationarity))) / scale, primal)

    def _active_set_polish(self, z0: np.ndarray, mu0: np.ndarray, h: np.ndarray,
                           lb: np.ndarray, ub: np.ndarray):
        pinned = lb >= ub
        act_tol_u = 1e-6 * (1.0 + np.abs(ub))
        act_tol_l = 1e-6 * (1.0 + np.abs(lb))
        upper = ~pinned & (mu0 > 0) & (z0 >= ub - act_tol_u)
        lower = ~pinned & (mu0 < 0) & (z0 <= lb + act_tol_l)
        primal_tol = 1e-9
        dual_tol = 1e-9 * max(1.0, float(np.max(np.abs(h))))
        c = 1.0

        for it in range(1, self.polish_iter + 1):
            fixed = pinned | upper | lower
            z_fix = np.where(upper, ub, lb)
            solved = self._solve_reduced(fixed, z_fix, h)
            if solved is None:
                return None
            z, nu = solved
            mu = self._bound_multipliers(z, nu, h)
            mu[~fixed] = 0.0
            free = ~fixed
            primal_ok = not np.any(free & ((z > ub + primal_tol) | (z < lb - primal_tol)))
            dual_ok = not np.any((upper & (mu < -dual_tol)) | (lower & (mu > dual_tol)))
            if primal_ok and dual_ok:
                return z, nu, mu, it
            new_upper = ~pinned & (mu + c * (z - ub) > 0)
            new_lower = ~pinned & ~new_upper & (mu + c * (z - lb) < 0)
            if np.array_equal(new_upper, upper) and np.array_equal(new_lower, lower):
                return None
            upper, lower = new_upper, new_lower
        return None

    def _certificate_constraint(self, res) -> Optional[str]:
        cert = getattr(res, "prim_inf_cert", None)
        if cert is None or not np.all(np.isfinite(cert)) or cert.size == 0:
            return None
        idx = int(np.argmax(np.abs(cert)))
        return self.eq_names[idx] if idx < self.n_eq else self.var_names[idx - self.n_eq]

    def solve(self, x_t: np.ndarray, ref: ReferenceWindow) -> SafePlan:
        """
        Solve the tracking problem from the measured linear state

        Raises:
            Infeasible: Bounds conflict or solver certificate of infeasibility
            MaxIter: Neither OSQP nor the active-set refinement reached a solution
        """
        x_t = np.asarray(x_t, dtype=float)
        if ref.N != self.N or ref.states.shape[1] != self.model.nx:
            raise DimensionMismatch(f"Reference window {ref.states.shape} does not match N={self.N}, nx={self.model.nx}")
        h = self._linear_cost(ref)
        lb, ub = self._bounds(x_t)

        self._solver.update(q=h, l=np.concatenate([np.zeros(self.n_eq), lb]),
                            u=np.concatenate([np.zeros(self.n_eq), ub]))
        if self._warm is not None:
            self._solver.warm_start(x=self._warm)
        res = self._solver.solve()
        status = res.info.status
        if status.startswith("primal infeasible"):
            raise Infeasible("Tracking QP infeasible", constraint=self._certificate_constraint(res))
        if status not in ("solved", "solved inaccurate", "maximum iterations reached"):
            raise MaxIter(f"OSQP stopped with status '{status}'")

        z0 = np.clip(res.x, lb, ub)
        y = res.y
        polished = self._active_set_polish(z0, y[self.n_eq:], h, lb, ub)
        if polished is None:
            if status != "solved":
                raise MaxIter(f"Active-set refinement failed after OSQP status '{status}'")
            logger.warning("Active-set refinement failed, using the OSQP solution")
            z, nu, mu, iterations = z0, y[:self.n_eq], y[self.n_eq:], int(res.info.iter)
        else:
            z, nu, mu, iterations = polished

        X_bar, U_bar = self._unpack(z)
        objective = 0.5 * float(z @ (self.H @ z)) + float(h @ z)
        objective += float(np.einsum("ij,jk,ik->", ref.states[:-1], self.cost.Qx, ref.states[:-1]))
        objective += float(ref.states[-1] @ self.tube.Px @ ref.states[-1])
        self._warm = self._pack_warm(z)
        return SafePlan(
            X_bar=X_bar.copy(),
            U_bar=U_bar.copy(),
            kkt_residual=self.kkt_residual(z, nu, mu, h),
            objective=objective,
            status="optimal",
            iterations=iterations,
        )


def solve_tracking_qp(
    x_t: np.ndarray,
    ref: ReferenceWindow,
    model: DiscreteLtiModel,
    cost: CostParams,
    tube: TubeController,
    N: int,
) -> SafePlan:
    """One-off tracking QP solve (builds the problem, solves once)"""
    return TrackingQp(model, cost, tube, N).solve(x_t, ref)


def tracking_cost(plan: SafePlan, ref: ReferenceWindow, cost: CostParams, Px: np.ndarray) -> float:
    """Objective value of a plan against a reference window"""
    dx = plan.X_bar - ref.states
    stage = float(np.einsum("ij,jk,ik->", dx[:-1], cost.Qx, dx[:-1]))
    inputs = float(np.einsum("ij,jk,ik->", plan.U_bar, cost.Ru, plan.U_bar))
    return stage + inputs + float(dx[-1] @ Px @ dx[-1])


def ancillary(x_t: np.ndarray, plan: SafePlan, K: np.ndarray) -> np.ndarray:
    """u = u_bar_0 + K (x_t - x_bar_0)"""
    return plan.U_bar[0] + K @ (np.asarray(x_t, dtype=float) - plan.X_bar[0])


def compensate(u: np.ndarray, state_euler: EulerZyx, dcmd_I: np.ndarray, g: float = 9.81) -> Tuple[float, float, float]:
    """
    Convert the linear command into a tilt-compensated thrust and body-frame attitude commands

    Args:
        u: Linear input (roll rate, pitch rate, df_cmd)
        state_euler: Current attitude
        dcmd_I: Commanded-attitude deviations (dphi_cmd_I, dtheta_cmd_I)
        g: Gravity

    Returns:
        (f_cmd [m/s^2], phi_cmd [rad], theta_cmd [rad])
    """
    f_cmd = (u[2] + g) / (np.cos(state_euler.phi) * np.cos(state_euler.theta))
    dphi_B, dtheta_B = yaw_frame_transform(dcmd_I, state_euler.psi)
    return float(f_cmd), float(g / f_cmd * dphi_B), float(g / f_cmd * dtheta_B)


def euler_rate_matrix(psi: float, theta: float, phi: float, variant: str = "printed") -> np.ndarray:
    """
    Map (yaw, pitch, roll) rates to body rates

    `printed` is the matrix as published for this controller; `zyx` is the
    textbook z-y-x kinematics.
    """
    if variant == "printed":
        sp, cp = np.sin(psi), np.cos(psi)
        st, ct = np.sin(theta), np.cos(theta)
        return np.array([
            [0.0, -sp, cp * st],
            [0.0, cp, sp * ct],
            [1.0, 0.0, -st],
        ])
    if variant == "zyx":
        st, ct = np.sin(theta), np.cos(theta)
        sf, cf = np.sin(phi), np.cos(phi)
        return np.array([
            [-st, 0.0, 1.0],
            [ct * sf, cf, 0.0],
            [ct * cf, -sf, 0.0],
        ])
    raise ValueError(f"Unknown Euler-rate variant '{variant}', expected one of {EULER_RATE_VARIANTS}")


def setpoints(phi_cmd: float, theta_cmd: float, psi_current: float, theta_rate: float, phi_rate: float,
              variant: str = "printed") -> AttitudeSetpoint:
    """Attitude setpoint with zero desired yaw rate"""
    R_d = euler_to_rotation(EulerZyx(psi=psi_current, theta=theta_cmd, phi=phi_cmd))
    E = euler_rate_matrix(psi_current, theta_cmd, phi_cmd, variant)
    return AttitudeSetpoint(R_d=R_d, w_d=E @ np.array([0.0, theta_rate, phi_rate]))


class TubeMpcController:
    """
    Outer-loop law: tracking QP plus ancillary feedback

    On an infeasible QP the previous plan, shifted by one step, is used
    instead (unless `fallback` is off).
    """

    name = "rtmpc"

    def __init__(self, model: DiscreteLtiModel, cost: CostParams, tube: TubeController, N: int,
                 fallback: bool = True):
        self.model = model
        self.tube = tube
        self.N = N
        self.fallback = fallback
        self.qp = TrackingQp(model, cost, tube, N)
        self.last_plan: Optional[SafePlan] = None
        self.infeasible_steps = 0
        self.clipped_steps = 0

    def reset(self) -> None:
        self.qp.reset()
        self.last_plan = None
        self.infeasible_steps = 0
        self.clipped_steps = 0

    def plan(self, x_t: np.ndarray, ref: ReferenceWindow) -> SafePlan:
        try:
            plan = self.qp.solve(x_t, ref)
        except Infeasible as e:
            self.infeasible_steps += 1
            if not self.fallback:
                raise
            logger.warning(f"{e}; using shifted previous plan")
            if self.last_plan is not None:
                plan = self.last_plan.shifted(self.model)
            else:
                X_bar = np.tile(np.asarray(x_t, dtype=float), (self.N + 1, 1))
                plan = SafePlan(X_bar, np.zeros((self.N, self.model.nu)), np.nan, np.nan, "fallback")
        self.last_plan = plan
        return plan

    def act(self, x_t: np.ndarray, ref: ReferenceWindow) -> np.ndarray:
        plan = self.plan(x_t, ref)
        u = ancillary(x_t, plan, self.tube.K)
        u_sat = np.clip(u, self.tube.U.lo, self.tube.U.hi)
        if np.any(np.abs(u_sat - u) > 1e-9):
            self.clipped_steps += 1
            logger.debug(f"Ancillary input {u} clipped to the input box")
        return u_sat

