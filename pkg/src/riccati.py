"""Discrete algebraic Riccati equation solvers shared by LQR and Kalman design"""

import logging
from typing import Optional, Tuple

import numpy as np

from src.exceptions import NoConvergence, NotStabilizable

logger = logging.getLogger(__name__)

MAX_ITER = 1_000_000
MAX_DOUBLINGS = 200
STALL_WINDOW = 200
MAX_POLISH = 10


def riccati_map(P: np.ndarray, A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray) -> np.ndarray:
    """One step of P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA"""
    BtP = B.T @ P
    S = R + BtP @ B
    gain = np.linalg.solve(S, BtP @ A)
    out = Q + A.T @ P @ A - (A.T @ P @ B) @ gain
    return 0.5 * (out + out.T)


def dare_residual(P: np.ndarray, A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray) -> float:
    """Frobenius norm of P - riccati_map(P)"""
    return float(np.linalg.norm(P - riccati_map(P, A, B, Q, R)))


def _fixed_point(A, B, Q, R, tol, max_iter, P0, residual_tol) -> Tuple[np.ndarray, int]:
    P = np.eye(A.shape[0]) if P0 is None else np.array(P0, dtype=float)
    best = np.inf
    since_best = 0
    for k in range(1, max_iter + 1):
        P_next = riccati_map(P, A, B, Q, R)
        if not np.all(np.isfinite(P_next)):
            raise NotStabilizable(f"Riccati iteration diverged after {k} steps")
        delta = float(np.linalg.norm(P_next - P))
        P = P_next
        if delta <= min(tol * max(1.0, float(np.linalg.norm(P))), residual_tol):
            return P, k
        # round-off floor: the update stopped shrinking
        if delta < best:
            best, since_best = delta, 0
        else:
            since_best += 1
            if since_best >= STALL_WINDOW:
                if dare_residual(P, A, B, Q, R) <= residual_tol:
                    return P, k
                raise NotStabilizable(f"Riccati iteration stalled at ||dP||_F = {delta:.3e}")
    raise NoConvergence(f"Riccati iteration did not converge in {max_iter} steps")


def _doubling(A, B, Q, R, tol, max_iter) -> Tuple[np.ndarray, int]:
    # structure-preserving doubling: H_k is the Riccati iterate after 2^k steps
    n = A.shape[0]
    Ak = A.copy()
    Gk = B @ np.linalg.solve(R, B.T)
    Hk = Q.copy()
    eye = np.eye(n)
    for k in range(1, max_iter + 1):
        W = eye + Gk @ Hk
        W_inv_A = np.linalg.solve(W, Ak)
        W_inv_G = np.linalg.solve(W, Gk)
        H_next = Hk + Ak.T @ Hk @ W_inv_A
        G_next = Gk + Ak @ W_inv_G @ Ak.T
        Ak = Ak @ W_inv_A
        H_next = 0.5 * (H_next + H_next.T)
        G_next = 0.5 * (G_next + G_next.T)
        if not np.all(np.isfinite(H_next)):
            raise NotStabilizable(f"Doubling iteration diverged after {k} doublings")
        delta = float(np.linalg.norm(H_next - Hk))
        Hk, Gk = H_next, G_next
        if delta <= tol * max(1.0, float(np.linalg.norm(Hk))):
            return Hk, k
    raise NoConvergence(f"Doubling iteration did not converge in {max_iter} doublings")


def _polish(P, A, B, Q, R) -> np.ndarray:
    """One-step map refinement down to its round-off floor; keeps the lowest-residual iterate"""
    best, best_residual = P, dare_residual(P, A, B, Q, R)
    for _ in range(MAX_POLISH):
        P = riccati_map(P, A, B, Q, R)
        residual = dare_residual(P, A, B, Q, R)
        if residual >= best_residual:
            break
        best, best_residual = P, residual
    return best


def solve_dare_iterative(
    A: np.ndarray,
    B: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    tol: float = 1e-12,
    max_iter: Optional[int] = None,
    method: str = "doubling",
    P0: Optional[np.ndarray] = None,
    residual_tol: float = 1e-8,
) -> Tuple[np.ndarray, int]:
    """
    Solve P = Q + A'PA - A'PB (R + B'PB)^-1 B'PA by iterating the Riccati map

    The default method runs the same iteration in doubling form (the iterate
    after 2^k steps is produced at step k), which keeps nearly-undamped
    problems such as a barely trusted measurement tractable. `fixed_point`
    applies the map one step at a time from P0 (identity by default).

    Args:
        A: n x n state matrix
        B: n x m input matrix
        Q: n x n state weight (symmetric, PSD)
        R: m x m input weight (symmetric, PD)
        tol: Relative stopping tolerance on ||P_{k+1} - P_k||_F
        max_iter: Iteration cap (1e6 steps for fixed_point, 200 doublings)
        method: "doubling" or "fixed_point"
        P0: Initial iterate for fixed_point
        residual_tol: Accepted absolute Riccati residual ||P - map(P)||_F

    Returns:
        (P, iterations)

    Raises:
        NoConvergence: Iteration cap reached
        NotStabilizable: Iteration diverged, stalled, or left a residual above tolerance
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))

    if method == "doubling":
        P, iterations = _doubling(A, B, Q, R, tol, max_iter or MAX_DOUBLINGS)
        P = _polish(P, A, B, Q, R)
    elif method == "fixed_point":
        P, iterations = _fixed_point(A, B, Q, R, tol, max_iter or MAX_ITER, P0, residual_tol)
    else:
        raise ValueError(f"Unknown DARE method: {method}")

    residual = dare_residual(P, A, B, Q, R)
    if residual > residual_tol:
        raise NotStabilizable(f"Riccati residual {residual:.3e} above tolerance")
    logger.debug(f"DARE ({method}) converged in {iterations} iterations, residual {residual:.3e}")
    return P, iterations
