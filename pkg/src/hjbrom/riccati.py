"""Discounted algebraic Riccati equations and the LQR baseline controller.

The discount enters purely as the spectral shift A - (lambda/2) I; the
stabilizing solution is computed by Newton-Kleinman iteration where each
step is a dense Bartels-Stewart Lyapunov solve.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

RESIDUAL_RTOL = 1e-12
MAX_NEWTON_ITER = 100


class RiccatiError(RuntimeError):
    """Raised when the ARE solve fails (unstabilizable or ill-conditioned)."""


@dataclass(frozen=True)
class AREProblem:
    """Data (A, B, Q, R, discount) of a discounted ARE."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    discount: float = 0.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        B = np.asarray(self.B, dtype=float).reshape(n, -1)
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        for name, M in (("A", A), ("Q", Q)):
            if M.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}, got {M.shape}")
        if R.shape[0] != R.shape[1] or R.shape[0] != B.shape[1]:
            raise ValueError("R must be m-by-m with m = columns of B")
        if self.discount < 0:
            raise ValueError("discount must be non-negative")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def shifted(self) -> np.ndarray:
        """A - (discount/2) I, the matrix the ARE is actually solved for."""
        return self.A - 0.5 * self.discount * np.eye(self.n)


@dataclass(frozen=True)
class ARESolution:
    """Stabilizing solution with a recomputed residual norm."""

    P: np.ndarray
    residual_norm: float
    iterations: int

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        asym = np.linalg.norm(P - P.T)
        if asym > 1e-10 * max(1.0, np.linalg.norm(P)):
            raise ValueError("P must be symmetric")
        object.__setattr__(self, "P", P)


def are_residual(prob: AREProblem, P: np.ndarray) -> np.ndarray:
    """Residual (A - l/2 I)^T P + P (A - l/2 I) - P B R^-1 B^T P + Q."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    As = prob.shifted()
    BtP = prob.B.T @ P
    return As.T @ P + P @ As - BtP.T @ np.linalg.solve(prob.R, BtP) + prob.Q


def spectral_abscissa(M: np.ndarray) -> float:
    return float(np.max(np.real(np.linalg.eigvals(M))))


def _initial_gain(As: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Stabilizing initial gain via a shifted-Lyapunov (Bass-type) construction."""
    n, m = B.shape
    if spectral_abscissa(As) < 0 or m == 0 or not np.any(B):
        return np.zeros((m, n))
    eigs = np.linalg.eigvals(As)
    # beta shifts all eigenvalues into the open right half plane
    beta = -float(np.min(np.real(eigs))) + max(1.0, 0.05 * float(np.max(np.abs(eigs))))
    for _ in range(4):
        Abar = As + beta * np.eye(n)
        try:
            Z = scipy.linalg.solve_continuous_lyapunov(Abar, 2.0 * B @ B.T)
            K = B.T @ np.linalg.solve(Z, np.eye(n))
        except np.linalg.LinAlgError:
            beta *= 2.0
            continue
        if spectral_abscissa(As - B @ K) < 0:
            return K
        beta *= 2.0
    raise RiccatiError("failed to construct a stabilizing initial gain")


def solve_are(prob: AREProblem, rtol: float = RESIDUAL_RTOL, max_iter: int = MAX_NEWTON_ITER) -> ARESolution:
    """Stabilizing PSD solution of the discounted ARE by Newton-Kleinman."""
    As = prob.shifted()
    q_norm = np.linalg.norm(prob.Q)
    if q_norm == 0.0:
        q_norm = 1.0
    K = _initial_gain(As, prob.B)
    P = np.zeros((prob.n, prob.n))
    best = (np.inf, P, 0)
    for it in range(1, max_iter + 1):
        Acl = As - prob.B @ K
        rhs = prob.Q + K.T @ prob.R @ K
        try:
            P = scipy.linalg.solve_continuous_lyapunov(Acl.T, -rhs)
        except np.linalg.LinAlgError as exc:
            raise RiccatiError(f"Lyapunov solve failed at iteration {it}: {exc}") from exc
        P = 0.5 * (P + P.T)
        res_norm = float(np.linalg.norm(are_residual(prob, P)))
        if res_norm < best[0]:
            best = (res_norm, P, it)
        if res_norm <= rtol * q_norm:
            break
        K = np.linalg.solve(prob.R, prob.B.T @ P)
    res_norm, P, it = best
    if res_norm > 1e-9 * q_norm:
        raise RiccatiError(
            f"Newton-Kleinman did not converge: residual {res_norm:.3e} "
            f"after {it} iterations (likely unstabilizable or ill-conditioned)"
        )
    if prob.m and np.any(prob.B):
        K = np.linalg.solve(prob.R, prob.B.T @ P)
        if spectral_abscissa(As - prob.B @ K) >= 0:
            raise RiccatiError("computed solution is not stabilizing")
    elif spectral_abscissa(As) >= 0:
        raise RiccatiError("A - (discount/2) I is unstable and B = 0")
    return ARESolution(P=P, residual_norm=res_norm, iterations=it)


def lqr_gain(prob: AREProblem, sol: ARESolution) -> np.ndarray:
    """Feedback gain K = R^-1 B^T P; the optimal control is u = -K y."""
    return np.linalg.solve(prob.R, prob.B.T @ sol.P)


def lqr_value(sol: ARESolution, x: np.ndarray) -> float:
    """Linear-quadratic value x^T P x."""
    x = np.asarray(x, dtype=float)
    return float(x @ sol.P @ x)
