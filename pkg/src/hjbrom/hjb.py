"""Semi-Lagrangian approximation of the reduced HJB equation.

Value fields live on non-uniform tensor grids; a first-order multilinear
interpolant traces one explicit Euler step along the dynamics, states
outside the box are penalized. Value iteration applies the contractive
Bellman operator with Jacobi updates; policy iteration alternates a
frozen-policy linear solve with exhaustive policy improvement.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from . import _kernels
from .basis import ReducedBasis
from .domain import TensorGrid
from .model import ControlGrid, QuadraticCost, SeparableControlSystem
from .reduced import EvaluationTable, ReducedSystem

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ValueField:
    """Nodal values of a value function plus the out-of-domain penalty."""

    grid: TensorGrid
    values: np.ndarray
    penalty: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.shape != (self.grid.size,):
            raise ValueError(f"values must have shape ({self.grid.size},)")
        if not np.all(np.isfinite(v)):
            raise ValueError("value field contains non-finite entries")
        if self.penalty < np.max(v) - 1e-12 * max(1.0, abs(float(np.max(v)))):
            raise ValueError("penalty must dominate the nodal values")


@dataclass(frozen=True)
class SLConfig:
    """Tolerances and step size of the semi-Lagrangian solvers."""

    dt: float
    discount: float
    vi_tol: float = 1e-8
    vi_max_iter: int = 5000
    pi_tol: float = 1e-10
    pi_max_iter: int = 60
    pe_tol: float = 1e-10
    pe_max_iter: int = 5000
    penalty: Optional[float] = None
    direct_solve_limit: int = 40000

    def __post_init__(self):
        if self.dt <= 0 or self.discount <= 0:
            raise ValueError("dt and discount must be positive")
        for name in ("vi_tol", "pi_tol", "pe_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def discount_factor(self) -> float:
        return float(np.exp(-self.discount * self.dt))


def default_penalty(g_max: float, cfg: SLConfig) -> float:
    """Out-of-domain value dominating every admissible discounted cost."""
    return 10.0 * cfg.dt * max(g_max, 1e-30) / (1.0 - cfg.discount_factor)


# -- grid plumbing -----------------------------------------------------------


def _flat_grid(grid: TensorGrid):
    axis_values = np.concatenate([ax.nodes for ax in grid.axes])
    axis_start = np.zeros(grid.dim + 1, dtype=np.int64)
    np.cumsum([ax.size for ax in grid.axes], out=axis_start[1:])
    shape = grid.shape
    strides = np.empty(grid.dim, dtype=np.int64)
    strides[-1] = 1
    for j in range(grid.dim - 2, -1, -1):
        strides[j] = strides[j + 1] * shape[j + 1]
    return axis_values, axis_start, strides


def interpolate(field: ValueField, x) -> float:
    """Multilinear interpolation; penalty outside the bounding box."""
    return float(interpolate_many(field, np.atleast_2d(np.asarray(x, dtype=float)))[0])


def interpolate_many(field: ValueField, points: np.ndarray) -> np.ndarray:
    """Vectorized multilinear interpolation at a (B, dim) batch of points."""
    grid = field.grid
    X = np.atleast_2d(np.asarray(points, dtype=float))
    B = X.shape[0]
    inside = np.ones(B, dtype=bool)
    idx = np.empty((B, grid.dim), dtype=np.int64)
    frac = np.empty((B, grid.dim))
    for j, ax in enumerate(grid.axes):
        s = ax.nodes
        xj = X[:, j]
        inside &= (xj >= s[0]) & (xj <= s[-1])
        i0 = np.clip(np.searchsorted(s, xj, side="right") - 1, 0, s.size - 2)
        idx[:, j] = i0
        frac[:, j] = (xj - s[i0]) / (s[i0 + 1] - s[i0])
    _, _, strides = _flat_grid(grid)
    out = np.zeros(B)
    for corner in range(1 << grid.dim):
        w = np.ones(B)
        flat = np.zeros(B, dtype=np.int64)
        for j in range(grid.dim):
            bit = (corner >> j) & 1
            w *= frac[:, j] if bit else 1.0 - frac[:, j]
            flat += (idx[:, j] + bit) * strides[j]
        out += w * field.values[flat]
    out[~inside] = field.penalty
    return out


# -- node evaluators ---------------------------------------------------------


class TableEvaluator:
    """Node dynamics and running cost recombined from precomputed tables."""

    def __init__(self, table: EvaluationTable, grid: TensorGrid):
        if table.node_count != grid.size:
            raise ValueError("table size does not match grid size")
        self.table = table
        self.grid = grid

    def node_dynamics(self, mu):
        return self.table.combine(mu)

    def node_state_cost(self, mu) -> np.ndarray:
        return self.table.state_cost.at_nodes(self.grid.nodes(), mu)

    def control_cost(self, controls: ControlGrid, mu) -> np.ndarray:
        return self.table.control_cost(controls.values, mu)


class DirectEvaluator:
    """Node dynamics via full-order field evaluations (no precomputation)."""

    def __init__(self, reduced: ReducedSystem, grid: TensorGrid):
        self.reduced = reduced
        self.grid = grid

    def node_dynamics(self, mu):
        sys = self.reduced.system
        Psi = self.reduced.basis.columns
        nodes = self.grid.nodes()
        H = nodes.shape[0]
        Fy = np.empty((H, self.reduced.dim))
        Fu = np.empty((H, self.reduced.dim, sys.m))
        for j in range(H):
            y = Psi @ nodes[j]
            Fy[j] = Psi.T @ sys.drift(y, mu)
            Fu[j] = Psi.T @ sys.control_matrix(y, mu)
        return Fy, Fu

    def node_state_cost(self, mu) -> np.ndarray:
        Psi = self.reduced.basis.columns
        nodes = self.grid.nodes()
        zero_u = np.zeros(self.reduced.system.m)
        return np.array(
            [self.reduced.cost.running(Psi @ x, zero_u, mu) for x in nodes]
        )

    def control_cost(self, controls: ControlGrid, mu) -> np.ndarray:
        R = self.reduced.cost.control_matrix(mu)
        U = controls.values
        return np.einsum("ij,jk,ik->i", U, R, U)


def _sweep_inputs(field, dynamics, cost_eval, controls, mu, cfg):
    Fy, Fu = dynamics.node_dynamics(mu)
    g_state = cost_eval.node_state_cost(mu)
    g_ctrl = cost_eval.control_cost(controls, mu)
    axis_values, axis_start, strides = _flat_grid(field.grid)
    return (
        field.grid.nodes(),
        np.ascontiguousarray(Fy),
        np.ascontiguousarray(Fu),
        np.ascontiguousarray(controls.values),
        g_state,
        g_ctrl,
        field.values,
        axis_values,
        axis_start,
        strides,
        cfg.dt,
        cfg.discount_factor,
        field.penalty,
    )


# -- value iteration ---------------------------------------------------------


def vi_sweep(field: ValueField, dynamics, cost_eval, controls: ControlGrid, mu, cfg: SLConfig) -> np.ndarray:
    """One Jacobi application of the Bellman operator S to the nodal values."""
    out, _ = _kernels.sweep_min(*_sweep_inputs(field, dynamics, cost_eval, controls, mu, cfg))
    return out


@dataclass(frozen=True)
class VIResult:
    field: ValueField
    iterations: int
    residual: float
    converged: bool


def value_iteration(
    field0: ValueField, dynamics, cost_eval, controls: ControlGrid, mu, cfg: SLConfig
) -> VIResult:
    """Fixed-point iteration of the Bellman operator until stationarity."""
    values = field0.values
    residual = np.inf
    iterations = 0
    for j in range(1, cfg.vi_max_iter + 1):
        current = ValueField(field0.grid, values, field0.penalty)
        new_values = vi_sweep(current, dynamics, cost_eval, controls, mu, cfg)
        residual = float(np.max(np.abs(new_values - values)))
        values = new_values
        iterations = j
        if residual <= cfg.vi_tol:
            return VIResult(
                field=ValueField(field0.grid, values, field0.penalty),
                iterations=iterations,
                residual=residual,
                converged=True,
            )
    logger.warning("value iteration hit max_iter=%d (residual %.3e)", cfg.vi_max_iter, residual)
    return VIResult(
        field=ValueField(field0.grid, values, field0.penalty),
        iterations=iterations,
        residual=residual,
        converged=False,
    )


# -- policy iteration --------------------------------------------------------


@dataclass(frozen=True)
class PEResult:
    values: np.ndarray
    residual: float
    iterations: int
    method: str
    converged: bool


def policy_evaluation(
    field: ValueField,
    policy: np.ndarray,
    dynamics,
    cost_eval,
    controls: ControlGrid,
    mu,
    cfg: SLConfig,
) -> PEResult:
    """Value of a frozen per-node policy: solve (I - disc*M(u)) V = dt*g.

    Out-of-domain foot points contribute disc*penalty to the right-hand
    side. Small systems are solved by a direct sparse factorization; large
    ones fall back to the always-convergent stationary (Richardson)
    iteration warm-started from the current field.
    """
    policy = np.asarray(policy, dtype=np.int64)
    if policy.shape != (field.grid.size,):
        raise ValueError("policy must assign one control index per node")
    Fy, Fu = dynamics.node_dynamics(mu)
    g_state = cost_eval.node_state_cost(mu)
    g_ctrl = cost_eval.control_cost(controls, mu)
    g_node = g_state + g_ctrl[policy]
    axis_values, axis_start, strides = _flat_grid(field.grid)
    disc = cfg.discount_factor
    H = field.grid.size

    data, cols, inside = _kernels.policy_weights(
        field.grid.nodes(),
        np.ascontiguousarray(Fy),
        np.ascontiguousarray(Fu),
        np.ascontiguousarray(controls.values),
        policy,
        axis_values,
        axis_start,
        strides,
        cfg.dt,
    )
    rhs = cfg.dt * g_node + disc * field.penalty * (~inside)

    n_corner = data.shape[1]
    indptr = np.arange(0, (H + 1) * n_corner, n_corner, dtype=np.int64)
    M = scipy.sparse.csr_matrix((data.ravel(), cols.ravel(), indptr), shape=(H, H))

    scale = max(1.0, float(np.max(np.abs(rhs))) / max(1e-30, 1.0 - disc))
    if H <= cfg.direct_solve_limit:
        A = scipy.sparse.identity(H, format="csr") - disc * M
        values = scipy.sparse.linalg.splu(A.tocsc()).solve(rhs)
        residual = float(np.max(np.abs(A @ values - rhs)))
        if residual <= cfg.pe_tol * scale:
            return PEResult(values, residual, 1, "direct", True)
        logger.warning("direct policy evaluation residual %.3e, polishing", residual)
        start = values
    else:
        start = field.values

    values = start
    residual = np.inf
    for it in range(1, cfg.pe_max_iter + 1):
        new_values = disc * (M @ values) + rhs
        residual = float(np.max(np.abs(new_values - values)))
        values = new_values
        if residual <= cfg.pe_tol * scale:
            return PEResult(values, residual, it, "richardson", True)
    return PEResult(values, residual, cfg.pe_max_iter, "richardson", False)


@dataclass(frozen=True)
class PIResult:
    field: ValueField
    iterations: int
    residual: float
    converged: bool
    policy: np.ndarray


def policy_iteration(
    field0: ValueField, dynamics, cost_eval, controls: ControlGrid, mu, cfg: SLConfig
) -> PIResult:
    """Policy iteration started from an initial value field.

    The initial policy is the greedy improvement of the initial field;
    iteration stops when the policy is fixed or the value update drops
    below pi_tol.
    """
    grid, penalty = field0.grid, field0.penalty
    _, policy = _kernels.sweep_min(*_sweep_inputs(field0, dynamics, cost_eval, controls, mu, cfg))
    values = field0.values
    iterations = 0
    residual = np.inf
    for it in range(1, cfg.pi_max_iter + 1):
        iterations = it
        current = ValueField(grid, np.minimum(values, penalty), penalty)
        pe = policy_evaluation(current, policy, dynamics, cost_eval, controls, mu, cfg)
        evaluated = ValueField(grid, np.minimum(pe.values, penalty), penalty)
        improved, new_policy = _kernels.sweep_min(
            *_sweep_inputs(evaluated, dynamics, cost_eval, controls, mu, cfg)
        )
        residual = float(np.max(np.abs(improved - pe.values)))
        policy_fixed = bool(np.array_equal(new_policy, policy))
        values = pe.values
        policy = new_policy
        if policy_fixed or residual <= cfg.pi_tol:
            return PIResult(
                field=ValueField(grid, np.minimum(values, penalty), penalty),
                iterations=iterations,
                residual=residual,
                converged=True,
                policy=policy,
            )
    logger.warning("policy iteration hit max_iter=%d (residual %.3e)", cfg.pi_max_iter, residual)
    return PIResult(
        field=ValueField(grid, np.minimum(values, penalty), penalty),
        iterations=iterations,
        residual=residual,
        converged=False,
        policy=policy,
    )


def transfer(field: ValueField, grid: TensorGrid, penalty: Optional[float] = None) -> ValueField:
    """Interpolate a value field onto another grid (coarse-to-fine handoff)."""
    values = interpolate_many(field, grid.nodes())
    pen = field.penalty if penalty is None else penalty
    return ValueField(grid, np.minimum(values, pen), pen)


# -- feedback synthesis ------------------------------------------------------


@dataclass(frozen=True)
class FeedbackResult:
    control: np.ndarray
    index: int
    saturated: bool


def feedback(
    field: ValueField,
    basis: ReducedBasis,
    system: SeparableControlSystem,
    cost: QuadraticCost,
    controls: ControlGrid,
    mu,
    cfg: SLConfig,
    x: np.ndarray,
) -> FeedbackResult:
    """Greedy feedback control at a full-order state x.

    The dynamics and running cost stay full-order; only the value function
    is the reduced interpolant. Ties pick the lowest control index; if all
    projected foot points leave the grid the argmin is still returned but
    flagged as saturated.
    """
    x = np.asarray(x, dtype=float)
    U = controls.values
    fy = system.drift(x, mu)
    feet = x[:, None] + cfg.dt * fy[:, None]
    if system.control_terms:
        G = system.control_matrix(x, mu)
        feet = feet + cfg.dt * (G @ U.T)
    reduced_feet = (basis.columns.T @ feet).T  # (n_ctrl, ell)
    vals = interpolate_many(field, reduced_feet)
    g_state = cost.running(x, np.zeros(system.m), mu)
    R = cost.control_matrix(mu)
    g_ctrl = np.einsum("ij,jk,ik->i", U, R, U)
    scores = cfg.discount_factor * vals + cfg.dt * (g_state + g_ctrl)
    i = int(np.argmin(scores))
    return FeedbackResult(control=U[i].copy(), index=i, saturated=bool(np.all(vals == field.penalty)))


def feedback_policy(field, basis, system, cost, controls, mu, cfg):
    """State-feedback closure (t, y) -> u for the trajectory simulator."""

    def policy(t, y):
        return feedback(field, basis, system, cost, controls, mu, cfg, y).control

    return policy
