"""Galerkin-projected systems and precomputed node evaluation tables.

The parameter-separable structure allows all projected field evaluations
at grid nodes to be tabulated once; online queries recombine the tables
with the scalar coefficient functions of the requested parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .basis import ReducedBasis
from .model import QuadraticCost, SeparableControlSystem


@dataclass(frozen=True)
class ReducedSystem:
    """Control system projected onto an orthonormal basis."""

    system: SeparableControlSystem
    basis: ReducedBasis
    cost: QuadraticCost

    @property
    def dim(self) -> int:
        return self.basis.dim

    def lift(self, x_red: np.ndarray) -> np.ndarray:
        return self.basis.columns @ np.asarray(x_red, dtype=float)

    def rhs(self, x_red, u, mu) -> np.ndarray:
        """Reduced dynamics Psi^T f(Psi x, u; mu)."""
        y = self.lift(x_red)
        out = self.system.drift(y, mu)
        if self.system.control_terms:
            out = out + self.system.control_matrix(y, mu) @ np.atleast_1d(np.asarray(u, dtype=float))
        return self.basis.columns.T @ out

    def running_cost(self, x_red, u, mu) -> float:
        """Reduced running cost g(Psi x, u; mu)."""
        return self.cost.running(self.lift(x_red), u, mu)


def project_state(basis: ReducedBasis, x: np.ndarray) -> np.ndarray:
    """Reduced coordinates Psi^T x."""
    return basis.columns.T @ np.asarray(x, dtype=float)


@dataclass(frozen=True)
class ReducedStateCost:
    """Parameter-separable reduced state cost.

    Either a sum of fixed ell-by-ell matrices with scalar coefficients, or
    the projected output map C Psi combined with the output weight online.
    """

    terms: Optional[tuple] = None
    output_red: Optional[np.ndarray] = None
    output_weight: Optional[object] = None

    def __post_init__(self):
        has_terms = self.terms is not None
        has_out = self.output_red is not None and self.output_weight is not None
        if has_terms == has_out:
            raise ValueError("exactly one of terms or (output_red, output_weight) required")
        if has_terms:
            object.__setattr__(self, "terms", tuple(self.terms))
        else:
            object.__setattr__(
                self, "output_red", np.atleast_2d(np.asarray(self.output_red, dtype=float))
            )

    def matrix(self, mu) -> np.ndarray:
        """Reduced state weight Psi^T Q(mu) Psi."""
        if self.terms is not None:
            return sum(float(c(mu)) * M for c, M in self.terms)
        W = np.atleast_2d(np.asarray(self.output_weight(mu), dtype=float))
        return self.output_red.T @ W @ self.output_red

    def at_nodes(self, nodes: np.ndarray, mu) -> np.ndarray:
        """x^T Q_red(mu) x for every node row."""
        Q = self.matrix(mu)
        return np.einsum("ij,jk,ik->i", nodes, Q, nodes)


@dataclass(frozen=True, eq=False)
class EvaluationTable:
    """Per-node projected field evaluations for one grid and basis.

    drift[q] has shape (H, ell) and holds Psi^T f_q^y(Psi x_j); control[q]
    has shape (H, ell, m). Recombination with the coefficient functions
    reproduces the direct projected evaluation.
    """

    drift: tuple
    control: tuple
    drift_coefficients: tuple
    control_coefficients: tuple
    state_cost: ReducedStateCost
    control_weight: object
    discount: float
    node_count: int
    dim: int
    m: int

    def __post_init__(self):
        object.__setattr__(self, "drift", tuple(np.asarray(a, dtype=float) for a in self.drift))
        object.__setattr__(self, "control", tuple(np.asarray(a, dtype=float) for a in self.control))

    def combine(self, mu):
        """Weighted sums (F_y, F_u) of the tables at parameter mu."""
        Fy = np.zeros((self.node_count, self.dim))
        for coeff, tab in zip(self.drift_coefficients, self.drift):
            Fy += float(coeff(mu)) * tab
        Fu = np.zeros((self.node_count, self.dim, self.m))
        for coeff, tab in zip(self.control_coefficients, self.control):
            Fu += float(coeff(mu)) * tab
        return Fy, Fu

    def control_cost(self, controls: np.ndarray, mu) -> np.ndarray:
        """u^T R(mu) u for every row of a control list."""
        U = np.atleast_2d(np.asarray(controls, dtype=float))
        R = np.atleast_2d(np.asarray(self.control_weight(mu), dtype=float))
        return np.einsum("ij,jk,ik->i", U, R, U)


def build_tables(
    sys: SeparableControlSystem,
    basis: ReducedBasis,
    grid,
    cost: QuadraticCost,
) -> EvaluationTable:
    """Tabulate all projected term evaluations at the grid nodes.

    ``grid`` is a TensorGrid or a raw (H, ell) node array; the work is one
    pass of size H * (Q_y + Q_u) independent of later parameter queries.
    """
    nodes = grid.nodes() if hasattr(grid, "nodes") else np.atleast_2d(np.asarray(grid, dtype=float))
    Psi = basis.columns
    H = nodes.shape[0]
    if nodes.shape[1] != basis.dim:
        raise ValueError(f"grid nodes have dimension {nodes.shape[1]}, basis has {basis.dim}")

    lifted = nodes @ Psi.T  # (H, n)
    drift_tabs = []
    for term in sys.drift_terms:
        tab = np.empty((H, basis.dim))
        for j in range(H):
            tab[j] = Psi.T @ np.asarray(term.spatial(lifted[j])).reshape(sys.n)
        drift_tabs.append(tab)
    control_tabs = []
    for term in sys.control_terms:
        tab = np.empty((H, basis.dim, sys.m))
        for j in range(H):
            G = term.spatial(lifted[j])
            G = G.toarray() if hasattr(G, "toarray") else np.asarray(G, dtype=float)
            tab[j] = Psi.T @ G.reshape(sys.n, sys.m)
        control_tabs.append(tab)

    if cost.output_map is not None:
        state_cost = ReducedStateCost(
            output_red=cost.output_map @ Psi, output_weight=cost.output_weight
        )
    else:
        state_cost = ReducedStateCost(
            terms=tuple((coeff, Psi.T @ Q @ Psi) for coeff, Q in cost.state_weight_terms)
        )

    return EvaluationTable(
        drift=tuple(drift_tabs),
        control=tuple(control_tabs),
        drift_coefficients=tuple(t.coefficient for t in sys.drift_terms),
        control_coefficients=tuple(t.coefficient for t in sys.control_terms),
        state_cost=state_cost,
        control_weight=cost.control_weight,
        discount=cost.discount,
        node_count=H,
        dim=basis.dim,
        m=sys.m,
    )


def reduced_rhs(table: EvaluationTable, j: int, u, mu) -> np.ndarray:
    """Recombined reduced dynamics at node j for control u and parameter mu."""
    if not 0 <= j < table.node_count:
        raise IndexError(f"node index {j} out of range")
    u = np.atleast_1d(np.asarray(u, dtype=float))
    out = np.zeros(table.dim)
    for coeff, tab in zip(table.drift_coefficients, table.drift):
        out += float(coeff(mu)) * tab[j]
    for coeff, tab in zip(table.control_coefficients, table.control):
        out += float(coeff(mu)) * (tab[j] @ u)
    return out
