"""Projection bases from Riccati factors and adaptive parameter partitioning.

A greedy loop enriches an orthonormal basis with POD modes of deflated ARE
solutions, driven by the normalized full-order ARE residual of the lifted
reduced solution. Parameter boxes that cannot be served by at most
``max_dim`` basis vectors are bisected recursively.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .model import ParameterDomain, QuadraticCost, SeparableControlSystem, linearize
from .riccati import AREProblem, RiccatiError, are_residual, solve_are

logger = logging.getLogger(__name__)

ORTHO_TOL = 1e-12

AREFamily = Callable[[np.ndarray], AREProblem]


@dataclass(frozen=True)
class ReducedBasis:
    """Orthonormal columns spanning the reduced subspace."""

    columns: np.ndarray

    def __post_init__(self):
        Psi = np.asarray(self.columns, dtype=float)
        if Psi.ndim != 2:
            raise ValueError("basis columns must form a 2-d array")
        object.__setattr__(self, "columns", Psi)
        if Psi.shape[1] > 0:
            gram = Psi.T @ Psi
            err = np.max(np.abs(gram - np.eye(Psi.shape[1])))
            if err > 1e-10:
                raise ValueError(f"basis columns not orthonormal (error {err:.2e})")

    @property
    def n(self) -> int:
        return self.columns.shape[0]

    @property
    def dim(self) -> int:
        return self.columns.shape[1]

    @staticmethod
    def empty(n: int) -> "ReducedBasis":
        return ReducedBasis(np.zeros((n, 0)))


@dataclass(frozen=True)
class GreedyConfig:
    """Training set and tolerances of the greedy basis construction."""

    train_set: np.ndarray
    tol: float
    pod_tol: float
    max_dim: int

    def __post_init__(self):
        ts = np.atleast_2d(np.asarray(self.train_set, dtype=float))
        object.__setattr__(self, "train_set", ts)
        if ts.shape[0] < 1:
            raise ValueError("training set must be non-empty")
        if self.tol <= 0:
            raise ValueError("greedy tolerance must be positive")
        if not 0.0 <= self.pod_tol <= 1.0:
            raise ValueError("POD tolerance must lie in [0, 1]")
        if self.max_dim < 1:
            raise ValueError("max_dim must be at least 1")


@dataclass(frozen=True)
class LRFGResult:
    basis: ReducedBasis
    max_indicator: float
    iterations: int
    selected: tuple
    converged: bool
    history: tuple = ()


@dataclass(frozen=True)
class ParameterPartition:
    """Recursive bisection of a parameter box with one basis per leaf."""

    domain: ParameterDomain
    boxes: tuple
    bases: tuple
    indicators: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "bases", tuple(self.bases))
        object.__setattr__(self, "indicators", np.asarray(self.indicators, dtype=float))
        object.__setattr__(self, "levels", np.asarray(self.levels, dtype=int))

    @property
    def size(self) -> int:
        return len(self.boxes)


def pod(snapshots: np.ndarray, energy_tol: float) -> ReducedBasis:
    """Left singular vectors carrying a (1 - energy_tol) fraction of energy.

    Keeps the smallest number of modes whose squared singular values sum to
    at least (1 - energy_tol) of the total.
    """
    X = np.atleast_2d(np.asarray(snapshots, dtype=float))
    if not np.any(X):
        raise ValueError("POD of an all-zero snapshot matrix")
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    energy = s**2
    total = float(np.sum(energy))
    cum = np.cumsum(energy)
    keep = int(np.searchsorted(cum, (1.0 - energy_tol) * total - 1e-14) + 1)
    keep = min(keep, int(np.sum(s > 1e-12 * s[0])))
    keep = max(keep, 1)
    return ReducedBasis(U[:, :keep])


def make_lq_family(sys: SeparableControlSystem, cost: QuadraticCost) -> AREFamily:
    """LQ data from linearizing a control system at the origin."""
    cache: dict = {}

    def family(mu) -> AREProblem:
        key = np.asarray(mu, dtype=float).tobytes()
        prob = cache.get(key)
        if prob is None:
            A, B = linearize(sys, np.zeros(sys.n), np.zeros(sys.m), mu)
            prob = AREProblem(A, B, cost.state_matrix(mu), cost.control_matrix(mu), cost.discount)
            cache[key] = prob
        return prob

    return family


def error_indicator(mu, basis: ReducedBasis, problem: AREProblem) -> float:
    """Normalized full-order ARE residual of the lifted reduced solution.

    The reduced ARE is the Galerkin projection onto span(basis); its
    solution Z is lifted to P_hat = Psi Z Psi^T. An empty basis gives
    P_hat = 0 and therefore indicator 1; a failed reduced solve gives +inf.
    """
    q_norm = float(np.linalg.norm(problem.Q))
    if q_norm == 0.0:
        return 0.0
    if basis.dim == 0:
        return 1.0
    Psi = basis.columns
    A_hat = Psi.T @ problem.A @ Psi
    B_hat = Psi.T @ problem.B
    Q_hat = Psi.T @ problem.Q @ Psi
    Q_hat = 0.5 * (Q_hat + Q_hat.T)
    try:
        Z = solve_are(AREProblem(A_hat, B_hat, Q_hat, problem.R, problem.discount)).P
    except RiccatiError:
        return np.inf
    P_hat = Psi @ Z @ Psi.T
    return float(np.linalg.norm(are_residual(problem, P_hat))) / q_norm


def _orthonormal_append(Psi: np.ndarray, new: np.ndarray, max_cols: int) -> np.ndarray:
    """Append new columns, re-orthonormalized by repeated Gram-Schmidt."""
    cols = [Psi]
    count = Psi.shape[1]
    for j in range(new.shape[1]):
        if count >= max_cols:
            break
        v = new[:, j].copy()
        base = np.hstack(cols)
        for _ in range(2):
            if base.shape[1]:
                v -= base @ (base.T @ v)
        nrm = np.linalg.norm(v)
        if nrm < 1e-10:
            continue
        cols.append((v / nrm)[:, None])
        count += 1
    return np.hstack(cols)


def lrfg(cfg: GreedyConfig, initial: Optional[ReducedBasis], family: AREFamily) -> LRFGResult:
    """Greedy basis enrichment from deflated ARE solutions.

    While the worst indicator over the training set exceeds the tolerance
    and the basis is below ``max_dim``: solve the full ARE at the worst
    parameter, deflate against the current basis, compress by POD and
    append the resulting modes.
    """
    problems = [family(mu) for mu in cfg.train_set]
    n = problems[0].n
    basis = initial if initial is not None else ReducedBasis.empty(n)
    Psi = basis.columns
    selected = []

    def indicators() -> np.ndarray:
        b = ReducedBasis(Psi)
        return np.array([error_indicator(mu, b, prob) for mu, prob in zip(cfg.train_set, problems)])

    iterations = 0
    delta = indicators()
    history = [float(np.max(delta))]
    while float(np.max(delta)) > cfg.tol:
        if Psi.shape[1] >= cfg.max_dim:
            break
        worst = int(np.argmax(delta))
        mu_star = cfg.train_set[worst]
        try:
            P = solve_are(problems[worst]).P
        except RiccatiError as exc:
            raise RiccatiError(
                f"greedy aborted: full ARE solve failed at mu={mu_star} ({exc})"
            ) from exc
        P_perp = P - Psi @ (Psi.T @ P) if Psi.shape[1] else P
        if not np.any(np.abs(P_perp) > 1e-14 * max(1.0, float(np.max(np.abs(P))))):
            logger.warning("greedy stagnated: deflated solution vanished at mu=%s", mu_star)
            break
        modes = pod(P_perp, cfg.pod_tol)
        Psi_new = _orthonormal_append(Psi, modes.columns, cfg.max_dim)
        if Psi_new.shape[1] == Psi.shape[1]:
            logger.warning("greedy stagnated: no new directions at mu=%s", mu_star)
            break
        Psi = Psi_new
        selected.append(np.asarray(mu_star, dtype=float))
        iterations += 1
        delta = indicators()
        history.append(float(np.max(delta)))

    max_delta = float(np.max(delta))
    return LRFGResult(
        basis=ReducedBasis(Psi),
        max_indicator=max_delta,
        iterations=iterations,
        selected=tuple(selected),
        converged=max_delta <= cfg.tol,
        history=tuple(history),
    )


def _split_box(box: ParameterDomain):
    """Bisect all coordinates; children ordered by binary counting."""
    q = box.dim
    mid = box.barycenter()
    children = []
    for code in range(2**q):
        lo = box.lower.copy()
        hi = box.upper.copy()
        for j in range(q):
            if (code >> j) & 1:
                lo[j] = mid[j]
            else:
                hi[j] = mid[j]
        children.append(ParameterDomain(lo, hi))
    return children


def adaptive_partition(
    domain: ParameterDomain,
    cfg: GreedyConfig,
    family: AREFamily,
    max_refine: int,
    box_builder: Optional[Callable[[ParameterDomain, GreedyConfig], LRFGResult]] = None,
) -> ParameterPartition:
    """Recursively bisect the parameter box until each leaf admits a basis.

    A box is accepted when the greedy reaches the tolerance within
    ``cfg.max_dim`` vectors, or unconditionally once ``max_refine`` is
    reached (lower accuracy, strict size constraint still holds). The
    training pattern of ``cfg.train_set`` is mapped affinely into each box.
    """
    if max_refine < 0:
        raise ValueError("max_refine must be non-negative")
    width = domain.upper - domain.lower
    pattern = (cfg.train_set - domain.lower) / width

    builder = box_builder or (lambda box, box_cfg: lrfg(box_cfg, None, family))

    boxes, bases, indicators, levels = [], [], [], []

    def process(box: ParameterDomain, depth: int):
        box_cfg = replace(cfg, train_set=box.lower + pattern * (box.upper - box.lower))
        result = builder(box, box_cfg)
        if result.converged or depth >= max_refine:
            boxes.append(box)
            bases.append(result.basis)
            indicators.append(result.max_indicator)
            levels.append(depth)
            return
        for child in _split_box(box):
            process(child, depth + 1)

    process(domain, 0)
    return ParameterPartition(
        domain=domain,
        boxes=tuple(boxes),
        bases=tuple(bases),
        indicators=np.array(indicators),
        levels=np.array(levels, dtype=int),
    )


def locate(partition: ParameterPartition, mu) -> int:
    """Index of the box containing mu; boundary ties go to the smaller index."""
    mu = np.asarray(mu, dtype=float)
    if not partition.domain.contains(mu):
        raise ValueError(f"parameter {mu} outside the partitioned domain")
    for i, box in enumerate(partition.boxes):
        if box.contains(mu):
            return i
    raise RuntimeError(f"partition does not cover parameter {mu}")
