"""Benchmark problems: advection-diffusion, unstable semilinear heat, Burgers.

All three are finite-difference semi-discretizations on the unit square
with homogeneous Dirichlet boundaries and parameter-separable dynamics,
plus the experiment drivers that reproduce the reported comparisons.

Deviation from the reference setups: the linear advection-diffusion
problem is assembled with second-order central differences (diffusion)
and first-order upwinding (advection) instead of P1 finite elements, so
the mass matrix is the identity; quantitative columns are therefore
compared per order of magnitude only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import scipy.sparse

from . import hjb as hjb_mod
from . import model as model_mod
from .basis import ReducedBasis, make_lq_family
from .domain import (
    GridConfig,
    TensorGrid,
    UnivariateGrid,
    collect_snapshots,
    equal_mass_grid,
    fit_box_components,
)
from .model import (
    BlockEnsemble,
    ControlGrid,
    DriftTerm,
    GaussianEnsemble,
    ParameterDomain,
    QuadraticCost,
    SeparableControlSystem,
    StepperConfig,
    constant_control,
    constant_state_cost,
    linear_drift,
)
from .riccati import AREProblem, RiccatiError, lqr_gain, solve_are

logger = logging.getLogger(__name__)

DIVERGENCE_GUARD = model_mod.DIVERGENCE_GUARD


@dataclass(frozen=True, eq=False)
class BenchmarkCase:
    """Assembled benchmark: system, cost, control set, ensemble, stepping."""

    name: str
    resolution: int
    system: SeparableControlSystem
    cost: QuadraticCost
    controls: ControlGrid
    ensemble: object
    stepper: StepperConfig
    domain: ParameterDomain
    batch_drift: Callable
    hjb_dt: float
    sim_t_end: float


# -- finite-difference operators ---------------------------------------------


def _interior_coords(N: int):
    h = 1.0 / (N + 1)
    pts = h * np.arange(1, N + 1)
    X1, X2 = np.meshgrid(pts, pts, indexing="ij")
    return np.stack([X1.ravel(), X2.ravel()], axis=1), h


def _laplacian_2d(N: int, h: float) -> scipy.sparse.csr_matrix:
    main = -2.0 * np.ones(N)
    off = np.ones(N - 1)
    L1 = scipy.sparse.diags([off, main, off], [-1, 0, 1]) / h**2
    eye = scipy.sparse.identity(N)
    return (scipy.sparse.kron(L1, eye) + scipy.sparse.kron(eye, L1)).tocsr()


def _upwind_advection(N: int, h: float, velocity: np.ndarray) -> scipy.sparse.csr_matrix:
    """First-order upwind discretization of a(x) . grad(w) on the interior grid.

    ``velocity`` has shape (n, 2); the difference direction follows the sign
    of the local velocity component. Boundary values are zero (Dirichlet).
    """
    n = N * N
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    for i in range(N):
        for j in range(N):
            r = i * N + j
            a1, a2 = velocity[r]
            if a1 >= 0:
                add(r, r, a1 / h)
                if i > 0:
                    add(r, r - N, -a1 / h)
            else:
                add(r, r, -a1 / h)
                if i < N - 1:
                    add(r, r + N, a1 / h)
            if a2 >= 0:
                add(r, r, a2 / h)
                if j > 0:
                    add(r, r - 1, -a2 / h)
            else:
                add(r, r, -a2 / h)
                if j < N - 1:
                    add(r, r + 1, a2 / h)
    return scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _tent_weight(p: np.ndarray) -> float:
    return float((-4.0 * (p[0] - 0.5) ** 2 + 1.0) * (-4.0 * (p[1] - 0.5) ** 2 + 1.0))


# -- Test 1: linear advection-diffusion --------------------------------------


def build_test1(resolution: int = 26) -> BenchmarkCase:
    """2D advection-diffusion with a rotational field and scalar control.

    Parameters are (mu_diff, mu_adv) in [0.05, 0.1] x [2, 4]; the output
    averages the state over [0.1, 0.4]^2 and the control acts on
    [0.5, 0.9]^2.
    """
    if resolution < 10:
        raise ValueError("test1 needs at least 10 interior points per axis")
    N = resolution
    coords, h = _interior_coords(N)
    n = N * N

    L = _laplacian_2d(N, h)
    rotation = np.stack([-(coords[:, 1] - 0.5), coords[:, 0] - 0.5], axis=1)
    Adv = _upwind_advection(N, h, rotation)

    in_b = np.all((coords >= 0.5) & (coords <= 0.9), axis=1)
    B = np.zeros((n, 1))
    B[in_b, 0] = 1.0

    in_c = np.all((coords >= 0.1) & (coords <= 0.4), axis=1)
    C = np.zeros((1, n))
    C[0, in_c] = h**2 / 0.09

    system = SeparableControlSystem(
        n=n,
        m=1,
        drift_terms=(
            linear_drift(L, coefficient=lambda mu: float(mu[0])),
            linear_drift(Adv, coefficient=lambda mu: -float(mu[1])),
        ),
        control_terms=(constant_control(B),),
    )
    cost = QuadraticCost(
        control_weight=lambda mu: np.array([[1e-2]]),
        discount=1e-3,
        output_map=C,
        output_weight=lambda mu: np.array([[10.0]]),
    )
    du = 4.0 / 109.0
    controls = ControlGrid(np.array([(-2.0 + i * du) ** 3 for i in range(110)]))
    ensemble = GaussianEnsemble(
        node_coords=coords,
        mean=np.zeros(n),
        scale=1e-3,
        decay=2.0,
        boundary_weight=_tent_weight,
    )

    def batch_drift(Y, mu):
        return float(mu[0]) * (L @ Y) - float(mu[1]) * (Adv @ Y)

    return BenchmarkCase(
        name="test1",
        resolution=resolution,
        system=system,
        cost=cost,
        controls=controls,
        ensemble=ensemble,
        stepper=StepperConfig(scheme="implicit_euler", dt=1e-2),
        domain=ParameterDomain(np.array([0.05, 2.0]), np.array([0.1, 4.0])),
        batch_drift=batch_drift,
        hjb_dt=0.05,
        sim_t_end=8.0,
    )


# -- Test 2: semilinear heat with cubic reaction -----------------------------


def build_test2(resolution: int = 19) -> BenchmarkCase:
    """Unstable 2D semilinear heat equation y' = Ay + mu (y - y^3) + Bu.

    A discretizes 0.2*Lap(w) - (d/dx1 + d/dx2) w; the scalar parameter
    mu in [2, 7] scales the destabilizing cubic reaction.
    """
    N = resolution
    coords, h = _interior_coords(N)
    n = N * N

    L = _laplacian_2d(N, h)
    D = _upwind_advection(N, h, np.ones((n, 2)))
    A = (0.2 * L - D).tocsr()

    in_b = np.all((coords >= 0.2) & (coords <= 0.6), axis=1)
    B = np.zeros((n, 1))
    B[in_b, 0] = 1.0

    def cubic(y):
        return y - y**3

    def cubic_jac(y):
        return scipy.sparse.diags(1.0 - 3.0 * y**2)

    system = SeparableControlSystem(
        n=n,
        m=1,
        drift_terms=(
            linear_drift(A),
            DriftTerm(
                coefficient=lambda mu: float(np.atleast_1d(mu)[0]),
                spatial=cubic,
                jacobian=cubic_jac,
            ),
        ),
        control_terms=(constant_control(B),),
    )
    cost = QuadraticCost(
        control_weight=lambda mu: np.array([[1.0]]),
        discount=1e-3,
        state_weight_terms=constant_state_cost(10.0 * np.eye(n)),
    )
    # value set unspecified in the reference setup: cubically spaced grid
    controls = ControlGrid(np.array([(-3.0 + 0.2 * i) ** 3 for i in range(31)]))
    ensemble = GaussianEnsemble(
        node_coords=coords,
        mean=np.zeros(n),
        scale=0.45,
        decay=5.0,
        boundary_weight=_tent_weight,
    )

    def batch_drift(Y, mu):
        m = float(np.atleast_1d(mu)[0])
        return A @ Y + m * (Y - Y**3)

    return BenchmarkCase(
        name="test2",
        resolution=resolution,
        system=system,
        cost=cost,
        controls=controls,
        ensemble=ensemble,
        stepper=StepperConfig(scheme="explicit_euler", dt=1e-3),
        domain=ParameterDomain(np.array([2.0]), np.array([7.0])),
        batch_drift=batch_drift,
        hjb_dt=5e-3,
        sim_t_end=5.0,
    )


# -- Test 3: coupled Burgers system ------------------------------------------


def _burgers_convection(N: int, h: float):
    """Upwind (w . grad) w for the stacked two-component state."""

    def pad(W):
        return np.pad(W, 1)

    def deriv(Wp, axis, vel):
        if axis == 0:
            back = (Wp[1:-1, 1:-1] - Wp[:-2, 1:-1]) / h
            fwd = (Wp[2:, 1:-1] - Wp[1:-1, 1:-1]) / h
        else:
            back = (Wp[1:-1, 1:-1] - Wp[1:-1, :-2]) / h
            fwd = (Wp[1:-1, 2:] - Wp[1:-1, 1:-1]) / h
        return np.where(vel >= 0, back, fwd)

    def convection(y):
        W1 = y[: N * N].reshape(N, N)
        W2 = y[N * N :].reshape(N, N)
        W1p, W2p = pad(W1), pad(W2)
        out = np.empty_like(y)
        for k, Wp in enumerate((W1p, W2p)):
            conv = W1 * deriv(Wp, 0, W1) + W2 * deriv(Wp, 1, W2)
            out[k * N * N : (k + 1) * N * N] = -conv.ravel()
        return out

    return convection


def build_test3(resolution: int = 20) -> BenchmarkCase:
    """Coupled 2D Burgers system with two ball-supported controls.

    The parameters (mu_1, mu_2) in [0.01, 5]^2 only weight the two average
    velocity outputs in the cost; the dynamics are parameter-independent.
    """
    N = resolution
    coords, h = _interior_coords(N)
    n = 2 * N * N
    sigma = 1e-4

    L1 = _laplacian_2d(N, h)
    L = scipy.sparse.block_diag([L1, L1]).tocsr()
    convection = _burgers_convection(N, h)

    ball = (coords[:, 0] - 0.5) ** 2 + (coords[:, 1] - 0.25) ** 2 <= 0.2**2
    B = np.zeros((n, 2))
    B[: N * N, 0] = ball
    B[N * N :, 1] = ball
    C = np.zeros((2, n))
    C[0, : N * N] = h**2 * ball
    C[1, N * N :] = h**2 * ball

    system = SeparableControlSystem(
        n=n,
        m=2,
        drift_terms=(
            linear_drift(L, coefficient=lambda mu: sigma),
            DriftTerm(coefficient=lambda mu: 1.0, spatial=convection),
        ),
        control_terms=(constant_control(B),),
    )
    cost = QuadraticCost(
        control_weight=lambda mu: np.eye(2),
        discount=1e-4,
        output_map=C,
        output_weight=lambda mu: np.diag(np.asarray(mu, dtype=float) ** 2),
    )
    values_1d = np.array([(-3.0 + 0.1875 * i) ** 3 for i in range(33)])
    controls = ControlGrid.product(values_1d, 2)
    block = lambda mean: GaussianEnsemble(  # noqa: E731
        node_coords=coords,
        mean=mean * np.ones(N * N),
        scale=0.2,
        decay=1.0,
        boundary_weight=None,
    )
    ensemble = BlockEnsemble((block(0.0), block(-1.0)))

    def batch_drift(Y, mu):
        out = sigma * (L @ Y)
        for b in range(Y.shape[1]):
            out[:, b] += convection(Y[:, b])
        return out

    return BenchmarkCase(
        name="test3",
        resolution=resolution,
        system=system,
        cost=cost,
        controls=controls,
        ensemble=ensemble,
        stepper=StepperConfig(scheme="explicit_euler", dt=5e-3),
        domain=ParameterDomain(np.array([0.01, 0.01]), np.array([5.0, 5.0])),
        batch_drift=batch_drift,
        hjb_dt=0.02,
        sim_t_end=2.5,
    )


_BUILDERS = {"test1": build_test1, "test2": build_test2, "test3": build_test3}
_DEFAULT_RESOLUTION = {"test1": 26, "test2": 19, "test3": 20}


@lru_cache(maxsize=8)
def _cached_benchmark(name: str, resolution: int) -> BenchmarkCase:
    return _BUILDERS[name](resolution)


def get_benchmark(name: str, resolution: Optional[int] = None) -> BenchmarkCase:
    if name not in _BUILDERS:
        raise KeyError(f"unknown benchmark {name!r}; available: {sorted(_BUILDERS)}")
    return _cached_benchmark(name, resolution or _DEFAULT_RESOLUTION[name])


def default_config(name: str):
    """Per-benchmark pipeline defaults (partition, grids, solver steps)."""
    from .pipeline import PipelineConfig

    if name == "test1":
        return PipelineConfig(
            train_points_per_axis=3,
            greedy_tol=0.9,
            max_dim=5,
            max_refine=3,
            snapshot_times=(0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0),
            coarse_points=9,
            fine_points=25,
            hjb_dt=0.05,
            vi_tol=1e-7,
            sim_t_end=8.0,
        )
    if name == "test2":
        return PipelineConfig(
            train_points_per_axis=9,
            greedy_tol=1e-3,
            max_dim=3,
            max_refine=2,
            snapshot_times=(0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0),
            coarse_points=9,
            fine_points=25,
            hjb_dt=5e-3,
            vi_tol=1e-6,
            sim_t_end=5.0,
        )
    if name == "test3":
        return PipelineConfig(
            train_points_per_axis=3,
            greedy_tol=0.1,
            max_dim=2,
            max_refine=0,
            snapshot_times=(0.0, 0.5, 1.0, 1.5, 2.0, 2.5),
            coarse_points=9,
            fine_points=15,
            hjb_dt=0.02,
            vi_tol=1e-6,
            sim_t_end=2.5,
        )
    raise KeyError(f"unknown benchmark {name!r}")


# -- batched closed-loop simulation ------------------------------------------


def _batch_running(cost: QuadraticCost, Y: np.ndarray, U: np.ndarray, mu) -> np.ndarray:
    """Running cost column-wise for state batch Y (n, B) and controls U (m, B)."""
    R = cost.control_matrix(mu)
    out = np.einsum("ib,ij,jb->b", U, R, U)
    if cost.output_map is not None:
        Z = cost.output_map @ Y
        W = np.atleast_2d(np.asarray(cost.output_weight(mu), dtype=float))
        out = out + np.einsum("ib,ij,jb->b", Z, W, Z)
    else:
        for coeff, Q in cost.state_weight_terms:
            out = out + float(coeff(mu)) * np.einsum("ib,ij,jb->b", Y, Q, Y)
    return out


def _batch_feedback(case, field, basis, mu, Y, sl_cfg) -> np.ndarray:
    """Greedy feedback controls for a batch of full states, shape (m, B)."""
    U = case.controls.values  # (Nu, m)
    Psi = basis.columns
    drift = case.batch_drift(Y, mu)  # (n, B)
    base_red = Psi.T @ (Y + sl_cfg.dt * drift)  # (ell, B)
    Bmat = case.system.control_matrix(Y[:, 0], mu)  # constant input map
    ctrl_red = sl_cfg.dt * (Psi.T @ (Bmat @ U.T))  # (ell, Nu)
    feet = base_red[:, :, None] + ctrl_red[:, None, :]  # (ell, B, Nu)
    nB, nU = Y.shape[1], U.shape[0]
    vals = hjb_mod.interpolate_many(field, feet.reshape(feet.shape[0], -1).T).reshape(nB, nU)
    R = case.cost.control_matrix(mu)
    g_ctrl = np.einsum("ij,jk,ik->i", U, R, U)
    scores = sl_cfg.discount_factor * vals + sl_cfg.dt * g_ctrl[None, :]
    pick = np.argmin(scores, axis=1)
    return U[pick].T


def closed_loop_costs(
    case: BenchmarkCase,
    mu,
    X0: np.ndarray,
    controller,
    t_end: Optional[float] = None,
    sl_cfg=None,
):
    """Discounted costs of a batch of closed-loop runs.

    ``controller`` is "none", ("lqr", K) or ("hjb", field, basis); the
    HJB variant needs ``sl_cfg``. Diverged columns get cost infinity.
    Returns (costs (B,), diverged mask (B,)).
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    t_end = t_end if t_end is not None else case.sim_t_end
    dt = case.stepper.dt
    n_steps = int(round(t_end / dt))
    Y = np.ascontiguousarray(X0.T, dtype=float)  # (n, B)
    B_count = Y.shape[1]
    costs = np.zeros(B_count)
    alive = np.ones(B_count, dtype=bool)
    lam = case.cost.discount

    implicit = case.stepper.scheme == "implicit_euler"
    if implicit:
        if not case.system.is_linear():
            raise NotImplementedError("batched implicit stepping requires linear dynamics")
        solve = model_mod._cached_implicit_solver(case.system, mu, dt)
        Bmat = case.system.control_matrix(Y[:, 0], mu)

    for k in range(n_steps):
        if not np.any(alive):
            break
        if controller == "none":
            U = np.zeros((case.system.m, B_count))
        elif controller[0] == "lqr":
            U = -(controller[1] @ Y)
        else:
            U = _batch_feedback(case, controller[1], controller[2], mu, Y, sl_cfg)
        g = _batch_running(case.cost, Y, U, mu)
        costs[alive] += dt * np.exp(-lam * k * dt) * g[alive]
        if implicit:
            Y = solve(Y + dt * (Bmat @ U))
        else:
            Bmat = case.system.control_matrix(Y[:, 0], mu)
            Y = Y + dt * (case.batch_drift(Y, mu) + Bmat @ U)
        bad = ~np.all(np.isfinite(Y), axis=0) | (np.max(np.abs(Y), axis=0) > DIVERGENCE_GUARD)
        newly_dead = bad & alive
        if np.any(newly_dead):
            costs[newly_dead] = np.inf
            alive &= ~bad
            Y[:, ~alive] = 0.0
    return costs, ~alive


# -- experiment drivers ------------------------------------------------------


def single_parameter_grids(case, basis: ReducedBasis, mu_star, points: int, seed: int, snapshot_times=None):
    """Data-driven and matching equidistant grids for a fixed-parameter basis."""
    times = snapshot_times or (0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0)
    cfg = GridConfig(times=times, n_train=100, axis_count=points)
    Y, _ = collect_snapshots(
        case.system, case.ensemble, mu_star, None, cfg.times, cfg.n_train, seed, case.stepper
    )
    fits = fit_box_components(basis.columns, Y)
    nonequi = TensorGrid(tuple(equal_mass_grid(f, points, cfg.coverage) for f in fits))
    equi = TensorGrid(
        tuple(
            UnivariateGrid(np.linspace(ax.nodes[0], ax.nodes[-1], points))
            for ax in nonequi.axes
        )
    )
    return nonequi, equi


def _hjb_field_for_basis(case, basis, mu, grid, sl_cfg, init="lqr"):
    """Policy-iteration value field on one grid for a fixed basis."""
    from .reduced import build_tables

    table = build_tables(case.system, basis, grid, case.cost)
    evaluator = hjb_mod.TableEvaluator(table, grid)
    g_state = table.state_cost.at_nodes(grid.nodes(), mu)
    g_ctrl = table.control_cost(case.controls.values, mu)
    penalty = hjb_mod.default_penalty(float(np.max(g_state)) + float(np.max(g_ctrl)), sl_cfg)
    values = np.zeros(grid.size)
    if init == "lqr":
        try:
            A, Bmat = model_mod.linearize(case.system, np.zeros(case.system.n), np.zeros(case.system.m), mu)
            Psi = basis.columns
            prob = AREProblem(
                Psi.T @ A @ Psi,
                Psi.T @ Bmat,
                Psi.T @ case.cost.state_matrix(mu) @ Psi,
                case.cost.control_matrix(mu),
                case.cost.discount,
            )
            Z = solve_are(prob).P
            nodes = grid.nodes()
            values = np.minimum(np.einsum("ij,jk,ik->i", nodes, Z, nodes), penalty)
        except RiccatiError:
            logger.warning("reduced ARE failed at mu=%s, starting PI from zero", mu)
    field0 = hjb_mod.ValueField(grid, values, penalty)
    return hjb_mod.policy_iteration(field0, evaluator, evaluator, case.controls, mu, sl_cfg)


def run_table1(
    case: Optional[BenchmarkCase] = None,
    mu_star=(0.08, 3.0),
    ells=(1, 2, 3, 4, 5),
    points=11,
    grid_kinds=("equi", "nonequi"),
    n_test: int = 100,
    seed: int = 0,
    t_end: Optional[float] = None,
    hjb_dt: Optional[float] = None,
):
    """Fixed-parameter cost-error table for the advection-diffusion problem.

    For each reduced dimension the basis is the leading left singular
    vectors of the ARE solution at mu_star. Emits the mean relative cost
    error against the full LQR reference for the reduced LQR controller
    and for the HJB controller on equidistant / data-driven grids.
    """
    case = case or get_benchmark("test1")
    mu_star = np.asarray(mu_star, dtype=float)
    t_end = t_end if t_end is not None else case.sim_t_end
    sl_cfg = hjb_mod.SLConfig(
        dt=hjb_dt if hjb_dt is not None else case.hjb_dt,
        discount=case.cost.discount,
        pi_max_iter=40,
    )

    family = make_lq_family(case.system, case.cost)
    prob = family(mu_star)
    P = solve_are(prob).P
    Uvec, _, _ = np.linalg.svd(P)
    K_full = lqr_gain(prob, solve_are(prob))

    X0 = model_mod.sample_initial(case.ensemble, n_test, seed)
    J_ref, ref_diverged = closed_loop_costs(case, mu_star, X0, ("lqr", K_full), t_end)
    if np.any(ref_diverged):
        raise RuntimeError("full LQR reference diverged")

    rows = []
    for ell in ells:
        basis = ReducedBasis(Uvec[:, :ell])
        Psi = basis.columns

        A_hat = Psi.T @ prob.A @ Psi
        B_hat = Psi.T @ prob.B
        Q_hat = Psi.T @ prob.Q @ Psi
        try:
            red_prob = AREProblem(A_hat, B_hat, 0.5 * (Q_hat + Q_hat.T), prob.R, prob.discount)
            K_red = lqr_gain(red_prob, solve_are(red_prob)) @ Psi.T
            J_lqr, div = closed_loop_costs(case, mu_star, X0, ("lqr", K_red), t_end)
        except RiccatiError:
            J_lqr, div = np.full(n_test, np.inf), np.ones(n_test, dtype=bool)
        rows.append(_table1_row(ell, "lqr", points, "-", J_lqr, J_ref, div))

        nonequi, equi = single_parameter_grids(case, basis, mu_star, points, seed + 1)
        for kind, grid in (("equi", equi), ("nonequi", nonequi)):
            if kind not in grid_kinds:
                continue
            pi = _hjb_field_for_basis(case, basis, mu_star, grid, sl_cfg)
            J_hjb, div = closed_loop_costs(
                case, mu_star, X0, ("hjb", pi.field, basis), t_end, sl_cfg
            )
            rows.append(_table1_row(ell, "hjb", points, kind, J_hjb, J_ref, div))
    return rows


def _table1_row(ell, column, points, kind, J, J_ref, diverged):
    rel = np.abs(J - J_ref) / np.abs(J_ref)
    finite = np.isfinite(rel)
    error = float(np.mean(rel)) if np.all(finite) else np.inf
    return {
        "ell": int(ell),
        "column": column,
        "points": int(points),
        "kind": kind,
        "error": error,
        "mean_finite_error": float(np.mean(rel[finite])) if np.any(finite) else np.inf,
        "diverged": int(np.sum(diverged)),
    }


def run_heat_ratio(
    mus,
    depths=(1, 3),
    n_ics: int = 20,
    seed: int = 0,
    resolution: Optional[int] = None,
    config=None,
    variants=("barycenter", "online"),
):
    """LQR-to-HJB cost ratios for the semilinear heat problem.

    For each partition depth builds an offline bundle, then for each
    parameter compares the LQR controller from the local linearization
    against the HJB feedback, using either the offline barycenter value
    field directly or the online PI refinement.
    """
    from . import pipeline as pipeline_mod

    case = get_benchmark("test2", resolution)
    base_cfg = config or default_config("test2")
    X0 = model_mod.sample_initial(case.ensemble, n_ics, seed)
    rows = []
    for depth in depths:
        cfg = replace(base_cfg, max_refine=depth)
        bundle = pipeline_mod.offline_build(case, cfg, seed)
        sl_cfg = cfg.sl_config(case.cost.discount)
        for mu in mus:
            mu = np.atleast_1d(np.asarray(mu, dtype=float))
            K = _lqr_gain_at(case, mu)
            J_lqr, _ = closed_loop_costs(case, mu, X0, ("lqr", K), cfg.sim_t_end)
            i = _locate(bundle, mu)
            basis = bundle.partition.bases[i]
            for variant in variants:
                if variant == "online":
                    res = pipeline_mod.online_query(bundle, mu, [], cfg)
                    field = res.field
                else:
                    table = bundle.tables[i]
                    penalty = pipeline_mod._box_penalty(
                        table, bundle.fine_grids[i], case.controls, mu, sl_cfg
                    )
                    field = hjb_mod.transfer(bundle.barycenter_fields[i], bundle.fine_grids[i], penalty)
                J_hjb, _ = closed_loop_costs(
                    case, mu, X0, ("hjb", field, basis), cfg.sim_t_end, sl_cfg
                )
                ratio = float(np.mean(J_lqr) / np.mean(J_hjb))
                rows.append(
                    {
                        "depth": int(depth),
                        "mu": float(mu[0]),
                        "variant": variant,
                        "ratio": ratio,
                        "mean_lqr": float(np.mean(J_lqr)),
                        "mean_hjb": float(np.mean(J_hjb)),
                    }
                )
    return rows


def _locate(bundle, mu):
    from .basis import locate

    return locate(bundle.partition, mu)


def _lqr_gain_at(case, mu):
    A, B = model_mod.linearize(case.system, np.zeros(case.system.n), np.zeros(case.system.m), mu)
    prob = AREProblem(A, B, case.cost.state_matrix(mu), case.cost.control_matrix(mu), case.cost.discount)
    return lqr_gain(prob, solve_are(prob))


def run_burgers_ratio(
    a_values=(0.1, 2.5, 5.0),
    n_ics: int = 10,
    seed: int = 0,
    resolution: Optional[int] = None,
    config=None,
    bundle=None,
):
    """Controlled-to-uncontrolled cost ratios for the Burgers system.

    Runs mu = (a, a) for each requested weight a; emits mean, best (min)
    and worst (max) ratio over the sampled initial conditions.
    """
    from . import pipeline as pipeline_mod

    case = get_benchmark("test3", resolution)
    cfg = config or default_config("test3")
    if bundle is None:
        bundle = pipeline_mod.offline_build(case, cfg, seed)
    sl_cfg = cfg.sl_config(case.cost.discount)
    X0 = model_mod.sample_initial(case.ensemble, n_ics, seed + 7)
    rows = []
    for a in a_values:
        mu = np.array([float(a), float(a)])
        res = pipeline_mod.online_query(bundle, mu, [], cfg)
        basis = bundle.partition.bases[res.box_index]
        J_hjb, _ = closed_loop_costs(case, mu, X0, ("hjb", res.field, basis), cfg.sim_t_end, sl_cfg)
        J_unc, _ = closed_loop_costs(case, mu, X0, "none", cfg.sim_t_end)
        ratios = J_hjb / J_unc
        rows.append(
            {
                "a": float(a),
                "mean": float(np.mean(ratios)),
                "best": float(np.min(ratios)),
                "worst": float(np.max(ratios)),
                "ratios": ratios.tolist(),
            }
        )
    return rows
