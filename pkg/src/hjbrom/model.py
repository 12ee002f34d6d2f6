"""Parametric control systems in parameter-separable form.

The dynamics are represented as

    f(y, u; mu) = sum_q theta_q^y(mu) f_q^y(y) + sum_q theta_q^u(mu) f_q^u(y) u,

together with a quadratic running cost, Euler time stepping, trajectory
simulation and spatially correlated Gaussian initial-condition ensembles.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

logger = logging.getLogger(__name__)

DIVERGENCE_GUARD = 1e12
FD_STEP = 1e-6


class DimensionError(ValueError):
    """Raised when an input has an inconsistent shape."""


class DivergenceError(RuntimeError):
    """Raised when a trajectory exceeds the overflow guard."""


class NewtonError(RuntimeError):
    """Raised when the implicit-Euler Newton solve does not converge."""


@dataclass(frozen=True)
class ParameterDomain:
    """Axis-aligned box of admissible parameters."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size < 1:
            raise DimensionError("lower/upper must be 1-d vectors of equal length")
        if not np.all(lo < hi):
            raise ValueError("parameter box must satisfy lower < upper component-wise")

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, mu) -> bool:
        mu = np.asarray(mu, dtype=float)
        return bool(np.all(mu >= self.lower) and np.all(mu <= self.upper))

    def barycenter(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))


@dataclass(frozen=True)
class DriftTerm:
    """One separable drift term theta(mu) * f(y).

    ``jacobian`` maps y to df/dy (dense or sparse); ``linear`` marks fields
    of the form f(y) = M y with constant M, which enables cached implicit
    solves.
    """

    coefficient: Callable[[np.ndarray], float]
    spatial: Callable[[np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    linear: bool = False


@dataclass(frozen=True)
class ControlTerm:
    """One separable control term theta(mu) * G(y) u with G(y) an n-by-m map."""

    coefficient: Callable[[np.ndarray], float]
    spatial: Callable[[np.ndarray], np.ndarray]
    constant: bool = False


def linear_drift(matrix, coefficient=None) -> DriftTerm:
    """Drift term f(y) = M y for a constant (sparse or dense) matrix M."""
    M = matrix
    coeff = coefficient if coefficient is not None else (lambda mu: 1.0)
    return DriftTerm(
        coefficient=coeff,
        spatial=lambda y: M @ y,
        jacobian=lambda y: M,
        linear=True,
    )


def constant_control(matrix, coefficient=None) -> ControlTerm:
    """Control term with a constant input matrix B."""
    B = np.asarray(matrix, dtype=float) if not scipy.sparse.issparse(matrix) else matrix
    coeff = coefficient if coefficient is not None else (lambda mu: 1.0)
    return ControlTerm(coefficient=coeff, spatial=lambda y: B, constant=True)


class EvalCounter:
    """Mutable counter of full-order field evaluations (dynamics calls)."""

    __slots__ = ("full_evals",)

    def __init__(self):
        self.full_evals = 0

    def snapshot(self) -> int:
        return self.full_evals


@dataclass(frozen=True, eq=False)
class SeparableControlSystem:
    """Parametric control system in parameter-separable form."""

    n: int
    m: int
    drift_terms: tuple
    control_terms: tuple
    counter: EvalCounter = field(default_factory=EvalCounter, repr=False)
    _implicit_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "drift_terms", tuple(self.drift_terms))
        object.__setattr__(self, "control_terms", tuple(self.control_terms))
        if len(self.drift_terms) < 1:
            raise ValueError("at least one drift term is required")

    def drift(self, y: np.ndarray, mu) -> np.ndarray:
        """Evaluate f^y(y; mu) = sum_q theta_q(mu) f_q(y)."""
        y = _check_vector(y, self.n, "state")
        self.counter.full_evals += 1
        out = np.zeros(self.n)
        for term in self.drift_terms:
            out += float(term.coefficient(mu)) * np.asarray(term.spatial(y)).reshape(self.n)
        return out

    def control_matrix(self, y: np.ndarray, mu) -> np.ndarray:
        """Evaluate f^u(y; mu), the n-by-m input map at state y."""
        y = _check_vector(y, self.n, "state")
        out = np.zeros((self.n, self.m))
        if self.control_terms:
            self.counter.full_evals += 1
        for term in self.control_terms:
            G = term.spatial(y)
            G = G.toarray() if scipy.sparse.issparse(G) else np.asarray(G, dtype=float)
            out += float(term.coefficient(mu)) * G.reshape(self.n, self.m)
        return out

    def is_linear(self) -> bool:
        return all(t.linear for t in self.drift_terms) and all(
            t.constant for t in self.control_terms
        )

    def drift_jacobian(self, y: np.ndarray, mu):
        """Jacobian of f^y with respect to y; sparse when the terms are."""
        parts = []
        for term in self.drift_terms:
            th = float(term.coefficient(mu))
            if term.jacobian is not None:
                parts.append(th * term.jacobian(y))
            else:
                parts.append(th * _fd_jacobian(term.spatial, y))
        if any(scipy.sparse.issparse(p) for p in parts):
            return sum(scipy.sparse.csr_matrix(p) for p in parts)
        return sum(np.asarray(p, dtype=float) for p in parts)


def eval_dynamics(sys: SeparableControlSystem, y, u, mu) -> np.ndarray:
    """Right-hand side f(y, u; mu) of the separable dynamics."""
    y = _check_vector(y, sys.n, "state")
    u = _check_vector(u, sys.m, "control")
    out = sys.drift(y, mu)
    if sys.control_terms:
        out = out + sys.control_matrix(y, mu) @ u
    return out


@dataclass(frozen=True)
class StepperConfig:
    """Time-stepping scheme and step size."""

    scheme: str
    dt: float
    newton_tol: float = 1e-10
    newton_max_iter: int = 50

    def __post_init__(self):
        if self.scheme not in ("explicit_euler", "implicit_euler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


def step(sys: SeparableControlSystem, y, u, mu, cfg: StepperConfig) -> np.ndarray:
    """Advance the state by one time step of the configured Euler scheme."""
    y = _check_vector(y, sys.n, "state")
    u = _check_vector(u, sys.m, "control")
    if cfg.scheme == "explicit_euler":
        return y + cfg.dt * eval_dynamics(sys, y, u, mu)
    return _implicit_step(sys, y, u, mu, cfg)


def _implicit_step(sys, y, u, mu, cfg) -> np.ndarray:
    dt = cfg.dt
    scale = max(1.0, float(np.max(np.abs(y))))

    if sys.is_linear():
        # y+ = y + dt (J y+ + G u) with constant J, G: one cached linear solve.
        solve = _cached_implicit_solver(sys, mu, dt)
        rhs = y + dt * (sys.control_matrix(y, mu) @ u) if sys.control_terms else y.copy()
        return solve(rhs)

    z = y.copy()
    res = z - y - dt * eval_dynamics(sys, z, u, mu)
    for it in range(cfg.newton_max_iter):
        nrm = float(np.max(np.abs(res)))
        if nrm <= cfg.newton_tol * scale:
            return z
        J = sys.drift_jacobian(z, mu)
        if scipy.sparse.issparse(J):
            A = scipy.sparse.identity(sys.n, format="csc") - dt * J.tocsc()
            delta = scipy.sparse.linalg.spsolve(A, -res)
        else:
            A = np.eye(sys.n) - dt * J
            delta = np.linalg.solve(A, -res)
        # damped update: halve until the residual does not increase
        lam, accepted = 1.0, False
        for _ in range(30):
            z_new = z + lam * delta
            res_new = z_new - y - dt * eval_dynamics(sys, z_new, u, mu)
            if np.max(np.abs(res_new)) < nrm:
                z, res, accepted = z_new, res_new, True
                break
            lam *= 0.5
        if not accepted:
            raise NewtonError(
                f"implicit Euler stalled at iteration {it}: residual {nrm:.3e}"
            )
    raise NewtonError(
        f"implicit Euler did not converge in {cfg.newton_max_iter} iterations "
        f"(residual {float(np.max(np.abs(res))):.3e}, tol {cfg.newton_tol:.1e})"
    )


def _cached_implicit_solver(sys, mu, dt):
    key = (np.asarray(mu, dtype=float).tobytes(), float(dt))
    solve = sys._implicit_cache.get(key)
    if solve is None:
        J = sys.drift_jacobian(np.zeros(sys.n), mu)
        if scipy.sparse.issparse(J):
            A = scipy.sparse.identity(sys.n, format="csc") - dt * J.tocsc()
            solve = scipy.sparse.linalg.splu(A).solve
        else:
            lu_piv = scipy.linalg.lu_factor(np.eye(sys.n) - dt * np.asarray(J))
            solve = lambda b: scipy.linalg.lu_solve(lu_piv, b)  # noqa: E731
        sys._implicit_cache[key] = solve
    return solve


@dataclass(frozen=True)
class Trajectory:
    """Discrete trajectory: K+1 states, K applied controls."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    mu: np.ndarray


Policy = Union[None, np.ndarray, Callable[[float, np.ndarray], np.ndarray]]


def simulate(
    sys: SeparableControlSystem,
    x: np.ndarray,
    control: Policy,
    mu,
    cfg: StepperConfig,
    t_end: float,
) -> Trajectory:
    """Simulate the closed- or open-loop system on [0, t_end].

    ``control`` is either None (zero control), a constant vector, or a
    callable (t, y) -> u. ``t_end`` must be a positive multiple of cfg.dt.
    """
    x = _check_vector(x, sys.n, "initial state")
    n_steps = int(round(t_end / cfg.dt))
    if n_steps < 1 or abs(n_steps * cfg.dt - t_end) > 1e-9 * max(1.0, abs(t_end)):
        raise ValueError(f"t_end={t_end} is not a positive multiple of dt={cfg.dt}")

    states = np.empty((n_steps + 1, sys.n))
    controls = np.empty((n_steps, sys.m))
    times = cfg.dt * np.arange(n_steps + 1)
    states[0] = x
    y = x
    for k in range(n_steps):
        u = _policy_value(control, times[k], y, sys.m)
        controls[k] = u
        y = step(sys, y, u, mu, cfg)
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > DIVERGENCE_GUARD:
            raise DivergenceError(f"state exceeded overflow guard at t={times[k + 1]:.4g}")
        states[k + 1] = y
    return Trajectory(times=times, states=states, controls=controls, mu=np.atleast_1d(np.asarray(mu, dtype=float)))


def _policy_value(control, t, y, m):
    if control is None:
        return np.zeros(m)
    if callable(control):
        return _check_vector(control(t, y), m, "control")
    return _check_vector(control, m, "control")


@dataclass(frozen=True)
class QuadraticCost:
    """Quadratic running cost g(y, u; mu) = y^T Q(mu) y + u^T R(mu) u.

    The state weight is given either as a parameter-separable sum
    Q(mu) = sum_k theta_k(mu) Q_k, or in output form Q(mu) = C^T W(mu) C
    with a constant output map C.
    """

    control_weight: Callable[[np.ndarray], np.ndarray]
    discount: float
    state_weight_terms: Optional[tuple] = None
    output_map: Optional[np.ndarray] = None
    output_weight: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.discount <= 0:
            raise ValueError("discount must be positive")
        has_terms = self.state_weight_terms is not None
        has_output = self.output_map is not None and self.output_weight is not None
        if has_terms == has_output:
            raise ValueError(
                "exactly one of state_weight_terms or (output_map, output_weight) required"
            )
        if has_terms:
            object.__setattr__(self, "state_weight_terms", tuple(self.state_weight_terms))
        else:
            object.__setattr__(self, "output_map", np.atleast_2d(np.asarray(self.output_map, dtype=float)))

    def state_matrix(self, mu) -> np.ndarray:
        """Assemble the full state weight Q(mu)."""
        if self.state_weight_terms is not None:
            return sum(
                float(coeff(mu)) * np.asarray(Q, dtype=float)
                for coeff, Q in self.state_weight_terms
            )
        C = self.output_map
        W = np.atleast_2d(np.asarray(self.output_weight(mu), dtype=float))
        return C.T @ W @ C

    def control_matrix(self, mu) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.control_weight(mu), dtype=float))

    def running(self, y, u, mu) -> float:
        """Evaluate the running cost at one state/control pair."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        r = float(u @ self.control_matrix(mu) @ u)
        if self.output_map is not None:
            z = self.output_map @ y
            W = np.atleast_2d(np.asarray(self.output_weight(mu), dtype=float))
            return float(z @ W @ z) + r
        s = 0.0
        for coeff, Q in self.state_weight_terms:
            s += float(coeff(mu)) * float(y @ (Q @ y))
        return s + r


def constant_state_cost(Q) -> tuple:
    """Single parameter-independent state weight term."""
    return ((lambda mu: 1.0, np.asarray(Q, dtype=float)),)


def discounted_cost(sys: SeparableControlSystem, cost: QuadraticCost, traj: Trajectory) -> float:
    """Left-endpoint quadrature of the discounted running cost along a trajectory."""
    K = traj.controls.shape[0]
    if K < 1:
        raise ValueError("trajectory must contain at least one step")
    dt = float(traj.times[1] - traj.times[0])
    total = 0.0
    for k in range(K):
        g = cost.running(traj.states[k], traj.controls[k], traj.mu)
        total += dt * np.exp(-cost.discount * traj.times[k]) * g
    return total


@dataclass(frozen=True)
class ControlGrid:
    """Finite set of admissible control values in R^m."""

    values: np.ndarray

    def __post_init__(self):
        V = np.asarray(self.values, dtype=float)
        if V.ndim == 1:
            V = V[:, None]
        object.__setattr__(self, "values", V)
        if V.shape[0] < 1:
            raise ValueError("control grid must be non-empty")
        if np.unique(V, axis=0).shape[0] != V.shape[0]:
            raise ValueError("control grid values must be pairwise distinct")

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @staticmethod
    def product(values_1d: np.ndarray, dims: int) -> "ControlGrid":
        """Cartesian power of a 1-d value list (m = dims)."""
        grids = np.meshgrid(*([np.asarray(values_1d, dtype=float)] * dims), indexing="ij")
        return ControlGrid(np.stack([g.ravel() for g in grids], axis=1))


@dataclass(frozen=True, eq=False)
class GaussianEnsemble:
    """Gaussian initial-condition ensemble with distance-decaying covariance.

    Sigma_ij = c * b(N_i) b(N_j) exp(-gamma ||N_i - N_j||^2) over node
    coordinates N_i, with an optional boundary weight b.
    """

    node_coords: np.ndarray
    mean: np.ndarray
    scale: float
    decay: float
    boundary_weight: Optional[Callable[[np.ndarray], float]] = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        coords = np.atleast_2d(np.asarray(self.node_coords, dtype=float))
        object.__setattr__(self, "node_coords", coords)
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        if self.mean.shape != (coords.shape[0],):
            raise DimensionError("mean must have one entry per node")
        if self.scale <= 0 or self.decay <= 0:
            raise ValueError("scale and decay must be positive")

    @property
    def n(self) -> int:
        return self.node_coords.shape[0]

    def covariance(self) -> np.ndarray:
        cov = self._cache.get("cov")
        if cov is None:
            N = self.node_coords
            d2 = np.sum((N[:, None, :] - N[None, :, :]) ** 2, axis=-1)
            if self.boundary_weight is None:
                b = np.ones(self.n)
            else:
                b = np.array([float(self.boundary_weight(p)) for p in N])
            cov = self.scale * np.outer(b, b) * np.exp(-self.decay * d2)
            self._cache["cov"] = cov
        return cov

    def factor(self) -> np.ndarray:
        """Symmetric square-root factor, negative eigenvalues clipped at 0."""
        L = self._cache.get("factor")
        if L is None:
            w, V = np.linalg.eigh(self.covariance())
            if np.min(w) < -1e-10 * max(1.0, float(np.max(np.abs(w)))):
                logger.warning(
                    "covariance has negative eigenvalues down to %.3e, clipping at 0",
                    float(np.min(w)),
                )
            L = V * np.sqrt(np.clip(w, 0.0, None))
            self._cache["factor"] = L
        return L


@dataclass(frozen=True, eq=False)
class BlockEnsemble:
    """Independent Gaussian ensembles stacked into one state vector."""

    blocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def n(self) -> int:
        return sum(b.n for b in self.blocks)


def sample_initial(ens, count: int, seed: int) -> np.ndarray:
    """Draw `count` initial states; deterministic for a fixed seed."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    return _draw(ens, count, rng)


def _draw(ens, count, rng) -> np.ndarray:
    if isinstance(ens, BlockEnsemble):
        return np.hstack([_draw(b, count, rng) for b in ens.blocks])
    z = rng.standard_normal((count, ens.n))
    return ens.mean + z @ ens.factor().T


def linearize(sys: SeparableControlSystem, ybar, ubar, mu):
    """Linearization (A, B) of the dynamics at (ybar, ubar).

    Uses analytic term Jacobians when available; otherwise central finite
    differences with step 1e-6. B is the separable input map evaluated at
    ybar (the dynamics are linear in u).
    """
    ybar = _check_vector(ybar, sys.n, "state")
    ubar = _check_vector(ubar, sys.m, "control") if sys.m else np.zeros(0)

    analytic = all(t.jacobian is not None for t in sys.drift_terms)
    control_const = all(t.constant for t in sys.control_terms)
    if analytic and (control_const or not np.any(ubar)):
        A = sys.drift_jacobian(ybar, mu)
        A = A.toarray() if scipy.sparse.issparse(A) else np.asarray(A, dtype=float)
    else:
        A = _fd_jacobian(lambda y: eval_dynamics(sys, y, ubar, mu), ybar)
    B = sys.control_matrix(ybar, mu) if sys.control_terms else np.zeros((sys.n, sys.m))
    return A, B


def _fd_jacobian(func, y, h: float = FD_STEP) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    f0 = np.asarray(func(y), dtype=float)
    J = np.empty((f0.size, y.size))
    for j in range(y.size):
        e = np.zeros_like(y)
        e[j] = h
        J[:, j] = (np.asarray(func(y + e)) - np.asarray(func(y - e))) / (2 * h)
    return J


def _check_vector(v, size: int, what: str) -> np.ndarray:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (size,):
        raise DimensionError(f"{what} must have shape ({size},), got {v.shape}")
    return v
