"""Data-driven construction of bounded reduced domains and tensor grids.

Snapshots of the high-dimensional system are projected onto each local
basis; a zero-mean Gaussian is fitted per reduced component and its
quantiles generate non-uniform univariate grids with equal probability
mass between neighboring nodes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from .model import (
    DivergenceError,
    SeparableControlSystem,
    StepperConfig,
    sample_initial,
    simulate,
)

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class ComponentDistribution:
    """Zero-mean Gaussian fitted to one reduced coordinate."""

    std: float
    sample_count: int

    def __post_init__(self):
        if self.std <= 0:
            raise ValueError("std must be positive")


@dataclass(frozen=True)
class UnivariateGrid:
    """Strictly increasing 1-d node list."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("grid needs at least two nodes")
        if not np.all(np.diff(nodes) > 0):
            raise ValueError("grid nodes must be strictly increasing")

    @property
    def size(self) -> int:
        return self.nodes.size


@dataclass(frozen=True, eq=False)
class TensorGrid:
    """Cartesian product of univariate grids with row-major node enumeration."""

    axes: tuple
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if len(self.axes) < 1:
            raise ValueError("tensor grid needs at least one axis")

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(ax.size for ax in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def nodes(self) -> np.ndarray:
        """All grid nodes as a (size, dim) array, row-major (C) order."""
        pts = self._cache.get("nodes")
        if pts is None:
            mesh = np.meshgrid(*[ax.nodes for ax in self.axes], indexing="ij")
            pts = np.stack([m.ravel(order="C") for m in mesh], axis=1)
            self._cache["nodes"] = pts
        return pts

    def node(self, k: int) -> np.ndarray:
        return np.array(
            [ax.nodes[i] for ax, i in zip(self.axes, self.multi_index(k))]
        )

    def multi_index(self, k: int) -> tuple:
        return tuple(int(i) for i in np.unravel_index(k, self.shape))

    def flat_index(self, multi) -> int:
        return int(np.ravel_multi_index(tuple(multi), self.shape))

    def bounds(self) -> np.ndarray:
        """Per-axis (low, high) bounding box, shape (dim, 2)."""
        return np.array([[ax.nodes[0], ax.nodes[-1]] for ax in self.axes])

    @staticmethod
    def uniform(lower: Sequence[float], upper: Sequence[float], counts) -> "TensorGrid":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        counts = np.broadcast_to(np.asarray(counts, dtype=int), lower.shape)
        axes = [
            UnivariateGrid(np.linspace(lo, hi, c))
            for lo, hi, c in zip(lower, upper, counts)
        ]
        return TensorGrid(tuple(axes))


def collect_snapshots(
    sys: SeparableControlSystem,
    ensemble,
    mu_star,
    control,
    times: Sequence[float],
    n_train: int,
    seed: int,
    stepper: StepperConfig,
):
    """Simulate sampled initial conditions and collect states at given times.

    Returns (snapshot matrix of shape (n, n_kept * len(times)), number of
    skipped samples). Diverged trajectories are skipped with a warning.
    """
    if n_train < 2:
        raise ValueError("need at least two training simulations")
    times = np.sort(np.asarray(times, dtype=float))
    if times[0] < 0:
        raise ValueError("snapshot times must be non-negative")
    t_end = float(times[-1])
    idx = np.round(times / stepper.dt).astype(int)
    if np.max(np.abs(idx * stepper.dt - times)) > 1e-9 * max(1.0, t_end):
        raise ValueError("snapshot times must be multiples of the step size")

    ics = sample_initial(ensemble, n_train, seed)
    columns = []
    skipped = 0
    for x0 in ics:
        if t_end == 0.0:
            columns.append(x0[:, None])
            continue
        try:
            traj = simulate(sys, x0, control, mu_star, stepper, t_end)
        except DivergenceError:
            skipped += 1
            continue
        columns.append(traj.states[idx].T)
    if skipped:
        logger.warning("skipped %d of %d diverged training simulations", skipped, n_train)
    if not columns:
        raise RuntimeError("all training simulations diverged")
    return np.hstack(columns), skipped


def fit_component(samples) -> ComponentDistribution:
    """Zero-mean Gaussian fit: std is the root mean square of the samples."""
    s = np.asarray(samples, dtype=float).ravel()
    if s.size < 2:
        raise ValueError("need at least two samples")
    std = float(np.sqrt(np.mean(s**2)))
    if std <= 0.0:
        logger.warning("all-zero component samples, flooring std at %g", STD_FLOOR)
        std = STD_FLOOR
    return ComponentDistribution(std=std, sample_count=s.size)


def equal_mass_grid(dist: ComponentDistribution, count: int, coverage: float = 0.005) -> UnivariateGrid:
    """Gaussian-quantile grid with equal probability mass between nodes.

    Nodes sit at quantile levels alpha + (k-1)(1-2 alpha)/(H-1); an odd
    count puts the middle node exactly at 0 and the grid is symmetric.
    """
    if count < 3 or count % 2 == 0:
        raise ValueError("node count must be an odd integer >= 3")
    if not 0.0 < coverage < 0.5:
        raise ValueError("coverage must lie in (0, 0.5)")
    levels = coverage + np.arange(count) * (1.0 - 2.0 * coverage) / (count - 1)
    z = norm.ppf(levels)
    # enforce exact symmetry and the central zero
    half = count // 2
    z[half] = 0.0
    z[half + 1 :] = -z[:half][::-1]
    return UnivariateGrid(dist.std * z)


@dataclass(frozen=True)
class GridConfig:
    """Sampling setup for the data-driven grid construction."""

    times: tuple
    n_train: int = 100
    axis_count: int = 9
    coverage: float = 0.005
    control: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))


def fit_box_components(
    basis_columns: np.ndarray,
    snapshots: np.ndarray,
):
    """Project snapshots onto a basis and fit one Gaussian per component."""
    reduced = basis_columns.T @ snapshots
    return [fit_component(reduced[j]) for j in range(reduced.shape[0])]


def build_grid(
    partition,
    sys: SeparableControlSystem,
    ensemble,
    cfg: GridConfig,
    stepper: StepperConfig,
    seed: int,
):
    """Per-box tensor grids from barycenter snapshots (one grid per box)."""
    grids = []
    for i, box in enumerate(partition.boxes):
        fits = box_component_fits(partition, i, sys, ensemble, cfg, stepper, seed)
        grids.append(grid_from_fits(fits, cfg.axis_count, cfg.coverage))
    return grids


def box_component_fits(partition, box_index, sys, ensemble, cfg, stepper, seed):
    """Component distributions for one parameter box (barycenter sampling)."""
    box = partition.boxes[box_index]
    mu_star = box.barycenter()
    Y, _ = collect_snapshots(
        sys, ensemble, mu_star, cfg.control, cfg.times, cfg.n_train, seed + box_index, stepper
    )
    return fit_box_components(partition.bases[box_index].columns, Y)


def grid_from_fits(fits, axis_count, coverage) -> TensorGrid:
    counts = np.broadcast_to(np.asarray(axis_count, dtype=int), (len(fits),))
    axes = [equal_mass_grid(f, int(c), coverage) for f, c in zip(fits, counts)]
    return TensorGrid(tuple(axes))
