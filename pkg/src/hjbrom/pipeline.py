"""Offline/online decomposition: build, persist and query control bundles.

The offline stage partitions the parameter box, builds data-driven grids,
tabulates projected evaluations on the fine grids and precomputes coarse
barycenter value functions. Online queries locate the box, warm-start a
policy iteration from the barycenter field and run closed-loop feedback
simulations of the full-order system.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import basis as basis_mod
from . import domain as domain_mod
from . import hjb as hjb_mod
from . import model as model_mod
from . import reduced as reduced_mod
from .riccati import AREProblem, solve_are, lqr_gain

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class PipelineConfig:
    """All knobs of the offline/online pipeline (JSON-serializable)."""

    train_points_per_axis: int = 5
    greedy_tol: float = 0.9
    pod_tol: float = 1e-8
    max_dim: int = 5
    max_refine: int = 3
    snapshot_times: tuple = (0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0)
    snapshot_count: int = 100
    coarse_points: int = 9
    fine_points: int = 25
    coverage: float = 0.005
    hjb_dt: float = 0.05
    vi_tol: float = 1e-7
    vi_max_iter: int = 3000
    pi_tol: float = 1e-10
    pi_max_iter: int = 60
    pe_tol: float = 1e-10
    sim_t_end: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "snapshot_times", tuple(float(t) for t in self.snapshot_times))

    def sl_config(self, discount: float) -> hjb_mod.SLConfig:
        return hjb_mod.SLConfig(
            dt=self.hjb_dt,
            discount=discount,
            vi_tol=self.vi_tol,
            vi_max_iter=self.vi_max_iter,
            pi_tol=self.pi_tol,
            pi_max_iter=self.pi_max_iter,
            pe_tol=self.pe_tol,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["snapshot_times"] = list(self.snapshot_times)
        return d

    @staticmethod
    def from_dict(d: dict) -> "PipelineConfig":
        d = dict(d)
        if "snapshot_times" in d:
            d["snapshot_times"] = tuple(d["snapshot_times"])
        return PipelineConfig(**d)


@dataclass(frozen=True, eq=False)
class OfflineBundle:
    """Persisted product of the offline stage."""

    benchmark: str
    resolution: int
    seed: int
    config: PipelineConfig
    partition: basis_mod.ParameterPartition
    coarse_grids: tuple
    fine_grids: tuple
    tables: tuple
    barycenter_fields: tuple
    timings: dict
    case: object = field(repr=False)

    def __post_init__(self):
        S = self.partition.size
        for name, seq in (
            ("coarse_grids", self.coarse_grids),
            ("fine_grids", self.fine_grids),
            ("tables", self.tables),
            ("barycenter_fields", self.barycenter_fields),
        ):
            if len(seq) != S:
                raise ValueError(f"{name} must have one entry per partition box")


@dataclass(frozen=True)
class OnlineResult:
    """Product of one online parameter query."""

    mu: np.ndarray
    box_index: int
    field: hjb_mod.ValueField
    pi_iterations: int
    pi_converged: bool
    full_evals_in_pi: int
    timings: dict
    costs: tuple
    trajectories: tuple


def _train_grid(domain: model_mod.ParameterDomain, points_per_axis: int) -> np.ndarray:
    axes = [
        np.linspace(lo, hi, points_per_axis)
        for lo, hi in zip(domain.lower, domain.upper)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _box_penalty(table, grid, controls, mu, sl_cfg) -> float:
    g_state = table.state_cost.at_nodes(grid.nodes(), mu)
    g_ctrl = table.control_cost(controls.values, mu)
    g_max = float(np.max(g_state)) + float(np.max(g_ctrl))
    return hjb_mod.default_penalty(g_max, sl_cfg)


def offline_build(case_or_name, config: PipelineConfig, seed: int) -> OfflineBundle:
    """Run the complete offline stage for a benchmark.

    Phases: adaptive parameter partition, per-box coarse/fine data-driven
    grids, evaluation tables on the fine grids, and a coarse value
    iteration at each box barycenter. Per-phase wall times are recorded.
    """
    case = _resolve_case(case_or_name)
    timings: dict = {}

    t0 = time.perf_counter()
    family = basis_mod.make_lq_family(case.system, case.cost)
    greedy_cfg = basis_mod.GreedyConfig(
        train_set=_train_grid(case.domain, config.train_points_per_axis),
        tol=config.greedy_tol,
        pod_tol=config.pod_tol,
        max_dim=config.max_dim,
    )
    partition = basis_mod.adaptive_partition(case.domain, greedy_cfg, family, config.max_refine)
    timings["partition"] = time.perf_counter() - t0
    logger.info("partition: %d boxes, levels %s", partition.size, partition.levels.tolist())

    t0 = time.perf_counter()
    grid_cfg = domain_mod.GridConfig(
        times=config.snapshot_times,
        n_train=config.snapshot_count,
        coverage=config.coverage,
    )
    coarse_grids, fine_grids = [], []
    for i in range(partition.size):
        fits = domain_mod.box_component_fits(
            partition, i, case.system, case.ensemble, grid_cfg, case.stepper, seed
        )
        coarse_grids.append(domain_mod.grid_from_fits(fits, config.coarse_points, config.coverage))
        fine_grids.append(domain_mod.grid_from_fits(fits, config.fine_points, config.coverage))
    timings["grids"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    tables = []
    coarse_tables = []
    for i in range(partition.size):
        tables.append(
            reduced_mod.build_tables(case.system, partition.bases[i], fine_grids[i], case.cost)
        )
        coarse_tables.append(
            reduced_mod.build_tables(case.system, partition.bases[i], coarse_grids[i], case.cost)
        )
    timings["tables"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    sl_cfg = config.sl_config(case.cost.discount)
    barycenter_fields = []
    for i in range(partition.size):
        mu_bar = partition.boxes[i].barycenter()
        penalty = _box_penalty(tables[i], fine_grids[i], case.controls, mu_bar, sl_cfg)
        evaluator = hjb_mod.TableEvaluator(coarse_tables[i], coarse_grids[i])
        field0 = hjb_mod.ValueField(coarse_grids[i], np.zeros(coarse_grids[i].size), penalty)
        vi = hjb_mod.value_iteration(field0, evaluator, evaluator, case.controls, mu_bar, sl_cfg)
        if not vi.converged:
            logger.warning(
                "barycenter VI box %d not fully converged (residual %.3e)", i, vi.residual
            )
        barycenter_fields.append(vi.field)
    timings["barycenter_vi"] = time.perf_counter() - t0

    return OfflineBundle(
        benchmark=case.name,
        resolution=case.resolution,
        seed=seed,
        config=config,
        partition=partition,
        coarse_grids=tuple(coarse_grids),
        fine_grids=tuple(fine_grids),
        tables=tuple(tables),
        barycenter_fields=tuple(barycenter_fields),
        timings=timings,
        case=case,
    )


def _resolve_case(case_or_name, resolution: Optional[int] = None):
    if isinstance(case_or_name, str):
        from . import bench

        return bench.get_benchmark(case_or_name, resolution)
    return case_or_name


def online_query(
    bundle: OfflineBundle,
    mu,
    initial_states: Sequence[np.ndarray],
    config: Optional[PipelineConfig] = None,
) -> OnlineResult:
    """Serve one parameter: locate, refine by PI, run closed-loop simulations.

    The PI refinement runs entirely on precomputed tables; full-order
    dynamics evaluations happen only in the feedback simulations.
    """
    config = config or bundle.config
    case = bundle.case
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    timings: dict = {}

    t0 = time.perf_counter()
    i = basis_mod.locate(bundle.partition, mu)
    timings["locate"] = time.perf_counter() - t0

    sl_cfg = config.sl_config(case.cost.discount)
    fine_grid = bundle.fine_grids[i]
    table = bundle.tables[i]

    t0 = time.perf_counter()
    penalty = _box_penalty(table, fine_grid, case.controls, mu, sl_cfg)
    init_field = hjb_mod.transfer(bundle.barycenter_fields[i], fine_grid, penalty)
    timings["transfer"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    evaluator = hjb_mod.TableEvaluator(table, fine_grid)
    evals_before = case.system.counter.snapshot()
    pi = hjb_mod.policy_iteration(init_field, evaluator, evaluator, case.controls, mu, sl_cfg)
    full_evals_in_pi = case.system.counter.snapshot() - evals_before
    timings["policy_iteration"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    policy = hjb_mod.feedback_policy(
        pi.field, bundle.partition.bases[i], case.system, case.cost, case.controls, mu, sl_cfg
    )
    costs, trajectories = [], []
    for x0 in initial_states:
        traj = model_mod.simulate(case.system, x0, policy, mu, case.stepper, config.sim_t_end)
        costs.append(model_mod.discounted_cost(case.system, case.cost, traj))
        trajectories.append(traj)
    timings["simulate"] = time.perf_counter() - t0

    return OnlineResult(
        mu=mu,
        box_index=i,
        field=pi.field,
        pi_iterations=pi.iterations,
        pi_converged=pi.converged,
        full_evals_in_pi=full_evals_in_pi,
        timings=timings,
        costs=tuple(costs),
        trajectories=tuple(trajectories),
    )


def lqr_controller(case, mu):
    """Baseline LQR feedback from the linearization at the origin."""
    A, B = model_mod.linearize(case.system, np.zeros(case.system.n), np.zeros(case.system.m), mu)
    prob = AREProblem(A, B, case.cost.state_matrix(mu), case.cost.control_matrix(mu), case.cost.discount)
    K = lqr_gain(prob, solve_are(prob))

    def policy(t, y):
        return -K @ y

    return policy


def measure_speedup(bundle: OfflineBundle, mus, reps: int = 3, config=None):
    """Median PI wall-time ratio (direct full-order / precomputed tables).

    Returns (ratios per mu, details). Timings use the monotonic clock and
    the median of ``reps`` repetitions.
    """
    config = config or bundle.config
    case = bundle.case
    ratios, details = [], []
    for mu in mus:
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        i = basis_mod.locate(bundle.partition, mu)
        sl_cfg = config.sl_config(case.cost.discount)
        fine_grid = bundle.fine_grids[i]
        table = bundle.tables[i]
        penalty = _box_penalty(table, fine_grid, case.controls, mu, sl_cfg)
        init_field = hjb_mod.transfer(bundle.barycenter_fields[i], fine_grid, penalty)
        table_eval = hjb_mod.TableEvaluator(table, fine_grid)
        red = reduced_mod.ReducedSystem(case.system, bundle.partition.bases[i], case.cost)
        direct_eval = hjb_mod.DirectEvaluator(red, fine_grid)

        with_times, without_times = [], []
        for _ in range(reps):
            t0 = time.perf_counter()
            hjb_mod.policy_iteration(init_field, table_eval, table_eval, case.controls, mu, sl_cfg)
            with_times.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            hjb_mod.policy_iteration(init_field, direct_eval, direct_eval, case.controls, mu, sl_cfg)
            without_times.append(time.perf_counter() - t0)
        tw = float(np.median(with_times))
        two = float(np.median(without_times))
        ratios.append(two / tw)
        details.append({"mu": mu.tolist(), "with_tables": tw, "without_tables": two})
    return ratios, details


# -- persistence -------------------------------------------------------------


def _write_array(directory: Path, name: str, arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(np.asarray(arr, dtype=float))
    raw = arr.tobytes(order="C")
    (directory / name).write_bytes(raw)
    return {
        "file": name,
        "shape": list(arr.shape),
        "dtype": "<f8",
        "sha256": hashlib.sha256(raw).hexdigest(),
    }


def _read_array(directory: Path, meta: dict) -> np.ndarray:
    raw = (directory / meta["file"]).read_bytes()
    if hashlib.sha256(raw).hexdigest() != meta["sha256"]:
        raise ValueError(f"checksum mismatch for {meta['file']}")
    return np.frombuffer(raw, dtype=np.float64).reshape(meta["shape"]).copy()


def save_bundle(bundle: OfflineBundle, path) -> None:
    """Persist a bundle: one JSON manifest plus flat little-endian arrays."""
    path = Path(path)
    arrays = path / "arrays"
    arrays.mkdir(parents=True, exist_ok=True)

    boxes_meta = []
    for i in range(bundle.partition.size):
        box = bundle.partition.boxes[i]
        table = bundle.tables[i]
        vf = bundle.barycenter_fields[i]
        sc = table.state_cost
        if sc.terms is not None:
            cost_meta = {
                "kind": "terms",
                "matrices": [
                    _write_array(arrays, f"box{i}_cost{k}.bin", M)
                    for k, (_, M) in enumerate(sc.terms)
                ],
            }
        else:
            cost_meta = {
                "kind": "output",
                "output_red": _write_array(arrays, f"box{i}_costout.bin", sc.output_red),
            }
        boxes_meta.append(
            {
                "lower": box.lower.tolist(),
                "upper": box.upper.tolist(),
                "level": int(bundle.partition.levels[i]),
                "indicator": float(bundle.partition.indicators[i]),
                "basis": _write_array(arrays, f"box{i}_basis.bin", bundle.partition.bases[i].columns),
                "coarse_axes": [
                    _write_array(arrays, f"box{i}_coarse{j}.bin", ax.nodes)
                    for j, ax in enumerate(bundle.coarse_grids[i].axes)
                ],
                "fine_axes": [
                    _write_array(arrays, f"box{i}_fine{j}.bin", ax.nodes)
                    for j, ax in enumerate(bundle.fine_grids[i].axes)
                ],
                "barycenter_values": _write_array(arrays, f"box{i}_vbar.bin", vf.values),
                "penalty": float(vf.penalty),
                "table": {
                    "drift": [
                        _write_array(arrays, f"box{i}_drift{q}.bin", tab)
                        for q, tab in enumerate(table.drift)
                    ],
                    "control": [
                        _write_array(arrays, f"box{i}_ctrl{q}.bin", tab)
                        for q, tab in enumerate(table.control)
                    ],
                    "cost": cost_meta,
                },
            }
        )

    manifest = {
        "format_version": FORMAT_VERSION,
        "benchmark": bundle.benchmark,
        "resolution": int(bundle.resolution),
        "seed": int(bundle.seed),
        "config": bundle.config.to_dict(),
        "domain": {
            "lower": bundle.partition.domain.lower.tolist(),
            "upper": bundle.partition.domain.upper.tolist(),
        },
        "boxes": boxes_meta,
        "timings": bundle.timings,
    }
    text = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    (path / "manifest.json").write_text(text)


def load_bundle(path) -> OfflineBundle:
    """Load a persisted bundle, rebuilding the benchmark from its registry id."""
    path = Path(path)
    arrays = path / "arrays"
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest["format_version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported bundle format {manifest['format_version']}")

    case = _resolve_case(manifest["benchmark"], manifest["resolution"])
    config = PipelineConfig.from_dict(manifest["config"])
    domain = model_mod.ParameterDomain(
        np.array(manifest["domain"]["lower"]), np.array(manifest["domain"]["upper"])
    )

    boxes, bases, levels, indicators = [], [], [], []
    coarse_grids, fine_grids, tables, fields = [], [], [], []
    for meta in manifest["boxes"]:
        boxes.append(model_mod.ParameterDomain(np.array(meta["lower"]), np.array(meta["upper"])))
        bases.append(basis_mod.ReducedBasis(_read_array(arrays, meta["basis"])))
        levels.append(meta["level"])
        indicators.append(meta["indicator"])
        coarse_grids.append(
            domain_mod.TensorGrid(
                tuple(domain_mod.UnivariateGrid(_read_array(arrays, m)) for m in meta["coarse_axes"])
            )
        )
        fine_grids.append(
            domain_mod.TensorGrid(
                tuple(domain_mod.UnivariateGrid(_read_array(arrays, m)) for m in meta["fine_axes"])
            )
        )
        cost_meta = meta["table"]["cost"]
        if cost_meta["kind"] == "terms":
            state_cost = reduced_mod.ReducedStateCost(
                terms=tuple(
                    (coeff, _read_array(arrays, m))
                    for (coeff, _), m in zip(case.cost.state_weight_terms, cost_meta["matrices"])
                )
            )
        else:
            state_cost = reduced_mod.ReducedStateCost(
                output_red=_read_array(arrays, cost_meta["output_red"]),
                output_weight=case.cost.output_weight,
            )
        tables.append(
            reduced_mod.EvaluationTable(
                drift=tuple(_read_array(arrays, m) for m in meta["table"]["drift"]),
                control=tuple(
                    _read_array(arrays, m).reshape(-1, bases[-1].dim, case.system.m)
                    for m in meta["table"]["control"]
                ),
                drift_coefficients=tuple(t.coefficient for t in case.system.drift_terms),
                control_coefficients=tuple(t.coefficient for t in case.system.control_terms),
                state_cost=state_cost,
                control_weight=case.cost.control_weight,
                discount=case.cost.discount,
                node_count=fine_grids[-1].size,
                dim=bases[-1].dim,
                m=case.system.m,
            )
        )
        fields.append(
            hjb_mod.ValueField(
                coarse_grids[-1], _read_array(arrays, meta["barycenter_values"]), meta["penalty"]
            )
        )

    partition = basis_mod.ParameterPartition(
        domain=domain,
        boxes=tuple(boxes),
        bases=tuple(bases),
        indicators=np.array(indicators),
        levels=np.array(levels, dtype=int),
    )
    return OfflineBundle(
        benchmark=manifest["benchmark"],
        resolution=manifest["resolution"],
        seed=manifest["seed"],
        config=config,
        partition=partition,
        coarse_grids=tuple(coarse_grids),
        fine_grids=tuple(fine_grids),
        tables=tuple(tables),
        barycenter_fields=tuple(fields),
        timings=manifest["timings"],
        case=case,
    )
