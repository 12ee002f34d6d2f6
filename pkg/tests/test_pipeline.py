import json
from pathlib import Path

import numpy as np
import pytest

from hjbrom import bench, cli, model, pipeline


@pytest.fixture(scope="module")
def mini_config():
    return pipeline.PipelineConfig(
        train_points_per_axis=3,
        greedy_tol=1e-3,
        pod_tol=1e-8,
        max_dim=2,
        max_refine=1,
        snapshot_times=(0.0, 0.5, 1.0),
        snapshot_count=20,
        coarse_points=5,
        fine_points=7,
        hjb_dt=5e-3,
        vi_tol=1e-4,
        vi_max_iter=3000,
        pi_max_iter=30,
        sim_t_end=1.0,
    )


@pytest.fixture(scope="module")
def mini_bundle(mini_config):
    case = bench.get_benchmark("test2", 8)
    return pipeline.offline_build(case, mini_config, seed=0)


def _bundle_bytes(path):
    path = Path(path)
    out = {"manifest": (path / "manifest.json").read_bytes()}
    for f in sorted((path / "arrays").iterdir()):
        out[f.name] = f.read_bytes()
    return out


class TestOfflineBuild:
    def test_bundle_structure(self, mini_bundle):
        S = mini_bundle.partition.size
        assert S >= 1
        assert len(mini_bundle.tables) == S
        assert len(mini_bundle.fine_grids) == S
        assert len(mini_bundle.barycenter_fields) == S
        assert all(b.dim <= 2 for b in mini_bundle.partition.bases)
        assert set(mini_bundle.timings) == {"partition", "grids", "tables", "barycenter_vi"}

    def test_single_box_trivial_linear_benchmark(self):
        # loose tolerance accepts the root box of the Burgers problem
        case = bench.get_benchmark("test3", 8)
        cfg = pipeline.PipelineConfig(
            train_points_per_axis=2,
            greedy_tol=0.9,
            max_dim=2,
            max_refine=0,
            snapshot_times=(0.0, 0.5),
            snapshot_count=10,
            coarse_points=5,
            fine_points=5,
            hjb_dt=0.02,
            vi_tol=1e-3,
            vi_max_iter=1500,
            sim_t_end=0.5,
        )
        bundle = pipeline.offline_build(case, cfg, seed=1)
        assert bundle.partition.size == 1
        assert bundle.partition.levels[0] == 0


class TestPersistence:
    def test_round_trip_byte_identical(self, mini_bundle, tmp_path):
        first = tmp_path / "b1"
        second = tmp_path / "b2"
        pipeline.save_bundle(mini_bundle, first)
        loaded = pipeline.load_bundle(first)
        pipeline.save_bundle(loaded, second)
        a = _bundle_bytes(first)
        b = _bundle_bytes(second)
        assert a.keys() == b.keys()
        for name in a:
            assert a[name] == b[name], f"byte mismatch in {name}"

    def test_loaded_bundle_serves_queries(self, mini_bundle, mini_config, tmp_path):
        pipeline.save_bundle(mini_bundle, tmp_path / "b")
        loaded = pipeline.load_bundle(tmp_path / "b")
        mu = np.array([3.0])
        x0 = model.sample_initial(loaded.case.ensemble, 1, seed=5)
        r1 = pipeline.online_query(mini_bundle, mu, list(x0), mini_config)
        r2 = pipeline.online_query(loaded, mu, list(x0), mini_config)
        assert r1.box_index == r2.box_index
        np.testing.assert_allclose(r1.field.values, r2.field.values, atol=1e-12)
        np.testing.assert_allclose(r1.costs, r2.costs, rtol=1e-12)

    def test_checksum_validated(self, mini_bundle, tmp_path):
        pipeline.save_bundle(mini_bundle, tmp_path / "b")
        target = sorted((tmp_path / "b" / "arrays").iterdir())[0]
        raw = bytearray(target.read_bytes())
        raw[0] ^= 0xFF
        target.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="checksum"):
            pipeline.load_bundle(tmp_path / "b")


class TestOnlineQuery:
    def test_determinism(self, mini_bundle, mini_config):
        mu = np.array([5.5])
        x0 = model.sample_initial(mini_bundle.case.ensemble, 2, seed=9)
        r1 = pipeline.online_query(mini_bundle, mu, list(x0), mini_config)
        r2 = pipeline.online_query(mini_bundle, mu, list(x0), mini_config)
        assert np.array_equal(r1.field.values, r2.field.values)
        assert r1.costs == r2.costs
        assert r1.pi_iterations == r2.pi_iterations

    def test_no_full_order_evaluations_inside_pi(self, mini_bundle, mini_config):
        mu = np.array([2.8])
        r = pipeline.online_query(mini_bundle, mu, [], mini_config)
        assert r.full_evals_in_pi == 0

    def test_barycenter_query_with_matching_grids_converges_fast(self):
        case = bench.get_benchmark("test2", 8)
        cfg = pipeline.PipelineConfig(
            train_points_per_axis=3,
            greedy_tol=1e-3,
            max_dim=2,
            max_refine=0,
            snapshot_times=(0.0, 0.5, 1.0),
            snapshot_count=20,
            coarse_points=7,
            fine_points=7,
            hjb_dt=5e-3,
            vi_tol=1e-6,
            vi_max_iter=6000,
            sim_t_end=1.0,
        )
        bundle = pipeline.offline_build(case, cfg, seed=0)
        mu = bundle.partition.boxes[0].barycenter()
        r = pipeline.online_query(bundle, mu, [], cfg)
        assert r.pi_converged
        assert r.pi_iterations <= 2

    def test_outside_domain_rejected(self, mini_bundle, mini_config):
        with pytest.raises(ValueError):
            pipeline.online_query(mini_bundle, np.array([99.0]), [], mini_config)

    def test_closed_loop_costs_returned(self, mini_bundle, mini_config):
        mu = np.array([4.0])
        x0 = model.sample_initial(mini_bundle.case.ensemble, 2, seed=11)
        r = pipeline.online_query(mini_bundle, mu, list(x0), mini_config)
        assert len(r.costs) == 2
        assert all(np.isfinite(c) and c >= 0 for c in r.costs)
        assert len(r.trajectories) == 2


class TestSpeedupMeasurement:
    def test_tables_faster_than_direct(self, mini_bundle, mini_config):
        ratios, details = pipeline.measure_speedup(
            mini_bundle, [np.array([3.3]), np.array([6.1])], reps=1, config=mini_config
        )
        assert len(ratios) == 2
        assert all(r > 0 for r in ratios)
        assert all(d["with_tables"] > 0 for d in details)


class TestCLI:
    def test_offline_online_round_trip(self, tmp_path):
        cfg = {
            "train_points_per_axis": 3,
            "greedy_tol": 1e-3,
            "max_dim": 2,
            "max_refine": 0,
            "snapshot_times": [0.0, 0.5],
            "snapshot_count": 10,
            "coarse_points": 5,
            "fine_points": 5,
            "hjb_dt": 5e-3,
            "vi_tol": 1e-4,
            "vi_max_iter": 2000,
            "sim_t_end": 0.5,
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        bundle_dir = tmp_path / "bundle"
        report = tmp_path / "report.csv"
        assert cli.main([
            "offline", "--benchmark", "test2", "--resolution", "8",
            "--config", str(cfg_path), "--out", str(bundle_dir), "--seed", "0",
        ]) == 0
        assert (bundle_dir / "manifest.json").exists()
        assert cli.main([
            "online", "--bundle", str(bundle_dir), "--mu", "4.5",
            "--num-ics", "1", "--seed", "0", "--report", str(report),
        ]) == 0
        lines = report.read_text().strip().splitlines()
        assert lines[0] == "mu0,ic,J_uncontrolled,J_lqr,J_hjb"
        assert len(lines) == 2

    def test_simulate_command(self, tmp_path, capsys):
        assert cli.main([
            "simulate", "--benchmark", "test2", "--resolution", "8",
            "--controller", "lqr", "--mu", "3.0", "--num-ics", "1",
            "--t-end", "0.5", "--report", str(tmp_path / "sim.csv"),
        ]) == 0
        assert (tmp_path / "sim.csv").exists()
