import numpy as np
import pytest

from hjbrom.basis import (
    GreedyConfig,
    LRFGResult,
    ParameterPartition,
    ReducedBasis,
    adaptive_partition,
    error_indicator,
    locate,
    lrfg,
    pod,
)
from hjbrom.model import ParameterDomain
from hjbrom.riccati import AREProblem, are_residual, solve_are


def diagonal_family(n=6, m=2, seed=0):
    """LQ family with parameter-scaled diagonal dynamics."""
    rng = np.random.default_rng(seed)
    base = -np.linspace(1.0, 3.0, n)
    V = np.linalg.qr(rng.standard_normal((n, n)))[0]
    B = rng.standard_normal((n, m))
    Qs = rng.standard_normal((n, n))
    Q = Qs @ Qs.T + 0.1 * np.eye(n)

    def family(mu):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        A = V @ np.diag(base * mu[0]) @ V.T
        return AREProblem(A, B, Q * (1.0 + mu[-1]), np.eye(m), 0.1)

    return family


class TestPOD:
    def test_rank_one_matrix(self):
        v = np.array([3.0, 4.0, 0.0])
        X = np.outer(v, [1.0, 2.0, -1.0])
        b = pod(X, 0.1)
        assert b.dim == 1
        np.testing.assert_allclose(np.abs(b.columns[:, 0]), np.abs(v / np.linalg.norm(v)), atol=1e-12)

    def test_energy_cutoff_two_singular_values(self):
        # singular values (2, 1): one mode carries exactly 4/5 of the energy
        rng = np.random.default_rng(1)
        U = np.linalg.qr(rng.standard_normal((4, 4)))[0][:, :2]
        Vt = np.linalg.qr(rng.standard_normal((3, 3)))[0][:2, :]
        X = U @ np.diag([2.0, 1.0]) @ Vt
        assert pod(X, 0.2).dim == 1
        assert pod(X, 0.19).dim == 2

    def test_eckart_young_tail(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((8, 12))
        s = np.linalg.svd(X, compute_uv=False)
        for tol in (0.5, 0.1, 0.01):
            b = pod(X, tol)
            Psi = b.columns
            err2 = np.linalg.norm(X - Psi @ (Psi.T @ X)) ** 2
            np.testing.assert_allclose(err2, np.sum(s[b.dim :] ** 2), atol=1e-10)

    def test_zero_matrix_rejected(self):
        with pytest.raises(ValueError):
            pod(np.zeros((3, 3)), 0.1)

    def test_columns_orthonormal(self):
        X = np.random.default_rng(3).standard_normal((10, 6))
        b = pod(X, 0.0)
        gram = b.columns.T @ b.columns
        assert np.max(np.abs(gram - np.eye(b.dim))) < 1e-12


class TestErrorIndicator:
    def test_empty_basis_gives_one(self):
        fam = diagonal_family()
        assert error_indicator(np.array([1.0]), ReducedBasis.empty(6), fam([1.0])) == 1.0

    def test_full_basis_near_zero(self):
        fam = diagonal_family()
        prob = fam([1.0])
        delta = error_indicator(np.array([1.0]), ReducedBasis(np.eye(6)), prob)
        assert delta <= 1e-8

    def test_partial_basis_matches_lifted_residual_oracle(self):
        fam = diagonal_family()
        mu = np.array([1.3])
        prob = fam(mu)
        Psi = np.linalg.qr(np.random.default_rng(4).standard_normal((6, 3)))[0]
        basis = ReducedBasis(Psi)
        delta = error_indicator(mu, basis, prob)
        # oracle: solve the projected ARE here and assemble the full residual
        red = AREProblem(
            Psi.T @ prob.A @ Psi, Psi.T @ prob.B, Psi.T @ prob.Q @ Psi, prob.R, prob.discount
        )
        Z = solve_are(red).P
        expected = np.linalg.norm(are_residual(prob, Psi @ Z @ Psi.T)) / np.linalg.norm(prob.Q)
        np.testing.assert_allclose(delta, expected, rtol=1e-8)


class TestLRFG:
    def test_tolerance_met_at_entry(self):
        fam = diagonal_family()
        cfg = GreedyConfig(train_set=np.array([[1.0], [2.0]]), tol=2.0, pod_tol=1e-10, max_dim=6)
        res = lrfg(cfg, None, fam)
        assert res.iterations == 0
        assert res.basis.dim == 0
        assert res.converged

    def test_single_parameter_one_iteration(self):
        fam = diagonal_family(n=4, m=2)
        cfg = GreedyConfig(train_set=np.array([[1.5]]), tol=1e-6, pod_tol=0.0, max_dim=10)
        res = lrfg(cfg, None, fam)
        assert res.max_indicator <= 1e-6
        assert res.iterations == 1

    def test_first_selection_matches_exhaustive_argmax(self):
        fam = diagonal_family()
        train = np.array([[0.5], [2.5]])
        initial = pod(solve_are(fam(train[0])).P, 0.9)  # biased toward the first parameter
        deltas = [error_indicator(mu, initial, fam(mu)) for mu in train]
        cfg = GreedyConfig(train_set=train, tol=1e-12, pod_tol=1e-8, max_dim=3)
        res = lrfg(cfg, initial, fam)
        np.testing.assert_allclose(res.selected[0], train[int(np.argmax(deltas))])

    def test_orthonormality_after_greedy(self):
        fam = diagonal_family()
        cfg = GreedyConfig(
            train_set=np.linspace(0.5, 2.5, 5)[:, None], tol=1e-10, pod_tol=1e-6, max_dim=5
        )
        res = lrfg(cfg, None, fam)
        gram = res.basis.columns.T @ res.basis.columns
        assert np.max(np.abs(gram - np.eye(res.basis.dim))) <= 1e-12

    def test_indicator_history_non_increasing(self):
        fam = diagonal_family()
        cfg = GreedyConfig(
            train_set=np.linspace(0.5, 2.5, 5)[:, None], tol=1e-10, pod_tol=1e-6, max_dim=6
        )
        res = lrfg(cfg, None, fam)
        hist = np.array(res.history)
        assert len(hist) >= 2
        assert np.all(np.diff(hist) <= 1e-10)

    def test_max_dim_enforced(self):
        fam = diagonal_family()
        cfg = GreedyConfig(
            train_set=np.linspace(0.5, 2.5, 5)[:, None], tol=1e-14, pod_tol=1e-12, max_dim=2
        )
        res = lrfg(cfg, None, fam)
        assert res.basis.dim <= 2


class TestAdaptivePartition:
    def test_tolerance_met_at_root(self):
        fam = diagonal_family()
        dom = ParameterDomain(np.array([0.5]), np.array([2.5]))
        cfg = GreedyConfig(
            train_set=np.linspace(0.5, 2.5, 4)[:, None], tol=0.5, pod_tol=1e-8, max_dim=6
        )
        part = adaptive_partition(dom, cfg, fam, max_refine=3)
        assert part.size == 1
        assert part.levels[0] == 0

    def test_synthetic_indicator_full_depth_two_tree(self):
        # accept only boxes with half-width strictly below domain width / 4
        dom = ParameterDomain(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
        cfg = GreedyConfig(train_set=np.array([[0.5, 0.5]]), tol=0.1, pod_tol=0.1, max_dim=3)

        def builder(box, box_cfg):
            width = float(np.max(box.upper - box.lower))
            ok = width / 2.0 < 1.0 / 4.0
            return LRFGResult(
                basis=ReducedBasis(np.eye(3)[:, :1]),
                max_indicator=0.0 if ok else 1.0,
                iterations=0,
                selected=(),
                converged=ok,
            )

        part = adaptive_partition(dom, cfg, fam := diagonal_family(), max_refine=5, box_builder=builder)
        assert part.size == 4**2
        assert np.all(part.levels == 2)

    def test_max_refine_limits_depth_and_dim(self):
        fam = diagonal_family()
        dom = ParameterDomain(np.array([0.5]), np.array([2.5]))
        cfg = GreedyConfig(
            train_set=np.linspace(0.5, 2.5, 4)[:, None], tol=1e-13, pod_tol=1e-8, max_dim=2
        )
        part = adaptive_partition(dom, cfg, fam, max_refine=2)
        assert np.max(part.levels) <= 2
        assert all(b.dim <= 2 for b in part.bases)

    def test_volume_tiling_and_random_locate(self):
        dom = ParameterDomain(np.array([0.0, 0.0]), np.array([1.0, 2.0]))
        cfg = GreedyConfig(train_set=np.array([[0.5, 1.0]]), tol=0.1, pod_tol=0.1, max_dim=3)

        def builder(box, box_cfg):
            ok = float(np.max(box.upper - box.lower)) <= 0.51
            return LRFGResult(ReducedBasis(np.eye(2)), 0.0 if ok else 1.0, 0, (), ok)

        part = adaptive_partition(dom, cfg, diagonal_family(), max_refine=4, box_builder=builder)
        volumes = sum(b.volume() for b in part.boxes)
        assert abs(volumes - dom.volume()) <= 1e-12
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            mu = dom.lower + rng.random(2) * (dom.upper - dom.lower)
            i = locate(part, mu)
            assert part.boxes[i].contains(mu)


class TestLocate:
    def _partition(self):
        dom = ParameterDomain(np.array([0.0]), np.array([1.0]))
        left = ParameterDomain(np.array([0.0]), np.array([0.5]))
        right = ParameterDomain(np.array([0.5]), np.array([1.0]))
        b = ReducedBasis(np.eye(2))
        return ParameterPartition(
            domain=dom, boxes=(left, right), bases=(b, b),
            indicators=np.zeros(2), levels=np.ones(2, dtype=int),
        )

    def test_single_box_always_zero(self):
        dom = ParameterDomain(np.array([0.0]), np.array([1.0]))
        part = ParameterPartition(
            domain=dom, boxes=(dom,), bases=(ReducedBasis(np.eye(2)),),
            indicators=np.zeros(1), levels=np.zeros(1, dtype=int),
        )
        assert locate(part, [0.3]) == 0

    def test_bisected_left(self):
        assert locate(self._partition(), [0.25]) == 0

    def test_boundary_tie_smaller_index(self):
        part = self._partition()
        results = {locate(part, [0.5]) for _ in range(10)}
        assert results == {0}

    def test_outside_rejected(self):
        with pytest.raises(ValueError):
            locate(self._partition(), [1.5])
