"""
Tests for the FPC-l1 and FPC-l2 solvers.
"""

import numpy as np
import pytest

from deepfpc.errors import InvalidArgument, ShrinkageCollapse
from deepfpc.experiments import REFERENCE_FPC_L2_DB, ExperimentConfig, fpc_nmse, make_problem
from deepfpc.operators import one_sided_l2
from deepfpc.signals import make_dataset, mean_nmse_db
from deepfpc.solvers import (
    FpcConfig,
    Variant,
    X0Policy,
    backprojection,
    consistency_penalty,
    fpc_solve,
    fpc_solve_batch,
    gradient_l1,
    gradient_l2,
    nmse_matrix,
    objective,
)


@pytest.fixture
def small():
    """Small problem instance shared by solver tests."""
    return make_dataset(n=30, m=90, k=3, l=6, seed=11)


class TestFpcConfig:
    """Tests for FpcConfig."""

    def test_defaults(self):
        """Defaults give the calibrated nu = 0.001 with tau = 1."""
        cfg = FpcConfig()
        assert cfg.variant is Variant.L2
        assert cfg.nu == pytest.approx(0.001)
        assert cfg.nu == pytest.approx(ExperimentConfig().nu)
        assert cfg.max_iters == 150

    def test_from_nu(self):
        """from_nu derives lambda from tau and nu."""
        cfg = FpcConfig.from_nu(0.5, 0.01, variant=Variant.L1)
        assert cfg.lam == pytest.approx(50.0)
        assert cfg.nu == pytest.approx(0.01)
        assert cfg.variant is Variant.L1

    @pytest.mark.parametrize("kwargs", [{"tau": 0.0}, {"lam": -1.0}, {"max_iters": 0}])
    def test_invalid(self, kwargs):
        """Non-positive tau, lambda or iteration count is rejected."""
        with pytest.raises(InvalidArgument):
            FpcConfig(**kwargs)

    def test_dict_roundtrip(self):
        """to_dict/from_dict preserve the config."""
        cfg = FpcConfig(variant=Variant.L1, tau=0.7, lam=20.0, max_iters=9, renormalize_each=False)
        assert FpcConfig.from_dict(cfg.to_dict()) == cfg


class TestGradients:
    """Tests for the consistency gradients."""

    def test_l1_example(self):
        """Identity Phi, y = (1, 1), x = (-1, 1) gives (-2, 0)."""
        g = gradient_l1(np.eye(2), np.array([1.0, 1.0]), np.array([-1.0, 1.0]))
        np.testing.assert_array_equal(g, [-2.0, 0.0])

    def test_l2_example(self):
        """Identity Phi, y = 1, x = -2 gives -2."""
        g = gradient_l2(np.eye(1), np.array([1.0]), np.array([-2.0]))
        np.testing.assert_array_equal(g, [-2.0])

    def test_consistent_measurements_give_zero(self, small):
        """Both gradients vanish at the true signal."""
        x = small.signals.values[:, 0]
        y = small.measurements.signs[:, 0]
        np.testing.assert_array_equal(gradient_l1(small.phi, y, x), np.zeros(30))
        np.testing.assert_array_equal(gradient_l2(small.phi, y, x), np.zeros(30))

    def test_l1_matches_loop(self, small):
        """gradient_l1 equals a per-entry loop computation."""
        rng = np.random.default_rng(2)
        x = rng.standard_normal(30)
        y = small.measurements.signs[:, 1]
        phi = small.phi
        expected = np.zeros(30)
        for j in range(30):
            for i in range(90):
                s = 1.0 if sum(phi[i, t] * x[t] for t in range(30)) >= 0 else -1.0
                expected[j] += phi[i, j] * (s - y[i])
        np.testing.assert_allclose(gradient_l1(phi, y, x), expected, rtol=1e-12, atol=1e-12)

    def test_l2_matches_finite_differences(self, small):
        """gradient_l2 is the derivative of the one-sided l2 consistency term."""
        y = small.measurements.signs[:, 2]
        # keep every margin away from the kink at zero
        for seed in range(100):
            x = np.random.default_rng(seed).standard_normal(30)
            x /= np.linalg.norm(x)
            if np.min(np.abs(y * (small.phi @ x))) >= 1e-3:
                break
        assert np.min(np.abs(y * (small.phi @ x))) >= 1e-3

        def penalty(v):
            return one_sided_l2(y * (small.phi @ v))

        h = 1e-6
        fd = np.zeros(30)
        for j in range(30):
            e = np.zeros(30)
            e[j] = h
            fd[j] = (penalty(x + e) - penalty(x - e)) / (2 * h)
        np.testing.assert_allclose(gradient_l2(small.phi, y, x), fd, rtol=1e-6, atol=1e-8)

    def test_dimension_mismatch(self):
        """Mismatched shapes raise InvalidArgument."""
        with pytest.raises(InvalidArgument):
            gradient_l2(np.eye(3), np.ones(2), np.ones(3))
        with pytest.raises(InvalidArgument):
            gradient_l1(np.eye(3), np.ones(3), np.ones(4))

    def test_objective(self, small):
        """The objective adds lambda times the penalty to the l1 norm."""
        cfg = FpcConfig(lam=10.0)
        x = np.ones(30) / np.sqrt(30)
        y = small.measurements.signs[:, 0]
        expected = np.sum(np.abs(x)) + 10.0 * consistency_penalty(small.phi, y, x, Variant.L2)
        assert objective(small.phi, y, x, cfg) == pytest.approx(expected)


class TestFpcSolve:
    """Tests for fpc_solve."""

    @pytest.mark.parametrize("variant", [Variant.L1, Variant.L2])
    def test_one_hot_fixed_point(self, variant):
        """A consistent one-hot start is a fixed point."""
        phi = np.eye(4)
        e1 = np.array([1.0, 0.0, 0.0, 0.0])
        y = np.ones(4)
        cfg = FpcConfig.from_nu(1.0, 0.5, variant=variant, max_iters=5, x0_policy=X0Policy.GIVEN)
        trace = fpc_solve(phi, y, cfg, x0=e1)
        for x in trace.iterates:
            np.testing.assert_array_equal(x, e1)

    @pytest.mark.parametrize("variant", [Variant.L1, Variant.L2])
    def test_iterates_are_unit_norm(self, small, variant):
        """Every recorded iterate has unit norm."""
        cfg = FpcConfig(variant=variant, max_iters=30)
        trace = fpc_solve(small.phi, small.measurements.signs[:, 0], cfg, truth=small.signals[0])
        assert len(trace) == 30
        assert len(trace.nmse_db_per_iter) == 30
        assert len(trace.objective_per_iter) == 30
        for x in trace.iterates:
            assert abs(np.linalg.norm(x) - 1.0) <= 1e-12

    def test_without_truth_has_no_nmse(self, small):
        """NMSE is only recorded when the truth is supplied."""
        trace = fpc_solve(small.phi, small.measurements.signs[:, 0], FpcConfig(max_iters=3))
        assert trace.nmse_db_per_iter is None
        with pytest.raises(InvalidArgument):
            nmse_matrix([trace])

    def test_improves_on_start(self, small):
        """FPC-l2 ends closer to the truth than the back-projection."""
        y = small.measurements.signs[:, 0]
        truth = small.signals.values[:, 0]
        start = backprojection(small.phi, y)
        trace = fpc_solve(small.phi, y, FpcConfig(max_iters=100), truth=truth)
        assert np.linalg.norm(trace.final - truth) < np.linalg.norm(start - truth)

    def test_shrinkage_collapse(self, small):
        """A huge nu zeroes the iterate and names the iteration."""
        cfg = FpcConfig.from_nu(1.0, 1e6, max_iters=5)
        with pytest.raises(ShrinkageCollapse) as exc:
            fpc_solve(small.phi, small.measurements.signs[:, 0], cfg)
        assert exc.value.iteration == 0
        assert "shrinkage-collapse" in str(exc.value)

    def test_rejects_non_binary_measurements(self, small):
        """Measurements must be +/-1."""
        with pytest.raises(InvalidArgument):
            fpc_solve(small.phi, np.full(90, 0.5), FpcConfig(max_iters=2))

    def test_given_policy_needs_x0(self, small):
        """The given start policy requires x0."""
        cfg = FpcConfig(max_iters=2, x0_policy=X0Policy.GIVEN)
        with pytest.raises(InvalidArgument):
            fpc_solve(small.phi, small.measurements.signs[:, 0], cfg)

    def test_backprojection_unit_columns(self, small):
        """Back-projection normalizes every column."""
        x0 = backprojection(small.phi, small.measurements.signs)
        np.testing.assert_allclose(np.linalg.norm(x0, axis=0), np.ones(6), atol=1e-12)

    def test_without_renormalization_readouts_are_unit(self, small):
        """Recorded iterates stay normalized when renormalization is deferred."""
        cfg = FpcConfig(max_iters=10, renormalize_each=False)
        trace = fpc_solve(small.phi, small.measurements.signs[:, 3], cfg)
        for x in trace.iterates:
            assert abs(np.linalg.norm(x) - 1.0) <= 1e-12


class TestFpcSolveBatch:
    """Tests for batch solving."""

    def test_matches_serial(self, small):
        """Each column is solved independently, in order."""
        cfg = FpcConfig(max_iters=15)
        traces = fpc_solve_batch(small.phi, small.measurements.signs, cfg, truths=small.signals.values)
        for col, trace in enumerate(traces):
            single = fpc_solve(small.phi, small.measurements.signs[:, col], cfg)
            np.testing.assert_array_equal(trace.final, single.final)

    def test_threads_keep_order(self, small):
        """A thread pool returns the same results as the serial loop."""
        cfg = FpcConfig(max_iters=15)
        serial = fpc_solve_batch(small.phi, small.measurements.signs, cfg, truths=small.signals.values)
        pooled = fpc_solve_batch(
            small.phi, small.measurements.signs, cfg, truths=small.signals.values, threads=3
        )
        np.testing.assert_array_equal(nmse_matrix(serial), nmse_matrix(pooled))
        assert nmse_matrix(serial).shape == (15, 6)


@pytest.fixture(scope="module")
def nmse():
    """Per-iteration NMSE of FPC-l2 at the shipped defaults (150 x 100)."""
    cfg = ExperimentConfig()
    _, test_ds = make_problem(cfg, seed=0)
    return fpc_nmse(cfg, test_ds, Variant.L2, 150)


@pytest.mark.slow
class TestReferenceTrajectory:
    """FPC-l2 on the N=100, K=10, M=300 setup with 100 test signals."""

    def test_converged_level(self, nmse):
        """Mean NMSE after 150 iterations lies within 2 dB of -14.39 dB."""
        assert abs(mean_nmse_db(nmse[149]) - (-14.39)) <= 2.0

    def test_early_iterations(self, nmse):
        """Iterations 1 and 20 track the reference values."""
        assert abs(mean_nmse_db(nmse[0]) - REFERENCE_FPC_L2_DB[0]) <= 2.0
        assert abs(mean_nmse_db(nmse[19]) - REFERENCE_FPC_L2_DB[19]) <= 2.0

    def test_decreasing(self, nmse):
        """Mean NMSE decreases over the first 20 iterations (0.2 dB slack)."""
        means = [mean_nmse_db(nmse[r]) for r in range(20)]
        for before, after in zip(means, means[1:]):
            assert after <= before + 0.2
