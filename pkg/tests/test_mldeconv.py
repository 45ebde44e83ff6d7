"""Gaussian deconvolution by sequential quadratic likelihood steps.

The quadratic local model is validated against the exact polynomial
expansion and finite differences of the relaxed likelihood; the Newton
driver against a box-constrained quasi-Newton oracle on a frozen grid.
"""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import optimize

from mixfit import ConvergenceStall, MixingMeasure, SignedMixingMeasure, SolverConfig, combine
from mixfit.mldeconv import (
    MlModel,
    QuadLocalModel,
    _damped_update,
    newton_solve,
    starting_iterate,
)


class TestMlObjective:
    def test_pinned_single_obs(self):
        m = MlModel(np.array([1.3]))
        f = MixingMeasure([1.3], [1.0])
        assert_allclose(m.objective(f), 0.5 * math.log(2 * math.pi) + 1.0,
                        rtol=1e-15)

    def test_infinite_when_density_vanishes(self):
        m = MlModel(np.array([0.0]))
        assert m.objective(MixingMeasure.empty()) == np.inf
        assert m.objective(MixingMeasure([50.0], [1.0])) == np.inf  # underflow

    def test_mass_scaling_identity(self):
        # ml(c f) = ml(f) - log c + (c - 1) mass(f)
        rng = np.random.default_rng(5)
        m = MlModel(rng.normal(size=12))
        f = MixingMeasure([-0.5, 0.8], [0.6, 0.7])
        base = m.objective(f)
        for c in (0.5, 2.0):
            lhs = m.objective(f.scaled(c))
            rhs = base - math.log(c) + (c - 1.0) * f.total_mass()
            assert_allclose(lhs, rhs, rtol=1e-13)

    def test_sample_validation(self):
        with pytest.raises(ValueError):
            MlModel(np.array([]))
        with pytest.raises(ValueError):
            MlModel(np.array([0.0, np.nan]))


class TestMlDirDeriv:
    def test_zero_at_single_obs_fixed_point(self):
        m = MlModel(np.array([1.3]))
        f = MixingMeasure([1.3], [1.0])
        assert m.dir_deriv_vertex(1.3, f) == 0.0

    def test_far_vertex_approaches_one(self):
        m = MlModel(np.array([0.0]))
        f = MixingMeasure([0.0], [1.0])
        assert_allclose(m.dir_deriv_vertex(25.0, f), 1.0, rtol=1e-12)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        m = MlModel(rng.normal(size=15))
        f = MixingMeasure([-0.8, 0.5], [0.5, 0.6])
        e = 1e-6
        for theta in (-1.5, 0.0, 1.0):
            delta = SignedMixingMeasure([theta], [1.0])
            fd = (m.objective(combine(f, 1.0, delta, e))
                  - m.objective(combine(f, 1.0, delta, -e))) / (2 * e)
            assert_allclose(m.dir_deriv_vertex(theta, f), fd, rtol=1e-5)

    def test_certificate_scale_is_the_raw_derivative(self):
        assert MlModel.alt_dir_deriv_vertex is MlModel.dir_deriv_vertex

    def test_requires_positive_mixture(self):
        m = MlModel(np.array([0.0]))
        with pytest.raises(ValueError):
            m.dir_deriv_vertex(0.0, MixingMeasure.empty())


class TestMlLocationGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        m = MlModel(rng.normal(size=20))
        f = MixingMeasure([-0.7, 0.4, 1.2], [0.3, 0.5, 0.2])
        grad = m.location_gradient(f)
        h = 1e-6
        for i in range(3):
            up = f.locations.copy(); up[i] += h
            dn = f.locations.copy(); dn[i] -= h
            fd = (m.objective(MixingMeasure(up, f.weights))
                  - m.objective(MixingMeasure(dn, f.weights))) / (2 * h)
            assert_allclose(grad[i], fd, rtol=1e-5)


class TestQuadModel:
    def _setup(self, seed=13, n=18):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=n)
        center = MixingMeasure([-0.5, 0.6], [0.55, 0.5])
        return x, center, QuadLocalModel(x, center)

    def test_tangent_to_likelihood_at_center(self):
        x, center, q = self._setup()
        m = MlModel(x)
        thetas = np.linspace(-2.0, 2.0, 9)
        c1, c2 = q.quad_coefficients(thetas, center)
        assert_allclose(c1, m.dir_deriv_vertex(thetas, center), rtol=1e-10)
        assert np.all(c2 > 0)

    def test_objective_at_center_pinned(self):
        # d_i f(x_i) = 1 at the expansion point, so q = mass - 3/2
        x, center, q = self._setup()
        assert_allclose(q.objective(center), center.total_mass() - 1.5,
                        rtol=1e-13)

    def test_exact_quadratic_along_kernel(self):
        x, center, q = self._setup()
        f = MixingMeasure([0.1], [0.8])
        theta = -0.3
        c1, c2 = q.quad_coefficients(theta, f)
        base = q.objective(f)
        for eps in (0.2, 0.7, 1.5):
            blend = combine(f, 1.0, SignedMixingMeasure([theta], [1.0]), eps)
            expect = base + c1 * eps + 0.5 * c2 * eps**2
            assert_allclose(q.objective(blend), expect, rtol=1e-12)

    def test_segment_curvature_matches_c2(self):
        x, center, q = self._setup()
        theta = 0.9
        _, c2 = q.quad_coefficients(theta, center)
        assert_allclose(q.segment_curvature(SignedMixingMeasure([theta], [1.0])),
                        c2, rtol=1e-13)

    def test_grid_cache_matches_fresh_evaluation(self):
        x, center, _ = self._setup()
        grid = np.linspace(-2.0, 2.0, 11)
        cached = QuadLocalModel(x, center, grid=grid)
        fresh = QuadLocalModel(x, center)
        f = MixingMeasure([0.2], [0.9])
        a1, a2 = cached.quad_coefficients(grid, f)
        b1, b2 = fresh.quad_coefficients(grid, f)
        assert_allclose(a1, b1, rtol=1e-14)
        assert_allclose(a2, b2, rtol=1e-14)
        # scalar path agrees with the vectorized one
        s1, s2 = cached.quad_coefficients(float(grid[3]), f)
        assert_allclose([s1, s2], [b1[3], b2[3]], rtol=1e-14)

    def test_unit_center_is_single_kernel_minimizer(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=9)
        q = QuadLocalModel(x, MixingMeasure([0.2], [1.0]))
        f = q.unrestricted_min(np.array([0.2]))
        assert_allclose(f.weights, [1.0], rtol=1e-12)

    def test_normal_equations_match_naive_loops(self):
        x, center, q = self._setup()
        sup = np.array([-0.4, 0.7])
        sol = q.unrestricted_min(sup)
        p, n = len(sup), len(x)
        M = np.zeros((p, p))
        rhs = np.zeros(p)
        for a in range(p):
            ka = np.array([QuadLocalModel.family.kernel(sup[a], xi) for xi in x])
            rhs[a] = 2.0 * float(ka @ q.d) - n
            for b in range(p):
                kb = np.array([QuadLocalModel.family.kernel(sup[b], xi) for xi in x])
                M[a, b] = float((ka * q.d) @ (kb * q.d))
        assert_allclose(sol.weights, np.linalg.solve(M, rhs), rtol=1e-10)

    def test_stationarity_at_solution(self):
        x, center, q = self._setup()
        sup = np.array([-0.4, 0.7])
        sol = q.unrestricted_min(sup)
        c1, _ = q.quad_coefficients(sup, sol)
        assert np.all(np.abs(c1) < 1e-9)

    def test_rank_deficient_support_raises(self):
        # symmetric support around the lone observation makes the two
        # kernel columns bitwise equal, hence an exactly singular system
        q = QuadLocalModel(np.array([0.0]), MixingMeasure([0.0], [1.0]))
        with pytest.raises(ValueError, match="merge them"):
            q.unrestricted_min(np.array([-1.0, 1.0]))

    def test_center_must_be_positive(self):
        with pytest.raises(ValueError, match="positive"):
            QuadLocalModel(np.array([0.0]), MixingMeasure.empty())


class TestStartingIterate:
    def test_pinned(self):
        f = starting_iterate(np.array([0.0, 1.0, 2.0]),
                             np.array([0.5, 0.9, 3.0]))
        assert_allclose(f.locations, [0.9])
        assert_allclose(f.weights, [1.0])


class TestNewtonSolve:
    def test_single_obs_is_immediate(self):
        f, trace = newton_solve(
            np.array([1.3]),
            SolverConfig(grid=np.array([0.3, 1.3, 2.3]), eta=1e-10))
        assert trace.converged
        assert trace.n_iterations == 0
        assert_allclose(f.locations, [1.3])
        assert_allclose(f.weights, [1.0])

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_seeded_runs(self, seed):
        rng = np.random.default_rng(seed)
        x = np.sort(rng.normal(size=40) + rng.exponential(size=40))
        grid = np.linspace(x[0], x[-1], 25)
        f, trace = newton_solve(x, SolverConfig(grid=grid, eta=1e-8))
        assert trace.converged
        assert abs(f.total_mass() - 1.0) <= 1e-6
        assert f.size <= len(np.unique(x))
        diffs = np.diff(trace.objective)
        assert np.all(diffs[:-1] < 0)
        assert diffs.size == 0 or diffs[-1] <= 1e-14

    def test_matches_box_constrained_oracle(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=25)
        grid = np.linspace(-1.5, 1.5, 5)
        f, trace = newton_solve(x, SolverConfig(grid=grid, eta=1e-9))
        assert trace.converged
        m = MlModel(x)

        def obj(w):
            fx = np.exp(-0.5 * (x[:, None] - grid) ** 2) / math.sqrt(2 * math.pi) @ w
            if np.any(fx <= 0):
                return 1e6
            return -np.mean(np.log(fx)) + w.sum()

        res = optimize.minimize(
            obj, np.full(5, 0.2), method="L-BFGS-B",
            bounds=[(0.0, None)] * 5,
            options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 5000})
        assert m.objective(f) <= res.fun + 1e-6

    def test_iteration_cap(self):
        rng = np.random.default_rng(19)
        x = np.sort(rng.normal(size=60) + rng.exponential(size=60))
        grid = np.linspace(x[0], x[-1], 30)
        f, trace = newton_solve(
            x, SolverConfig(grid=grid, eta=1e-8, max_outer_iter=1))
        assert not trace.converged
        assert trace.n_iterations == 1

    def test_custom_start(self):
        rng = np.random.default_rng(23)
        x = rng.normal(size=30)
        grid = np.linspace(x.min(), x.max(), 12)
        start = MixingMeasure([float(grid[0])], [1.0])
        f, trace = newton_solve(x, SolverConfig(grid=grid, eta=1e-8),
                                start=start)
        assert trace.converged
        assert abs(f.total_mass() - 1.0) <= 1e-6


class _RiggedObjective:
    """Objective scripted as a function of the step size."""

    def __init__(self, fn):
        self.fn = fn

    def objective(self, measure):
        # the candidate atom sits at 1.0; its weight equals the step
        lam = 0.0
        for loc, w in zip(measure.locations, measure.weights):
            if loc == 1.0:
                lam = w
        return self.fn(lam)


class TestDampedUpdate:
    CURRENT = MixingMeasure([0.0], [1.0])
    CANDIDATE = MixingMeasure([1.0], [1.0])

    def test_full_step_when_it_decreases(self):
        model = _RiggedObjective(lambda lam: 5.0 - lam)
        trial, value, lam, tied = _damped_update(
            model, self.CURRENT, self.CANDIDATE, 5.0)
        assert lam == 1.0 and not tied
        assert value == 4.0

    def test_halves_past_infinite_trials(self):
        model = _RiggedObjective(
            lambda lam: np.inf if lam > 0.55 else 5.0 - lam)
        trial, value, lam, tied = _damped_update(
            model, self.CURRENT, self.CANDIDATE, 5.0)
        assert lam == 0.5 and not tied

    def test_tie_accepted_when_flat(self):
        model = _RiggedObjective(lambda lam: 5.0)
        trial, value, lam, tied = _damped_update(
            model, self.CURRENT, self.CANDIDATE, 5.0)
        assert tied and lam == 1.0 and value == 5.0

    def test_stall_when_objective_always_worse(self):
        model = _RiggedObjective(lambda lam: 5.0 + max(lam, 1e-3))
        with pytest.raises(ConvergenceStall, match="halvings"):
            _damped_update(model, self.CURRENT, self.CANDIDATE, 5.0)
