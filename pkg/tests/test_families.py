"""Kernel families and measure arithmetic.

Closed-form kernel values are pinned against hand-computed numbers;
integral properties (unit mass, distribution functions) are checked
against numerical quadrature; parameter derivatives against central
finite differences.
"""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate

from mixfit import (
    GaussianFamily,
    MixingMeasure,
    SignedMixingMeasure,
    TriangularFamily,
    combine,
    kernel_cdf,
    kernel_eval,
    kernel_theta_deriv,
    mixture_cdf,
    mixture_eval,
    total_mass,
)
from mixfit.families import merge_atoms

TRI = TriangularFamily()
GAU = GaussianFamily()


class TestKernelValues:
    def test_triangular_pinned(self):
        assert kernel_eval(TRI, 2.0, 1.0) == 0.5
        assert kernel_eval(TRI, 1.0, 1.0) == 0.0  # support boundary
        assert kernel_eval(TRI, 2.0, 0.0) == 1.0  # left endpoint included
        assert kernel_eval(TRI, 2.0, -0.1) == 0.0
        assert kernel_eval(TRI, 2.0, 2.5) == 0.0

    def test_gaussian_pinned(self):
        assert_allclose(kernel_eval(GAU, 0.0, 0.0), 1.0 / math.sqrt(2 * math.pi),
                        rtol=1e-15)
        assert_allclose(kernel_eval(GAU, 1.0, 2.0),
                        math.exp(-0.5) / math.sqrt(2 * math.pi), rtol=1e-15)

    def test_triangular_domain_error(self):
        with pytest.raises(ValueError):
            kernel_eval(TRI, 0.0, 0.5)
        with pytest.raises(ValueError):
            kernel_eval(TRI, -1.0, 0.5)
        with pytest.raises(ValueError):
            kernel_eval(TRI, np.inf, 0.5)

    def test_gaussian_domain_error(self):
        with pytest.raises(ValueError):
            kernel_eval(GAU, np.nan, 0.0)

    def test_vectorized_shapes(self):
        theta = np.array([1.0, 2.0, 3.0])
        x = np.array([0.5, 1.5])
        out = kernel_eval(TRI, theta, x[:, None])
        assert out.shape == (2, 3)
        assert isinstance(kernel_eval(TRI, 2.0, 1.0), float)


class TestKernelIntegrals:
    @pytest.mark.parametrize("theta", [0.3, 1.0, 2.7, 5.0])
    def test_triangular_unit_mass(self, theta):
        val, _ = integrate.quad(lambda x: kernel_eval(TRI, theta, x),
                                0.0, theta)
        assert_allclose(val, 1.0, atol=1e-8)

    @pytest.mark.parametrize("theta", [-2.0, 0.0, 1.3])
    def test_gaussian_unit_mass(self, theta):
        val, _ = integrate.quad(lambda x: kernel_eval(GAU, theta, x),
                                theta - 10.0, theta + 10.0)
        assert_allclose(val, 1.0, atol=1e-8)

    def test_cdf_matches_quadrature(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            theta = float(rng.uniform(0.3, 3.0))
            x = float(rng.uniform(0.0, 1.2 * theta))
            val, _ = integrate.quad(lambda s: kernel_eval(TRI, theta, s),
                                    0.0, min(x, theta))
            assert_allclose(kernel_cdf(TRI, theta, x), val, atol=1e-9)
        for _ in range(10):
            theta = float(rng.uniform(-2.0, 2.0))
            x = float(rng.uniform(theta - 3.0, theta + 3.0))
            val, _ = integrate.quad(lambda s: kernel_eval(GAU, theta, s),
                                    theta - 12.0, x)
            assert_allclose(kernel_cdf(GAU, theta, x), val, atol=1e-9)

    def test_triangular_cdf_saturates(self):
        assert kernel_cdf(TRI, 2.0, -1.0) == 0.0
        assert kernel_cdf(TRI, 2.0, 2.0) == 1.0
        assert kernel_cdf(TRI, 2.0, 99.0) == 1.0


class TestThetaDeriv:
    def test_pinned(self):
        assert kernel_theta_deriv(GAU, 0.0, 0.0) == 0.0
        assert_allclose(kernel_theta_deriv(GAU, 1.0, 2.0),
                        kernel_eval(GAU, 1.0, 2.0), rtol=1e-15)
        assert kernel_theta_deriv(TRI, 2.0, 1.0) == 0.0  # (4x-2theta)=0
        assert kernel_theta_deriv(TRI, 2.0, 3.0) == 0.0  # outside support

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        h = 1e-6
        for _ in range(25):
            theta = float(rng.uniform(0.5, 3.0))
            x = float(rng.uniform(0.0, 0.9 * theta))  # stay off the kink
            fd = (kernel_eval(TRI, theta + h, x)
                  - kernel_eval(TRI, theta - h, x)) / (2 * h)
            assert_allclose(kernel_theta_deriv(TRI, theta, x), fd, rtol=1e-5)
        for _ in range(25):
            theta = float(rng.uniform(-2.0, 2.0))
            x = float(rng.uniform(theta - 2.5, theta + 2.5))
            fd = (kernel_eval(GAU, theta + h, x)
                  - kernel_eval(GAU, theta - h, x)) / (2 * h)
            assert_allclose(kernel_theta_deriv(GAU, theta, x), fd, rtol=1e-5)


class TestMixtureEval:
    def test_empty(self):
        assert mixture_eval(TRI, MixingMeasure.empty(), 1.0) == 0.0
        out = mixture_eval(TRI, MixingMeasure.empty(), np.array([1.0, 2.0]))
        assert_allclose(out, [0.0, 0.0])

    def test_single_atom_reduces_to_kernel(self):
        f = MixingMeasure([2.0], [1.0])
        assert mixture_eval(TRI, f, 1.0) == kernel_eval(TRI, 2.0, 1.0)

    def test_two_atom_pinned(self):
        f = MixingMeasure([1.0, 2.0], [0.5, 0.5])
        assert mixture_eval(TRI, f, 0.0) == 1.5

    def test_linearity(self):
        rng = np.random.default_rng(3)
        a = MixingMeasure(np.sort(rng.uniform(0.5, 2.0, 3)), rng.uniform(0.1, 1.0, 3))
        b = MixingMeasure(np.sort(rng.uniform(2.5, 4.0, 2)), rng.uniform(0.1, 1.0, 2))
        both = combine(a, 1.0, b, 1.0)
        x = rng.uniform(0.0, 4.0, 20)
        assert_allclose(mixture_eval(TRI, both, x),
                        mixture_eval(TRI, a, x) + mixture_eval(TRI, b, x),
                        rtol=1e-14)

    def test_mixture_cdf_limits(self):
        f = MixingMeasure([1.0, 3.0], [0.25, 0.75])
        assert mixture_cdf(TRI, f, 0.0) == 0.0
        assert_allclose(mixture_cdf(TRI, f, 10.0), 1.0, rtol=1e-15)


class TestMeasures:
    def test_total_mass_pinned(self):
        assert total_mass(MixingMeasure.empty()) == 0.0
        assert total_mass(MixingMeasure([1.0, 3.0], [0.25, 0.75])) == 1.0
        assert total_mass(SignedMixingMeasure([2.0, 4.0], [-0.5, 1.5])) == 1.0

    def test_positive_weight_enforced(self):
        with pytest.raises(ValueError):
            MixingMeasure([1.0], [0.0])
        with pytest.raises(ValueError):
            MixingMeasure([1.0, 2.0], [0.5, -0.1])

    def test_strictly_increasing_locations(self):
        with pytest.raises(ValueError):
            SignedMixingMeasure([1.0, 1.0], [0.5, 0.5])
        with pytest.raises(ValueError):
            SignedMixingMeasure([2.0, 1.0], [0.5, 0.5])

    def test_finite_values_required(self):
        with pytest.raises(ValueError):
            SignedMixingMeasure([np.inf], [1.0])
        with pytest.raises(ValueError):
            SignedMixingMeasure([1.0], [np.nan])

    def test_immutability(self):
        f = MixingMeasure([1.0], [0.5])
        with pytest.raises(AttributeError):
            f.locations = np.array([2.0])
        with pytest.raises(ValueError):
            f.weights[0] = 1.0  # read-only backing array

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            MixingMeasure([1.0, 2.0], [0.5])

    def test_merge_atoms(self):
        loc, w = merge_atoms([2.0, 1.0, 2.0], [0.3, 0.5, 0.2])
        assert_allclose(loc, [1.0, 2.0])
        assert_allclose(w, [0.5, 0.5])

    def test_from_atoms_merges(self):
        f = SignedMixingMeasure.from_atoms([1.0, 1.0, 2.0], [0.5, -0.5, 1.0])
        assert_allclose(f.locations, [1.0, 2.0])
        assert_allclose(f.weights, [0.0, 1.0])

    def test_combine_merges_equal_locations(self):
        a = MixingMeasure([1.0, 2.0], [0.5, 0.5])
        b = MixingMeasure([2.0, 3.0], [1.0, 1.0])
        c = combine(a, 1.0, b, -0.5)
        assert_allclose(c.locations, [1.0, 2.0, 3.0])
        assert_allclose(c.weights, [0.5, 0.0, -0.5])

    def test_purge(self):
        f = SignedMixingMeasure([1.0, 2.0, 3.0], [1e-15, 0.5, -1e-14])
        g = f.purge(1e-12)
        assert_allclose(g.locations, [2.0])
        assert type(g) is SignedMixingMeasure
        h = MixingMeasure([1.0, 2.0], [1e-15, 0.5]).purge(1e-12)
        assert type(h) is MixingMeasure

    def test_scaled(self):
        f = MixingMeasure([1.0, 2.0], [0.5, 0.5])
        g = f.scaled(-2.0)
        assert_allclose(g.weights, [-1.0, -1.0])

    def test_measure_cdf_steps(self):
        f = MixingMeasure([1.0, 3.0], [0.25, 0.75])
        assert f.cdf(0.5) == 0.0
        assert f.cdf(1.0) == 0.25  # atom included from the right
        assert f.cdf(2.0) == 0.25
        assert f.cdf(3.0) == 1.0
        assert_allclose(f.cdf(np.array([0.0, 1.5, 4.0])), [0.0, 0.25, 1.0])

    def test_len_and_repr(self):
        f = MixingMeasure([1.0, 3.0], [0.25, 0.75])
        assert len(f) == 2 and f.size == 2
        assert "0.25" in repr(f)
