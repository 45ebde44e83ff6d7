"""Parametric generator families and atomic mixing measures.

A mixture model is described by a family of unit-mass kernels
``f_theta`` indexed by a scalar parameter and an atomic mixing measure
placing weight on finitely many parameter values.  The solvers in this
package only ever touch mixtures through the operations collected here:
kernel evaluation, kernel parameter derivatives, kernel distribution
functions, and linear measure arithmetic.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr

__all__ = [
    "SignedMixingMeasure",
    "MixingMeasure",
    "TriangularFamily",
    "GaussianFamily",
    "kernel_eval",
    "kernel_theta_deriv",
    "kernel_cdf",
    "mixture_eval",
    "mixture_cdf",
    "total_mass",
    "combine",
    "merge_atoms",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def merge_atoms(locations, weights):
    """Sort atoms by location and sum weights at exactly equal locations.

    Returns a pair of float arrays (locations strictly increasing).
    """
    locations = np.asarray(locations, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    if locations.shape != weights.shape:
        raise ValueError("locations and weights must have the same length")
    if locations.size == 0:
        return locations.copy(), weights.copy()
    order = np.argsort(locations, kind="stable")
    loc = locations[order]
    w = weights[order]
    # Group runs of identical locations; exact float equality is the
    # dedup rule, near-duplicates are the caller's business.
    fresh = np.empty(loc.size, dtype=bool)
    fresh[0] = True
    fresh[1:] = loc[1:] != loc[:-1]
    idx = np.cumsum(fresh) - 1
    out_loc = loc[fresh]
    out_w = np.zeros(out_loc.size)
    np.add.at(out_w, idx, w)
    return out_loc, out_w


class SignedMixingMeasure:
    """Finite atomic measure on the parameter axis, weights of any sign.

    Parameters
    ----------
    locations : array_like
        Strictly increasing, finite atom locations.
    weights : array_like
        Finite atom weights, one per location.

    Notes
    -----
    Instances are immutable; the backing arrays are marked read-only so
    a measure can be shared freely between solver stages.
    """

    __slots__ = ("locations", "weights")

    def __init__(self, locations, weights):
        locations = np.array(locations, dtype=float).ravel()
        weights = np.array(weights, dtype=float).ravel()
        if locations.shape != weights.shape:
            raise ValueError("locations and weights must have the same length")
        if locations.size:
            if not np.all(np.isfinite(locations)):
                raise ValueError("atom locations must be finite")
            if not np.all(np.isfinite(weights)):
                raise ValueError("atom weights must be finite")
            if np.any(np.diff(locations) <= 0.0):
                raise ValueError("atom locations must be strictly increasing")
        locations.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "locations", locations)
        object.__setattr__(self, "weights", weights)

    def __setattr__(self, name, value):
        raise AttributeError("measures are immutable")

    @classmethod
    def from_atoms(cls, locations, weights):
        """Build a measure from unsorted atoms, merging equal locations."""
        loc, w = merge_atoms(locations, weights)
        return cls(loc, w)

    @classmethod
    def empty(cls):
        return cls(np.empty(0), np.empty(0))

    @property
    def size(self):
        return self.locations.size

    def __len__(self):
        return self.locations.size

    def __repr__(self):
        atoms = ", ".join(
            f"({t:.6g}, {w:.6g})" for t, w in zip(self.locations, self.weights)
        )
        return f"{type(self).__name__}([{atoms}])"

    def total_mass(self):
        """Sum of atom weights (signed)."""
        return float(np.sum(self.weights))

    def scaled(self, c):
        """Measure with every weight multiplied by ``c``."""
        return SignedMixingMeasure(self.locations, c * self.weights)

    def purge(self, threshold):
        """Drop atoms whose absolute weight is below ``threshold``."""
        keep = np.abs(self.weights) >= threshold
        if keep.all():
            return self
        return type(self)(self.locations[keep], self.weights[keep])

    def cdf(self, theta):
        """Weight of ``(-inf, theta]``: the mixing distribution function."""
        theta = np.asarray(theta, dtype=float)
        idx = np.searchsorted(self.locations, theta, side="right")
        csum = np.concatenate(([0.0], np.cumsum(self.weights)))
        out = csum[idx]
        return out if out.ndim else float(out)


class MixingMeasure(SignedMixingMeasure):
    """Atomic measure with strictly positive weights (a point in the cone)."""

    __slots__ = ()

    def __init__(self, locations, weights):
        super().__init__(locations, weights)
        if self.weights.size and np.any(self.weights <= 0.0):
            raise ValueError("MixingMeasure weights must be strictly positive")


def combine(measure_a, coef_a, measure_b, coef_b):
    """Linear combination ``coef_a * a + coef_b * b`` as a signed measure.

    Atoms at exactly equal locations are merged.
    """
    loc = np.concatenate([measure_a.locations, measure_b.locations])
    w = np.concatenate([coef_a * measure_a.weights, coef_b * measure_b.weights])
    return SignedMixingMeasure.from_atoms(loc, w)


def total_mass(measure):
    """Total (signed) mass of an atomic measure."""
    return measure.total_mass()


class TriangularFamily:
    """Triangular densities ``f_theta(x) = 2 (theta - x) / theta**2`` on ``[0, theta)``.

    Mixtures of these kernels over positive mixing measures are exactly
    the decreasing convex densities on the half line, which makes the
    family the natural generator set for convex density estimation.
    The parameter must be strictly positive.
    """

    name = "triangular"
    domain = (0.0, math.inf)

    @staticmethod
    def _validate_theta(theta):
        theta = np.asarray(theta, dtype=float)
        if np.any(theta <= 0.0) or not np.all(np.isfinite(theta)):
            raise ValueError("triangular kernel parameter must be positive and finite")
        return theta

    def kernel(self, theta, x):
        theta = self._validate_theta(theta)
        x = np.asarray(x, dtype=float)
        inside = (x >= 0.0) & (x < theta)
        out = np.where(inside, 2.0 * (theta - x) / theta**2, 0.0)
        return out if out.ndim else float(out)

    def theta_deriv(self, theta, x):
        # Pointwise derivative in theta; the kink at x == theta gets 0.
        theta = self._validate_theta(theta)
        x = np.asarray(x, dtype=float)
        inside = (x >= 0.0) & (x < theta)
        out = np.where(inside, (4.0 * x - 2.0 * theta) / theta**3, 0.0)
        return out if out.ndim else float(out)

    def cdf(self, theta, x):
        theta = self._validate_theta(theta)
        x = np.asarray(x, dtype=float)
        z = np.clip(x / theta, 0.0, 1.0)
        out = z * (2.0 - z)
        return out if out.ndim else float(out)


class GaussianFamily:
    """Standard normal location kernels ``f_theta(x) = phi(x - theta)``.

    The generator set for deconvolving a location mixture observed with
    standard Gaussian noise.  The parameter ranges over the whole line.
    """

    name = "gaussian"
    domain = (-math.inf, math.inf)

    @staticmethod
    def _validate_theta(theta):
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            raise ValueError("gaussian kernel parameter must be finite")
        return theta

    def kernel(self, theta, x):
        theta = self._validate_theta(theta)
        x = np.asarray(x, dtype=float)
        out = np.exp(-0.5 * (x - theta) ** 2) / _SQRT_2PI
        return out if out.ndim else float(out)

    def theta_deriv(self, theta, x):
        theta = self._validate_theta(theta)
        x = np.asarray(x, dtype=float)
        z = x - theta
        out = z * np.exp(-0.5 * z**2) / _SQRT_2PI
        return out if out.ndim else float(out)

    def cdf(self, theta, x):
        theta = self._validate_theta(theta)
        x = np.asarray(x, dtype=float)
        out = ndtr(x - theta)
        return out if out.ndim else float(out)


def kernel_eval(family, theta, x):
    """Evaluate ``f_theta(x)``; broadcasts over ``theta`` and ``x``."""
    return family.kernel(theta, x)


def kernel_theta_deriv(family, theta, x):
    """Evaluate the parameter derivative of ``f_theta`` at ``x``."""
    return family.theta_deriv(theta, x)


def kernel_cdf(family, theta, x):
    """Evaluate the kernel distribution function at ``x``."""
    return family.cdf(theta, x)


def mixture_eval(family, measure, x):
    """Evaluate the mixture density ``sum_i w_i f_{theta_i}(x)``.

    ``x`` may be a scalar or an array; the result matches its shape.
    An empty measure gives identically zero.
    """
    x = np.asarray(x, dtype=float)
    if measure.size == 0:
        out = np.zeros(x.shape)
        return out if out.ndim else 0.0
    kern = family.kernel(measure.locations, x[..., None])
    out = kern @ measure.weights
    return out if out.ndim else float(out)


def mixture_cdf(family, measure, x):
    """Evaluate the mixture distribution function at ``x``."""
    x = np.asarray(x, dtype=float)
    if measure.size == 0:
        out = np.zeros(x.shape)
        return out if out.ndim else 0.0
    cdf = family.cdf(measure.locations, x[..., None])
    out = cdf @ measure.weights
    return out if out.ndim else float(out)
