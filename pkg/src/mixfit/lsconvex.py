"""Least squares estimation of a decreasing convex density on [0, inf).

The estimator minimizes ``phi(f) = 1/2 int f^2 - int f dF_n`` over
mixtures of triangular kernels ``f_theta(x) = 2 (theta - x) / theta^2``
on ``[0, theta)``.  Every piece of the objective has a closed form in
the atoms, so the cone machinery runs on exact linear algebra:

* ``Y_n(theta) = (1/n) sum_i (theta - x_i)_+`` collects the empirical
  part; it is the integrated empirical distribution function.
* ``H(theta; f)`` is the twice-integrated mixture, with one closed-form
  branch per side of each atom.
* ``<f_theta, f_tau> = 2/tau - 2 theta / (3 tau^2)`` for
  ``theta <= tau`` gives the Gram matrix; the diagonal is
  ``4 / (3 theta)``.

The directional derivative toward a kernel is then
``(2/theta^2) (H(theta; f) - Y_n(theta))`` and the termination scan
uses its curvature-normalized rescaling ``D * sqrt(3 theta / 4)``.
"""

from __future__ import annotations

import logging
import warnings

import numpy as np
from scipy import linalg

from . import core
from .families import (
    MixingMeasure,
    SignedMixingMeasure,
    TriangularFamily,
    mixture_cdf,
)

__all__ = ["LsModel", "ls_start"]

logger = logging.getLogger("mixfit.lsconvex")


class LsModel(core.ConeObjective):
    """Least squares convex-density objective over triangular mixtures.

    Parameters
    ----------
    sample : array_like
        Observations, all nonnegative.
    domain_factor : float
        The parameter domain is ``[x_(1), domain_factor * x_(n)]``.

    Attributes
    ----------
    x : ndarray
        Sorted copy of the sample.
    domain : tuple of float
        Parameter interval the support is confined to.
    """

    family = TriangularFamily()

    #: Gram condition number above which the normal-equation solve is
    #: flagged as unreliable.
    cond_warn = 1e12

    def __init__(self, sample, domain_factor=3.0):
        x = np.sort(np.asarray(sample, dtype=float).ravel())
        if x.size == 0:
            raise ValueError("sample must be nonempty")
        if not np.all(np.isfinite(x)):
            raise ValueError("sample values must be finite")
        if x[0] < 0.0:
            raise ValueError("the convex-density model needs nonnegative data")
        self.x = x
        self.n = x.size
        self.mean = float(x.mean())
        self.xmax = float(x[-1])
        self.domain = (float(x[0]), domain_factor * self.xmax)
        # Prefix sums make Y_n piecewise-linear evaluation O(log n).
        self._cumsum = np.concatenate(([0.0], np.cumsum(x)))

    # -- empirical and mixture integrals ---------------------------------

    def Y_n(self, theta):
        """Integrated empirical distribution ``(1/n) sum (theta - x_i)_+``."""
        theta = np.asarray(theta, dtype=float)
        k = np.searchsorted(self.x, theta, side="right")
        out = (k * theta - self._cumsum[k]) / self.n
        return out if out.ndim else float(out)

    def H(self, theta, measure):
        """Twice-integrated mixture ``int_0^theta int_0^s f`` at ``theta``.

        For an atom ``(tau, c)`` the contribution is
        ``c (theta^2 / tau - theta^3 / (3 tau^2))`` when
        ``theta <= tau`` and ``c (theta - tau / 3)`` past the kernel's
        support.
        """
        theta = np.asarray(theta, dtype=float)
        if measure.size == 0:
            out = np.zeros(theta.shape)
            return out if out.ndim else 0.0
        tau = measure.locations
        t = theta[..., None]
        below = t * t / tau - t**3 / (3.0 * tau * tau)
        above = t - tau / 3.0
        out = np.where(t <= tau, below, above) @ measure.weights
        return out if out.ndim else float(out)

    def inner_product(self, theta_a, theta_b):
        """L2 inner product of two triangular kernels."""
        theta_a = np.asarray(theta_a, dtype=float)
        theta_b = np.asarray(theta_b, dtype=float)
        if np.any(theta_a <= 0.0) or np.any(theta_b <= 0.0):
            raise ValueError("kernel parameters must be positive")
        lo = np.minimum(theta_a, theta_b)
        hi = np.maximum(theta_a, theta_b)
        out = 2.0 / hi - 2.0 * lo / (3.0 * hi * hi)
        return out if out.ndim else float(out)

    def _gram(self, support):
        return self.inner_product(support[:, None], support[None, :])

    def _linear_term(self, support):
        # b_j = int f_theta_j dF_n = (2/theta_j^2) Y_n(theta_j)
        return 2.0 * self.Y_n(support) / support**2

    # -- ConeObjective contract ------------------------------------------

    def objective(self, measure):
        """``1/2 int f^2 - int f dF_n`` for an atomic (signed) mixture."""
        if measure.size == 0:
            return 0.0
        w = measure.weights
        G = self._gram(measure.locations)
        b = self._linear_term(measure.locations)
        return float(0.5 * w @ G @ w - b @ w)

    def dir_deriv_vertex(self, theta, measure):
        theta = np.asarray(theta, dtype=float)
        out = 2.0 / theta**2 * (self.H(theta, measure) - self.Y_n(theta))
        return out if out.ndim else float(out)

    def alt_dir_deriv_vertex(self, theta, measure):
        # Normalizing by the kernel norm sqrt(4 / (3 theta)) makes the
        # scan threshold scale-free across the grid.
        theta = np.asarray(theta, dtype=float)
        out = self.dir_deriv_vertex(theta, measure) * np.sqrt(0.75 * theta)
        return out if out.ndim else float(out)

    def unrestricted_min(self, support):
        """Signed minimizer of ``phi`` over the span of the given kernels.

        Solves the normal equations ``G sigma = b`` by a symmetric
        positive definite factorization.
        """
        support = np.asarray(support, dtype=float)
        if support.size == 0:
            return SignedMixingMeasure.empty()
        G = self._gram(support)
        b = self._linear_term(support)
        cond = np.linalg.cond(G)
        if cond > self.cond_warn:
            warnings.warn(
                f"triangular Gram matrix condition number {cond:.2e}; "
                "nearly coincident knots should be merged", RuntimeWarning)
        try:
            c, low = linalg.cho_factor(G)
            sigma = linalg.cho_solve((c, low), b)
        except linalg.LinAlgError as exc:
            raise ValueError(
                "singular Gram matrix: knots too close to resolve, merge them"
            ) from exc
        return SignedMixingMeasure(support, sigma)

    def start(self, grid=None):
        """Initial iterate: one-kernel fit at a heuristic parameter.

        The heuristic parameter is ``3 * mean`` when the sample maximum
        lies below it, otherwise the smallest grid point beyond the
        maximum.  With a grid present the parameter is snapped to the
        nearest grid point so the solver stays inside the
        grid-generated cone.
        """
        theta0, _ = ls_start(self.x, grid=grid, snap=grid is not None)
        w = 1.5 * self.Y_n(theta0) / theta0
        if w <= 0.0:
            return MixingMeasure.empty()
        return MixingMeasure([theta0], [w])

    def segment_curvature(self, direction):
        """Exact ``int h^2`` for a signed direction; phi is quadratic."""
        if direction.size == 0:
            return 0.0
        w = direction.weights
        return float(w @ self._gram(direction.locations) @ w)

    # -- gridless support ------------------------------------------------

    def location_gradient(self, measure):
        """Gradient of ``phi`` in the atom locations at fixed weights.

        Component ``i`` equals
        ``w_i * d/dtheta D_phi(f_theta; f) | theta_i`` with ``f`` the
        mixture itself:
        ``(2/theta^2) F_f(theta) - (4/theta^3) H(theta; f)`` for the
        smooth part and the empirical sum of kernel parameter
        derivatives for the data part.
        """
        if measure.size == 0:
            return np.zeros(0)
        theta = measure.locations
        smooth = (2.0 / theta**2 * mixture_cdf(self.family, measure, theta)
                  - 4.0 / theta**3 * self.H(theta, measure))
        # (1/n) sum_j (4 x_j - 2 theta) / theta^3 over x_j < theta.
        k = np.searchsorted(self.x, theta, side="left")
        empirical = (4.0 * self._cumsum[k] - 2.0 * theta * k) / (self.n * theta**3)
        return measure.weights * (smooth - empirical)

    def minimize_over_support(self, measure, config):
        """Weight reoptimization on a fixed support (exact for this model)."""
        return core.reoptimize_over_support(self, measure, config.purge_threshold)


def ls_start(sample, grid=None, snap=False):
    """Heuristic starting parameter and one-kernel fit for the LS model.

    Returns ``(theta0, measure)``.  ``theta0`` is ``3 * mean(sample)``
    when the sample maximum is smaller, otherwise the smallest grid
    point beyond the maximum (a grid is required in that case).  With
    ``snap=True`` the first branch also lands on the nearest grid
    point.  The one-kernel weight ``(3/2) Y_n(theta0) / theta0`` is the
    exact minimizer of ``phi`` along the ray through ``f_theta0``.
    """
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    mean = float(x.mean())
    xmax = float(x[-1])
    if xmax < 3.0 * mean:
        theta0 = 3.0 * mean
        if snap:
            if grid is None:
                raise ValueError("snapping needs a grid")
            grid = np.asarray(grid, dtype=float)
            theta0 = float(grid[np.argmin(np.abs(grid - theta0))])
    else:
        if grid is None:
            raise ValueError(
                "sample maximum exceeds 3 * mean; a grid is needed to start")
        grid = np.asarray(grid, dtype=float)
        beyond = grid[grid > xmax]
        if beyond.size == 0:
            raise ValueError("no grid point beyond the sample maximum")
        theta0 = float(beyond[0])
    yn = float(np.maximum(theta0 - x, 0.0).mean())
    w = 1.5 * yn / theta0
    measure = MixingMeasure([theta0], [w]) if w > 0.0 else MixingMeasure.empty()
    return theta0, measure
