"""Maximum likelihood Gaussian deconvolution by sequential quadratic solves.

The estimator maximizes the mixture log likelihood for data
``x_i = theta_i + noise`` with standard normal noise and an unknown
mixing distribution.  Working with the mass-relaxed objective

    ml(f) = -(1/n) sum_i log f(x_i) + total_mass(f)

turns the simplex constraint into a free cone problem: any solution of
the relaxed problem automatically has total mass one.  The objective is
not quadratic, so each outer iteration builds the exact second-order
model of ``ml`` around the current mixture ``g``,

    q(f) = total_mass(f) - (2/n) sum f(x_i)/g(x_i)
           + (1/(2n)) sum (f(x_i)/g(x_i))^2 ,

minimizes it over the cone with the support reduction solver, and
applies a damped update with halving backtracking on the true
objective.  Near the solution full steps are accepted and the scheme
converges at Newton speed.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import linalg

from . import core
from .families import (
    GaussianFamily,
    MixingMeasure,
    SignedMixingMeasure,
    combine,
    mixture_eval,
)

__all__ = ["MlModel", "QuadLocalModel", "newton_solve", "starting_iterate"]

logger = logging.getLogger("mixfit.mldeconv")

_MAX_HALVINGS = 60


class MlModel:
    """Relaxed negative log likelihood for Gaussian location mixtures.

    Exposes the objective, its directional derivatives (used for the
    optimality certificate and as the termination scan of the outer
    Newton loop), and the location gradient for gridless refinement.
    The certificate derivative needs no rescaling here: the kernels
    share a common shape, so the raw derivative is already comparable
    across the grid.
    """

    family = GaussianFamily()

    def __init__(self, sample):
        x = np.sort(np.asarray(sample, dtype=float).ravel())
        if x.size == 0:
            raise ValueError("sample must be nonempty")
        if not np.all(np.isfinite(x)):
            raise ValueError("sample values must be finite")
        self.x = x
        self.n = x.size
        self.domain = (float(x[0]), float(x[-1]))

    def _mixture_at_obs(self, measure):
        return np.asarray(mixture_eval(self.family, measure, self.x), dtype=float)

    def objective(self, measure):
        """``-(1/n) sum log f(x_i) + mass``; +inf when f vanishes at a point."""
        fx = self._mixture_at_obs(measure)
        if np.any(fx <= 0.0):
            return np.inf
        return float(-np.mean(np.log(fx)) + measure.total_mass())

    def dir_deriv_vertex(self, theta, measure):
        """``1 - (1/n) sum f_theta(x_i) / f(x_i)``."""
        fx = self._mixture_at_obs(measure)
        if np.any(fx <= 0.0):
            raise ValueError("mixture must be positive at every observation")
        theta = np.asarray(theta, dtype=float)
        kern = self.family.kernel(theta, self.x.reshape((-1,) + (1,) * theta.ndim))
        out = 1.0 - np.tensordot(1.0 / fx, kern, axes=(0, 0)) / self.n
        return out if out.ndim else float(out)

    alt_dir_deriv_vertex = dir_deriv_vertex

    def location_gradient(self, measure):
        """Gradient of ``ml`` in the atom locations at fixed weights."""
        if measure.size == 0:
            return np.zeros(0)
        fx = self._mixture_at_obs(measure)
        if np.any(fx <= 0.0):
            raise ValueError("mixture must be positive at every observation")
        dkern = self.family.theta_deriv(measure.locations, self.x[:, None])
        return -measure.weights * (dkern.T @ (1.0 / fx)) / self.n

    def minimize_over_support(self, measure, config):
        """Minimize ``ml`` over the cone spanned by the measure's support.

        Runs the damped Newton iteration with the candidate set frozen
        to the support itself; used by gridless refinement after atoms
        have moved.
        """
        locked = core.SolverConfig(
            grid=measure.locations,
            eta=config.eta,
            max_outer_iter=200,
            purge_threshold=config.purge_threshold,
            support_tol=config.support_tol,
        )
        result, _ = _newton_loop(self, measure, locked, allow_stall=True)
        return result


class QuadLocalModel(core.ConeObjective):
    """Second-order model of the relaxed likelihood around a mixture.

    Parameters
    ----------
    sample : ndarray
        Observations (any order).
    center : MixingMeasure
        Expansion point ``g``; must be positive at every observation.
    grid, grid_kernels : optional
        A candidate grid together with the precomputed kernel matrix
        ``K[i, j] = f_grid_j(x_i)``; scans over exactly this grid reuse
        the cache, anything else is evaluated on the fly.

    Notes
    -----
    With ``d_i = 1 / g(x_i)`` the model is the quadratic

        q(f) = mass(f) - (2/n) sum d_i f(x_i) + (1/(2n)) sum (d_i f(x_i))^2

    whose gradient toward a kernel, ``c1(theta)``, matches the gradient
    of ``ml`` at ``g`` exactly, and whose curvature along a kernel is
    ``c2(theta) = (1/n) sum (d_i f_theta(x_i))^2``.
    """

    family = GaussianFamily()

    def __init__(self, sample, center, grid=None, grid_kernels=None):
        x = np.asarray(sample, dtype=float).ravel()
        gx = np.asarray(mixture_eval(self.family, center, x), dtype=float)
        if np.any(gx <= 0.0):
            raise ValueError("expansion mixture must be positive at every observation")
        self.x = x
        self.n = x.size
        self.center = center
        self.d = 1.0 / gx
        self._grid = grid
        if grid is not None:
            if grid_kernels is None:
                grid_kernels = self.family.kernel(grid, x[:, None])
            self._kd = grid_kernels * self.d[:, None]        # n x G
            self._c2_grid = np.mean(self._kd**2, axis=0)
            self._s_grid = np.mean(self._kd, axis=0)
        else:
            self._kd = None

    def _values_at_obs(self, measure):
        return np.asarray(mixture_eval(self.family, measure, self.x), dtype=float)

    def objective(self, measure):
        if measure.size == 0:
            return 0.0
        fd = self._values_at_obs(measure) * self.d
        return float(measure.total_mass() - 2.0 * np.mean(fd)
                     + 0.5 * np.mean(fd**2))

    def quad_coefficients(self, theta, measure):
        """Slope and curvature of ``q`` along a kernel direction.

        Returns ``(c1, c2)`` with
        ``q(f + eps f_theta) = q(f) + c1 eps + (1/2) c2 eps^2``.
        """
        theta = np.asarray(theta, dtype=float)
        use_cache = (self._kd is not None
                     and theta.shape == self._grid.shape
                     and np.array_equal(theta, self._grid))
        if use_cache:
            kd = self._kd
            c2 = self._c2_grid
            s = self._s_grid
        else:
            kern = self.family.kernel(
                theta, self.x.reshape((-1,) + (1,) * theta.ndim))
            kd = kern * self.d.reshape((-1,) + (1,) * theta.ndim)
            c2 = np.mean(kd**2, axis=0)
            s = np.mean(kd, axis=0)
        if measure.size:
            fd = self._values_at_obs(measure) * self.d
            cross = np.tensordot(fd, kd, axes=(0, 0)) / self.n
        else:
            cross = 0.0
        c1 = 1.0 - 2.0 * s + cross
        if np.ndim(c1):
            return np.asarray(c1), np.asarray(c2)
        return float(c1), float(c2)

    def dir_deriv_vertex(self, theta, measure):
        c1, _ = self.quad_coefficients(theta, measure)
        return c1

    def alt_dir_deriv_vertex(self, theta, measure):
        c1, c2 = self.quad_coefficients(theta, measure)
        out = c1 / np.sqrt(c2)
        return out if np.ndim(out) else float(out)

    def unrestricted_min(self, support):
        """Solve the normal equations of ``q`` over the given kernels.

        Equivalent to a penalized weighted least squares fit with
        observation weights ``sqrt(n) d_i``: the system is
        ``(DY)' DY alpha = 2 Y' d - n 1``.
        """
        support = np.asarray(support, dtype=float)
        if support.size == 0:
            return SignedMixingMeasure.empty()
        Y = self.family.kernel(support, self.x[:, None])       # n x p
        A = Y * self.d[:, None]
        M = A.T @ A
        rhs = 2.0 * Y.T @ self.d - self.n
        try:
            c, low = linalg.cho_factor(M)
            alpha = linalg.cho_solve((c, low), rhs)
        except linalg.LinAlgError as exc:
            raise ValueError(
                "rank-deficient quadratic subproblem: support points too "
                "close to resolve, merge them") from exc
        return SignedMixingMeasure(support, alpha)

    def start(self, grid):
        """Warm start: reoptimize the expansion measure on its own support."""
        if self.center.size == 0:
            return MixingMeasure.empty()
        return core.reoptimize_over_support(self, self.center)

    def segment_curvature(self, direction):
        """Exact curvature ``(1/n) sum (d_i h(x_i))^2`` along a direction."""
        if direction.size == 0:
            return 0.0
        hd = self._values_at_obs(direction) * self.d
        return float(np.mean(hd**2))


def starting_iterate(sample, grid):
    """Single atom of weight one at the grid point nearest the sample median."""
    grid = np.asarray(grid, dtype=float)
    med = float(np.median(np.asarray(sample, dtype=float)))
    theta0 = float(grid[np.argmin(np.abs(grid - med))])
    return MixingMeasure([theta0], [1.0])


_TIE_TOL = 1e-14


def _damped_update(model, current, candidate, current_value):
    """Backtracked convex combination toward the quadratic minimizer.

    Halves the step until the true objective strictly decreases and the
    mixture stays positive at every observation.  When no strict
    decrease is representable in floats (the remaining improvement is
    quadratic in an already tiny certificate gap) the full step is
    accepted as a tie provided the objective moves by at most
    ``_TIE_TOL``; the caller certifies or aborts right after.  Returns
    ``(measure, value, step, tied)``; raises
    :class:`core.ConvergenceStall` if not even a tie is available.
    """
    lam = 1.0
    tie = None
    for _ in range(_MAX_HALVINGS):
        blend = combine(current, 1.0 - lam, candidate, lam)
        keep = blend.weights > 0.0
        trial = MixingMeasure(blend.locations[keep], blend.weights[keep])
        value = model.objective(trial)
        if np.isfinite(value) and value < current_value:
            return trial, value, lam, False
        if tie is None and np.isfinite(value) \
                and value <= current_value + _TIE_TOL:
            tie = (trial, value, lam)
        lam *= 0.5
    if tie is not None:
        return tie[0], tie[1], tie[2], True
    raise core.ConvergenceStall(
        "damped likelihood update stalled: no decrease after "
        f"{_MAX_HALVINGS} halvings (objective {current_value:.12g}, "
        f"support size {current.size})")


def _newton_loop(model, start, config, allow_stall=False):
    """Shared sequential-quadratic iteration for the relaxed likelihood."""
    grid = config.grid
    kernels = model.family.kernel(grid, model.x[:, None])
    f = start
    trace = core.SolverTrace()
    pending = (0, np.nan, ())
    tied_last = False

    for it in range(config.max_outer_iter + 1):
        cert = core.check_optimality(model, f, grid, config.eta,
                                     config.support_tol)
        value = model.objective(f)
        trace.append(value, f.size, cert.min_grid_alt, cert.argmin_theta,
                     pending[0], pending[1], pending[2])
        if cert.passed:
            trace.converged = True
            logger.info("likelihood certificate passed after %d Newton steps "
                        "(grid min %.3e, support max %.3e)",
                        it, cert.min_grid_alt, cert.max_abs_support)
            break
        if tied_last:
            # A flat step is only admissible right before certification;
            # failing the certificate after one means no representable
            # progress remains.
            msg = ("likelihood iteration stalled at certificate gap "
                   f"{cert.gap:.3e}: objective flat to {_TIE_TOL} and the "
                   "certificate still fails")
            if allow_stall:
                logger.debug("%s; keeping current iterate", msg)
                break
            raise core.ConvergenceStall(msg)
        if it == config.max_outer_iter:
            logger.info("Newton iteration cap %d reached, certificate gap %.3e",
                        config.max_outer_iter, cert.gap)
            break
        quad = QuadLocalModel(model.x, f, grid=grid, grid_kernels=kernels)
        # Early quadratic subproblems need only a loose solve.  The gap is
        # measured on the quadratic model's own curvature-normalized scale
        # (the scale its scan terminates on; the raw likelihood gap can sit
        # orders of magnitude above it), and the floor sits below the outer
        # tolerance so the final certificate is not limited by truncation.
        alt0 = np.asarray(quad.alt_dir_deriv_vertex(grid, f))
        gap_q = max(0.0, -float(np.min(alt0)))
        eta_q = max(0.1 * config.eta, 1e-2 * gap_q)
        inner_config = core.SolverConfig(
            grid=grid, eta=eta_q, max_outer_iter=config.max_outer_iter,
            purge_threshold=config.purge_threshold,
            support_tol=config.support_tol)
        candidate, inner_trace = core.solve(quad, inner_config)
        try:
            f_new, new_value, lam, tied_last = _damped_update(
                model, f, candidate, value)
        except core.ConvergenceStall:
            if allow_stall:
                logger.debug("fixed-support likelihood polish stalled at "
                             "certificate gap %.3e; keeping current iterate",
                             cert.gap)
                break
            raise
        pending = (int(np.sum(inner_trace.deletions)), lam,
                   inner_trace.objective)
        logger.debug("Newton step %d: objective %.12g -> %.12g, lam %.3g, "
                     "support %d -> %d%s", it, value, new_value, lam,
                     f.size, f_new.size, " (tie)" if tied_last else "")
        f = f_new.purge(config.purge_threshold)
        if f.size == 0:
            raise core.ConvergenceStall("likelihood iterate lost all atoms")

    return f, trace


def newton_solve(sample, config, start=None):
    """Maximize the mixture likelihood over the grid-generated cone.

    Parameters
    ----------
    sample : array_like
        Observations.
    config : core.SolverConfig
        Grid, outer tolerance ``eta`` (certificate threshold on the
        grid), and iteration caps.
    start : MixingMeasure, optional
        Starting iterate; default is :func:`starting_iterate`.

    Returns
    -------
    measure : MixingMeasure
    trace : core.SolverTrace
        One row per Newton iteration; ``step_size`` holds the damping
        factor.
    """
    model = MlModel(sample)
    if start is None:
        start = starting_iterate(model.x, config.grid)
    return _newton_loop(model, start, config)
