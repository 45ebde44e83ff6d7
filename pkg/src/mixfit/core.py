"""Support reduction solver for convex objectives over mixture cones.

The problem class: minimize a convex functional ``phi`` over the convex
cone of positive atomic mixtures of a parametric kernel family.  The
solver alternates two moves.  An outer scan locates the kernel whose
directional derivative ``D_phi(f_theta; f)`` is most negative over a
finite parameter grid and adds it to the working support.  A reduction
step then minimizes ``phi`` over the span of the working support
without sign constraints and walks back toward the cone, deleting the
atoms whose weights would turn negative, until the restricted minimizer
has positive weights only.  Iteration stops when no grid kernel offers
a descent direction steeper than a tolerance, which together with
stationarity on the support is a global optimality certificate for the
cone problem.

Models plug in through :class:`ConeObjective`.  Two baseline update
rules (convex-combination and exchange steps) are provided for
comparison experiments; they operate on the unit-mass hull rather than
the cone and converge much more slowly.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .families import MixingMeasure, SignedMixingMeasure, combine

__all__ = [
    "ConeObjective",
    "SolverConfig",
    "SolverTrace",
    "OptimalityCertificate",
    "ConvergenceStall",
    "min_alt_dir_deriv",
    "support_reduction_step",
    "reoptimize_over_support",
    "solve",
    "check_optimality",
    "dir_deriv_measure",
    "fedorov_wynn_step",
    "vertex_exchange_step",
]

logger = logging.getLogger("mixfit.core")


class ConvergenceStall(RuntimeError):
    """Raised when a damped update cannot make progress."""


class ConeObjective(ABC):
    """Contract a model must satisfy to be solved over its mixture cone.

    Concrete models supply the objective, the directional derivative
    toward single kernels, the unrestricted (signed) minimizer over a
    finite support, and a starting iterate.  All derivative evaluators
    are vectorized over the parameter argument.
    """

    #: the kernel family generating the cone
    family = None

    @abstractmethod
    def objective(self, measure):
        """Value of ``phi`` at an atomic (possibly signed) measure."""

    @abstractmethod
    def dir_deriv_vertex(self, theta, measure):
        """``D_phi(f_theta; f)``, the one-sided derivative toward a kernel."""

    def alt_dir_deriv_vertex(self, theta, measure):
        """Rescaled derivative used for termination; same sign as the raw one.

        Default is the raw derivative itself.  Quadratic objectives
        override this with the curvature-normalized variant so the
        stopping threshold has a uniform meaning across the grid.
        """
        return self.dir_deriv_vertex(theta, measure)

    @abstractmethod
    def unrestricted_min(self, support):
        """Signed minimizer of ``phi`` over the span of the given kernels.

        Must return a :class:`SignedMixingMeasure` whose locations are
        exactly the given support points, zero weights included.
        """

    @abstractmethod
    def start(self, grid):
        """Initial iterate: a restricted minimizer on a heuristic support."""

    def segment_curvature(self, direction):
        """Second derivative of ``phi`` along a signed direction measure.

        Quadratic objectives return the exact scalar; models without a
        cheap closed form return None and callers fall back to a scalar
        line search.
        """
        return None


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for :func:`solve` and the gridless refinement stage.

    Parameters
    ----------
    grid : ndarray
        Strictly increasing candidate parameter values.
    eta : float
        Termination threshold: stop once the minimal (rescaled)
        directional derivative over the grid exceeds ``-eta``.
    max_outer_iter : int
        Cap on outer iterations; hitting it returns the best iterate
        with ``converged=False``.
    purge_threshold : float
        Atoms below this weight are dropped after optimization steps.
    gridless_enabled : bool
        Whether to run the off-grid support refinement after the grid
        solve.
    gridless_tol : float
        Stop refinement once the location-gradient norm falls below
        this value.
    gridless_shrink : float
        Trust-interval shrink factor used when a refinement line search
        has to retry.
    max_fine_tune_steps : int
        Cap on refinement steps.
    merge_gap : float
        Rescue width for refinement, as a fraction of the support span:
        when a weight reoptimization fails on nearly coincident atoms,
        atoms closer than this are merged and the solve retried.
    support_tol : float
        Stationarity tolerance on the support used by optimality
        certificates issued while solving.
    """

    grid: np.ndarray
    eta: float = 1e-8
    max_outer_iter: int = 10_000
    purge_threshold: float = 1e-12
    gridless_enabled: bool = False
    gridless_tol: float = 1e-6
    gridless_shrink: float = 0.9
    max_fine_tune_steps: int = 10_000
    merge_gap: float = 1e-5
    support_tol: float = 1e-8

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float).ravel()
        if grid.size == 0:
            raise ValueError("grid must be nonempty")
        if not np.all(np.isfinite(grid)):
            raise ValueError("grid values must be finite")
        if np.any(np.diff(grid) <= 0.0):
            raise ValueError("grid must be strictly increasing")
        grid.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        if not (self.eta > 0.0):
            raise ValueError("eta must be positive")
        if self.max_outer_iter < 1:
            raise ValueError("max_outer_iter must be at least 1")
        if not (0.0 < self.gridless_shrink < 1.0):
            raise ValueError("gridless_shrink must lie in (0, 1)")


@dataclass
class SolverTrace:
    """Per-iteration record of a solver run.

    One row per outer iterate: the objective at the iterate, the
    support size, the minimal (rescaled) directional derivative over
    the grid, the grid argmin, the number of atoms deleted while
    producing this iterate (0 on the first row), the damping factor
    when the model uses damped outer updates (NaN otherwise), and the
    objective values recorded after each inner reduction move that
    produced this iterate.
    """

    objective: list = field(default_factory=list)
    support_size: list = field(default_factory=list)
    min_alt_deriv: list = field(default_factory=list)
    chosen_theta: list = field(default_factory=list)
    deletions: list = field(default_factory=list)
    step_size: list = field(default_factory=list)
    inner_objectives: list = field(default_factory=list)
    converged: bool = False

    def append(self, objective, support_size, min_alt_deriv, chosen_theta,
               deletions, step_size=np.nan, inner_objectives=()):
        self.objective.append(float(objective))
        self.support_size.append(int(support_size))
        self.min_alt_deriv.append(float(min_alt_deriv))
        self.chosen_theta.append(float(chosen_theta))
        self.deletions.append(int(deletions))
        self.step_size.append(float(step_size))
        self.inner_objectives.append(list(inner_objectives))

    @property
    def n_iterations(self):
        """Number of outer steps actually executed."""
        return max(len(self.objective) - 1, 0)


@dataclass(frozen=True)
class OptimalityCertificate:
    """Outcome of a cone-optimality check.

    ``min_grid_alt`` is the minimum of the rescaled directional
    derivative over the grid (the quantity the solver terminates on),
    ``min_grid_raw`` the raw counterpart, and ``max_abs_support`` the
    largest absolute raw derivative over the support atoms, where
    stationarity demands an exact zero.
    """

    min_grid_alt: float
    min_grid_raw: float
    argmin_theta: float
    max_abs_support: float
    support_size: int
    grid_tol: float
    support_tol: float

    @property
    def passed(self):
        return (self.min_grid_alt >= -self.grid_tol
                and self.max_abs_support <= self.support_tol)

    @property
    def gap(self):
        """Worst certificate violation, 0 when the check passes."""
        if self.passed:
            return 0.0
        return max(0.0, -self.min_grid_alt, self.max_abs_support)


def min_alt_dir_deriv(model, measure, grid):
    """Minimize the rescaled directional derivative over the grid.

    Returns ``(theta_hat, value)`` for the grid argmin.  Kernels that
    are not descent directions have nonnegative values, so a negative
    result always points at a usable insertion vertex.
    """
    vals = np.asarray(model.alt_dir_deriv_vertex(grid, measure), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("directional derivative scan produced non-finite values")
    idx = int(np.argmin(vals))
    return float(grid[idx]), float(vals[idx])


def _reduce_to_cone(model, support, start_weights, purge_threshold):
    """Minimize ``phi`` over the cone spanned by ``support``.

    ``start_weights`` is a nonnegative weight vector aligned with
    ``support`` describing a feasible iterate (zeros mark kernels with
    no current mass).  Repeatedly computes the unrestricted signed
    minimizer, and while it has negative weights moves the iterate as
    far toward it as feasibility allows, which zeroes out at least one
    atom; those atoms are deleted and the process repeats on the
    smaller support.  Returns ``(measure, deletions, inner_objectives)``.
    """
    S = np.asarray(support, dtype=float).copy()
    w = np.asarray(start_weights, dtype=float).copy()
    if S.size != w.size:
        raise ValueError("support and start weights must align")
    if np.any(w < 0.0):
        raise ValueError("start weights must be nonnegative")
    deletions = 0
    inner_objs = []

    while True:
        # Deletion loop proper: at most one pass per support point.
        for _ in range(S.size + 1):
            if S.size == 0:
                w = S.copy()
                break
            u = model.unrestricted_min(S).weights
            if np.all(u >= 0.0):
                zero = u == 0.0
                if zero.any():
                    deletions += int(zero.sum())
                    S, u = S[~zero], u[~zero]
                w = u
                break
            neg = u < 0.0
            # Largest step toward u keeping all weights nonnegative:
            # lam = w / (w - u) per negative atom, take the minimum.
            lam_neg = np.where(w[neg] > 0.0, w[neg] / (w[neg] - u[neg]), 0.0)
            lam = float(lam_neg.min())
            w = (1.0 - lam) * w + lam * u
            drop = np.zeros(S.size, dtype=bool)
            drop[np.flatnonzero(neg)[lam_neg <= lam * (1.0 + 1e-12)]] = True
            drop |= w <= 0.0
            deletions += int(drop.sum())
            S, w = S[~drop], w[~drop]
            inner_objs.append(model.objective(SignedMixingMeasure(S, w)))
        else:
            raise RuntimeError("reduction loop failed to terminate; "
                               "inconsistent unrestricted minimizer")
        tiny = (w > 0.0) & (w < purge_threshold)
        if not tiny.any():
            break
        deletions += int(tiny.sum())
        S, w = S[~tiny], w[~tiny]

    return MixingMeasure(S, w), deletions, inner_objs


def support_reduction_step(model, support, measure, purge_threshold=1e-12):
    """One outer step: minimize ``phi`` over the cone on an enlarged support.

    ``support`` is the current support plus the freshly selected
    vertex; ``measure`` is the current iterate (its atoms must all lie
    in ``support``).  Returns the restricted minimizer over the cone
    spanned by ``support``, possibly after deleting atoms.
    """
    S = np.asarray(support, dtype=float)
    if S.ndim != 1 or np.any(np.diff(S) <= 0.0):
        raise ValueError("support must be strictly increasing")
    pos = np.searchsorted(S, measure.locations)
    if (np.any(pos >= S.size)
            or not np.array_equal(S[np.minimum(pos, S.size - 1)], measure.locations)):
        raise ValueError("current iterate must be supported inside the step support")
    w0 = np.zeros(S.size)
    w0[pos] = measure.weights
    result, _, _ = _reduce_to_cone(model, S, w0, purge_threshold)
    return result


def reoptimize_over_support(model, measure, purge_threshold=1e-12):
    """Minimize ``phi`` over the cone spanned by the measure's own support."""
    result, _, _ = _reduce_to_cone(
        model, measure.locations, measure.weights, purge_threshold)
    return result


def solve(model, config):
    """Minimize a cone objective by iterated support reduction.

    Parameters
    ----------
    model : ConeObjective
        Problem instance.
    config : SolverConfig
        Grid, tolerance, and iteration caps.

    Returns
    -------
    measure : MixingMeasure
        Final iterate (global cone minimizer when ``trace.converged``).
    trace : SolverTrace
    """
    grid = config.grid
    f = model.start(grid)
    trace = SolverTrace()
    pending_deletions = 0
    pending_inner = []

    for it in range(config.max_outer_iter + 1):
        theta_hat, val = min_alt_dir_deriv(model, f, grid)
        trace.append(model.objective(f), f.size, val, theta_hat,
                     pending_deletions, np.nan, pending_inner)
        if val >= -config.eta:
            trace.converged = True
            logger.info("converged after %d outer iterations, min derivative %.3e",
                        it, val)
            break
        if it == config.max_outer_iter:
            logger.info("outer iteration cap %d reached, min derivative %.3e",
                        config.max_outer_iter, val)
            break
        logger.debug("iter %d: objective %.12g, support %d, min deriv %.3e at %.6g",
                     it, trace.objective[-1], f.size, val, theta_hat)
        if f.size and theta_hat in f.locations:
            # The scan picked an existing atom: stationarity on the
            # support has degraded, so reoptimize in place instead of
            # inserting a duplicate.
            f_new, pending_deletions, pending_inner = _reduce_to_cone(
                model, f.locations, f.weights, config.purge_threshold)
            if model.objective(f_new) >= trace.objective[-1]:
                logger.warning("no progress reoptimizing over the current support; "
                               "stopping with certificate gap %.3e", -val)
                break
            f = f_new
        else:
            S = np.sort(np.append(f.locations, theta_hat))
            pos = np.searchsorted(S, f.locations)
            w0 = np.zeros(S.size)
            w0[pos] = f.weights
            f, pending_deletions, pending_inner = _reduce_to_cone(
                model, S, w0, config.purge_threshold)

    return f, trace


def check_optimality(model, measure, grid, tol, support_tol=None):
    """Evaluate the cone-optimality certificate for a measure.

    The grid part requires the rescaled directional derivative to stay
    above ``-tol`` on every grid point; the support part requires the
    raw derivative to vanish (within ``support_tol``, default ``tol``)
    at every atom.  Both conditions together certify a global minimum
    over the grid-generated cone.
    """
    grid = np.asarray(grid, dtype=float)
    if support_tol is None:
        support_tol = tol
    alt = np.asarray(model.alt_dir_deriv_vertex(grid, measure), dtype=float)
    raw = np.asarray(model.dir_deriv_vertex(grid, measure), dtype=float)
    idx = int(np.argmin(alt))
    if measure.size:
        at_support = np.abs(np.asarray(
            model.dir_deriv_vertex(measure.locations, measure), dtype=float))
        max_abs = float(at_support.max())
    else:
        max_abs = 0.0
    return OptimalityCertificate(
        min_grid_alt=float(alt[idx]),
        min_grid_raw=float(raw.min()),
        argmin_theta=float(grid[idx]),
        max_abs_support=max_abs,
        support_size=measure.size,
        grid_tol=float(tol),
        support_tol=float(support_tol),
    )


def dir_deriv_measure(model, direction, measure):
    """``D_phi(h; f)`` for an atomic signed direction ``h``.

    The derivative is linear in the direction, so it is the weighted
    sum of the vertex derivatives over the atoms of ``h``.
    """
    if direction.size == 0:
        return 0.0
    vals = np.asarray(
        model.dir_deriv_vertex(direction.locations, measure), dtype=float)
    return float(vals @ direction.weights)


def _golden_section(f, lo, hi, tol=1e-10, max_iter=200):
    """Minimize a scalar unimodal function on [lo, hi] by golden section."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _segment_step(model, f, direction, deriv):
    """Step length in [0, 1] minimizing ``phi(f + eps * direction)``."""
    curv = model.segment_curvature(direction)
    if curv is not None and curv > 0.0:
        return float(np.clip(-deriv / curv, 0.0, 1.0))
    def along(eps):
        return model.objective(combine(f, 1.0, direction, eps))
    return _golden_section(along, 0.0, 1.0)


def fedorov_wynn_step(model, measure, grid):
    """One classical convex-combination update on the unit-mass hull.

    Picks the grid vertex minimizing ``D_phi(f_theta - f; f)`` and
    moves to ``(1 - eps) f + eps f_theta`` with the optimal step.
    Returns the measure unchanged when no vertex improves on ``f``.
    """
    if measure.size == 0:
        raise ValueError("the hull update needs a nonempty unit-mass iterate")
    grid = np.asarray(grid, dtype=float)
    dvals = np.asarray(model.dir_deriv_vertex(grid, measure), dtype=float)
    d_self = dir_deriv_measure(model, measure, measure)
    rel = dvals - d_self
    idx = int(np.argmin(rel))
    if rel[idx] >= 0.0:
        return measure
    vertex = MixingMeasure([grid[idx]], [1.0])
    direction = combine(vertex, 1.0, measure, -1.0)
    eps = _segment_step(model, measure, direction, float(rel[idx]))
    if eps <= 0.0:
        return measure
    new = combine(measure, 1.0 - eps, vertex, eps)
    keep = new.weights > 0.0
    return MixingMeasure(new.locations[keep], new.weights[keep])


def vertex_exchange_step(model, measure, grid):
    """One mass-conserving exchange update on the unit-mass hull.

    Moves weight from the support atom with the largest derivative to
    the grid vertex with the smallest one.  A full step (``eps = 1``)
    removes the donor atom entirely.  Mass is conserved exactly.
    """
    if measure.size == 0:
        raise ValueError("the exchange update needs a nonempty unit-mass iterate")
    grid = np.asarray(grid, dtype=float)
    dvals = np.asarray(model.dir_deriv_vertex(grid, measure), dtype=float)
    at_support = np.asarray(
        model.dir_deriv_vertex(measure.locations, measure), dtype=float)
    i_hat = int(np.argmin(dvals))
    i_chk = int(np.argmax(at_support))
    theta_hat = float(grid[i_hat])
    theta_chk = float(measure.locations[i_chk])
    gain = float(dvals[i_hat] - at_support[i_chk])
    if gain >= 0.0 or theta_hat == theta_chk:
        return measure
    mass_chk = float(measure.weights[i_chk])
    direction = SignedMixingMeasure.from_atoms(
        [theta_hat, theta_chk], [mass_chk, -mass_chk])
    eps = _segment_step(model, measure, direction, mass_chk * gain)
    if eps <= 0.0:
        return measure
    # Split the donor weight so the total is conserved bit for bit.
    stay = mass_chk * (1.0 - eps)
    moved = mass_chk - stay
    loc = np.append(np.delete(measure.locations, i_chk), theta_chk)
    w = np.append(np.delete(measure.weights, i_chk), stay)
    loc = np.append(loc, theta_hat)
    w = np.append(w, moved)
    merged = SignedMixingMeasure.from_atoms(loc, w)
    keep = merged.weights > 0.0
    return MixingMeasure(merged.locations[keep], merged.weights[keep])
