"""Off-grid refinement of a fitted support by location steepest descent.

A grid solution pins atom locations to the candidate grid.  This stage
lifts that restriction: with weights held fixed, the objective change
under a joint location shift ``h`` is

    tau(h) = phi(sum_i w_i f_{theta_i + h_i}) - phi(f),

whose gradient components are ``w_i`` times the parameter derivative of
the vertex directional derivative at ``theta_i``.  Each refinement step
moves the locations a short distance along ``-grad tau / |grad tau|``,
chooses the step length by a derivative-based line search (regula falsi
on the directional derivative of ``tau``), and then reoptimizes the
weights over the shifted support, which may delete atoms.  The loop
stops when the location gradient is small, so the final support is
stationary in both weights and locations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .families import MixingMeasure

__all__ = [
    "FineTuneTrace",
    "tau_gradient",
    "regula_falsi_step",
    "line_search",
    "fine_tune",
]

logger = logging.getLogger("mixfit.gridless")

#: line searches give up once the trust interval shrinks below this
#: fraction of its initial length.
_EPS_UNDERFLOW = 1e-14


@dataclass
class FineTuneTrace:
    """Record of a refinement run.

    ``objective`` holds the value after every sub-step (location shift
    and weight reoptimization separately), so monotone descent across
    the whole stage is checkable.  ``grad_norm`` has one entry per
    refinement step.
    """

    objective: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    step_eps: list = field(default_factory=list)
    support_size: list = field(default_factory=list)
    steps: int = 0
    converged: bool = False
    stop_reason: str = ""


def tau_gradient(model, measure):
    """Gradient of the objective in the atom locations at fixed weights.

    Evaluating it at a shifted configuration gives the gradient of
    ``tau`` at the corresponding shift, so this single hook drives the
    whole refinement stage.
    """
    return np.asarray(model.location_gradient(measure), dtype=float)


def regula_falsi_step(eps_lo, eps_hi, g_lo, g_hi):
    """Secant zero of a bracketed scalar function.

    Requires ``g_lo < 0 <= g_hi`` (a sign change over the interval).
    Exact for affine functions; for a symmetric bracket
    (``g_lo = -g_hi``) it returns the midpoint.
    """
    if not (g_lo < 0.0 <= g_hi):
        raise ValueError("regula falsi needs g_lo < 0 <= g_hi")
    if not (eps_lo < eps_hi):
        raise ValueError("regula falsi needs eps_lo < eps_hi")
    return (eps_lo * g_hi - eps_hi * g_lo) / (g_hi - g_lo)


def _falsi_root(fn, eps_lo, eps_hi, g_lo, g_hi, f_tol, max_iter=100):
    """Drive :func:`regula_falsi_step` to a near-stationary point.

    Stops once ``|fn(eps)| <= f_tol`` or the bracket collapses.  Uses
    the Illinois weighting on stagnating endpoints so the residual at
    the returned point actually converges.
    """
    lo, hi, glo, ghi = eps_lo, eps_hi, g_lo, g_hi
    eps = hi
    side = 0
    for _ in range(max_iter):
        eps = (lo * ghi - hi * glo) / (ghi - glo)
        g = fn(eps)
        if abs(g) <= f_tol or (hi - lo) <= _EPS_UNDERFLOW * eps_hi:
            return eps
        if g > 0.0:
            hi, ghi = eps, g
            if side == +1:
                glo *= 0.5
            side = +1
        else:
            lo, glo = eps, g
            if side == -1:
                ghi *= 0.5
            side = -1
    return eps


def _shifted(measure, h, eps):
    return MixingMeasure(measure.locations + eps * h, measure.weights)


def line_search(model, measure, h, eps0, shrink=0.9):
    """Step length along a unit descent direction of the locations.

    Evaluates the directional derivative ``mu'(eps)`` of
    ``tau(eps h)``.  If it is still negative at the trust radius
    ``eps0`` the full step is taken; otherwise the sign change is
    resolved by regula falsi.  Candidates are only accepted when the
    objective strictly decreases at fixed weights; otherwise the trust
    radius shrinks by ``shrink`` and the search retries.  Returns the
    accepted ``eps`` or None when no improving step exists above the
    underflow floor.
    """
    phi0 = model.objective(measure)

    def mu_prime(eps):
        return float(h @ tau_gradient(model, _shifted(measure, h, eps)))

    def tau(eps):
        return model.objective(_shifted(measure, h, eps)) - phi0

    g0 = mu_prime(0.0)
    if g0 >= 0.0:
        return None
    top = eps0
    f_tol = 1e-13 * max(1.0, abs(g0))
    while top > _EPS_UNDERFLOW * eps0:
        g_top = mu_prime(top)
        if g_top < 0.0:
            cand = top
        else:
            cand = _falsi_root(mu_prime, 0.0, top, g0, g_top, f_tol)
        if cand > 0.0 and tau(cand) < 0.0:
            return cand
        top = shrink * min(cand, top) if cand > 0.0 else shrink * top
    return None


def _trust_radius(measure, h, domain):
    """Largest safe step: half the smallest atom gap per unit of relative
    motion, clipped so every shifted location stays inside the domain."""
    locs = measure.locations
    hmax = float(np.max(np.abs(h)))
    if hmax == 0.0:
        return 0.0
    bounds = []
    if locs.size > 1:
        bounds.append(0.5 * float(np.min(np.diff(locs))) / hmax)
    lo, hi = domain
    for loc, hi_dir in zip(locs, h):
        if hi_dir > 0.0 and np.isfinite(hi):
            bounds.append((hi - loc) / hi_dir)
        elif hi_dir < 0.0 and np.isfinite(lo):
            bounds.append((loc - lo) / (-hi_dir))
    if not bounds:
        # single unconstrained atom: scale with the location itself
        bounds.append(max(1.0, abs(float(locs[0]))))
    return max(0.0, min(bounds))


def _merge_close(measure, gap):
    """Merge runs of atoms closer than ``gap`` (weighted mean location)."""
    if measure.size < 2 or gap <= 0.0:
        return measure
    locs, w = measure.locations, measure.weights
    close = np.diff(locs) < gap
    if not close.any():
        return measure
    groups = np.concatenate(([0], np.cumsum(~close)))
    out_loc, out_w = [], []
    for g in range(groups[-1] + 1):
        sel = groups == g
        wsum = float(w[sel].sum())
        out_loc.append(float((locs[sel] * w[sel]).sum() / wsum))
        out_w.append(wsum)
    return MixingMeasure(out_loc, out_w)


def fine_tune(model, measure, config):
    """Refine a grid solution by alternating location and weight updates.

    Parameters
    ----------
    model
        Objective with ``location_gradient`` and ``minimize_over_support``
        hooks (both cone models provide them).
    measure : MixingMeasure
        Converged grid solution.
    config : SolverConfig
        ``gridless_tol`` is the stopping threshold on the location
        gradient norm; ``max_fine_tune_steps``, ``gridless_shrink`` and
        ``merge_gap`` control the iteration.

    Returns
    -------
    measure : MixingMeasure
    trace : FineTuneTrace

    Notes
    -----
    The objective never increases: location steps are accepted only on
    strict decrease at fixed weights, and the weight reoptimization
    minimizes over a set containing the current iterate.  Atoms can be
    deleted (or merged when nearly coincident) but never added, so the
    refined support is at most as large as the grid solution's.
    """
    trace = FineTuneTrace()
    f = measure
    if f.size == 0:
        trace.converged = True
        trace.stop_reason = "empty measure"
        return f, trace
    domain = getattr(model, "domain", model.family.domain)
    span = f.locations[-1] - f.locations[0] if f.size > 1 else 1.0
    merge_gap = config.merge_gap * max(span, 1.0)
    trace.objective.append(model.objective(f))

    for _ in range(config.max_fine_tune_steps):
        grad = tau_gradient(model, f)
        norm = float(np.linalg.norm(grad))
        trace.grad_norm.append(norm)
        if norm <= config.gridless_tol:
            trace.converged = True
            trace.stop_reason = "gradient below tolerance"
            break
        h = -grad / norm
        eps0 = _trust_radius(f, h, domain)
        if eps0 <= 0.0:
            trace.stop_reason = "no room to move inside the domain"
            break
        eps = line_search(model, f, h, eps0, config.gridless_shrink)
        if eps is None:
            trace.stop_reason = "line search found no improving step"
            break
        shifted = _shifted(f, h, eps)
        trace.objective.append(model.objective(shifted))
        try:
            f = model.minimize_over_support(shifted, config)
        except ValueError:
            # Rank-deficient reoptimization: nearly coincident atoms.
            # Merge them and retry; this is the only step that can move
            # an atom without a guaranteed descent, so it is a rescue
            # path rather than the normal route.
            logger.debug("reoptimization rank-deficient, merging atoms "
                         "closer than %.3e", merge_gap)
            f = model.minimize_over_support(
                _merge_close(shifted, merge_gap), config)
        if f.size == 0:
            trace.stop_reason = "all atoms deleted"
            break
        trace.objective.append(model.objective(f))
        trace.step_eps.append(eps)
        trace.support_size.append(f.size)
        trace.steps += 1
        logger.debug("refine step %d: |grad| %.3e, eps %.3e, support %d, "
                     "objective %.12g", trace.steps, norm, eps, f.size,
                     trace.objective[-1])
    else:
        trace.stop_reason = "step cap reached"

    logger.info("refinement stopped after %d steps: %s", trace.steps,
                trace.stop_reason or "converged")
    return f, trace
