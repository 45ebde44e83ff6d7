"""End-to-end fitting pipelines, file formats, and diagnostic curves.

Everything the command line exposes lives here as plain functions so
the same flows are scriptable: sample simulation, sample ingestion,
the two model pipelines (least squares convex density, maximum
likelihood Gaussian deconvolution), measure persistence, the text run
report, and the four diagnostic curve files.

File formats
------------
Samples are one decimal number per line; blank lines and lines starting
with ``#`` are ignored.  Measures are CSV with a ``theta,weight``
header and 17 significant digits, which round-trips float64 exactly.
Curves are CSV with a header row naming the columns.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import ndtr

from . import core, gridless, lsconvex, mldeconv
from .families import MixingMeasure, mixture_cdf, mixture_eval

__all__ = [
    "simulate_sample",
    "write_sample",
    "ingest",
    "write_measure",
    "read_measure",
    "RunReport",
    "FitResult",
    "fit_convex_ls",
    "fit_deconv_ml",
    "fit",
    "emit_curves",
    "default_grid_spec",
]

logger = logging.getLogger("mixfit.pipeline")

#: resolution of the x-axis for density and distribution curve files
_CURVE_POINTS = 512

MODELS = ("convex-ls", "deconv-ml")
SIMULATION_KINDS = ("exponential", "exp-normal-mixture")


# -- samples -------------------------------------------------------------

def simulate_sample(kind, n, seed):
    """Draw a reproducible sample from one of the two reference setups.

    ``exponential`` draws unit exponentials by inversion,
    ``x = -log1p(-u)`` with ``u`` uniform.  ``exp-normal-mixture``
    draws an exponential location the same way and adds standard
    normal noise.  The generator is numpy's PCG64 seeded with ``seed``,
    so runs are bit-reproducible on a fixed numpy build.
    """
    if n < 1:
        raise ValueError("sample size must be positive")
    rng = np.random.default_rng(seed)
    u = rng.random(n)
    expo = -np.log1p(-u)
    if kind == "exponential":
        return expo
    if kind == "exp-normal-mixture":
        return expo + rng.standard_normal(n)
    raise ValueError(f"unknown simulation kind: {kind!r}")


def write_sample(path, sample, header=()):
    with open(path, "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        for value in np.asarray(sample, dtype=float):
            fh.write(f"{value:.17g}\n")


def ingest(path, nonnegative=False):
    """Read a sample file: one decimal number per line.

    Blank lines and ``#`` comments are skipped.  Malformed content is
    reported with its line number.  With ``nonnegative=True`` negative
    values are rejected (the convex-density model needs them).
    """
    values = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                value = float(line)
            except ValueError:
                raise ValueError(
                    f"{path}: line {lineno}: not a number: {line!r}") from None
            if not np.isfinite(value):
                raise ValueError(f"{path}: line {lineno}: non-finite value")
            if nonnegative and value < 0.0:
                raise ValueError(
                    f"{path}: line {lineno}: negative observation {value!r} "
                    "not allowed for this model")
            values.append(value)
    if not values:
        raise ValueError(f"{path}: no observations found")
    return np.sort(np.asarray(values, dtype=float))


# -- measures ------------------------------------------------------------

def write_measure(path, measure):
    """Persist atoms as ``theta,weight`` CSV with 17 significant digits."""
    with open(path, "w") as fh:
        fh.write("theta,weight\n")
        for theta, w in zip(measure.locations, measure.weights):
            fh.write(f"{theta:.17g},{w:.17g}\n")


def read_measure(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "theta,weight":
            raise ValueError(f"{path}: expected 'theta,weight' header")
        loc, w = [], []
        for lineno, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ValueError(f"{path}: line {lineno}: expected two fields")
            loc.append(float(parts[0]))
            w.append(float(parts[1]))
    return MixingMeasure(loc, w)


# -- fitting -------------------------------------------------------------

def default_grid_spec(model_kind, sample):
    """Default ``(grid_min, grid_max, grid_size)`` per model."""
    x = np.asarray(sample, dtype=float)
    if model_kind == "convex-ls":
        return float(x.min()), 3.0 * float(x.max()), 1000
    if model_kind == "deconv-ml":
        return float(x.min()), float(x.max()), 500
    raise ValueError(f"unknown model: {model_kind!r}")


def build_grid(grid_min, grid_max, grid_size, family):
    """Equally spaced candidate grid, restricted to the family's domain."""
    if grid_size < 1:
        raise ValueError("grid size must be positive")
    if grid_max < grid_min:
        raise ValueError("grid max must not be below grid min")
    grid = np.linspace(grid_min, grid_max, grid_size)
    lo, hi = family.domain
    valid = (grid > lo) & (grid < hi)
    dropped = grid_size - int(valid.sum())
    if dropped:
        logger.info("dropped %d grid points outside the parameter domain",
                    dropped)
    grid = np.unique(grid[valid])
    if grid.size == 0:
        raise ValueError("no valid grid points inside the parameter domain")
    return grid


@dataclass
class FitResult:
    """Everything a fit produces, for reporting and curve emission."""

    model_kind: str
    model: object
    measure: MixingMeasure
    trace: core.SolverTrace
    certificate: core.OptimalityCertificate
    config: core.SolverConfig
    fine_tune_trace: gridless.FineTuneTrace | None = None
    grid_support_size: int = 0
    wall_time: float = 0.0

    @property
    def converged(self):
        ok = self.trace.converged
        if self.config.gridless_enabled and self.fine_tune_trace is not None:
            ok = ok and self.fine_tune_trace.converged
        return ok


def fit_convex_ls(sample, config):
    """Least squares convex density fit on a grid, optional refinement.

    Refinement runs when ``config.gridless_enabled`` is set; it is off
    by default for this model because the triangular kernel's kink
    makes location derivatives only piecewise smooth.
    """
    started = time.perf_counter()
    model = lsconvex.LsModel(sample)
    measure, trace = core.solve(model, config)
    grid_support = measure.size
    ft_trace = None
    if config.gridless_enabled and trace.converged:
        measure, ft_trace = gridless.fine_tune(model, measure, config)
    cert = core.check_optimality(model, measure, config.grid, config.eta,
                                 config.support_tol)
    return FitResult("convex-ls", model, measure, trace, cert, config,
                     ft_trace, grid_support, time.perf_counter() - started)


def fit_deconv_ml(sample, config):
    """Maximum likelihood Gaussian deconvolution fit, optional refinement."""
    started = time.perf_counter()
    model = mldeconv.MlModel(sample)
    measure, trace = mldeconv.newton_solve(sample, config)
    grid_support = measure.size
    ft_trace = None
    if config.gridless_enabled and trace.converged:
        measure, ft_trace = gridless.fine_tune(model, measure, config)
    cert = core.check_optimality(model, measure, config.grid, config.eta,
                                 config.support_tol)
    return FitResult("deconv-ml", model, measure, trace, cert, config,
                     ft_trace, grid_support, time.perf_counter() - started)


def fit(model_kind, sample, config):
    if model_kind == "convex-ls":
        return fit_convex_ls(sample, config)
    if model_kind == "deconv-ml":
        return fit_deconv_ml(sample, config)
    raise ValueError(f"unknown model: {model_kind!r}")


# -- reports -------------------------------------------------------------

@dataclass
class RunReport:
    """Structured summary of a fit, rendered as ``key: value`` text."""

    model: str
    n_observations: int
    grid_min: float
    grid_max: float
    grid_size: int
    eta: float
    max_iter: int
    gridless: bool
    gridless_tol: float
    converged: bool
    outer_iterations: int
    fine_tune_steps: int
    final_objective: float
    support_size: int
    grid_support_size: int
    total_mass: float
    cert_min_grid_alt: float
    cert_min_grid_raw: float
    cert_max_abs_support: float
    cert_passed: bool
    wall_time_s: float
    atoms: list = field(default_factory=list)

    @classmethod
    def from_result(cls, result, n_observations):
        ft = result.fine_tune_trace
        cfg = result.config
        return cls(
            model=result.model_kind,
            n_observations=n_observations,
            grid_min=float(cfg.grid[0]),
            grid_max=float(cfg.grid[-1]),
            grid_size=int(cfg.grid.size),
            eta=cfg.eta,
            max_iter=cfg.max_outer_iter,
            gridless=cfg.gridless_enabled,
            gridless_tol=cfg.gridless_tol,
            converged=result.converged,
            outer_iterations=result.trace.n_iterations,
            fine_tune_steps=0 if ft is None else ft.steps,
            final_objective=result.model.objective(result.measure),
            support_size=result.measure.size,
            grid_support_size=result.grid_support_size,
            total_mass=result.measure.total_mass(),
            cert_min_grid_alt=result.certificate.min_grid_alt,
            cert_min_grid_raw=result.certificate.min_grid_raw,
            cert_max_abs_support=result.certificate.max_abs_support,
            cert_passed=result.certificate.passed,
            wall_time_s=result.wall_time,
            atoms=[(float(t), float(w)) for t, w in
                   zip(result.measure.locations, result.measure.weights)],
        )

    def to_text(self):
        lines = []
        for key in ("model", "n_observations", "grid_min", "grid_max",
                    "grid_size", "eta", "max_iter", "gridless",
                    "gridless_tol", "converged", "outer_iterations",
                    "fine_tune_steps", "final_objective", "support_size",
                    "grid_support_size", "total_mass", "cert_min_grid_alt",
                    "cert_min_grid_raw", "cert_max_abs_support",
                    "cert_passed", "wall_time_s"):
            value = getattr(self, key)
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = f"{value:.17g}"
            else:
                text = str(value)
            lines.append(f"{key}: {text}")
        for i, (theta, w) in enumerate(self.atoms):
            lines.append(f"atom_{i}: {theta:.17g},{w:.17g}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())


# -- reference truths ----------------------------------------------------

def _true_mixing_cdf(model_kind, theta):
    # Exponential data as a convex density correspond to a Gamma(3)
    # mixing distribution over triangular kernels; the deconvolution
    # reference uses a unit exponential mixing distribution.
    theta = np.asarray(theta, dtype=float)
    if model_kind == "convex-ls":
        return stats.gamma.cdf(theta, a=3.0)
    return stats.expon.cdf(theta)


def _true_density(model_kind, x):
    x = np.asarray(x, dtype=float)
    if model_kind == "convex-ls":
        return stats.expon.pdf(x)
    # exponential location + standard normal noise
    return np.exp(0.5 - x) * ndtr(x - 1.0)


# -- curves --------------------------------------------------------------

def _write_curve(path, header, columns):
    columns = [np.asarray(c, dtype=float) for c in columns]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*columns):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def emit_curves(out_dir, result, sample):
    """Write the four diagnostic curve files for a fit.

    (a) fitted mixing distribution function with the reference mixing
        distribution for the model's canonical experiment,
    (b) fitted mixture density with the reference true density,
    (c) the rescaled directional derivative over the solve grid (the
        certificate curve),
    (d) fitted mixture distribution function with the empirical one.

    Density and distribution curves use 512 points covering the data
    range extended by 10% on each side; the certificate curve is
    evaluated exactly on the solve grid, where its sign is guaranteed.
    """
    out_dir = str(out_dir)
    model = result.model
    measure = result.measure
    family = model.family
    grid = result.config.grid
    x = np.sort(np.asarray(sample, dtype=float))
    span = x[-1] - x[0]
    pad = 0.1 * span if span > 0.0 else 1.0
    xs = np.linspace(x[0] - pad, x[-1] + pad, _CURVE_POINTS)

    theta_axis = np.linspace(grid[0], grid[-1], _CURVE_POINTS)
    _write_curve(
        f"{out_dir}/curve_mixing_cdf.csv",
        ["theta", "fitted_mixing_cdf", "reference_mixing_cdf"],
        [theta_axis, measure.cdf(theta_axis),
         _true_mixing_cdf(result.model_kind, theta_axis)])

    _write_curve(
        f"{out_dir}/curve_mixture_density.csv",
        ["x", "fitted_density", "true_density"],
        [xs, mixture_eval(family, measure, xs),
         _true_density(result.model_kind, xs)])

    _write_curve(
        f"{out_dir}/curve_directional_derivative.csv",
        ["theta", "alt_dir_deriv"],
        [grid, np.asarray(model.alt_dir_deriv_vertex(grid, measure))])

    ecdf = np.searchsorted(x, xs, side="right") / x.size
    _write_curve(
        f"{out_dir}/curve_mixture_cdf.csv",
        ["x", "fitted_cdf", "empirical_cdf"],
        [xs, mixture_cdf(family, measure, xs), ecdf])
