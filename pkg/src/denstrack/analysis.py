"""Convergence studies, rate fits, the Monte-Carlo oracle and the weak-vs-L1 demo."""
from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtri, roots_legendre

from . import _loops
from .errors import ConfigError, DomainError, ResolutionError, UnsupportedError
from .grid import (
    Cauchy, Gaussian, GridDensity, GridSpec, SinePerturbedUniform, Uniform, _as_tuple,
    characteristic_function, coarsen, gaussian_cell_masses, init_density, l1_distance,
    normal_interval,
)
from .kernel import ou_exact, ou_exact_law
from .model import Family
from .propagator import Propagator, evolve

MIN_PATHS = 10_000
# Word index reserved for initial-state uniforms, far from the increment words.
INIT_WORD = 1 << 62


# ---------------------------------------------------------------------------
# Rate fitting
# ---------------------------------------------------------------------------

def _loglog_fit(ns, errors):
    ns = np.asarray(ns, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = errors > 0
    if keep.sum() < 3:
        raise DomainError("rate fit needs at least 3 rows with nonzero error")
    x = np.log(1.0 / ns[keep])
    y = np.log(errors[keep])
    design = np.stack([x, np.ones_like(x)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    r2 = 1.0 if ss_tot <= 1e-300 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), float(r2)


def fit_rate(rows):
    """Least-squares slope of log(error) against log(1/n).

    ``rows`` holds ``(n, error)`` pairs or objects with ``n`` and ``error``.
    Rows with zero error are dropped. Returns ``(slope, r2)``.
    """
    ns, errs = [], []
    for r in rows:
        n, e = (r.n, r.error) if hasattr(r, "error") else (r[0], r[1])
        ns.append(n)
        errs.append(e)
    slope, _, r2 = _loglog_fit(ns, errs)
    return slope, r2


# ---------------------------------------------------------------------------
# Convergence studies
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceRow:
    n: int
    error: float
    seconds: float
    leaked_mass: float = 0.0


@dataclass
class ConvergenceTable:
    rows: list
    fitted_rate: float | None = None
    fit_r2: float | None = None
    grid_floor: float | None = None
    reference: str = ""
    config: dict = field(default_factory=dict)

    @property
    def errors(self):
        return [r.error for r in self.rows]

    @property
    def strictly_decreasing(self):
        e = self.errors
        return all(b < a for a, b in zip(e, e[1:]))

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("n,error,seconds\n")
            for r in self.rows:
                fh.write(f"{r.n},{r.error!r},{r.seconds:.6f}\n")

    def sidecar(self):
        return {
            "fitted_rate": self.fitted_rate,
            "fit_r2": self.fit_r2,
            "grid_floor": self.grid_floor,
            "reference": self.reference,
            "config": self.config,
            "leakage": {str(r.n): r.leaked_mass for r in self.rows},
        }

    def write_sidecar(self, path):
        with open(path, "w") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")


def _ou_coefficients(model):
    if model.family is not Family.AFFINE or model.dim != 1:
        raise ConfigError("exact OU reference needs a 1D affine model", "model")
    c0, c1, s = model.params
    if c0 != 0.0:
        raise ConfigError("exact OU reference needs c0 = 0", "model.params")
    return c1, s


def _cauchy_pdf(x, loc, scale):
    z = (x - loc) / scale
    return 1.0 / (np.pi * scale * (1.0 + z * z))


def ou_reference(u0_spec, grid, b, sigma, t, nodes=4):
    """Cell averages of the exact OU law at time ``t`` started from ``u0_spec``.

    Gaussian: closed form. Cauchy: the box-restricted initial density is pushed
    through the exact kernel with ``nodes``-point Gauss-Legendre quadrature per
    source cell and exact CDF differences per target cell.
    """
    if isinstance(u0_spec, Gaussian):
        mean, var = ou_exact_law(b, sigma, t, u0_spec)
        masses, leaked = gaussian_cell_masses(grid, mean, var)
        return GridDensity(grid, masses / grid.cell_volume, leaked)
    if not isinstance(u0_spec, Cauchy):
        raise ConfigError("exact OU reference needs a Gaussian or Cauchy initial density", "initial")
    loc, = _as_tuple(u0_spec.loc)
    scale, = _as_tuple(u0_spec.scale)
    law = ou_exact(b, sigma, t)
    std = math.sqrt(law.variance)
    h = float(grid.spacing[0])
    gl_x, gl_w = roots_legendre(nodes)
    left = grid.axis_edges(0)[:-1]
    src = (left[:, None] + 0.5 * h * (gl_x[None, :] + 1.0)).ravel()
    weight = (np.broadcast_to(0.5 * h * gl_w, (grid.cells[0], nodes)).ravel()
              * _cauchy_pdf(src, loc, scale))
    centers = src * law.mean_factor
    edges = grid.axis_edges(0)
    out = np.zeros(grid.cells[0])
    rows = max(1, (1 << 22) // edges.size)
    for start in range(0, src.size, rows):
        z = (edges[None, :] - centers[start:start + rows, None]) / std
        out += weight[start:start + rows] @ normal_interval(z[:, :-1], z[:, 1:])
    inside = float(np.sum(out))
    return GridDensity(grid, out / h, min(1.0, max(0.0, 1.0 - inside)))


def convergence_study(model, u0_spec, grid, t, n_list, reference="ou-exact", mode=None,
                      n_ref=None, estimate_floor=True):
    """L1 error of ``evolve(n)`` against a reference for each ``n`` in ``n_list``.

    ``reference="ou-exact"`` compares with the exact OU law (1D affine model with
    zero intercept; Gaussian or Cauchy start). ``reference="fine-grid"`` compares
    with the same scheme at ``n_ref >= 8 max(n_list)`` steps on the same grid, so
    it only measures the time-discretisation error.

    With ``estimate_floor`` the spatial error is estimated from a run at
    ``max(n_list)`` on the twice-refined grid; rows within 10x that floor are
    left out of the rate fit.
    """
    n_list = sorted(int(n) for n in n_list)
    if len(n_list) < 1 or n_list[0] < 1 or len(set(n_list)) != len(n_list):
        raise ConfigError("n_list must hold distinct positive integers", "time.n_list")
    u0 = init_density(u0_spec, grid)
    if reference == "ou-exact":
        b, sigma = _ou_coefficients(model)
        ref = ou_reference(u0_spec, grid, b, sigma, t)
    elif reference == "fine-grid":
        n_ref = 8 * n_list[-1] if n_ref is None else int(n_ref)
        if n_ref < 8 * n_list[-1]:
            raise ConfigError("fine-grid reference needs n_ref >= 8 max(n_list)", "n_ref")
        ref = evolve(u0, model, t, n_ref, mode).final
    else:
        raise ConfigError(f"unknown reference {reference!r}", "reference")

    rows = []
    finals = {}
    for n in n_list:
        start = time.perf_counter()
        res = evolve(u0, model, t, n, mode)
        elapsed = time.perf_counter() - start
        finals[n] = res.final
        rows.append(ConvergenceRow(n, l1_distance(res.final, ref), elapsed, res.final.leaked_mass))

    floor = None
    if estimate_floor:
        fine_grid = grid.refined(2)
        fine = evolve(init_density(u0_spec, fine_grid), model, t, n_list[-1], mode).final
        floor = l1_distance(coarsen(fine, 2), finals[n_list[-1]])

    table = ConvergenceTable(rows, grid_floor=floor, reference=reference, config={
        "model": {"family": model.family.value, "params": list(model.params)},
        "initial": {"kind": type(u0_spec).__name__, **asdict(u0_spec)},
        "grid": {"lower": list(grid.lower), "upper": list(grid.upper), "cells": list(grid.cells)},
        "t": t, "n_list": n_list, "n_ref": n_ref,
        "mode": (mode.value if hasattr(mode, "value") else mode) or "default",
    })
    usable = [r for r in rows if r.error > 0 and (floor is None or r.error > 10.0 * floor)]
    if len(usable) >= 3:
        table.fitted_rate, table.fit_r2 = fit_rate(usable)
    else:
        warnings.warn(f"only {len(usable)} rows above the grid floor; no rate fitted", stacklevel=2)
    return table


# ---------------------------------------------------------------------------
# Monte-Carlo oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class McConfig:
    """Euler-Maruyama path simulation settings; ``seed`` fixes every draw."""

    paths: int
    steps: int
    seed: int = 0
    block: int = 1 << 16

    def __post_init__(self):
        if self.paths < MIN_PATHS:
            raise DomainError(f"Monte-Carlo needs at least {MIN_PATHS} paths")
        if self.steps < 1:
            raise DomainError("steps must be >= 1")


class Sampler:
    """Maps an ``(P, n_uniforms)`` array of uniforms in (0, 1) to ``(P, dim)`` samples."""

    def __init__(self, fn, n_uniforms, dim):
        self.fn = fn
        self.n_uniforms = n_uniforms
        self.dim = dim

    def __call__(self, u):
        return np.asarray(self.fn(u), dtype=float).reshape(u.shape[0], self.dim)


def inverse_cdf_sampler(spec, grid=None, dim=1):
    """Sampler for an initial density.

    Gaussian (``mu + s ndtri(u)``), Cauchy (``x0 + g tan(pi (u - 1/2))``) and
    Uniform use their inverse CDFs per axis. Anything else is sampled from its
    cell-average histogram on ``grid`` (cell by inverse CDF, then uniform
    within the cell), normalised to the mass inside the box.
    """
    if isinstance(spec, Gaussian):
        mu = np.array(_as_tuple(spec.mean, dim))
        sd = np.sqrt(_as_tuple(spec.variance, dim))
        return Sampler(lambda u: mu + sd * ndtri(u), dim, dim)
    if isinstance(spec, Cauchy):
        loc = np.array(_as_tuple(spec.loc, dim))
        sc = np.array(_as_tuple(spec.scale, dim))
        return Sampler(lambda u: loc + sc * np.tan(np.pi * (u - 0.5)), dim, dim)
    if isinstance(spec, Uniform):
        a = np.array(_as_tuple(spec.a, dim))
        b = np.array(_as_tuple(spec.b, dim))
        return Sampler(lambda u: a + (b - a) * u, dim, dim)
    if grid is None:
        raise UnsupportedError(f"sampling {type(spec).__name__} needs a grid")
    dens = init_density(spec, grid)
    cdf = np.cumsum(dens.values.ravel())
    cdf /= cdf[-1]
    dim = grid.dim
    lower = np.array(grid.lower)
    h = grid.spacing

    def draw(u):
        cell = np.minimum(np.searchsorted(cdf, u[:, 0], side="right"), cdf.size - 1)
        idx = np.stack(np.unravel_index(cell, grid.shape), axis=1)
        return lower + (idx + u[:, 1:]) * h

    return Sampler(draw, dim + 1, dim)


def mc_terminal_states(model, u0, t, cfg, grid=None):
    """Yield blocks of terminal EM states ``X_n`` for paths ``0 .. paths-1``."""
    sampler = u0 if isinstance(u0, Sampler) else inverse_cdf_sampler(u0, grid, model.dim)
    key = _loops.seed_key(cfg.seed)
    tau = t / cfg.steps
    sq = math.sqrt(tau)
    m = model.noise_dim
    for start in range(0, cfg.paths, cfg.block):
        count = min(cfg.block, cfg.paths - start)
        uni = np.stack([_loops.uniform_words(key, start, count, INIT_WORD + j)
                        for j in range(sampler.n_uniforms)], axis=1)
        x = sampler(uni)
        z = _loops.normal_block(key, start, count, cfg.steps * m)
        for k in range(cfg.steps):
            db = sq * z[:, k * m:(k + 1) * m]
            s = model.diffusion_grid(x)
            x = x + model.drift_grid(x) * tau + np.einsum("pij,pj->pi", s, db)
        yield x


def mc_density(model, u0, t, cfg, grid):
    """Histogram of ``cfg.paths`` EM paths at time ``t`` as a :class:`GridDensity`.

    Paths are keyed by ``(seed, path index)``, so output does not depend on the
    block size or thread count. Paths ending outside the box count as leaked.
    """
    if model.dim != grid.dim:
        raise DomainError("model and grid dimensions differ")
    counts = np.zeros(grid.size, dtype=np.int64)
    lower = np.array(grid.lower)
    h = grid.spacing
    cells = np.array(grid.cells)
    outside = 0
    for x in mc_terminal_states(model, u0, t, cfg, grid):
        with np.errstate(invalid="ignore"):
            idx = np.floor((x - lower) / h)
        ok = np.all(np.isfinite(idx) & (idx >= 0) & (idx < cells), axis=1)
        outside += int(np.sum(~ok))
        flat = np.ravel_multi_index(tuple(idx[ok].astype(np.int64).T), grid.shape)
        counts += np.bincount(flat, minlength=grid.size)
    values = counts / (cfg.paths * grid.cell_volume)
    return GridDensity(grid, values.reshape(grid.shape), outside / cfg.paths)


# ---------------------------------------------------------------------------
# Weak convergence versus L1 convergence
# ---------------------------------------------------------------------------

@dataclass
class WeakGap:
    n: int
    l1_gap: float
    xis: list
    charfn_gaps: list


def weak_gap_grid(n):
    """Default grid for :func:`weak_gap_demo`: [-0.5, 1.5] with 512 n cells per unit."""
    return GridSpec(-0.5, 1.5, 1024 * n)


def weak_gap_demo(n, grid=None, xis=(1.0, 2 * math.pi, 4 * math.pi)):
    """L1 and characteristic-function gaps between ``1 + sin(2 n pi x)`` and U(0, 1)."""
    grid = weak_gap_grid(n) if grid is None else grid
    if grid.dim != 1:
        raise DomainError("weak_gap_demo is one-dimensional")
    h = float(grid.spacing[0])
    lo, hi = grid.lower[0], grid.upper[0]
    if lo > 0.0 or hi < 1.0:
        raise ResolutionError("grid must contain [0, 1]")
    if 1.0 / h < 512 * n * (1 - 1e-12):
        raise ResolutionError(f"need at least {512 * n} cells per unit length for n={n}")
    for edge in (0.0, 1.0):
        k = (edge - lo) / h
        if abs(k - round(k)) > 1e-6:
            raise ResolutionError("0 and 1 must fall on cell edges")
    vn = init_density(SinePerturbedUniform(n), grid)
    v = init_density(Uniform(0.0, 1.0), grid)
    gaps = [abs(characteristic_function(vn, xi) - characteristic_function(v, xi)) for xi in xis]
    return WeakGap(n, l1_distance(vn, v), [float(x) for x in xis], gaps)


def non_semigroup_gap(u, model, tau, mode=None):
    """L1 distance between two half steps and one full step of size ``tau``."""
    half = Propagator(model, u.spec, 0.5 * tau, mode)
    full = Propagator(model, u.spec, tau, mode)
    twice, _ = half.step(half.step(u)[0])
    once, _ = full.step(u)
    return l1_distance(twice, once)
