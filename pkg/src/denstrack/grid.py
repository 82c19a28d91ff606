"""Densities sampled on uniform rectangular grids (1D and 2D).

Values live at cell centres and are interpreted as cell averages. Mass that
falls outside the box is never renormalised away; it is carried in
``GridDensity.leaked_mass``.
"""
from __future__ import annotations

import csv
import functools
import math
import os
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from .errors import DomainError, FormatError, ShapeError

MIN_CELLS = 8


def _as_tuple(value, dim=None, kind=float):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.ndim != 1:
        raise DomainError(f"expected a scalar or a vector, got shape {arr.shape}")
    if dim is not None and arr.size == 1 and dim > 1:
        arr = np.repeat(arr, dim)
    return tuple(kind(v) for v in arr)


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell-centred grid on the box ``[lower, upper]``.

    Scalars are accepted for 1D grids: ``GridSpec(-8, 8, 2048)``.
    """

    lower: tuple
    upper: tuple
    cells: tuple

    def __post_init__(self):
        lower = _as_tuple(self.lower)
        upper = _as_tuple(self.upper)
        cells_arr = np.atleast_1d(np.asarray(self.cells))
        if cells_arr.ndim != 1 or not np.all(np.equal(np.mod(cells_arr, 1), 0)):
            raise DomainError("cells: must be integers")
        cells = tuple(int(c) for c in cells_arr)
        dim = len(lower)
        if dim not in (1, 2):
            raise DomainError(f"dim: only 1 and 2 are supported, got {dim}")
        if len(upper) != dim or len(cells) != dim:
            raise DomainError("lower, upper and cells must have the same length")
        if not all(math.isfinite(v) for v in lower + upper):
            raise DomainError("lower/upper: must be finite")
        if any(lo >= hi for lo, hi in zip(lower, upper)):
            raise DomainError("lower: must be < upper on every axis")
        if any(c < MIN_CELLS for c in cells):
            raise DomainError(f"cells: need at least {MIN_CELLS} per axis")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "cells", cells)

    @property
    def dim(self):
        return len(self.cells)

    @property
    def shape(self):
        return self.cells

    @property
    def size(self):
        return int(np.prod(self.cells))

    @property
    def spacing(self):
        return np.array([(hi - lo) / n for lo, hi, n in zip(self.lower, self.upper, self.cells)])

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    def axis_edges(self, axis=0):
        return self.lower[axis] + np.arange(self.cells[axis] + 1) * self.spacing[axis]

    def axis_centers(self, axis=0):
        return self.lower[axis] + (np.arange(self.cells[axis]) + 0.5) * self.spacing[axis]

    def centers(self):
        """Cell centres as an ``(size, dim)`` array in row-major order."""
        axes = [self.axis_centers(k) for k in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def refined(self, factor=2):
        return GridSpec(self.lower, self.upper, tuple(c * factor for c in self.cells))


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Nonnegative cell averages on ``spec`` plus the mass lost through the box."""

    spec: GridSpec
    values: np.ndarray
    leaked_mass: float = 0.0

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.size != self.spec.size:
            raise ShapeError(f"expected {self.spec.size} values for the grid, got {values.size}")
        values = values.reshape(self.spec.shape)
        if not np.all(np.isfinite(values)):
            raise DomainError("density values must be finite")
        if np.any(values < 0.0):
            raise DomainError(f"density values must be nonnegative (min {values.min():.3e})")
        leaked = float(self.leaked_mass)
        if not (0.0 <= leaked <= 1.0):
            raise DomainError(f"leaked_mass must lie in [0, 1], got {leaked}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "leaked_mass", leaked)

    @property
    def mass(self):
        return l1_norm(self)

    def replace(self, values=None, leaked_mass=None):
        return GridDensity(
            self.spec,
            self.values if values is None else values,
            self.leaked_mass if leaked_mass is None else leaked_mass,
        )


# ---------------------------------------------------------------------------
# Initial densities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Gaussian:
    """Normal density; in 2D the axes are independent (diagonal covariance)."""

    mean: Union[float, tuple] = 0.0
    variance: Union[float, tuple] = 1.0

    def __post_init__(self):
        if any(v <= 0 for v in _as_tuple(self.variance)):
            raise DomainError("Gaussian variance must be > 0")


@dataclass(frozen=True)
class Cauchy:
    loc: Union[float, tuple] = 0.0
    scale: Union[float, tuple] = 1.0

    def __post_init__(self):
        if any(v <= 0 for v in _as_tuple(self.scale)):
            raise DomainError("Cauchy scale must be > 0")


@dataclass(frozen=True)
class Uniform:
    a: Union[float, tuple] = 0.0
    b: Union[float, tuple] = 1.0

    def __post_init__(self):
        if any(lo >= hi for lo, hi in zip(_as_tuple(self.a), _as_tuple(self.b))):
            raise DomainError("Uniform needs a < b")


@dataclass(frozen=True)
class SinePerturbedUniform:
    """``(1 + sin(2 n pi x))`` on ``[0, 1]``; 1D only."""

    n: int = 1

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError("SinePerturbedUniform needs an integer n >= 1")


@dataclass(frozen=True)
class Bump:
    """Smooth compactly supported profile ``exp(-1/(1-r^2))``, normalised.

    Supported on ``center +- halfwidth`` (a box in 2D, product form).
    """

    center: Union[float, tuple] = 0.0
    halfwidth: Union[float, tuple] = 1.0

    def __post_init__(self):
        if any(w <= 0 for w in _as_tuple(self.halfwidth)):
            raise DomainError("Bump halfwidth must be > 0")


@dataclass(frozen=True)
class FromFile:
    path: Union[str, os.PathLike] = field(default="")


InitialDensitySpec = Union[Gaussian, Cauchy, Uniform, SinePerturbedUniform, Bump, FromFile]


def normal_interval(z0, z1):
    """P(z0 < Z < z1) for standard normal Z, accurate in both tails."""
    z0 = np.asarray(z0, dtype=float)
    z1 = np.asarray(z1, dtype=float)
    left = ndtr(z1) - ndtr(z0)
    right = ndtr(-z0) - ndtr(-z1)
    mid = 1.0 - ndtr(z0) - ndtr(-z1)
    return np.maximum(np.where(z1 <= 0, left, np.where(z0 >= 0, right, mid)), 0.0)


def _cauchy_tail_below(z):
    # P(C < z) = 1/2 + atan(z)/pi, rewritten to avoid cancellation for z << 0
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(z < 0, np.arctan(-1.0 / z) / np.pi, 0.5 + np.arctan(z) / np.pi)


def _cauchy_interval(z0, z1):
    left = _cauchy_tail_below(z1) - _cauchy_tail_below(z0)
    right = _cauchy_tail_below(-z0) - _cauchy_tail_below(-z1)
    return np.maximum(np.where(z1 <= 0, left, right), 0.0)


def _product_masses(axis_masses, axis_inside):
    """Outer product of per-axis cell masses; second value is the mass outside the box."""
    masses = axis_masses[0]
    for m in axis_masses[1:]:
        masses = np.multiply.outer(masses, m)
    inside = 1.0
    for c in axis_inside:
        inside *= c
    return masses, 1.0 - inside


def gaussian_cell_masses(grid, mean, variance):
    """Exact Gaussian (diagonal covariance) mass per cell and the mass outside the box."""
    means = _as_tuple(mean, grid.dim)
    stds = [math.sqrt(v) for v in _as_tuple(variance, grid.dim)]
    masses, inside = [], []
    for k in range(grid.dim):
        z = (grid.axis_edges(k) - means[k]) / stds[k]
        masses.append(normal_interval(z[:-1], z[1:]))
        inside.append(1.0 - float(ndtr(z[0]) + ndtr(-z[-1])))
    return _product_masses(masses, inside)


def _cauchy_cell_masses(grid, loc, scale):
    locs = _as_tuple(loc, grid.dim)
    scales = _as_tuple(scale, grid.dim)
    masses, inside = [], []
    for k in range(grid.dim):
        z = (grid.axis_edges(k) - locs[k]) / scales[k]
        masses.append(_cauchy_interval(z[:-1], z[1:]))
        tail = float(_cauchy_tail_below(z[0]) + _cauchy_tail_below(-z[-1]))
        inside.append(1.0 - tail)
    masses, leaked = _product_masses(masses, inside)
    return masses, leaked


def _uniform_cell_masses(grid, a, b):
    lo = _as_tuple(a, grid.dim)
    hi = _as_tuple(b, grid.dim)
    masses, inside = [], []
    for k in range(grid.dim):
        e = grid.axis_edges(k)
        overlap = np.clip(np.minimum(e[1:], hi[k]) - np.maximum(e[:-1], lo[k]), 0.0, None)
        masses.append(overlap / (hi[k] - lo[k]))
        covered = max(0.0, min(hi[k], grid.upper[k]) - max(lo[k], grid.lower[k]))
        inside.append(covered / (hi[k] - lo[k]))
    return _product_masses(masses, inside)


@functools.lru_cache(maxsize=None)
def _bump_integral():
    val, _ = integrate.quad(lambda r: math.exp(-1.0 / (1.0 - r * r)), -1.0, 1.0,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return val


def bump_profile(x, center, halfwidth):
    """Normalised 1D bump evaluated pointwise."""
    r = (np.asarray(x, dtype=float) - center) / halfwidth
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out / (_bump_integral() * halfwidth)


def _leak_from_sum(values, grid):
    return float(min(1.0, max(0.0, 1.0 - np.sum(values) * grid.cell_volume)))


def init_density(spec, grid):
    """Build the initial :class:`GridDensity` for ``spec`` on ``grid``.

    Gaussian, Cauchy and Uniform cells are exact averages (CDF differences);
    the sine-perturbed and bump profiles are sampled at cell midpoints.
    """
    vol = grid.cell_volume
    if isinstance(spec, Gaussian):
        masses, leaked = gaussian_cell_masses(grid, spec.mean, spec.variance)
        return GridDensity(grid, masses / vol, leaked)
    if isinstance(spec, Cauchy):
        masses, leaked = _cauchy_cell_masses(grid, spec.loc, spec.scale)
        return GridDensity(grid, masses / vol, leaked)
    if isinstance(spec, Uniform):
        masses, leaked = _uniform_cell_masses(grid, spec.a, spec.b)
        return GridDensity(grid, masses / vol, leaked)
    if isinstance(spec, SinePerturbedUniform):
        if grid.dim != 1:
            raise DomainError("SinePerturbedUniform is one-dimensional")
        x = grid.axis_centers(0)
        inside = (x >= 0.0) & (x <= 1.0)
        values = np.where(inside, 1.0 + np.sin(2.0 * spec.n * np.pi * x), 0.0)
        values = np.maximum(values, 0.0)
        return GridDensity(grid, values, _leak_from_sum(values, grid))
    if isinstance(spec, Bump):
        centers = _as_tuple(spec.center, grid.dim)
        widths = _as_tuple(spec.halfwidth, grid.dim)
        values = bump_profile(grid.axis_centers(0), centers[0], widths[0])
        for k in range(1, grid.dim):
            values = np.multiply.outer(values, bump_profile(grid.axis_centers(k), centers[k], widths[k]))
        return GridDensity(grid, values, _leak_from_sum(values, grid))
    if isinstance(spec, FromFile):
        values = read_density_csv(spec.path, grid)
        return GridDensity(grid, values, _leak_from_sum(values, grid))
    raise DomainError(f"unknown initial density {spec!r}")


# ---------------------------------------------------------------------------
# Norms, moments, transforms
# ---------------------------------------------------------------------------

def _values(u):
    return u.values if isinstance(u, GridDensity) else np.asarray(u)


def l1_norm(u):
    """Sum of |values| times the cell volume."""
    return float(np.sum(np.abs(u.values)) * u.spec.cell_volume)


def l1_distance(u, v):
    if u.spec != v.spec:
        raise ShapeError("l1_distance needs densities on the same grid")
    return float(np.sum(np.abs(u.values - v.values)) * u.spec.cell_volume)


def moment(u, k):
    """Raw moment of order ``k`` (0..4); per axis in 2D."""
    if int(k) != k or not 0 <= k <= 4:
        raise DomainError("moment order must be an integer in [0, 4]")
    spec = u.spec
    if spec.dim == 1:
        x = spec.axis_centers(0)
        return float(np.sum(x ** k * u.values) * spec.cell_volume)
    out = np.empty(spec.dim)
    for axis in range(spec.dim):
        x = spec.axis_centers(axis)
        marginal = u.values.sum(axis=1 - axis)
        out[axis] = np.sum(x ** k * marginal) * spec.cell_volume
    return out


def characteristic_function(u, xi):
    """sum exp(i xi . x) u(x) dV over the cells."""
    spec = u.spec
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if xi.size != spec.dim:
        raise ShapeError(f"xi must have {spec.dim} components")
    phase = spec.centers() @ xi
    return complex(np.sum(np.exp(1j * phase) * u.values.ravel()) * spec.cell_volume)


def coarsen(u, factor=2):
    """Average ``factor**dim`` blocks of a density on a refined grid."""
    spec = u.spec
    if any(c % factor for c in spec.cells):
        raise ShapeError("cell counts must be divisible by the coarsening factor")
    coarse = GridSpec(spec.lower, spec.upper, tuple(c // factor for c in spec.cells))
    v = u.values
    if spec.dim == 1:
        v = v.reshape(-1, factor).mean(axis=1)
    else:
        v = v.reshape(coarse.cells[0], factor, coarse.cells[1], factor).mean(axis=(1, 3))
    return GridDensity(coarse, v, u.leaked_mass)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

_AXIS_NAMES = ("x", "y")


def write_density_csv(path, u):
    """One record per cell, ``x[,y],value``, row-major, with a header line."""
    spec = u.spec
    pts = spec.centers()
    vals = np.asarray(u.values if isinstance(u, GridDensity) else u).ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(_AXIS_NAMES[:spec.dim]) + ["value"])
        for p, v in zip(pts, vals):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v))])


def read_density_csv(path, grid):
    """Read cell values written by :func:`write_density_csv` for ``grid``."""
    expected_header = list(_AXIS_NAMES[:grid.dim]) + ["value"]
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != expected_header:
        raise FormatError(f"{path}: header must be {','.join(expected_header)}")
    body = [r for r in rows[1:] if r]
    if len(body) != grid.size:
        raise FormatError(f"{path}: expected {grid.size} records, found {len(body)}")
    try:
        data = np.array([[float(c) for c in r] for r in body])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric field ({exc})") from None
    if data.shape[1] != grid.dim + 1:
        raise FormatError(f"{path}: expected {grid.dim + 1} columns")
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: NaN or infinite entries are not allowed")
    tol = 1e-6 * float(grid.spacing.min())
    if np.max(np.abs(data[:, :grid.dim] - grid.centers())) > tol:
        raise FormatError(f"{path}: coordinates do not match the grid cell centres")
    values = data[:, grid.dim]
    if np.any(values < 0):
        raise FormatError(f"{path}: negative density values")
    return values.reshape(grid.shape)
