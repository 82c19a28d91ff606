"""Path-integration steps on grid densities.

One step maps cell values ``u`` to ``(P u)(y) = int k(y, x, tau) u(x) dx`` with
the Euler-Maruyama Gaussian kernel ``k``. Two discretisations are offered:

``StepMode.CDF``
    1D only. The mass of each source cell is treated as a point mass at the
    cell centre and split over target cells with exact Gaussian CDF
    differences, so nothing is gained or lost except through the box edges
    (recorded as leakage). Works for kernels narrower than a cell.
``StepMode.QUADRATURE``
    Midpoint rule in the source variable, kernel evaluated at target centres.
    Needs ``sqrt(alpha tau) >= 2 h``; conserves mass up to quadrature error.
"""
from __future__ import annotations

import enum
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _loops
from .errors import DomainError, EllipticityError, NumericalError
from .grid import GridDensity

# Half-width, in standard deviations, of the target window per source cell.
WINDOW_SIGMAS = 8.0


class StepMode(enum.Enum):
    CDF = "cdf"
    QUADRATURE = "quadrature"

    @classmethod
    def default_for(cls, dim):
        return cls.CDF if dim == 1 else cls.QUADRATURE


class StiffStepWarning(UserWarning):
    """``x -> x + b(x) tau`` is not increasing on the grid (for OU: ``1 + b tau <= 0``)."""


class NarrowKernelWarning(UserWarning):
    """Kernel width below two cells in quadrature mode."""


@dataclass(frozen=True)
class StepReport:
    tau: float
    mass_in: float
    mass_out: float
    leakage_this_step: float
    min_value: float
    truncated: float = 0.0
    step: int = 0


@dataclass
class EvolveResult:
    final: GridDensity
    snapshots: list = field(default_factory=list)
    reports: list = field(default_factory=list)

    @property
    def total_leakage(self):
        return float(sum(r.leakage_this_step for r in self.reports))


def _resolve_mode(mode, dim):
    if mode is None:
        return StepMode.default_for(dim)
    mode = StepMode(mode) if not isinstance(mode, StepMode) else mode
    if mode is StepMode.CDF and dim != 1:
        raise DomainError("CDF redistribution is one-dimensional; use quadrature in 2D")
    return mode


class Propagator:
    """The discrete one-step operator for a fixed (model, grid, tau, mode).

    Coefficients are evaluated once at construction; :meth:`apply` can then be
    called repeatedly and accepts signed values (the operator is linear).
    """

    def __init__(self, model, grid, tau, mode=None):
        if not tau > 0:
            raise DomainError("tau must be > 0")
        if model.dim != grid.dim:
            raise DomainError(f"model is {model.dim}D but the grid is {grid.dim}D")
        self.model = model
        self.grid = grid
        self.tau = float(tau)
        self.mode = _resolve_mode(mode, grid.dim)

        pts = grid.centers()
        a = model.a_grid(pts)
        lam, vec = np.linalg.eigh(a)
        if not np.all(lam > 0.0):
            bad = pts[np.argmin(lam.min(axis=1))]
            raise EllipticityError(f"diffusion matrix is singular at x={bad}")
        self.means = pts + model.drift_grid(pts) * self.tau
        self._check_stiffness()

        if grid.dim == 1:
            self.stds = np.sqrt(self.tau * lam[:, 0])
        else:
            # symmetric inverse square root of tau a(x), (w00, w01, w11)
            inv_sqrt = np.einsum("pik,pk,pjk->pij", vec, 1.0 / np.sqrt(self.tau * lam), vec)
            self.inv_sqrt = np.stack([inv_sqrt[:, 0, 0], inv_sqrt[:, 0, 1], inv_sqrt[:, 1, 1]], axis=1)
            self.norm = 1.0 / (2.0 * np.pi * self.tau * np.sqrt(np.prod(lam, axis=1)))
        if self.mode is StepMode.QUADRATURE:
            width = float(np.sqrt(self.tau * lam.min()))
            if width < 2.0 * float(grid.spacing.max()):
                warnings.warn(
                    f"kernel width {width:.3g} is below two cells ({grid.spacing.max():.3g}); "
                    "quadrature loses accuracy and mass", NarrowKernelWarning, stacklevel=3)
        self._targets = pts

    def _check_stiffness(self):
        g = self.grid
        if g.dim == 1:
            if np.any(np.diff(self.means[:, 0]) <= 0.0):
                warnings.warn(f"drift map x + b(x) tau is not increasing at tau={self.tau:.3g}",
                              StiffStepWarning, stacklevel=4)
            return
        mx = self.means.reshape(g.cells + (2,))
        if np.any(np.diff(mx[..., 0], axis=0) <= 0) or np.any(np.diff(mx[..., 1], axis=1) <= 0):
            warnings.warn(f"drift map x + b(x) tau is not increasing at tau={self.tau:.3g}",
                          StiffStepWarning, stacklevel=4)

    def apply(self, values):
        """Apply the operator to cell values. Returns ``(new_values, leak, truncated)``."""
        g = self.grid
        vol = g.cell_volume
        flat = np.ascontiguousarray(np.asarray(values, dtype=np.float64).ravel())
        if self.mode is StepMode.CDF:
            masses, leak, trunc = _loops.cdf_scatter(
                flat * vol, self.means[:, 0], self.stds, float(g.lower[0]), float(g.spacing[0]),
                g.cells[0], WINDOW_SIGMAS)
            return masses / vol, float(leak), float(trunc)
        src = np.flatnonzero(flat)
        if g.dim == 1:
            out = _loops.quad_gather_1d(flat[src] * vol, self.means[src, 0], self.stds[src],
                                        self._targets[:, 0].copy())
        else:
            out = _loops.quad_gather_2d(flat[src] * vol * self.norm[src],
                                        np.ascontiguousarray(self.means[src]),
                                        np.ascontiguousarray(self.inv_sqrt[src]), self._targets)
        mass_in = float(np.sum(flat) * vol)
        mass_out = float(np.sum(out) * vol)
        return out.reshape(g.shape), max(mass_in - mass_out, 0.0), 0.0

    def step(self, u, index=0):
        if u.spec != self.grid:
            raise DomainError("density grid does not match the propagator grid")
        vals, leak, trunc = self.apply(u.values)
        vals = vals.reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise NumericalError(
                f"non-finite values after step {index} (tau={self.tau:.6g}): "
                f"{int(np.sum(~np.isfinite(vals)))} bad cells; input mass {u.mass:.6g}, "
                f"input range [{u.values.min():.3g}, {u.values.max():.3g}]")
        vals = np.maximum(vals, 0.0)
        mass_in = u.mass
        out = GridDensity(self.grid, vals, min(1.0, u.leaked_mass + leak))
        report = StepReport(self.tau, mass_in, out.mass, leak, float(vals.min()), trunc, index)
        return out, report


def step(u, model, tau, mode=None):
    """One application of the discrete path-integration operator."""
    return Propagator(model, u.spec, tau, mode).step(u, 1)


def evolve(u0, model, t, n, mode=None, snapshot_every=0):
    """Apply ``n`` steps of size ``t / n``; snapshots every ``snapshot_every`` steps."""
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    if not t > 0:
        raise DomainError("t must be > 0")
    n = int(n)
    prop = Propagator(model, u0.spec, t / n, mode)
    u = u0
    result = EvolveResult(u0)
    for k in range(1, n + 1):
        u, report = prop.step(u, k)
        result.reports.append(report)
        if snapshot_every and k % snapshot_every == 0:
            result.snapshots.append((k * prop.tau, u))
    result.final = u
    return result


# ---------------------------------------------------------------------------
# Generator and consistency
# ---------------------------------------------------------------------------

def _second_difference(f, h, axis):
    f = np.moveaxis(f, axis, 0)
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / h ** 2
    out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h ** 2
    out[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / h ** 2
    return np.moveaxis(out, 0, axis)


def apply_fpk(u, model):
    """Finite-difference forward operator ``-div(b u) + 1/2 sum d_i d_j (a_ij u)``.

    Differences act on the products ``b_i u`` and ``a_ij u`` (central inside,
    one-sided second order at the edges). Returns a signed array.
    """
    g = u.spec
    if any(c < 4 for c in g.cells):
        raise DomainError("apply_fpk needs at least 4 cells per axis")
    pts = g.centers()
    vals = u.values.ravel() if isinstance(u, GridDensity) else np.asarray(u).ravel()
    b = model.drift_grid(pts)
    a = model.a_grid(pts)
    h = g.spacing
    shape = g.shape
    out = np.zeros(shape)
    for i in range(g.dim):
        flux = (b[:, i] * vals).reshape(shape)
        out -= np.gradient(flux, h[i], axis=i, edge_order=2)
    for i in range(g.dim):
        for j in range(g.dim):
            prod = (a[:, i, j] * vals).reshape(shape)
            if i == j:
                out += 0.5 * _second_difference(prod, h[i], i)
            else:
                inner = np.gradient(prod, h[j], axis=j, edge_order=2)
                out += 0.5 * np.gradient(inner, h[i], axis=i, edge_order=2)
    return out


def consistency_residual(u, model, tau, mode=None):
    """L1 norm of ``(P u - u) / tau - A u``.

    ``u`` should be smooth with support well inside the box, and the grid fine
    enough that the O(h^2) differencing error is far below ``tau^2``.
    """
    stepped, _ = step(u, model, tau, mode)
    resid = (stepped.values - u.values) / tau - apply_fpk(u, model)
    return float(np.sum(np.abs(resid)) * u.spec.cell_volume)


def timed_evolve(u0, model, t, n, mode=None):
    start = time.perf_counter()
    res = evolve(u0, model, t, n, mode)
    return res, time.perf_counter() - start
