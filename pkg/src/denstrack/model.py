"""SDE coefficient models ``dY = b(Y) dt + sigma(Y) dB``.

Coefficient callables are vectorised: ``drift`` maps an ``(M, d)`` array of
points to ``(M, d)``, ``diffusion`` maps it to ``(M, d, m)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, EllipticityError


class Family(enum.Enum):
    AFFINE = "affine"
    SINE_DIFFUSION = "sine-diffusion"
    CUSTOM = "custom"


@dataclass(frozen=True, eq=False)
class SdeModel:
    dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    family: Family = Family.CUSTOM
    params: tuple = ()
    noise_dim: int = 0
    name: str = ""
    linear_drift: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise DomainError("model dim must be a positive integer")
        if self.noise_dim == 0:
            object.__setattr__(self, "noise_dim", self.dim)

    def _points(self, x):
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and x.ndim <= 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise DomainError(f"points must have shape (M, {self.dim})")
        if not np.all(np.isfinite(x)):
            raise DomainError("coefficients evaluated at a non-finite point")
        return x

    def drift_grid(self, x):
        pts = self._points(x)
        return np.asarray(self.drift(pts), dtype=float).reshape(len(pts), self.dim)

    def diffusion_grid(self, x):
        pts = self._points(x)
        out = np.asarray(self.diffusion(pts), dtype=float)
        return out.reshape(len(pts), self.dim, -1)

    def a_grid(self, x):
        """a = sigma sigma^T at each point, shape ``(M, d, d)``."""
        s = self.diffusion_grid(x)
        a = np.einsum("pik,pjk->pij", s, s)
        return 0.5 * (a + np.swapaxes(a, 1, 2))


def _affine_parts(dim, c0, c1, s):
    c0 = np.broadcast_to(np.asarray(c0, dtype=float), (dim,)).copy()
    c1 = np.asarray(c1, dtype=float)
    c1 = c1 * np.eye(dim) if c1.ndim == 0 else c1.reshape(dim, dim)
    s = np.asarray(s, dtype=float)
    s = s * np.eye(dim) if s.ndim == 0 else s.reshape(dim, -1)
    return c0, c1, s


def affine(c0=0.0, c1=-1.0, s=1.0, *, dim=1, allow_degenerate=False):
    """Drift ``c0 + c1 x`` and constant diffusion ``s``.

    In ``dim > 1``, ``c0`` is a vector, ``c1`` a matrix and ``s`` a ``d x m``
    matrix (scalars are broadcast to multiples of the identity).
    ``allow_degenerate`` admits a zero diffusion; only the Monte-Carlo
    simulator can use such a model.
    """
    c0v, c1m, sm = _affine_parts(dim, c0, c1, s)
    if not allow_degenerate:
        amin = float(np.linalg.eigvalsh(sm @ sm.T).min())
        if amin <= 0.0:
            raise EllipticityError("affine diffusion must be non-singular")

    def drift(x):
        return c0v + x @ c1m.T

    def diffusion(x):
        return np.broadcast_to(sm, (x.shape[0],) + sm.shape)

    params = tuple(np.concatenate([c0v, c1m.ravel(), sm.ravel()]))
    return SdeModel(dim, drift, diffusion, Family.AFFINE, params, sm.shape[1],
                    name="affine", linear_drift=c1m)


def sine_diffusion(c0=0.0, c1=-1.0, s0=1.0, s1=0.5):
    """1D model with drift ``c0 + c1 x`` and diffusion ``s0 + s1 sin x``, ``|s1| < s0``."""
    if not abs(s1) < s0:
        raise EllipticityError("sine-diffusion needs |s1| < s0")

    def drift(x):
        return c0 + c1 * x

    def diffusion(x):
        return (s0 + s1 * np.sin(x))[:, :, None]

    return SdeModel(1, drift, diffusion, Family.SINE_DIFFUSION, (c0, c1, s0, s1), 1,
                    name="sine-diffusion", linear_drift=np.array([[c1]]))


_REGISTRY: dict[str, SdeModel] = {}


def register_model(name, drift, diffusion, dim=1, noise_dim=0):
    """Register vectorised coefficient callables under ``name``."""
    model = SdeModel(dim, drift, diffusion, Family.CUSTOM, (), noise_dim, name=name)
    _REGISTRY[name] = model
    return model


def get_model(name):
    try:
        return _REGISTRY[name]
    except KeyError:
        raise DomainError(f"no custom model registered as {name!r}") from None


def model_from_config(family, params, dim=1):
    """Build a built-in family from its name and flat parameter list.

    ``affine``: 1D ``[c0, c1, s]``; in 2D ``c0 (2), c1 (2x2), s (2x2)`` flattened.
    ``sine-diffusion``: ``[c0, c1, s0, s1]``.
    """
    params = [float(p) for p in params]
    if family == Family.AFFINE.value:
        if dim == 1:
            if len(params) != 3:
                raise DomainError("affine params are [c0, c1, s]")
            return affine(*params)
        if len(params) != dim + 2 * dim * dim:
            raise DomainError(f"affine params in {dim}D need {dim + 2 * dim * dim} numbers")
        c0 = params[:dim]
        c1 = params[dim:dim + dim * dim]
        s = params[dim + dim * dim:]
        return affine(c0, c1, s, dim=dim)
    if family == Family.SINE_DIFFUSION.value:
        if dim != 1:
            raise DomainError("sine-diffusion is one-dimensional")
        if len(params) != 4:
            raise DomainError("sine-diffusion params are [c0, c1, s0, s1]")
        return sine_diffusion(*params)
    raise DomainError(f"unknown model family {family!r}")


# ---------------------------------------------------------------------------
# Pointwise evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiffusionMatrix:
    a: np.ndarray

    @property
    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(self.a).min())


def _point(model, x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (model.dim,):
        raise DomainError(f"point must have {model.dim} components")
    if not np.all(np.isfinite(x)):
        raise DomainError("point must be finite")
    return x[None, :]


def drift_at(model, x):
    return model.drift_grid(_point(model, x))[0]


def diffusion_matrix_at(model, x):
    return DiffusionMatrix(model.a_grid(_point(model, x))[0])


# ---------------------------------------------------------------------------
# Assumption checks on a sampled box
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AssumptionReport:
    lipschitz_bound_estimate: float
    ellipticity_floor_estimate: float
    sample_count: int
    pass_c1: bool
    pass_c2: bool
    region: tuple = ()


def check_assumptions(model, region, samples):
    """Sample the Lipschitz bound of ``b``, ``sigma`` and the ellipticity floor of ``a``.

    ``region`` is ``(lower, upper)``; ``samples`` points per axis. Derivatives
    are central differences with step ``width / (samples - 1)``, so the result
    only speaks for the sampled box.
    """
    if samples < 2:
        raise DomainError("need at least 2 samples per axis")
    lower = np.broadcast_to(np.asarray(region[0], dtype=float), (model.dim,))
    upper = np.broadcast_to(np.asarray(region[1], dtype=float), (model.dim,))
    width = upper - lower
    if np.any(~np.isfinite(width)) or np.any(width <= 0):
        raise DomainError("region has zero volume")
    axes = [np.linspace(lower[k], upper[k], samples) for k in range(model.dim)]
    pts = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    steps = width / (samples - 1)

    k_hat = 0.0
    for k in range(model.dim):
        e = np.zeros(model.dim)
        e[k] = steps[k]
        db = (model.drift_grid(pts + e) - model.drift_grid(pts - e)) / (2 * steps[k])
        ds = (model.diffusion_grid(pts + e) - model.diffusion_grid(pts - e)) / (2 * steps[k])
        # Lipschitz quotient |d_k sigma_ij| + |d_k b_i| for every i, j, k
        total = np.abs(ds) + np.abs(db)[:, :, None]
        k_hat = max(k_hat, float(np.max(total)))

    alpha_hat = float(np.linalg.eigvalsh(model.a_grid(pts)).min())
    if abs(alpha_hat) < 1e-300:
        alpha_hat = 0.0
    return AssumptionReport(
        lipschitz_bound_estimate=k_hat,
        ellipticity_floor_estimate=alpha_hat,
        sample_count=int(len(pts)),
        pass_c1=math.isfinite(k_hat),
        pass_c2=alpha_hat > 0.0,
        region=(tuple(lower), tuple(upper)),
    )
