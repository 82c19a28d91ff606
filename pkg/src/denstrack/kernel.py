"""One-step Euler-Maruyama Gaussian kernel and Ornstein-Uhlenbeck closed forms.

The OU process here is ``dY = b Y dt + sigma dB`` in one dimension.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EllipticityError, PreconditionError, UnsupportedError
from .grid import Gaussian, _as_tuple
from .model import _point

# Below this |b| * time the closed forms divide by ~0; use the series instead.
SMALL_RATE = 1e-8


@dataclass(frozen=True, eq=False)
class KernelParams:
    mean: np.ndarray
    covariance: np.ndarray
    tau: float
    source: np.ndarray

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        lam, vec = np.linalg.eigh(cov)
        if lam.min() <= 0.0:
            raise EllipticityError("kernel covariance is not positive definite")
        # symmetric inverse square root, factored once per source point
        object.__setattr__(self, "_inv_sqrt", (vec / np.sqrt(lam)) @ vec.T)
        object.__setattr__(self, "_log_det", float(np.sum(np.log(lam))))

    @property
    def dim(self):
        return self.mean.shape[0]


def em_kernel_params(model, x, tau):
    """Mean ``x + b(x) tau`` and covariance ``tau a(x)`` of one EM step from ``x``."""
    if not tau > 0:
        raise DomainError("tau must be > 0")
    pts = _point(model, x)
    mean = pts[0] + model.drift_grid(pts)[0] * tau
    cov = tau * model.a_grid(pts)[0]
    if np.linalg.eigvalsh(cov).min() <= 0.0:
        raise EllipticityError(f"a(x) is singular at x={pts[0]}")
    return KernelParams(mean, cov, float(tau), pts[0])


def em_kernel_eval(p, y):
    """Gaussian density of the one-step kernel at ``y`` (a point or ``(M, d)`` points)."""
    y = np.asarray(y, dtype=float)
    single = y.ndim == 0 or (y.ndim == 1 and (p.dim > 1 or y.size == 1))
    z = (y.reshape(-1, p.dim) - p.mean) @ p._inv_sqrt
    log_norm = -0.5 * (p.dim * math.log(2 * math.pi) + p._log_det)
    out = np.exp(log_norm - 0.5 * np.sum(z * z, axis=1))
    return float(out[0]) if single else out


def em_kernel_charfn(model, x, tau, xi):
    """Fourier transform in ``y`` of the kernel: exp(i xi.mean - xi^T cov xi / 2)."""
    p = em_kernel_params(model, x, tau)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if xi.shape != (p.dim,):
        raise DomainError(f"xi must have {p.dim} components")
    return complex(np.exp(1j * xi @ p.mean - 0.5 * xi @ p.covariance @ xi))


# ---------------------------------------------------------------------------
# Ornstein-Uhlenbeck
# ---------------------------------------------------------------------------

def _check_sigma(sigma):
    if sigma == 0 or not math.isfinite(sigma):
        raise DomainError("sigma must be finite and non-zero")


def ou_variance(b, sigma, t):
    """(sigma^2 / 2b)(e^{2bt} - 1), with the Brownian limit near b = 0."""
    if abs(b) * t < SMALL_RATE:
        return sigma * sigma * t * (1.0 + b * t)
    return sigma * sigma * math.expm1(2.0 * b * t) / (2.0 * b)


@dataclass(frozen=True)
class OuExact:
    b: float
    sigma: float
    t: float
    mean_factor: float
    variance: float


def ou_exact(b, sigma, t):
    if not t > 0:
        raise DomainError("t must be > 0")
    _check_sigma(sigma)
    return OuExact(b, sigma, t, math.exp(b * t), ou_variance(b, sigma, t))


def _normal_pdf(y, mean, var):
    y = np.asarray(y, dtype=float)
    out = np.exp(-0.5 * (y - mean) ** 2 / var) / math.sqrt(2 * math.pi * var)
    return float(out) if out.ndim == 0 else out


def ou_exact_kernel(b, sigma, t, x, y):
    """Exact OU transition density from ``x`` to ``y`` over time ``t``."""
    law = ou_exact(b, sigma, t)
    return _normal_pdf(y, x * law.mean_factor, law.variance)


@dataclass(frozen=True)
class OuIterated:
    """Law of ``n`` EM steps: ``X_n = alpha_n X_0 + N(0, beta_n_sq / 2)``."""

    alpha_n: float
    beta_n_sq: float
    steps: int
    tau: float


def ou_iterated_params(b, sigma, t, n):
    """Closed-form scale and spread of ``n`` EM steps of size ``t / n``.

    Requires ``n > |b| t``.
    """
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    if not t > 0:
        raise DomainError("t must be > 0")
    _check_sigma(sigma)
    n = int(n)
    if not n > abs(b) * t:
        raise PreconditionError(f"need n > |b| t (n={n}, |b|t={abs(b) * t})")
    tau = t / n
    bt = b * tau
    log_growth = math.log1p(bt)
    alpha_n = math.exp(n * log_growth)
    if abs(bt) < SMALL_RATE:
        # 2 sigma^2 tau sum_k (1 + b tau)^{2k}, to first order in b tau
        beta_n_sq = 2.0 * sigma * sigma * tau * n * (1.0 + bt * (n - 1))
    else:
        beta_n_sq = (sigma * sigma / b) * 2.0 * math.expm1(2 * n * log_growth) / (2.0 + bt)
    return OuIterated(alpha_n, beta_n_sq, n, tau)


def _as_gaussian(u0):
    if not isinstance(u0, Gaussian):
        raise UnsupportedError("closed-form OU laws need a Gaussian initial density")
    mean = _as_tuple(u0.mean)
    var = _as_tuple(u0.variance)
    if len(mean) != 1 or len(var) != 1:
        raise UnsupportedError("closed-form OU laws are one-dimensional")
    return mean[0], var[0]


def ou_iterated_law(p, u0):
    """(mean, variance) of ``n`` EM steps applied to a Gaussian initial law."""
    mu0, var0 = _as_gaussian(u0)
    return p.alpha_n * mu0, p.alpha_n ** 2 * var0 + 0.5 * p.beta_n_sq


def ou_iterated_density(p, u0, y):
    mean, var = ou_iterated_law(p, u0)
    return _normal_pdf(y, mean, var)


def ou_exact_law(b, sigma, t, u0):
    """(mean, variance) of the exact OU pushforward of a Gaussian initial law."""
    mu0, var0 = _as_gaussian(u0)
    law = ou_exact(b, sigma, t)
    return law.mean_factor * mu0, law.mean_factor ** 2 * var0 + law.variance


def ou_exact_density(b, sigma, t, u0, y):
    mean, var = ou_exact_law(b, sigma, t, u0)
    return _normal_pdf(y, mean, var)


def ou_two_step_params(b, sigma, tau):
    """Scale and variance of the OU kernels of two steps ``tau`` versus one step ``2 tau``.

    Returns ``((scale_2, var_2), (scale_1, var_1))``; the pairs differ whenever
    ``b != 0``, so the one-step operators do not compose to a semigroup.
    """
    two = ((1.0 + b * tau) ** 2, 2.0 * tau * sigma ** 2 * (1.0 + b * tau + 0.5 * (b * tau) ** 2))
    one = (1.0 + 2.0 * b * tau, 2.0 * tau * sigma ** 2)
    return two, one

