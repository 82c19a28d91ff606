"""Hot inner loops, each in a numba flavour and a vectorised numpy flavour.

The public names at the bottom (``cdf_scatter``, ``quad_gather_1d``, ...) are
bound to one flavour according to :mod:`denstrack._accel`. Both flavours are
importable under their private names so tests and the benchmark can compare
them directly.

All kernels work on plain arrays; model evaluation happens upstream.
"""
import math

import numpy as np
from scipy.special import ndtr

from ._accel import HAVE_NUMBA, USE_NUMBA, njit

if HAVE_NUMBA:
    from numba import prange
else:  # pragma: no cover
    prange = range

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_INV_SQRT2 = 1.0 / math.sqrt(2.0)

# Elements per temporary block in the numpy flavours.
_BLOCK = 1 << 22


# ---------------------------------------------------------------------------
# Gaussian mass redistribution (1D)
# ---------------------------------------------------------------------------

def _window_bounds(mu, s, lower, h, ncell, window):
    jlo = np.floor((mu - window * s - lower) / h)
    jhi = np.ceil((mu + window * s - lower) / h)
    jlo = np.clip(jlo, 0, ncell).astype(np.int64)
    jhi = np.clip(jhi, 0, ncell).astype(np.int64)
    return jlo, jhi


def _gauss_interval_np(z0, z1):
    # P(z0 < Z < z1) using whichever tail keeps precision.
    left = ndtr(z1) - ndtr(z0)
    right = ndtr(-z0) - ndtr(-z1)
    mid = 1.0 - ndtr(z0) - ndtr(-z1)
    out = np.where(z1 <= 0.0, left, np.where(z0 >= 0.0, right, mid))
    return np.maximum(out, 0.0)


def _cdf_scatter_np(mass, mu, s, lower, h, ncell, window=8.0):
    mass = np.asarray(mass, dtype=np.float64)
    upper = lower + ncell * h
    out = np.zeros(ncell)
    active = np.flatnonzero(mass != 0.0)
    if active.size == 0:
        return out, 0.0, 0.0
    m, mu, s = mass[active], mu[active], s[active]
    leak_frac = ndtr((lower - mu) / s) + ndtr((mu - upper) / s)
    jlo, jhi = _window_bounds(mu, s, lower, h, ncell, window)
    width = jhi - jlo
    wmax = int(width.max())
    captured = np.zeros(active.size)
    if wmax > 0:
        k = np.arange(wmax + 1)
        rows = max(1, _BLOCK // (wmax + 1))
        for start in range(0, active.size, rows):
            sl = slice(start, start + rows)
            idx = jlo[sl, None] + k
            z = (lower + idx * h - mu[sl, None]) / s[sl, None]
            frac = _gauss_interval_np(z[:, :-1], z[:, 1:])
            frac[k[None, :-1] >= width[sl, None]] = 0.0
            captured[sl] = frac.sum(axis=1)
            contrib = m[sl, None] * frac
            target = np.minimum(idx[:, :-1], ncell - 1)
            out += np.bincount(target.ravel(), weights=contrib.ravel(), minlength=ncell)
    leak = float(np.sum(m * leak_frac))
    trunc = float(np.sum(m * (1.0 - leak_frac - captured)))
    return out, leak, trunc


@njit
def _phi_lower(z):
    return 0.5 * math.erfc(-z * _INV_SQRT2)


@njit
def _gauss_interval_jit(z0, z1):
    if z1 <= 0.0:
        v = _phi_lower(z1) - _phi_lower(z0)
    elif z0 >= 0.0:
        v = _phi_lower(-z0) - _phi_lower(-z1)
    else:
        v = 1.0 - _phi_lower(z0) - _phi_lower(-z1)
    return v if v > 0.0 else 0.0


@njit
def _cdf_scatter_jit(mass, mu, s, lower, h, ncell, window=8.0):
    upper = lower + ncell * h
    out = np.zeros(ncell)
    leak = 0.0
    trunc = 0.0
    for i in range(mass.shape[0]):
        m = mass[i]
        if m == 0.0:
            continue
        mi = mu[i]
        si = s[i]
        leak_frac = _phi_lower((lower - mi) / si) + _phi_lower((mi - upper) / si)
        jlo = math.floor((mi - window * si - lower) / h)
        jhi = math.ceil((mi + window * si - lower) / h)
        jlo = min(max(jlo, 0), ncell)
        jhi = min(max(jhi, 0), ncell)
        captured = 0.0
        if jhi > jlo:
            z0 = (lower + jlo * h - mi) / si
            for j in range(jlo, jhi):
                z1 = (lower + (j + 1) * h - mi) / si
                f = _gauss_interval_jit(z0, z1)
                captured += f
                out[j] += m * f
                z0 = z1
        leak += m * leak_frac
        trunc += m * (1.0 - leak_frac - captured)
    return out, leak, trunc


# ---------------------------------------------------------------------------
# Midpoint quadrature (1D and 2D), gather form: one output cell per task
# ---------------------------------------------------------------------------

def _quad_gather_1d_np(weights, mu, s, targets):
    """out_j = sum_i weights_i * N(targets_j; mu_i, s_i^2)."""
    coef = weights * _INV_SQRT_2PI / s
    inv = 1.0 / s
    out = np.empty(targets.shape[0])
    rows = max(1, _BLOCK // max(1, mu.shape[0]))
    for start in range(0, targets.shape[0], rows):
        y = targets[start:start + rows, None]
        z = (y - mu[None, :]) * inv[None, :]
        out[start:start + rows] = np.exp(-0.5 * z * z) @ coef
    return out


@njit(parallel=True)
def _quad_gather_1d_jit(weights, mu, s, targets):
    n_src = mu.shape[0]
    coef = np.empty(n_src)
    inv = np.empty(n_src)
    for i in range(n_src):
        inv[i] = 1.0 / s[i]
        coef[i] = weights[i] * _INV_SQRT_2PI * inv[i]
    out = np.empty(targets.shape[0])
    for j in prange(targets.shape[0]):
        y = targets[j]
        acc = 0.0
        for i in range(n_src):
            z = (y - mu[i]) * inv[i]
            acc += coef[i] * math.exp(-0.5 * z * z)
        out[j] = acc
    return out


def _quad_gather_2d_np(coef, mu, w, targets):
    """out_j = sum_i coef_i * exp(-|W_i (y_j - mu_i)|^2 / 2).

    ``w`` holds the symmetric inverse square root of each source covariance
    as (w00, w01, w11).
    """
    out = np.empty(targets.shape[0])
    rows = max(1, _BLOCK // max(1, mu.shape[0]))
    for start in range(0, targets.shape[0], rows):
        y = targets[start:start + rows]
        dx = y[:, 0, None] - mu[None, :, 0]
        dy = y[:, 1, None] - mu[None, :, 1]
        z0 = w[None, :, 0] * dx + w[None, :, 1] * dy
        z1 = w[None, :, 1] * dx + w[None, :, 2] * dy
        out[start:start + rows] = np.exp(-0.5 * (z0 * z0 + z1 * z1)) @ coef
    return out


@njit(parallel=True)
def _quad_gather_2d_jit(coef, mu, w, targets):
    n_src = mu.shape[0]
    out = np.empty(targets.shape[0])
    for j in prange(targets.shape[0]):
        yx = targets[j, 0]
        yy = targets[j, 1]
        acc = 0.0
        for i in range(n_src):
            dx = yx - mu[i, 0]
            dy = yy - mu[i, 1]
            z0 = w[i, 0] * dx + w[i, 1] * dy
            z1 = w[i, 1] * dx + w[i, 2] * dy
            acc += coef[i] * math.exp(-0.5 * (z0 * z0 + z1 * z1))
        out[j] = acc
    return out


# ---------------------------------------------------------------------------
# Counter-based random numbers: SplitMix64 finaliser keyed by (seed, path, word)
# ---------------------------------------------------------------------------

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TWO = np.uint64(2)
_TWO_NEG53 = 2.0 ** -53
_TWO_PI = 2.0 * math.pi


def _mix64_np(z):
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _stream_keys_np(seed_key, paths):
    with np.errstate(over="ignore"):
        return _mix64_np(seed_key + (paths.astype(np.uint64) + _ONE) * GAMMA)


def _to_unit_np(word):
    return ((word >> _S11).astype(np.float64) + 0.5) * _TWO_NEG53


def _uniform_words_np(seed_key, path_start, count, word):
    paths = np.arange(path_start, path_start + count, dtype=np.uint64)
    keys = _stream_keys_np(seed_key, paths)
    with np.errstate(over="ignore"):
        return _to_unit_np(_mix64_np(keys + (np.uint64(word) + _ONE) * GAMMA))


def _normal_block_np(seed_key, path_start, count, n_normals):
    paths = np.arange(path_start, path_start + count, dtype=np.uint64)
    keys = _stream_keys_np(seed_key, paths)[:, None]
    n_pairs = (n_normals + 1) // 2
    pair = np.arange(n_pairs, dtype=np.uint64)[None, :]
    with np.errstate(over="ignore"):
        # pair q draws words 1 + 2q and 2 + 2q
        w1 = _mix64_np(keys + (_TWO * pair + _TWO) * GAMMA)
        w2 = _mix64_np(keys + (_TWO * pair + _TWO + _ONE) * GAMMA)
    r = np.sqrt(-2.0 * np.log(_to_unit_np(w1)))
    theta = _TWO_PI * _to_unit_np(w2)
    out = np.empty((count, 2 * n_pairs))
    out[:, 0::2] = r * np.cos(theta)
    out[:, 1::2] = r * np.sin(theta)
    return out[:, :n_normals]


@njit
def _mix64_jit(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit
def _to_unit_jit(word):
    return (np.float64(word >> _S11) + 0.5) * _TWO_NEG53


@njit
def _uniform_words_jit(seed_key, path_start, count, word):
    out = np.empty(count)
    w = np.uint64(word)
    for p in range(count):
        key = _mix64_jit(seed_key + (np.uint64(path_start + p) + _ONE) * GAMMA)
        out[p] = _to_unit_jit(_mix64_jit(key + (w + _ONE) * GAMMA))
    return out


@njit(parallel=True)
def _normal_block_jit(seed_key, path_start, count, n_normals):
    n_pairs = (n_normals + 1) // 2
    out = np.empty((count, n_normals))
    for p in prange(count):
        key = _mix64_jit(seed_key + (np.uint64(path_start + p) + _ONE) * GAMMA)
        for q in range(n_pairs):
            uq = np.uint64(q)
            w1 = _mix64_jit(key + (_TWO * uq + _TWO) * GAMMA)
            w2 = _mix64_jit(key + (_TWO * uq + _TWO + _ONE) * GAMMA)
            r = math.sqrt(-2.0 * math.log(_to_unit_jit(w1)))
            theta = _TWO_PI * _to_unit_jit(w2)
            out[p, 2 * q] = r * math.cos(theta)
            if 2 * q + 1 < n_normals:
                out[p, 2 * q + 1] = r * math.sin(theta)
    return out


def seed_key(seed):
    """Fold an arbitrary Python int into the 64-bit key used by the generator."""
    return _mix64_np(np.array([int(seed) % (1 << 64)], dtype=np.uint64))[0]


if USE_NUMBA:
    cdf_scatter = _cdf_scatter_jit
    quad_gather_1d = _quad_gather_1d_jit
    quad_gather_2d = _quad_gather_2d_jit
    uniform_words = _uniform_words_jit
    normal_block = _normal_block_jit
else:
    cdf_scatter = _cdf_scatter_np
    quad_gather_1d = _quad_gather_1d_np
    quad_gather_2d = _quad_gather_2d_np
    uniform_words = _uniform_words_np
    normal_block = _normal_block_np
