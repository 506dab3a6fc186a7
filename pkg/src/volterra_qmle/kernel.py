"""Fractional kernel K, its resolvent L and the sampled two-index kernel.

K(u) = u^(alpha-1) / Gamma(alpha) and L(u) = u^(-alpha) / Gamma(1-alpha) for
u > 0 (both vanish for u <= 0) satisfy L * K = 1.  Sampling a path on a grid
of step h replaces K by a piecewise-constant kernel; ``g_h`` is L convolved
with that kernel and measures how far discrete inversion is from exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import hankel

from .errors import DomainError, OrderingError

ALPHA_MARGIN = 1e-6


@dataclass(frozen=True)
class FractionalKernelParams:
    """Roughness index and the Gamma constants used by K and L."""

    alpha: float
    gamma_alpha: float = field(init=False)
    gamma_one_minus_alpha: float = field(init=False)

    def __post_init__(self):
        alpha = float(self.alpha)
        if not (0.5 + ALPHA_MARGIN < alpha < 1.0 - ALPHA_MARGIN):
            raise DomainError(f"alpha out of (0.5,1): {alpha!r}")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "gamma_alpha", math.gamma(alpha))
        object.__setattr__(self, "gamma_one_minus_alpha", math.gamma(1.0 - alpha))

    @property
    def gamma_alpha_plus_one(self) -> float:
        return self.alpha * self.gamma_alpha

    @property
    def gamma_two_minus_alpha(self) -> float:
        return (1.0 - self.alpha) * self.gamma_one_minus_alpha


def as_params(p) -> FractionalKernelParams:
    """Accept either a params object or a bare alpha."""
    if isinstance(p, FractionalKernelParams):
        return p
    return FractionalKernelParams(float(p))


def snap_count(ratio: float, rtol: float = 1e-9) -> int:
    """floor(ratio), treating values within ``rtol`` of an integer as that integer."""
    r = round(ratio)
    if abs(ratio - r) <= rtol * max(1.0, abs(ratio)):
        return int(r)
    return math.floor(ratio)


@dataclass(frozen=True)
class GridGeometry:
    """Sampling step ``h`` on the horizon ``[0, T]``."""

    h: float
    T: float

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise DomainError(f"sampling step must be positive, got {self.h!r}")
        if not self.T >= self.h:
            raise DomainError(f"horizon T={self.T!r} shorter than step h={self.h!r}")

    @property
    def n(self) -> int:
        return snap_count(self.T / self.h)

    def phi(self, t):
        """Left grid point h * floor(t / h)."""
        t = np.asarray(t, dtype=float)
        m = np.floor(t / self.h)
        # guard against t/h rounding just below an integer
        m = np.where((m + 1) * self.h <= t, m + 1, m)
        out = m * self.h
        return float(out) if out.ndim == 0 else out

    def chi(self, u):
        """Offset u - phi(u), in [0, h)."""
        return u - self.phi(u)


def eval_K(u, p):
    """Fractional kernel u^(alpha-1)/Gamma(alpha) on u > 0, zero elsewhere."""
    p = as_params(p)
    u = np.asarray(u, dtype=float)
    pos = u > 0
    out = np.zeros_like(u)
    out[pos] = u[pos] ** (p.alpha - 1.0) / p.gamma_alpha
    return float(out) if out.ndim == 0 else out


def eval_L(u, p):
    """Resolvent kernel u^(-alpha)/Gamma(1-alpha) on u > 0, zero elsewhere."""
    p = as_params(p)
    u = np.asarray(u, dtype=float)
    pos = u > 0
    out = np.zeros_like(u)
    out[pos] = u[pos] ** (-p.alpha) / p.gamma_one_minus_alpha
    return float(out) if out.ndim == 0 else out


def _check_order(s0, s1, t):
    if not (0.0 <= s0 <= s1 <= t):
        raise OrderingError(f"need 0 <= s0 <= s1 <= t, got s0={s0}, s1={s1}, t={t}")


def integral_K(s0: float, s1: float, t: float, p) -> float:
    """Exact integral of K(t - s) over s in [s0, s1]."""
    p = as_params(p)
    _check_order(s0, s1, t)
    a = p.alpha
    return ((t - s0) ** a - (t - s1) ** a) / p.gamma_alpha_plus_one


def integral_L(s0: float, s1: float, t: float, p) -> float:
    """Exact integral of L(t - s) over s in [s0, s1]; finite even for s1 = t."""
    p = as_params(p)
    _check_order(s0, s1, t)
    b = 1.0 - p.alpha
    return ((t - s0) ** b - (t - s1) ** b) / p.gamma_two_minus_alpha


def power_increments(beta: float, n: int) -> np.ndarray:
    """m^beta - (m-1)^beta for m = 1..n without cancellation for large m."""
    m = np.arange(1, n + 1, dtype=float)
    out = -(m**beta) * np.expm1(beta * np.log1p(-1.0 / np.maximum(m, 2.0)))
    out[0] = 1.0
    return out


def drift_weights(p, delta: float, n: int) -> np.ndarray:
    """Cell integrals of K on a uniform grid.

    ``w[m - 1]`` is the integral of K(t_i - s) over the cell
    [t_{i-m}, t_{i-m+1}], i.e. lag ``m`` cells back.
    """
    p = as_params(p)
    return delta**p.alpha * power_increments(p.alpha, n) / p.gamma_alpha_plus_one


def inversion_weights(p, h: float, n: int) -> np.ndarray:
    """Cell integrals of L on a uniform grid; ``c[l - 1]`` for lag ``l`` cells."""
    p = as_params(p)
    b = 1.0 - p.alpha
    return h**b * power_increments(b, n) / p.gamma_two_minus_alpha


def cell_right_ends(left, h: float, t: float):
    """min(left + h, t), with ends within rounding distance of t snapped to t."""
    right = np.asarray(left, dtype=float) + h
    return np.where(right >= t - 1e-12 * max(1.0, abs(t)), t, right)


def _grid_index_range(t: float, u: float, h: float) -> tuple[int, int]:
    """Smallest m with m*h > u and largest m with m*h < t."""
    lo = math.floor(u / h) + 1
    while lo * h <= u:
        lo += 1
    while lo > 1 and (lo - 1) * h > u:
        lo -= 1
    r = round(t / h)
    if abs(t - r * h) <= 1e-12 * max(1.0, abs(t)):
        # t is a grid point up to rounding
        return lo, r - 1
    hi = math.ceil(t / h) - 1
    while (hi + 1) * h < t:
        hi += 1
    while hi >= 0 and hi * h >= t:
        hi -= 1
    return lo, hi


def g_h(t: float, u: float, geom: GridGeometry, p) -> float:
    """L convolved with the sampled kernel K^(h), at (t, u).

    The sampled kernel is constant in v on each grid cell, so the value is an
    exact finite sum of K(m h - u) times the integral of L over cell m.
    """
    p = as_params(p)
    if not (0.0 <= u < t):
        raise DomainError(f"need 0 <= u < t, got u={u}, t={t}")
    h = geom.h
    lo, hi = _grid_index_range(t, u, h)
    if hi < lo:
        return 0.0
    m = np.arange(lo, hi + 1, dtype=float)
    left = m * h
    right = cell_right_ends(left, h, t)
    b = 1.0 - p.alpha
    cell_L = ((t - left) ** b - (t - right) ** b) / p.gamma_two_minus_alpha
    return float(np.sum(eval_K(left - u, p) * cell_L))


def check_pointwise_bound(t: float, u: float, geom: GridGeometry, p) -> tuple[float, float]:
    """|g_h - 1| and the constant-free shape of its pointwise upper bound."""
    p = as_params(p)
    lhs = abs(g_h(t, u, geom, p) - 1.0)
    h = geom.h
    r = t - u
    chi = geom.chi(u)
    rhs = min((h / r) ** p.alpha, 1.0) + h * eval_K(h - chi, p) * min(r ** (-p.alpha), h ** (-p.alpha))
    return lhs, rhs


def _cell_values(t: float, h: float, p: FractionalKernelParams, s: np.ndarray):
    """g_h(t, u) on every full cell below t at relative offsets ``s``.

    Returns ``(g, tail)`` where ``g[j, i]`` is the value at
    u = (j+1) h - s[i] h and ``tail`` is the length of [m_max h, t) on which
    g_h vanishes.
    """
    _, m_max = _grid_index_range(t, 0.0, h)
    if m_max < 1:
        return np.empty((0, s.size)), t
    m = np.arange(1, m_max + 1, dtype=float)
    left = m * h
    right = cell_right_ends(left, h, t)
    b = 1.0 - p.alpha
    c = ((t - left) ** b - (t - right) ** b) / p.gamma_two_minus_alpha
    lags = np.arange(m_max, dtype=float)[:, None] + s[None, :]
    kvals = eval_K(lags * h, p)
    # g[j, i] = sum_l c[j + l] * K((l + s_i) h)
    g = hankel(c) @ kvals
    return g, t - m_max * h


def integral_bounds(t: float, geom: GridGeometry, p, n_quad: int = 4096) -> tuple[float, float]:
    """L1 and squared-L2 norms over u in [0, t] of g_h(t, u) - 1.

    Each grid cell carries an integrable singularity at its right end (from
    K(m h - u) as u -> m h).  Within a cell we substitute u = (j+1)h - h s with
    s = sigma^q and apply the composite midpoint rule in sigma; q is large
    enough that the squared integrand is bounded in sigma.
    """
    p = as_params(p)
    if not (0.0 < t <= geom.T * (1 + 1e-12)):
        raise DomainError(f"t must lie in (0, T], got {t}")
    if n_quad < 1000:
        raise DomainError(f"n_quad must be at least 1000, got {n_quad}")
    h = geom.h
    n_cells = max(1, math.ceil(t / h))
    per_cell = max(16, n_quad // n_cells)
    q = 1.0 / (2.0 * p.alpha - 1.0)
    sigma = (np.arange(per_cell) + 0.5) / per_cell
    s = sigma**q
    ds = q * sigma ** (q - 1.0) / per_cell
    g, tail = _cell_values(t, h, p, s)
    dev = np.abs(g - 1.0)
    l1 = h * float(np.sum(dev @ ds)) + tail
    l2 = h * float(np.sum((dev**2) @ ds)) + tail
    return l1, l2


def resolvent_convolution(t: float, p, n_nodes: int = 10**5) -> float:
    """Numerical value of (L * K)(t); equals 1 for every t > 0.

    Both endpoint singularities are removed by power substitutions on each
    half of [0, t], then the composite midpoint rule is applied.
    """
    p = as_params(p)
    if t <= 0:
        raise DomainError(f"t must be positive, got {t}")
    a = p.alpha
    half = 0.5 * t
    m = max(1, n_nodes // 2)
    sigma = (np.arange(m) + 0.5) / m
    # near s = 0: s = half * sigma^(1/a)
    s = half * sigma ** (1.0 / a)
    jac = half / a * sigma ** (1.0 / a - 1.0)
    left = np.sum(eval_L(t - s, p) * eval_K(s, p) * jac) / m
    # near s = t: t - s = half * sigma^(1/(1-a))
    r = half * sigma ** (1.0 / (1.0 - a))
    jac = half / (1.0 - a) * sigma ** (a / (1.0 - a))
    right = np.sum(eval_L(r, p) * eval_K(t - r, p) * jac) / m
    return float(left + right)
