"""Stable laws in the S1 parameterization.

``X ~ S1(scale, beta, loc)`` has characteristic function
``exp(-scale^a |z|^a (1 - i beta sgn(z) tan(pi a / 2)) + i loc z)`` for
``a != 1`` and ``exp(-scale |z| (1 + i beta (2/pi) sgn(z) ln|z|) + i loc z)``
for ``a == 1``. This is also the default of :data:`scipy.stats.levy_stable`.
"""

from __future__ import annotations

import functools
import math

import numpy as np
from scipy import integrate, interpolate, special, stats

__all__ = ["cms_standard", "stable_increments", "stable_cdf", "tail_constant"]


def _check(alpha, beta):
    if not 0.0 < alpha <= 2.0:
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
    if not -1.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [-1, 1], got {beta}")


def cms_standard(rng, alpha, beta, size):
    """Chambers-Mallows-Stuck draw of ``S1(1, beta, 0)`` variates."""
    _check(alpha, beta)
    v = rng.uniform(-0.5 * np.pi, 0.5 * np.pi, size=size)
    w = rng.exponential(size=size)
    if alpha == 2.0:
        return 2.0 * np.sqrt(w) * np.sin(v)  # N(0, 2)
    if alpha == 1.0:
        hp = 0.5 * np.pi + beta * v
        return (2.0 / np.pi) * (hp * np.tan(v) - beta * np.log(0.5 * np.pi * w * np.cos(v) / hp))
    t = beta * math.tan(0.5 * np.pi * alpha)
    b = math.atan(t) / alpha
    s = (1.0 + t * t) ** (0.5 / alpha)
    av = alpha * (v + b)
    return (s * np.sin(av) / np.cos(v) ** (1.0 / alpha)
            * (np.cos(v - av) / w) ** ((1.0 - alpha) / alpha))


def stable_increments(rng, alpha, beta, scale, loc, dt):
    """Increments over intervals ``dt`` of the Lévy process with ``L_1 ~ S1(scale, beta, loc)``."""
    dt = np.asarray(dt, dtype=float)
    x = cms_standard(rng, alpha, beta, dt.shape)
    if alpha == 1.0:
        sdt = scale * dt
        with np.errstate(divide="ignore", invalid="ignore"):
            corr = np.where(sdt > 0, (2.0 / np.pi) * beta * sdt * np.log(sdt), 0.0)
        return sdt * x + corr + loc * dt
    return scale * dt ** (1.0 / alpha) * x + loc * dt


def tail_constant(alpha):
    """``C`` with ``P(X > x) ~ C (1 + beta)/2 x^{-alpha}`` for standard S1 variates."""
    if alpha == 1.0:
        return 2.0 / np.pi
    return (1.0 - alpha) / (special.gamma(2.0 - alpha) * math.cos(0.5 * np.pi * alpha))


def _skew_phase(u, alpha, beta):
    # part of the phase that does not depend on y
    if alpha == 1.0:
        return beta * (2.0 / np.pi) * u * math.log(u)
    return -beta * math.tan(0.5 * np.pi * alpha) * u ** alpha


def _cdf_point(y, alpha, beta):
    # Gil-Pelaez: F(y) = 1/2 + (1/pi) int_0^inf e^{-u^a} sin(uy + k(u))/u du,
    # with sin(uy + k) = sin(uy)cos(k) + cos(uy)sin(k) so the tail on [1, inf)
    # goes to QAWF with the oscillation carried by the weight
    def g(u):
        if u == 0.0:
            return y
        return math.exp(-u ** alpha) * math.sin(u * y + _skew_phase(u, alpha, beta)) / u

    head = integrate.quad(g, 0.0, 1.0, limit=2000, epsabs=1e-12)[0]

    def amp_c(u):
        return math.exp(-u ** alpha) * math.cos(_skew_phase(u, alpha, beta)) / u

    def amp_s(u):
        return math.exp(-u ** alpha) * math.sin(_skew_phase(u, alpha, beta)) / u

    if y == 0.0:
        tail = integrate.quad(amp_s, 1.0, np.inf, limit=2000)[0]
    else:
        tail = (integrate.quad(amp_c, 1.0, np.inf, weight="sin", wvar=y, limlst=200)[0]
                + integrate.quad(amp_s, 1.0, np.inf, weight="cos", wvar=y, limlst=200)[0])
    return 0.5 + (head + tail) / np.pi


@functools.lru_cache(maxsize=32)
def _cdf_table(alpha, beta):
    y = np.sinh(np.linspace(-np.arcsinh(1e3), np.arcsinh(1e3), 801))
    f = np.array([_cdf_point(v, alpha, beta) for v in y])
    f = np.clip(np.maximum.accumulate(f), 0.0, 1.0)
    return y, interpolate.PchipInterpolator(y, f, extrapolate=False)


def stable_cdf(x, alpha, beta=0.0, scale=1.0, loc=0.0):
    """CDF of ``S1(scale, beta, loc)`` by characteristic-function inversion.

    A table on ``|y| <= 1e3`` (standardized) is computed once per ``(alpha, beta)``
    and cached; outside it the power-law tail asymptotics are used.
    """
    _check(alpha, beta)
    x = np.asarray(x, dtype=float)
    if alpha == 2.0:
        return stats.norm.cdf(x, loc=loc, scale=math.sqrt(2.0) * scale)
    if alpha == 1.0:
        y = (x - loc) / scale - (2.0 / np.pi) * beta * math.log(scale)
    else:
        y = (x - loc) / scale
    grid, table = _cdf_table(float(alpha), float(beta))
    out = table(np.clip(y, grid[0], grid[-1]))
    c = tail_constant(alpha)
    with np.errstate(divide="ignore"):
        up = 1.0 - c * 0.5 * (1.0 + beta) * np.abs(y) ** (-alpha)
        down = c * 0.5 * (1.0 - beta) * np.abs(y) ** (-alpha)
    out = np.where(y > grid[-1], up, out)
    out = np.where(y < grid[0], down, out)
    return np.clip(out, 0.0, 1.0)
