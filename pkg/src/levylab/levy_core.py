"""Analytic description of Lévy processes.

Characteristic triplets, parametric Lévy measures with closed-form tails and
moments, scaling functions, and the rule-based short-time predictions used as
oracles by :mod:`levylab.scaling_lab`.

The truncation convention is fixed to ``1{|s| <= 1}`` throughout: the location
parameter ``gamma`` of a triplet is *not* the drift of a bounded-variation
process; use :func:`classify_paths` to obtain the true drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, special

__all__ = [
    "ConfigurationError",
    "QuadratureError",
    "UnsupportedPrediction",
    "PointMass",
    "UniformJumps",
    "ScipyJumps",
    "LevyMeasureSpec",
    "FiniteActivity",
    "StableDensity",
    "TruncatedExponential",
    "TabulatedDensity",
    "ZeroMeasure",
    "CharacteristicTriplet",
    "ScalingFunction",
    "Power",
    "Khintchine",
    "GeneralLIL",
    "RegularlyVarying",
    "MomentResult",
    "PathClass",
    "ShortTimePrediction",
    "characteristic_exponent",
    "tail_function",
    "moment_integral",
    "classify_paths",
    "blumenthal_getoor_index",
    "predict_short_time",
    "scaling_eval",
    "stable_triplet",
    "stable_params",
]

QUAD_EPSABS = 1e-10
EULER_GAMMA = float(np.euler_gamma)


class ConfigurationError(ValueError):
    """A measure or triplet is specified incompletely or inconsistently."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved abs. error {achieved:.3e}, "
                         f"requested {QUAD_EPSABS:.1e})")
        self.achieved = achieved


class UnsupportedPrediction(NotImplementedError):
    """No decision rule is available for this (triplet, scaling) pair."""


def _quad(func, a, b, **kw):
    val, err, *rest = integrate.quad(func, a, b, epsabs=QUAD_EPSABS,
                                     epsrel=1e-10, limit=500, full_output=1, **kw)
    # ier is only present in the 4-tuple form when the routine complained
    if len(rest) > 1 and err > 100 * QUAD_EPSABS:
        raise QuadratureError(f"quad on [{a}, {b}] did not converge", err)
    return val


def _check_side(side):
    if side not in ("+", "-", "both"):
        raise ValueError(f"side must be '+', '-' or 'both', got {side!r}")


# ---------------------------------------------------------------------------
# jump laws for finite-activity measures


class PointMass:
    """Degenerate jump law at ``atom`` (scalar or vector)."""

    def __init__(self, atom):
        self.atom = np.atleast_1d(np.asarray(atom, dtype=float))
        self.dim = self.atom.size
        self._norm = float(np.linalg.norm(self.atom))

    def sample(self, rng, size):
        return np.broadcast_to(self.atom, (size, self.dim)).copy()

    def prob_gt(self, x, side="both"):
        if self.dim == 1 and side != "both":
            a = self.atom[0]
            return float(a > x) if side == "+" else float(a < -x)
        return float(self._norm > x)

    def abs_moment(self, r, lo, hi, side="both"):
        if self.dim == 1 and side != "both":
            a = self.atom[0]
            if (side == "+" and a <= 0) or (side == "-" and a >= 0):
                return 0.0
        n = self._norm
        return n ** r if lo < n <= hi else 0.0

    def first_moment(self, lo, hi):
        return self.atom.copy() if lo < self._norm <= hi else np.zeros(self.dim)

    def char_fn(self, z):
        return complex(np.exp(1j * np.dot(np.atleast_1d(z), self.atom)))

    def to_dict(self):
        return {"kind": "point", "atom": self.atom.tolist()}


class UniformJumps:
    """Scalar jumps uniform on ``[low, high]``."""

    dim = 1

    def __init__(self, low, high):
        if not high > low:
            raise ConfigurationError("uniform jump law needs high > low")
        self.low, self.high = float(low), float(high)

    def sample(self, rng, size):
        return rng.uniform(self.low, self.high, size=(size, 1))

    def _mass(self, a, b):
        # Lebesgue measure of [a, b] ∩ [low, high], normalised
        a, b = max(a, self.low), min(b, self.high)
        return max(b - a, 0.0) / (self.high - self.low)

    def prob_gt(self, x, side="both"):
        plus = self._mass(x, math.inf)
        minus = self._mass(-math.inf, -x)
        return {"+": plus, "-": minus, "both": plus + minus}[side]

    def _power_int(self, r, a, b):
        # ∫_a^b u^r du / (high - low) for 0 <= a <= b
        if b <= a:
            return 0.0
        return (b ** (r + 1) - a ** (r + 1)) / (r + 1) / (self.high - self.low)

    def abs_moment(self, r, lo, hi, side="both"):
        out = 0.0
        if side in ("+", "both"):
            out += self._power_int(r, max(lo, self.low, 0.0), min(hi, max(self.high, 0.0)))
        if side in ("-", "both"):
            out += self._power_int(r, max(lo, -self.high, 0.0), min(hi, max(-self.low, 0.0)))
        return out

    def first_moment(self, lo, hi):
        plus = self._power_int(1.0, max(lo, self.low, 0.0), min(hi, max(self.high, 0.0)))
        minus = self._power_int(1.0, max(lo, -self.high, 0.0), min(hi, max(-self.low, 0.0)))
        return np.array([plus - minus])

    def char_fn(self, z):
        z = float(np.atleast_1d(z)[0])
        if z == 0.0:
            return 1.0 + 0j
        a, b = self.low, self.high
        return complex((np.exp(1j * z * b) - np.exp(1j * z * a)) / (1j * z * (b - a)))

    def to_dict(self):
        return {"kind": "uniform", "low": self.low, "high": self.high}


class ScipyJumps:
    """Scalar jumps from a frozen continuous ``scipy.stats`` distribution."""

    dim = 1

    def __init__(self, dist):
        self.dist = dist

    def sample(self, rng, size):
        return np.asarray(self.dist.rvs(size=size, random_state=rng), dtype=float).reshape(size, 1)

    def prob_gt(self, x, side="both"):
        plus = float(self.dist.sf(x))
        minus = float(self.dist.cdf(-x))
        return {"+": plus, "-": minus, "both": plus + minus}[side]

    def _int(self, g, a, b):
        if b <= a:
            return 0.0
        return _quad(lambda u: g(u) * self.dist.pdf(u), a, b)

    def abs_moment(self, r, lo, hi, side="both"):
        out = 0.0
        if side in ("+", "both"):
            out += self._int(lambda u: u ** r, lo, hi)
        if side in ("-", "both"):
            out += self._int(lambda u: (-u) ** r, -hi, -lo)
        return out

    def first_moment(self, lo, hi):
        return np.array([self._int(lambda u: u, lo, hi) + self._int(lambda u: u, -hi, -lo)])

    def char_fn(self, z):
        z = float(np.atleast_1d(z)[0])
        lo, hi = self.dist.support()
        re = _quad(lambda u: math.cos(z * u) * self.dist.pdf(u), lo, hi)
        im = _quad(lambda u: math.sin(z * u) * self.dist.pdf(u), lo, hi)
        return complex(re, im)

    def to_dict(self):
        return {"kind": "scipy", "name": self.dist.dist.name,
                "args": list(self.dist.args), "kwds": dict(self.dist.kwds)}


# ---------------------------------------------------------------------------
# Lévy measures


class LevyMeasureSpec:
    """Base class for parametric Lévy measures.

    Subclasses implement tails ``ν((x, ∞))``, ``ν((-∞, -x))``, truncated
    absolute moments ``∫_{lo<|s|<=hi} |s|^r ν(ds)`` and the Lévy-Khintchine
    jump integral.
    """

    dim = 1

    def tail(self, x: float, side: str = "both") -> float:
        raise NotImplementedError

    def abs_moment(self, r: float, lo: float = 0.0, hi: float = 1.0, side: str = "both") -> float:
        raise NotImplementedError

    def moment_finite(self, r: float) -> bool:
        """Whether ``∫_{|s|<=1} |s|^r ν(ds)`` is finite, decided analytically."""
        raise NotImplementedError

    def first_moment(self, lo: float, hi: float) -> np.ndarray:
        """Signed moment ``∫_{lo<|s|<=hi} s ν(ds)``; must be finite."""
        raise NotImplementedError

    def jump_integral(self, z) -> complex:
        raise NotImplementedError

    def sample_large(self, rng, size: int, eps: float) -> np.ndarray:
        """Draw ``size`` jumps from ν restricted to ``|s| > eps``, normalised."""
        raise NotImplementedError

    def bg_index_exact(self) -> Optional[float]:
        return None

    def small_jump_variance(self, eps: float) -> float:
        """``∫_{|s|<=eps} |s|^2 ν(ds)``."""
        return self.abs_moment(2.0, 0.0, eps)

    @property
    def is_zero(self) -> bool:
        return False


class ZeroMeasure(LevyMeasureSpec):
    """The null measure (pure Gaussian / deterministic processes)."""

    def __init__(self, dim: int = 1):
        self.dim = dim

    def tail(self, x, side="both"):
        _check_side(side)
        return 0.0

    def abs_moment(self, r, lo=0.0, hi=1.0, side="both"):
        return 0.0

    def moment_finite(self, r):
        return True

    def first_moment(self, lo, hi):
        return np.zeros(self.dim)

    def jump_integral(self, z):
        return 0j

    def sample_large(self, rng, size, eps):
        return np.zeros((size, self.dim))

    def bg_index_exact(self):
        return 0.0

    @property
    def is_zero(self):
        return True

    def to_dict(self):
        return {"kind": "zero", "dim": self.dim}


class FiniteActivity(LevyMeasureSpec):
    """``rate`` times the law of ``jump_law``; total mass equals ``rate``."""

    def __init__(self, rate: float, jump_law):
        if rate < 0 or not math.isfinite(rate):
            raise ConfigurationError(f"rate must be finite and >= 0, got {rate}")
        self.rate = float(rate)
        self.jump_law = jump_law
        self.dim = jump_law.dim

    def tail(self, x, side="both"):
        _check_side(side)
        if self.dim > 1 and side != "both":
            raise ValueError("one-sided tails are only defined in dimension one")
        return self.rate * self.jump_law.prob_gt(x, side)

    def abs_moment(self, r, lo=0.0, hi=1.0, side="both"):
        return self.rate * self.jump_law.abs_moment(r, lo, hi, side)

    def moment_finite(self, r):
        return True

    def first_moment(self, lo, hi):
        return self.rate * np.atleast_1d(self.jump_law.first_moment(lo, hi))

    def jump_integral(self, z):
        z = np.atleast_1d(np.asarray(z, dtype=float))
        comp = np.dot(z, self.first_moment(0.0, 1.0))
        return self.rate * (self.jump_law.char_fn(z) - 1.0) - 1j * comp

    def sample_large(self, rng, size, eps):
        if size == 0:
            return np.zeros((0, self.dim))
        if self.jump_law.prob_gt(eps) <= 0.0:
            raise ConfigurationError(f"jump law has no mass above {eps}")
        out = []
        need = size
        while need > 0:
            draw = self.jump_law.sample(rng, 2 * need + 8)
            keep = draw[np.linalg.norm(draw, axis=1) > eps]
            out.append(keep[:need])
            need -= len(out[-1])
        return np.concatenate(out)

    def bg_index_exact(self):
        return 0.0

    @property
    def is_zero(self):
        return self.rate == 0.0

    def to_dict(self):
        return {"kind": "finite_activity", "rate": self.rate, "jumps": self.jump_law.to_dict()}


class StableDensity(LevyMeasureSpec):
    """Density ``c_plus x^{-1-alpha}`` on (0, ∞) and ``c_minus |x|^{-1-alpha}`` on (-∞, 0)."""

    def __init__(self, alpha: float, c_plus: float, c_minus: float):
        if not 0.0 < alpha < 2.0:
            raise ConfigurationError(f"alpha must lie in (0, 2), got {alpha}")
        if c_plus < 0 or c_minus < 0 or c_plus + c_minus <= 0:
            raise ConfigurationError("need c_plus, c_minus >= 0 with c_plus + c_minus > 0")
        self.alpha, self.c_plus, self.c_minus = float(alpha), float(c_plus), float(c_minus)

    def _c(self, side):
        return {"+": self.c_plus, "-": self.c_minus, "both": self.c_plus + self.c_minus}[side]

    def tail(self, x, side="both"):
        _check_side(side)
        return self._c(side) * x ** (-self.alpha) / self.alpha

    def abs_moment(self, r, lo=0.0, hi=1.0, side="both"):
        c = self._c(side)
        if c == 0.0 or hi <= lo:
            return 0.0
        k = r - self.alpha
        if k == 0.0:
            if lo == 0.0 or math.isinf(hi):
                return math.inf
            return c * math.log(hi / lo)
        if (lo == 0.0 and k < 0) or (math.isinf(hi) and k > 0):
            return math.inf
        top = 0.0 if math.isinf(hi) else hi ** k
        bottom = 0.0 if lo == 0.0 else lo ** k
        return c * (top - bottom) / k

    def moment_finite(self, r):
        return r > self.alpha

    def first_moment(self, lo, hi):
        if self.c_plus == self.c_minus:
            return np.zeros(1)
        return np.array([self.abs_moment(1.0, lo, hi, "+") - self.abs_moment(1.0, lo, hi, "-")])

    def jump_integral(self, z):
        z = float(np.atleast_1d(z)[0])
        if z == 0.0:
            return 0j
        a, cp, cm = self.alpha, self.c_plus, self.c_minus
        if a == 1.0:
            return complex(-0.5 * math.pi * (cp + cm) * abs(z),
                           -(cp - cm) * z * math.log(abs(z)) + (cp - cm) * (1 - EULER_GAMMA) * z)
        g = special.gamma(-a)
        return complex(g * (cp * (-1j * z) ** a + cm * (1j * z) ** a) + 1j * z * (cp - cm) / (a - 1.0))

    def sample_large(self, rng, size, eps):
        a = self.alpha
        mag = eps * rng.uniform(size=size) ** (-1.0 / a)
        sign = np.where(rng.uniform(size=size) < self.c_plus / (self.c_plus + self.c_minus), 1.0, -1.0)
        return (sign * mag).reshape(size, 1)

    def bg_index_exact(self):
        return self.alpha

    def to_dict(self):
        return {"kind": "stable", "alpha": self.alpha, "c_plus": self.c_plus, "c_minus": self.c_minus}


class TruncatedExponential(LevyMeasureSpec):
    """Density ``exp(-|x|)`` on [-1, 1]; finite total mass ``2(1 - e^{-1})``."""

    def tail(self, x, side="both"):
        _check_side(side)
        one = math.exp(-x) - math.exp(-1.0) if x < 1.0 else 0.0
        return 2 * one if side == "both" else one

    def _gint(self, r, a, b):
        # ∫_a^b u^r e^{-u} du on [0, 1]
        a, b = max(a, 0.0), min(b, 1.0)
        if b <= a:
            return 0.0
        return float(special.gamma(r + 1) * (special.gammainc(r + 1, b) - special.gammainc(r + 1, a)))

    def abs_moment(self, r, lo=0.0, hi=1.0, side="both"):
        one = self._gint(r, lo, hi)
        return 2 * one if side == "both" else one

    def moment_finite(self, r):
        return True

    def first_moment(self, lo, hi):
        return np.zeros(1)

    def jump_integral(self, z):
        z = float(np.atleast_1d(z)[0])
        # 2 ∫_0^1 (cos(zu) - 1) e^{-u} du; odd parts cancel
        w = 1j * z - 1.0
        cos_part = ((np.exp(w) - 1.0) / w).real
        return complex(2.0 * (cos_part - (1.0 - math.exp(-1.0))), 0.0)

    def sample_large(self, rng, size, eps):
        if eps >= 1.0:
            raise ConfigurationError("truncated exponential has no mass above 1")
        lo = math.exp(-eps)
        u = rng.uniform(size=size)
        mag = -np.log(lo - u * (lo - math.exp(-1.0)))
        sign = np.where(rng.uniform(size=size) < 0.5, 1.0, -1.0)
        return (sign * mag).reshape(size, 1)

    def bg_index_exact(self):
        return 0.0

    def to_dict(self):
        return {"kind": "truncated_exponential"}


class TabulatedDensity(LevyMeasureSpec):
    """Density given on a grid in (0, 1] per side, power law below the grid.

    Below ``x[0]`` the density is continued as ``dens(x[0]) (u / x[0])^{-small_x_exponent}``.
    Without an explicit exponent, anything touching the region near zero raises
    :class:`ConfigurationError`.
    """

    def __init__(self, x: Sequence[float], density_plus: Sequence[float],
                 density_minus: Optional[Sequence[float]] = None,
                 small_x_exponent: Optional[float] = None):
        self.x = np.asarray(x, dtype=float)
        self.dp = np.asarray(density_plus, dtype=float)
        self.dm = self.dp if density_minus is None else np.asarray(density_minus, dtype=float)
        if self.x.ndim != 1 or self.x.size < 2 or np.any(np.diff(self.x) <= 0):
            raise ConfigurationError("tabulation grid must be strictly increasing with >= 2 points")
        if self.x[0] <= 0 or self.x[-1] > 1:
            raise ConfigurationError("tabulation grid must lie in (0, 1]")
        if self.dp.shape != self.x.shape or self.dm.shape != self.x.shape:
            raise ConfigurationError("density arrays must match the grid")
        if np.any(self.dp < 0) or np.any(self.dm < 0):
            raise ConfigurationError("densities must be nonnegative")
        if small_x_exponent is not None and small_x_exponent >= 3:
            raise ConfigurationError("small-x exponent must be < 3 for a Lévy measure")
        self.beta = small_x_exponent

    def _need_beta(self):
        if self.beta is None:
            raise ConfigurationError("TabulatedDensity needs an explicit small_x_exponent "
                                     "for behaviour below the first grid point")
        return self.beta

    def _dens(self, side):
        return self.dp if side == "+" else self.dm

    def _grid_int(self, r, a, b, dens):
        # trapezoid of u^r dens(u) over [a, b] ∩ [x0, x_end], dens linear between nodes
        a, b = max(a, self.x[0]), min(b, self.x[-1])
        if b <= a:
            return 0.0
        inner = self.x[(self.x > a) & (self.x < b)]
        pts = np.concatenate(([a], inner, [b]))
        vals = np.interp(pts, self.x, dens) * pts ** r
        return float(np.trapezoid(vals, pts))

    def _power_int(self, r, a, b, dens):
        # ∫_a^b u^r C u^{-beta} du on the power-law piece (b <= x0)
        b = min(b, self.x[0])
        if b <= a:
            return 0.0
        beta = self._need_beta()
        c = dens[0] * self.x[0] ** beta
        k = r - beta + 1.0
        if k == 0.0:
            return math.inf if a == 0.0 else c * math.log(b / a)
        if a == 0.0 and k < 0:
            return math.inf
        return c * (b ** k - (a ** k if a > 0 else 0.0)) / k

    def _one_side(self, r, lo, hi, side):
        dens = self._dens(side)
        out = self._grid_int(r, lo, hi, dens)
        if lo < self.x[0]:
            out += self._power_int(r, lo, hi, dens)
        return out

    def tail(self, x, side="both"):
        _check_side(side)
        if side == "both":
            return self.tail(x, "+") + self.tail(x, "-")
        return self._one_side(0.0, x, 1.0, side)

    def abs_moment(self, r, lo=0.0, hi=1.0, side="both"):
        if side == "both":
            return self.abs_moment(r, lo, hi, "+") + self.abs_moment(r, lo, hi, "-")
        return self._one_side(r, lo, hi, side)

    def moment_finite(self, r):
        return r > self._need_beta() - 1.0

    def first_moment(self, lo, hi):
        return np.array([self.abs_moment(1.0, lo, hi, "+") - self.abs_moment(1.0, lo, hi, "-")])

    def jump_integral(self, z):
        z = float(np.atleast_1d(z)[0])
        if z == 0.0:
            return 0j
        beta = self._need_beta()
        x0, x1 = self.x[0], self.x[-1]

        def h_re(u):  # (cos(zu) - 1) / u^2, stable near 0
            return -2.0 * math.sin(0.5 * z * u) ** 2 / (u * u) if u > 0 else -0.5 * z * z

        def h_im(u):  # (sin(zu) - zu) / u^3
            if u * abs(z) < 1e-3:
                return -z ** 3 / 6.0 + z ** 5 * u * u / 120.0
            return (math.sin(z * u) - z * u) / u ** 3

        total = 0j
        for sign, dens in ((1.0, self.dp), (-1.0, self.dm)):
            c = dens[0] * x0 ** beta
            re = c * _quad(h_re, 0.0, x0, weight="alg", wvar=(2.0 - beta, 0.0))
            im = c * _quad(h_im, 0.0, x0, weight="alg", wvar=(3.0 - beta, 0.0))

            # density is piecewise linear between nodes: Gauss-Legendre per cell
            nodes, weights = np.polynomial.legendre.leggauss(16)
            lo, hi = self.x[:-1, None], self.x[1:, None]
            u = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
            w = 0.5 * (hi - lo) * weights
            du = np.interp(u, self.x, dens)
            re += float(np.sum(w * (np.cos(z * u) - 1.0) * du))
            im += float(np.sum(w * (np.sin(z * u) - z * u) * du))
            total += complex(re, sign * im)
        return total

    def sample_large(self, rng, size, eps):
        out = np.empty(size)
        tp, tm = self.tail(eps, "+"), self.tail(eps, "-")
        if tp + tm <= 0:
            raise ConfigurationError(f"tabulated density has no mass above {eps}")
        plus = rng.uniform(size=size) < tp / (tp + tm)
        u = rng.uniform(size=size)
        grid = np.geomspace(eps, self.x[-1], 2000)
        for side, mask, tot in (("+", plus, tp), ("-", ~plus, tm)):
            if not mask.any():
                continue
            tails = np.array([self.tail(g, side) for g in grid])
            # tail is decreasing in x: invert by interpolation on reversed arrays
            out[mask] = (1 if side == "+" else -1) * np.interp(u[mask] * tot, tails[::-1], grid[::-1])
        return out.reshape(size, 1)

    def bg_index_exact(self):
        return max(self._need_beta() - 1.0, 0.0)

    def to_dict(self):
        return {"kind": "tabulated", "x": self.x.tolist(), "density_plus": self.dp.tolist(),
                "density_minus": self.dm.tolist(), "small_x_exponent": self.beta}


# ---------------------------------------------------------------------------
# triplets


@dataclass(frozen=True)
class CharacteristicTriplet:
    """``(A, ν, γ)`` with truncation ``1{|s| <= 1}``."""

    gaussian: np.ndarray
    measure: LevyMeasureSpec
    gamma: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.gaussian, dtype=float))
        g = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        object.__setattr__(self, "gaussian", A)
        object.__setattr__(self, "gamma", g)
        d = g.size
        if A.shape != (d, d):
            raise ConfigurationError(f"gaussian part must be {d}x{d}, got {A.shape}")
        if self.measure.dim != d:
            raise ConfigurationError(f"measure dimension {self.measure.dim} != {d}")
        if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ConfigurationError("gaussian part must be symmetric")
        scale = np.linalg.norm(A)
        if scale > 0 and np.linalg.eigvalsh(A).min() < -1e-12 * scale:
            raise ConfigurationError("gaussian part must be positive semidefinite")
        unresolved = isinstance(self.measure, TabulatedDensity) and self.measure.beta is None
        if not unresolved and not self.measure.moment_finite(2.0):
            raise ConfigurationError("measure does not integrate min(|s|^2, 1)")

    @property
    def dim(self) -> int:
        return self.gamma.size

    @property
    def has_gaussian(self) -> bool:
        return bool(np.any(self.gaussian != 0.0))

    @classmethod
    def brownian(cls, A=1.0, gamma=0.0):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls(A, ZeroMeasure(A.shape[0]),
                   np.broadcast_to(np.asarray(gamma, float), (A.shape[0],)))

    @classmethod
    def compound_poisson(cls, rate, jump_law, drift=0.0):
        """Compound Poisson with true drift ``drift`` (converted to the location parameter)."""
        measure = FiniteActivity(rate, jump_law)
        d = measure.dim
        drift = np.broadcast_to(np.asarray(drift, float), (d,))
        return cls(np.zeros((d, d)), measure, drift + measure.first_moment(0.0, 1.0))

    def to_dict(self):
        return {"gaussian": self.gaussian.tolist(), "measure": self.measure.to_dict(),
                "gamma": self.gamma.tolist()}


def stable_params(measure: StableDensity):
    """Map a stable Lévy density to S1 parameters ``(scale, beta, shift)``.

    ``shift`` is the S1 location contributed by the measure itself: the process
    with triplet ``(0, measure, gamma)`` has ``L_1 ~ S1(scale, beta, gamma + shift)``.
    """
    a, cp, cm = measure.alpha, measure.c_plus, measure.c_minus
    beta = (cp - cm) / (cp + cm)
    if a == 1.0:
        return 0.5 * math.pi * (cp + cm), beta, (cp - cm) * (1 - EULER_GAMMA)
    scale = (-(cp + cm) * special.gamma(-a) * math.cos(0.5 * math.pi * a)) ** (1.0 / a)
    return scale, beta, (cp - cm) / (a - 1.0)


def stable_triplet(alpha: float, beta: float = 0.0, scale: float = 1.0) -> CharacteristicTriplet:
    """Triplet of the Lévy process with ``L_1 ~ S1(scale, beta, 0)``."""
    if not 0 < alpha < 2:
        raise ConfigurationError(f"alpha must lie in (0, 2), got {alpha}")
    if alpha == 1.0:
        total = 2.0 * scale / math.pi
    else:
        total = scale ** alpha / (-special.gamma(-alpha) * math.cos(0.5 * math.pi * alpha))
    m = StableDensity(alpha, 0.5 * (1 + beta) * total, 0.5 * (1 - beta) * total)
    _, _, shift = stable_params(m)
    return CharacteristicTriplet(np.zeros((1, 1)), m, np.array([-shift]))


def characteristic_exponent(triplet: CharacteristicTriplet, z) -> complex:
    """``ψ(z) = -<z,Az>/2 + i<γ,z> + ∫(e^{i<z,s>} - 1 - i<z,s>1{|s|<=1}) ν(ds)``."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != (triplet.dim,) or not np.all(np.isfinite(z)):
        raise ValueError(f"z must be a finite vector of length {triplet.dim}")
    gauss = -0.5 * float(z @ triplet.gaussian @ z)
    return complex(gauss, float(triplet.gamma @ z)) + triplet.measure.jump_integral(z)


def tail_function(measure: LevyMeasureSpec, x: float, side: str = "both") -> float:
    """``ν((x, ∞))``, ``ν((-∞, -x))`` or their sum; ``{|s| > x}`` in dimension > 1."""
    if not x > 0:
        raise ValueError(f"tail_function needs x > 0, got {x}")
    return measure.tail(x, side)


@dataclass(frozen=True)
class MomentResult:
    finite: bool
    value: float


def moment_integral(measure: LevyMeasureSpec, r: float, domain: str = "[-1,1]") -> MomentResult:
    """``∫_{[-1,1]} |x|^r ν(dx)`` or ``∫_{[0,1]} x^r ν(dx)``.

    Finiteness is decided analytically per family; the value is only
    computed when finite.
    """
    if not r > 0:
        raise ValueError(f"exponent must be positive, got {r}")
    side = {"[-1,1]": "both", "[0,1]": "+"}.get(domain.replace(" ", ""))
    if side is None:
        raise ValueError(f"domain must be '[-1,1]' or '[0,1]', got {domain!r}")
    if not measure.moment_finite(r):
        if side == "+" and isinstance(measure, StableDensity) and measure.c_plus == 0:
            return MomentResult(True, 0.0)
        if side == "+" and isinstance(measure, TabulatedDensity) and measure.dp[0] == 0:
            return MomentResult(True, measure.abs_moment(r, 0.0, 1.0, "+"))
        return MomentResult(False, math.inf)
    return MomentResult(True, float(measure.abs_moment(r, 0.0, 1.0, side)))


@dataclass(frozen=True)
class PathClass:
    """Path regularity of a Lévy process.

    ``kind`` is one of ``bv_with_drift``, ``bv_no_drift``,
    ``unbounded_variation``, ``has_gaussian``; ``drift`` is set in the BV cases.
    """

    kind: str
    drift: Optional[np.ndarray] = None

    @property
    def bounded_variation(self) -> bool:
        return self.kind.startswith("bv")


def classify_paths(triplet: CharacteristicTriplet, atol: float = 1e-12) -> PathClass:
    if triplet.has_gaussian:
        return PathClass("has_gaussian")
    if not moment_integral(triplet.measure, 1.0).finite:
        return PathClass("unbounded_variation")
    drift = triplet.gamma - triplet.measure.first_moment(0.0, 1.0)
    scale = max(1.0, float(np.abs(triplet.gamma).max()))
    if np.all(np.abs(drift) <= atol * scale):
        return PathClass("bv_no_drift", np.zeros_like(drift))
    return PathClass("bv_with_drift", drift)


def blumenthal_getoor_index(measure: LevyMeasureSpec, method: str = "auto", tol: float = 1e-3) -> float:
    """``inf{r > 0 : ∫_{|x|<=1} |x|^r ν(dx) < ∞}``.

    ``method='auto'`` uses the family's closed form when there is one,
    ``'bisection'`` bisects on analytic finiteness over ``[1e-6, 2]``.
    """
    if method == "auto":
        exact = measure.bg_index_exact()
        if exact is not None:
            return float(exact)
    elif method != "bisection":
        raise ValueError(f"unknown method {method!r}")
    lo, hi = 1e-6, 2.0
    if measure.moment_finite(lo):
        return 0.0
    if not measure.moment_finite(hi):
        return 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if measure.moment_finite(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# scaling functions


@dataclass(frozen=True)
class ScalingFunction:
    """Base for rescaling functions ``f`` with ``f(0) = 0``; ``scale`` multiplies ``f``."""

    scale: float = 1.0

    def domain_max(self) -> float:
        return math.inf

    def _base(self, t):
        raise NotImplementedError

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr <= 0) or np.any(t_arr >= self.domain_max()):
            raise ValueError(f"{type(self).__name__} is only defined for 0 < t < {self.domain_max()}")
        return self.scale * self._base(t_arr)

    def scaled(self, c: float) -> "ScalingFunction":
        """The function ``c * f``."""
        return replace(self, scale=self.scale * c)

    def describe(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Power(ScalingFunction):
    p: float = 1.0

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError(f"power must be positive, got {self.p}")

    def _base(self, t):
        return t ** self.p

    def describe(self):
        return {"kind": "power", "p": self.p, "scale": self.scale}


@dataclass(frozen=True)
class Khintchine(ScalingFunction):
    """``sqrt(2 t ln ln(1/t))``, defined for ``t < 1/e``."""

    def domain_max(self):
        return math.exp(-1.0)

    def _base(self, t):
        return np.sqrt(2.0 * t * np.log(np.log(1.0 / t)))

    def describe(self):
        return {"kind": "khintchine", "scale": self.scale}


@dataclass(frozen=True)
class GeneralLIL(ScalingFunction):
    """``sqrt(t ln ln(1/t)) / h(1/t)`` with ``h`` slowly varying and non-decreasing."""

    h: Callable[[np.ndarray], np.ndarray] = field(default=lambda u: np.ones_like(u))
    name: str = "h"

    def domain_max(self):
        return math.exp(-1.0)

    def _base(self, t):
        return np.sqrt(t * np.log(np.log(1.0 / t))) / self.h(1.0 / t)

    def describe(self):
        return {"kind": "general_lil", "h": self.name, "scale": self.scale}


@dataclass(frozen=True)
class RegularlyVarying(ScalingFunction):
    """``t^index * ell(1/t)`` with ``ell`` slowly varying at infinity."""

    index: float = 0.5
    ell: Callable[[np.ndarray], np.ndarray] = field(default=lambda u: np.ones_like(u))
    name: str = "1"

    def __post_init__(self):
        if not self.index > 0:
            raise ValueError("index must be positive")

    def _base(self, t):
        return t ** self.index * self.ell(1.0 / t)

    def describe(self):
        return {"kind": "regularly_varying", "index": self.index, "ell": self.name, "scale": self.scale}


def scaling_eval(f: ScalingFunction, t: float) -> float:
    return float(f(t))


# ---------------------------------------------------------------------------
# short-time predictions


@dataclass(frozen=True)
class ShortTimePrediction:
    """Predicted a.s. behaviour of ``L_t / f(t)`` as ``t -> 0``.

    ``verdict`` is ``finite_limit``, ``zero_limit``, ``diverges_in_norm`` or
    ``oscillates_lil``; ``value`` holds the limit (finite case) or the LIL
    constants per coordinate direction.
    """

    verdict: str
    rule: str
    value: Optional[np.ndarray] = None
    description: str = ""

    def transferred(self, sigma_x: np.ndarray) -> "ShortTimePrediction":
        """Prediction for ``(X_t - x)/f(t)`` given ``σ(x)``."""
        if self.verdict == "finite_limit":
            return ShortTimePrediction(self.verdict, self.rule, np.atleast_2d(sigma_x) @ self.value,
                                       self.description)
        return self

    def to_dict(self):
        return {"verdict": self.verdict, "rule": self.rule,
                "value": None if self.value is None else np.asarray(self.value).tolist(),
                "description": self.description}


def _close(a, b):
    return math.isclose(a, b, rel_tol=0, abs_tol=1e-12)


def predict_short_time(triplet: CharacteristicTriplet, f: ScalingFunction) -> ShortTimePrediction:
    """Rule-based prediction for ``L_t / f(t)`` as ``t ↓ 0``.

    Supported for :class:`Power` and :class:`Khintchine`; anything else raises
    :class:`UnsupportedPrediction`.
    """
    d = triplet.dim
    if isinstance(f, Khintchine):
        if triplet.has_gaussian:
            consts = np.sqrt(np.diag(triplet.gaussian)) / f.scale
            return ShortTimePrediction("oscillates_lil", "khintchine_lil", consts,
                                       "limsup <u,L_t>/f(t) = sqrt(<u,Au>) per unit direction u")
        return ShortTimePrediction("zero_limit", "khintchine_lil_no_gaussian", np.zeros(d))
    if not isinstance(f, Power):
        raise UnsupportedPrediction(f"no decision rule for scaling function {type(f).__name__}")

    p = f.p
    zero = ShortTimePrediction
    if p < 0.5 and not _close(p, 0.5):
        return zero("zero_limit", "khintchine_lil_p_below_half", np.zeros(d))
    if triplet.has_gaussian:
        if _close(p, 0.5):
            return zero("oscillates_lil", "gaussian_p_half", None,
                        "limsup |L_t|/sqrt(t) = inf, liminf = 0")
        return zero("diverges_in_norm", "gaussian_dominates")

    paths = classify_paths(triplet)
    if _close(p, 0.5):
        p_above = 0.5 + 1e-3
        if moment_integral(triplet.measure, 1.0 / p_above).finite:
            return zero("zero_limit", "p_half_bdm_margin", np.zeros(d))
        raise UnsupportedPrediction("p = 1/2 without Gaussian part and BG index 2 is unresolved")
    if _close(p, 1.0):
        if paths.kind == "bv_with_drift":
            return zero("finite_limit", "shtatland_rogozin_bv", paths.drift / f.scale)
        if paths.kind == "bv_no_drift":
            return zero("zero_limit", "shtatland_rogozin_bv", np.zeros(d))
        return zero("diverges_in_norm", "shtatland_rogozin_not_bv")
    if p > 1.0:
        if paths.kind == "bv_with_drift":
            return zero("diverges_in_norm", "rogozin_nonzero_drift")
        if paths.kind != "bv_no_drift":
            return zero("diverges_in_norm", "not_bv_p_above_one")
    if moment_integral(triplet.measure, 1.0 / p).finite:
        return zero("zero_limit", "bdm_moment_criterion", np.zeros(d))
    return zero("diverges_in_norm", "bdm_moment_criterion")
