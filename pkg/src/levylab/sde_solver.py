"""Strong solutions of ``dX_t = sigma(X_{t-}) dL_t`` on jump-adapted grids.

All discrete objects here (Euler steps, stochastic integrals, realized
covariations) are left-point sums over the interleaved state sequence
``origin, L_{t_0-}, L_{t_0}, L_{t_1-}, L_{t_1}, ...`` of a path. Continuous
steps run from ``L_{t_{i-1}}`` to ``L_{t_i-}`` and jump steps from
``L_{t_i-}`` to ``L_{t_i}``, so jumps are always applied at pre-jump values.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .path_gen import PathSkeleton, refine_to, run_chunked

__all__ = [
    "SolverError",
    "SigmaMap",
    "SolutionPath",
    "JumpResidualLedger",
    "constant_sigma",
    "identity_sigma",
    "affine_sigma",
    "sin_shift_sigma",
    "diag_sin_sigma",
    "poly_trig_sigma",
    "bilinear_sigma",
    "solve_sde",
    "solve_ensemble",
    "stochastic_exponential",
    "stochastic_integral",
    "realized_covariation",
    "integration_by_parts_residual",
    "recover_driver",
    "ito_jump_residual",
]

FD_STEP = 1e-6
FD_RTOL = 1e-5
COND_MAX = 1e12


class SolverError(ArithmeticError):
    """Numerical failure along a path; ``time`` is the first offending time."""

    def __init__(self, message, time=None):
        super().__init__(message if time is None else f"{message} at t={time!r}")
        self.time = time


# ---------------------------------------------------------------------------
# coefficient maps


@dataclass(frozen=True)
class SigmaMap:
    """Coefficient ``sigma: R^n -> R^{n x d}``.

    ``jacobian(x)`` returns an ``(n, d, n)`` array with entry ``[i, k, j] =
    d sigma_ik / d x_j``; ``hessian(x)`` (optional) an ``(n, d, n, n)`` array.
    ``apply(x, dl)`` (optional) computes ``sigma(x) @ dl`` without forming
    ``sigma(x)``; ``scalar`` (optional, n = d = 1) is a float-to-float
    version of ``eval`` used by the solver's fast path. The jacobian is
    checked against central differences at construction and the growth
    bound, if given, is spot-checked.
    """

    n: int
    d: int
    eval: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    growth_bound: Optional[float] = None
    apply: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    name: str = "custom"
    scalar: Optional[Callable[[float], float]] = field(default=None, compare=False)
    validate: bool = field(default=True, compare=False)

    def __post_init__(self):
        if self.validate:
            self._check_jacobian()
            if self.growth_bound is not None:
                self._check_growth()

    def __call__(self, x):
        return self.eval(np.asarray(x, dtype=float))

    def times(self, x, dl):
        """``sigma(x) @ dl``."""
        if self.apply is not None:
            return self.apply(x, dl)
        return self.eval(x) @ dl

    def _check_jacobian(self):
        rng = np.random.default_rng(20240229)
        for _ in range(20):
            x = 2.0 * rng.standard_normal(self.n)
            s = np.asarray(self.eval(x), dtype=float)
            if s.shape != (self.n, self.d):
                raise ValueError(f"sigma returns shape {s.shape}, expected {(self.n, self.d)}")
            jac = np.asarray(self.jacobian(x), dtype=float)
            if jac.shape != (self.n, self.d, self.n):
                raise ValueError(f"jacobian has shape {jac.shape}, expected {(self.n, self.d, self.n)}")
            fd = np.empty_like(jac)
            for j in range(self.n):
                e = np.zeros(self.n)
                e[j] = FD_STEP
                fd[:, :, j] = (self.eval(x + e) - self.eval(x - e)) / (2 * FD_STEP)
            err = np.abs(fd - jac).max()
            if err > FD_RTOL * max(1.0, np.abs(jac).max()):
                raise ValueError(f"jacobian of {self.name} disagrees with finite differences "
                                 f"(max error {err:.3e} at x={x})")

    def _check_growth(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            u = rng.standard_normal(self.n)
            x = u / np.linalg.norm(u) * 10 ** rng.uniform(-2, 6)
            if np.linalg.norm(self.eval(x), 2) > self.growth_bound * (1 + np.linalg.norm(x)):
                raise ValueError(f"growth bound {self.growth_bound} violated at |x|={np.linalg.norm(x):.3e}")


def _const_eval(c, x):
    return c


def _zero_jac(shape, x):
    return np.zeros(shape)


def constant_sigma(c) -> SigmaMap:
    c = np.atleast_2d(np.asarray(c, dtype=float))
    n, d = c.shape
    return SigmaMap(n, d, functools.partial(_const_eval, c), functools.partial(_zero_jac, (n, d, n)),
                    functools.partial(_zero_jac, (n, d, n, n)), float(np.linalg.norm(c, 2)),
                    name="constant")


def identity_sigma(n: int) -> SigmaMap:
    s = constant_sigma(np.eye(n))
    return SigmaMap(n, n, s.eval, s.jacobian, s.hessian, 1.0, name="identity")


def _affine_eval(c0, c1, x):
    return c0 + c1 @ x


def _affine_jac(c1, x):
    return c1


def affine_sigma(c0, c1) -> SigmaMap:
    """``sigma(x) = c0 + sum_j x_j c1[:, :, j]``."""
    c0 = np.atleast_2d(np.asarray(c0, dtype=float))
    n, d = c0.shape
    c1 = np.asarray(c1, dtype=float).reshape(n, d, n)
    bound = max(np.linalg.norm(c0, 2), float(np.sqrt((c1 ** 2).sum())))
    return SigmaMap(n, d, functools.partial(_affine_eval, c0, c1), functools.partial(_affine_jac, c1),
                    functools.partial(_zero_jac, (n, d, n, n)), bound, name="affine")


def _poly_trig_eval(poly, a, b, w, x):
    v = x[0]
    return np.array([[np.polyval(poly[::-1], v) + a * np.sin(w * v) + b * np.cos(w * v)]])


def _poly_trig_jac(poly, a, b, w, x):
    v = x[0]
    dp = np.polyval(np.polyder(poly[::-1]), v) if len(poly) > 1 else 0.0
    return np.array([[[dp + a * w * np.cos(w * v) - b * w * np.sin(w * v)]]])


def _poly_trig_hess(poly, a, b, w, x):
    v = x[0]
    d2 = np.polyval(np.polyder(poly[::-1], 2), v) if len(poly) > 2 else 0.0
    return np.array([[[[d2 - a * w * w * np.sin(w * v) - b * w * w * np.cos(w * v)]]]])


def _poly_trig_scalar(poly, a, b, w, v):
    acc = 0.0
    for c in poly[::-1]:
        acc = acc * v + c
    return acc + a * math.sin(w * v) + b * math.cos(w * v)


def poly_trig_sigma(poly=(0.0,), a=0.0, b=0.0, w=1.0, name="poly_trig") -> SigmaMap:
    """Scalar ``sigma(x) = sum_k poly[k] x^k + a sin(w x) + b cos(w x)``."""
    poly = np.asarray(poly, dtype=float)
    args = (poly, float(a), float(b), float(w))
    bound = None
    if poly.size <= 2:
        bound = float(np.abs(poly).sum() + abs(a) + abs(b))
    return SigmaMap(1, 1, functools.partial(_poly_trig_eval, *args),
                    functools.partial(_poly_trig_jac, *args),
                    functools.partial(_poly_trig_hess, *args), bound, name=name,
                    scalar=functools.partial(_poly_trig_scalar, tuple(poly.tolist()), *args[1:]))


def sin_shift_sigma(shift: float = 2.0) -> SigmaMap:
    """``sigma(x) = shift + sin(x)``."""
    return poly_trig_sigma((shift,), a=1.0, name=f"{shift:g}+sin")


def _diag_eval(a, b, x):
    return np.diag(a + b * np.sin(x))


def _diag_jac(a, b, x):
    n = a.size
    out = np.zeros((n, n, n))
    out[np.arange(n), np.arange(n), np.arange(n)] = b * np.cos(x)
    return out


def _diag_hess(a, b, x):
    n = a.size
    out = np.zeros((n, n, n, n))
    r = np.arange(n)
    out[r, r, r, r] = -b * np.sin(x)
    return out


def diag_sin_sigma(a, b) -> SigmaMap:
    """``sigma(x) = diag(a_i + b_i sin(x_i))``; ``b = 0`` gives a constant diagonal."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.broadcast_to(np.asarray(b, dtype=float), a.shape).copy()
    n = a.size
    return SigmaMap(n, n, functools.partial(_diag_eval, a, b), functools.partial(_diag_jac, a, b),
                    functools.partial(_diag_hess, a, b), float(np.abs(a).max() + np.abs(b).max()),
                    name="diag")


def _unvec(x, n):
    return x.reshape(n, n).T


def _bilinear_eval(m, side, x):
    X = _unvec(x, m)
    eye = np.eye(m)
    return np.kron(eye, X) if side == "left" else np.kron(X.T, eye)


def _bilinear_apply(m, side, x, dl):
    X, D = _unvec(x, m), _unvec(dl, m)
    return (X @ D if side == "left" else D @ X).flatten("F")


def _bilinear_jac(m, side, x):
    k = m * m
    out = np.empty((k, k, k))
    for j in range(k):
        e = np.zeros(k)
        e[j] = 1.0
        out[:, :, j] = _bilinear_eval(m, side, e)
    return out


def bilinear_sigma(m: int, side: str = "left") -> SigmaMap:
    """``vec(X) -> I kron X`` (left, ``d(X) = X dL``) or ``X^T kron I`` (right, ``dY = dL Y``)."""
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    k = m * m
    return SigmaMap(k, k, functools.partial(_bilinear_eval, m, side),
                    functools.partial(_bilinear_jac, m, side),
                    functools.partial(_zero_jac, (k, k, k, k)), 1.0 * np.sqrt(m),
                    functools.partial(_bilinear_apply, m, side), name=f"bilinear_{side}")


# ---------------------------------------------------------------------------
# solutions


@dataclass(frozen=True)
class SolutionPath(PathSkeleton):
    """Solution path; ``origin`` is the initial condition."""

    driver: Optional[PathSkeleton] = field(default=None, repr=False, compare=False)
    sigma: Optional[SigmaMap] = field(default=None, repr=False, compare=False)
    invertible: bool = True


def _euler_scalar(f, x0, seq, times, is_jump_step, substeps):
    lv = seq[:, 0].tolist()
    out = [x0]
    x = x0
    for s in range(len(lv) - 1):
        dl = lv[s + 1] - lv[s]
        if is_jump_step[s] or substeps == 1:
            x = x + f(x) * dl
        else:
            piece = dl / substeps
            for _ in range(substeps):
                x = x + f(x) * piece
        if not math.isfinite(x):
            raise SolverError("non-finite solution state", float(times[s + 1]))
        out.append(x)
    return np.array(out)[:, None]


def _euler_states(sigma: SigmaMap, x0, seq, times, is_jump_step, substeps):
    if sigma.scalar is not None:
        return _euler_scalar(sigma.scalar, float(x0[0]), seq, times, is_jump_step.tolist(), substeps)
    S, n = seq.shape[0], sigma.n
    out = np.empty((S, n))
    x = np.array(x0, dtype=float)
    out[0] = x
    for s in range(S - 1):
        dl = seq[s + 1] - seq[s]
        if is_jump_step[s]:
            x = x + sigma.times(x, dl)
        elif substeps == 1:
            x = x + sigma.times(x, dl)
        else:
            piece = dl / substeps
            for _ in range(substeps):
                x = x + sigma.times(x, piece)
        if not np.all(np.isfinite(x)):
            raise SolverError("non-finite solution state", float(times[s + 1]))
        out[s + 1] = x
    return out


def solve_sde(sigma: SigmaMap, x0, driver: PathSkeleton, substeps: int = 1) -> SolutionPath:
    """Jump-adapted Euler scheme for ``dX = sigma(X_-) dL``, ``X_0 = x0``.

    Jumps are applied exactly at pre-jump states; each continuous step is split
    into ``substeps`` equal pieces of the driver increment. With a pure
    drift-free jump driver the scheme is exact.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (sigma.n,):
        raise ValueError(f"x0 must have length {sigma.n}")
    if driver.dim != sigma.d:
        raise ValueError(f"driver has {driver.dim} components, sigma expects {sigma.d}")
    if int(substeps) != substeps or substeps < 1:
        raise ValueError("substeps must be a positive integer")
    seq, st = driver.sequence()
    is_jump_step = np.zeros(seq.shape[0] - 1, dtype=bool)
    is_jump_step[1::2] = True
    states = _euler_states(sigma, x0, seq, st, is_jump_step, int(substeps))
    left, values = states[1::2].copy(), states[2::2]
    left[~driver.jump] = values[~driver.jump]
    return SolutionPath(driver.times, values, left, driver.jump, x0, driver.grid, driver.seed_id,
                        (sigma.n,), driver=driver, sigma=sigma)


def _solve_chunk(sigma, x0, substeps, drivers, lo, hi):
    return [solve_sde(sigma, x0, drivers[i], substeps) for i in range(lo, hi)]


def solve_ensemble(sigma: SigmaMap, x0, drivers, substeps: int = 1, workers: int = 1):
    """Solve for every driver path; result order matches ``drivers``."""
    drivers = list(drivers)
    fn = functools.partial(_solve_chunk, sigma, x0, substeps, drivers)
    return run_chunked(fn, len(drivers), workers)


def stochastic_exponential(driver: PathSkeleton, side: str = "left") -> SolutionPath:
    """Left (``dX = X_- dL``) or right (``dY = dL Y_-``) stochastic exponential, ``X_0 = Id``.

    ``invertible`` is False iff some jump has ``det(Id + dL) == 0``.
    """
    if driver.is_matrix:
        n, d = driver.shape
    elif driver.dim == 1:
        n = d = 1
    else:
        raise ValueError("stochastic exponential needs a square matrix driver")
    if n != d:
        raise ValueError("stochastic exponential needs a square matrix driver")
    sigma = bilinear_sigma(n, side)
    sol = solve_sde(sigma, np.eye(n).flatten("F"), driver)
    dets = [np.linalg.det(np.eye(n) + dl.reshape(n, n).T) for dl in driver.jump_sizes]
    return sol.replace(shape=(n, n) if driver.is_matrix else (1,),
                       invertible=bool(np.all(np.asarray(dets) != 0.0)))


# ---------------------------------------------------------------------------
# discrete calculus on the state sequence


def _align(*paths):
    times = functools.reduce(np.union1d, [p.times for p in paths])
    return [p if p.times.size == times.size else refine_to(p, times) for p in paths]


def _mat_shape(path, as_row=False):
    if path.is_matrix:
        return path.shape
    return (1, path.dim) if as_row else (path.dim, 1)


def _seq_mats(path, shape):
    seq, _ = path.sequence()
    n, d = shape
    return seq.reshape(-1, d, n).transpose(0, 2, 1)


def _from_steps(steps, template: PathSkeleton, jump, shape):
    # steps: (2M, n, m) per-step contributions
    n, m = shape
    cum = np.cumsum(steps.transpose(0, 2, 1).reshape(steps.shape[0], -1), axis=0)
    left, values = cum[0::2].copy(), cum[1::2]
    left[~jump] = values[~jump]
    return PathSkeleton(template.times, values, left, jump, np.zeros(n * m), template.grid,
                        template.seed_id, (n, m))


def _integral_steps(H, L, side):
    dL = np.diff(L, axis=0)
    return H[:-1] @ dL if side == "left" else dL @ H[:-1]


def stochastic_integral(integrand: PathSkeleton, driver: PathSkeleton, side: str = "left",
                        integrand_row: bool = False, driver_row: bool = False) -> PathSkeleton:
    """Left-point sums ``int H_- dL`` (left) or ``int dL H_-`` (right).

    Vector paths are read as columns unless the corresponding ``*_row`` flag is
    set. Pre-jump integrand values are used at jump times.
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    H, L = _align(integrand, driver)
    hs, ls = _mat_shape(H, integrand_row), _mat_shape(L, driver_row)
    if side == "left" and hs[1] != ls[0] or side == "right" and ls[1] != hs[0]:
        raise ValueError(f"shapes {hs} and {ls} do not chain for a {side} integral")
    steps = _integral_steps(_seq_mats(H, hs), _seq_mats(L, ls), side)
    return _from_steps(steps, L, L.jump.copy(), steps.shape[1:])


def realized_covariation(pathX: PathSkeleton, pathY: PathSkeleton) -> PathSkeleton:
    """``[X, Y]_t``: sum of ``dX dY^T`` (vectors) or ``dX dY`` (matrices) over all steps."""
    X, Y = _align(pathX, pathY)
    if X.is_matrix != Y.is_matrix:
        raise ValueError("cannot mix matrix and vector paths")
    xs = _mat_shape(X)
    ys = _mat_shape(Y, as_row=True)
    if xs[1] != ys[0]:
        raise ValueError(f"shapes {xs} and {ys} do not chain")
    dX = np.diff(_seq_mats(X, xs), axis=0)
    dY = np.diff(_seq_mats(Y, ys), axis=0)
    steps = dX @ dY
    return _from_steps(steps, X, X.jump | Y.jump, steps.shape[1:])


def integration_by_parts_residual(pathX: PathSkeleton, pathY: PathSkeleton) -> float:
    """Relative residual of the discrete product rule.

    ``max_t |int X_- dY + int dX Y_- + [X,Y]_t - (X_t Y_t - X_0 Y_0)|`` divided
    by ``max(1, max_t |X_t| max_t |Y_t|)`` (entrywise maxima), over all states.
    """
    X, Y = _align(pathX, pathY)
    xs, ys = _mat_shape(X), _mat_shape(Y, as_row=True)
    Xs, Ys = _seq_mats(X, xs), _seq_mats(Y, ys)
    dX, dY = np.diff(Xs, axis=0), np.diff(Ys, axis=0)
    total = np.cumsum(Xs[:-1] @ dY + dX @ Ys[:-1] + dX @ dY, axis=0)
    target = Xs[1:] @ Ys[1:] - Xs[0] @ Ys[0]
    scale = max(1.0, float(np.abs(Xs).max() * np.abs(Ys).max()))
    return float(np.abs(total - target).max()) / scale


def recover_driver(sigma: SigmaMap, solution: PathSkeleton) -> PathSkeleton:
    """``L_t = int sigma(X_-)^{-1} dX`` by left-point sums.

    Raises :class:`SolverError` at the first state where ``sigma`` is singular
    or its condition number exceeds ``1e12``.
    """
    if sigma.n != sigma.d:
        raise ValueError("driver recovery needs a square sigma")
    seq, st = solution.sequence()
    dX = np.diff(seq, axis=0)
    steps = np.empty_like(dX)
    scalar = sigma.n == 1
    for s in range(dX.shape[0]):
        m = np.asarray(sigma.eval(seq[s]), dtype=float)
        if scalar:
            v = m[0, 0]
            if v == 0.0 or not np.isfinite(v):
                raise SolverError("sigma is singular", float(st[s]))
            steps[s] = dX[s] / v
            continue
        if not np.all(np.isfinite(m)) or np.linalg.cond(m) > COND_MAX:
            raise SolverError(f"sigma is ill-conditioned (cond > {COND_MAX:.0e})", float(st[s]))
        steps[s] = np.linalg.solve(m, dX[s])
    cum = np.cumsum(steps, axis=0)
    left, values = cum[0::2].copy(), cum[1::2]
    left[~solution.jump] = values[~solution.jump]
    return PathSkeleton(solution.times, values, left, solution.jump, np.zeros(sigma.d),
                        solution.grid, solution.seed_id)


@dataclass(frozen=True)
class JumpResidualLedger:
    """Second-order remainders ``sigma(X) - sigma(X_-) - D sigma(X_-) dX`` per jump."""

    times: np.ndarray
    residuals: np.ndarray
    ratios: np.ndarray

    def __len__(self):
        return self.times.size


def ito_jump_residual(sigma: SigmaMap, solution: PathSkeleton) -> JumpResidualLedger:
    """Residual matrices and ``|residual| / |dX|^2`` at every jump of ``solution``."""
    idx = np.flatnonzero(solution.jump)
    res = np.empty((idx.size, sigma.n, sigma.d))
    ratios = np.empty(idx.size)
    for r, i in enumerate(idx):
        xl, xv = solution.left[i], solution.values[i]
        dx = xv - xl
        res[r] = sigma.eval(xv) - sigma.eval(xl) - sigma.jacobian(xl) @ dx
        nrm = float(dx @ dx)
        ratios[r] = np.linalg.norm(res[r]) / nrm if nrm > 0 else 0.0
    return JumpResidualLedger(solution.times[idx], res, ratios)
