"""Driver path samplers on geometric short-time grids.

Every path carries its left limits explicitly: at a jump time ``tau`` the
stored ``left`` row is ``L_{tau-}`` and ``values`` is ``L_tau``; at all other
times the two rows are identical. Matrix-valued paths are stored column-major
(``vec(M) = M.flatten('F')``).

Randomness comes from per-path Philox streams keyed by ``(master_seed,
path_index)``, so ensembles are identical irrespective of worker count.
"""

from __future__ import annotations

import csv
import functools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .levy_core import ConfigurationError, LevyMeasureSpec, StableDensity, stable_triplet
from .stable import stable_increments

__all__ = [
    "TimeGrid",
    "make_grid",
    "PathSkeleton",
    "rng_stream",
    "seed_id",
    "sample_brownian",
    "sample_compound_poisson",
    "sample_stable",
    "sample_truncated_infinite_activity",
    "sample_stable_series",
    "sample_deterministic",
    "assemble_matrix_driver",
    "refine_to",
    "generate_ensemble",
    "dump_paths",
    "PATH_CSV_HEADER",
]

PATH_CSV_HEADER = ["path_id", "time", "component_index", "value", "is_pre_jump"]


@dataclass(frozen=True)
class TimeGrid:
    """Geometric grid ``t_max * theta**k``, ``k = 0..K``, stored increasing."""

    t_max: float
    theta: float
    K: int
    times: np.ndarray = field(repr=False, compare=False)

    def __len__(self):
        return self.times.size


def make_grid(t_max: float, theta: float, K: int) -> TimeGrid:
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    if not t_max > 0 or not math.isfinite(t_max):
        raise ValueError(f"t_max must be positive, got {t_max}")
    if int(K) != K or K < 1:
        raise ValueError(f"K must be a positive integer, got {K}")
    t = t_max * theta ** np.arange(K, -1, -1, dtype=float)
    t[-1] = t_max
    if t[0] <= 0:
        raise ValueError("grid underflows to zero")
    t.setflags(write=False)
    return TimeGrid(float(t_max), float(theta), int(K), t)


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PathSkeleton:
    """A path on a jump-adapted time set.

    Attributes
    ----------
    times : (M,) strictly increasing positive times; contains every grid time.
    values : (M, k) path values ``L_t``.
    left : (M, k) left limits ``L_{t-}``; equal to ``values`` off jumps.
    jump : (M,) bool mask of jump times.
    origin : (k,) value at time 0.
    grid : the :class:`TimeGrid` the path was generated on.
    seed_id : 64-bit stream identifier.
    shape : ``(k,)`` for vector paths or ``(n, d)`` for matrix paths.
    """

    times: np.ndarray
    values: np.ndarray
    left: np.ndarray
    jump: np.ndarray
    origin: np.ndarray
    grid: Optional[TimeGrid] = None
    seed_id: int = 0
    shape: Tuple[int, ...] = ()

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        lft = np.asarray(self.left, dtype=float).reshape(v.shape)
        o = np.asarray(self.origin, dtype=float).reshape(v.shape[1])
        j = np.asarray(self.jump, dtype=bool).reshape(t.shape)
        if t.ndim != 1 or v.shape[0] != t.size:
            raise ValueError("times and values disagree in length")
        if t.size and (t[0] <= 0 or np.any(np.diff(t) <= 0)):
            raise ValueError("times must be positive and strictly increasing")
        for name, arr in (("times", t), ("values", v), ("left", lft), ("jump", j), ("origin", o)):
            object.__setattr__(self, name, _freeze(arr))
        shape = tuple(self.shape) or (v.shape[1],)
        if int(np.prod(shape)) != v.shape[1]:
            raise ValueError(f"shape {shape} does not match {v.shape[1]} components")
        object.__setattr__(self, "shape", shape)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def is_matrix(self) -> bool:
        return len(self.shape) == 2

    @property
    def jump_times(self) -> np.ndarray:
        return self.times[self.jump]

    @property
    def jump_sizes(self) -> np.ndarray:
        return self.values[self.jump] - self.left[self.jump]

    @property
    def jump_ledger(self):
        return list(zip(self.jump_times.tolist(), self.jump_sizes))

    def ledger_error(self) -> float:
        """Largest ``|values - left|`` at non-jump times (zero for consistent paths)."""
        off = ~self.jump
        if not off.any():
            return 0.0
        return float(np.abs(self.values[off] - self.left[off]).max())

    def sequence(self) -> Tuple[np.ndarray, np.ndarray]:
        """Interleaved states ``origin, left_0, value_0, left_1, value_1, ...`` and their times."""
        M, k = self.values.shape
        seq = np.empty((2 * M + 1, k))
        seq[0] = self.origin
        seq[1::2] = self.left
        seq[2::2] = self.values
        st = np.empty(2 * M + 1)
        st[0] = 0.0
        st[1::2] = self.times
        st[2::2] = self.times
        return seq, st

    def index_of(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.searchsorted(self.times, t)
        bad = (idx >= self.times.size) | (self.times[np.minimum(idx, self.times.size - 1)] != t)
        if np.any(bad):
            raise KeyError(f"times {t[bad][:3]} are not path times")
        return idx

    def at(self, t) -> np.ndarray:
        """Values at the given path times, shape ``(len(t), k)``."""
        return self.values[self.index_of(t)]

    def grid_values(self) -> np.ndarray:
        if self.grid is None:
            return self.values
        return self.at(self.grid.times)

    def matrices(self, which: str = "values") -> np.ndarray:
        """Values as ``(M, n, d)`` matrices (column-major unvec)."""
        arr = getattr(self, which)
        n, d = self.shape if self.is_matrix else (self.dim, 1)
        return arr.reshape(-1, d, n).transpose(0, 2, 1)

    def replace(self, **kw) -> "PathSkeleton":
        return replace(self, **kw)

    def transpose(self) -> "PathSkeleton":
        if not self.is_matrix:
            raise ValueError("transpose needs a matrix path")
        n, d = self.shape

        def tr(a):
            return a.reshape(-1, d, n).transpose(0, 2, 1).reshape(a.shape[0], -1)

        return self.replace(values=tr(self.values), left=tr(self.left),
                            origin=tr(self.origin[None])[0], shape=(d, n))

    def linear_combination(self, a: float, other: "PathSkeleton", b: float) -> "PathSkeleton":
        """``a * self + b * other`` on a shared time set."""
        if not np.array_equal(self.times, other.times):
            raise ValueError("paths must share their time set")
        return self.replace(values=a * self.values + b * other.values,
                            left=a * self.left + b * other.left,
                            origin=a * self.origin + b * other.origin,
                            jump=self.jump | other.jump)


# ---------------------------------------------------------------------------
# rng


def seed_id(master_seed: int, path_index: int) -> int:
    return ((int(master_seed) & 0xFFFFFFFF) << 32 | (int(path_index) & 0xFFFFFFFF))


def rng_stream(master_seed: int, path_index: int) -> np.random.Generator:
    """Independent counter-based stream for one path."""
    if master_seed < 0 or path_index < 0:
        raise ValueError("seeds and path indices must be nonnegative")
    return np.random.Generator(np.random.Philox(key=[int(master_seed), int(path_index)]))


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


# ---------------------------------------------------------------------------
# time sets


def _base_times(grid: TimeGrid, extra_times=None, max_step=None) -> np.ndarray:
    t = np.asarray(grid.times, dtype=float)
    if extra_times is not None:
        extra = np.asarray(extra_times, dtype=float)
        if np.any(extra <= 0) or np.any(extra > grid.t_max):
            raise ValueError("extra times must lie in (0, t_max]")
        t = np.union1d(t, extra)
    if max_step is not None:
        if not max_step > 0:
            raise ValueError("max_step must be positive")
        edges = np.concatenate([[0.0], t])
        pieces = [t]
        for a, b in zip(edges[:-1], edges[1:]):
            m = int(math.ceil((b - a) / max_step))
            if m > 1:
                pieces.append(a + (b - a) * np.arange(1, m) / m)
        t = np.unique(np.concatenate(pieces))
    return t


def _from_increments(times, incr, jump_idx=None, jump_sizes=None, grid=None, sid=0, shape=()):
    """Assemble a path from continuous increments and jumps at given indices."""
    M, k = incr.shape
    jump = np.zeros(M, dtype=bool)
    steps = np.zeros((2 * M, k))
    steps[0::2] = incr
    if jump_idx is not None and len(jump_idx):
        np.add.at(steps[1::2], jump_idx, jump_sizes)
        jump[jump_idx] = True
    # sequential sums over left_0, value_0, left_1, ... keep value = left + jump
    seq = np.cumsum(steps, axis=0)
    left, values = seq[0::2], seq[1::2]
    left[~jump] = values[~jump]
    return PathSkeleton(times, values, left.copy(), jump, np.zeros(k), grid, sid, shape)


def _merge_jumps(base, jump_t):
    """Insert jump times into ``base``; returns merged times and jump indices."""
    if jump_t.size and np.intersect1d(base, jump_t).size:
        raise ConfigurationError("a jump time coincides with a grid time")
    times = np.union1d(base, jump_t)
    idx = np.searchsorted(times, jump_t)
    return times, idx


# ---------------------------------------------------------------------------
# samplers


def _psd_factor(A):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not np.allclose(A, A.T):
        raise ConfigurationError("covariance must be symmetric")
    w, V = np.linalg.eigh(A)
    scale = max(1.0, float(np.abs(A).max()))
    if w.min() < -1e-12 * scale:
        raise ConfigurationError(f"covariance is not positive semidefinite (min eigenvalue {w.min():.3e})")
    return V * np.sqrt(np.clip(w, 0.0, None))


def sample_deterministic(grid: TimeGrid, drift, extra_times=None, max_step=None, sid=0) -> PathSkeleton:
    """The path ``L_t = drift * t``."""
    drift = np.atleast_1d(np.asarray(drift, dtype=float))
    t = _base_times(grid, extra_times, max_step)
    dt = np.diff(np.concatenate([[0.0], t]))
    return _from_increments(t, dt[:, None] * drift[None, :], grid=grid, sid=sid)


def sample_brownian(grid: TimeGrid, A, drift, rng, extra_times=None, max_step=None,
                    sid: int = 0) -> PathSkeleton:
    """Brownian motion with covariance ``A`` per unit time and drift ``drift``."""
    rng = _rng(rng)
    factor = _psd_factor(A)
    d = factor.shape[0]
    drift = np.broadcast_to(np.asarray(drift, dtype=float), (d,))
    t = _base_times(grid, extra_times, max_step)
    dt = np.diff(np.concatenate([[0.0], t]))
    z = rng.standard_normal((t.size, d))
    incr = (z @ factor.T) * np.sqrt(dt)[:, None] + dt[:, None] * drift[None, :]
    return _from_increments(t, incr, grid=grid, sid=sid)


def _poisson_times(rng, rate, t_max):
    # exponential spacings until t_max
    if rate == 0:
        return np.empty(0)
    out = []
    t = 0.0
    n_guess = int(rate * t_max + 5 * math.sqrt(rate * t_max) + 10)
    while True:
        gaps = rng.exponential(1.0 / rate, size=n_guess)
        arr = t + np.cumsum(gaps)
        out.append(arr[arr <= t_max])
        if arr[-1] > t_max:
            break
        t = arr[-1]
    return np.concatenate(out)


def sample_compound_poisson(grid: TimeGrid, rate: float, jump_law, drift, rng,
                            extra_times=None, max_step=None, sid: int = 0) -> PathSkeleton:
    """``drift * t`` plus jumps at Poisson(``rate``) times with law ``jump_law``."""
    if rate < 0:
        raise ConfigurationError("rate must be nonnegative")
    rng = _rng(rng)
    d = jump_law.dim
    drift = np.broadcast_to(np.asarray(drift, dtype=float), (d,))
    base = _base_times(grid, extra_times, max_step)
    jt = _poisson_times(rng, rate, grid.t_max)
    sizes = jump_law.sample(rng, jt.size) if jt.size else np.zeros((0, d))
    times, idx = _merge_jumps(base, jt)
    dt = np.diff(np.concatenate([[0.0], times]))
    return _from_increments(times, dt[:, None] * drift[None, :], idx, sizes, grid, sid)


def sample_stable(grid: TimeGrid, alpha: float, beta: float, scale: float, rng,
                  loc: float = 0.0, extra_times=None, max_step=None, sid: int = 0) -> PathSkeleton:
    """Stable Lévy process with ``L_1 ~ S1(scale, beta, loc)`` via CMS increments.

    Jumps are not resolved individually; the jump mask is empty.
    """
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
    rng = _rng(rng)
    t = _base_times(grid, extra_times, max_step)
    dt = np.diff(np.concatenate([[0.0], t]))
    incr = stable_increments(rng, alpha, beta, scale, loc, dt)
    return _from_increments(t, incr[:, None], grid=grid, sid=sid)


def _small_jump_parts(measure: LevyMeasureSpec, eps: float):
    comp = measure.first_moment(eps, 1.0) if eps < 1.0 else -measure.first_moment(1.0, eps)
    return np.atleast_1d(comp), measure.small_jump_variance(eps)


def sample_truncated_infinite_activity(grid: TimeGrid, measure: LevyMeasureSpec, eps: float,
                                       gaussian_correction: Optional[bool], rng, gamma=0.0,
                                       extra_times=None, max_step=None,
                                       sid: int = 0) -> PathSkeleton:
    """Jumps above ``eps`` exactly, small jumps by their mean (and optionally variance).

    The location ``gamma`` follows the ``|s| <= 1`` truncation convention. With
    ``gaussian_correction=None`` the correction is switched on iff
    ``sigma_eps / eps >= 5``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    rng = _rng(rng)
    rate = measure.tail(eps, "both")
    if not math.isfinite(rate):
        raise ConfigurationError(f"infinite mass above eps={eps}")
    comp, var = _small_jump_parts(measure, eps)
    if gaussian_correction is None:
        gaussian_correction = math.sqrt(var) / eps >= 5.0
    d = measure.dim
    drift = np.broadcast_to(np.asarray(gamma, dtype=float), (d,)) - comp
    base = _base_times(grid, extra_times, max_step)
    jt = _poisson_times(rng, rate, grid.t_max)
    sizes = measure.sample_large(rng, jt.size, eps) if jt.size else np.zeros((0, d))
    times, idx = _merge_jumps(base, jt)
    dt = np.diff(np.concatenate([[0.0], times]))
    incr = dt[:, None] * drift[None, :]
    if gaussian_correction and var > 0:
        incr = incr + math.sqrt(var) * np.sqrt(dt)[:, None] * rng.standard_normal((times.size, d))
    return _from_increments(times, incr, idx, sizes, grid, sid)


def sample_stable_series(grid: TimeGrid, alpha: float, beta: float, scale: float, rng,
                         eta: float = 1e-2, eps_floor: float = 1e-6,
                         sid: int = 0) -> PathSkeleton:
    """Stable Lévy process by truncated shot noise with a jump ledger.

    On each grid cell ``(t_{k+1}, t_k]`` jumps larger than
    ``eps_k = max(eps_floor, eta * t_k^{1/alpha})`` are drawn exactly and the
    smaller ones are replaced by their compensator. The truncation level tracks
    the natural jump scale ``t^{1/alpha}``, so the neglected quadratic variation
    is a fixed fraction of order ``eta^{2-alpha}`` at every time scale.
    """
    trip = stable_triplet(alpha, beta, scale)
    m: StableDensity = trip.measure
    rng = _rng(rng)
    edges = np.concatenate([[0.0], grid.times])
    jt, sizes, drift = [], [], np.empty(grid.times.size)
    for i, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        eps = max(eps_floor, eta * b ** (1.0 / alpha))
        comp, _ = _small_jump_parts(m, eps)
        drift[i] = trip.gamma[0] - comp[0]
        n = rng.poisson((b - a) * m.tail(eps))
        if n:
            jt.append(np.sort(rng.uniform(a, b, size=n)))
            sizes.append(m.sample_large(rng, n, eps))
    jt = np.concatenate(jt) if jt else np.empty(0)
    sizes = np.concatenate(sizes) if sizes else np.zeros((0, 1))
    times, idx = _merge_jumps(grid.times, jt)
    dt = np.diff(np.concatenate([[0.0], times]))
    cell = np.searchsorted(grid.times, times)
    return _from_increments(times, (dt * drift[cell])[:, None], idx, sizes, grid, sid)


# ---------------------------------------------------------------------------
# combining paths


def refine_to(path: PathSkeleton, times) -> PathSkeleton:
    """Insert extra (non-jump) times into a path.

    Between consecutive path times the continuous part is interpolated
    linearly, which is exact for drift-plus-jump paths.
    """
    new = np.union1d(path.times, np.asarray(times, dtype=float))
    if new.size == path.times.size:
        return path
    if new[0] <= 0:
        raise ValueError("times must be positive")
    old_t = np.concatenate([[0.0], path.times])
    old_v = np.vstack([path.origin[None], path.values])
    pos = np.searchsorted(path.times, new)  # index of first old time >= new
    present = (pos < path.times.size) & (path.times[np.minimum(pos, path.times.size - 1)] == new)
    values = np.empty((new.size, path.dim))
    left = np.empty_like(values)
    jump = np.zeros(new.size, dtype=bool)
    values[present] = path.values[pos[present]]
    left[present] = path.left[pos[present]]
    jump[present] = path.jump[pos[present]]
    miss = ~present
    if np.any(pos[miss] >= path.times.size):
        raise ValueError("cannot extrapolate past the last path time")
    i1 = pos[miss]
    t0, t1 = old_t[i1], path.times[i1]
    v0, v1 = old_v[i1], path.left[i1]
    w = ((new[miss] - t0) / (t1 - t0))[:, None]
    values[miss] = v0 + w * (v1 - v0)
    left[miss] = values[miss]
    return path.replace(times=new, values=values, left=left, jump=jump)


def assemble_matrix_driver(components) -> PathSkeleton:
    """Stack an ``n x d`` array of scalar paths into a matrix path (column-major)."""
    comp = np.asarray(components, dtype=object)
    if comp.ndim != 2:
        raise ValueError("components must be an n x d array of paths")
    n, d = comp.shape
    grids = {(p.grid.t_max, p.grid.theta, p.grid.K) if p.grid else None for p in comp.flat}
    if len(grids) != 1:
        raise ValueError("component paths live on different grids")
    if any(p.dim != 1 for p in comp.flat):
        raise ValueError("components must be scalar paths")
    times = functools.reduce(np.union1d, [p.times for p in comp.flat])
    cols = [refine_to(comp[i, j], times) for j in range(d) for i in range(n)]
    values = np.hstack([c.values for c in cols])
    left = np.hstack([c.left for c in cols])
    jump = np.any([c.jump for c in cols], axis=0)
    origin = np.concatenate([c.origin for c in cols])
    first = comp.flat[0]
    return PathSkeleton(times, values, left, jump, origin, first.grid, first.seed_id, (n, d))


# ---------------------------------------------------------------------------
# ensembles


def _one(sampler, master_seed, i):
    return sampler(rng=rng_stream(master_seed, i), sid=seed_id(master_seed, i))


def _chunk(sampler, master_seed, lo, hi):
    return [_one(sampler, master_seed, i) for i in range(lo, hi)]


def run_chunked(fn, n: int, workers: int = 1, chunk: int = 256):
    """Evaluate ``fn(lo, hi)`` over index chunks, concatenating in index order."""
    bounds = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
    if workers <= 1 or len(bounds) == 1:
        parts = [fn(lo, hi) for lo, hi in bounds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(fn, lo, hi) for lo, hi in bounds]
            parts = [f.result() for f in futs]
    return [p for part in parts for p in part]


def generate_ensemble(sampler: Callable, n_paths: int, master_seed: int,
                      workers: int = 1) -> list:
    """``n_paths`` independent paths, path ``i`` driven by ``rng_stream(master_seed, i)``.

    ``sampler`` must accept keyword arguments ``rng`` and ``sid`` and be
    picklable when ``workers > 1`` (e.g. a :func:`functools.partial`).
    """
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    return run_chunked(functools.partial(_chunk, sampler, master_seed), n_paths, workers)


def dump_paths(paths: Sequence[PathSkeleton], fh, kind: Optional[str] = None) -> None:
    """Write paths as CSV rows ``path_id,time,component_index,value,is_pre_jump[,kind]``.

    Pre-jump rows are written only at jump times, before the post-jump row.
    """
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(PATH_CSV_HEADER + (["kind"] if kind else []))
    tail = [kind] if kind else []
    for pid, p in enumerate(paths):
        for i, t in enumerate(p.times):
            rows = [(p.left[i], 1)] if p.jump[i] else []
            rows.append((p.values[i], 0))
            for vec, pre in rows:
                for c, v in enumerate(vec):
                    w.writerow([pid, repr(float(t)), c, repr(float(v)), pre] + tail)
