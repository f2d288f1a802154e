"""Monte Carlo verifiers for short-time scaling statements.

Almost sure limits cannot be observed from finite data. The verifiers here
use robust surrogates on geometric grids instead: per-time medians over
paths, log-log trends with path-bootstrap confidence intervals, and the
factor-10 decrease rule (the median at the smallest time is at most a tenth
of the median at the largest time).
"""

from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import spatial, stats

from .levy_core import ScalingFunction, ShortTimePrediction
from .path_gen import PathSkeleton, generate_ensemble, make_grid
from .sde_solver import SigmaMap, realized_covariation, solve_ensemble, stochastic_integral
from .stable import stable_cdf

__all__ = [
    "RescaledEnsemble",
    "ScalingReport",
    "LimsupEstimate",
    "ClusterSet",
    "EnergyTest",
    "rescale",
    "estimate_limit",
    "qv_decay_check",
    "coupling_gap",
    "limsup_estimate",
    "cluster_set_estimate",
    "energy_distance_test",
    "ks_distance_to_stable",
    "verify_distributional_transfer",
    "verify_in_probability",
    "integral_lemma_check",
    "REPORT_CSV_HEADER",
]

REPORT_CSV_HEADER = ["time", "median", "q25", "q75", "max", "n_paths"]
N_BOOT = 200
DECREASE_FACTOR = 10.0
DIVERGENCE_SLOPE = -0.1


@dataclass(frozen=True)
class RescaledEnsemble:
    """``(X_t - center) / f(t)`` for every path and grid time.

    ``values`` has shape ``(N, T, k)`` with times increasing along axis 1.
    """

    times: np.ndarray
    values: np.ndarray
    f: ScalingFunction
    center: np.ndarray

    def __post_init__(self):
        if self.values.shape[0] < 2:
            raise ValueError("an ensemble needs at least two paths")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("rescaled values must be finite")

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.values, axis=2)


def _quantiles(stat):
    # stat: (N, T); reductions over sorted data are order independent
    q25, med, q75 = np.quantile(stat, [0.25, 0.5, 0.75], axis=0)
    return med, q25, q75, stat.max(axis=0)


@dataclass
class ScalingReport:
    """Outcome of one verifier.

    ``verdict`` is one of ``converges_to``, ``diverges_in_norm``,
    ``oscillates``, ``inconclusive`` (or ``pass`` / ``fail`` for tests that
    are not limit statements). ``median``, ``q25``, ``q75``, ``max`` are
    per-time summaries of the verifier's main statistic.
    """

    name: str
    verdict: str
    times: np.ndarray
    median: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    max: np.ndarray
    n_paths: int
    limit: Optional[np.ndarray] = None
    slope: Optional[float] = None
    slope_ci: Optional[tuple] = None
    prediction: Optional[ShortTimePrediction] = None
    agreement: Optional[bool] = None
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        if self.agreement is not None:
            return bool(self.agreement)
        return self.verdict in ("converges_to", "pass")

    @classmethod
    def from_stat(cls, name, times, stat, **kw):
        med, q25, q75, mx = _quantiles(np.asarray(stat, dtype=float))
        return cls(name, kw.pop("verdict", "inconclusive"), np.asarray(times), med, q25, q75, mx,
                   int(np.shape(stat)[0]), **kw)

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, np.ndarray):
                return [clean(x) for x in v.tolist()]
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            if isinstance(v, dict):
                return {str(k): clean(x) for k, x in v.items()}
            if isinstance(v, (np.floating, float)):
                v = float(v)
                return v if math.isfinite(v) else repr(v)
            if isinstance(v, (np.integer,)):
                return int(v)
            if isinstance(v, np.bool_):
                return bool(v)
            if isinstance(v, ShortTimePrediction):
                return clean(v.to_dict())
            return v

        return clean({
            "name": self.name, "verdict": self.verdict, "passed": self.passed,
            "agreement": self.agreement, "n_paths": self.n_paths,
            "limit": self.limit, "slope": self.slope, "slope_ci": self.slope_ci,
            "prediction": self.prediction, "extra": self.extra,
            "per_time": {"time": self.times, "median": self.median, "q25": self.q25,
                         "q75": self.q75, "max": self.max},
        })

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_CSV_HEADER)
        for row in zip(self.times, self.median, self.q25, self.q75, self.max):
            w.writerow([repr(float(v)) for v in row] + [self.n_paths])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# rescaling and limit estimation


def _common_times(paths, times):
    if times is not None:
        return np.asarray(times, dtype=float)
    g = paths[0].grid
    if g is None:
        raise ValueError("paths carry no grid; pass times explicitly")
    return g.times


def rescale(paths: Sequence[PathSkeleton], f: ScalingFunction, center=None,
            times=None) -> RescaledEnsemble:
    """``(value - center) / f(t)`` at the grid times; ``center`` defaults to each path's origin."""
    paths = list(paths)
    times = _common_times(paths, times)
    ft = f(times)
    vals = np.stack([p.at(times) for p in paths])
    if center is None:
        c = np.stack([p.origin for p in paths])[:, None, :]
        center_out = paths[0].origin
    else:
        center_out = np.atleast_1d(np.asarray(center, dtype=float))
        c = center_out[None, None, :]
    return RescaledEnsemble(times, (vals - c) / ft[None, :, None], f, center_out)


def _loglog_slope(times, y, floor):
    return float(np.polyfit(np.log(times), np.log(np.maximum(y, floor)), 1)[0])


def _dispersion(R):
    # R: (..., N, T, k) -> v_hat (..., k), dispersion (..., T), median norm (..., T)
    v_hat = np.median(R[..., 0, :], axis=-2)
    disp = np.median(np.linalg.norm(R - v_hat[..., None, None, :], axis=-1), axis=-2)
    return v_hat, disp, np.median(np.linalg.norm(R, axis=-1), axis=-2)


def _bootstrap_slopes(R, times, floor, n_boot, seed):
    rng = np.random.default_rng(seed)
    N = R.shape[0]
    sd, sm = np.empty(n_boot), np.empty(n_boot)
    chunk = max(1, int(5e6 // R[0].size))
    for lo in range(0, n_boot, chunk):
        hi = min(lo + chunk, n_boot)
        idx = rng.integers(0, N, size=(hi - lo, N))
        _, disp, med = _dispersion(R[idx])
        for b in range(hi - lo):
            sd[lo + b] = _loglog_slope(times, disp[b], floor)
            sm[lo + b] = _loglog_slope(times, med[b], floor)
    return np.percentile(sd, [2.5, 97.5]), np.percentile(sm, [2.5, 97.5])


def _agrees(pred: ShortTimePrediction, verdict, v_hat, med_norm_top):
    if pred.verdict == "finite_limit":
        target = np.asarray(pred.value, dtype=float)
        return verdict == "converges_to" and \
            np.linalg.norm(v_hat - target) <= 0.05 * np.linalg.norm(target)
    if pred.verdict == "zero_limit":
        return verdict == "converges_to" and np.linalg.norm(v_hat) <= 0.1 * med_norm_top
    if pred.verdict == "diverges_in_norm":
        return verdict == "diverges_in_norm"
    return verdict in ("oscillates", "inconclusive")


def estimate_limit(re: RescaledEnsemble, prediction: Optional[ShortTimePrediction] = None,
                   sigma_x=None, n_boot: int = N_BOOT, seed: int = 0,
                   name: str = "estimate_limit") -> ScalingReport:
    """Classify the short-time behaviour of a rescaled ensemble.

    The candidate limit ``v_hat`` is the componentwise median at the smallest
    time. With ``D(t)`` the median distance to ``v_hat`` and ``M(t)`` the
    median norm, both regressed on ``t`` in log-log scale with a path
    bootstrap:

    * a dispersion slope CI containing 0 gives ``inconclusive``;
    * a norm slope ``<= -0.1`` with CI below 0 gives ``diverges_in_norm``;
    * a positive dispersion slope with ``D(t_min) <= D(t_max) / 10`` gives
      ``converges_to`` with limit ``v_hat``;
    * anything else is ``oscillates``.

    When ``prediction`` is given it is mapped through ``sigma_x`` and the
    ``agreement`` flag is set.
    """
    if re.times.size < 8:
        raise ValueError("estimate_limit needs at least 8 grid times")
    R, t = re.values, re.times
    v_hat, disp, med = _dispersion(R)
    scale = max(float(np.abs(R).max()), 1e-300)
    floor = 1e-14 * scale
    slope_d = _loglog_slope(t, disp, floor)
    slope_m = _loglog_slope(t, med, floor)
    ci_d, ci_m = _bootstrap_slopes(R, t, floor, n_boot, seed)
    shrink = disp[0] <= disp[-1] / DECREASE_FACTOR
    if ci_d[0] <= 0.0 <= ci_d[1]:
        verdict = "inconclusive"
    elif slope_m <= DIVERGENCE_SLOPE and ci_m[1] < 0.0:
        verdict = "diverges_in_norm"
    elif slope_d > 0 and shrink:
        verdict = "converges_to"
    else:
        verdict = "oscillates"
    agreement = None
    if prediction is not None:
        if sigma_x is not None:
            prediction = prediction.transferred(np.atleast_2d(sigma_x))
        agreement = bool(_agrees(prediction, verdict, v_hat, med[-1]))
    dist = np.linalg.norm(R - v_hat[None, None, :], axis=2)
    return ScalingReport.from_stat(
        name, t, dist, verdict=verdict, limit=v_hat, slope=slope_d, slope_ci=tuple(ci_d),
        prediction=prediction, agreement=agreement,
        extra={"norm_median": med, "norm_slope": slope_m, "norm_slope_ci": tuple(ci_m),
               "dispersion_shrink": bool(shrink), "scaling": re.f.describe()})


def _factor_rule(name, times, stat, **extra):
    rep = ScalingReport.from_stat(name, times, stat)
    med = rep.median
    rep.verdict = "converges_to" if med[0] <= med[-1] / DECREASE_FACTOR else "oscillates"
    if rep.verdict == "converges_to":
        rep.limit = np.zeros(1)
    pos = med > 0
    if pos.sum() >= 2:
        rep.slope = float(np.polyfit(np.log(times[pos]), np.log(med[pos]), 1)[0])
    rep.extra.update({"decrease_factor": float(med[-1] / med[0]) if med[0] > 0 else math.inf,
                      **extra})
    return rep


def qv_decay_check(drivers: Sequence[PathSkeleton], p: float, times=None,
                   mode: str = "realized") -> ScalingReport:
    """Median of ``[L, L]_t / t^{2p}``; ``converges_to`` 0 under the factor-10 rule.

    ``mode='realized'`` sums squared increments over all steps,
    ``mode='jumps'`` sums squared ledger jumps only.
    """
    drivers = list(drivers)
    times = _common_times(drivers, times)
    rows = []
    for L in drivers:
        if mode == "realized":
            qv = realized_covariation(L, L)
            n = L.dim
            tr = qv.at(times)[:, :: n + 1].sum(axis=1)
        elif mode == "jumps":
            sq = (L.jump_sizes ** 2).sum(axis=1)
            tr = np.array([sq[L.jump_times <= t].sum() for t in times])
        else:
            raise ValueError("mode must be 'realized' or 'jumps'")
        rows.append(tr / times ** (2 * p))
    return _factor_rule("qv_decay", times, np.array(rows), p=p, mode=mode)


def coupling_gap(solutions: Sequence[PathSkeleton], drivers: Sequence[PathSkeleton],
                 sigma: SigmaMap, x, f: ScalingFunction, times=None) -> ScalingReport:
    """Median of ``|X_t - x - sigma(x) L_t| / f(t)`` with the factor-10 rule.

    The variant with ``sigma(X_t)`` in place of ``sigma(x)`` is reported in
    ``extra``.
    """
    solutions, drivers = list(solutions), list(drivers)
    if len(solutions) != len(drivers) or any(s.seed_id != d.seed_id for s, d in zip(solutions, drivers)):
        raise ValueError("solutions and drivers must be paired path by path")
    times = _common_times(drivers, times)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sx = sigma(x)
    ft = f(times)
    gaps, gaps_t = [], []
    for X, L in zip(solutions, drivers):
        xv, lv = X.at(times), L.at(times)
        gaps.append(np.linalg.norm(xv - x - lv @ sx.T, axis=1) / ft)
        var = np.array([sigma(xi) @ li for xi, li in zip(xv, lv)])
        gaps_t.append(np.linalg.norm(xv - x - var, axis=1) / ft)
    gaps_t = np.array(gaps_t)
    rep = _factor_rule("coupling_gap", times, np.array(gaps), scaling=f.describe())
    med_t = np.median(gaps_t, axis=0)
    rep.extra.update({"sigma_xt_median": med_t,
                      "sigma_xt_converges": bool(med_t[0] <= med_t[-1] / DECREASE_FACTOR)})
    return rep


# ---------------------------------------------------------------------------
# LIL and cluster sets


@dataclass(frozen=True)
class LimsupEstimate:
    """Per-path running maxima of the rescaled norm over ``t <= t_k``."""

    times: np.ndarray
    running_max: np.ndarray
    estimate: float
    q25: float
    q75: float

    def report(self, name="limsup_estimate", **kw) -> ScalingReport:
        kw.setdefault("verdict", "pass")
        rep = ScalingReport.from_stat(name, self.times, self.running_max, **kw)
        rep.limit = np.array([self.estimate])
        rep.extra.update({"estimate": self.estimate, "q25": self.q25, "q75": self.q75})
        return rep


def limsup_estimate(re: RescaledEnsemble, min_times: int = 20, min_decades: float = 6.0) -> LimsupEstimate:
    """Median over paths of the running maximum over the whole grid."""
    t = re.times
    if t.size < min_times or math.log10(t[-1] / t[0]) < min_decades - 1e-9:
        raise ValueError(f"limsup estimation needs >= {min_times} times spanning >= {min_decades} decades")
    run = np.maximum.accumulate(re.norms, axis=1)
    final = run[:, -1]
    q25, med, q75 = np.quantile(final, [0.25, 0.5, 0.75])
    return LimsupEstimate(t, run, float(med), float(q25), float(q75))


@dataclass(frozen=True)
class ClusterSet:
    cloud: np.ndarray
    hull_vertices: Optional[np.ndarray]
    axes: Optional[np.ndarray] = None
    axis_directions: Optional[np.ndarray] = None

    @property
    def axis_ratio(self) -> float:
        return float(self.axes[0] / self.axes[1])


def cluster_set_estimate(re: RescaledEnsemble, shell) -> ClusterSet:
    """Pool rescaled points with ``t_lo <= t <= t_hi`` over all paths.

    For ``d = 2`` the ellipse axes are ``2 sqrt(lambda)`` for the covariance
    eigenvalues ``lambda`` (largest first).
    """
    t_lo, t_hi = shell
    sel = (re.times >= t_lo) & (re.times <= t_hi)
    if not sel.any():
        raise ValueError(f"no grid times in shell [{t_lo}, {t_hi}]")
    cloud = re.values[:, sel, :].reshape(-1, re.values.shape[2])
    d = cloud.shape[1]
    hull = axes = dirs = None
    if d == 1:
        hull = np.array([[cloud.min()], [cloud.max()]])
    elif d in (2, 3):
        h = spatial.ConvexHull(cloud)
        hull = cloud[h.vertices]
    if d == 2:
        w, V = np.linalg.eigh(np.cov(cloud.T))
        axes, dirs = 2.0 * np.sqrt(w[::-1]), V[:, ::-1]
    return ClusterSet(cloud, hull, axes, dirs)


@dataclass(frozen=True)
class EnergyTest:
    statistic: float
    p_value: float
    n_perm: int

    def passes(self, level: float = 0.01) -> bool:
        return self.p_value > level


def _energy_stat(D, mask):
    a, b = mask, ~mask
    na, nb = a.sum(), b.sum()
    return (2.0 * D[np.ix_(a, b)].mean() - D[np.ix_(a, a)].sum() / (na * na)
            - D[np.ix_(b, b)].sum() / (nb * nb))


def energy_distance_test(x, y, n_perm: int = 199, max_points: int = 1500,
                         seed: int = 0) -> EnergyTest:
    """Two-sample energy-distance permutation test.

    Samples larger than ``max_points`` are subsampled without replacement
    (deterministically from ``seed``).
    """
    rng = np.random.default_rng(seed)
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    if x.shape[0] > max_points:
        x = x[np.sort(rng.choice(x.shape[0], max_points, replace=False))]
    if y.shape[0] > max_points:
        y = y[np.sort(rng.choice(y.shape[0], max_points, replace=False))]
    z = np.vstack([x, y])
    D = spatial.distance.cdist(z, z)
    mask = np.zeros(z.shape[0], dtype=bool)
    mask[: x.shape[0]] = True
    stat = _energy_stat(D, mask)
    count = 0
    for _ in range(n_perm):
        count += _energy_stat(D, rng.permutation(mask)) >= stat
    return EnergyTest(float(stat), (1 + count) / (n_perm + 1), n_perm)


# ---------------------------------------------------------------------------
# distributional statements


def ks_distance_to_stable(samples, alpha: float, scale: float = 1.0, skew: float = 0.0,
                          loc: float = 0.0) -> float:
    """Kolmogorov-Smirnov distance between ``samples`` and ``S1(scale, skew, loc)``."""
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < 100:
        raise ValueError("need at least 100 samples")
    if not 0.0 < alpha <= 2.0:
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
    return float(stats.kstest(samples, lambda v: stable_cdf(v, alpha, skew, scale, loc)).statistic)


def verify_distributional_transfer(sigma: SigmaMap, x, sampler, alpha: float, f: ScalingFunction,
                                   t_eval: float, n_paths: int, seed: int, scale: float = 1.0,
                                   skew: float = 0.0, threshold: float = 0.05, theta: float = 0.5,
                                   K: int = 10, workers: int = 1) -> ScalingReport:
    """KS distance of ``(X_t - x) / (sigma(x) f(t))`` at ``t = t_eval`` to ``S1(scale, skew)``.

    ``sampler(grid, rng=..., sid=...)`` draws one driver path; the solution is
    computed on ``make_grid(t_eval, theta, K)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sx = float(sigma(x)[0, 0])
    if sigma.n != 1 or sigma.d != 1:
        raise ValueError("distributional transfer is checked in the scalar case")
    if sx == 0.0:
        raise ValueError("sigma(x) must be nonzero")
    grid = make_grid(t_eval, theta, K)
    drivers = generate_ensemble(functools.partial(sampler, grid), n_paths, seed, workers)
    sols = solve_ensemble(sigma, x, drivers, workers=workers)
    samples = np.array([s.values[-1, 0] for s in sols])
    z = (samples - x[0]) / (sx * float(f(t_eval)))
    ks = ks_distance_to_stable(z, alpha, scale, skew)
    drv = np.array([d.values[-1, 0] for d in drivers]) / float(f(t_eval))
    ks_driver = ks_distance_to_stable(drv, alpha, scale, skew)
    rep = ScalingReport.from_stat("distributional_transfer", np.array([t_eval]), np.abs(z)[:, None],
                                  verdict="pass" if ks <= threshold else "fail")
    rep.extra.update({"ks": ks, "ks_driver": ks_driver, "threshold": threshold, "alpha": alpha,
                      "scale": scale, "skew": skew, "fraction_zero": float(np.mean(z == 0.0)),
                      "scaling": f.describe()})
    return rep


def verify_in_probability(paths: Sequence[PathSkeleton], f: ScalingFunction, v: float,
                          deltas: Sequence[float], sigma_x: float = 1.0, center=None,
                          times=None, level: float = 0.05) -> ScalingReport:
    """Empirical ``P(|(X_t - x)/f(t) - sigma(x) v| > delta)`` per time and ``delta``.

    Passes iff for every ``delta`` the probability at the smallest time is
    below ``level`` and not larger than at the largest time.
    """
    re = rescale(paths, f, center, times)
    if re.values.shape[2] != 1:
        raise ValueError("convergence in probability is checked in the scalar case")
    err = np.abs(re.values[:, :, 0] - sigma_x * v)
    probs = np.array([(err > d).mean(axis=0) for d in deltas])
    ok = [bool(pr[0] < level and pr[0] <= pr[-1]) for pr in probs]
    rep = ScalingReport.from_stat("in_probability", re.times, err, verdict="pass" if all(ok) else "fail")
    rep.limit = np.array([sigma_x * v])
    rep.extra.update({"deltas": list(map(float, deltas)), "probabilities": probs, "per_delta_pass": ok,
                      "level": level, "scaling": f.describe()})
    return rep


def integral_lemma_check(integrands: Sequence[PathSkeleton], drivers: Sequence[PathSkeleton],
                         p: float, times=None) -> ScalingReport:
    """Median of ``|t^{-p} int_0^t phi_- dX|`` with the factor-10 rule."""
    integrands, drivers = list(integrands), list(drivers)
    if len(integrands) != len(drivers):
        raise ValueError("integrands and drivers must be paired")
    times = _common_times(drivers, times)
    rows = []
    for phi, X in zip(integrands, drivers):
        integ = stochastic_integral(phi, X)
        rows.append(np.linalg.norm(integ.at(times), axis=1) / times ** p)
    return _factor_rule("integral_lemma", times, np.array(rows), p=p)
