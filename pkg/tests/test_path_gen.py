import functools
import io
import math

import numpy as np
import pytest
from scipy import stats

from levylab.levy_core import (CharacteristicTriplet, ConfigurationError, FiniteActivity, PointMass, StableDensity,
                               TruncatedExponential, UniformJumps)
from levylab.path_gen import (PATH_CSV_HEADER, PathSkeleton, assemble_matrix_driver, dump_paths,
                              generate_ensemble, make_grid, refine_to, rng_stream,
                              sample_brownian, sample_compound_poisson, sample_deterministic,
                              sample_stable, sample_stable_series,
                              sample_truncated_infinite_activity, seed_id)


def ensemble(sampler, n, seed=1, workers=1):
    return generate_ensemble(sampler, n, seed, workers)


class TestGrid:
    def test_half(self):
        np.testing.assert_array_equal(make_grid(1.0, 0.5, 3).times, [0.125, 0.25, 0.5, 1.0])

    def test_tenth(self):
        g = make_grid(0.1, 0.1, 2)
        np.testing.assert_allclose(g.times, [0.001, 0.01, 0.1], rtol=2.3e-16)
        assert g.times[-1] == 0.1

    @pytest.mark.parametrize("theta", [1.5, 1.0, 0.0, -0.5])
    def test_bad_ratio(self, theta):
        with pytest.raises(ValueError):
            make_grid(1.0, theta, 2)

    def test_times_exact_powers(self):
        g = make_grid(1.0, 0.5, 40)
        np.testing.assert_array_equal(g.times, 0.5 ** np.arange(40, -1, -1.0))
        assert len(g) == 41


class TestBrownian:
    def test_degenerate_is_drift(self):
        g = make_grid(1.0, 0.5, 1)
        p = sample_brownian(g, [[0.0]], [1.0], rng_stream(0, 0))
        np.testing.assert_allclose(p.values[:, 0], [0.5, 1.0], rtol=0, atol=1e-15)
        assert not p.jump.any()

    @pytest.mark.slow
    def test_variance(self):
        g = make_grid(1.0, 0.5, 2)
        n = 100_000
        rng = np.random.default_rng(7)
        x = np.array([sample_brownian(g, [[1.0]], [0.0], rng).at(0.25)[0, 0] for _ in range(n)])
        # sd of the sample variance for Gaussian data is var * sqrt(2 / (n - 1))
        assert abs(x.var(ddof=1) - 0.25) <= 3 * 0.25 * math.sqrt(2 / (n - 1))

    def test_variance_ratio(self):
        g = make_grid(1.0, 0.5, 2)
        rng = np.random.default_rng(8)
        x = np.array([sample_brownian(g, np.diag([1.0, 4.0]), [0.0, 0.0], rng).at(0.5)[0]
                      for _ in range(20_000)])
        r = x[:, 1].var() / x[:, 0].var()
        # F-ratio sd is about r * sqrt(4 / n)
        assert abs(r - 4.0) <= 3 * 4.0 * math.sqrt(4 / 20_000)

    def test_rejects_non_psd(self):
        with pytest.raises(ConfigurationError):
            sample_brownian(make_grid(1.0, 0.5, 2), [[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0], 0)

    def test_scaling(self):
        g = make_grid(1.0, 0.5, 3)
        paths = ensemble(functools.partial(sample_brownian, g, [[1.0]], [0.0]), 10_000)
        a = np.array([p.at(0.5)[0, 0] for p in paths])
        b = np.array([p.at(0.25)[0, 0] for p in paths]) / math.sqrt(0.5)
        assert stats.ks_2samp(a, b).statistic <= 0.02


class TestCompoundPoisson:
    def test_zero_rate(self):
        g = make_grid(1.0, 0.5, 3)
        p = sample_compound_poisson(g, 0.0, UniformJumps(-1, 1), [0.3], 0)
        np.testing.assert_allclose(p.values[:, 0], 0.3 * g.times, rtol=1e-15)
        assert p.jump_ledger == []

    @pytest.mark.slow
    def test_mean_count(self):
        g = make_grid(1.0, 0.5, 2)
        rng = np.random.default_rng(9)
        n = 100_000
        counts = np.array([sample_compound_poisson(g, 5.0, PointMass(1.0), [0.0], rng).jump.sum()
                           for _ in range(n)])
        assert abs(counts.mean() - 5.0) <= 3 * math.sqrt(5.0 / n)

    def test_unit_jumps_count(self):
        g = make_grid(1.0, 0.5, 4)
        p = sample_compound_poisson(g, 20.0, PointMass(1.0), [0.0], rng_stream(3, 0))
        np.testing.assert_array_equal(p.values[:, 0], np.round(p.values[:, 0]))
        np.testing.assert_array_equal(p.values[:, 0], np.cumsum(p.jump))

    def test_value_is_drift_plus_jumps(self):
        g = make_grid(1.0, 0.5, 6)
        p = sample_compound_poisson(g, 8.0, UniformJumps(-1, 1), [0.3], rng_stream(4, 0))
        cum = np.cumsum(np.where(p.jump[:, None], p.values - p.left, 0.0), axis=0)
        np.testing.assert_allclose(p.values, 0.3 * p.times[:, None] + cum, atol=1e-14)

    def test_jump_times_uniform_given_count(self):
        g = make_grid(1.0, 0.5, 1)
        rng = np.random.default_rng(10)
        u = []
        while len(u) < 10_000:
            p = sample_compound_poisson(g, 3.0, PointMass(1.0), [0.0], rng)
            u.extend(p.jump_times.tolist())
        assert stats.kstest(u[:10_000], "uniform").statistic <= 0.02


class TestStableSampler:
    @pytest.mark.slow
    def test_near_gaussian(self):
        g = make_grid(1.0, 0.5, 1)
        paths = ensemble(functools.partial(sample_stable, g, 1.999, 0.0, 0.5), 100_000)
        x = np.array([p.at(0.5)[0, 0] for p in paths])
        # variance 2 c^2 dt in the Gaussian limit
        sd = math.sqrt(2 * 0.25 * 0.5)
        assert stats.kstest(x, "norm", args=(0, sd)).statistic <= 0.01

    def test_self_similar(self):
        g = make_grid(1.0, 0.5, 2)
        paths = ensemble(functools.partial(sample_stable, g, 1.5, 0.3, 1.0), 10_000)
        a = np.array([p.at(1.0)[0, 0] for p in paths])
        b = np.array([p.at(0.5)[0, 0] for p in paths]) / 0.5 ** (1 / 1.5)
        assert stats.ks_2samp(a, b).statistic <= 0.02

    def test_cauchy_median(self):
        g = make_grid(1.0, 0.5, 1)
        paths = ensemble(functools.partial(sample_stable, g, 1.0, 0.0, 1.0), 10_000)
        x = np.array([p.at(1.0)[0, 0] for p in paths])
        # sd of the median of a standard Cauchy sample is pi / (2 sqrt n)
        assert abs(np.median(x)) <= 3 * math.pi / (2 * math.sqrt(x.size))

    def test_rejects_alpha(self):
        with pytest.raises(ValueError):
            sample_stable(make_grid(1.0, 0.5, 1), 2.0, 0.0, 1.0, 0)


class TestTruncated:
    def test_finite_activity_matches_compound_poisson(self):
        g = make_grid(1.0, 0.5, 2)
        m = FiniteActivity(4.0, UniformJumps(0.5, 1.0))
        # location gamma = rate * E[J] reproduces zero true drift
        gamma = CharacteristicTriplet.compound_poisson(4.0, UniformJumps(0.5, 1.0), 0.0).gamma
        a = ensemble(functools.partial(sample_truncated_infinite_activity, g, m, 0.1, False,
                                       gamma=gamma), 5000)
        b = ensemble(functools.partial(sample_compound_poisson, g, 4.0, UniformJumps(0.5, 1.0), [0.0]),
                     5000, seed=2)
        xa = np.array([p.at(1.0)[0, 0] for p in a])
        xb = np.array([p.at(1.0)[0, 0] for p in b])
        assert stats.ks_2samp(xa, xb).pvalue > 1e-3

    def test_resolved_rate(self):
        g = make_grid(1.0, 0.5, 1)
        rng = np.random.default_rng(12)
        n = 20_000
        counts = np.array([sample_truncated_infinite_activity(g, TruncatedExponential(), 0.1, False,
                                                              rng).jump.sum() for _ in range(n)])
        rate = 2 * (math.exp(-0.1) - math.exp(-1.0))
        assert abs(counts.mean() - rate) <= 3 * math.sqrt(rate / n)

    @pytest.mark.slow
    def test_gaussian_correction_variance(self):
        g = make_grid(1.0, 0.5, 1)
        m = TruncatedExponential()
        rng = np.random.default_rng(13)
        n = 100_000
        x = np.array([sample_truncated_infinite_activity(g, m, 0.3, True, rng).at(0.5)[0, 0]
                      for _ in range(n)])
        want = 0.5 * m.small_jump_variance(1.0)  # sigma_eps^2 + large-jump second moment
        # closed form: 2 int_0^1 x^2 e^{-x} dx = 4 - 10/e
        assert m.small_jump_variance(1.0) == pytest.approx(4 - 10 / math.e, rel=1e-10)
        # standard error of the sample variance from the fourth central moment
        se = math.sqrt((np.mean((x - x.mean()) ** 4) - x.var() ** 2) / n)
        assert abs(x.var() - want) <= 3 * se

    def test_infinite_mass(self):
        class InfiniteTail(StableDensity):
            def tail(self, x, side="both"):
                return math.inf
        with pytest.raises(ConfigurationError):
            sample_truncated_infinite_activity(make_grid(1.0, 0.5, 1), InfiniteTail(1.0, 1.0, 1.0),
                                               0.1, False, 0)


class TestSeries:
    def test_ledger_and_law(self):
        g = make_grid(1.0, 0.5, 3)
        paths = ensemble(functools.partial(sample_stable_series, g, 1.5, 0.0, 1.0), 4000)
        assert all(p.ledger_error() == 0 for p in paths)
        assert sum(p.jump.sum() for p in paths) > 0
        x = np.array([p.at(1.0)[0, 0] for p in paths])
        y = np.array([p.at(1.0)[0, 0] for p in
                      ensemble(functools.partial(sample_stable, g, 1.5, 0.0, 1.0), 4000, seed=2)])
        assert stats.ks_2samp(x, y).pvalue > 1e-3


class TestAssembly:
    def cp(self, i, rate=3.0):
        return sample_compound_poisson(make_grid(1.0, 0.5, 3), rate, UniformJumps(-1, 1), [0.1],
                                       rng_stream(5, i), sid=i)

    def test_one_by_one(self):
        p = self.cp(0)
        m = assemble_matrix_driver(np.array([[p]], dtype=object))
        np.testing.assert_array_equal(m.values, p.values)
        np.testing.assert_array_equal(m.left, p.left)
        np.testing.assert_array_equal(m.times, p.times)
        assert m.shape == (1, 1)

    def test_ledger_sizes_add(self):
        comps = np.empty((2, 2), dtype=object)
        for i in range(4):
            comps.flat[i] = self.cp(i)
        m = assemble_matrix_driver(comps)
        total = sum(c.jump.sum() for c in comps.flat)
        assert m.jump.sum() == total
        assert np.unique(np.concatenate([c.jump_times for c in comps.flat])).size == total

    def test_column_major(self):
        comps = np.empty((2, 3), dtype=object)
        for i in range(6):
            comps.flat[i] = self.cp(i)
        m = assemble_matrix_driver(comps)
        mats = m.matrices()
        for i in range(2):
            for j in range(3):
                ref = refine_to(comps[i, j], m.times)
                np.testing.assert_array_equal(mats[:, i, j], ref.values[:, 0])
                # column-major: entry (i, j) is component j * n + i
                np.testing.assert_array_equal(m.values[:, j * 2 + i], ref.values[:, 0])

    def test_transpose_commutes(self):
        comps = np.empty((2, 3), dtype=object)
        for i in range(6):
            comps.flat[i] = self.cp(i)
        a = assemble_matrix_driver(comps).transpose()
        b = assemble_matrix_driver(comps.T.copy())
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.left, b.left)
        assert a.shape == b.shape == (3, 2)

    def test_grid_mismatch(self):
        a = self.cp(0)
        b = sample_compound_poisson(make_grid(1.0, 0.25, 3), 3.0, UniformJumps(-1, 1), [0.1], 1)
        with pytest.raises(ValueError):
            assemble_matrix_driver(np.array([[a, b]], dtype=object))


class TestContract:
    SAMPLERS = {
        "brownian": functools.partial(sample_brownian, make_grid(1.0, 0.5, 5), np.eye(2), [0.0, 0.1]),
        "cp": functools.partial(sample_compound_poisson, make_grid(1.0, 0.5, 5), 6.0,
                                UniformJumps(-1, 1), [0.3]),
        "stable": functools.partial(sample_stable, make_grid(1.0, 0.5, 5), 1.5, 0.2, 1.0),
        "truncated": functools.partial(sample_truncated_infinite_activity, make_grid(1.0, 0.5, 5),
                                       TruncatedExponential(), 0.05, None),
        "series": functools.partial(sample_stable_series, make_grid(1.0, 0.5, 5), 1.2, 0.0, 1.0),
    }

    @pytest.mark.parametrize("name", sorted(SAMPLERS))
    def test_invariants(self, name):
        for p in ensemble(self.SAMPLERS[name], 50):
            assert np.all(p.origin == 0)
            assert p.ledger_error() == 0.0
            assert np.all(np.diff(p.times) > 0)
            assert np.isin(p.grid.times, p.times).all()
            np.testing.assert_array_equal(p.jump_sizes, p.values[p.jump] - p.left[p.jump])

    @pytest.mark.parametrize("name", sorted(SAMPLERS))
    def test_worker_independent(self, name):
        a = ensemble(self.SAMPLERS[name], 300, workers=1)
        b = ensemble(self.SAMPLERS[name], 300, workers=3)
        for p, q in zip(a, b):
            assert p.seed_id == q.seed_id
            np.testing.assert_array_equal(p.times, q.times)
            np.testing.assert_array_equal(p.values, q.values)
            np.testing.assert_array_equal(p.left, q.left)

    def test_seed_id_layout(self):
        assert seed_id(3, 7) == (3 << 32) | 7
        a = ensemble(self.SAMPLERS["cp"], 3, seed=3)
        assert [p.seed_id for p in a] == [seed_id(3, i) for i in range(3)]

    def test_streams_differ(self):
        a, b = ensemble(self.SAMPLERS["brownian"], 2)
        assert not np.array_equal(a.values, b.values)

    def test_skeleton_rejects_unsorted(self):
        with pytest.raises(ValueError):
            PathSkeleton([0.5, 0.25], [[0.0], [0.0]], [[0.0], [0.0]], [False, False], [0.0])


def test_deterministic_path():
    p = sample_deterministic(make_grid(1.0, 0.5, 1), [1.0])
    np.testing.assert_array_equal(p.values[:, 0], [0.5, 1.0])


def test_refine_keeps_jumps():
    g = make_grid(1.0, 0.5, 3)
    p = sample_compound_poisson(g, 10.0, UniformJumps(-1, 1), [0.3], rng_stream(6, 0))
    q = refine_to(p, [0.3, 0.7])
    np.testing.assert_array_equal(q.at(p.times), p.values)
    np.testing.assert_array_equal(q.jump_times, p.jump_times)
    # between jumps the path is pure drift
    k = np.searchsorted(q.times, 0.7)
    prev = q.values[k - 1]
    assert q.values[k, 0] == pytest.approx(prev[0] + 0.3 * (0.7 - q.times[k - 1]), abs=1e-14)


def test_dump_schema():
    g = make_grid(1.0, 0.5, 1)
    p = sample_compound_poisson(g, 5.0, UniformJumps(-1, 1), [0.0], rng_stream(7, 0))
    buf = io.StringIO()
    dump_paths([p], buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(PATH_CSV_HEADER)
    pre = [ln for ln in lines[1:] if ln.endswith(",1")]
    assert len(pre) == p.jump.sum()
    assert len(lines) == 1 + p.times.size + p.jump.sum()
