import math

import numpy as np
import pytest
from scipy import integrate, stats

from levylab.levy_core import (CharacteristicTriplet, ConfigurationError, FiniteActivity,
                               GeneralLIL, Khintchine, PointMass, Power, RegularlyVarying,
                               ScipyJumps, StableDensity, TabulatedDensity, TruncatedExponential,
                               UniformJumps, UnsupportedPrediction, ZeroMeasure,
                               blumenthal_getoor_index, characteristic_exponent, classify_paths,
                               moment_integral, predict_short_time, scaling_eval, stable_params,
                               stable_triplet, tail_function)


def unit_poisson(gamma=None):
    m = FiniteActivity(1.0, PointMass(1.0))
    # gamma = compensator makes psi(z) = e^{iz} - 1
    return CharacteristicTriplet(np.zeros((1, 1)), m, [1.0 if gamma is None else gamma])


def numeric_jump_integral(density, z, lo=-1.0, hi=1.0):
    # direct quadrature of the Lévy-Khintchine integrand over [lo, hi]
    re = integrate.quad(lambda s: (math.cos(z * s) - 1) * density(s), lo, hi, points=[0], limit=500)[0]
    im = integrate.quad(lambda s: (math.sin(z * s) - z * s * (abs(s) <= 1)) * density(s), lo, hi,
                        points=[0], limit=500)[0]
    return complex(re, im)


class TestTriplet:
    def test_pure_gaussian(self):
        assert characteristic_exponent(CharacteristicTriplet.brownian(1.0), [1.0]) == -0.5

    def test_zero_triplet(self):
        trip = CharacteristicTriplet(np.zeros((2, 2)), ZeroMeasure(2), np.zeros(2))
        assert characteristic_exponent(trip, [0.3, -7.0]) == 0

    def test_unit_poisson_at_pi(self):
        psi = characteristic_exponent(unit_poisson(), [math.pi])
        assert psi == pytest.approx(-2.0, abs=1e-12)

    def test_rejects_non_psd(self):
        with pytest.raises(ConfigurationError):
            CharacteristicTriplet(np.array([[1.0, 0.0], [0.0, -0.1]]), ZeroMeasure(2), np.zeros(2))

    def test_rejects_asymmetric(self):
        with pytest.raises(ConfigurationError):
            CharacteristicTriplet(np.array([[1.0, 0.5], [0.0, 1.0]]), ZeroMeasure(2), np.zeros(2))

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            CharacteristicTriplet(np.eye(2), ZeroMeasure(1), np.zeros(2))

    def test_rejects_nonfinite_z(self):
        with pytest.raises(ValueError):
            characteristic_exponent(CharacteristicTriplet.brownian(1.0), [np.inf])

    def test_psd_floor_allows_rounding(self):
        A = np.array([[1.0, 1.0], [1.0, 1.0]]) - 1e-14 * np.eye(2)
        CharacteristicTriplet(A, ZeroMeasure(2), np.zeros(2))

    def test_closed_forms_at_random_points(self):
        rng = np.random.default_rng(3)
        A = np.array([[2.0, 0.3], [0.3, 0.5]])
        bm = CharacteristicTriplet(A, ZeroMeasure(2), [0.1, -0.2])
        poi = unit_poisson()
        for z in rng.normal(scale=3.0, size=(20, 2)):
            want = complex(-0.5 * z @ A @ z, 0.1 * z[0] - 0.2 * z[1])
            assert characteristic_exponent(bm, z) == pytest.approx(want, rel=1e-8)
            want = np.exp(1j * z[0]) - 1
            assert characteristic_exponent(poi, z[:1]) == pytest.approx(want, rel=1e-8, abs=1e-14)

    def test_uniform_compound_poisson_against_quadrature(self):
        trip = CharacteristicTriplet.compound_poisson(2.0, UniformJumps(-0.5, 1.5), 0.0)
        for z in (0.4, -3.0, 11.0):
            dens = lambda s: 1.0 if -0.5 <= s <= 1.5 else 0.0
            num = numeric_jump_integral(dens, z, -0.5, 1.5)
            # location gamma carries the compensator of the jumps in [-1, 1]
            want = num + 1j * z * trip.gamma[0]
            assert characteristic_exponent(trip, [z]) == pytest.approx(want, rel=1e-8)

    def test_scipy_jumps_match_closed_form(self):
        a = CharacteristicTriplet.compound_poisson(1.5, ScipyJumps(stats.uniform(-1, 2)), 0.2)
        b = CharacteristicTriplet.compound_poisson(1.5, UniformJumps(-1, 1), 0.2)
        for z in (0.3, 2.0):
            assert characteristic_exponent(a, [z]) == pytest.approx(characteristic_exponent(b, [z]), rel=1e-8)

    def test_truncated_exponential_against_quadrature(self):
        trip = CharacteristicTriplet(np.zeros((1, 1)), TruncatedExponential(), [0.0])
        for z in (0.5, 4.0, -9.0):
            num = numeric_jump_integral(lambda s: math.exp(-abs(s)), z)
            assert characteristic_exponent(trip, [z]) == pytest.approx(num, rel=1e-9)


class TestStable:
    @pytest.mark.parametrize("alpha,cp,cm", [(0.5, 1.0, 0.2), (1.0, 1.0, 0.3), (1.2, 1.0, 0.5),
                                             (1.7, 0.4, 0.4)])
    def test_closed_form_against_quadrature(self, alpha, cp, cm):
        m = StableDensity(alpha, cp, cm)
        for z in (0.7, -2.0):
            def part(c, sgn):
                f = lambda s: (math.cos(z * s) - 1) * s ** (-1 - alpha)
                g = lambda s: (math.sin(z * s) - z * s) * s ** (-1 - alpha)
                # oscillatory tails on [1, inf) via QAWF; the constant part integrates to 1/alpha
                re = integrate.quad(f, 0, 1, limit=500)[0] + integrate.quad(
                    lambda s: s ** (-1 - alpha), 1, np.inf, weight="cos", wvar=z)[0] - 1 / alpha
                im = integrate.quad(g, 0, 1, limit=500)[0] + integrate.quad(
                    lambda s: s ** (-1 - alpha), 1, np.inf, weight="sin", wvar=z)[0]
                return c * complex(re, sgn * im)
            want = part(cp, 1) + part(cm, -1)
            assert m.jump_integral(z) == pytest.approx(want, rel=1e-6)

    @pytest.mark.parametrize("alpha,beta", [(0.6, 0.3), (1.0, -0.4), (1.5, 0.8)])
    def test_triplet_matches_s1_parameters(self, alpha, beta):
        trip = stable_triplet(alpha, beta, 0.8)
        scale, b, shift = stable_params(trip.measure)
        assert scale == pytest.approx(0.8, rel=1e-12)
        assert b == pytest.approx(beta, rel=1e-12)
        assert trip.gamma[0] + shift == pytest.approx(0.0, abs=1e-12)

    def test_rejects_bad_parameters(self):
        with pytest.raises(ConfigurationError):
            StableDensity(2.0, 1.0, 1.0)
        with pytest.raises(ConfigurationError):
            StableDensity(1.0, 0.0, 0.0)


class TestTails:
    def test_point_mass(self):
        m = FiniteActivity(1.0, PointMass(1.0))
        assert tail_function(m, 0.5, "+") == 1.0
        assert tail_function(m, 1.5, "+") == 0.0
        assert tail_function(m, 0.5, "-") == 0.0

    def test_truncated_exponential(self):
        want = 2 * (math.exp(-0.5) - math.exp(-1.0))
        assert tail_function(TruncatedExponential(), 0.5) == pytest.approx(want, rel=1e-15)

    def test_stable_symmetry(self):
        m = StableDensity(1.3, 0.7, 0.7)
        for x in (1e-3, 0.4, 5.0):
            assert tail_function(m, x, "+") == tail_function(m, x, "-")

    def test_rejects_nonpositive_x(self):
        with pytest.raises(ValueError):
            tail_function(TruncatedExponential(), 0.0)

    def test_rejects_bad_side(self):
        with pytest.raises(ValueError):
            tail_function(TruncatedExponential(), 0.5, "up")

    def test_tabulated_uses_trapezoid(self):
        x = np.linspace(0.1, 1.0, 10)
        m = TabulatedDensity(x, 2 * x, small_x_exponent=-1.0)
        # linear density: trapezoid is exact
        assert tail_function(m, 0.5, "+") == pytest.approx(1.0 - 0.25, rel=1e-12)
        assert tail_function(m, 0.05, "+") == pytest.approx(1.0 - 0.0025, rel=1e-12)


class TestMoments:
    def test_stable_threshold(self):
        m = StableDensity(1.2, 1.0, 1.0)
        assert moment_integral(m, 1 / 0.7).finite
        assert not moment_integral(m, 1.1).finite
        assert not moment_integral(m, 1.2).finite

    def test_stable_value(self):
        m = StableDensity(1.2, 1.0, 0.5)
        r = 1.5
        # 1.5 * int_0^1 x^{r - 1 - alpha} dx
        assert moment_integral(m, r).value == pytest.approx(1.5 / (r - 1.2), rel=1e-12)
        assert moment_integral(m, r, "[0,1]").value == pytest.approx(1.0 / (r - 1.2), rel=1e-12)

    def test_finite_activity_always_finite(self):
        m = FiniteActivity(3.0, UniformJumps(-2, 2))
        for r in (1e-3, 0.5, 4.0):
            res = moment_integral(m, r)
            assert res.finite
            # 3 * 2 * int_0^1 u^r du / 4
            assert res.value == pytest.approx(1.5 / (r + 1), rel=1e-12)

    def test_truncated_exponential_value(self):
        r = 1.7
        # termwise integration of the exponential series
        want = 2 * sum((-1) ** k / (math.factorial(k) * (r + k + 1)) for k in range(30))
        assert moment_integral(TruncatedExponential(), r).value == pytest.approx(want, rel=1e-12)

    @pytest.mark.parametrize("p", [0.55, 0.8, 0.99, 1.0, 1.3])
    def test_tabulated_inverse_square(self, p):
        x = np.geomspace(1e-3, 1.0, 50)
        m = TabulatedDensity(x, x ** -2.0, small_x_exponent=2.0)
        res = moment_integral(m, 1 / p)
        assert res.finite == (p < 1)
        if res.finite:
            # closed form 2 int_0^1 x^{1/p - 2} dx, up to the trapezoid error on the grid
            assert res.value == pytest.approx(2 / (1 / p - 1), rel=2e-2)

    def test_tabulated_requires_exponent(self):
        m = TabulatedDensity([0.5, 1.0], [1.0, 1.0])
        with pytest.raises(ConfigurationError):
            moment_integral(m, 1.0)

    def test_domain_validation(self):
        with pytest.raises(ValueError):
            moment_integral(TruncatedExponential(), 0.0)
        with pytest.raises(ValueError):
            moment_integral(TruncatedExponential(), 1.0, "[0,2]")


class TestClassification:
    def test_compound_poisson_drift(self):
        trip = CharacteristicTriplet.compound_poisson(5.0, UniformJumps(0.0, 2.0), 0.3)
        # gamma = 0.3 + 5 * E[J; |J| <= 1] = 0.3 + 5 * 0.25
        assert trip.gamma[0] == pytest.approx(1.55, rel=1e-14)
        cls = classify_paths(trip)
        assert cls.kind == "bv_with_drift"
        assert cls.drift[0] == pytest.approx(0.3, rel=1e-12)

    def test_drift_against_monte_carlo(self):
        trip = CharacteristicTriplet(np.zeros((1, 1)), FiniteActivity(4.0, UniformJumps(-0.5, 1.5)), [1.0])
        drift = classify_paths(trip).drift[0]
        rng = np.random.default_rng(0)
        t, n = 1e-3, 200_000
        counts = rng.poisson(4.0 * t, size=n)
        jumps = np.array([rng.uniform(-0.5, 1.5, size=c).sum() for c in counts])
        # E[L_t / t] = gamma0 + rate * E[J]
        est = np.mean(drift * t + jumps) / t
        se = np.std(jumps) / t / math.sqrt(n)
        assert abs(est - (drift + 4.0 * 0.5)) < 4 * se

    def test_gaussian(self):
        assert classify_paths(CharacteristicTriplet.brownian(1.0)).kind == "has_gaussian"

    @pytest.mark.parametrize("alpha", [0.3, 0.5, 0.9, 1.0, 1.2, 1.8])
    def test_stable_bv_iff_alpha_below_one(self, alpha):
        trip = CharacteristicTriplet(np.zeros((1, 1)), StableDensity(alpha, 1.0, 0.5), [0.0])
        assert classify_paths(trip).bounded_variation == (alpha < 1)

    def test_stable_no_drift(self):
        trip = stable_triplet(0.5, 0.4)
        assert classify_paths(trip).kind == "bv_no_drift"


class TestBlumenthalGetoor:
    @pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5, 1.9])
    def test_stable_bisection(self, alpha):
        m = StableDensity(alpha, 1.0, 1.0)
        assert blumenthal_getoor_index(m, "bisection") == pytest.approx(alpha, abs=1e-3)
        assert blumenthal_getoor_index(m) == alpha

    def test_finite_activity(self):
        m = FiniteActivity(2.0, UniformJumps(-1, 1))
        assert blumenthal_getoor_index(m) == 0.0
        assert blumenthal_getoor_index(m, "bisection") == 0.0

    def test_truncated_exponential(self):
        assert blumenthal_getoor_index(TruncatedExponential(), "bisection") == 0.0


class TestScaling:
    def test_khintchine_value(self):
        t = math.exp(-math.e ** 2)
        assert scaling_eval(Khintchine(), t) == pytest.approx(2 * math.sqrt(t), rel=1e-12)

    def test_power(self):
        assert scaling_eval(Power(p=1.0), 0.25) == 0.25

    @pytest.mark.parametrize("f", [Khintchine(), GeneralLIL()])
    def test_lil_domain(self, f):
        with pytest.raises(ValueError):
            scaling_eval(f, 0.9)
        with pytest.raises(ValueError):
            scaling_eval(f, math.exp(-1.0))

    def test_general_lil_with_constant_h(self):
        f = GeneralLIL(h=lambda u: np.full_like(u, 1 / math.sqrt(2)))
        assert scaling_eval(f, 1e-4) == pytest.approx(scaling_eval(Khintchine(), 1e-4), rel=1e-12)

    def test_regularly_varying(self):
        f = RegularlyVarying(index=0.5, ell=np.log)
        assert scaling_eval(f, 1e-2) == pytest.approx(0.1 * math.log(100), rel=1e-12)

    def test_scaled(self):
        assert Power(p=2.0).scaled(3.0)(0.5) == pytest.approx(0.75)

    def test_positive_power(self):
        with pytest.raises(ValueError):
            Power(p=0.0)


class TestPredictions:
    def test_brownian_below_half(self):
        pred = predict_short_time(CharacteristicTriplet.brownian(1.0), Power(p=0.4))
        assert pred.verdict == "zero_limit"

    def test_compound_poisson_drift_limit(self):
        trip = CharacteristicTriplet.compound_poisson(5.0, UniformJumps(-1, 1), 0.3)
        pred = predict_short_time(trip, Power(p=1.0))
        assert pred.verdict == "finite_limit"
        assert pred.value[0] == pytest.approx(0.3)

    def test_compound_poisson_without_drift(self):
        trip = CharacteristicTriplet.compound_poisson(5.0, UniformJumps(-1, 1), 0.0)
        assert predict_short_time(trip, Power(p=1.0)).verdict == "zero_limit"

    def test_brownian_khintchine(self):
        pred = predict_short_time(CharacteristicTriplet.brownian(np.eye(2)), Khintchine())
        assert pred.verdict == "oscillates_lil"
        np.testing.assert_array_equal(pred.value, [1.0, 1.0])

    def test_brownian_half_and_above(self):
        bm = CharacteristicTriplet.brownian(1.0)
        assert predict_short_time(bm, Power(p=0.5)).verdict == "oscillates_lil"
        assert predict_short_time(bm, Power(p=1.5)).verdict == "diverges_in_norm"

    def test_bv_nonzero_drift_above_one(self):
        trip = CharacteristicTriplet.compound_poisson(1.0, UniformJumps(-1, 1), 0.3)
        assert predict_short_time(trip, Power(p=1.5)).verdict == "diverges_in_norm"

    @pytest.mark.parametrize("alpha,p,verdict", [
        (1.5, 0.4, "zero_limit"), (1.5, 0.6, "zero_limit"), (1.5, 1.0, "diverges_in_norm"),
        (1.5, 1.5, "diverges_in_norm"), (1.2, 0.7, "zero_limit"), (0.5, 1.5, "zero_limit"),
        (0.5, 2.5, "diverges_in_norm"), (0.5, 1.0, "zero_limit")])
    def test_stable_rules(self, alpha, p, verdict):
        pred = predict_short_time(stable_triplet(alpha), Power(p=p))
        assert pred.verdict == verdict
        if pred.rule == "bdm_moment_criterion" and verdict == "zero_limit":
            assert moment_integral(stable_triplet(alpha).measure, 1 / p).finite

    def test_boundary_half(self):
        assert predict_short_time(stable_triplet(1.5), Power(p=0.5)).verdict == "zero_limit"
        with pytest.raises(UnsupportedPrediction):
            predict_short_time(stable_triplet(1.999), Power(p=0.5))

    @pytest.mark.parametrize("f", [GeneralLIL(), RegularlyVarying(index=0.5)])
    def test_unsupported(self, f):
        with pytest.raises(UnsupportedPrediction):
            predict_short_time(CharacteristicTriplet.brownian(1.0), f)

    def test_transfer(self):
        trip = CharacteristicTriplet.compound_poisson(5.0, UniformJumps(-1, 1), 0.3)
        pred = predict_short_time(trip, Power(p=1.0)).transferred(np.array([[2.0]]))
        assert pred.value[0] == pytest.approx(0.6)
