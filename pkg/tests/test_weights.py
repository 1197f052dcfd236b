import math
from fractions import Fraction

import numpy as np
import pytest

from ratmix import weights
from ratmix.errors import ConfigError, DegenerateWeightError, HorizonError
from ratmix.numeric import dyadic_grid


def exact_weight(values):
    arr = np.empty(len(values), dtype=object)
    arr[:] = [Fraction(v) for v in values]
    return weights.WeightSeq(values=arr)


class TestWeightSeq:
    def test_partial_sums_follow_left_closed_convention(self):
        u = exact_weight([1, Fraction(1, 2), Fraction(1, 3)])
        assert u.partial_sum(0) == 0
        assert u.partial_sum(3) == Fraction(11, 6)
        assert u.exact

    def test_harmonic_closed_form_matches_direct_sum(self):
        u = weights.harmonic(10 ** 4)
        direct = math.fsum(1.0 / (k + 1) for k in range(5000))
        assert u.partial_sum(5000) == pytest.approx(direct, rel=1e-12)

    @pytest.mark.parametrize("make", [
        lambda rng: weights.WeightSeq(values=rng.random(2000)),
        lambda rng: weights.harmonic(2000),
        lambda rng: weights.alternating(2000),
    ])
    def test_partial_sums_are_monotone_and_bounded(self, rng, make):
        u = make(rng)
        ns = np.arange(u.horizon + 1)
        sums = u.partial_sums_at(ns)
        assert np.all(np.diff(sums) >= 0)
        assert np.all(sums <= ns * u.take(u.horizon + 1).max() * (1 + 1e-12) + 1e-12)

    def test_exact_and_float_partial_sums_agree(self, rng):
        u = weights.WeightSeq(values=rng.random(513) + 1e-3)
        ns = np.arange(1, 514)
        exact = u.as_exact().partial_sums_at(ns)
        approx = u.partial_sums_at(ns)
        assert all(abs(float(x) - y) <= 1e-12 * float(x) for x, y in zip(exact.tolist(), approx.tolist()))

    def test_negative_entry_rejected(self):
        with pytest.raises(DegenerateWeightError):
            weights.WeightSeq(values=[1.0, -0.5])

    def test_reading_past_horizon(self):
        u = weights.constant(10)
        with pytest.raises(HorizonError):
            u.take(12)

    def test_unknown_named_weight(self):
        with pytest.raises(ConfigError):
            weights.named("nope", (), 10)

    def test_csv_keeps_fractions(self):
        u = exact_weight([1, Fraction(1, 3)])
        back = weights.WeightSeq.from_csv(u.to_csv())
        assert back.values.tolist() == [Fraction(1), Fraction(1, 3)]


class TestSmoothness:
    def test_constant_weight_is_smooth(self):
        profile = weights.smoothness_profile(weights.constant(200), dyadic_grid(128), tol=1e-3)
        assert np.all(profile.values == 0)
        assert profile.meta["smooth_at_horizon"]

    def test_alternating_weight_is_not_smooth(self):
        profile = weights.smoothness_profile(weights.alternating(2000), dyadic_grid(1024), tol=0.1)
        # every step has |u_k - u_{k+1}| = 1 while a_u(n) is about n/2
        assert profile.last == pytest.approx(2.0, rel=1e-2)
        assert not profile.meta["smooth_at_horizon"]

    def test_grid_must_leave_room_for_the_last_difference(self):
        with pytest.raises(HorizonError):
            weights.smoothness_profile(weights.constant(64), dyadic_grid(64))


class TestSubsampling:
    @pytest.mark.parametrize("p", [2, 3, 7])
    def test_inequality_holds_for_power_law(self, p):
        u = weights.power_law(0.5, 2000)
        report = weights.subsample_report(u, p, 1999 // p - 1)
        assert report.passed
        assert report.values["slack"] >= 0

    @pytest.mark.parametrize("p", range(2, 9))
    def test_inequality_holds_for_random_weights(self, rng, p):
        for _ in range(5):
            u = weights.WeightSeq(values=rng.random(1201) ** 3)
            n = int(rng.integers(1, 1200 // p))
            assert weights.subsample_report(u, p, n).passed

    def test_exact_weight_gives_exact_sides(self):
        u = exact_weight([1] + [Fraction(1, k) for k in range(1, 40)])
        report = weights.subsample_report(u, 2, 10)
        assert isinstance(report.values["rhs"], Fraction)
        assert report.passed


class TestRegularVariation:
    def test_hopf_asymptotic_index(self):
        fit = weights.rv_index_estimate(weights.hopf_asymptotic(10 ** 5), dyadic_grid(10 ** 5, start=16))
        assert fit.index == pytest.approx(-0.5, abs=1e-9)

    def test_power_law_index(self):
        fit = weights.rv_index_estimate(weights.power_law(0.5, 10 ** 5), dyadic_grid(10 ** 5, start=10))
        assert fit.index == pytest.approx(-0.5, abs=1e-2)

    def test_zero_entry_is_degenerate(self):
        with pytest.raises(DegenerateWeightError):
            weights.rv_index_estimate(weights.alternating(100), [1, 3, 5])

    def test_constant_is_comparable(self):
        eta, M = weights.comparability_constants(weights.constant(100), dyadic_grid(100))
        assert eta == pytest.approx(1.0)
        assert M == pytest.approx(1.0)


class TestConstructions:
    def test_product_weight(self):
        u = weights.power_law(1.0, 100)
        prod = weights.product_weight(u, (1, 2))
        assert prod.value(3) == pytest.approx(1 / 4 * 1 / 7)
        assert prod.horizon == 50

    def test_surrogate_replaces_zeros(self):
        v, replaced = weights.surrogate_weight(weights.alternating(9))
        assert replaced.tolist() == [1, 3, 5, 7, 9]
        assert v.value(3) == 2.0 ** -3
        assert v.value(2) == 1.0

    def test_asym_distance_of_equal_weights(self):
        u = weights.harmonic(100)
        assert weights.asym_distance(u, u, 50) == 0.0

    def test_unnormalized_triangle_inequality(self, rng):
        for _ in range(10):
            u, v, w = (exact_weight([1] + [Fraction(int(x), 16) for x in rng.integers(0, 17, size=40)])
                       for _ in range(3))
            n = 40
            uw = weights.asym_distance(u, w, n) * u.partial_sum(n)
            uv = weights.asym_distance(u, v, n) * u.partial_sum(n)
            vw = weights.asym_distance(v, w, n) * v.partial_sum(n)
            assert uw <= uv + vw


class TestKaluza:
    def test_kaluza_log_passes(self):
        assert weights.kaluza_report(weights.kaluza_log(5000)).passed

    def test_zero_entries_fail(self):
        report = weights.kaluza_report(weights.alternating(20))
        assert not report.passed
        assert report.verdict == "not a Kaluza sequence at horizon"
