from fractions import Fraction

import numpy as np
import pytest

from ratmix import renewal, weights
from ratmix.errors import ConfigError, Inconclusive, InvalidDistribution, NotRenewal
from ratmix.numeric import dyadic_grid


def naive_renewal(probs, N):
    u = [1.0] + [0.0] * N
    support = [k for k in range(1, len(probs)) if probs[k] > 0]
    for n in range(1, N + 1):
        u[n] = sum(probs[k] * u[n - k] for k in support if k <= n)
    return u


class TestLifetimes:
    def test_st_petersburg_tails(self):
        f = renewal.st_petersburg()
        assert f.tail(1, exact=True) == 1
        assert f.tail(2, exact=True) == Fraction(1, 2)
        assert f.tail(5, exact=True) == Fraction(1, 8)
        assert f.tail(5) == 0.125
        assert f.support(20).tolist() == [1, 2, 4, 8, 16]

    def test_pareto_tail_and_mass_agree(self):
        f = renewal.pareto(0.75)
        probs = f.probs(1000)
        assert probs[1:].sum() == pytest.approx(1 - f.tail(1001), rel=1e-12)

    def test_explicit_rejects_bad_masses(self):
        with pytest.raises(InvalidDistribution):
            renewal.LifetimeDist.explicit({0: 1})
        with pytest.raises(InvalidDistribution):
            renewal.LifetimeDist.explicit({1: 0.7, 2: 0.5})

    def test_family_names(self):
        assert renewal.family("geom", (0.5,)).label == "geometric(0.5)"
        assert renewal.family("stp").label == "st-petersburg"
        with pytest.raises(ConfigError):
            renewal.family("nope")
        with pytest.raises(ConfigError):
            renewal.family("geometric", (0.1, 0.2, 0.3))

    def test_tail_and_moment(self):
        L, V = renewal.tail_and_moment(renewal.delta(3), 3)
        assert (L, V) == (3, 9)

    def test_l_increments_for_pareto(self):
        f = renewal.pareto(0.75)
        n = 10 ** 4
        L1, _ = renewal.tail_and_moment(f, n)
        L4, _ = renewal.tail_and_moment(f, 4 * n)
        assert (L4 - L1) / (4 * ((4 * n) ** 0.25 - n ** 0.25)) == pytest.approx(1.0, abs=1e-3)

    def test_distance_to_itself(self, small_lifetime):
        assert renewal.lifetime_distance(small_lifetime, small_lifetime, 10) == 0.0


class TestRenewalEquation:
    def test_geometric_is_constant(self):
        u = renewal.renewal_from_lifetime(renewal.geometric(0.5), 50)
        assert u.value(0) == 1.0
        assert np.allclose(u.values[1:], 0.5)

    def test_exact_geometric(self):
        u = renewal.renewal_from_lifetime(renewal.geometric(Fraction(1, 3), exact=True), 40, mode="rational")
        assert all(x == Fraction(1, 3) for x in u.values[1:])

    def test_periodic_lifetime(self):
        u = renewal.renewal_from_lifetime(renewal.delta(2), 20)
        assert u.values.tolist() == [1.0 if n % 2 == 0 else 0.0 for n in range(21)]
        assert renewal.aperiodicity(u) == 2

    def test_aperiodicity_without_returns(self):
        with pytest.raises(Inconclusive):
            renewal.aperiodicity(renewal.renewal_from_lifetime(renewal.delta(30), 20))

    def test_fft_path_matches_direct_recursion(self):
        f = renewal.pareto(0.75)
        long = renewal.renewal_from_lifetime(f, 20000)
        short = renewal.renewal_from_lifetime(f, 8192)
        assert np.allclose(long.values[:8193], short.values, atol=1e-10)

    def test_sparse_path_matches_naive(self, small_lifetime):
        u = renewal.renewal_from_lifetime(small_lifetime, 200)
        assert np.allclose(u.values, naive_renewal(small_lifetime.probs(200), 200))

    def test_inversion_is_exact(self, small_lifetime):
        u = renewal.renewal_from_lifetime(small_lifetime, 60, mode="rational")
        f = renewal.lifetime_from_renewal(u, 60)
        assert f.probs(60, exact=True).tolist() == small_lifetime.probs(60, exact=True).tolist()

    def test_inversion_round_trips_random_lifetimes(self, random_lifetime):
        for _ in range(20):
            f = random_lifetime()
            u = renewal.renewal_from_lifetime(f, 48, mode="rational")
            back = renewal.lifetime_from_renewal(u, 48)
            assert back.probs(48, exact=True).tolist() == f.probs(48, exact=True).tolist()

    def test_renewal_dominates_first_passage(self, random_lifetime):
        for _ in range(20):
            f = random_lifetime()
            u = renewal.renewal_from_lifetime(f, 64, mode="rational").values
            probs = f.probs(64, exact=True)
            assert all(0 <= u[n] <= 1 and u[n] >= probs[n] for n in range(1, 65))

    def test_float_renewal_dominates_first_passage(self):
        f = renewal.pareto(0.75)
        u = renewal.renewal_from_lifetime(f, 10 ** 4).values
        probs = f.probs(10 ** 4)
        assert np.all(u[1:] >= probs[1:] - 1e-12)
        assert np.all(u <= 1.0 + 1e-12)

    def test_exact_and_float_modes_agree(self, random_lifetime):
        for _ in range(5):
            f = random_lifetime()
            exact = renewal.renewal_from_lifetime(f, 512, mode="rational").values
            approx = renewal.renewal_from_lifetime(f, 512).values
            for x, y in zip(exact.tolist(), approx.tolist()):
                assert abs(float(x) - y) <= 1e-12 * float(x)

    def test_kaluza_log_inverts_to_a_lifetime(self):
        f = renewal.lifetime_from_renewal(weights.kaluza_log(1000), 1000)
        probs = f.probs(1000)
        assert np.all(probs >= 0)
        assert probs[1:].sum() <= 1.0 + 1e-12

    def test_inversion_detects_negative_mass(self):
        with pytest.raises(NotRenewal):
            renewal.lifetime_from_renewal(weights.WeightSeq(values=[1.0, 0.9, 0.1]))

    def test_rational_mode_needs_exact_masses(self):
        with pytest.raises(ConfigError):
            renewal.renewal_from_lifetime(renewal.pareto(0.5), 10, mode="rational")

    def test_renewal_sequence_starts_at_one(self):
        with pytest.raises(NotRenewal):
            renewal.RenewalSeq(values=[0.5, 0.5])


class TestDiagnostics:
    def test_prop83_on_st_petersburg(self):
        report = renewal.prop83_report(renewal.st_petersburg(), 2 ** 14)
        assert report.passed
        assert report.values["classification"] == "advisory"
        assert set(report.profiles) == {"sum_sq_increments", "sum_inv_V2", "L_over_sqrt_n", "smoothness"}

    def test_st_petersburg_smoothness_decreases(self):
        u = renewal.renewal_from_lifetime(renewal.st_petersburg(), 10 ** 5 + 1)
        profile = weights.smoothness_profile(u, dyadic_grid(10 ** 5))
        assert profile.last < 0.1
        assert profile.is_decreasing_tail()

    def test_srlp_of_geometric(self):
        u = renewal.renewal_from_lifetime(renewal.geometric(0.5), 101)
        profile = renewal.srlp_profile(u, dyadic_grid(100))
        assert np.allclose(profile.values, 1.0)
        assert profile.meta["surrogate_indices"] == []

    def test_srlp_of_periodic_sequence(self):
        u = renewal.renewal_from_lifetime(renewal.delta(2), 33)
        profile = renewal.srlp_profile(u, [1, 2])
        assert 1 in profile.meta["surrogate_indices"]
        assert profile.values[0] == 2.0
        assert profile.values[1] == 2.0 ** -3

    def test_srlp_overflow_is_flagged(self):
        u = renewal.renewal_from_lifetime(renewal.delta(2), 2051)
        profile = renewal.srlp_profile(u, [2, 1024, 2049])
        assert profile.meta["overflow"]
        assert profile.meta["saturated"] == [2049]
        assert profile.values[0] == 2.0 ** -3
        assert np.isnan(profile.last_decade_slope())

    @pytest.mark.parametrize("p", [2, 3, 5])
    def test_met_periodic_renewal_sequence(self, p):
        u = renewal.renewal_from_lifetime(renewal.delta(p), 4000)
        assert renewal.aperiodicity(u) == p
        profile = renewal.met_fourier_profile(u, 1 / p, dyadic_grid(4000))
        assert np.all(profile.values > 0.99)

    def test_met_periodic_weight_keeps_its_phase(self):
        profile = renewal.met_fourier_profile(weights.alternating(1000), 0.5, dyadic_grid(1000))
        assert profile.last > 0.9

    def test_met_st_petersburg_decays(self):
        u = renewal.renewal_from_lifetime(renewal.st_petersburg(), 10 ** 5)
        grid = [10 ** 4, 10 ** 5]
        worst = np.max([renewal.met_fourier_profile(u, k / 10, grid).values for k in range(1, 10)], axis=0)
        assert worst[1] < worst[0]

    def test_met_theta_range(self):
        with pytest.raises(ConfigError):
            renewal.met_fourier_profile(weights.constant(10), 1.0, [5])

    def test_kaluza_log_certificate(self):
        report = renewal.kaluza_log_certificate(10 ** 6)
        assert report.passed
        assert report.values["monotonicity_failures"] == 0


class TestDysonConstruction:
    def test_defective_peaks(self):
        d = renewal.defective_renewal(renewal.geometric(0.5), 3, 60)
        assert d.H == pytest.approx(0.875)
        assert d.bound_holds

    def test_defective_exact(self):
        d = renewal.defective_renewal(renewal.geometric(Fraction(1, 2), exact=True), 3, 30, mode="rational")
        assert d.H == Fraction(7, 8)
        assert d.bound_holds

    def test_geometric_construction(self):
        result = renewal.dyson_construct(renewal.geometric(0.5), 0.1, 10)
        assert result.ell == 11
        assert result.report.passed
        assert result.report.values["d_f_g"] < 0.2
        u = naive_renewal(result.g.probs(result.L), result.L)
        assert u[result.L - 1] * 10 < u[result.L]

    def test_small_jump(self):
        result = renewal.dyson_construct(renewal.geometric(0.5), 0.5, 1)
        assert result.ell == 2
        assert result.report.passed

    def test_finite_support_is_perturbed(self, small_lifetime):
        result = renewal.dyson_construct(small_lifetime, 0.2, 3)
        assert result.perturbed
        assert result.report.checks["distance_below_2eps"]

    def test_eps_range(self):
        with pytest.raises(ConfigError):
            renewal.dyson_construct(renewal.geometric(0.5), 1.5, 2)
