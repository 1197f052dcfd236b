from fractions import Fraction

import numpy as np
import pytest

from ratmix import indexsets, weights
from ratmix.errors import ConfigError, HorizonError, NestingError
from ratmix.indexsets import IndexSet
from ratmix.numeric import dyadic_grid


class TestIndexSet:
    def test_intervals_are_merged(self):
        K = IndexSet([(5, 7), (1, 2), (3, 4), (10, 9)])
        assert K.intervals == [(1, 7)]

    def test_membership_and_counts(self):
        K = IndexSet([(2, 4), (10, 12)])
        assert 3 in K
        assert 5 not in K
        assert K.count(0, 11) == 5
        assert K.count(5, 9) == 0

    def test_complement(self):
        assert IndexSet([(2, 3)]).complement(5).intervals == [(0, 1), (4, 5)]

    def test_from_mask_and_back(self):
        mask = np.array([0, 1, 1, 0, 1], dtype=bool)
        K = IndexSet.from_mask(mask)
        assert K.intervals == [(1, 2), (4, 4)]
        assert K.mask(5).tolist() == mask.tolist()

    def test_negative_indices_rejected(self):
        with pytest.raises(ConfigError):
            IndexSet([(-2, 3)])

    def test_partially_known_set_refuses_to_extrapolate(self):
        K = IndexSet.from_indices([1, 2], known_to=10)
        with pytest.raises(HorizonError):
            K.count(0, 20)

    def test_generator_set_extends_on_demand(self):
        K = IndexSet(generator="squares", known_to=10)
        assert 144 in K
        assert 143 not in K

    def test_shift_and_subset(self):
        K = IndexSet([(3, 5)])
        assert K.shift(-4).intervals == [(0, 1)]
        assert K.issubset(IndexSet([(0, 10)]), 20)
        assert not IndexSet([(0, 11)]).issubset(IndexSet([(0, 10)]), 20)


class TestCounterexample:
    def test_small_for_harmonic_weight_but_dense(self):
        u = weights.harmonic(2 ** 25)
        K = indexsets.counterexample_set(known_to=2 ** 25)
        ratio = indexsets.weighted_mass(K, u, 2 ** 25) / u.partial_sum(2 ** 25)
        assert ratio <= 0.2
        assert K.count(1, 262144) / 262144 >= 0.75

    def test_membership_of_known_points(self):
        K = indexsets.counterexample_set(known_to=2 ** 20)
        assert 100000 in K
        assert 2 in K
        assert 3 not in K


MILLION = 10 ** 6


@pytest.fixture(scope="module")
def root_weight():
    return weights.power_law(0.5, MILLION)


class TestSmallness:
    @pytest.mark.parametrize("seed", range(100))
    def test_sparse_random_sets_are_small(self, root_weight, seed):
        K = IndexSet(generator="bernoulli", params=(0.01, seed), known_to=MILLION)
        profile = indexsets.smallness_profile(K, root_weight, dyadic_grid(MILLION), tol=0.1)
        assert profile.last <= 0.1
        assert profile.meta["small_at_horizon"]

    @pytest.mark.parametrize("seed", range(100))
    def test_dense_random_sets_are_not_small(self, root_weight, seed):
        K = IndexSet(generator="bernoulli", params=(0.2, seed), known_to=MILLION)
        assert indexsets.smallness_profile(K, root_weight, dyadic_grid(MILLION)).last >= 0.05

    def test_complement_adds_up_exactly(self, rng):
        arr = np.empty(300, dtype=object)
        arr[:] = [Fraction(int(x), int(y)) for x, y in zip(rng.integers(0, 50, 300), rng.integers(1, 50, 300))]
        u = weights.WeightSeq(values=arr)
        for n in (1, 17, 299):
            K = IndexSet.from_mask(rng.random(n) < 0.3)
            assert indexsets.weighted_mass(K, u, n) + indexsets.weighted_mass(K.complement(n - 1), u, n) \
                == u.partial_sum(n)

    def test_complement_adds_up_in_floating_point(self, rng):
        u = weights.WeightSeq(values=rng.random(50001))
        for n in (10, 4096, 50000):
            K = IndexSet.from_mask(rng.random(n) < 0.5)
            total = indexsets.weighted_mass(K, u, n) + indexsets.weighted_mass(K.complement(n - 1), u, n)
            assert total == pytest.approx(u.partial_sum(n), rel=1e-12)

    def test_weighted_mass_is_monotone_in_the_set(self, rng):
        u = weights.harmonic(10000)
        mask = rng.random(10001) < 0.1
        K = IndexSet.from_mask(mask)
        larger = IndexSet.from_mask(mask | (rng.random(10001) < 0.1))
        assert K.issubset(larger, 10000)
        for n in (1, 100, 10000):
            assert indexsets.weighted_mass(K, u, n) <= indexsets.weighted_mass(larger, u, n)

    def test_exact_weighted_mass(self):
        arr = np.empty(6, dtype=object)
        arr[:] = [Fraction(1, k + 1) for k in range(6)]
        u = weights.WeightSeq(values=arr)
        assert indexsets.weighted_mass(IndexSet([(1, 2)]), u, 6) == Fraction(1, 2) + Fraction(1, 3)

    def test_density_profile(self):
        profile = indexsets.density_profile(IndexSet(generator="evens", known_to=100), [10, 100])
        assert profile.values.tolist() == [0.5, 0.5]


class TestExceptionalSets:
    def test_nan_counts_as_exceptional(self):
        K = indexsets.exceptional_set([1.0, 1.5, 0.95, np.nan], 1.0, 0.1)
        assert K.intervals == [(1, 1), (3, 3)]

    def test_strong_cesaro_error_exact(self):
        u = weights.constant(10)
        s = np.ones(10)
        s[0] = 2.0
        assert indexsets.strong_cesaro_error(s, 1.0, u, 4) == pytest.approx(0.25)

    def test_chebyshev_bound_dominates(self, rng):
        u = weights.harmonic(1000)
        s = 1.0 + rng.normal(scale=0.2, size=1000)
        small, bound = indexsets.chebyshev_bound(s, 1.0, u, 1000, eps=0.1)
        assert small <= bound

    def test_strong_cesaro_convergence_controls_mean_and_exceptional_sets(self):
        N = 10 ** 4
        u = weights.harmonic(N)
        k = np.arange(N)
        s = 1.0 + 0.5 * (-1.0) ** k / (k + 1.0) ** 0.3
        w = 1.0 / (k + 1.0)
        errors = []
        for n in (100, 1000, N):
            E = indexsets.strong_cesaro_error(s, 1.0, u, n)
            assert E == pytest.approx(np.sum(w[:n] * np.abs(s[:n] - 1.0)) / np.sum(w[:n]), rel=1e-10)
            mean = indexsets.weighted_cesaro_mean(s, u, n)
            assert abs(mean - 1.0) <= E + 1e-12
            small, bound = indexsets.chebyshev_bound(s, 1.0, u, n, eps=0.1)
            assert small <= bound
            errors.append(E)
        assert errors[0] > errors[1] > errors[2]

    def test_weighted_mean_of_constant_sequence(self):
        u = weights.harmonic(100)
        assert indexsets.weighted_cesaro_mean(np.full(100, 3.0), u, 100) == pytest.approx(3.0)


class TestDiagonalMerge:
    def test_cut_points(self):
        u = weights.constant(1000)
        merged = indexsets.diagonal_merge([IndexSet([(0, 0)]), IndexSet([(0, 1)])], u)
        assert merged.meta["cuts"] == [2, 8]
        assert merged.count(0, 1000) == 0

    def test_requires_nesting(self):
        u = weights.constant(1000)
        with pytest.raises(NestingError):
            indexsets.diagonal_merge([IndexSet([(0, 1)]), IndexSet([(0, 0)])], u)
