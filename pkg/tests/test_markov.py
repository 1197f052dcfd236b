import itertools
from fractions import Fraction

import numpy as np
import pytest

from ratmix import config, markov, renewal
from ratmix.errors import ConfigError, InvalidDistribution
from ratmix.markov import Cylinder


def brute_force_correlation(c, A, B, n, states):
    """Sum of cylinder measures over every word on `states` matching A and B shifted by n."""
    later = B.shifted(n)
    first, last = min(A.offset, later.offset), max(A.end, later.end)
    fixed = {}
    for cyl in (A, later):
        for i, s in enumerate(cyl.states):
            if fixed.setdefault(cyl.offset + i, s) != s:
                return Fraction(0)
    free = [p for p in range(first, last + 1) if p not in fixed]
    total = Fraction(0)
    for choice in itertools.product(states, repeat=len(free)):
        cells = {**fixed, **dict(zip(free, choice))}
        total += markov.cylinder_measure(c, Cylinder(tuple(cells[p] for p in range(first, last + 1)), first), True)
    return total


class TestRenewalShift:
    def test_master_cross_oracle(self, random_lifetime):
        for _ in range(50):
            f = random_lifetime()
            c = markov.renewal_shift(f)
            returns = c.transitions(1, [1], 512, exact=True)[1]
            u = renewal.renewal_from_lifetime(f, 512, mode="rational")
            assert returns.tolist() == u.values.tolist()

    def test_needs_proper_lifetime(self):
        with pytest.raises(InvalidDistribution):
            markov.renewal_shift(renewal.LifetimeDist.explicit({1: Fraction(1, 2)}))

    @pytest.mark.parametrize("s", [1, 3])
    def test_closed_form_matches_propagation(self, geometric_shift, s):
        closed = geometric_shift.transitions(s, [1, 2, 3], 40, exact=False)
        exact = geometric_shift.transitions(s, [1, 2, 3], 40, exact=True)
        for t in (1, 2, 3):
            assert np.allclose(closed[t], [float(x) for x in exact[t]], atol=1e-14)

    def test_invariant_measure_is_the_tail(self, stp_shift):
        assert stp_shift.pi(5, exact=True) == Fraction(1, 8)

    def test_stationarity(self, geometric_shift):
        assert markov.stationarity_residual(geometric_shift, 30) == 0


class TestHopfChain:
    def test_three_step_row(self, hopf):
        row = markov.nstep_row(hopf, 1, 3, exact=True)
        assert dict(row) == {1: Fraction(3, 8), 2: Fraction(3, 8), 3: Fraction(1, 8), 4: Fraction(1, 8)}
        assert row.total() == 1

    def test_stationarity_is_exact(self, hopf):
        assert markov.stationarity_residual(hopf, 20) == 0

    def test_occupation_scaling(self, hopf):
        u = markov.occupation_sequence(hopf, 1, 10 ** 4)
        scaled = [u.value(n) * np.sqrt(n) for n in (5000, 7500, 10 ** 4)]
        assert max(scaled) / min(scaled) < 1.01
        assert scaled[-1] == pytest.approx(np.sqrt(2 / np.pi), rel=1e-2)

    def test_float_and_exact_rows_agree(self, hopf):
        exact = markov.nstep_row(hopf, 2, 12, exact=True)
        approx = markov.nstep_row(hopf, 2, 12)
        assert set(exact) == set(approx)
        assert all(float(exact[t]) == pytest.approx(approx[t]) for t in exact)


class TestTabooProbabilities:
    def test_last_exit_decomposition(self, small_lifetime):
        c = markov.renewal_shift(small_lifetime)
        targets = [1, 2, 3, 4]
        plain = c.transitions(1, targets, 64, exact=True)
        taboo = markov.taboo_table(c, 1, targets, 64, exact=True)
        for t in targets:
            for m in range(1, 65):
                split = sum((plain[1][m - k] * taboo[t][k] for k in range(1, m + 1)), Fraction(0))
                assert plain[t][m] == split

    def test_taboo_rows_start_with_point_mass(self, hopf):
        rows = markov.taboo_nstep(hopf, 1, 4, exact=True)
        assert dict(rows[0]) == {1: 1}
        assert len(rows) == 5

    def test_chung_identity_st_petersburg(self, monkeypatch):
        monkeypatch.setattr(config, "RATIONAL_LIMIT", 1000)
        c = markov.renewal_shift(renewal.st_petersburg())
        targets = range(1, 9)
        sums = markov.chung_partial_sums(c, 1, targets, 1000, exact=True)
        for t in targets:
            partial, limit = sums[t]
            assert limit == c.pi(t, exact=True)
            assert limit - partial[-1] == c.f.tail(t + 1000, exact=True)

    def test_chung_sums_increase(self, hopf):
        sums = markov.chung_partial_sums(hopf, 1, [2], 200)
        partial, limit = sums[2]
        assert np.all(np.diff(partial) >= 0)
        assert partial[-1] <= limit


class TestCylinders:
    @pytest.mark.parametrize("text", ["[1,2]_3", "1,2@3", " [1, 2]_3 "])
    def test_parse(self, text):
        A = Cylinder.parse(text)
        assert A == Cylinder((1, 2), 3)
        assert str(A) == "[1,2]_3"

    def test_parse_without_offset(self):
        assert Cylinder.parse("4,5").offset == 0

    def test_bad_cylinders(self):
        with pytest.raises(ConfigError):
            Cylinder(())
        with pytest.raises(ConfigError):
            Cylinder((0, 1))
        with pytest.raises(ConfigError):
            Cylinder.parse("a,b")

    def test_merge_and_conflict(self):
        assert markov.merged_word(Cylinder((1, 2)), Cylinder((2, 3), 1)) == Cylinder((1, 2, 3))
        assert markov.merged_word(Cylinder((1, 2)), Cylinder((3,), 1)) is None
        with pytest.raises(ConfigError):
            markov.merged_word(Cylinder((1,)), Cylinder((1,), 3))

    def test_measure(self, geometric_shift):
        assert markov.cylinder_measure(geometric_shift, Cylinder((2, 1, 3))) == Fraction(1, 16)


class TestCorrelations:
    @pytest.mark.parametrize("A,B", [
        (Cylinder((2, 1)), Cylinder((1,))),
        (Cylinder((1, 2)), Cylinder((2, 1))),
        (Cylinder((1,), 2), Cylinder((4, 3))),
        (Cylinder((3, 2, 1)), Cylinder((2,), 1)),
    ])
    def test_against_path_enumeration(self, small_lifetime, A, B):
        c = markov.renewal_shift(small_lifetime)
        corr = markov.correlation_sequence(c, A, B, 6, exact=True)
        for n in range(6):
            assert corr[n] == brute_force_correlation(c, A, B, n, [1, 2, 3, 4])
            assert markov.cylinder_correlation(c, A, B, n, exact=True) == corr[n]

    @pytest.mark.parametrize("k", [1, 4])
    def test_offset_covariance(self, small_lifetime, k):
        c = markov.renewal_shift(small_lifetime)
        pairs = [(Cylinder((2, 1)), Cylinder((1,))), (Cylinder((1,), 2), Cylinder((4, 3))),
                 (Cylinder((3, 2, 1)), Cylinder((2,), 1))]
        for A, B in pairs:
            for n in range(8):
                assert markov.cylinder_correlation(c, A.shifted(k), B.shifted(k), n, exact=True) \
                    == markov.cylinder_correlation(c, A, B, n, exact=True)

    def test_hopf_pair(self, hopf):
        corr = markov.correlation_sequence(hopf, Cylinder((1,)), Cylinder((1,)), 5, exact=True)
        assert corr.tolist() == [1, Fraction(1, 2), Fraction(1, 2), Fraction(3, 8), Fraction(3, 8)]


class TestRatioLimits:
    def test_geometric_ratio_is_one_after_the_first_step(self, geometric_shift):
        report = markov.ratio_limit_report(geometric_shift, 1, [(1, 2, 0)], 1000)
        values = report.values["1,2,0"]
        assert values["E_N"] < 0.01
        assert values["exceptional_count"] == 1

    def test_st_petersburg_pair(self, stp_shift):
        report = markov.ratio_limit_report(stp_shift, 1, [(1, 2, 0)], 4096, jobs=2)
        profile = report.profiles["1,2,0"]
        assert profile.last < 0.25
        assert profile.last < profile.values[0]

    def test_hopf_shifted_pair(self, hopf):
        report = markov.ratio_limit_report(hopf, 1, [(2, 3, 1)], 10 ** 4)
        profile = report.profiles["2,3,1"]
        tail = profile.values[profile.grid >= 1000]
        assert np.all(np.diff(tail) < 0)
        assert report.values["2,3,1"]["decreasing"]

    def test_jobs_do_not_change_results(self, geometric_shift):
        pairs = [(1, 2, 0), (3, 1, 2), (2, 2, 1)]
        one = markov.ratio_limit_report(geometric_shift, 1, pairs, 200, jobs=1)
        many = markov.ratio_limit_report(geometric_shift, 1, pairs, 200, jobs=3)
        assert one.to_json() == many.to_json()

    def test_needs_pairs(self, hopf):
        with pytest.raises(ConfigError):
            markov.ratio_limit_report(hopf, 1, [], 10)
