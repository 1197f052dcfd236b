from fractions import Fraction

import numpy as np
import pytest

from ratmix import affine, markov, renewal
from ratmix.errors import BudgetError, DomainError


@pytest.fixture
def hopf_layout(hopf):
    return affine.build_layout(hopf, 16)


@pytest.fixture
def geometric_layout(geometric_shift):
    return affine.build_layout(geometric_shift, 20)


class TestLayout:
    def test_hopf_cells_are_unit_intervals(self, hopf_layout):
        assert hopf_layout.exact
        assert hopf_layout.cells[1] == (0, 1)
        assert hopf_layout.cells[5] == (4, 5)
        assert hopf_layout.truncated == Fraction(1, 2)

    def test_cutoff_too_small(self, hopf):
        with pytest.raises(BudgetError):
            affine.build_layout(hopf, 1)

    def test_fiber_widths_sum_to_one(self, geometric_layout):
        for t in range(1, 19):
            assert sum(w for _, w in affine.fiber_widths(geometric_layout, t)) == 1

    def test_json(self, hopf_layout):
        assert '"subcells"' in hopf_layout.to_json()


class TestTransformation:
    def test_tau_on_the_first_cell(self, hopf_layout):
        assert affine.tau_eval(hopf_layout, Fraction(1, 4)) == Fraction(1, 2)
        assert affine.tau_eval(hopf_layout, Fraction(3, 4)) == Fraction(3, 2)

    def test_boundary_point(self, hopf_layout):
        with pytest.raises(DomainError):
            affine.tau_eval(hopf_layout, Fraction(1, 2))

    def test_itinerary(self, hopf_layout):
        assert affine.itinerary(hopf_layout, Fraction(1, 3), 3) == (1, 1, 2)

    def test_itinerary_reports_the_failing_step(self, hopf_layout):
        # 1/4 -> 1/2, a boundary point
        with pytest.raises(DomainError) as info:
            affine.itinerary(hopf_layout, Fraction(1, 4), 3)
        assert info.value.step == 1

    def test_natural_extension_slots(self, hopf_layout):
        y = Fraction(1, 3)
        assert affine.natext_eval(hopf_layout, Fraction(1, 4), y) == (Fraction(1, 2), y / 2)
        assert affine.natext_eval(hopf_layout, Fraction(5, 4), y) == (Fraction(1, 2), Fraction(1, 2) + y / 2)

    def test_natural_extension_needs_unit_y(self, hopf_layout):
        with pytest.raises(DomainError):
            affine.natext_eval(hopf_layout, Fraction(1, 4), 2)


class TestMeasurePreservation:
    @pytest.mark.parametrize("interval", [(Fraction(0), Fraction(1)), (Fraction(1, 3), Fraction(29, 7)),
                                          (Fraction(2), Fraction(15))])
    def test_hopf_is_exact_inside_the_cutoff(self, hopf_layout, interval):
        report = affine.measure_preservation_test(hopf_layout, interval)
        assert report.values["discrepancy"] == 0
        assert report.verdict == "exact"

    def test_geometric_is_exact_inside_the_cutoff(self, geometric_layout):
        report = affine.measure_preservation_test(geometric_layout, (Fraction(1, 5), Fraction(3, 2)))
        assert report.values["discrepancy"] == 0

    def test_truncated_cell_stays_within_bound(self, hopf_layout):
        report = affine.measure_preservation_test(hopf_layout, (Fraction(0), Fraction(16)))
        assert report.values["discrepancy"] == Fraction(1, 2)
        assert report.passed
        assert report.verdict == "within bound"

    def test_float_layout(self):
        layout = affine.build_layout(markov.renewal_shift(renewal.geometric(0.5)), 20)
        assert layout.endpoint_error > 0
        assert affine.measure_preservation_test(layout, (0.1, 1.7)).passed

    def test_empty_interval(self, hopf_layout):
        with pytest.raises(DomainError):
            affine.measure_preservation_test(hopf_layout, (1, 1))


class TestMonteCarlo:
    def test_cylinder_frequencies(self, geometric_shift, geometric_layout, rng):
        total = float(geometric_layout.cells[20][1])
        words = affine.batch_itinerary(geometric_layout, rng.uniform(0.0, total, size=10 ** 6), 4)
        cylinders = [(1,), (1, 1), (2, 1), (1, 3, 2), (3, 2, 1, 1)]
        freqs = affine.cylinder_frequencies(words, cylinders)
        for word in cylinders:
            freq, se = freqs[word]
            expected = float(markov.cylinder_measure(geometric_shift, markov.Cylinder(word))) / total
            assert abs(freq - expected) <= 3 * se

    def test_batch_agrees_with_exact_itinerary(self, hopf_layout):
        xs = [Fraction(1, 3), Fraction(7, 3), Fraction(22, 7)]
        words = affine.batch_itinerary(hopf_layout, [float(x) for x in xs], 5)
        for x, row in zip(xs, words):
            assert tuple(row.tolist()) == affine.itinerary(hopf_layout, x, 5)


class TestOrbit:
    def test_rows_and_csv(self, hopf_layout):
        rows = affine.orbit(hopf_layout, Fraction(1, 3), Fraction(1, 2), 3)
        assert [r[3] for r in rows] == [1, 1, 2, 1]
        assert rows[-1][1] == Fraction(2, 3)
        text = affine.orbit_csv(rows)
        assert text.splitlines()[0] == "step,x,y,state"
        assert text.splitlines()[1] == "0,1/3,1/2,1"
