import math
from fractions import Fraction

import numpy as np
import pytest

from ratmix.numeric import BLOCK, compensated_prefix, dyadic_grid


class TestCompensatedPrefix:
    def test_error_does_not_accumulate_across_blocks(self):
        values = np.full(8 * BLOCK, 1e-16)
        values[0] = 1.0
        prefix = compensated_prefix(values)
        # a plain running sum never moves off 1.0
        assert np.cumsum(values)[-1] == 1.0
        # past the first block every prefix is within a few ulps
        for n in (BLOCK + 1, 3 * BLOCK + 100, 8 * BLOCK):
            assert prefix[n] == pytest.approx(1.0 + (n - 1) * 1e-16, rel=0, abs=5e-16)

    def test_matches_fsum_at_every_index(self, rng):
        values = rng.random(3 * BLOCK + 17) * 10.0 ** rng.integers(-8, 8, size=3 * BLOCK + 17)
        prefix = compensated_prefix(values)
        for n in range(0, values.size + 1, 37):
            exact = math.fsum(values[:n].tolist())
            assert prefix[n] == pytest.approx(exact, rel=1e-13, abs=0)

    def test_exact_values(self):
        arr = np.empty(4, dtype=object)
        arr[:] = [Fraction(1, k) for k in range(1, 5)]
        assert compensated_prefix(arr).tolist() == [0, 1, Fraction(3, 2), Fraction(11, 6), Fraction(25, 12)]


class TestGrids:
    def test_dyadic_grid_ends_at_the_horizon(self):
        assert dyadic_grid(100).tolist() == [1, 2, 4, 8, 16, 32, 64, 100]
        assert dyadic_grid(64, start=16).tolist() == [16, 32, 64]
