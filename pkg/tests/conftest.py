from fractions import Fraction

import numpy as np
import pytest

from ratmix import markov, renewal


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def hopf():
    return markov.hopf_chain()


@pytest.fixture
def geometric_shift():
    return markov.renewal_shift(renewal.geometric(Fraction(1, 2), exact=True))


@pytest.fixture
def stp_shift():
    return markov.renewal_shift(renewal.st_petersburg())


@pytest.fixture
def small_lifetime():
    """f = 1/3 at 1, 1/2 at 2, 1/6 at 4."""
    return renewal.LifetimeDist.explicit({1: Fraction(1, 3), 2: Fraction(1, 2), 4: Fraction(1, 6)})


@pytest.fixture
def random_lifetime(rng):
    """Draws exact lifetimes with at most six support points in [1, 12]."""
    def draw(max_support=6):
        size = int(rng.integers(1, max_support + 1))
        support = sorted(rng.choice(np.arange(1, 2 * max_support + 1), size=size, replace=False).tolist())
        weights = rng.integers(1, 10, size=size).tolist()
        total = sum(weights)
        return renewal.LifetimeDist.explicit({n: Fraction(w, total) for n, w in zip(support, weights)})

    return draw
