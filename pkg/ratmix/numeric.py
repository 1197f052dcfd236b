"""
Shared numerics: compensated prefix sums, exact-rational helpers, evaluation
grids and memory budget checks.

Float arrays are plain float64 numpy arrays. Exact arrays are numpy object
arrays holding `fractions.Fraction` entries; every helper here accepts both.
"""
import logging
import math
from fractions import Fraction
from itertools import accumulate

import numpy as np

from ratmix import config
from ratmix.errors import BudgetError, ConfigError, HorizonError

logger = logging.getLogger(__name__)

BLOCK = 256  # Entries per block in compensated prefix sums


def is_exact(values):
    return isinstance(values, np.ndarray) and values.dtype == object


def to_fraction(value):
    """
    Exact rational from an int, Fraction, "p/q" string or decimal literal.

    Floats are read through their shortest decimal repr, so 0.1 becomes 1/10.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (bool, np.bool_)):
        raise ConfigError(f"not a number: {value!r}")
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise ConfigError(f"not a finite number: {value!r}")
        return Fraction(repr(float(value)))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as e:
            raise ConfigError(f"not a rational number: {value!r}") from e
    raise ConfigError(f"not a number: {value!r}")


def exact_array(values):
    """Object array of Fractions."""
    values = list(values)
    out = np.empty(len(values), dtype=object)
    out[:] = [to_fraction(v) for v in values]
    return out


def float_to_exact(values):
    """Object array holding the exact binary value of each float."""
    values = np.asarray(values, dtype=float)
    out = np.empty(len(values), dtype=object)
    out[:] = [Fraction(v) for v in values.tolist()]
    return out


def zeros(n, exact=False):
    if exact:
        out = np.empty(n, dtype=object)
        out[:] = [Fraction(0)] * n
        return out
    return np.zeros(n)


def as_float(values):
    if is_exact(values):
        return np.array([float(v) for v in values], dtype=float)
    return np.asarray(values, dtype=float)


def exact_sum(values):
    """Correctly rounded float sum, or the exact sum of Fractions."""
    if is_exact(values):
        return sum(values, Fraction(0))
    return math.fsum(np.asarray(values, dtype=float).tolist())


def compensated_prefix(values):
    """
    Block-compensated prefix sums in ascending index order.

    Floats are summed in blocks of BLOCK entries: the running offset before
    each block is a Neumaier-compensated sum of correctly rounded block
    totals, and entries inside a block add a plain cumsum of that block
    alone. Rounding error therefore stays local to one block and does not
    accumulate along the array. Exact arrays are summed exactly.

    :param values: float array or exact object array of length n
    :return: array P of length n+1 with P[k] = values[0] + ... + values[k-1]
    """
    if is_exact(values):
        out = np.empty(len(values) + 1, dtype=object)
        out[:] = list(accumulate(values, initial=Fraction(0)))
        return out

    values = np.asarray(values, dtype=float)
    n = len(values)
    out = np.zeros(n + 1)
    offset = 0.0
    carry = 0.0
    for start in range(0, n, BLOCK):
        block = values[start:start + BLOCK]
        out[start + 1:start + 1 + len(block)] = (offset + carry) + np.cumsum(block)
        # Neumaier update with the correctly rounded block total
        total = math.fsum(block.tolist())
        running = offset + total
        if abs(offset) >= abs(total):
            carry += (offset - running) + total
        else:
            carry += (total - running) + offset
        offset = running
    return out


def compensated_prefix_complex(values):
    values = np.asarray(values, dtype=complex)
    return compensated_prefix(values.real) + 1j * compensated_prefix(values.imag)


def dyadic_grid(horizon, start=1):
    """Grid start, 2*start, 4*start, ... up to horizon, always ending at horizon."""
    if start < 1:
        raise ConfigError("dyadic grids start at 1 or later")
    if horizon < start:
        raise HorizonError(f"horizon {horizon} lies below the grid start {start}")
    points = []
    n = start
    while n <= horizon:
        points.append(n)
        n *= 2
    if points[-1] != horizon:
        points.append(horizon)
    return np.array(points, dtype=np.int64)


def linear_grid(horizon, step):
    if step < 1:
        raise ConfigError("linear grid step must be positive")
    if horizon < step:
        raise HorizonError(f"horizon {horizon} lies below the grid step {step}")
    points = list(range(step, horizon + 1, step))
    if points[-1] != horizon:
        points.append(horizon)
    return np.array(points, dtype=np.int64)


def parse_grid(rule, horizon):
    """
    Build a grid from its command-line rule.

    :param rule: "dyadic" or "linear:<step>"
    :param horizon: last grid point
    """
    rule = (rule or "dyadic").strip()
    if rule == "dyadic":
        return dyadic_grid(horizon)
    if rule.startswith("linear:"):
        try:
            step = int(rule.split(":", 1)[1])
        except ValueError as e:
            raise ConfigError(f"bad grid rule {rule!r}") from e
        return linear_grid(horizon, step)
    raise ConfigError(f"unknown grid rule {rule!r}")


def as_grid(grid):
    grid = np.asarray(grid, dtype=np.int64)
    if grid.ndim != 1 or grid.size == 0:
        raise ConfigError("grid must be a nonempty list of indices")
    return grid


def require_rational_horizon(n):
    if n > config.RATIONAL_LIMIT:
        raise ConfigError(
            f"rational mode is limited to horizons <= {config.RATIONAL_LIMIT} (got {n}); "
            f"raise RATMIX_RATIONAL_LIMIT or use float mode"
        )


def check_budget(entries, exact=False, what="array"):
    """Raise BudgetError when `entries` numbers would not fit in the memory budget."""
    per_entry = config.EXACT_ENTRY_BYTES if exact else 8
    needed = int(entries) * per_entry
    if needed > config.budget_bytes():
        raise BudgetError(
            f"{what} needs about {needed / 2**20:.1f} MiB, budget is {config.BUDGET_MB:g} MiB "
            f"(RATMIX_BUDGET_MB)"
        )
    logger.debug("%s: %d entries within budget", what, entries)
