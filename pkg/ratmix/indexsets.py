"""
Subsets of the natural numbers as sorted disjoint integer intervals, and the
small-set calculus built on them: weighted mass, smallness and density
profiles, exceptional sets, diagonal merging and strong-Cesaro errors.
"""
import json
import logging
import math
from fractions import Fraction

import numpy as np

from ratmix import config
from ratmix.errors import ConfigError, HorizonError, NestingError
from ratmix.numeric import as_grid, compensated_prefix, dyadic_grid, is_exact
from ratmix.report import ConvergenceProfile
from ratmix.weights import positive_partial_sums

logger = logging.getLogger(__name__)

INDEX_LIMIT = 2 ** 62  # Largest index a generator may produce

GENERATORS = {}


def generator(name):
    """Register a rule bound -> (starts, ends) covering the set on [0, bound]."""
    def register(fn):
        GENERATORS[name] = fn
        return fn
    return register


@generator("naturals")
def _naturals(bound):
    return np.array([0]), np.array([bound])


@generator("evens")
def _evens(bound):
    points = np.arange(0, bound + 1, 2, dtype=np.int64)
    return points, points


@generator("squares")
def _squares(bound):
    points = np.arange(0, math.isqrt(bound) + 1, dtype=np.int64) ** 2
    return points, points


@generator("counterexample")
def _counterexample(bound):
    starts, ends = [], []
    k = 1
    while 2 ** (k * k) <= bound:
        starts.append(2 ** (k * k))
        ends.append(k * 2 ** (k * k))
        k += 1
    return np.array(starts, dtype=np.int64), np.array(ends, dtype=np.int64)


@generator("bernoulli")
def _bernoulli(bound, density, seed):
    """Each index is a member independently with probability `density`."""
    rng = np.random.default_rng(int(seed))
    mask = rng.random(bound + 1) < float(density)
    return _runs(mask)


def _runs(mask, offset=0):
    edges = np.diff(np.concatenate(([0], mask.astype(np.int8), [0])))
    starts = np.flatnonzero(edges == 1) + offset
    ends = np.flatnonzero(edges == -1) - 1 + offset
    return starts.astype(np.int64), ends.astype(np.int64)


def _normalize(starts, ends):
    """Sort, drop empty intervals and merge overlapping or adjacent ones."""
    starts = np.asarray(starts, dtype=np.int64)
    ends = np.asarray(ends, dtype=np.int64)
    keep = starts <= ends
    starts, ends = starts[keep], ends[keep]
    if starts.size == 0:
        return starts, ends
    if np.any(starts < 0):
        raise ConfigError("index sets live in the natural numbers")
    order = np.argsort(starts, kind="stable")
    starts, ends = starts[order], ends[order]
    reach = np.maximum.accumulate(ends)
    fresh = np.ones(starts.size, dtype=bool)
    fresh[1:] = starts[1:] > reach[:-1] + 1
    heads = np.flatnonzero(fresh)
    tails = np.append(heads[1:] - 1, starts.size - 1)
    return starts[heads], reach[tails]


class IndexSet:
    """
    K subset of N stored as disjoint closed intervals [a_i, b_i] with
    a_i <= b_i < a_{i+1} - 1.

    A set is either complete (a finite set, `known_to` None), generator-backed
    (materialized to `known_to` and regenerated further on demand), or only
    known up to `known_to` (derived from data with a horizon).
    """

    def __init__(self, intervals=(), generator=None, params=(), known_to=None):
        self.generator = generator
        self.params = tuple(params)
        self.meta = {}
        if generator is not None:
            if generator not in GENERATORS:
                raise ConfigError(f"unknown index set generator {generator!r}; expected one of {sorted(GENERATORS)}")
            known_to = 0 if known_to is None else int(known_to)
            if known_to >= INDEX_LIMIT:
                raise HorizonError(f"{generator}: bound {known_to} beyond supported indices")
            starts, ends = GENERATORS[generator](known_to, *self.params)
        else:
            pairs = [(int(a), int(b)) for a, b in intervals]
            starts = np.array([a for a, _ in pairs], dtype=np.int64)
            ends = np.array([b for _, b in pairs], dtype=np.int64)
        self.starts, self.ends = _normalize(starts, ends)
        self.known_to = known_to

    @classmethod
    def _from_arrays(cls, starts, ends, known_to=None):
        out = cls(known_to=known_to)
        out.starts, out.ends = _normalize(starts, ends)
        return out

    @classmethod
    def from_indices(cls, indices, known_to=None):
        indices = np.unique(np.asarray(list(indices), dtype=np.int64))
        if indices.size == 0:
            return cls(known_to=known_to)
        breaks = np.flatnonzero(np.diff(indices) > 1)
        starts = np.concatenate(([indices[0]], indices[breaks + 1]))
        ends = np.concatenate((indices[breaks], [indices[-1]]))
        return cls._from_arrays(starts, ends, known_to)

    @classmethod
    def from_mask(cls, mask, offset=0, known_to=None):
        starts, ends = _runs(np.asarray(mask, dtype=bool), offset)
        return cls._from_arrays(starts, ends, known_to)

    def __repr__(self):
        name = self.generator or "explicit"
        return f"IndexSet({name}, {self.starts.size} intervals, known_to={self.known_to})"

    def __eq__(self, other):
        if not isinstance(other, IndexSet):
            return NotImplemented
        return (self.generator == other.generator
                and np.array_equal(self.starts, other.starts)
                and np.array_equal(self.ends, other.ends))

    @property
    def intervals(self):
        return list(zip(self.starts.tolist(), self.ends.tolist()))

    def upto(self, n):
        """This set, materialized through index n."""
        if self.known_to is None or n <= self.known_to:
            return self
        if self.generator is None:
            raise HorizonError(f"index set only known up to {self.known_to}, asked about {n}")
        return IndexSet(generator=self.generator, params=self.params, known_to=n)

    def clipped(self, lo, hi):
        """(starts, ends) of K intersected with [lo, hi]."""
        if hi < lo:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        full = self.upto(hi)
        starts = np.maximum(full.starts, lo)
        ends = np.minimum(full.ends, hi)
        keep = starts <= ends
        return starts[keep], ends[keep]

    def __contains__(self, x):
        x = int(x)
        full = self.upto(x)
        i = int(np.searchsorted(full.starts, x, side="right")) - 1
        return i >= 0 and x <= int(full.ends[i])

    def count(self, lo, hi):
        """|K intersected with [lo, hi]|, exact."""
        starts, ends = self.clipped(lo, hi)
        return int(np.sum(ends - starts + 1))

    def is_empty(self, bound=None):
        if bound is None:
            if self.known_to is not None:
                raise HorizonError("emptiness of a partially known set needs a bound")
            return self.starts.size == 0
        return self.count(0, bound) == 0

    def mask(self, n):
        """Boolean membership of 0..n-1."""
        out = np.zeros(n, dtype=bool)
        starts, ends = self.clipped(0, n - 1)
        edges = np.zeros(n + 1, dtype=np.int64)
        np.add.at(edges, starts, 1)
        np.add.at(edges, ends + 1, -1)
        out[:] = np.cumsum(edges[:n]) > 0
        return out

    def union(self, other, bound):
        """K union K' on [0, bound]."""
        s1, e1 = self.clipped(0, bound)
        s2, e2 = other.clipped(0, bound)
        return IndexSet._from_arrays(np.concatenate((s1, s2)), np.concatenate((e1, e2)), known_to=bound)

    def complement(self, bound):
        """[0, bound] minus K."""
        starts, ends = self.clipped(0, bound)
        gap_starts = np.concatenate(([0], ends + 1))
        gap_ends = np.concatenate((starts - 1, [bound]))
        return IndexSet._from_arrays(gap_starts, gap_ends)

    def shift(self, k):
        """{x + k : x in K} intersected with N."""
        known_to = None if self.known_to is None else self.known_to + k
        starts = np.maximum(self.starts + k, 0)
        return IndexSet._from_arrays(starts, self.ends + k, known_to=known_to)

    def issubset(self, other, bound):
        """K intersected with [0, bound] is contained in K'."""
        starts, ends = self.clipped(0, bound)
        if starts.size == 0:
            return True
        full = other.upto(bound)
        i = np.searchsorted(full.starts, starts, side="right") - 1
        inside = i >= 0
        inside[inside] &= full.ends[i[inside]] >= ends[inside]
        return bool(np.all(inside))

    def to_dict(self):
        return {
            "intervals": [[a, b] for a, b in self.intervals],
            "generator": self.generator,
            "params": list(self.params),
            "known_to": self.known_to,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        if data.get("generator"):
            return cls(generator=data["generator"], params=data.get("params", ()), known_to=data.get("known_to"))
        return cls(intervals=data.get("intervals", ()), known_to=data.get("known_to"))


def counterexample_set(known_to=2 ** 25):
    """K = union over k >= 1 of [2^(k^2), k * 2^(k^2)], generator-backed."""
    return IndexSet(generator="counterexample", known_to=known_to)


def weighted_mass(K, u, n):
    """
    a_u(K, n): the sum of u_k over k in K with 0 <= k < n.

    :return: float, or Fraction for an exact weight
    """
    if n > u.horizon:
        raise HorizonError(f"{u.label}: n={n} exceeds horizon {u.horizon}")
    starts, ends = K.clipped(0, n - 1)
    if starts.size == 0:
        return Fraction(0) if u.exact else 0.0
    pieces = u.partial_sums_at(ends + 1) - u.partial_sums_at(starts)
    if is_exact(pieces):
        return sum(pieces, Fraction(0))
    return math.fsum(pieces.tolist())


def smallness_profile(K, u, grid, tol=None):
    """Profile of a_u(K, n) / a_u(n); meta records "small at horizon" when `tol` is given."""
    grid = as_grid(grid)
    if int(grid.max()) > u.horizon:
        raise HorizonError(f"{u.label}: grid reaches {int(grid.max())}, horizon is {u.horizon}")
    sums = positive_partial_sums(u, grid)
    ratios = [weighted_mass(K, u, n) / a for n, a in zip(grid.tolist(), sums.tolist())]
    profile = ConvergenceProfile(grid, ratios, "smallness", {"horizon": u.horizon, "weight": u.label})
    if tol is not None:
        profile.meta["tol"] = tol
        profile.meta["small_at_horizon"] = profile.settles_below(tol)
    return profile


def density_profile(K, grid):
    """Profile of |K intersected with [1, n]| / n, from exact counts."""
    grid = as_grid(grid)
    if grid.min() < 1:
        raise ConfigError("density grids start at n >= 1")
    values = [K.count(1, n) / n for n in grid.tolist()]
    return ConvergenceProfile(grid, values, "density")


def exceptional_set(s, L, eps, start=0):
    """
    K_eps = {n : |s_n - L| > eps}, non-finite entries included.

    :param s: sequence with s[i] the value at index start + i
    """
    if not eps > 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    if is_exact(s):
        bad = np.array([abs(x - L) > eps for x in s], dtype=bool)
    else:
        s = np.asarray(s, dtype=float)
        with np.errstate(invalid="ignore"):
            bad = ~np.isfinite(s) | (np.abs(s - L) > eps)
    return IndexSet.from_mask(bad, offset=start, known_to=start + len(bad) - 1)


def diagonal_merge(sets, u, thresholds=None, grid=None):
    """
    Merge nested sets K_1 within K_2 within ... into
    K_inf = union_j K_j intersected with (N_j, N_{j+1}].

    N_j is the first grid point from which a_u(K_j, n)/a_u(n) stays below the
    j-th threshold (default 1/j) up to the horizon; cut points are forced
    nondecreasing and recorded in the result's meta. The last piece runs to
    the horizon of u.
    """
    if not sets:
        raise ConfigError("diagonal_merge needs at least one set")
    horizon = u.horizon
    grid = dyadic_grid(horizon) if grid is None else as_grid(grid)
    if thresholds is None:
        thresholds = [1.0 / j for j in range(1, len(sets) + 1)]
    if len(thresholds) != len(sets):
        raise ConfigError("one threshold per set")
    for j, (inner, outer) in enumerate(zip(sets, sets[1:]), start=1):
        if not inner.issubset(outer, horizon - 1):
            raise NestingError(f"K_{j} is not contained in K_{j + 1} below {horizon}")

    cuts = []
    for j, (K, threshold) in enumerate(zip(sets, thresholds), start=1):
        below = smallness_profile(K, u, grid).values < threshold
        if not below[-1]:
            raise HorizonError(f"K_{j} stays above {threshold:g} at horizon {horizon}")
        misses = np.flatnonzero(~below)
        cut = int(grid[misses[-1] + 1]) if misses.size else int(grid[0])
        cuts.append(max(cut, cuts[-1]) if cuts else cut)

    starts, ends = [], []
    for j, K in enumerate(sets):
        upper = cuts[j + 1] if j + 1 < len(sets) else horizon
        s, e = K.clipped(cuts[j] + 1, upper)
        starts.append(s)
        ends.append(e)
    merged = IndexSet._from_arrays(np.concatenate(starts), np.concatenate(ends), known_to=horizon)
    merged.meta = {
        "cuts": cuts,
        "thresholds": list(thresholds),
        "horizon": horizon,
        "status": "horizon-certified",
    }
    logger.debug("diagonal merge cuts %s", cuts)
    return merged


def _deviation_terms(s, L, u, n):
    if len(s) < n:
        raise HorizonError(f"sequence has {len(s)} entries, need {n}")
    w = u.take(n)
    if u.exact and is_exact(s):
        out = np.empty(n, dtype=object)
        out[:] = [wk * abs(sk - L) if wk != 0 else Fraction(0) for wk, sk in zip(w, s[:n])]
        return out
    w = np.asarray(w, dtype=float)
    with np.errstate(invalid="ignore"):
        return np.where(w > 0, w * np.abs(np.asarray(s[:n], dtype=float) - float(L)), 0.0)


def strong_cesaro_profile(s, L, u, grid):
    """Profile of E_n = (1/a_u(n)) * sum_{k<n} u_k |s_k - L|; terms with u_k = 0 contribute 0."""
    grid = as_grid(grid)
    top = int(grid.max())
    if top > u.horizon:
        raise HorizonError(f"{u.label}: grid reaches {top}, horizon is {u.horizon}")
    sums = positive_partial_sums(u, grid)
    prefix = compensated_prefix(_deviation_terms(s, L, u, top))
    values = [prefix[n] / a for n, a in zip(grid.tolist(), sums.tolist())]
    return ConvergenceProfile(grid, values, "strong cesaro error", {"limit": float(L), "weight": u.label})


def strong_cesaro_error(s, L, u, n):
    """E_n as a single number (Fraction when both s and u are exact)."""
    if n > u.horizon:
        raise HorizonError(f"{u.label}: n={n} exceeds horizon {u.horizon}")
    a = positive_partial_sums(u, [n])[0]
    return compensated_prefix(_deviation_terms(s, L, u, n))[n] / a


def weighted_cesaro_mean(s, u, n):
    """(1/a_u(n)) * sum_{k<n} u_k s_k."""
    if n > u.horizon:
        raise HorizonError(f"{u.label}: n={n} exceeds horizon {u.horizon}")
    if len(s) < n:
        raise HorizonError(f"sequence has {len(s)} entries, need {n}")
    a = positive_partial_sums(u, [n])[0]
    w = u.take(n)
    if u.exact and is_exact(s):
        return sum((wk * sk for wk, sk in zip(w, s[:n])), Fraction(0)) / a
    terms = np.asarray(w, dtype=float) * np.asarray(s[:n], dtype=float)
    return compensated_prefix(terms)[n] / a


def chebyshev_bound(s, L, u, n, eps=config.DEFAULT_EPS):
    """
    Smallness of the exceptional set against its Chebyshev bound.

    :return: (a_u(K_eps, n)/a_u(n), E_n/eps); the first never exceeds the second
    """
    K = exceptional_set(np.asarray(s)[:n], L, eps)
    a = positive_partial_sums(u, [n])[0]
    return weighted_mass(K, u, n) / a, strong_cesaro_error(s, L, u, n) / eps
