"""
Countable-state Markov chains on {1, 2, ...}: the renewal shift of a lifetime
and Hopf's reflected walk, their n-step and taboo probabilities, stationarity
and Chung partial sums, and exact cylinder measures and correlations.

State vectors are numpy arrays indexed by state (index 0 unused), float or
exact object arrays of Fractions.
"""
import logging
import math
import re
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import convolve

from ratmix import config
from ratmix.errors import ConfigError, InvalidDistribution
from ratmix.indexsets import exceptional_set, strong_cesaro_profile
from ratmix.numeric import as_float, check_budget, dyadic_grid, require_rational_horizon, zeros
from ratmix.renewal import LifetimeDist, renewal_from_lifetime
from ratmix.report import Report
from ratmix.weights import WeightSeq

logger = logging.getLogger(__name__)


class SparseRow(dict):
    """{state: probability} with the mass dropped by truncation."""

    def __init__(self, entries=(), dropped=0.0):
        super().__init__(entries)
        self.dropped = dropped

    def total(self):
        values = list(self.values())
        if any(isinstance(v, Fraction) for v in values):
            return sum(values, Fraction(0))
        return math.fsum(values)


class Chain:
    """Base class: transition rows, invariant measure and one-step propagation."""

    label = "chain"
    exact = False

    def row(self, s, cutoff=None):
        raise NotImplementedError

    def p(self, s, t, exact=False):
        raise NotImplementedError

    def pi(self, s, exact=False):
        raise NotImplementedError

    def step(self, vec):
        """One step of vec -> vec P at fixed size; returns (new, dropped mass)."""
        raise NotImplementedError

    def size_for(self, start, steps, target_max):
        """Vector size under which mass reaching targets <= target_max within `steps` is exact."""
        return max(start, target_max) + steps + 2

    def full_size(self, s, n):
        """Vector size holding the whole n-step row from s."""
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError

    def _check_exact(self, exact):
        if exact and not self.exact:
            raise ConfigError(f"{self.label} has no exact transition rules; use float mode")

    def propagate(self, s, n, size, exact=False, taboo=False):
        """
        Yield (m, vec, dropped) for m = 0..n starting from the point mass at s.

        With `taboo`, mass sitting at s at times 1..m-1 is removed before each
        step, so vec at time m holds _s p^(m)_{s, .}.
        """
        self._check_exact(exact)
        if exact:
            require_rational_horizon(n)
        check_budget(size, exact, f"{self.label} state vector")
        vec = zeros(size, exact)
        vec[s] = Fraction(1) if exact else 1.0
        dropped = Fraction(0) if exact else 0.0
        yield 0, vec, dropped
        for m in range(1, n + 1):
            if taboo and m >= 2:
                vec[s] = Fraction(0) if exact else 0.0
            vec, lost = self.step(vec)
            dropped += lost
            yield m, vec, dropped

    def transitions(self, s, targets, n_max, exact=False):
        """p^(n)_{s,t} for n = 0..n_max and every target t, as arrays."""
        targets = sorted(set(int(t) for t in targets))
        size = self.size_for(s, n_max, max(targets))
        out = {t: zeros(n_max + 1, exact) for t in targets}
        for m, vec, _ in self.propagate(s, n_max, size, exact):
            for t in targets:
                out[t][m] = vec[t]
        return out


class HopfChain(Chain):
    """Reflected symmetric walk: p_{1,1} = p_{1,2} = 1/2, p_{n,n-1} = p_{n,n+1} = 1/2; pi = 1."""

    label = "hopf"
    exact = True

    def row(self, s, cutoff=None):
        half = Fraction(1, 2)
        entries = {1: half, 2: half} if s == 1 else {s - 1: half, s + 1: half}
        if cutoff is None:
            return SparseRow(entries, Fraction(0))
        kept = {t: p for t, p in entries.items() if t <= cutoff}
        return SparseRow(kept, sum((p for t, p in entries.items() if t > cutoff), Fraction(0)))

    def p(self, s, t, exact=False):
        value = self.row(s).get(t, Fraction(0))
        return value if exact else float(value)

    def pi(self, s, exact=False):
        return Fraction(1) if exact else 1.0

    def step(self, vec):
        half = vec / 2
        new = zeros(vec.size, vec.dtype == object)
        new[2:] += half[1:-1]
        new[1:-1] += half[2:]
        new[1] += half[1]
        return new, half[-1]

    def full_size(self, s, n):
        return s + n + 2

    def to_dict(self):
        return {"kind": "hopf"}


class RenewalShift(Chain):
    """
    p_{1,n} = f_n and p_{n+1,n} = 1, with pi_n = f([n, inf)).

    Float transition sequences use p^(m)_{1,t} = sum_{j<m} u_j f_{t+m-1-j}
    (last visit to 1 at time j), so long horizons cost one convolution per
    target; exact ones propagate the state vector.
    """

    def __init__(self, f):
        if not f.is_proper():
            raise InvalidDistribution(f"{f.label}: the renewal shift needs a proper lifetime")
        self.f = f
        self.exact = f.exact
        self.label = f"renewal-shift[{f.label}]"
        self._probs = {}
        self._u = None

    def _probs_to(self, top, exact):
        key = (top, exact)
        if key not in self._probs:
            self._probs[key] = self.f.probs(top, exact=exact)
        return self._probs[key]

    def row_cutoff(self, s=1, n=0):
        """Largest state kept in a row from 1: the support, or where the tail drops below the truncation mass."""
        if self.f.support_max is not None:
            return self.f.support_max
        cap = max(config.ROW_CUTOFF, s + n)
        cutoff = 2
        while cutoff < cap and self.f.tail(cutoff + 1) > config.TRUNCATION_MASS:
            cutoff *= 2
        return min(cutoff, cap)

    def row(self, s, cutoff=None):
        if s >= 2:
            return SparseRow({s - 1: Fraction(1) if self.exact else 1.0}, Fraction(0) if self.exact else 0.0)
        cutoff = self.row_cutoff() if cutoff is None else cutoff
        probs = self._probs_to(cutoff, self.exact)
        entries = {int(t): probs[t] for t in self.f.support(cutoff).tolist() if probs[t] != 0}
        return SparseRow(entries, self.f.tail(cutoff + 1, self.exact))

    def p(self, s, t, exact=False):
        if s == 1:
            return self.f.mass(t, exact)
        one = Fraction(int(t == s - 1))
        return one if exact else float(one)

    def pi(self, s, exact=False):
        return self.f.tail(s, exact)

    def step(self, vec):
        exact = vec.dtype == object
        size = vec.size
        new = zeros(size, exact)
        new[1:-1] = vec[2:]
        jump = vec[1]
        if jump == 0:
            return new, (Fraction(0) if exact else 0.0)
        new[1:] += jump * self._probs_to(size - 1, exact)[1:]
        return new, jump * self.f.tail(size, exact)

    def size_for(self, start, steps, target_max):
        size = max(start, target_max) + steps + 2
        if self.f.support_max is not None:
            size = min(size, max(start, target_max, self.f.support_max) + 2)
        return size

    def full_size(self, s, n):
        return max(s, self.row_cutoff(s, n)) + 2

    def renewal(self, n):
        """The renewal sequence u_0..u_n of the lifetime, cached."""
        if self._u is None or self._u.horizon < n:
            self._u = renewal_from_lifetime(self.f, n)
        return self._u.take(n + 1)

    def transitions(self, s, targets, n_max, exact=False):
        if exact:
            return super().transitions(s, targets, n_max, exact)
        u = self.renewal(n_max)
        out = {}
        for t in sorted(set(int(t) for t in targets)):
            q = np.zeros(n_max + 1)  # q[m] = p^(m)_{1,t}
            q[0] = float(t == 1)
            if t == 1:
                q[:] = u
            elif n_max >= 1:
                later = self.f.probs(t + n_max - 1)[t:]
                q[1:] = np.clip(convolve(u[:n_max], later)[:n_max], 0.0, None)
            seq = np.zeros(n_max + 1)
            descent = min(s - 1, n_max + 1)
            for n in range(descent):
                seq[n] = float(t == s - n)
            seq[descent:] = q[:n_max + 1 - descent]
            out[t] = seq
        return out

    def to_dict(self):
        return {"kind": "renewal-shift", "lifetime": self.f.to_dict()}


def renewal_shift(f):
    return RenewalShift(f)


def hopf_chain():
    return HopfChain()


def chain_from_dict(data, exact=False):
    """Chain from `{"kind": "hopf"}` or `{"kind": "renewal-shift", "lifetime": {...}}`."""
    kind = data.get("kind")
    if kind == "hopf":
        return HopfChain()
    if kind == "renewal-shift":
        return RenewalShift(LifetimeDist.from_dict(data["lifetime"], exact=exact))
    raise ConfigError(f"unknown chain kind {kind!r}")


def _to_row(vec, dropped, exact):
    if exact:
        entries = {t: vec[t] for t in range(1, vec.size) if vec[t] != 0}
    else:
        nonzero = np.flatnonzero(vec[1:] > 0) + 1
        entries = dict(zip(nonzero.tolist(), vec[nonzero].tolist()))
    return SparseRow(entries, dropped)


def nstep_row(c, s, n, exact=False, cutoff=None):
    """
    The row p^(n)_{s, .} as a SparseRow.

    Renewal shifts of infinite-support lifetimes keep states up to their row
    cutoff; the mass dropped above it is carried in `.dropped`.
    """
    size = c.full_size(s, n) if cutoff is None else max(cutoff, s) + 1
    for m, vec, dropped in c.propagate(s, n, size, exact):
        if m == n:
            return _to_row(vec, dropped, exact)


def taboo_nstep(c, s, n, exact=False, cutoff=None):
    """
    Taboo rows _s p^(k)_{s, .} for k = 0..n: paths from s that avoid s at
    times 1..k-1 (index 0 holds the point mass at s).
    """
    size = c.full_size(s, n) if cutoff is None else max(cutoff, s) + 1
    return [_to_row(vec, dropped, exact) for _, vec, dropped in c.propagate(s, n, size, exact, taboo=True)]


def taboo_table(c, s, targets, n, exact=False):
    """_s p^(k)_{s,t} for k = 0..n as arrays per target."""
    targets = sorted(set(int(t) for t in targets))
    size = c.size_for(s, n, max(targets))
    out = {t: zeros(n + 1, exact) for t in targets}
    for m, vec, _ in c.propagate(s, n, size, exact, taboo=True):
        for t in targets:
            out[t][m] = vec[t]
    return out


def chung_partial_sums(c, s, targets, N, exact=False):
    """
    sum_{k=1..N} _s p^(k)_{s,t} per target, next to pi_t / pi_s.

    :return: dict t -> (partial sums for N' = 1..N, limit pi_t / pi_s)
    """
    table = taboo_table(c, s, targets, N, exact)
    out = {}
    for t, column in table.items():
        if exact:
            sums = np.empty(N, dtype=object)
            running = Fraction(0)
            for k in range(1, N + 1):
                running += column[k]
                sums[k - 1] = running
        else:
            sums = np.cumsum(column[1:])
        out[t] = (sums, c.pi(t, exact) / c.pi(s, exact))
    return out


def stationarity_residual(c, window, exact=None):
    """max over t <= window of |sum_s pi_s p_{s,t} - pi_t|, from rows s <= window + 1."""
    exact = c.exact if exact is None else exact
    totals = defaultdict(lambda: Fraction(0) if exact else 0.0)
    for s in range(1, window + 2):
        weight = c.pi(s, exact)
        row = c.row(s, cutoff=window)
        for t, p in row.items():
            if t <= window:
                totals[t] += weight * (p if exact else float(p))
    residuals = [abs(totals[t] - c.pi(t, exact)) for t in range(1, window + 1)]
    return max(residuals)


@dataclass(frozen=True)
class Cylinder:
    """[s_1, ..., s_I]_k: x_k = s_1, ..., x_{k+I-1} = s_I."""

    states: tuple
    offset: int = 0

    def __post_init__(self):
        states = tuple(int(s) for s in self.states)
        if not states:
            raise ConfigError("a cylinder needs a nonempty word")
        if min(states) < 1:
            raise ConfigError(f"cylinder states must be >= 1, got {states}")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "offset", int(self.offset))

    def __str__(self):
        return f"[{','.join(map(str, self.states))}]_{self.offset}"

    @property
    def end(self):
        return self.offset + len(self.states) - 1

    def shifted(self, k):
        return Cylinder(self.states, self.offset + k)

    def to_dict(self):
        return {"states": list(self.states), "offset": self.offset}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(data["states"]), data.get("offset", 0))

    @classmethod
    def parse(cls, text):
        """Read "[1,2]_0", "1,2@0" or "1,2"."""
        match = re.fullmatch(r"\s*\[?([\d,\s]+)\]?\s*(?:[_@]\s*(-?\d+))?\s*", text)
        if not match:
            raise ConfigError(f"bad cylinder {text!r}")
        states = tuple(int(s) for s in match.group(1).split(",") if s.strip())
        return cls(states, int(match.group(2) or 0))


def _word_weight(c, states, exact):
    """prod p_{s_i, s_{i+1}} along the word."""
    weight = Fraction(1) if exact else 1.0
    for a, b in zip(states, states[1:]):
        weight *= c.p(a, b, exact)
    return weight


def cylinder_measure(c, A, exact=None):
    """m(A) = pi_{s_1} p_{s_1,s_2} ... p_{s_{I-1},s_I}."""
    exact = c.exact if exact is None else exact
    return c.pi(A.states[0], exact) * _word_weight(c, A.states, exact)


def cylinders_disjoint(A, B):
    """True when the words disagree at a shared position."""
    shared = range(max(A.offset, B.offset), min(A.end, B.end) + 1)
    return any(A.states[p - A.offset] != B.states[p - B.offset] for p in shared)


def merged_word(A, B):
    """The word on the union of two overlapping or adjacent blocks, or None on a conflict."""
    if cylinders_disjoint(A, B):
        return None
    first, last = min(A.offset, B.offset), max(A.end, B.end)
    if last - first + 1 > len(A.states) + len(B.states):
        raise ConfigError(f"{A} and {B} leave a gap")
    cells = {}
    for cyl in (A, B):
        for i, s in enumerate(cyl.states):
            cells[cyl.offset + i] = s
    return Cylinder(tuple(cells[p] for p in range(first, last + 1)), first)


def cylinder_correlation(c, A, B, n, exact=None):
    """
    m(A intersected with T^-n B).

    With B placed at offset B.offset + n, blocks separated by a gap d >= 1
    give m(A) p^(d) m(B) / pi at the joining states; overlapping blocks are
    merged into one word.
    """
    exact = c.exact if exact is None else exact
    later = B.shifted(n)
    gap = later.offset - A.end
    if gap >= 1:
        a, b = A.states[-1], later.states[0]
        step = c.transitions(a, [b], gap, exact)[b][gap]
        return cylinder_measure(c, A, exact) * step * _word_weight(c, later.states, exact)
    back = A.offset - later.end
    if back >= 1:
        a, b = later.states[-1], A.states[0]
        step = c.transitions(a, [b], back, exact)[b][back]
        return cylinder_measure(c, later, exact) * step * _word_weight(c, A.states, exact)
    word = merged_word(A, later)
    if word is None:
        return Fraction(0) if exact else 0.0
    return cylinder_measure(c, word, exact)


def correlation_sequence(c, A, B, N, exact=None):
    """m(A intersected with T^-n B) for n = 0..N-1, forward gaps from one propagation."""
    exact = c.exact if exact is None else exact
    out = zeros(N, exact)
    top_gap = N - 1 + B.offset - A.end
    forward = None
    if top_gap >= 1:
        a, b = A.states[-1], B.states[0]
        forward = c.transitions(a, [b], top_gap, exact)[b]
        factor = cylinder_measure(c, A, exact) * _word_weight(c, B.states, exact)
    for n in range(N):
        gap = n + B.offset - A.end
        if gap >= 1:
            out[n] = factor * forward[gap]
        else:
            out[n] = cylinder_correlation(c, A, B, n, exact)
    return out


def occupation_sequence(c, s, N, exact=False):
    """The weight u_n = p^(n)_{s,s} / pi_s for n = 0..N."""
    column = c.transitions(s, [s], N, exact)[s]
    values = column / c.pi(s, exact)
    if not exact:
        values = as_float(values)
    return WeightSeq(values=values, label=f"occupation {c.label} s={s}")


def ratio_limit_report(c, s, pairs, N, eps=config.DEFAULT_EPS, jobs=1, grid=None):
    """
    Strong-Cesaro check of s_n = p^(n+l)_{r,t} / (u_n pi_t) -> 1 with
    u_n = p^(n)_{s,s} / pi_s, per (r, t, l) pair.

    Sources are propagated independently on a thread pool of `jobs` workers;
    results are merged in input order.
    """
    pairs = [tuple(int(x) for x in pair) for pair in pairs]
    if not pairs:
        raise ConfigError("ratio_limit_report needs at least one (r, t, l) pair")
    grid = dyadic_grid(N) if grid is None else np.asarray(grid, dtype=np.int64)
    u = occupation_sequence(c, s, N)
    weights = u.values

    wanted = defaultdict(set)
    reach = defaultdict(int)
    for r, t, ell in pairs:
        wanted[r].add(t)
        reach[r] = max(reach[r], ell)

    def work(r):
        return r, c.transitions(r, wanted[r], N + reach[r])

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        tables = dict(pool.map(work, sorted(wanted)))

    report = Report("ratio-limit", horizon=N, params={"chain": c.to_dict(), "s": s, "eps": eps,
                                                       "pairs": [list(p) for p in pairs]})
    for r, t, ell in pairs:
        key = f"{r},{t},{ell}"
        column = tables[r][t][ell:ell + N + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(weights > 0, column / (weights * c.pi(t)), np.nan)
        profile = report.add_profile(key, strong_cesaro_profile(ratios, 1.0, u, grid))
        K = exceptional_set(ratios[:N], 1.0, eps)
        report.values[key] = {
            "E_N": profile.last,
            "exceptional_count": K.count(0, N - 1),
            "decreasing": profile.is_decreasing_tail(),
        }
    report.verdict = "strong ratio limits observed at horizon" if all(
        v["E_N"] < eps for v in report.values.values()) else "strong ratio limits not observed at horizon"
    return report
