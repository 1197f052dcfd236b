"""
Piecewise affine realization of a Markov shift on [0, inf) and its natural
extension on [0, inf) x [0, 1].

Cell a_s has length pi_s and is split into subcells a_{s,t} of length
pi_s p_{s,t}, ordered by target; tau maps a_{s,t} affinely onto a_t with
slope pi_t / (pi_s p_{s,t}). Endpoints are Fractions when the chain is exact.
"""
import bisect
import csv
import io
import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ratmix.errors import BudgetError, DomainError
from ratmix.numeric import check_budget
from ratmix.report import Report, dumps

logger = logging.getLogger(__name__)

FLOAT_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class Subcell:
    source: int
    target: int
    left: object
    right: object
    slope: object
    offset: object

    def to_dict(self):
        return {"source": self.source, "target": self.target, "left": self.left, "right": self.right,
                "slope": self.slope, "offset": self.offset}


class IntervalLayout:
    """
    Cells and subcells of the realization up to a state cutoff.

    :param cells: {state: (left, right)} in ascending state order
    :param subcells: Subcell list in ascending position
    :param truncated: mass of subcells whose target lies beyond the cutoff
    """

    def __init__(self, cells, subcells, truncated, exact, label, cutoff):
        self.cells = cells
        self.subcells = subcells
        self.truncated = truncated
        self.exact = exact
        self.label = label
        self.cutoff = cutoff
        self._cell_lefts = [left for left, _ in cells.values()]
        self._cell_states = list(cells)
        self._lefts = [sc.left for sc in subcells]
        self._fibers = {}
        for sc in subcells:
            self._fibers.setdefault(sc.target, []).append(sc)
        right = max(r for _, r in cells.values())
        self.endpoint_error = 0.0 if exact else float(len(subcells)) * FLOAT_EPS * float(right)

    def __repr__(self):
        return f"IntervalLayout({self.label!r}, cells={len(self.cells)}, exact={self.exact})"

    def cell_of(self, x):
        """State s with x inside a_s (left endpoint included)."""
        i = bisect.bisect_right(self._cell_lefts, x) - 1
        if i < 0:
            raise DomainError(f"{x} lies left of the layout")
        s = self._cell_states[i]
        if not x < self.cells[s][1]:
            raise DomainError(f"{x} lies outside every cell")
        return s

    def subcell_of(self, x):
        """The subcell holding x in its interior."""
        i = bisect.bisect_right(self._lefts, x) - 1
        if i < 0:
            raise DomainError(f"{x} lies left of the layout")
        sc = self.subcells[i]
        if x == sc.left or x == sc.right:
            raise DomainError(f"{x} is a subcell boundary point")
        if not x < sc.right:
            raise DomainError(f"{x} lies in the truncated tail or outside the layout")
        return sc

    def fiber(self, t):
        """Subcells mapped onto a_t, in source order."""
        return self._fibers.get(t, [])

    def to_dict(self):
        return {
            "label": self.label,
            "cutoff": self.cutoff,
            "exact": self.exact,
            "truncated": self.truncated,
            "endpoint_error": self.endpoint_error,
            "cells": [{"state": s, "left": l, "right": r} for s, (l, r) in self.cells.items()],
            "subcells": [sc.to_dict() for sc in self.subcells],
        }

    def to_json(self):
        return dumps(self.to_dict())


def build_layout(c, cutoff):
    """
    Lay cells a_1, a_2, ... of the states s <= cutoff with pi_s > 0 on
    [0, inf) in state order, each split by target.
    """
    if cutoff < 2:
        raise BudgetError(f"cutoff {cutoff} cannot hold the dynamics; use a cutoff of at least 2")
    exact = c.exact
    check_budget(4 * cutoff, exact, f"layout of {c.label}")
    zero = Fraction(0) if exact else 0.0
    pis = {s: c.pi(s, exact) for s in range(1, cutoff + 1)}
    states = [s for s in range(1, cutoff + 1) if pis[s] > 0]

    cells, subcells = {}, []
    position = zero
    truncated = zero
    lefts = {}
    for s in states:
        lefts[s] = position
        cells[s] = (position, position + pis[s])
        position += pis[s]

    for s in states:
        row = c.row(s, cutoff=cutoff)
        left = cells[s][0]
        for t in sorted(row):
            p = row[t] if exact else float(row[t])
            if not p > 0:
                continue
            length = pis[s] * p
            if t not in cells:
                truncated += length
                continue
            slope = pis[t] / length
            subcells.append(Subcell(s, t, left, left + length, slope, lefts[t] - slope * left))
            left += length
        truncated += pis[s] * (row.dropped if exact else float(row.dropped))
    layout = IntervalLayout(cells, subcells, truncated, exact, c.label, cutoff)
    logger.debug("%s: %d subcells, truncated mass %s", c.label, len(subcells), truncated)
    return layout


def tau_eval(layout, x):
    """tau(x) = slope_{s,t} x + offset_{s,t} for x inside a_{s,t}."""
    sc = layout.subcell_of(x)
    return sc.slope * x + sc.offset


def fiber_widths(layout, t):
    """[(s, pi_s p_{s,t} / pi_t)] over the subcells mapped onto a_t; sums to 1 up to truncation."""
    return [(sc.source, 1 / sc.slope) for sc in layout.fiber(t)]


def natext_eval(layout, x, y):
    """
    (tau x, q_{k-1} + w_k y): the second coordinate goes to the slot of the
    source alpha(x) among the nonempty fiber slots over tau x.
    """
    if not 0 <= y <= 1:
        raise DomainError(f"y = {y} lies outside [0, 1]")
    sc = layout.subcell_of(x)
    image = sc.slope * x + sc.offset
    base = Fraction(0) if layout.exact else 0.0
    for other in layout.fiber(sc.target):
        if other is sc:
            return image, base + y / sc.slope
        base += 1 / other.slope
    raise DomainError(f"no fiber slot for {sc.source} -> {sc.target}")


def measure_preservation_test(layout, interval, tol=1e-12):
    """
    Compare lambda(tau^-1 I) = sum over subcells of lambda(I & a_t) / slope with lambda(I).

    :param interval: (lo, hi) inside the laid out region
    """
    lo, hi = interval
    if not lo < hi:
        raise DomainError(f"empty interval ({lo}, {hi})")
    zero = Fraction(0) if layout.exact else 0.0
    preimage, missing = zero, zero
    for t, (left, right) in layout.cells.items():
        overlap = min(hi, right) - max(lo, left)
        if not overlap > 0:
            continue
        covered = zero
        for sc in layout.fiber(t):
            preimage += overlap / sc.slope
            covered += 1 / sc.slope
        missing += overlap * abs(1 - covered)
    length = hi - lo
    discrepancy = abs(preimage - length)
    bound = missing + (zero if layout.exact else layout.endpoint_error)
    report = Report("measure-preservation", horizon=layout.cutoff,
                    params={"chain": layout.label, "interval": [lo, hi], "tol": tol})
    report.values.update({"preimage": preimage, "length": length, "discrepancy": discrepancy,
                          "truncation_bound": bound})
    report.truncation = layout.truncated
    report.check("measure_preserved", discrepancy <= tol + bound)
    report.verdict = "exact" if discrepancy == 0 else ("within bound" if report.passed else "violated")
    return report


def itinerary(layout, x, n):
    """(alpha(x), alpha(tau x), ..., alpha(tau^(n-1) x)); DomainError carries the failing step."""
    word = []
    for step in range(n):
        try:
            sc = layout.subcell_of(x)
        except DomainError as e:
            raise DomainError(f"step {step}: {e}", step=step) from e
        word.append(sc.source)
        x = sc.slope * x + sc.offset
    return tuple(word)


def batch_itinerary(layout, xs, n):
    """
    Float itineraries of many points at once.

    :return: int array of shape (len(xs), n); -1 marks steps after a point
        left the layout or hit a boundary
    """
    xs = np.array(xs, dtype=float)
    lefts = np.array([float(sc.left) for sc in layout.subcells])
    rights = np.array([float(sc.right) for sc in layout.subcells])
    slopes = np.array([float(sc.slope) for sc in layout.subcells])
    offsets = np.array([float(sc.offset) for sc in layout.subcells])
    sources = np.array([sc.source for sc in layout.subcells], dtype=np.int64)
    words = np.full((xs.size, n), -1, dtype=np.int64)
    alive = np.isfinite(xs)
    for step in range(n):
        idx = np.clip(np.searchsorted(lefts, xs, side="right") - 1, 0, len(lefts) - 1)
        alive &= (xs > lefts[idx]) & (xs < rights[idx])
        words[alive, step] = sources[idx[alive]]
        xs = np.where(alive, slopes[idx] * xs + offsets[idx], np.nan)
    lost = int(np.count_nonzero(~alive))
    if lost:
        logger.debug("%d of %d points left the layout within %d steps", lost, xs.size, n)
    return words


def cylinder_frequencies(words, cylinders):
    """Fraction of itineraries starting with each word, with its standard error."""
    total = words.shape[0]
    out = {}
    for word in cylinders:
        k = len(word)
        hits = int(np.count_nonzero(np.all(words[:, :k] == np.array(word), axis=1)))
        freq = hits / total
        out[tuple(word)] = (freq, float(np.sqrt(freq * (1 - freq) / total)))
    return out


def orbit(layout, x, y, n):
    """Rows (step, x, y, state) of the natural-extension orbit of (x, y)."""
    rows = []
    for step in range(n + 1):
        state = layout.cell_of(x)
        rows.append((step, x, y, state))
        if step < n:
            try:
                x, y = natext_eval(layout, x, y)
            except DomainError as e:
                raise DomainError(f"step {step}: {e}", step=step) from e
    return rows


def orbit_csv(rows):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["step", "x", "y", "state"])
    for step, x, y, state in rows:
        writer.writerow([step, str(x) if isinstance(x, Fraction) else repr(float(x)),
                         str(y) if isinstance(y, Fraction) else repr(float(y)), state])
    return buffer.getvalue()
