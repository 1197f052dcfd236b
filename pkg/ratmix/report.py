"""
Structured numeric output: convergence profiles and reports.

Reports serialize deterministically (sorted keys, repr floats, no timestamps)
so that identical inputs give byte-identical artifacts.
"""
import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ratmix.errors import ProfileError

logger = logging.getLogger(__name__)


def jsonable(obj):
    """Convert numbers, arrays and nested containers into JSON-safe values."""
    if isinstance(obj, ConvergenceProfile):
        return obj.to_dict()
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else repr(value)
    if isinstance(obj, complex):
        return [jsonable(obj.real), jsonable(obj.imag)]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return jsonable(obj.to_dict())
    return str(obj)


def dumps(obj):
    return json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n"


@dataclass
class ConvergenceProfile:
    """
    A real sequence sampled on a strictly increasing index grid.

    :param grid: indices n_1 < ... < n_m
    :param values: finite values at the grid points
    :param label: what the values are
    :param meta: horizon, tolerance and any flags of the producing operation
    """
    grid: np.ndarray
    values: np.ndarray
    label: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.int64)
        self.values = np.array([float(v) for v in self.values], dtype=float)
        if self.grid.ndim != 1 or self.grid.shape != self.values.shape:
            raise ProfileError(f"{self.label}: grid and values must be 1-d of equal length")
        if self.grid.size == 0:
            raise ProfileError(f"{self.label}: empty grid")
        if np.any(np.diff(self.grid) <= 0):
            raise ProfileError(f"{self.label}: grid is not strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ProfileError(f"{self.label}: non-finite value in profile")

    @property
    def last(self):
        return float(self.values[-1])

    @property
    def horizon(self):
        return int(self.grid[-1])

    def settles_below(self, tol):
        return self.last < tol

    def is_decreasing_tail(self, points=2):
        """True when the last `points` values are strictly decreasing."""
        tail = self.values[-points:]
        return bool(tail.size >= 2 and np.all(np.diff(tail) < 0))

    def last_decade_slope(self):
        """Least-squares slope of value against log10(n) over grid points n >= last/10."""
        keep = self.grid >= self.grid[-1] / 10
        if np.count_nonzero(keep) < 2:
            return 0.0
        y = self.values[keep]
        if np.any(np.abs(y) >= np.finfo(float).max):
            return math.nan
        x = np.log10(self.grid[keep].astype(float))
        return float(np.polyfit(x, y, 1)[0])

    def to_csv(self):
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["n", "value"])
        for n, value in zip(self.grid.tolist(), self.values.tolist()):
            writer.writerow([n, repr(value)])
        return buffer.getvalue()

    def to_dict(self):
        return {
            "label": self.label,
            "meta": jsonable(self.meta),
            "last_decade_slope": jsonable(self.last_decade_slope()),
            "csv": self.to_csv(),
        }


@dataclass
class Report:
    """
    Outcome of one diagnostic.

    `checks` hold invariant assertions; a report passes when all of them hold.
    Criteria that are only advisory go to `values` and `verdict` instead.
    """
    name: str
    horizon: int
    params: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)
    profiles: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    verdict: str = ""
    truncation: float = 0.0
    spec_hash: str = None

    @property
    def passed(self):
        return all(self.checks.values())

    def check(self, name, ok):
        self.checks[name] = bool(ok)
        if not ok:
            logger.warning("%s: check %s failed", self.name, name)
        return bool(ok)

    def add_profile(self, key, profile):
        self.profiles[key] = profile
        return profile

    def note(self, text):
        self.notes.append(text)

    def to_dict(self):
        return {
            "name": self.name,
            "horizon": int(self.horizon),
            "params": jsonable(self.params),
            "values": jsonable(self.values),
            "profiles": {k: p.to_dict() for k, p in self.profiles.items()},
            "checks": jsonable(self.checks),
            "passed": self.passed,
            "notes": list(self.notes),
            "verdict": self.verdict,
            "truncation": jsonable(self.truncation),
            "spec_hash": self.spec_hash,
        }

    def to_json(self):
        return dumps(self.to_dict())
