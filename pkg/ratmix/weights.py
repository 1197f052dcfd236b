"""
Weight calculus: partial sums, smoothness, asymptotic distances, subsampling,
products and regular-variation estimates of nonnegative weight sequences.

Index convention: a_u(n) = u_0 + ... + u_{n-1} everywhere.
"""
import csv
import io
import logging
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import digamma

from ratmix.errors import ConfigError, DegenerateWeightError, HorizonError
from ratmix.numeric import (
    as_float,
    as_grid,
    check_budget,
    compensated_prefix,
    float_to_exact,
    is_exact,
    require_rational_horizon,
)
from ratmix.report import ConvergenceProfile, Report

logger = logging.getLogger(__name__)

MIN_DECADES = 2.0  # Grids for index estimates should span this many decades


def _validate(values, label):
    if is_exact(values):
        if any(v < 0 for v in values):
            raise DegenerateWeightError(f"{label}: negative entry")
        return values
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise DegenerateWeightError(f"{label}: non-finite entry")
    if np.any(values < 0):
        raise DegenerateWeightError(f"{label}: negative entry at n={int(np.argmax(values < 0))}")
    return values


class WeightSeq:
    """
    A nonnegative bounded sequence u_0..u_N.

    Either materialized (`values`, float or exact Fractions) or generated by a
    vectorized `rule` on demand up to `horizon`. An optional closed-form
    `cumulative` rule gives a_u(n) without materializing anything, which is
    how weights are used at horizons such as 2**25.
    """

    def __init__(self, values=None, rule=None, horizon=None, cumulative=None, label="weight"):
        self.label = label
        self._rule = rule
        self._cumulative = cumulative
        self._cache = None
        self._prefix = None
        if values is not None:
            if not is_exact(values):
                values = np.asarray(values, dtype=float)
            if values.ndim != 1 or values.size == 0:
                raise ConfigError(f"{label}: values must be a nonempty 1-d sequence")
            if horizon is not None:
                if horizon > values.size - 1:
                    raise HorizonError(f"{label}: horizon {horizon} exceeds {values.size - 1} values")
                values = values[:horizon + 1]
            self._values = _validate(values, label)
            self._horizon = self._values.size - 1
        elif rule is not None:
            if horizon is None:
                raise ConfigError(f"{label}: a rule-backed weight needs a horizon")
            self._values = None
            self._horizon = int(horizon)
        else:
            raise ConfigError(f"{label}: give values or a rule")

    def __repr__(self):
        kind = "exact" if self.exact else "float"
        return f"WeightSeq({self.label!r}, horizon={self._horizon}, {kind})"

    @property
    def horizon(self):
        return self._horizon

    @property
    def exact(self):
        return self._values is not None and is_exact(self._values)

    @property
    def values(self):
        return self.take(self._horizon + 1)

    def take(self, n):
        """u_0..u_{n-1}."""
        if n > self._horizon + 1:
            raise HorizonError(f"{self.label}: need {n} entries, horizon is {self._horizon}")
        if self._values is not None:
            return self._values[:n]
        if self._cache is None or self._cache.size < n:
            check_budget(n, False, f"weight {self.label}")
            self._cache = _validate(np.asarray(self._rule(np.arange(n)), dtype=float), self.label)
        return self._cache[:n]

    def value(self, n):
        return self.take(n + 1)[n]

    def prefix(self, n):
        """Array P of length n+1 with P[k] = a_u(k)."""
        if n > self._horizon + 1:
            raise HorizonError(f"{self.label}: a_u({n}) needs u up to {n - 1}, horizon is {self._horizon}")
        if self._prefix is None or self._prefix.size < n + 1:
            size = self._horizon + 1 if self._values is not None else n
            self._prefix = compensated_prefix(self.take(size))
        return self._prefix[:n + 1]

    def partial_sums_at(self, ns):
        """a_u(n) for every n in `ns`."""
        ns = np.asarray(ns, dtype=np.int64)
        if ns.size == 0:
            return np.zeros(0)
        top = int(ns.max())
        if top > self._horizon + 1 or ns.min() < 0:
            raise HorizonError(f"{self.label}: index {top} outside [0, {self._horizon + 1}]")
        if self._cumulative is not None and not self.exact:
            return np.asarray(self._cumulative(ns), dtype=float)
        return self.prefix(top)[ns]

    def partial_sum(self, n):
        return self.partial_sums_at([n])[0]

    def shift(self, k):
        """The weight n -> u_{n+k}."""
        if k < 0 or k > self._horizon:
            raise HorizonError(f"{self.label}: cannot shift by {k}")
        return WeightSeq(values=self.values[k:], label=f"{self.label} shifted by {k}")

    def as_exact(self):
        """Exact copy holding the binary value of every float entry."""
        if self.exact:
            return self
        require_rational_horizon(self._horizon)
        return WeightSeq(values=float_to_exact(self.values), label=self.label)

    def as_float(self):
        if not self.exact:
            return self
        return WeightSeq(values=as_float(self._values), label=self.label)

    def to_csv(self, n=None):
        values = self.values if n is None else self.take(n + 1)
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["n", "u"])
        for i, v in enumerate(values.tolist()):
            writer.writerow([i, str(v) if isinstance(v, Fraction) else repr(float(v))])
        return buffer.getvalue()

    @classmethod
    def from_csv(cls, text, label="csv weight"):
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise ConfigError(f"{label}: no rows")
        indices = [int(r["n"]) for r in rows]
        if indices != list(range(len(indices))):
            raise ConfigError(f"{label}: indices must run 0, 1, 2, ...")
        raw = [r["u"].strip() for r in rows]
        if any("/" in v for v in raw):
            out = np.empty(len(raw), dtype=object)
            out[:] = [Fraction(v) for v in raw]
            return cls(values=out, label=label)
        return cls(values=np.array([float(v) for v in raw]), label=label)


# Named weights

def constant(horizon, c=1.0):
    return WeightSeq(rule=lambda n: np.full(n.shape, float(c)), horizon=horizon,
                     cumulative=lambda n: float(c) * n, label=f"constant {c:g}")


def power_law(beta, horizon):
    """u_n = (n+1)^(-beta)."""
    return WeightSeq(rule=lambda n: (n + 1.0) ** (-beta), horizon=horizon, label=f"power law {beta:g}")


def harmonic(horizon):
    """u_n = 1/(n+1), with a_u(n) = H_n evaluated as digamma(n+1) + Euler's constant."""
    return WeightSeq(
        rule=lambda n: 1.0 / (n + 1.0),
        horizon=horizon,
        cumulative=lambda n: np.where(n > 0, digamma(np.asarray(n, dtype=float) + 1.0) + np.euler_gamma, 0.0),
        label="harmonic",
    )


def hopf_asymptotic(horizon):
    """u_n = sqrt(2/(pi n)) for n >= 1, u_0 = 0."""
    def rule(n):
        out = np.zeros(n.shape)
        pos = n > 0
        out[pos] = np.sqrt(2.0 / (np.pi * n[pos]))
        return out
    return WeightSeq(rule=rule, horizon=horizon, label="hopf asymptotic")


def alternating(horizon, phase=0):
    """1 on indices congruent to phase mod 2, else 0."""
    return WeightSeq(rule=lambda n: ((n + phase) % 2 == 0).astype(float), horizon=horizon,
                     label=f"alternating {phase}")


def kaluza_log(horizon):
    """u_n = 1/log(n+e)."""
    return WeightSeq(rule=lambda n: 1.0 / np.log(n + math.e), horizon=horizon, label="kaluza-log")


NAMED = {
    "constant": lambda horizon, *p: constant(horizon, *p),
    "power": lambda horizon, beta=0.5: power_law(beta, horizon),
    "harmonic": lambda horizon: harmonic(horizon),
    "hopf-asymptotic": lambda horizon: hopf_asymptotic(horizon),
    "alternating": lambda horizon, *p: alternating(horizon, *[int(x) for x in p]),
    "kaluza-log": lambda horizon: kaluza_log(horizon),
}


def named(name, params, horizon):
    """
    Build a named weight.

    :param name: one of NAMED
    :param params: numeric parameters of the family
    :param horizon: materialization bound
    """
    try:
        factory = NAMED[name]
    except KeyError:
        raise ConfigError(f"unknown weight {name!r}; expected one of {sorted(NAMED)}") from None
    try:
        return factory(horizon, *params)
    except TypeError as e:
        raise ConfigError(f"bad parameters {list(params)} for weight {name!r}") from e


# Operations

def _require(u, n, what="n"):
    if n > u.horizon:
        raise HorizonError(f"{u.label}: {what}={n} exceeds horizon {u.horizon}")
    if n < 0:
        raise HorizonError(f"{u.label}: negative index {n}")


def positive_partial_sums(u, ns):
    sums = u.partial_sums_at(ns)
    bad = [int(n) for n, a in zip(np.asarray(ns).tolist(), sums.tolist()) if not a > 0]
    if bad:
        raise DegenerateWeightError(f"{u.label}: a_u(n) = 0 at n = {bad[:5]}")
    return sums


def partial_sums(u, n):
    """
    a_u(n) = u_0 + ... + u_{n-1}, summed with compensation in ascending order.

    :return: float, or Fraction for an exact weight
    """
    _require(u, n)
    return u.partial_sum(n)


def smoothness_profile(u, grid, tol=None):
    """
    Profile of sigma_u(n) = (1/a_u(n)) * sum_{k=1..n} |u_k - u_{k+1}|.

    :param grid: evaluation indices, max(grid)+1 <= horizon
    :param tol: when given, meta records whether u is smooth at the horizon
    """
    grid = as_grid(grid)
    top = int(grid.max())
    _require(u, top + 1, "max(grid)+1")
    sums = positive_partial_sums(u, grid)
    values = u.take(top + 2)
    if u.exact:
        steps = np.empty(top + 1, dtype=object)
        steps[:] = [abs(values[k] - values[k + 1]) for k in range(top + 1)]
    else:
        steps = np.abs(np.diff(values))
    variation = compensated_prefix(steps[1:])
    sigma = [variation[n] / a for n, a in zip(grid.tolist(), sums.tolist())]
    profile = ConvergenceProfile(grid, sigma, "smoothness", {"horizon": u.horizon, "weight": u.label})
    if tol is not None:
        profile.meta["tol"] = tol
        profile.meta["smooth_at_horizon"] = profile.settles_below(tol)
    return profile


def asym_distance(u, w, n):
    """d_n(u, w) = (1/a_u(n)) * sum_{k=1..n} |u_k - w_k|."""
    _require(u, n)
    _require(w, n)
    a = positive_partial_sums(u, [n])[0]
    return _abs_difference_sum(u, w, n) / a


def _abs_difference_sum(u, w, n):
    """sum_{k=1..n} |u_k - w_k|, the unnormalized distance."""
    left, right = u.take(n + 1)[1:], w.take(n + 1)[1:]
    if is_exact(left) and is_exact(right):
        return sum((abs(x - y) for x, y in zip(left, right)), Fraction(0))
    diffs = np.abs(as_float(left) - as_float(right))
    return math.fsum(diffs.tolist())


def subsample(u, p):
    """u^(p)_n = u_{pn}, materialized to horizon floor(N/p)."""
    if p < 1:
        raise ConfigError(f"subsample step must be >= 1, got {p}")
    if u.horizon < p:
        raise HorizonError(f"{u.label}: horizon {u.horizon} too short to subsample by {p}")
    return WeightSeq(values=u.values[::p], label=f"{u.label} subsampled by {p}")


def subsample_report(u, p, n):
    """
    Evaluate |p * sum_{k=1..n} u_{pk} - sum_{k=1..pn} u_k| <= p^2 * sum_{k=1..pn} |u_k - u_{k+1}|.

    Both sums start at index 1; the u_0 term is not controlled by the
    difference sum and drops out of the comparison.
    """
    _require(u, p * n + 1, "p*n+1")
    sub = subsample(u, p)
    values = u.take(p * n + 2)
    lhs_sub = sub.partial_sum(n + 1) - sub.value(0)
    lhs_full = u.partial_sum(p * n + 1) - values[0]
    lhs = abs(p * lhs_sub - lhs_full)
    if u.exact:
        rhs = p * p * sum((abs(values[k] - values[k + 1]) for k in range(1, p * n + 1)), Fraction(0))
    else:
        rhs = p * p * math.fsum(np.abs(np.diff(values[1:])).tolist())
    report = Report("subsample", horizon=u.horizon, params={"p": p, "n": n, "weight": u.label})
    report.values.update({"lhs": lhs, "rhs": rhs, "slack": rhs - lhs})
    report.check("subsampling_inequality", lhs <= rhs)
    report.verdict = "strict slack" if lhs < rhs else ("tight" if lhs == rhs else "violated")
    return report


def product_weight(u, kappa):
    """u^(kappa)_n = prod_j u_{kappa_j n}."""
    kappa = tuple(int(k) for k in kappa)
    if not kappa or min(kappa) < 1:
        raise ConfigError(f"kappa must be a nonempty tuple of positive integers, got {kappa}")
    top = u.horizon // max(kappa)
    if top < 1:
        raise HorizonError(f"{u.label}: horizon {u.horizon} too short for kappa {kappa}")
    values = u.values
    index = np.arange(top + 1)
    out = values[kappa[0] * index].copy()
    for k in kappa[1:]:
        out = out * values[k * index]
    return WeightSeq(values=out, label=f"{u.label} product {kappa}")


@dataclass(frozen=True)
class RegularVariationFit:
    index: float
    intercept: float
    residual_norm: float
    grid: tuple


def rv_index_estimate(u, grid):
    """
    Least-squares slope of log u_n against log n over the grid.

    :return: RegularVariationFit with the estimated index and residual norm
    """
    grid = as_grid(grid)
    _require(u, int(grid.max()))
    if grid.min() < 1:
        raise DegenerateWeightError("index estimates need grid points n >= 1")
    if grid.size < 2:
        raise DegenerateWeightError("index estimates need at least two grid points")
    values = as_float(u.take(int(grid.max()) + 1))[grid]
    if np.any(values <= 0):
        bad = grid[values <= 0][:5].tolist()
        raise DegenerateWeightError(f"{u.label}: nonpositive entries at n = {bad}")
    decades = math.log10(grid.max() / grid.min())
    if decades < MIN_DECADES:
        logger.warning("%s: index estimate over %.2f decades only", u.label, decades)
    x, y = np.log(grid.astype(float)), np.log(values)
    coef, residuals, *_ = np.polyfit(x, y, 1, full=True)
    residual_norm = float(np.sqrt(residuals[0])) if residuals.size else 0.0
    return RegularVariationFit(float(coef[0]), float(coef[1]), residual_norm, tuple(grid.tolist()))


def comparability_constants(u, grid):
    """
    Measured eta, M with eta*a_u(n)/n <= u_n <= M*a_u(n)/n on the grid.

    :return: (eta, M)
    """
    grid = as_grid(grid)
    _require(u, int(grid.max()))
    sums = as_float(positive_partial_sums(u, grid))
    values = as_float(u.take(int(grid.max()) + 1))[grid]
    ratios = grid * values / sums
    return float(ratios.min()), float(ratios.max())


def surrogate_weight(u):
    """
    v_n = u_n where u_n > 0 and 2^-n where u_n = 0.

    :return: (WeightSeq v, array of replaced indices)
    """
    values = u.values
    if u.exact:
        replaced = np.array([n for n, x in enumerate(values) if x == 0], dtype=np.int64)
        out = values.copy()
        for n in replaced.tolist():
            out[n] = Fraction(1, 2 ** n)
    else:
        replaced = np.flatnonzero(values == 0)
        out = values.copy()
        out[replaced] = np.ldexp(1.0, -replaced)
    return WeightSeq(values=out, label=f"{u.label} surrogate"), replaced


def kaluza_report(u):
    """Check u_0 = 1 and u_{n+1}/u_n nondecreasing and at most 1 over the materialized range."""
    values = u.values
    report = Report("kaluza", horizon=u.horizon, params={"weight": u.label})
    report.check("starts_at_one", values[0] == 1)
    if (not u.exact and np.any(values <= 0)) or (u.exact and any(v <= 0 for v in values)):
        report.check("positive", False)
        report.verdict = "not a Kaluza sequence at horizon"
        return report
    if u.exact:
        ratios = [values[n + 1] / values[n] for n in range(values.size - 1)]
        increments = [b - a for a, b in zip(ratios, ratios[1:])]
        failures = sum(1 for d in increments if d < 0)
        above_one = sum(1 for r in ratios if r > 1)
    else:
        ratios = values[1:] / values[:-1]
        failures = int(np.count_nonzero(np.diff(ratios) < 0))
        above_one = int(np.count_nonzero(ratios > 1))
    report.values.update({"monotonicity_failures": failures, "ratios_above_one": above_one})
    report.check("ratios_nondecreasing", failures == 0)
    report.check("ratios_at_most_one", above_one == 0)
    report.verdict = "Kaluza at horizon" if report.passed else "not a Kaluza sequence at horizon"
    return report

