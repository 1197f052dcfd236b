"""
Lifetime distributions and renewal sequences.

Covers the renewal equation u_n = sum_{k=1..n} f_k u_{n-k} and its inverse,
aperiodicity, the tail functionals L and V, the smoothness criteria built on
them, ratio profiles, a constructive lifetime whose renewal sequence jumps by
a factor k in one step, and the Fourier test of mean ergodicity.
"""
import logging
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import fftconvolve

from ratmix import config
from ratmix.errors import ConfigError, HorizonError, Inconclusive, InvalidDistribution, NotRenewal
from ratmix.numeric import (
    as_float,
    as_grid,
    compensated_prefix,
    compensated_prefix_complex,
    dyadic_grid,
    exact_sum,
    is_exact,
    require_rational_horizon,
    to_fraction,
    zeros,
)
from ratmix.report import ConvergenceProfile, Report
from ratmix.weights import WeightSeq, positive_partial_sums, smoothness_profile, surrogate_weight

logger = logging.getLogger(__name__)

EXCESS_TOLERANCE = 1e-12  # Float lifetimes may exceed total mass 1 by this much
KALUZA_HORIZON = 1_000_000  # Default horizon of the rule-backed Kaluza-log sequence


def _ceil_log2(n):
    """Smallest m with 2**m >= n, for integer arrays n >= 1."""
    n = np.maximum(np.asarray(n, dtype=np.int64), 1)
    return np.frexp((n - 1).astype(float))[1]


class LifetimeDist:
    """
    A (possibly defective) distribution f on {1, 2, ...}.

    Masses and tails are rules: `mass` and `tail` take integer arrays and
    return floats; `exact_mass` and `exact_tail` take an int and return a
    Fraction. `support` returns the support points up to a bound when it is
    sparse. Infinite-support lifetimes are never truncated here; callers pick
    a horizon and read the deficiency from `tail`.
    """

    def __init__(self, mass, tail, exact_mass=None, exact_tail=None, support=None,
                 support_max=None, label="lifetime", spec=None):
        self._mass = mass
        self._tail = tail
        self._exact_mass = exact_mass
        self._exact_tail = exact_tail
        self._support = support
        self.support_max = support_max
        self.label = label
        self.spec = spec or {"kind": "explicit", "label": label}

    def __repr__(self):
        return f"LifetimeDist({self.label!r}, support_max={self.support_max}, exact={self.exact})"

    @property
    def exact(self):
        return self._exact_mass is not None

    def probs(self, N, exact=False):
        """f_0..f_N as an array, f_0 = 0."""
        if exact:
            if not self.exact:
                raise ConfigError(f"{self.label} has no exact masses; use float mode")
            out = zeros(N + 1, exact=True)
            for n in self.support(N).tolist():
                out[n] = self._exact_mass(n)
            return out
        out = np.zeros(N + 1)
        if N >= 1:
            out[1:] = self._mass(np.arange(1, N + 1, dtype=np.int64))
        return out

    def mass(self, n, exact=False):
        if exact:
            return self._exact_mass(int(n)) if n >= 1 else Fraction(0)
        return float(self._mass(np.array([n], dtype=np.int64))[0]) if n >= 1 else 0.0

    def support(self, N):
        """Support points n <= N."""
        if self._support is not None:
            return np.asarray(self._support(N), dtype=np.int64)
        return np.flatnonzero(self.probs(N) > 0)

    def tail(self, n, exact=False):
        """f([n, inf)) for an int or an integer array."""
        if exact:
            if not self.exact:
                raise ConfigError(f"{self.label} has no exact tail")
            if np.ndim(n) == 0:
                return self._exact_tail(max(int(n), 1))
            out = np.empty(len(n), dtype=object)
            out[:] = [self._exact_tail(max(int(k), 1)) for k in n]
            return out
        if np.ndim(n) == 0:
            return float(self._tail(np.array([max(int(n), 1)], dtype=np.int64))[0])
        return np.asarray(self._tail(np.maximum(np.asarray(n, dtype=np.int64), 1)), dtype=float)

    def total(self, exact=False):
        return self.tail(1, exact)

    def is_proper(self, tol=EXCESS_TOLERANCE):
        if self.exact:
            return self.total(exact=True) == 1
        return abs(self.total() - 1.0) <= tol

    def to_dict(self):
        return dict(self.spec)

    @classmethod
    def from_array(cls, f, label="explicit"):
        """Lifetime from f_0..f_M (f_0 must be 0); exact when f is an object array."""
        exact = is_exact(f)
        f = f.copy() if exact else np.asarray(f, dtype=float).copy()
        if f.size < 2:
            raise InvalidDistribution(f"{label}: empty lifetime")
        if f[0] != 0:
            raise InvalidDistribution(f"{label}: f_0 must vanish, support lies in n >= 1")
        negative = [n for n, x in enumerate(f) if x < 0]
        if negative:
            raise InvalidDistribution(f"{label}: negative mass at n = {negative[:5]}")
        total = exact_sum(f)
        if (exact and total > 1) or (not exact and total > 1 + EXCESS_TOLERANCE):
            raise InvalidDistribution(f"{label}: total mass {float(total)!r} exceeds 1")
        top = len(f) - 1
        nonzero = [n for n, x in enumerate(f) if x != 0]
        support_max = nonzero[-1] if nonzero else 0
        suffix = compensated_prefix(f[::-1])[::-1]  # suffix[n] = f_n + ... + f_top, suffix[top+1] = 0
        ffloat = as_float(f)
        sfloat = as_float(suffix)

        def mass(n):
            inside = n <= top
            out = np.zeros(n.shape)
            out[inside] = ffloat[n[inside]]
            return out

        def tail(n):
            return sfloat[np.minimum(n, top + 1)]

        spec = {"kind": "explicit", "probs": [[n, str(f[n]) if exact else repr(float(f[n]))] for n in nonzero]}
        support = np.array(nonzero, dtype=np.int64)
        return cls(
            mass=mass,
            tail=tail,
            exact_mass=(lambda n: f[n] if n <= top else Fraction(0)) if exact else None,
            exact_tail=(lambda n: suffix[min(n, top + 1)]) if exact else None,
            support=lambda N: support[support <= N],
            support_max=support_max,
            label=label,
            spec=spec,
        )

    @classmethod
    def explicit(cls, probs, label="explicit"):
        """
        Lifetime from {n: mass} or [[n, mass], ...].

        Masses given as ints, Fractions or "p/q" strings make an exact lifetime;
        any float makes it a float lifetime.
        """
        items = list(probs.items()) if isinstance(probs, dict) else [tuple(p) for p in probs]
        if not items:
            raise InvalidDistribution(f"{label}: no masses")
        indices = [int(n) for n, _ in items]
        if min(indices) < 1:
            raise InvalidDistribution(f"{label}: support must lie in n >= 1")
        exact = not any(isinstance(m, (float, np.floating)) for _, m in items)
        top = max(indices)
        f = zeros(top + 1, exact)
        for n, m in items:
            f[int(n)] += to_fraction(m) if exact else float(m)
        return cls.from_array(f, label=label)

    @classmethod
    def from_dict(cls, data, exact=False):
        kind = data.get("kind")
        if kind == "explicit":
            return cls.explicit(data["probs"], label=data.get("label", "explicit"))
        if kind == "family":
            return family(data["name"], data.get("params", ()), exact=exact)
        raise ConfigError(f"unknown lifetime kind {kind!r}")


# Families

def geometric(p, exact=False):
    """f_n = (1-p)^(n-1) p."""
    pf = to_fraction(p) if exact else float(p)
    if not 0 < pf <= 1:
        raise InvalidDistribution(f"geometric parameter must lie in (0, 1], got {p}")
    qf = 1 - pf
    p_float, q_float = float(pf), float(qf)
    return LifetimeDist(
        mass=lambda n: p_float * q_float ** (n - 1.0),
        tail=lambda n: q_float ** (n - 1.0),
        exact_mass=(lambda n: pf * qf ** (n - 1)) if exact else None,
        exact_tail=(lambda n: qf ** (n - 1)) if exact else None,
        support_max=1 if pf == 1 else None,
        label=f"geometric({p})",
        spec={"kind": "family", "name": "geometric", "params": [str(pf) if exact else p_float]},
    )


def st_petersburg():
    """f_k = 2^-(m+1) at k = 2^m, zero elsewhere."""
    def mass(n):
        power = (n & (n - 1)) == 0
        return np.where(power, 0.5 / np.maximum(n, 1), 0.0)

    def exact_mass(n):
        return Fraction(1, 2 * n) if n & (n - 1) == 0 else Fraction(0)

    return LifetimeDist(
        mass=mass,
        tail=lambda n: np.ldexp(1.0, -_ceil_log2(n)),
        exact_mass=exact_mass,
        exact_tail=lambda n: Fraction(1, 2 ** (n - 1).bit_length()),
        support=lambda N: np.left_shift(1, np.arange(int(N).bit_length(), dtype=np.int64)),
        label="st-petersburg",
        spec={"kind": "family", "name": "st-petersburg", "params": []},
    )


def pareto(gamma):
    """f([n, inf)) = n^-gamma."""
    gamma = float(gamma)
    if not gamma > 0:
        raise InvalidDistribution(f"pareto index must be positive, got {gamma}")

    def mass(n):
        n = n.astype(float)
        return -(n ** -gamma) * np.expm1(-gamma * np.log1p(1.0 / n))

    return LifetimeDist(
        mass=mass,
        tail=lambda n: n.astype(float) ** -gamma,
        label=f"pareto({gamma:g})",
        spec={"kind": "family", "name": "pareto", "params": [gamma]},
    )


def delta(k):
    """All mass at k."""
    k = int(k)
    if k < 1:
        raise InvalidDistribution(f"delta lifetime needs k >= 1, got {k}")
    return LifetimeDist(
        mass=lambda n: (n == k).astype(float),
        tail=lambda n: (n <= k).astype(float),
        exact_mass=lambda n: Fraction(int(n == k)),
        exact_tail=lambda n: Fraction(int(n <= k)),
        support=lambda N: np.array([k] if k <= N else [], dtype=np.int64),
        support_max=k,
        label=f"delta({k})",
        spec={"kind": "family", "name": "delta", "params": [k]},
    )


def mixture(f, g, eta):
    """(1 - eta) f + eta g, float."""
    eta = float(eta)
    return LifetimeDist(
        mass=lambda n: (1 - eta) * f._mass(n) + eta * g._mass(n),
        tail=lambda n: (1 - eta) * f._tail(n) + eta * g._tail(n),
        support_max=max(f.support_max, g.support_max) if f.support_max and g.support_max else None,
        label=f"mixture({f.label}, {g.label}, {eta:g})",
        spec={"kind": "mixture", "parts": [f.to_dict(), g.to_dict()], "eta": eta},
    )


class RenewalSeq(WeightSeq):
    """A weight with u_0 = 1 and 0 <= u_n <= 1, plus where it came from."""

    def __init__(self, values=None, rule=None, horizon=None, lifetime=None, provenance="", label="renewal"):
        super().__init__(values=values, rule=rule, horizon=horizon, label=label)
        if self.value(0) != 1:
            raise NotRenewal(f"{label}: u_0 = {self.value(0)}, renewal sequences start at 1")
        if values is not None and np.any(as_float(self.values) > 1 + EXCESS_TOLERANCE):
            raise NotRenewal(f"{label}: entry above 1")
        self.lifetime = lifetime
        self.provenance = provenance


def kaluza_log_renewal(horizon=KALUZA_HORIZON):
    """u_n = 1/log(n+e), a Kaluza sequence and hence a renewal sequence."""
    return RenewalSeq(rule=lambda n: 1.0 / np.log(n + math.e), horizon=horizon,
                      provenance="closed form 1/log(n+e)", label="kaluza-log")


FAMILIES = {
    "geometric": lambda params, exact, horizon: geometric(*params, exact=exact),
    "st-petersburg": lambda params, exact, horizon: st_petersburg(),
    "pareto": lambda params, exact, horizon: pareto(*params),
    "delta": lambda params, exact, horizon: delta(*params),
    "kaluza-log": lambda params, exact, horizon: kaluza_log_renewal(horizon or KALUZA_HORIZON),
}

FAMILY_ALIASES = {"geom": "geometric", "stp": "st-petersburg", "st_petersburg": "st-petersburg"}


def family(name, params=(), exact=False, horizon=None):
    """
    Named lifetime (or, for "kaluza-log", renewal sequence).

    :param name: geometric, st-petersburg, pareto, delta, kaluza-log (aliases geom, stp)
    :param params: family parameters
    :param exact: build exact masses where the family allows it
    :param horizon: materialization bound of sequence families
    """
    key = FAMILY_ALIASES.get(name, name)
    if key not in FAMILIES:
        raise ConfigError(f"unknown family {name!r}; expected one of {sorted(FAMILIES)}")
    try:
        return FAMILIES[key](tuple(params), exact, horizon)
    except TypeError as e:
        raise ConfigError(f"bad parameters {list(params)} for family {name!r}") from e


# Renewal equation

def _check_probs(probs, label):
    if is_exact(probs):
        if any(x < 0 for x in probs):
            raise InvalidDistribution(f"{label}: negative mass")
        if sum(probs, Fraction(0)) > 1:
            raise InvalidDistribution(f"{label}: total mass exceeds 1")
        return
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise InvalidDistribution(f"{label}: negative or non-finite mass")
    if math.fsum(probs.tolist()) > 1 + EXCESS_TOLERANCE:
        raise InvalidDistribution(f"{label}: total mass exceeds 1")


def _series_reciprocal(h, N):
    """First N+1 coefficients of 1/h(z) by Newton iteration, h[0] != 0."""
    g = np.array([1.0 / h[0]])
    size = 1
    while size < N + 1:
        size = min(2 * size, N + 1)
        residual = fftconvolve(h[:size], g)[:size]
        correction = fftconvolve(g, residual)[:size]
        refined = np.zeros(size)
        refined[:g.size] = 2.0 * g
        g = refined - correction
    return g[:N + 1]


def _recursion_exact(probs, support, N):
    u = zeros(N + 1, exact=True)
    u[0] = Fraction(1)
    for n in range(1, N + 1):
        u[n] = sum((probs[k] * u[n - k] for k in support if k <= n), Fraction(0))
    return u


def _recursion_sparse(probs, support, N):
    u = np.zeros(N + 1)
    u[0] = 1.0
    weights = probs[support]
    for n in range(1, N + 1):
        k = int(np.searchsorted(support, n, side="right"))
        if k:
            u[n] = np.dot(weights[:k], u[n - support[:k]])
    return u


def _recursion_direct(probs, N):
    u = np.zeros(N + 1)
    u[0] = 1.0
    for n in range(1, N + 1):
        u[n] = np.dot(probs[1:n + 1], u[n - 1::-1])
    return u


def renewal_from_lifetime(f, N, mode="float"):
    """
    Solve u_0 = 1, u_n = sum_{k=1..n} f_k u_{n-k} up to N.

    :param mode: "float" or "rational" (exact, for exact lifetimes and small N)
    :return: RenewalSeq with horizon N
    """
    if mode not in ("float", "rational"):
        raise ConfigError(f"unknown mode {mode!r}")
    exact = mode == "rational"
    if exact:
        require_rational_horizon(N)
    probs = f.probs(N, exact=exact)
    _check_probs(probs, f.label)
    if exact:
        support = [n for n in range(1, N + 1) if probs[n] != 0]
        u = _recursion_exact(probs, support, N)
        strategy = "exact"
    else:
        support = np.flatnonzero(probs > 0)
        if support.size <= config.SPARSE_SUPPORT_LIMIT:
            u = _recursion_sparse(probs, support, N)
            strategy = "sparse"
        elif N <= config.DIRECT_RECURSION_LIMIT:
            u = _recursion_direct(probs, N)
            strategy = "direct"
        else:
            h = -probs
            h[0] = 1.0
            u = _series_reciprocal(h, N)
            clipped = float(np.max(np.maximum(-u, u - 1.0), initial=0.0))
            if clipped > 0:
                logger.debug("%s: FFT inversion clipped by %.3g", f.label, clipped)
            u = np.clip(u, 0.0, 1.0)
            strategy = "fft"
    logger.debug("renewal sequence of %s to %d via %s recursion", f.label, N, strategy)
    return RenewalSeq(values=u, lifetime=f, provenance=f"renewal of {f.label}", label=f"u[{f.label}]")


def lifetime_from_renewal(u, N=None, tol=config.NEGATIVE_TOLERANCE):
    """
    Invert the renewal equation: f_n = u_n - sum_{k=1..n-1} f_k u_{n-k}.

    Masses below -tol raise NotRenewal; smaller negative float masses are
    clipped to 0 with a warning.
    """
    N = u.horizon if N is None else N
    values = u.take(N + 1)
    if values[0] != 1:
        raise NotRenewal(f"{u.label}: u_0 = {values[0]}, expected 1")
    if is_exact(values):
        require_rational_horizon(N)
        f = zeros(N + 1, exact=True)
        for n in range(1, N + 1):
            f[n] = values[n] - sum((f[k] * values[n - k] for k in range(1, n)), Fraction(0))
        negative = [n for n in range(1, N + 1) if f[n] < 0]
        if negative:
            raise NotRenewal(f"{u.label}: f_{negative[0]} = {f[negative[0]]} < 0")
        return LifetimeDist.from_array(f, label=f"inverted from {u.label}")

    values = np.asarray(values, dtype=float)
    if N <= config.DIRECT_RECURSION_LIMIT:
        f = np.zeros(N + 1)
        for n in range(1, N + 1):
            f[n] = values[n] - np.dot(f[1:n], values[n - 1:0:-1])
    else:
        f = -_series_reciprocal(values, N)
        f[0] = 0.0
    worst = int(np.argmin(f[1:])) + 1 if N >= 1 else 0
    if N >= 1 and f[worst] < -tol:
        raise NotRenewal(f"{u.label}: f_{worst} = {f[worst]:.3g} < 0")
    small = np.flatnonzero(f < 0)
    if small.size:
        logger.warning("%s: clipped %d tiny negative masses (min %.3g)", u.label, small.size, f[small].min())
        f[small] = 0.0
    return LifetimeDist.from_array(f, label=f"inverted from {u.label}")


def aperiodicity(u):
    """gcd of {n >= 1 : u_n > 0} over the materialized range; 1 means aperiodic at horizon."""
    values = u.values
    if is_exact(values):
        support = np.array([n for n in range(1, len(values)) if values[n] > 0], dtype=np.int64)
    else:
        support = np.flatnonzero(np.asarray(values[1:], dtype=float) > config.ZERO_TOLERANCE) + 1
    if support.size == 0:
        raise Inconclusive(f"{u.label}: no positive entry beyond u_0 up to {u.horizon}")
    return int(np.gcd.reduce(support))


def tail_and_moment(f, n, exact=None):
    """
    L(n) = sum_{k=1..n} f([k, inf)) and V(n) = sum_{k<=n} k^2 f_k.

    :param exact: defaults to the exactness of f
    """
    exact = f.exact if exact is None else exact
    if exact:
        L = sum((f.tail(k, exact=True) for k in range(1, n + 1)), Fraction(0))
        V = sum((k * k * f.mass(k, exact=True) for k in f.support(n).tolist()), Fraction(0))
        return L, V
    ks = np.arange(1, n + 1, dtype=np.int64)
    L = math.fsum(f.tail(ks).tolist())
    V = math.fsum((ks.astype(float) ** 2 * f.probs(n)[1:]).tolist())
    return L, V


def _cauchy_flat(profile):
    """Last increment small against the total, or increments shrinking over the last dyadic steps."""
    values = profile.values
    if values.size < 2:
        return False
    steps = np.diff(values)
    if steps[-1] <= config.FLATNESS * abs(values[-1]):
        return True
    return bool(steps.size >= 3 and np.all(np.diff(steps[-3:]) < 0))


def prop83_report(f, N, tol=config.DEFAULT_TOL):
    """
    Smoothness criteria of a renewal sequence from its lifetime.

    Reports the partial sums of (u_n - u_{n+1})^2 and of 1/V(n)^2 with the
    growth exponent of V, the profile of L(n)/sqrt(n) and the smoothness
    profile of u. Summability cannot be decided at a finite horizon, so the
    classification is advisory.
    """
    u = renewal_from_lifetime(f, N + 1)
    grid = dyadic_grid(N)
    values = as_float(u.values)
    ks = np.arange(1, N + 1, dtype=np.int64)
    probs = f.probs(N)

    squares = compensated_prefix(np.diff(values)[1:N + 1] ** 2)
    moments = compensated_prefix(ks.astype(float) ** 2 * probs[1:])[1:]  # V(1)..V(N)
    with np.errstate(divide="ignore"):
        inverse = np.where(moments > 0, 1.0 / moments ** 2, 0.0)
    inverse_sums = compensated_prefix(inverse)
    tails = compensated_prefix(f.tail(ks))

    report = Report("prop83", horizon=N, params={"lifetime": f.to_dict(), "tol": tol})
    sq = report.add_profile("sum_sq_increments", ConvergenceProfile(grid, squares[grid], "sum (u_n - u_{n+1})^2"))
    iv = report.add_profile("sum_inv_V2", ConvergenceProfile(grid, inverse_sums[grid], "sum 1/V(n)^2"))
    lr = report.add_profile("L_over_sqrt_n", ConvergenceProfile(grid, tails[grid] / np.sqrt(grid), "L(n)/sqrt(n)"))
    sigma = report.add_profile("smoothness", smoothness_profile(u, grid, tol))

    positive = grid[moments[grid - 1] > 0]
    recent = positive[positive >= N / 10]
    if recent.size >= 2:
        exponent = float(np.polyfit(np.log(recent), np.log(moments[recent - 1]), 1)[0])
    else:
        exponent = float("nan")

    criterion_i = _cauchy_flat(sq)
    hypothesis_i = _cauchy_flat(iv)
    applicable = lr.is_decreasing_tail(3) and lr.last_decade_slope() < 0
    smooth = sigma.settles_below(tol)
    report.values.update({
        "sum_sq_increments": sq.last,
        "sum_inv_V2": iv.last,
        "V_growth_exponent": exponent,
        "L_over_sqrt_n": lr.last,
        "sigma": sigma.last,
        "criterion_i": criterion_i,
        "summability_hypothesis": "observed" if hypothesis_i else "not observed",
        "criterion_ii": "applicable" if applicable else "inapplicable",
        "smooth_at_horizon": smooth,
        "classification": "advisory",
    })
    report.check("renewal_bounds", bool(np.all((values >= 0) & (values <= 1 + EXCESS_TOLERANCE))))
    if not applicable:
        report.verdict = "criterion (ii) inapplicable at horizon"
    elif criterion_i and smooth:
        report.verdict = "criteria satisfied at horizon"
    else:
        report.verdict = "criteria not observed at horizon"
    report.note("summability of 1/V^2 and of squared increments is judged from partial sums only")
    return report


def srlp_profile(u, grid):
    """
    Profile of r_n = v_{n+1}/v_n with v the positive surrogate of u
    (v_n = 2^-n where u_n = 0); replaced indices are listed in meta.
    """
    grid = as_grid(grid)
    top = int(grid.max())
    if top + 1 > u.horizon:
        raise HorizonError(f"{u.label}: ratios to {top} need u up to {top + 1}, horizon is {u.horizon}")
    head = WeightSeq(values=u.take(top + 2), label=u.label)
    v, replaced = surrogate_weight(head)
    replaced_set = set(replaced.tolist())
    values = v.values
    ratios, saturated = [], []
    for n in grid.tolist():
        if n in replaced_set and n + 1 in replaced_set:
            ratios.append(0.5)
            continue
        try:
            if n in replaced_set:
                ratio = math.ldexp(float(values[n + 1]), n) if not v.exact else float(values[n + 1] * 2 ** n)
            else:
                ratio = float(values[n + 1] / values[n])
        except OverflowError:
            ratio = math.inf
        if not math.isfinite(ratio):
            saturated.append(n)
            ratio = np.finfo(float).max
        ratios.append(ratio)
    # saturated entries hold finfo.max, not a ratio
    meta = {"surrogate_indices": replaced.tolist(), "saturated": saturated, "overflow": bool(saturated),
            "horizon": u.horizon}
    if saturated:
        logger.warning("%s: srlp ratio overflows at n = %s", u.label, saturated[:5])
    return ConvergenceProfile(grid, ratios, "srlp ratio", meta)


@dataclass
class DefectiveRenewal:
    v: np.ndarray
    ell: int
    H: object
    peaks: np.ndarray
    bound_holds: bool


def defective_renewal(h, ell, N, mode="float"):
    """
    v_0 = 1, v_n = sum_{k=1..min(n, ell)} h_k v_{n-k}, with the peaks
    V_r = max over rl+1 <= nu <= N of v_nu checked against V_r <= H V_{r-1}.
    """
    exact = mode == "rational"
    if exact:
        require_rational_horizon(N)
    head = h.probs(ell, exact=exact)[1:ell + 1]
    H = exact_sum(head)
    if H >= 1:
        raise InvalidDistribution(f"{h.label}: mass {float(H):.6g} on [1, {ell}] must stay below 1")
    if exact:
        v = zeros(N + 1, exact=True)
        v[0] = Fraction(1)
        for n in range(1, N + 1):
            v[n] = sum((head[k - 1] * v[n - k] for k in range(1, min(n, ell) + 1)), Fraction(0))
    else:
        v = np.zeros(N + 1)
        v[0] = 1.0
        for n in range(1, N + 1):
            m = min(n, ell)
            v[n] = np.dot(head[:m], v[n - 1::-1][:m])
    starts = np.arange(1, N + 1, ell)  # r*ell + 1 for r = 0, 1, ...
    if exact:
        suffix = list(v)
        for i in range(N - 1, -1, -1):
            suffix[i] = max(suffix[i], suffix[i + 1])
        peaks = np.empty(starts.size, dtype=object)
        peaks[:] = [suffix[s] for s in starts.tolist()]
        holds = all(peaks[r] <= H * peaks[r - 1] for r in range(1, peaks.size))
    else:
        suffix = np.maximum.accumulate(v[::-1])[::-1]
        peaks = suffix[starts]
        holds = bool(np.all(peaks[1:] <= H * peaks[:-1] * (1 + 1e-12)))
    return DefectiveRenewal(v=v, ell=ell, H=H, peaks=peaks, bound_holds=holds)


def lifetime_distance(f, g, N):
    """
    |1/f_1 - 1/g_1| + sum_n |f_n - g_n|, summed to N with the tails beyond N
    added; exact whenever one of the tails beyond N vanishes.
    """
    fp, gp = f.probs(N), g.probs(N)
    if fp[1] <= 0 or gp[1] <= 0:
        raise InvalidDistribution("distance needs f_1 > 0 and g_1 > 0")
    head = abs(1.0 / fp[1] - 1.0 / gp[1])
    return head + math.fsum(np.abs(fp - gp).tolist()) + f.tail(N + 1) + g.tail(N + 1)


@dataclass
class DysonResult:
    g: LifetimeDist
    L: int
    ell: int
    H: float
    perturbed: bool
    defective: DefectiveRenewal
    report: Report


def dyson_construct(f, eps, k, max_horizon=None):
    """
    Lifetime g with d(f, g) < 2 eps whose renewal sequence satisfies
    u_{L-1} k < u_L.

    Finite-support f is first perturbed to h = (1-eta) f + eta geometric(1/2)
    with eta = eps / (2 (2 + 1/f_1^2)); infinite-support f is used as h. Then
    ell is minimal with ell > k and 1 - H < eps - d(f, h)/2 where 1 - H is the
    mass of h beyond ell, L is minimal with L > ell and v_{L-1} < (1-H)/k for
    the defective sequence v of h on [1, ell], and g keeps h on [1, ell] and
    puts 1 - H at L.
    """
    if not 0 < eps < 1:
        raise ConfigError(f"eps must lie in (0, 1), got {eps}")
    if int(k) != k or k < 1:
        raise ConfigError(f"k must be a positive integer, got {k}")
    max_horizon = max_horizon or config.DYSON_HORIZON
    f1 = f.mass(1)
    if f1 <= 0:
        raise InvalidDistribution(f"{f.label}: the construction needs f_1 > 0")

    perturbed = f.support_max is not None
    if perturbed:
        eta = eps / (2 * (2 + 1 / f1 ** 2))
        h = mixture(f, geometric(0.5), eta)
        d_fh = lifetime_distance(f, h, f.support_max)
    else:
        h, d_fh = f, 0.0
    budget = eps - d_fh / 2

    ell = k + 1
    while not h.tail(ell + 1) < budget:
        ell += 1
        if ell > max_horizon:
            raise HorizonError(f"no ell <= {max_horizon} leaves tail mass below {budget:.3g}")
    rest = h.tail(ell + 1)
    if not rest > 0:
        raise InvalidDistribution(f"{h.label}: no mass beyond {ell}")
    threshold = rest / k

    N = max(4 * ell, 1024)
    while True:
        defective = defective_renewal(h, ell, N)
        below = np.flatnonzero(defective.v[ell:N] < threshold)
        if below.size:
            L = int(below[0]) + ell + 1
            break
        if N >= max_horizon:
            raise HorizonError(f"v stays above {threshold:.3g} up to {max_horizon}")
        N = min(2 * N, max_horizon)

    g_probs = np.zeros(L + 1)
    g_probs[1:ell + 1] = h.probs(ell)[1:]
    g_probs[L] = rest
    g = LifetimeDist.from_array(g_probs, label=f"dyson({f.label}, eps={eps:g}, k={k})")
    u = renewal_from_lifetime(g, L)
    top = max(L, f.support_max or 0)
    d_fg = lifetime_distance(f, g, top)

    report = Report("dyson", horizon=L, params={"lifetime": f.to_dict(), "eps": eps, "k": k})
    report.values.update({
        "ell": ell, "L": L, "H": 1 - rest, "one_minus_H": rest, "perturbed": perturbed,
        "d_f_h": d_fh, "d_f_g": d_fg, "u_L_minus_1": u.value(L - 1), "u_L": u.value(L),
        "peaks": defective.peaks[:64],
    })
    report.check("distance_below_2eps", d_fg < 2 * eps)
    report.check("ratio_jump", u.value(L - 1) * k < u.value(L))
    report.check("defective_peak_bound", defective.bound_holds)
    report.verdict = "constructed" if report.passed else "construction failed post hoc"
    logger.info("dyson construction: ell=%d L=%d d(f,g)=%.4g", ell, L, d_fg)
    return DysonResult(g=g, L=L, ell=ell, H=1 - rest, perturbed=perturbed, defective=defective, report=report)


def met_fourier_profile(u, theta, grid):
    """|T_n| with T_n = (1/a_u(n)) sum_{k<n} u_k exp(2 pi i k theta)."""
    if not 0 < theta < 1:
        raise ConfigError(f"theta must lie in (0, 1), got {theta}")
    grid = as_grid(grid)
    top = int(grid.max())
    if top > u.horizon:
        raise HorizonError(f"{u.label}: grid reaches {top}, horizon is {u.horizon}")
    sums = as_float(positive_partial_sums(u, grid))
    phase = np.mod(np.arange(top, dtype=float) * theta, 1.0)
    terms = as_float(u.take(top)) * np.exp(2j * np.pi * phase)
    totals = compensated_prefix_complex(terms)
    return ConvergenceProfile(grid, np.abs(totals[grid]) / sums, "met fourier", {"theta": theta})


def kaluza_log_certificate(N):
    """
    Certify that r_n = log(n+e)/log(n+1+e) is strictly increasing and below 1
    for 0 <= n <= N.

    With x = n+1+e, r_{n+1} > r_n iff log(x)^2 > log(x-1) log(x+1), and
    log(x)^2 - log(x-1) log(x+1) = -log(x) log1p(-1/x^2) - log1p(-1/x) log1p(1/x),
    a sum of two positive terms evaluated without cancellation.
    """
    n = np.arange(0, N, dtype=float)
    x = n + 1.0 + math.e
    gap = -np.log(x) * np.log1p(-1.0 / x ** 2) - np.log1p(-1.0 / x) * np.log1p(1.0 / x)
    rise = np.log1p(1.0 / (np.arange(0, N + 1, dtype=float) + math.e))
    report = Report("kaluza-log certificate", horizon=N)
    report.values.update({
        "monotonicity_failures": int(np.count_nonzero(gap <= 0)),
        "bound_failures": int(np.count_nonzero(rise <= 0)),
        "min_gap": float(gap.min()) if gap.size else 0.0,
    })
    report.check("ratio_increasing", report.values["monotonicity_failures"] == 0)
    report.check("ratio_below_one", report.values["bound_failures"] == 0)
    report.verdict = "Kaluza at horizon" if report.passed else "certificate failed"
    return report
