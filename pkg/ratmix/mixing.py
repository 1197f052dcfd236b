"""
Rational weak mixing diagnostics: weighted L1 defects of correlations,
Krickeberg ratio profiles, density convergence, intrinsic weights and return
sequences, the Garsia-Lamperti ratio and a second-moment profile.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from itertools import combinations, product

import numpy as np

from ratmix import config
from ratmix.errors import DegenerateSetError, DegenerateWeightError, HorizonError
from ratmix.indexsets import density_profile, exceptional_set, smallness_profile
from ratmix.markov import correlation_sequence, cylinder_measure, cylinders_disjoint
from ratmix.numeric import as_float, as_grid, compensated_prefix, dyadic_grid, is_exact
from ratmix.report import ConvergenceProfile, Report
from ratmix.weights import WeightSeq, positive_partial_sums, rv_index_estimate

logger = logging.getLogger(__name__)

RV_RANGE = (-1.0, 0.0)  # Regular variation indices for which density convergence is predicted
RV_SLACK = 0.05  # Allowance on the fitted index at the ends of RV_RANGE


def _positive_measure(c, A, exact=False):
    measure = cylinder_measure(c, A, exact)
    if not measure > 0:
        raise DegenerateSetError(f"cylinder {A} has measure 0 for {c.label}")
    return measure


def _pair_profiles(c, A, B, u, N, grid, exact):
    mA, mB = _positive_measure(c, A, exact), _positive_measure(c, B, exact)
    corr = correlation_sequence(c, A, B, N, exact)
    weights = u.take(N)
    sums = positive_partial_sums(u, grid)
    if exact and is_exact(weights):
        defects = np.empty(N, dtype=object)
        defects[:] = [abs(x - mA * mB * w) for x, w in zip(corr, weights)]
        ratios = corr / (mA * mB)
    else:
        corr, weights = as_float(corr), as_float(weights)
        defects = np.abs(corr - float(mA * mB) * weights)
        ratios = corr / float(mA * mB)
    defect_sums = compensated_prefix(defects)
    ratio_sums = compensated_prefix(ratios)
    defect = ConvergenceProfile(grid, [defect_sums[n] / a for n, a in zip(grid.tolist(), sums.tolist())], "rwm defect")
    wre = ConvergenceProfile(grid, [ratio_sums[n] / a for n, a in zip(grid.tolist(), sums.tolist())], "wre ratio")
    return defect, wre


def rwm_report(c, pairs, u, N, tol=config.DEFAULT_TOL, jobs=1, exact=False):
    """
    Weighted L1 defect (1/a_u(n)) sum_{k<n} |m(A & T^-k B) - m(A) m(B) u_k| per
    pair of cylinders, with the weak rational ergodicity ratio
    (1/a_u(n)) sum_{k<n} m(A & T^-k B) / (m(A) m(B)) next to it.
    """
    if N > u.horizon:
        raise HorizonError(f"{u.label}: N={N} exceeds horizon {u.horizon}")
    pairs = list(pairs)
    grid = dyadic_grid(N)

    def work(pair):
        return _pair_profiles(c, pair[0], pair[1], u, N, grid, exact)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(work, pairs))

    report = Report("rwm", horizon=N, params={"chain": c.to_dict(), "weight": u.label, "tol": tol,
                                               "pairs": [[A.to_dict(), B.to_dict()] for A, B in pairs]})
    for (A, B), (defect, wre) in zip(pairs, results):
        key = f"{A}|{B}"
        report.add_profile(f"defect {key}", defect)
        report.add_profile(f"wre {key}", wre)
        report.values[key] = {"defect": defect.last, "wre_ratio": wre.last,
                              "decreasing": defect.is_decreasing_tail()}
    worst = max((v["defect"] for v in report.values.values()), default=0.0)
    report.values["max_defect"] = worst
    report.verdict = ("rational weak mixing signature at horizon" if worst < tol
                      else "rational weak mixing signature not observed at horizon")
    return report


def krickeberg_profile(c, A, B, u, grid, eps=config.DEFAULT_EPS):
    """
    Profile of m(A & T^-n B) / (m(A) m(B) u_n) on the grid.

    :return: (profile, exceptional set {n <= max(grid) : |ratio_n - 1| > eps})
    """
    grid = as_grid(grid)
    top = int(grid.max())
    if top > u.horizon:
        raise HorizonError(f"{u.label}: grid reaches {top}, horizon is {u.horizon}")
    weights = as_float(u.take(top + 1))
    if np.any(weights[grid] <= 0):
        raise DegenerateWeightError(f"{u.label}: u_n = 0 on the grid")
    scale = float(_positive_measure(c, A) * _positive_measure(c, B))
    corr = as_float(correlation_sequence(c, A, B, top + 1, exact=False))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(weights > 0, corr / (scale * weights), np.nan)
    profile = ConvergenceProfile(grid, ratios[grid], "krickeberg ratio", {"A": str(A), "B": str(B), "eps": eps})
    return profile, exceptional_set(ratios, 1.0, eps)


def density_report(s, u, N, eps=config.DEFAULT_EPS, tol=0.05):
    """
    Exceptional set of a ratio sequence s (limit 1) judged both by u-smallness
    and by counting density, next to the regular variation index of u.
    """
    if N > u.horizon:
        raise HorizonError(f"{u.label}: N={N} exceeds horizon {u.horizon}")
    s = np.asarray(s[:N + 1], dtype=float) if not is_exact(s) else as_float(s[:N + 1])
    grid = dyadic_grid(N)
    K = exceptional_set(s, 1.0, eps)
    smallness = smallness_profile(K, u, grid)
    density = density_profile(K, grid)

    fit_grid = dyadic_grid(N, start=max(1, N // 128))
    positive = fit_grid[as_float(u.take(N + 1))[fit_grid] > 0]
    index = rv_index_estimate(u, positive).index if positive.size >= 2 else float("nan")
    lo, hi = RV_RANGE
    applicable = bool(lo - RV_SLACK < index <= hi + RV_SLACK)

    small = smallness.settles_below(tol)
    sparse = density.settles_below(tol)
    report = Report("density", horizon=N, params={"weight": u.label, "eps": eps, "tol": tol})
    report.add_profile("smallness", smallness)
    report.add_profile("density", density)
    report.values.update({
        "rv_index": index,
        "regular_variation_applicable": applicable,
        "exceptional_count": K.count(0, N),
        "smallness": smallness.last,
        "density": density.last,
        "small_at_horizon": small,
        "zero_density_at_horizon": sparse,
        "criteria_agree": small == sparse,
    })
    report.verdict = "density convergence observed at horizon" if sparse else "no density convergence"
    if applicable and small != sparse:
        report.note("smallness and counting density disagree although the index lies in (-1, 0]")
    return report


def _check_disjoint(cylinders):
    for A, B in combinations(cylinders, 2):
        if not cylinders_disjoint(A, B):
            raise DegenerateSetError(f"constituents {A} and {B} overlap")


def _union_measure(c, cylinders, exact):
    total = Fraction(0) if exact else 0.0
    for A in cylinders:
        total += cylinder_measure(c, A, exact)
    if not total > 0:
        raise DegenerateSetError("union has measure 0")
    return total


def intrinsic_weight(c, E, F, N, exact=False):
    """
    u_n(E, F) = m(F & T^-n F) / (m(E) m(F)) for n = 0..N, where E and F are
    finite disjoint unions of cylinders given as lists.
    """
    _check_disjoint(E)
    _check_disjoint(F)
    mE, mF = _union_measure(c, E, exact), _union_measure(c, F, exact)
    total = np.zeros(N + 1, dtype=object) if exact else np.zeros(N + 1)
    if exact:
        total[:] = [Fraction(0)] * (N + 1)
    for A, B in product(F, repeat=2):
        total = total + correlation_sequence(c, A, B, N + 1, exact)
    values = total / (mE * mF)
    return WeightSeq(values=values if exact else as_float(values),
                     label=f"u({'+'.join(map(str, E))}, {'+'.join(map(str, F))})")


def return_sequence(c, F, N, exact=False):
    """u(F) = u(F, F); its partial sums are the return sequence a_n(F)."""
    return intrinsic_weight(c, F, F, N, exact)


def gl_ratio_profile(u, grid):
    """Profile of n u_n / a_u(n)."""
    grid = as_grid(grid)
    top = int(grid.max())
    if top > u.horizon:
        raise HorizonError(f"{u.label}: grid reaches {top}, horizon is {u.horizon}")
    sums = as_float(positive_partial_sums(u, grid))
    values = as_float(u.take(top + 1))[grid]
    return ConvergenceProfile(grid, grid * values / sums, "gl ratio", {"weight": u.label})


def gl_exceptional(u, gamma, N, eps=config.DEFAULT_EPS):
    """
    Where the Garsia-Lamperti ratio misses gamma, for indices 1 <= n <= N.

    :return: (K = {n : |n u_n / a_u(n) - gamma| > eps}, u-smallness profile of K)
    """
    if N > u.horizon:
        raise HorizonError(f"{u.label}: N={N} exceeds horizon {u.horizon}")
    ns = np.arange(1, N + 1, dtype=np.int64)
    sums = as_float(positive_partial_sums(u, ns))
    ratios = ns * as_float(u.take(N + 1))[1:] / sums
    K = exceptional_set(ratios, float(gamma), eps, start=1)
    smallness = smallness_profile(K, u, dyadic_grid(N))
    smallness.meta.update({"gamma": float(gamma), "eps": eps})
    keep = smallness.grid >= N / 10
    smallness.meta["decreasing_last_decade"] = bool(np.count_nonzero(keep) >= 2
                                                    and np.all(np.diff(smallness.values[keep]) < 0))
    return K, smallness


def second_moment_profile(c, s, grid):
    """
    R_n = int_F S_n(1_F)^2 dm / (m(F)^3 a_n(F)^2) for F = [s]_0.

    With w_j = p^(j)_{s,s} and W(n) = w_0 + ... + w_{n-1} this is
    (2 sum_{i<n} w_i W(n-i) - W(n)) / W(n)^2. R_n <= 2 is recorded in meta.
    """
    grid = as_grid(grid)
    top = int(grid.max())
    w = as_float(c.transitions(s, [s], top)[s])
    W = compensated_prefix(w)
    values = []
    for n in grid.tolist():
        cross = float(np.dot(w[:n], W[n:0:-1]))
        values.append((2.0 * cross - W[n]) / W[n] ** 2)
    profile = ConvergenceProfile(grid, values, "second moment", {"state": s, "chain": c.label})
    profile.meta["bounded_by_two"] = bool(np.all(profile.values <= 2.0 + 1e-12))
    return profile
