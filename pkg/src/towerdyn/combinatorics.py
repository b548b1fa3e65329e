"""Exact composition counting, Stirling-type bounds and the delta-selection sum.

``N+_{k,s}`` counts sequences of ``s`` positive integers summing to ``k`` and
``N_{k,s}`` counts sequences of ``s`` non-negative integers summing to ``k``.
Both are binomial coefficients, computed here with Python big integers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np
from numba import njit

from .critical import compute_bn
from .errors import NoThreshold

EXACT_LIMIT = 10_000


@dataclass(frozen=True)
class CompositionCount:
    k: int
    s: int
    value: int
    approximate: bool = False


def count_positive_compositions(k: int, s: int) -> int:
    """``N+_{k,s} = C(k-1, s-1)``; zero when ``s > k``."""
    if k < 1 or s < 1:
        raise ValueError("k and s must be >= 1")
    return math.comb(k - 1, s - 1)


def count_compositions(k: int, s: int) -> int:
    """``N_{k,s} = C(k+s-1, s-1)``, the number of non-negative ``s``-tuples summing to ``k``."""
    if k < 0 or s < 1:
        raise ValueError("need k >= 0 and s >= 1")
    return math.comb(k + s - 1, s - 1)


def composition_count(k: int, s: int, positive: bool = False) -> CompositionCount:
    """Exact count for ``k + s <= 10^4``, log-space Stirling estimate beyond."""
    if k + s <= EXACT_LIMIT:
        v = count_positive_compositions(k, s) if positive else count_compositions(k, s)
        return CompositionCount(k, s, v)
    n, r = (k - 1, s - 1) if positive else (k + s - 1, s - 1)
    if r < 0 or r > n:
        return CompositionCount(k, s, 0, True)
    lg = math.lgamma(n + 1) - math.lgamma(r + 1) - math.lgamma(n - r + 1)
    return CompositionCount(k, s, int(mpmath.nint(mpmath.exp(lg))), True)


def brute_force_compositions(k: int, s: int, positive: bool = False) -> int:
    """Generate every ``s``-tuple summing to ``k`` (one prefix at a time) and count them."""
    lo = 1 if positive else 0
    count = 0
    stack = [(k, s)]
    while stack:
        rest, slots = stack.pop()
        if slots == 1:
            count += rest >= lo
            continue
        stack.extend((rest - p, slots - 1) for p in range(lo, rest + 1))
    return count


def composition_identity(k: int, s: int) -> int:
    """``sum_j C(s, j) N+_{k,j}``: choose which ``j`` of the ``s`` entries are positive."""
    if k == 0:
        return 1
    return sum(math.comb(s, j) * count_positive_compositions(k, j) for j in range(1, s + 1))


@dataclass(frozen=True)
class BoundReport:
    passed: bool
    checked: int
    first_violation: tuple | None = None
    worst_margin: float = math.inf


def verify_composition_bounds(total_max: int = 200) -> BoundReport:
    """Check ``N_{k,s} < 2^(k+s-1)`` and ``N_{k,s} <= 2^s max_j N+_{k,j}`` exactly.

    Runs over ``k, s >= 1`` with ``k + s <= total_max``.
    """
    checked = 0
    worst = math.inf
    for k in range(1, total_max):
        row = [count_positive_compositions(k, j) for j in range(1, total_max - k + 1)]
        running_max = 0
        for s in range(1, total_max - k + 1):
            n = count_compositions(k, s)
            running_max = max(running_max, row[s - 1])
            checked += 1
            if not n < 2 ** (k + s - 1):
                return BoundReport(False, checked, (k, s, "2^(k+s-1)"))
            if not n <= 2 ** s * running_max:
                return BoundReport(False, checked, (k, s, "2^s max N+"))
            worst = min(worst, (k + s - 1) * math.log(2) - math.log(n))
    return BoundReport(True, checked, None, worst)


def stirling_bound_log(k: int, zeta: float, alpha: float) -> mpmath.mpf:
    """Logarithm of ``exp(zeta (2 - log zeta + (1 - alpha) log k) k^alpha)``."""
    k = mpmath.mpf(k)
    z = mpmath.mpf(zeta)
    return z * (2 - mpmath.log(z) + (1 - mpmath.mpf(alpha)) * mpmath.log(k)) * k ** mpmath.mpf(alpha)


def verify_stirling_bounds(k_max: int, zeta: float, alpha: float) -> BoundReport:
    """Check ``N+_{k,s} <= exp(zeta (2 - log zeta + (1-alpha) log k) k^alpha)``.

    Runs over all ``k <= k_max`` and ``1 <= s <= zeta k^alpha``.  The big
    integer's logarithm is compared with the bound at 60 digits.
    """
    if not (0.0 < zeta <= 0.5) or not (0.0 < alpha <= 1.0):
        raise ValueError("need zeta in (0, 1/2] and alpha in (0, 1]")
    checked = 0
    worst = math.inf
    with mpmath.workdps(60):
        for k in range(1, k_max + 1):
            s_max = int(math.floor(zeta * k ** alpha))
            bound = stirling_bound_log(k, zeta, alpha)
            for s in range(1, s_max + 1):
                n = count_positive_compositions(k, s)
                if n == 0:
                    continue
                checked += 1
                margin = bound - mpmath.log(mpmath.mpf(n))
                if margin < 0:
                    return BoundReport(False, checked, (k, s), float(margin))
                worst = min(worst, float(margin))
    return BoundReport(True, checked, None, worst)


def geometric_tail_threshold(G, zeta: float, start: int = 1) -> int:
    """Smallest ``p0`` with ``zeta * sum_{p >= p0} G_p <= 1/2``.

    Then ``sum_{s>=1} S0^s = S0/(1 - S0) <= 1``.  ``G[i]`` is ``G_{start+i}``.

    Raises:
        NoThreshold: not even the last index of the window qualifies.
    """
    g = np.asarray(G, dtype=np.float64)
    if zeta <= 0 or np.any(g < 0):
        raise ValueError("need zeta > 0 and G >= 0")
    tails = zeta * np.cumsum(g[::-1])[::-1]
    ok = np.flatnonzero(tails <= 0.5)
    if ok.size == 0:
        raise NoThreshold("tail sum exceeds 1/2 at every index of the window")
    return int(ok[0]) + start


@njit(cache=True)
def _composition_sum(t, p_delta, n):
    # A[k]: sum over compositions of k with parts >= p_delta of the product of t
    A = np.zeros(n + 1)
    total = 0.0
    for k in range(p_delta, n + 1):
        acc = t[k]
        for p in range(p_delta, k - p_delta + 1):
            acc += t[p] * A[k - p]
        A[k] = acc
        total += acc
        if total > 1e250:
            return np.inf
    return total


def delta_selection_terms(logD, gamma, ell: float, zeta: float) -> np.ndarray:
    """``t_p = zeta * (gamma_p^(l-1) D_p)^(-1/l) = zeta * b_p`` with ``t[0] = 0``."""
    b = compute_bn(logD, gamma, ell)
    return np.concatenate([[0.0], zeta * b])


def composition_sum(t, p_delta: int, n: int) -> float:
    """Sum over compositions with parts in ``[p_delta, n]`` and total ``<= n`` of ``prod t_p``.

    ``t[p]`` is the weight of a part of size ``p`` (``t[0]`` unused).  Returns
    ``inf`` once the running sum passes 1e250.
    """
    if p_delta > n:
        return 0.0
    p_delta = max(1, int(p_delta))
    t = np.asarray(t, dtype=np.float64)
    if t.size < n + 1:
        raise ValueError("need weights for every p <= n")
    return float(_composition_sum(t, p_delta, int(n)))


def delta_selection_sum(logD, gamma, ell: float, zeta: float, p_delta: int, n: int) -> float:
    """Left side of the delta-selection inequality for one critical point.

    Terms are ``zeta * b_p``, the form whose products bound the length
    contraction of the composed binding returns.
    """
    n = min(int(n), len(logD))
    return composition_sum(delta_selection_terms(logD, gamma, ell, zeta), p_delta, n)


def brute_force_composition_sum(t, p_delta: int, n: int) -> float:
    """Direct enumeration oracle for :func:`composition_sum` (small ``n`` only)."""
    total = 0.0

    def rec(remaining, prod):
        nonlocal total
        for p in range(max(1, p_delta), remaining + 1):
            total += prod * t[p]
            rec(remaining - p, prod * t[p])

    rec(n, 1.0)
    return total
