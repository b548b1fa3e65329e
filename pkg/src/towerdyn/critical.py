"""Critical-orbit sequences, summability diagnostics and Fibonacci combinatorics.

Per critical point ``c`` the table holds, for ``n = 1..N``:

* ``log D_n = log|(f^n)'(f(c))|``;
* the tolerance sequence ``gamma_n``;
* ``b_n = (gamma_n^(l-1) D_n)^(-1/l)``;
* ``d_n = min_{1<=i<n} (gamma_i / D_i)^(1/l) |f^i(c) - C|`` for ``n >= 2``;
* the distance of ``f^n(c)`` to the critical set.

Maps carrying ``hp_params`` (for instance the Fibonacci map, whose critical
orbit has to be followed far beyond float resolution) are iterated with
mpmath.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .errors import (BracketError, CriticalHit, DegenerateSequence, InvalidSeries,
                     WindowTooShort)
from .maps import DERIV_FLOOR, MapSpec, iterate, make_map

log = logging.getLogger(__name__)

GAMMA_CAP = 0.49
STAR_CAUCHY_TOL = 1e-6
FIT_R2_MIN = 0.9


# ----------------------------------------------------------------------------
# critical orbit in float or high precision


def hp_precision(m: MapSpec) -> int:
    """Working precision (bits) implied by the decimal strings in ``hp_params``."""
    if not m.hp_params:
        return 53
    digits = max(len(p.replace("-", "").replace(".", "").lstrip("0")) for p in m.hp_params)
    return max(64, int(digits * 3.33) + 16)


def critical_orbit(m: MapSpec, c: float, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Points ``f^n(c)`` for ``n = 0..N`` and ``log|f'(f^n(c))|`` for ``n = 0..N``.

    Distances are returned in float; the orbit itself is followed in high
    precision when ``m.hp_params`` is set.
    """
    if not m.hp_params:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            orb = iterate(m, c, N + 1)
        pts = orb.points[: N + 1].copy()
        with np.errstate(divide="ignore"):
            return pts, np.log(np.abs(m.df(pts)))
    prec = hp_precision(m)
    pts = np.empty(N + 1)
    lgs = np.empty(N + 1)
    with mpmath.workprec(prec):
        st = m.mp_setup()
        idx = min(range(len(m.critical_points)), key=lambda i: abs(m.critical_points[i] - c))
        x = st["crit"][idx]
        for n in range(N + 1):
            pts[n] = float(x)
            d = abs(m.mp_df(x, st))
            lgs[n] = float(mpmath.log(d)) if d != 0 else -math.inf
            x = m.mp_f(x, st)
    return pts, lgs


def hp_critical_distances(m: MapSpec, c: float, N: int) -> np.ndarray:
    """``|f^n(c) - c|`` for ``n = 0..N`` as floats, computed at full precision.

    Floats cannot hold ``f^n(c) - c`` once it drops below 1e-16 relative to
    ``c``; the difference is formed in mpmath before rounding.
    """
    if not m.hp_params:
        pts, _ = critical_orbit(m, c, N)
        return np.abs(pts - c)
    out = np.empty(N + 1)
    with mpmath.workprec(hp_precision(m)):
        st = m.mp_setup()
        idx = min(range(len(m.critical_points)), key=lambda i: abs(m.critical_points[i] - c))
        c0 = st["crit"][idx]
        x = c0
        for n in range(N + 1):
            out[n] = float(abs(x - c0))
            x = m.mp_f(x, st)
    return out


# ----------------------------------------------------------------------------
# tables


@dataclass
class CriticalOrbitTable:
    """Critical-orbit sequences for one critical point; index ``n - 1`` holds step ``n``.

    ``d`` starts at ``n = 2`` so ``d[j]`` belongs to ``n = j + 2``.
    """

    c: float
    ell: float
    logD: np.ndarray
    gamma: np.ndarray
    b: np.ndarray
    d: np.ndarray
    dist_to_C: np.ndarray
    truncated_at: int | None = None
    partial_sum_star: np.ndarray = field(init=False)
    partial_sum_b: np.ndarray = field(init=False)
    partial_sum_gamma: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        with np.errstate(over="ignore", invalid="ignore"):
            self.partial_sum_star = np.cumsum(star_summand(self.logD, self.ell))
            self.partial_sum_b = np.cumsum(self.b)
            self.partial_sum_gamma = np.cumsum(self.gamma)

    @property
    def N(self) -> int:
        return int(self.logD.size)

    def rows(self) -> list[tuple]:
        """CSV rows ``n, logD, gamma, b, d, dist_to_C`` (``d`` blank at ``n = 1``)."""
        out = []
        for i in range(self.N):
            dval = "" if i == 0 else repr(float(self.d[i - 1]))
            out.append((i + 1, repr(float(self.logD[i])), repr(float(self.gamma[i])),
                        repr(float(self.b[i])), dval, repr(float(self.dist_to_C[i]))))
        return out


def star_summand(logD: np.ndarray, ell: float) -> np.ndarray:
    # contracting orbits (log D_n < 0) give infinite summands: divergence
    with np.errstate(over="ignore"):
        return np.exp(-np.asarray(logD) / (2.0 * ell - 1.0))


def compute_Dn(m: MapSpec, c: float, N: int, strict: bool = False) -> np.ndarray:
    """``log D_n(c)`` for ``n = 1..N`` from one orbit pass starting at ``f(c)``.

    If the orbit meets the critical set numerically the table is truncated
    just before that step (a warning is logged); with ``strict=True`` a
    :class:`CriticalHit` is raised instead.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    _, lgs = critical_orbit(m, c, N)
    steps = lgs[1 : N + 1]
    bad = np.flatnonzero(~np.isfinite(steps) | (steps < math.log(DERIV_FLOOR)))
    if bad.size:
        k = int(bad[0])
        if strict:
            raise CriticalHit(f"critical orbit of {c} returns to the critical set at n={k + 1}", k + 1)
        log.warning("critical orbit of %r hits the critical set at step %d; table truncated", c, k + 1)
        steps = steps[:k]
    return compensated_cumsum(steps)


def compensated_cumsum(x: np.ndarray) -> np.ndarray:
    """Prefix sums with Neumaier compensation (each entry within about one ulp).

    A plain running sum of ``N`` terms drifts by up to ``N`` ulps, which for
    ``log D_n`` at ``n = 10^4`` is already visible in ``gamma_n`` at 1e-11.
    """
    out = np.empty(len(x))
    s = 0.0
    comp = 0.0
    for i, v in enumerate(np.asarray(x, dtype=np.float64).tolist()):
        t = s + v
        if abs(s) >= abs(v):
            comp += (s - t) + v
        else:
            comp += (v - t) + s
        s = t
        out[i] = s + comp
    return out


def choose_gamma(logD: np.ndarray, ell: float, strategy: str = "equalizing",
                 series=None) -> np.ndarray:
    """Tolerance sequence ``gamma_n``.

    ``equalizing`` gives ``min(0.49, D_n^(-1/(2l-1)))``; ``user-series``
    validates and returns ``series``.
    """
    logD = np.asarray(logD, dtype=np.float64)
    if strategy == "equalizing":
        with np.errstate(over="ignore"):
            return np.minimum(GAMMA_CAP, np.exp(-logD / (2.0 * ell - 1.0)))
    if strategy != "user-series":
        raise ValueError(f"unknown gamma strategy {strategy!r}")
    g = np.asarray(series, dtype=np.float64)
    if g.shape != logD.shape:
        raise InvalidSeries("user gamma series must match the length of D")
    if np.any(~np.isfinite(g)) or np.any(g <= 0.0) or np.any(g >= 0.5):
        raise InvalidSeries("gamma terms must lie in (0, 1/2)")
    if g.size >= 20:
        total = g.sum()
        tail = g[int(0.9 * g.size):].sum()
        if tail > 0.05 * total and tail > 1e-3:
            raise InvalidSeries("gamma series does not look summable over the window")
    return g


def log_gamma(logD: np.ndarray, gamma: np.ndarray, ell: float) -> np.ndarray:
    """``log gamma_n``; terms that underflowed to zero use the equalizing value."""
    logD = np.asarray(logD, dtype=np.float64)
    g = np.asarray(gamma, dtype=np.float64)
    with np.errstate(divide="ignore"):
        lg = np.log(g)
    return np.where(g > 0.0, lg, -logD[: g.size] / (2.0 * ell - 1.0))


def compute_bn(logD: np.ndarray, gamma: np.ndarray, ell: float) -> np.ndarray:
    """``b_n = (gamma_n^(l-1) D_n)^(-1/l)`` evaluated in log space."""
    logD = np.asarray(logD, dtype=np.float64)
    with np.errstate(over="ignore"):
        return np.exp(-((ell - 1.0) * log_gamma(logD, gamma, ell) + logD) / ell)


def compute_dn(logD: np.ndarray, gamma: np.ndarray, ell: float,
               dist: np.ndarray) -> np.ndarray:
    """``d_n`` for ``n = 2..N``; ``dist[i - 1] = |f^i(c) - C|``."""
    logD = np.asarray(logD, dtype=np.float64)
    N = logD.size
    if N < 2:
        return np.empty(0)
    lg = log_gamma(logD[: N - 1], gamma[: N - 1], ell)
    with np.errstate(over="ignore", invalid="ignore"):
        terms = np.exp((lg - logD[: N - 1]) / ell) * dist[: N - 1]
    return np.minimum.accumulate(terms)


def build_table(m: MapSpec, c: float, N: int, strategy: str = "equalizing",
                series=None) -> CriticalOrbitTable:
    """Full :class:`CriticalOrbitTable` for ``c`` from a single orbit pass."""
    logD = compute_Dn(m, c, N)
    n_ok = logD.size
    pts, _ = critical_orbit(m, c, N)
    if m.hp_params:
        # the float images are fine for distances to the critical set unless
        # the orbit is extremely close to c; use the exact differences there
        near = hp_critical_distances(m, c, N)[1 : n_ok + 1]
        if len(m.critical_points) == 1:
            dist = near
        else:
            dist = np.minimum(m.dist_to_critical(pts[1 : n_ok + 1]), near)
    else:
        dist = m.dist_to_critical(pts[1 : n_ok + 1])
    if series is not None:
        series = np.asarray(series)[:n_ok]
    gamma = choose_gamma(logD, m.critical_order, strategy, series)
    b = compute_bn(logD, gamma, m.critical_order)
    d = compute_dn(logD, gamma, m.critical_order, dist)
    return CriticalOrbitTable(c, m.critical_order, logD, gamma, b, d, np.asarray(dist),
                              truncated_at=None if n_ok == N else n_ok + 1)


def build_tables(m: MapSpec, N: int, strategy: str = "equalizing") -> list[CriticalOrbitTable]:
    """One table per critical point, in critical-point order."""
    return [build_table(m, c, N, strategy) for c in m.critical_points]


# ----------------------------------------------------------------------------
# growth classification


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r2: float


@dataclass(frozen=True)
class DecayClass:
    """Fitted decay class of a positive sequence.

    ``params`` holds ``C``, ``beta`` and ``alpha`` where the model has them.
    ``fits`` keeps the parameter dictionaries and R^2 of all three models.
    ``label`` refines the class when the polynomial exponent drifts upward
    across windows (``super-polynomial / sub-stretched``).
    """

    kind: str
    params: dict
    fit_quality: float
    window: tuple[int, int]
    fits: dict = field(default_factory=dict)
    label: str = ""


def linear_fit(x: np.ndarray, y: np.ndarray) -> LinearFit:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + icept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return LinearFit(float(slope), float(icept), r2)


def _safe_exp(v: float) -> float:
    return math.exp(v) if v < 700 else math.inf


def _fit_models(n: np.ndarray, ly: np.ndarray) -> dict:
    fits = {}
    e = linear_fit(n, ly)
    fits["exponential"] = {"C": _safe_exp(e.intercept), "beta": -e.slope, "r2": e.r2}
    p = linear_fit(np.log(n), ly)
    fits["polynomial"] = {"C": _safe_exp(p.intercept), "alpha": -p.slope, "r2": p.r2}
    # stretched: profile the exponent alpha, linear in n^alpha for each
    best = None
    for a in np.linspace(0.02, 0.98, 97):
        s = linear_fit(n ** a, ly)
        if best is None or s.r2 > best[1].r2:
            best = (float(a), s)
    lo = max(0.001, best[0] - 0.01)
    hi = min(0.999, best[0] + 0.01)
    for a in np.linspace(lo, hi, 41):
        s = linear_fit(n ** a, ly)
        if s.r2 > best[1].r2:
            best = (float(a), s)
    a, s = best
    fits["stretched-exponential"] = {"C": _safe_exp(s.intercept), "beta": -s.slope,
                                     "alpha": a, "r2": s.r2}
    return fits


def _cauchy(y: np.ndarray) -> bool:
    total = float(np.sum(y))
    if total <= 0:
        return True
    tail = float(np.sum(y[int(0.9 * y.size):]))
    return tail < STAR_CAUCHY_TOL * total


def classify_growth(seq, kind: str = "b-sequence", n=None,
                    window: tuple[int, int] | None = None,
                    min_log_span: float = 2.0, min_points: int = 50) -> DecayClass:
    """Fit exponential, stretched-exponential and polynomial decay models.

    Args:
        seq: positive sequence; entry ``i`` belongs to index ``n[i]``.
        kind: ``b-sequence``, ``d-sequence`` or ``tail-counts`` (bookkeeping only).
        n: index values, default ``1..len(seq)``.
        window: inclusive index window; default ``[N/10, N]``.
        min_log_span: smallest accepted ``max log y - min log y`` in the window.
        min_points: smallest accepted number of usable points in the window.

    Returns:
        The :class:`DecayClass` whose model has the highest R^2, or
        ``summable-only`` / ``not-summable`` when no fit reaches R^2 0.9.
    """
    y = np.asarray(seq, dtype=np.float64)
    idx = np.arange(1, y.size + 1, dtype=np.float64) if n is None else np.asarray(n, dtype=np.float64)
    if window is None:
        top = float(idx.max()) if idx.size else 0.0
        window = (max(1, int(top // 10)), int(top))
    sel = (idx >= window[0]) & (idx <= window[1]) & (y > 0) & np.isfinite(y)
    x, yy = idx[sel], y[sel]
    if x.size < min_points:
        raise DegenerateSequence(f"only {x.size} usable points in window {window}")
    ly = np.log(yy)
    if ly.max() - ly.min() < min_log_span:
        raise DegenerateSequence(
            f"entries span less than {min_log_span:.3g} log units; no rate inferable")
    fits = _fit_models(x, ly)
    winner = max(fits, key=lambda k: fits[k]["r2"])
    r2 = fits[winner]["r2"]
    label = ""
    if kind != "tail-counts" and x.size >= 200:
        label = _drift_label(x, ly)
    if r2 < FIT_R2_MIN:
        cls = "summable-only" if _cauchy(yy) else "not-summable"
        return DecayClass(cls, {}, r2, window, fits, label)
    params = {k: v for k, v in fits[winner].items() if k != "r2"}
    return DecayClass(winner, params, r2, window, fits, label)


def _drift_label(x: np.ndarray, ly: np.ndarray) -> str:
    """``super-polynomial / sub-stretched`` when the polynomial exponent grows
    across consecutive log-windows while the stretched exponent shrinks."""
    edges = np.exp(np.linspace(np.log(x.min()), np.log(x.max()), 4))
    poly, stretch = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        s = (x >= lo) & (x <= hi)
        if s.sum() < 30 or np.ptp(ly[s]) < 0.5:
            return ""
        f = _fit_models(x[s], ly[s])
        poly.append(f["polynomial"]["alpha"])
        stretch.append(f["stretched-exponential"]["alpha"])
    grows = all(b > a for a, b in zip(poly, poly[1:])) and poly[0] > 0
    shrinks = all(b < a for a, b in zip(stretch, stretch[1:]))
    if grows and shrinks:
        return "super-polynomial / sub-stretched"
    return ""


def record_envelope(idx: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Indices and values where a nonincreasing sequence strictly drops."""
    keep = np.concatenate([[True], y[1:] < y[:-1]])
    return idx[keep], y[keep]


def classify_dn(table: CriticalOrbitTable) -> DecayClass:
    """Decay class of ``d_n``.

    ``d_n`` is a running minimum, so it is a step function; the fit uses the
    points where it strictly drops.  If there are too few drops for the
    window rule the whole record set is used.
    """
    n = np.arange(2, table.d.size + 2, dtype=np.float64)
    rn, rd = record_envelope(n, table.d)
    try:
        return classify_growth(rd, "d-sequence", n=rn)
    except DegenerateSequence:
        return classify_super_polynomial(rn, rd)


def classify_super_polynomial(n: np.ndarray, y: np.ndarray) -> DecayClass:
    """Classify a sparse positive sequence by local log-log slopes.

    Used for record sequences (such as ``d_n`` at a Fibonacci parameter)
    that have too few points for :func:`classify_growth`.  The sequence is
    ``super-polynomial / sub-stretched`` when the local polynomial exponent
    increases along the sequence while the local stretched rate
    ``-d log y / d n`` decreases.
    """
    n = np.asarray(n, dtype=np.float64)
    ly = np.log(np.asarray(y, dtype=np.float64))
    if n.size < 4:
        raise DegenerateSequence("need at least 4 points")
    fits = _fit_models(n, ly) if n.size >= 3 else {}
    ln = np.log(n)
    k = max(2, n.size // 3)
    alpha_early = -linear_fit(ln[:k + 1], ly[:k + 1]).slope
    alpha_late = -linear_fit(ln[-k - 1:], ly[-k - 1:]).slope
    rate_early = -linear_fit(n[:k + 1], ly[:k + 1]).slope
    rate_late = -linear_fit(n[-k - 1:], ly[-k - 1:]).slope
    window = (int(n.min()), int(n.max()))
    params = {"alpha_early": alpha_early, "alpha_late": alpha_late,
              "rate_early": rate_early, "rate_late": rate_late}
    r2 = max(f["r2"] for f in fits.values())
    if alpha_late > alpha_early > 0 and rate_late < rate_early:
        return DecayClass("summable-only", params, r2, window, fits,
                          "super-polynomial / sub-stretched")
    winner = max(fits, key=lambda kk: fits[kk]["r2"])
    return DecayClass(winner, params, r2, window, fits, "")


# ----------------------------------------------------------------------------
# summability


@dataclass(frozen=True)
class SummabilityReport:
    star: str
    starstar: str
    star_total: float
    starstar_total: float
    star_class: DecayClass | None
    starstar_class: DecayClass | None
    note: str = ""


def _is_summable_class(dc: DecayClass | None) -> bool:
    if dc is None:
        return False
    if dc.kind in ("exponential", "stretched-exponential"):
        return dc.params.get("beta", 0.0) > 0
    if dc.kind == "polynomial":
        return dc.params.get("alpha", 0.0) > 1.0
    return dc.kind == "summable-only"


def _verdict(summand: np.ndarray) -> tuple[str, float, DecayClass | None]:
    N = summand.size
    with np.errstate(over="ignore", invalid="ignore"):
        partial = np.cumsum(summand)
    total = float(partial[-1])
    incr = total - float(partial[N // 10 - 1]) if N >= 10 else total
    dc = None
    for window in (None, (1, N)):
        try:
            dc = classify_growth(summand, "b-sequence", window=window)
            break
        except DegenerateSequence:
            continue
    if N >= 10:
        head = float(np.mean(summand[: N // 10]))
        tail = float(np.mean(summand[-(N // 10):]))
        if not math.isfinite(total) or (tail > 0 and tail >= head):
            # the terms do not tend to zero
            return "diverging", total, dc
    cauchy = incr < STAR_CAUCHY_TOL * total
    if cauchy and (_is_summable_class(dc) or dc is None and summand[-1] < STAR_CAUCHY_TOL * total):
        return "converged", total, dc
    if dc is not None and dc.kind == "polynomial" and dc.params["alpha"] <= 1.0 and dc.fit_quality >= FIT_R2_MIN:
        return "diverging", total, dc
    return "inconclusive", total, dc


def check_summability(table: CriticalOrbitTable) -> SummabilityReport:
    """Evidence for conditions (*) and (**) from partial-sum behaviour.

    The verdict is ``converged`` when the partial-sum increment over the last
    decade of indices is below 1e-6 of the total and the summand's fitted
    class is summable, ``diverging`` when the summand is fitted as a
    non-summable power law or its terms do not decrease (last tenth of the
    indices against the first), else ``inconclusive``.
    """
    if table.N < 100:
        raise WindowTooShort(f"need N >= 100, got {table.N}")
    s_star, t_star, c_star = _verdict(star_summand(table.logD, table.ell))
    s_ss, t_ss, c_ss = _verdict(table.b)
    note = ""
    if s_star != s_ss:
        note = "(*) and (**) verdicts disagree; gamma is not the equalizing choice"
    return SummabilityReport(s_star, s_ss, t_star, t_ss, c_star, c_ss, note)


# ----------------------------------------------------------------------------
# closest returns and the Fibonacci map


def closest_returns(m: MapSpec, c: float, N: int) -> list[tuple[int, float]]:
    """Record-closest approaches ``(n, |f^n(c) - c|)`` for ``1 <= n <= N``."""
    if N <= 0:
        return []
    dist = hp_critical_distances(m, c, N)
    out = []
    best = math.inf
    for n in range(1, N + 1):
        if dist[n] < best:
            best = float(dist[n])
            out.append((n, best))
    return out


def fibonacci_numbers(k: int) -> list[int]:
    """``S_1..S_k`` = 1, 2, 3, 5, 8, ..."""
    out = [1, 2]
    while len(out) < k:
        out.append(out[-1] + out[-2])
    return out[:k]


def fibonacci_kneading(length: int) -> list[int]:
    """Kneading symbols ``e_1..e_length`` of the Fibonacci combinatorics.

    Built from cutting times ``S_0 = 1, S_k = S_{k-1} + S_{Q(k)}`` with
    kneading map ``Q(k) = max(k - 2, 0)``; each block
    ``e_{S_{k-1}+1} .. e_{S_k}`` repeats ``e_1 .. e_{S_{Q(k)}-1}`` and then
    flips ``e_{S_{Q(k)}}``.  Symbol 1 means right of the critical point.
    """
    S = [1]
    e = [1]
    k = 1
    while len(e) < length:
        q = max(k - 2, 0)
        S.append(S[-1] + S[q])
        block = e[: S[q] - 1] + [1 - e[S[q] - 1]]
        e.extend(block)
        k += 1
    return e[:length]


def kneading_compare(a: list[int], b: list[int]) -> int:
    """Order of two kneading sequences of a unimodal map with a maximum.

    Returns -1, 0 or 1.  At the first differing symbol the larger symbol is
    the larger sequence when the number of 1s before it is even.
    """
    ones = 0
    for x, y in zip(a, b):
        if x != y:
            sign = 1 if x > y else -1
            return sign if ones % 2 == 0 else -sign
        ones += x
    return 0


def _kneading_hp(family: str, a, length: int, prec: int, target: list[int]) -> list[int]:
    """Kneading symbols at parameter ``a``, stopping at the first mismatch with ``target``."""
    out = []
    with mpmath.workprec(prec):
        a = mpmath.mpf(a)
        half = mpmath.mpf(1) / 2
        x = half
        for k in range(length):
            if family == "logistic":
                x = a * x * (1 - x)
            else:
                v = 2 * x - 1
                x = 1 - a * v * v / 2
            if x == half:
                out.append(target[k])
                continue
            sym = 1 if x > half else 0
            out.append(sym)
            if sym != target[k]:
                break
    return out


def find_fibonacci_parameter(family: str, bracket: tuple[float, float], k: int = 12,
                             prec: int = 600, tol: float | None = None):
    """Bisect a parameter bracket for Fibonacci kneading combinatorics.

    The kneading sequence is monotone in the parameter for the quadratic
    families, so bisection on its order converges to the Fibonacci
    parameter.  The search runs at ``prec`` bits so the critical orbit can
    be followed through many closest returns.

    Args:
        family: ``normal`` or ``logistic`` (one-parameter unimodal).
        bracket: ``(a_lo, a_hi)``.
        k: number of closest-return times that must be Fibonacci.
        prec: working precision in bits.
        tol: stop width; default ``2^-(prec - 24)``.

    Returns:
        The parameter as an ``mpmath.mpf`` (``float()`` gives a real).

    Raises:
        BracketError: the endpoints do not straddle the target combinatorics.
    """
    from .maps import canonical_family

    fam = canonical_family(family)
    if fam not in ("normal", "logistic"):
        raise BracketError("Fibonacci search needs a one-parameter unimodal family")
    length = max(4 * fibonacci_numbers(k)[-1], 12000)
    target = fibonacci_kneading(length)
    with mpmath.workprec(prec):
        lo = mpmath.mpf(bracket[0])
        hi = mpmath.mpf(bracket[1])
        tol = mpmath.mpf(2) ** (-(prec - 24)) if tol is None else mpmath.mpf(tol)

        def side(a):
            return kneading_compare(_kneading_hp(fam, a, length, prec, target), target)

        s_lo, s_hi = side(lo), side(hi)
        if not (s_lo < 0 < s_hi):
            raise BracketError(
                f"bracket [{bracket[0]}, {bracket[1]}] does not straddle the Fibonacci "
                f"combinatorics (orders {s_lo}, {s_hi})")
        while hi - lo > tol:
            mid = (lo + hi) / 2
            s = side(mid)
            if s == 0:
                lo = hi = mid
                break
            if s < 0:
                lo = mid
            else:
                hi = mid
        a_star = (lo + hi) / 2
    m = fibonacci_map(fam, a_star, prec)
    times = [t for t, _ in closest_returns(m, m.critical_points[0], fibonacci_numbers(k)[-1])]
    if times[:k] != fibonacci_numbers(k):
        log.warning("closest returns at the found parameter: %s", times[:k])
    return a_star


def fibonacci_map(family: str, a, prec: int = 600) -> MapSpec:
    """MapSpec at a high-precision parameter, keeping the digits in ``hp_params``."""
    with mpmath.workprec(prec):
        digits = mpmath.nstr(mpmath.mpf(a), int(prec / 3.33) - 4, strip_zeros=False)
    return make_map(family, [float(mpmath.mpf(a))], hp_params=[digits])


@dataclass(frozen=True)
class ScalingFit:
    beta_prime: float
    intercept: float
    r2: float
    r: np.ndarray
    log_dist: np.ndarray


def fibonacci_scaling_check(m: MapSpec, R: int = 12, c: float | None = None,
                            r_min: int = 4) -> ScalingFit:
    """Fit ``log|f^{S_r}(c) - c|`` against ``r^2`` over ``r in [r_min, R]``."""
    if R < 10:
        raise ValueError("R must be >= 10")
    c = m.critical_points[0] if c is None else c
    S = fibonacci_numbers(R)
    dist = hp_critical_distances(m, c, S[-1])
    recs = closest_returns(m, c, S[-1])
    if len(recs) < 10:
        raise DegenerateSequence(f"only {len(recs)} closest returns; not a Fibonacci map")
    r = np.arange(r_min, R + 1, dtype=np.float64)
    ld = np.log(np.array([dist[S[i - 1]] for i in range(r_min, R + 1)]))
    return fitted_scaling(r, ld)


def fitted_scaling(r: np.ndarray, log_dist: np.ndarray) -> ScalingFit:
    fit = linear_fit(np.asarray(r) ** 2, log_dist)
    return ScalingFit(-fit.slope, fit.intercept, fit.r2, np.asarray(r), np.asarray(log_dist))
