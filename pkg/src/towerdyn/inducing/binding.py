"""Binding periods, the critical neighbourhood and its level sets.

A point ``x`` within ``delta`` of its nearest critical point ``c`` is *bound*
to ``c`` for ``p(x)`` steps: the first ``k >= 1`` at which
``|f^k(x) - f^k(c)|`` exceeds ``gamma_k |f^k(c) - C|``.  Both orbits are
followed jointly by iterating the offset ``f^k(x) - f^k(c)`` with the
cancellation-free difference kernel, so points within ``1e-12`` of ``c`` keep
their full relative precision.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from numba import njit
from scipy.optimize import linprog
from scipy.stats import qmc

from ..combinatorics import delta_selection_sum
from ..critical import CriticalOrbitTable, critical_orbit
from ..errors import NonHyperbolicSample, NoValidDelta
from ..maps import MapSpec, _df, _dfo, _diff, _f

log = logging.getLogger(__name__)

DELTA0 = 0.05
MAX_HALVINGS = 40
KAPPA_MIN = 1e-3
P_MAX = 10_000
LEVEL_FLOOR = 1e-13
ENTRY_CAP = 100_000


@dataclass(frozen=True)
class BindingConfig:
    """Everything the inducing construction needs about ``delta``.

    ``zorb[i, k]`` is ``f^k(c_i)`` in float, ``zcorr[i, k] = f(zorb[i, k]) -
    zorb[i, k + 1]`` (zero unless the orbit was followed in high precision)
    and ``thr[i, k] = gamma_k |f^k(c_i) - C|``.
    """

    delta: float
    p_delta: int
    gamma: np.ndarray = field(repr=False, compare=False)
    P_max: int
    eps: float
    dprime: float
    kappa: float
    Gamma: float
    tau: float
    zeta: float = 1.0
    p_delta_each: tuple[int, ...] = ()
    selection_sums: tuple[float, ...] = ()
    zorb: np.ndarray = field(default=None, repr=False, compare=False)
    zcorr: np.ndarray = field(default=None, repr=False, compare=False)
    thr: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not 0.0 < self.eps < self.dprime:
            raise ValueError("need 0 < eps < delta'")
        if not 0.0 < self.kappa:
            raise ValueError("kappa must be positive")

    def with_eps(self, eps: float) -> "BindingConfig":
        return replace(self, eps=float(eps))

    @property
    def kernel_len(self) -> int:
        return int(self.zorb.shape[1] - 1)


class BindingPeriod(NamedTuple):
    p: int
    cap_hit: bool


# ----------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _bind_len(code, kp, zorb, zcorr, thr, ci, e0, pmax):
    e = e0
    for k in range(pmax):
        e = _diff(code, kp, zorb[ci, k], e) + zcorr[ci, k]
        if abs(e) > thr[ci, k + 1]:
            return k + 1
    return pmax


@njit(cache=True)
def _bind_log_deriv(code, kp, zorb, zcorr, ci, e0, p):
    """``log|(f^p)'(c + e0)|`` along the offset orbit."""
    e = e0
    acc = 0.0
    for k in range(p):
        d = abs(_dfo(code, kp, zorb[ci, k], e))
        acc += math.log(d) if d > 0.0 else -np.inf
        e = _diff(code, kp, zorb[ci, k], e) + zcorr[ci, k]
    return acc


@njit(cache=True)
def _first_entry(code, kp, crit, delta, xs, cap):
    n_out = np.empty(xs.shape[0], dtype=np.int64)
    lg_out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        x = xs[i]
        acc = 0.0
        n = -1
        for k in range(cap + 1):
            inside = False
            for j in range(crit.shape[0]):
                if abs(x - crit[j]) < delta:
                    inside = True
            if inside:
                n = k
                break
            acc += math.log(abs(_df(code, kp, x)))
            x = _f(code, kp, x)
            if x < 0.0:
                x = 0.0
            elif x > 1.0:
                x = 1.0
        n_out[i] = n
        lg_out[i] = acc
    return n_out, lg_out


@njit(cache=True)
def _outside_segments(code, kp, crit, delta, xs, kmax):
    """(k, log|(f^k)'(x)|) for every prefix of each orbit segment outside Delta."""
    ks = np.empty(xs.shape[0] * kmax, dtype=np.int64)
    lg = np.empty(xs.shape[0] * kmax)
    m = 0
    for i in range(xs.shape[0]):
        x = xs[i]
        acc = 0.0
        for k in range(1, kmax + 1):
            inside = False
            for j in range(crit.shape[0]):
                if abs(x - crit[j]) < delta:
                    inside = True
            if inside:
                break
            acc += math.log(abs(_df(code, kp, x)))
            ks[m] = k
            lg[m] = acc
            m += 1
            x = _f(code, kp, x)
            if x < 0.0:
                x = 0.0
            elif x > 1.0:
                x = 1.0
    return ks[:m], lg[:m]


# ----------------------------------------------------------------------------
# critical orbit arrays


def _orbit_arrays(m: MapSpec, tables: list[CriticalOrbitTable], P_max: int):
    n = min([P_max] + [t.N for t in tables])
    nc = len(tables)
    zorb = np.empty((nc, n + 1))
    zcorr = np.empty((nc, n))
    thr = np.zeros((nc, n + 1))
    for i, t in enumerate(tables):
        pts, _ = critical_orbit(m, t.c, n)
        zorb[i] = pts
        zcorr[i] = m.f(pts[:-1]) - pts[1:]
        thr[i, 1:] = t.gamma[:n] * t.dist_to_C[:n]
    return zorb, zcorr, thr


def _nearest(m: MapSpec, x: float) -> int:
    c = np.asarray(m.critical_points)
    return int(np.argmin(np.abs(c - x)))


def _binding_p(m: MapSpec, cfg_arrays, delta: float, x: float, P_max: int) -> BindingPeriod:
    zorb, zcorr, thr = cfg_arrays
    i = _nearest(m, x)
    e = x - m.critical_points[i]
    if not abs(e) < delta and not math.isclose(abs(e), delta, rel_tol=1e-15):
        return BindingPeriod(0, False)
    pmax = min(P_max, zorb.shape[1] - 1)
    p = int(_bind_len(m.code, m.kp, zorb, zcorr, thr, i, float(e), pmax))
    return BindingPeriod(p, p >= pmax)


def binding_period(m: MapSpec, x: float, cfg: BindingConfig) -> BindingPeriod:
    """Binding period of ``x`` (``0`` outside the critical neighbourhood).

    Points at distance exactly ``delta`` count as inside, matching
    ``p_delta = p(c +- delta)``.  ``cap_hit`` is set when the orbits stay
    bound for the whole table (``x`` too close to ``c`` for the cap).
    """
    return _binding_p(m, (cfg.zorb, cfg.zcorr, cfg.thr), cfg.delta, float(x), cfg.P_max)


# ----------------------------------------------------------------------------
# constants of the construction


def sobol_points(n: int, seed: int) -> np.ndarray:
    """First ``n`` points of a scrambled one-dimensional Sobol sequence."""
    bits = max(0, math.ceil(math.log2(n)))
    return qmc.Sobol(d=1, scramble=True, seed=seed).random_base2(bits)[:n, 0]


@dataclass(frozen=True)
class KappaEstimate:
    kappa: float
    argmin: float
    n_at_min: int
    skipped: int


def estimate_bbc_kappa(m: MapSpec, delta: float, sample_size: int = 10_000,
                       seed: int = 0, cap: int = ENTRY_CAP) -> KappaEstimate:
    """Smallest ``|(f^n)'(x)|`` at the first entry time ``n`` of ``x`` into Delta.

    ``x`` runs over a scrambled Sobol grid; points already in Delta give the
    empty product 1 and points that never enter within ``cap`` steps are
    skipped and counted.
    """
    if sample_size < 1:
        raise ValueError("sample_size must be positive")
    xs = sobol_points(sample_size, seed)
    crit = np.asarray(m.critical_points)
    n, lg = _first_entry(m.code, m.kp, crit, float(delta), xs, int(cap))
    ok = n >= 0
    if not ok.any():
        return KappaEstimate(math.nan, math.nan, -1, int(sample_size))
    idx = np.flatnonzero(ok)[np.argmin(lg[ok])]
    return KappaEstimate(float(math.exp(lg[idx])),
                         float(xs[idx]), int(n[idx]), int((~ok).sum()))


def estimate_tau(m: MapSpec, samples: int = 100_000, seed: int = 0) -> float:
    """Largest sampled ``|f'(x) - f'(y)| / |f'(x)| * |x - C| / |x - y|``.

    Pairs satisfy ``|x - y| <= max(|x - C|, |y - C|) / 2``.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, samples)
    dx = m.dist_to_critical(x)
    keep = dx > 1e-9
    x, dx = x[keep], dx[keep]
    y = np.clip(x + rng.uniform(-0.5, 0.5, x.size) * dx, 0.0, 1.0)
    gap = np.abs(x - y)
    keep = gap > 0
    x, y, dx, gap = x[keep], y[keep], dx[keep], gap[keep]
    dfx = m.df(x)
    ratio = np.abs(dfx - m.df(y)) / np.abs(dfx) * dx / gap
    return float(ratio.max())


def contraction_constant(m: MapSpec, delta: float, n_max: int = 1000) -> float:
    """``min |f^n(W)|`` over the components ``W`` of ``Delta \\ C`` and ``n <= n_max``."""
    best = math.inf
    for c in m.critical_points:
        for lo, hi in ((max(c - delta, 0.0), c), (c, min(c + delta, 1.0))):
            for _ in range(n_max + 1):
                best = min(best, hi - lo)
                if hi - lo >= 1.0 - 1e-15:
                    break
                lo, hi = m.interval_image(lo, hi)
    return float(best)


def fix_delta(m: MapSpec, table, zeta: float = 1.0, delta0: float = DELTA0,
              P_max: int = P_MAX, kappa_min: float = KAPPA_MIN,
              kappa_samples: int = 10_000) -> BindingConfig:
    """Halve ``delta`` from ``delta0`` until the selection sum and BBC hold.

    ``table`` is one :class:`CriticalOrbitTable` per critical point (a single
    table is accepted for unimodal maps).

    Raises:
        NoValidDelta: no ``delta0 2^-j`` with ``j <= 40`` works.
    """
    tables = [table] if isinstance(table, CriticalOrbitTable) else list(table)
    if len(tables) != len(m.critical_points):
        raise ValueError("need one critical-orbit table per critical point")
    if min(t.N for t in tables) < 1000:
        raise ValueError("critical-orbit tables must have N >= 1000")
    arrays = _orbit_arrays(m, tables, P_max)
    tau = estimate_tau(m)
    reasons = []
    for j in range(MAX_HALVINGS + 1):
        delta = delta0 * 2.0 ** (-j)
        p_each, sums = [], []
        for t in tables:
            pd = min(_binding_p(m, arrays, delta, t.c + s * delta, P_max).p for s in (-1, 1))
            p_each.append(pd)
            sums.append(delta_selection_sum(t.logD, t.gamma, m.critical_order, zeta, pd, t.N))
        if max(sums) > 1.0:
            reasons.append(f"delta={delta:.3g}: selection sum {max(sums):.3g} > 1")
            continue
        kap = estimate_bbc_kappa(m, delta, kappa_samples)
        if not kap.kappa >= kappa_min:
            reasons.append(f"delta={delta:.3g}: kappa {kap.kappa:.3g} < {kappa_min}")
            continue
        dprime = contraction_constant(m, delta)
        gamma = tables[0].gamma
        Gamma = math.exp(tau * float(np.sum(gamma / (1.0 - gamma))))
        log.info("delta=%g p_delta=%s kappa=%g delta'=%g", delta, p_each, kap.kappa, dprime)
        return BindingConfig(delta=delta, p_delta=min(p_each), gamma=gamma, P_max=P_max,
                             eps=dprime / 100.0, dprime=dprime, kappa=min(kap.kappa, 1.0),
                             Gamma=Gamma, tau=tau, zeta=zeta, p_delta_each=tuple(p_each),
                             selection_sums=tuple(sums), zorb=arrays[0], zcorr=arrays[1],
                             thr=arrays[2])
    raise NoValidDelta("no admissible delta after 40 halvings; last: " + reasons[-1])


# ----------------------------------------------------------------------------
# level sets


@dataclass(frozen=True)
class LevelSets:
    """Level sets ``I_p`` of the binding period near each critical point.

    ``h[i, side, p]`` (side 0 left, 1 right) is the largest distance from
    ``c_i`` at which the binding period is still ``>= p``; the right-hand
    component of ``I_p`` is ``(c + h[p+1], c + h[p]]``.  Levels ``p >= depth``
    lie below ``LEVEL_FLOOR`` and are not resolved.
    """

    h: np.ndarray
    depth: int
    p_edge: np.ndarray
    Fprime: np.ndarray
    C0: float
    breaches: tuple = ()

    def intervals(self, i: int, p: int, crit: float) -> list[tuple[float, float]]:
        """Components of ``I_p`` around ``crit`` (empty list when ``I_p`` is empty)."""
        out = []
        h = self.h[i]
        if p < 1 or p >= self.depth:
            return out
        if h[0, p] > h[0, p + 1]:
            out.append((crit - h[0, p], crit - h[0, p + 1]))
        if h[1, p] > h[1, p + 1]:
            out.append((crit + h[1, p + 1], crit + h[1, p]))
        return out


def _side_boundaries(m: MapSpec, cfg: BindingConfig, i: int, sign: float,
                     floor: float) -> np.ndarray:
    c = m.critical_points[i]
    pmax = min(cfg.P_max, cfg.kernel_len)

    def P(hh):
        return int(_bind_len(m.code, m.kp, cfg.zorb, cfg.zcorr, cfg.thr, i, sign * hh, pmax))

    h = [cfg.delta]  # level 0: the edge of Delta
    p = 1
    while True:
        prev = h[-1]
        if P(prev) >= p:
            h.append(prev)
        else:
            lo = prev
            while P(lo) < p and lo > 1e-300:
                lo *= 0.5
            hi = min(2.0 * lo, prev)
            for _ in range(200):
                mid = math.sqrt(lo * hi)
                if not lo < mid < hi:
                    break
                if P(mid) >= p:
                    lo = mid
                else:
                    hi = mid
            h.append(lo)
        if h[-1] < floor or p >= pmax - 1 or not 0.0 < c + sign * h[-1] < 1.0:
            break
        p += 1
    return np.asarray(h)


def _monotone_breach(m: MapSpec, cfg: BindingConfig, i: int, sign: float, n: int = 1000):
    hs = np.logspace(math.log10(cfg.delta), math.log10(LEVEL_FLOOR * 10), n)
    pmax = min(cfg.P_max, cfg.kernel_len)
    ps = [_bind_len(m.code, m.kp, cfg.zorb, cfg.zcorr, cfg.thr, i, sign * hh, pmax) for hh in hs]
    for k in range(1, n):
        if ps[k] < ps[k - 1]:
            return float(m.critical_points[i] + sign * hs[k])
    return None


def build_level_sets(m: MapSpec, cfg: BindingConfig, b: np.ndarray | None = None,
                     floor: float = LEVEL_FLOOR) -> LevelSets:
    """Locate the level boundaries by bisection and estimate ``F'_p``.

    ``F'_p`` is the smallest ``|(f^p)'|`` over the endpoints and midpoint of
    each component of ``I_p``.  When ``b`` (the ``b_n`` sequence of the first
    critical point) is given, ``C0 = min_p F'_p b_p`` is the largest constant
    with ``F'_p >= C0 / b_p`` on the resolved levels.
    """
    nc = len(m.critical_points)
    sides = []
    breaches = []
    for i in range(nc):
        row = []
        for s, sign in enumerate((-1.0, 1.0)):
            row.append(_side_boundaries(m, cfg, i, sign, floor))
            br = _monotone_breach(m, cfg, i, sign)
            if br is not None:
                log.warning("binding period not monotone near x=%r", br)
                breaches.append(br)
        sides.append(row)
    depth = min(len(a) - 1 for row in sides for a in row)
    h = np.empty((nc, 2, depth + 1))
    for i in range(nc):
        for s in range(2):
            h[i, s] = sides[i][s][: depth + 1]
    p_edge = np.array([[int(np.flatnonzero(h[i, s] >= cfg.delta)[-1]) for s in range(2)]
                       for i in range(nc)], dtype=np.int64)
    Fp = np.full(depth, np.nan)
    for p in range(1, depth):
        vals = []
        for i in range(nc):
            for s, sign in enumerate((-1.0, 1.0)):
                a, bnd = h[i, s, p + 1], h[i, s, p]
                if bnd <= a:
                    continue
                for e in (a, 0.5 * (a + bnd), bnd):
                    vals.append(_bind_log_deriv(m.code, m.kp, cfg.zorb, cfg.zcorr, i,
                                                sign * e, p))
        if vals:
            Fp[p] = math.exp(min(vals))
    C0 = math.nan
    if b is not None:
        ok = np.isfinite(Fp[1:]) & (np.arange(1, depth) <= len(b))
        idx = np.arange(1, depth)[ok]
        if idx.size:
            C0 = float(np.min(Fp[idx] * b[idx - 1]))
    return LevelSets(h, depth, p_edge, Fp, C0, tuple(breaches))


def binding_distortion(m: MapSpec, x: float, cfg: BindingConfig, grid: int = 21) -> float:
    """Largest ``|(f^i)'(y)| / |(f^i)'(z)|`` over ``y, z`` in ``[f(x), f(c)]``, ``i < p``."""
    p = binding_period(m, x, cfg).p
    if p <= 1:
        return 1.0
    i = _nearest(m, x)
    e0 = m.diff(m.critical_points[i], x - m.critical_points[i])
    offs = np.linspace(0.0, 1.0, grid) * e0
    logs = np.zeros(grid)
    worst = 0.0
    # start at f(c): step k of the shadowing orbit uses base point z_{k+1}
    for k in range(1, p):
        z = cfg.zorb[i, k]
        for j in range(grid):
            logs[j] += math.log(abs(_dfo(m.code, m.kp, z, offs[j])))
            offs[j] = _diff(m.code, m.kp, z, offs[j]) + cfg.zcorr[i, k]
        worst = max(worst, logs.max() - logs.min())
    return float(math.exp(worst))


# ----------------------------------------------------------------------------
# expansion outside Delta


@dataclass(frozen=True)
class OutsideExpansion:
    C: float
    lam: float
    n_points: int


def quantile_line(k: np.ndarray, y: np.ndarray, q: float) -> tuple[float, float]:
    """Linear quantile regression ``y ~ a + b k`` solved as a linear program."""
    n = k.size
    # variables: a, b, u_1..u_n, v_1..v_n with y - a - b k = u - v, u, v >= 0
    c = np.concatenate([[0.0, 0.0], np.full(n, q), np.full(n, 1.0 - q)])
    A = np.zeros((n, 2 + 2 * n))
    A[:, 0] = 1.0
    A[:, 1] = k
    A[np.arange(n), 2 + np.arange(n)] = 1.0
    A[np.arange(n), 2 + n + np.arange(n)] = -1.0
    bounds = [(None, None), (None, None)] + [(0, None)] * (2 * n)
    res = linprog(c, A_eq=A, b_eq=y, bounds=bounds, method="highs")
    if not res.success:
        raise RuntimeError(f"quantile regression failed: {res.message}")
    return float(res.x[0]), float(res.x[1])


def estimate_outside_expansion(m: MapSpec, cfg_or_delta, samples: int = 2000,
                               kmax: int = 60, q: float = 0.01,
                               max_points: int = 4000) -> OutsideExpansion:
    """Fit ``log|(f^k)'(x)| >= log C + lambda k`` on orbit pieces outside Delta.

    Raises:
        NonHyperbolicSample: the fitted ``lambda`` is not positive.
    """
    delta = cfg_or_delta.delta if isinstance(cfg_or_delta, BindingConfig) else float(cfg_or_delta)
    xs = sobol_points(samples, 1)
    ks, lg = _outside_segments(m.code, m.kp, np.asarray(m.critical_points), delta, xs, kmax)
    if ks.size < 10:
        raise NonHyperbolicSample("too few orbit pieces outside Delta to fit expansion")
    if ks.size > max_points:
        idx = np.linspace(0, ks.size - 1, max_points).astype(np.int64)
        ks, lg = ks[idx], lg[idx]
    a, lam = quantile_line(ks.astype(np.float64), lg, q)
    if not lam > 0:
        raise NonHyperbolicSample(f"fitted outside expansion rate {lam:.3g} <= 0")
    return OutsideExpansion(float(math.exp(a)), float(lam), int(ks.size))
