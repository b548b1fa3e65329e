"""Large-scale partitions of an interval, their itineraries and stopping times.

An interval ``J`` is refined by following it forward: at every visit to Delta
a short image is cut along the level sets ``I_p`` (the piece outside Delta
joins its neighbouring level piece), while an image of length at least
``delta'`` has its middle part stopped at large scale and its two
``eps``-strips partitioned into deep (``p > 0``) and shallow (``p = 0``)
returns.  Deep returns are followed through their binding period.

The refinement is sampled: stratified points of ``J`` are followed through
the pieces containing them (see :mod:`towerdyn.inducing.kernel`), each
carrying the length of its stratum as mass.  Points with
equal piece hashes lie in the same piece; the geometry of a piece is recovered
by pulling its final image back along the lap word of one representative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..critical import DecayClass, classify_growth
from ..errors import DegenerateSequence
from ..maps import MapSpec, pullback
from . import kernel as K
from .binding import BindingConfig, LevelSets, OutsideExpansion

FLOOR = 1e-14
NET_SIZE = 16
K0 = 16.0
RHO = 0.125
EPS_HALVINGS = 12
TAIL_MIN_COUNT = 10
TAIL_MIN_POINTS = 10
LOST_FRACTION = 0.01


@dataclass(frozen=True)
class InducingContext:
    """Map, binding configuration and level sets bundled for the kernel."""

    m: MapSpec
    cfg: BindingConfig
    levels: LevelSets
    floor: float = FLOOR

    @property
    def crit(self) -> np.ndarray:
        return np.asarray(self.m.critical_points, dtype=np.float64)

    def fpar(self, omega0: tuple[float, float] = (0.0, 1.0)) -> np.ndarray:
        return np.array([self.cfg.delta, self.cfg.dprime, self.cfg.eps, self.floor,
                         omega0[0], omega0[1] - omega0[0]])

    def ipar(self, n_max: int, full: bool = False, t0: int = 0,
             stop_at_strip: bool = False) -> np.ndarray:
        return np.array([self.levels.depth, n_max, int(full), t0, int(stop_at_strip)],
                        dtype=np.int64)

    def with_eps(self, eps: float) -> "InducingContext":
        return replace(self, cfg=self.cfg.with_eps(eps))

    def delta2(self, omega0_len: float | None = None) -> float:
        """``delta'' = min(delta'/3, |Omega_0|)`` (``delta'/3`` before Omega_0 exists)."""
        d = self.cfg.dprime / 3.0
        return d if omega0_len is None else min(d, float(omega0_len))


@dataclass(frozen=True)
class PreimageTable:
    """Critical preimages per depth with their pulled-back copies of Omega_0.

    Depth ``t`` occupies ``[off[t], off[t+1])``; within a depth the points are
    sorted.  ``wlo, whi`` bound the interval ``omega_x`` with
    ``f^t(omega_x) = Omega_0``.
    """

    x: np.ndarray
    off: np.ndarray
    wlo: np.ndarray
    whi: np.ndarray
    words: tuple = field(default=(), repr=False)

    @property
    def t0(self) -> int:
        return int(self.off.size - 2)

    @classmethod
    def empty(cls) -> "PreimageTable":
        z = np.zeros(1)
        return cls(z, np.zeros(2, dtype=np.int64), z, z)


@dataclass(frozen=True)
class SampleRun:
    """Raw kernel output for sample points of ``J``.

    ``thetas`` are relative positions in ``J`` and ``weights`` the absolute
    lengths of their strata (they sum to ``|J|``).  Itineraries are not kept
    here; :func:`trace_sample` records them for one point at a time.
    """

    J: tuple[float, float]
    thetas: np.ndarray
    weights: np.ndarray
    out_i: np.ndarray = field(repr=False)
    out_f: np.ndarray = field(repr=False)
    n_max: int

    @property
    def size(self) -> int:
        return int(self.thetas.size)

    @property
    def length(self) -> float:
        return self.J[1] - self.J[0]

    @property
    def status(self) -> np.ndarray:
        return self.out_i[:, K.I_STATUS]

    @property
    def time(self) -> np.ndarray:
        return self.out_i[:, K.I_TIME]

    @property
    def key(self) -> np.ndarray:
        return self.out_i[:, K.I_HASH]

    @property
    def resolved(self) -> np.ndarray:
        return self.status == K.OK

    def stop_times(self) -> np.ndarray:
        """Stopping time per sample; unresolved samples get ``n_max + 1``."""
        return np.where(self.resolved, self.time, self.n_max + 1)

    def tail(self, n_max: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """``(count, mass)`` of samples with stopping time ``> n`` for ``n = 0..n_max``.

        Unresolved samples count for every ``n``.
        """
        n_max = self.n_max if n_max is None else n_max
        n = np.arange(n_max + 1)
        return _suffix_tail(self.stop_times(), self.weights, np.ones(self.size, np.int64), n)

    @staticmethod
    def concat(runs: list["SampleRun"]) -> "SampleRun":
        r0 = runs[0]
        return SampleRun(r0.J, np.concatenate([r.thetas for r in runs]),
                         np.concatenate([r.weights for r in runs]),
                         np.concatenate([r.out_i for r in runs]),
                         np.concatenate([r.out_f for r in runs]), r0.n_max)

    def take(self, idx: np.ndarray) -> "SampleRun":
        return SampleRun(self.J, self.thetas[idx], self.weights[idx], self.out_i[idx],
                         self.out_f[idx], self.n_max)


def _suffix_tail(times: np.ndarray, weights: np.ndarray, counts: np.ndarray,
                 n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Total count and weight of entries with ``time > n``.

    Sums run from the largest times down so tiny tails keep full relative
    precision.
    """
    order = np.argsort(times, kind="stable")
    ts = times[order]
    sw = np.concatenate([np.cumsum(weights[order][::-1])[::-1], [0.0]])
    sc = np.concatenate([np.cumsum(counts[order][::-1])[::-1], [0]])
    k = np.searchsorted(ts, n, side="right")
    return sc[k].astype(np.int64), sw[k]


def stratified_thetas(M: int) -> np.ndarray:
    return (np.arange(M, dtype=np.float64) + 0.5) / M


def run_samples(ctx: InducingContext, J: tuple[float, float], thetas: np.ndarray, n_max: int,
                full: bool = False, pre: PreimageTable | None = None,
                omega0: tuple[float, float] = (0.0, 1.0),
                weights: np.ndarray | None = None, stop_at_strip: bool = False) -> SampleRun:
    """Run the kernel for every ``theta`` (relative positions in ``J``).

    Without ``weights`` every sample carries ``|J| / len(thetas)``.
    """
    pre = PreimageTable.empty() if pre is None else pre
    thetas = np.ascontiguousarray(thetas, dtype=np.float64)
    M = thetas.size
    if weights is None:
        weights = np.full(M, (J[1] - J[0]) / M)
    out_i = np.zeros((M, K.N_INT), dtype=np.int64)
    out_f = np.zeros((M, K.N_FLOAT))
    itin = np.zeros((M, 0, 3), dtype=np.int64)
    K.track_many(ctx.m.code, ctx.m.kp, ctx.crit, ctx.levels.h, ctx.levels.p_edge,
                 ctx.cfg.zorb, ctx.cfg.zcorr, ctx.fpar(omega0),
                 ctx.ipar(n_max, full, pre.t0 if full else 0, stop_at_strip),
                 pre.x, pre.off, pre.wlo, pre.whi, float(J[0]), float(J[1] - J[0]),
                 thetas, out_i, out_f, itin)
    return SampleRun((float(J[0]), float(J[1])), thetas, np.asarray(weights, dtype=np.float64),
                     out_i, out_f, int(n_max))


def refined_run(ctx: InducingContext, J: tuple[float, float], n_max: int, samples: int,
                levels: int = 0, branch: int = 8, live_fraction: float = 1.0 / 32,
                **kw) -> SampleRun:
    """Stratified samples with adaptive refinement of the longest-lived strata.

    Level 0 puts one point in each of ``samples`` equal strata.  At each
    further level the strata whose points have the largest stopping times
    (the top ``live_fraction`` of the previous level; ties at the cut are
    included unless that would double the fraction) and
    their touching neighbours are split into ``branch`` equal children, each
    with its own point; the parent's point is dropped.  Weights are the
    stratum lengths, so the total mass stays ``|J|`` exactly.
    """
    L = J[1] - J[0]
    centre = stratified_thetas(samples)
    half = np.full(samples, 0.5 / samples)
    cur = run_samples(ctx, J, centre, n_max, weights=np.full(samples, L / samples), **kw)
    kept = []
    for _ in range(levels):
        t = cur.stop_times()
        cut = np.quantile(t, 1.0 - live_fraction, method="lower")
        flag = t >= cut
        if np.count_nonzero(flag) > 2.0 * live_fraction * t.size:
            flag = t > cut
        if not flag.any():
            break
        order = np.argsort(cur.thetas)
        f_sorted = flag[order]
        th = cur.thetas[order]
        hw = half[order]
        touch = np.isclose(th[1:] - th[:-1], hw[1:] + hw[:-1], rtol=1e-9, atol=0.0)
        grow = f_sorted.copy()
        grow[1:] |= f_sorted[:-1] & touch
        grow[:-1] |= f_sorted[1:] & touch
        split = order[grow]
        kept.append(cur.take(order[~grow]))
        half_new = np.repeat(half[split] / branch, branch)
        offs = (2.0 * np.arange(branch) + 1.0 - branch) / branch
        centre = (cur.thetas[split][:, None] + half[split][:, None] * offs[None, :]).ravel()
        half = half_new
        cur = run_samples(ctx, J, centre, n_max, weights=2.0 * half * L, **kw)
    kept.append(cur)
    return SampleRun.concat(kept)


def trace_sample(ctx: InducingContext, J: tuple[float, float], theta: float, n_max: int,
                 full: bool = False, pre: PreimageTable | None = None,
                 omega0: tuple[float, float] = (0.0, 1.0)):
    """Single run recording the lap word; returns ``(out_i, out_f, itin, word)``."""
    pre = PreimageTable.empty() if pre is None else pre
    out_i = np.zeros(K.N_INT, dtype=np.int64)
    out_f = np.zeros(K.N_FLOAT)
    itin = np.zeros((K.MAX_ITIN, 3), dtype=np.int64)
    trace = np.zeros(n_max + 1, dtype=np.int8)
    K.track(ctx.m.code, ctx.m.kp, ctx.crit, ctx.levels.h, ctx.levels.p_edge,
            ctx.cfg.zorb, ctx.cfg.zcorr, ctx.fpar(omega0),
            ctx.ipar(n_max, full, pre.t0 if full else 0),
            pre.x, pre.off, pre.wlo, pre.whi, float(J[0]), float(J[1] - J[0]),
            float(theta), out_i, out_f, itin, trace)
    word = trace[: min(int(out_i[K.I_TIME]), n_max + 1)].astype(np.int64)
    return out_i, out_f, itin, word


@dataclass(frozen=True)
class SplitTail:
    """Stopping times estimated by restarting every ``eps``-strip as a fresh interval.

    ``times``/``weights`` are resolved stopping times and their masses.
    ``open_mass`` is still open at ``n_max`` or was lost on the way (below
    the mass floor, or a kernel limit).  Lost mass is only known to stop
    after its loss time, so ``horizon`` is the last time at which the lost
    mass up to then is at most ``LOST_FRACTION`` of the tail.
    """

    length: float
    times: np.ndarray
    weights: np.ndarray
    counts: np.ndarray
    open_mass: float
    open_count: int
    horizon: int
    generations: int
    n_max: int

    def tail(self) -> tuple[np.ndarray, np.ndarray]:
        n = np.arange(self.n_max + 1)
        count, mass = _suffix_tail(self.times, self.weights, self.counts, n)
        return count + self.open_count, mass + self.open_mass


def _boundary_run(ctx: InducingContext, lo: np.ndarray, w: np.ndarray, n_left: np.ndarray,
                  mass: np.ndarray, base: int, levels: int, branch: int = 8):
    """Stratified strip-stop runs on many intervals with refinement at piece boundaries.

    Interval ``i`` gets ``base`` strata; strata at either end of the interval
    and strata whose point differs in status or piece hash from a touching
    neighbour are split into ``branch`` children, ``levels`` times.  Returns ``(member, out_i,
    out_f, weight)`` with weights summing to ``mass`` per interval.
    """
    pre = PreimageTable.empty()
    crit = ctx.crit
    fpar = ctx.fpar()
    ipar = ctx.ipar(1, stop_at_strip=True)
    mem = np.repeat(np.arange(lo.size), base)
    th = np.tile(stratified_thetas(base), lo.size)
    half = np.full(th.size, 0.5 / base)
    parts = []
    for level in range(levels + 1):
        M = th.size
        out_i = np.zeros((M, K.N_INT), dtype=np.int64)
        out_f = np.zeros((M, K.N_FLOAT))
        K.track_batch(ctx.m.code, ctx.m.kp, crit, ctx.levels.h, ctx.levels.p_edge,
                      ctx.cfg.zorb, ctx.cfg.zcorr, fpar, ipar, pre.x, pre.off, pre.wlo,
                      pre.whi, lo[mem], w[mem], th, n_left[mem], out_i, out_f)
        wt = 2.0 * half * mass[mem]
        if level == levels:
            parts.append((mem, out_i, out_f, wt))
            break
        order = np.lexsort((th, mem))
        st = out_i[order, K.I_STATUS]
        key = out_i[order, K.I_HASH]
        ms = mem[order]
        ts = th[order]
        hs = half[order]
        touch = (ms[1:] == ms[:-1]) & np.isclose(ts[1:] - ts[:-1], hs[1:] + hs[:-1],
                                                 rtol=1e-9, atol=0.0)
        edge = touch & ((st[1:] != st[:-1]) | (key[1:] != key[:-1]))
        flag = np.zeros(M, dtype=bool)
        flag[:-1] |= edge
        flag[1:] |= edge
        # the ends of each interval are piece boundaries too
        first = np.ones(M, dtype=bool)
        first[1:] = ms[1:] != ms[:-1]
        last = np.ones(M, dtype=bool)
        last[:-1] = ms[1:] != ms[:-1]
        flag |= (first & (ts - hs <= 1e-15)) | (last & (ts + hs >= 1.0 - 1e-15))
        keep = order[~flag]
        parts.append((mem[keep], out_i[keep], out_f[keep], wt[keep]))
        if not flag.any():
            break
        split = order[flag]
        offs = (2.0 * np.arange(branch) + 1.0 - branch) / branch
        th = (th[split][:, None] + half[split][:, None] * offs[None, :]).ravel()
        half = np.repeat(half[split] / branch, branch)
        mem = np.repeat(mem[split], branch)
    return tuple(np.concatenate([p[k] for p in parts]) for k in range(4))


def split_tail(ctx: InducingContext, J: tuple[float, float], n_max: int, samples: int = 64,
               levels: int = 6, population: int = 64, max_generations: int = 400,
               mass_floor: float = 1e-280) -> SplitTail:
    """Stopping-time distribution of ``J`` through generations of strip restarts.

    A point that falls into an ``eps``-strip is continued by a fresh run on
    that strip; its future depends only on the strip and its position there.
    Each generation runs ``samples`` stratified points per strip, refined at
    piece boundaries (where the strips of the next generation sit), with
    positions uniform inside each strip: the true density there is uniform
    up to the bounded distortion of the branch.  When more than
    ``population`` strips are reached they are thinned by systematic
    resampling proportional to mass, which keeps the total mass.
    """
    L = J[1] - J[0]
    times, weights, counts = [], [], []
    lost_t, lost_w = [], []
    lo = np.array([J[0]])
    w = np.array([L])
    t = np.array([0], dtype=np.int64)
    wt = np.array([L])
    gen = 0
    while lo.size and gen < max_generations:
        tiny = wt < mass_floor * L
        if tiny.any():
            lost_t.append(t[tiny])
            lost_w.append(wt[tiny])
            lo, w, t, wt = lo[~tiny], w[~tiny], t[~tiny], wt[~tiny]
            if not lo.size:
                break
        if lo.size > population:
            # systematic resampling with a deterministic offset
            c = np.cumsum(wt)
            u = (np.arange(population) + 0.5) / population * c[-1]
            pick = np.minimum(np.searchsorted(c, u, side="right"), lo.size - 1)
            total = c[-1]
            lo, w, t = lo[pick], w[pick], t[pick]
            wt = np.full(population, total / population)
        mem, out_i, out_f, wts = _boundary_run(ctx, lo, w, n_max - t, wt, samples, levels)
        st = out_i[:, K.I_STATUS]
        tt = t[mem] + out_i[:, K.I_TIME]
        ok = st == K.OK
        times.append(tt[ok])
        weights.append(wts[ok])
        counts.append(np.ones(int(ok.sum()), dtype=np.int64))
        strip = st == K.STRIP
        bad = ~(ok | strip)
        lost_t.append(tt[bad])
        lost_w.append(wts[bad])
        lo = out_f[strip, K.F_IMG_LO]
        w = out_f[strip, K.F_IMG_W]
        t = tt[strip]
        wt = wts[strip]
        gen += 1
    lost_t.append(t)
    lost_w.append(wt)
    cat = (lambda xs, d: np.concatenate(xs) if xs else np.zeros(0, dtype=d))
    times, weights, counts = cat(times, np.int64), cat(weights, np.float64), cat(counts, np.int64)
    lt, lw = cat(lost_t, np.int64), cat(lost_w, np.float64)
    horizon = _lost_horizon(times, weights, counts, lt, lw, n_max)
    return SplitTail(L, times, weights, counts, float(lw.sum()), int(lt.size), horizon, gen,
                     int(n_max))


def _lost_horizon(times, weights, counts, lost_t, lost_w, n_max: int) -> int:
    """Last ``n`` with lost mass up to ``n`` at most ``LOST_FRACTION`` of the tail at ``n``."""
    n = np.arange(n_max + 1)
    _, tail = _suffix_tail(np.concatenate([times, lost_t]), np.concatenate([weights, lost_w]),
                           np.ones(times.size + lost_t.size, dtype=np.int64), n)
    order = np.argsort(lost_t, kind="stable")
    early = np.concatenate([[0.0], np.cumsum(lost_w[order])])[
        np.searchsorted(lost_t[order], n, side="right")]
    bad = np.flatnonzero(early > LOST_FRACTION * tail)
    return int(n_max if bad.size == 0 else max(bad[0] - 1, 0))


# ----------------------------------------------------------------------------
# itineraries


@dataclass(frozen=True)
class Itinerary:
    """Returns ``(nu, p, label)`` of a piece before its large-scale time.

    ``entries`` holds at most the first 64 returns; the counts ``n_deep``,
    ``n_shallow`` and ``n_ss`` always cover all of them.
    """

    entries: tuple[tuple[int, int, str], ...]
    terminal: str
    p_hat: int | None
    n_deep: int
    n_shallow: int
    n_ss: int
    sum_p: int
    truncated: bool = False

    @property
    def S_d(self) -> int:
        return self.n_deep

    @property
    def S_s(self) -> int:
        return self.n_shallow

    @property
    def S_ss(self) -> int:
        return self.n_ss

    @classmethod
    def from_kernel(cls, out_i: np.ndarray, itin: np.ndarray) -> "Itinerary":
        nret = int(out_i[K.I_NRET])
        rows = itin[: min(nret, itin.shape[0])]
        entries = tuple((int(nu), int(p), "deep" if deep else "shallow") for nu, p, deep in rows)
        resolved = int(out_i[K.I_STATUS]) == K.OK
        return cls(entries, "large-scale" if resolved else "still-open",
                   int(out_i[K.I_TIME]) if resolved else None,
                   int(out_i[K.I_DEEP]), int(out_i[K.I_SHALLOW]), int(out_i[K.I_SS]),
                   int(out_i[K.I_SUMP]), nret > itin.shape[0])

    def violations(self) -> list[str]:
        out = []
        for (nu0, p0, _), (nu1, _, _) in zip(self.entries, self.entries[1:]):
            if not nu1 > nu0:
                out.append(f"return times not increasing at nu={nu0}")
            if nu1 < nu0 + p0:
                out.append(f"return at {nu1} inside the binding period started at {nu0}")
        for nu, p, label in self.entries:
            if (label == "shallow") != (p == 0):
                out.append(f"label {label} with p={p} at nu={nu}")
        if self.n_shallow > self.n_ss + self.n_deep + 1:
            out.append("more isolated shallow returns than deep returns plus one")
        if not self.truncated:
            deep = sum(1 for e in self.entries if e[2] == "deep")
            if deep != self.n_deep or len(self.entries) - deep != self.n_shallow:
                out.append("entry counts disagree with the recorded totals")
        return out

    def format(self) -> str:
        return ";".join(f"{nu}:{p}:{label}" for nu, p, label in self.entries)


# ----------------------------------------------------------------------------
# partitions


@dataclass(frozen=True)
class LargeScalePiece:
    """One element of the large-scale partition.

    ``image`` is the middle part of ``f^p_hat(omega)`` that reached large
    scale; ``ld_range`` spans ``log|(f^p_hat)'|`` over the samples in the
    piece.
    """

    lo: float
    hi: float
    p_hat: int
    itinerary: Itinerary
    image: tuple[float, float]
    mass: float
    n_samples: int
    ld_range: tuple[float, float]
    key: int

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def image_length(self) -> float:
        return self.image[1] - self.image[0]


@dataclass(frozen=True)
class LargeScalePartition:
    J: tuple[float, float]
    pieces: tuple[LargeScalePiece, ...]
    unresolved_mass: float
    status_mass: dict
    n_max: int
    dprime: float
    eps: float
    run: SampleRun = field(repr=False)
    split: SplitTail | None = field(default=None, repr=False)

    @property
    def length(self) -> float:
        return self.J[1] - self.J[0]

    @property
    def resolved_mass(self) -> float:
        return float(sum(p.mass for p in self.pieces))

    def tail(self) -> tuple[np.ndarray, np.ndarray]:
        """``(count, m)`` with ``m[n] = |{p_hat > n}| / |J|`` for ``n = 0..n_max``.

        Uses the strip-restart estimate when present, else the plain samples.
        """
        c, mass = (self.run if self.split is None else self.split).tail()
        return c, mass / self.length

    @property
    def horizon(self) -> int:
        """Last time up to which :meth:`tail` is complete."""
        return self.n_max if self.split is None else self.split.horizon

    def violations(self) -> list[str]:
        out = []
        total = self.resolved_mass + self.unresolved_mass
        if abs(total - self.length) > 1e-9 * self.length:
            out.append(f"mass {total!r} differs from |J| = {self.length!r}")
        need = self.dprime - 2.0 * self.eps - 1e-9
        order = sorted(self.pieces, key=lambda p: p.lo)
        for p in order:
            if p.image_length < need:
                out.append(f"piece at {p.lo!r} has image {p.image_length!r} < {need!r}")
            for v in p.itinerary.violations():
                out.append(f"piece at {p.lo!r}: {v}")
        tol = 1e-12 * max(self.length, 1e-300)
        for a, b in zip(order, order[1:]):
            if b.lo < a.hi - tol:
                out.append(f"pieces at {a.lo!r} and {b.lo!r} overlap")
        return out

    def csv_rows(self) -> list[tuple]:
        return [(p.lo, p.hi, p.p_hat, p.itinerary.S_d + p.itinerary.S_s, p.itinerary.format())
                for p in sorted(self.pieces, key=lambda p: p.lo)]


def _group(keys: np.ndarray) -> list[np.ndarray]:
    """Indices grouped by key, groups ordered by first occurrence."""
    order = np.argsort(keys, kind="stable")
    sk = keys[order]
    cuts = np.flatnonzero(np.diff(sk)) + 1
    groups = np.split(order, cuts)
    groups.sort(key=lambda g: g[0])
    return groups


def _piece_geometry(m: MapSpec, word: np.ndarray, lo: float, hi: float) -> tuple[float, float]:
    a, _ = pullback(m, word, lo)
    b, _ = pullback(m, word, hi)
    return (a, b) if a <= b else (b, a)


def induce_to_large_scale(ctx: InducingContext, J: tuple[float, float], n_max: int,
                          samples: int = 4096, omega0_len: float | None = None,
                          geometry: bool = True, levels: int = 0,
                          tail_samples: int | None = 64) -> LargeScalePartition:
    """Large-scale partition of ``J`` up to time ``n_max``.

    Args:
        ctx: map, binding configuration and level sets.
        J: source interval in working coordinates.
        n_max: time horizon; pieces still open at ``n_max`` are unresolved.
        samples: number of stratified sample points.
        omega0_len: ``|Omega_0|`` when known; sets ``delta''``.
        geometry: pull the piece images back to endpoints in ``J``.
        levels: adaptive refinement levels (see :func:`refined_run`).
        tail_samples: points per strip for :func:`split_tail`; ``None``
            keeps the tail of the plain samples.

    Raises:
        ValueError: ``|J| < delta''`` or ``n_max < 1``.
    """
    J = (float(J[0]), float(J[1]))
    d2 = ctx.delta2(omega0_len)
    if J[1] - J[0] < d2 * (1.0 - 1e-12):
        raise ValueError(f"|J| = {J[1] - J[0]:.3g} is shorter than delta'' = {d2:.3g}")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    run = refined_run(ctx, J, n_max, samples, levels)
    w = run.weights
    status_mass = {K.STATUS_NAMES[s]: float(w[run.status == s].sum()) for s in K.STATUS_NAMES}
    pieces = []
    res = np.flatnonzero(run.resolved)
    for g in _group(run.key[res]):
        idx = res[g]
        rep = int(idx[0])
        oi, of = run.out_i[rep], run.out_f[rep]
        img = (float(of[K.F_IMG_LO]), float(of[K.F_IMG_LO] + of[K.F_IMG_W]))
        lo = hi = math.nan
        _, _, itin, word = trace_sample(ctx, J, float(run.thetas[rep]), n_max)
        if geometry:
            lo, hi = _piece_geometry(ctx.m, word, img[0], img[1])
        ld = run.out_f[idx, K.F_LD]
        pieces.append(LargeScalePiece(lo, hi, int(oi[K.I_TIME]),
                                      Itinerary.from_kernel(oi, itin), img,
                                      float(w[idx].sum()), int(idx.size),
                                      (float(ld.min()), float(ld.max())), int(oi[K.I_HASH])))
    unresolved = float(w[~run.resolved].sum())
    split = None if tail_samples is None else split_tail(ctx, J, n_max, tail_samples)
    return LargeScalePartition(J, tuple(pieces), unresolved, status_mass, int(n_max),
                               ctx.cfg.dprime, ctx.cfg.eps, run, split)


# ----------------------------------------------------------------------------
# tails


@dataclass(frozen=True)
class TailStats:
    """Tail ``m[n] = |{time > n}| / |J|`` for ``n = 0..n_max``.

    ``count`` are sample counts and ``mass`` absolute lengths.  ``fit`` is
    ``None`` when no rate could be inferred; ``fit_error`` then says why.
    """

    n: np.ndarray
    count: np.ndarray
    mass: np.ndarray
    m: np.ndarray
    n_samples: int
    fit: DecayClass | None
    fit_error: str = ""

    def csv_rows(self) -> list[tuple]:
        return [(int(a), int(b), float(c)) for a, b, c in zip(self.n, self.count, self.mass)]


def tail_fit_window(m: np.ndarray, count: np.ndarray, fit_max: int) -> tuple[int, int]:
    """Window ``[n_lo, n_hi]`` for the decay fit.

    ``n_lo`` is where the bulk has passed (``m <= 1/2``) or ``fit_max/10``,
    whichever comes first; ``n_hi`` is the last index up to ``fit_max`` that
    still has ``TAIL_MIN_COUNT`` samples above it.
    """
    fit_max = min(int(fit_max), m.size - 1)
    half = np.flatnonzero(m <= 0.5)
    n_lo = max(1, fit_max // 10)
    if half.size:
        n_lo = max(1, min(n_lo, int(half[0])))
    enough = np.flatnonzero(count[: fit_max + 1] >= TAIL_MIN_COUNT)
    n_hi = int(enough[-1]) if enough.size else 0
    return n_lo, n_hi


def fit_tail(m: np.ndarray, count: np.ndarray,
             fit_max: int) -> tuple[DecayClass | None, str]:
    """Classify the decay of a tail on ``n <= fit_max`` (see :func:`tail_fit_window`).

    The smallest accepted log span is ten relative standard errors of the
    last point, ``sqrt((1 - m) / count)``, so a decline that is pure sampling
    noise is never fitted.
    """
    n_lo, n_hi = tail_fit_window(m, count, fit_max)
    if n_hi <= n_lo:
        return None, f"empty fit window [{n_lo}, {n_hi}]"
    rel_se = math.sqrt(max(1.0 - float(m[n_hi]), 0.0) / max(int(count[n_hi]), 1))
    span = min(2.0, max(0.05, 10.0 * rel_se))
    n = np.arange(m.size)
    try:
        fit = classify_growth(m, "tail-counts", n=n, window=(n_lo, n_hi),
                              min_log_span=span, min_points=TAIL_MIN_POINTS)
    except DegenerateSequence as exc:
        return None, str(exc)
    return fit, ""


def make_tail(run: SampleRun, fit_max: int | None = None) -> TailStats:
    """Tail of the stopping times of one sample run, fitted on ``n <= fit_max``."""
    count, mass = run.tail()
    m = mass / run.length
    fit, err = fit_tail(m, count, run.n_max // 2 if fit_max is None else fit_max)
    return TailStats(np.arange(count.size), count, mass, m, run.size, fit, err)


def tail_of_phat(parts: list[LargeScalePartition], n_max: int | None = None) -> TailStats:
    """``m_n = sup_J |{x in J : p_hat > n}| / |J|`` over the supplied partitions."""
    if not parts:
        raise ValueError("need at least one partition")
    n_max = min(p.n_max for p in parts) if n_max is None else int(n_max)
    tails = [p.tail() for p in parts]
    cs = np.array([c[: n_max + 1] for c, _ in tails])
    ms = np.array([v[: n_max + 1] for _, v in tails])
    best = np.argmax(ms, axis=0)
    cols = np.arange(n_max + 1)
    m = ms[best, cols]
    count = cs[best, cols]
    length = np.array([parts[b].length for b in best])
    fit_max = min([n_max // 2] + [p.horizon for p in parts])
    fit, err = fit_tail(m, count, fit_max)
    return TailStats(cols, count, m * length, m, min(p.run.size for p in parts), fit, err)


def core_interval(m: MapSpec, n_iter: int = 64) -> tuple[float, float]:
    """Smallest forward-invariant hull of the critical values (the dynamical core)."""
    vals = [float(m.f(c)) for c in m.critical_points]
    lo, hi = min(vals), max(vals)
    for _ in range(n_iter):
        a, b = m.interval_image(lo, hi)
        nlo, nhi = min(lo, a), max(hi, b)
        if nlo == lo and nhi == hi:
            break
        lo, hi = nlo, nhi
    return lo, hi


def delta_net(support: tuple[float, float], length: float,
              size: int = NET_SIZE) -> list[tuple[float, float]]:
    """``size`` intervals of the given length with centres evenly spread over ``support``."""
    a, b = support
    out = []
    for i in range(size):
        c = a + (i + 0.5) / size * (b - a)
        lo = min(max(c - 0.5 * length, a), b - length)
        out.append((lo, lo + length))
    return out


# ----------------------------------------------------------------------------
# size lemma, eps calibration, distortion


@dataclass(frozen=True)
class SizeLemmaReport:
    passed: bool
    margin: float
    log_lhs: float
    log_rhs: float


def check_size_lemma(piece: LargeScalePiece, ctx: InducingContext, expansion: OutsideExpansion,
                     K0: float = K0, rho: float = RHO) -> SizeLemmaReport:
    """Check the length bound of a resolved piece against its itinerary.

    The bound is ``min(C^-#S_d e^(-lambda (m - sum p)), (K0/kappa)^#S_d
    rho^#S_ss) * prod 1/F'_p`` with ``m = p_hat``; ``margin`` is
    ``log(bound) - log(|omega| / |f^m(omega)|)``.
    """
    it = piece.itinerary
    if piece.hi > piece.lo:
        log_lhs = math.log(piece.length) - math.log(piece.image_length)
    else:
        log_lhs = -piece.ld_range[1]
    a = -it.S_d * math.log(expansion.C) - expansion.lam * (piece.p_hat - it.sum_p)
    b = it.S_d * math.log(K0 / ctx.cfg.kappa) + it.S_ss * math.log(rho)
    fp = ctx.levels.Fprime
    prod = 0.0
    for _, p, label in it.entries:
        if label == "deep":
            v = fp[p] if 0 < p < fp.size else math.nan
            prod -= math.log(v) if v > 0 else math.inf
    log_rhs = min(a, b) + prod
    margin = log_rhs - log_lhs
    return SizeLemmaReport(bool(margin >= 0), float(margin), float(log_lhs), float(log_rhs))


def size_lemma_pass_rate(parts: list[LargeScalePartition], ctx: InducingContext,
                         expansion: OutsideExpansion, max_pieces: int = 1000) -> float:
    pieces = [p for part in parts for p in part.pieces if not p.itinerary.truncated]
    if not pieces:
        return math.nan
    step = max(1, len(pieces) // max_pieces)
    reps = [check_size_lemma(p, ctx, expansion) for p in pieces[::step]]
    return sum(r.passed for r in reps) / len(reps)


def measured_rho(runs: list[SampleRun]) -> float:
    """``exp(-min gain)`` of ``log|(f^n)'|`` between consecutive shallow returns (0 if none)."""
    vals = [float(np.min(r.out_f[:, K.F_MIN_SS])) for r in runs]
    low = min(vals) if vals else math.inf
    return 0.0 if not math.isfinite(low) else math.exp(-low)


@dataclass(frozen=True)
class EpsCalibration:
    ctx: InducingContext
    rho: float
    halvings: int


def calibrate_epsilon(ctx: InducingContext, intervals: list[tuple[float, float]], n_max: int,
                      samples: int = 4096, rho_target: float = RHO,
                      levels: int = 2) -> EpsCalibration:
    """Start at ``eps = delta'/100`` and halve until the measured ``rho <= rho_target``."""
    eps = ctx.cfg.dprime / 100.0
    rho = math.inf
    for h in range(EPS_HALVINGS + 1):
        cur = ctx.with_eps(eps)
        runs = [refined_run(cur, J, n_max, samples, levels) for J in intervals]
        rho = measured_rho(runs)
        if rho <= rho_target:
            return EpsCalibration(cur, rho, h)
        eps *= 0.5
    return EpsCalibration(ctx.with_eps(eps * 2.0), rho, EPS_HALVINGS)


@dataclass(frozen=True)
class DistortionSummary:
    K: float
    median: float
    spread: float
    n_pieces: int


def piece_distortion(parts: list[LargeScalePartition]) -> DistortionSummary:
    """Max/min of ``|(f^p_hat)'|`` within pieces sampled at least twice.

    ``K`` is the largest ratio over pieces and ``spread = K / median``.
    """
    r = np.array([math.exp(p.ld_range[1] - p.ld_range[0]) for part in parts
                  for p in part.pieces if p.n_samples >= 2])
    if r.size == 0:
        return DistortionSummary(1.0, 1.0, 1.0, 0)
    med = float(np.median(r))
    return DistortionSummary(float(r.max()), med, float(r.max() / med), int(r.size))
