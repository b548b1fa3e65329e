"""The full-return map onto a critical neighbourhood ``Omega_0``.

Large-scale pieces are continued until part of them maps onto ``Omega_0``:
inside the middle fifth of each large-scale image a critical preimage ``x``
of least depth ``t <= t0`` is chosen, the copy ``omega_x`` of ``Omega_0``
around it (``f^t(omega_x) = Omega_0``) returns after ``t`` more steps and the
two flanks restart the large-scale construction.  The return time is
``R = p_hat_s + t`` with ``p_hat_s`` the last large-scale time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import mpmath
import numpy as np

from .errors import MarkovMismatch, NoT0, OrbitEscape, Renormalizable
from .inducing import kernel as K
from .inducing.construction import (InducingContext, PreimageTable, SampleRun, TailStats,
                                    _group, core_interval, make_tail, run_samples,
                                    stratified_thetas, trace_sample)
from .maps import MapSpec, mp_forward, mp_pullback, pullback

T_MAX = 30
MAX_POINTS = 1 << 21
RADIUS_HALVINGS = 30
MP_PREC = 96
MARKOV_TOL = 1e-8


# ----------------------------------------------------------------------------
# renormalization


@dataclass(frozen=True)
class RenormalizationVerdict:
    renormalizable: bool
    period: int | None = None
    interval: tuple[float, float] | None = None


def _disjoint_cycle(m: MapSpec, J: tuple[float, float], k: int) -> bool:
    """``J, f(J), ..., f^(k-1)(J)`` have disjoint interiors and ``f^k(J)`` lies in ``J``."""
    tol = 1e-9 * max(J[1] - J[0], 1e-12)
    ims = [J]
    cur = J
    for _ in range(k):
        cur = m.interval_image(*cur)
        ims.append(cur)
    if not (ims[k][0] >= J[0] - tol and ims[k][1] <= J[1] + tol):
        return False
    spans = sorted(ims[:k])
    return all(b[0] >= a[1] - tol for a, b in zip(spans, spans[1:]))


def renormalization_test(m: MapSpec, horizon: int = 64, orbit_len: int = 4000,
                         c_index: int = 0) -> RenormalizationVerdict:
    """Look for a cycle of intervals of period ``2..horizon`` around a critical point.

    For each period ``k`` the candidate is the hull of the ``f^k``-orbit of
    ``c``, grown by ``J <- hull(J, f^k(J))`` until it stabilises; the map is
    renormalizable with period ``k`` when the candidate and its first
    ``k - 1`` images have disjoint interiors and ``f^k(J)`` stays in ``J``.
    """
    c = m.critical_points[c_index]
    orbit = [c]
    x = c
    for _ in range(orbit_len * 2):
        x = m.f(x)
        orbit.append(x)
    orbit = np.array(orbit)
    for k in range(2, horizon + 1):
        pts = orbit[::k][: orbit_len]
        J = (float(pts.min()), float(pts.max()))
        for _ in range(50):
            cur = J
            for _ in range(k):
                cur = m.interval_image(*cur)
            nJ = (min(J[0], cur[0]), max(J[1], cur[1]))
            if nJ == J:
                break
            J = nJ
        if J[1] - J[0] < 0.5 and _disjoint_cycle(m, J, k):
            return RenormalizationVerdict(True, k, J)
    return RenormalizationVerdict(False)


# ----------------------------------------------------------------------------
# Omega_0 and the critical preimages


@dataclass(frozen=True)
class Omega0Choice:
    """``Omega_0``, the depth ``t0`` and the preimage table used for returns.

    ``markov_error`` is the largest ``|f^t(omega_x) - Omega_0|`` endpoint
    mismatch (relative to ``|Omega_0|``) of the high-precision check;
    ``max_gap`` is the largest gap between preimages in the core.
    """

    omega0: tuple[float, float]
    t0: int
    preimages: PreimageTable
    c_index: int
    core: tuple[float, float]
    max_gap: float
    markov_error: float

    @property
    def length(self) -> float:
        return self.omega0[1] - self.omega0[0]


def _preimage_levels(m: MapSpec, c: float, core: tuple[float, float], t_max: int,
                     gap: float, max_points: int):
    """Critical preimages by depth with their lap words, until the gap rule holds."""
    levels = [[(c, ())]]
    pts = [c]
    for t in range(t_max + 1):
        inside = np.sort(np.array([p for p in pts if core[0] <= p <= core[1]]))
        edges = np.concatenate([[core[0]], inside, [core[1]]])
        g = float(np.max(np.diff(edges)))
        if g <= gap:
            return levels, t, g
        if t == t_max:
            break
        nxt = []
        for y, word in levels[-1]:
            for lap in range(m.n_laps):
                a, b = m.lap_image(lap)
                if a <= y <= b:
                    nxt.append((m.inverse(lap, y), (lap,) + word))
        levels.append(nxt)
        pts.extend(p for p, _ in nxt)
        if len(pts) > max_points:
            raise NoT0(f"more than {max_points} critical preimages before the gap rule held")
    raise NoT0(f"critical preimages leave a gap {g:.3g} > {gap:.3g} at depth {t_max}")


def _pull_interval(m: MapSpec, word: tuple, lo, hi, setup: dict):
    """Pull ``[lo, hi]`` back along ``word`` in mp; ``None`` when a branch is undefined."""
    for lap in reversed(word):
        a, b = m.lap_image(lap)
        if lo < a - 1e-15 or hi > b + 1e-15:
            return None
        x1 = m.mp_inverse(lap, lo, setup)
        x2 = m.mp_inverse(lap, hi, setup)
        lo, hi = (x1, x2) if x1 <= x2 else (x2, x1)
    return lo, hi


def choose_omega0(ctx: InducingContext, c_index: int = 0, t_max: int = T_MAX,
                  max_points: int = MAX_POINTS, prec: int = MP_PREC) -> Omega0Choice:
    """Pick ``Omega_0`` around ``c`` and the preimage depth ``t0``.

    ``t0`` is the least depth at which the critical preimages of depth
    ``<= t0`` leave no gap longer than ``(delta' - 2 eps)/5`` in the core, so
    that the middle fifth of every large-scale image contains one.
    ``Omega_0`` has radius ``delta'/30``, halved until every ``omega_x`` is a
    well-defined branch preimage of length ``<= delta'/15``.

    Raises:
        Renormalizable: a cycle of intervals was found.
        NoT0: no admissible depth up to ``t_max``.
    """
    m, cfg = ctx.m, ctx.cfg
    verdict = renormalization_test(m, c_index=c_index)
    if verdict.renormalizable:
        raise Renormalizable(f"cycle of intervals of period {verdict.period} at {verdict.interval}")
    c = m.critical_points[c_index]
    core = core_interval(m)
    gap = (cfg.dprime - 2.0 * cfg.eps) / 5.0
    levels, t0, max_gap = _preimage_levels(m, c, core, t_max, gap, max_points)
    r = cfg.dprime / 30.0
    limit = cfg.dprime / 15.0 * (1.0 + 1e-12)
    with mpmath.workprec(prec):
        setup = m.mp_setup()
        cm = setup["crit"][c_index]
        for _ in range(RADIUS_HALVINGS):
            om = (cm - mpmath.mpf(r), cm + mpmath.mpf(r))
            rows = []
            ok = True
            for depth, lev in enumerate(levels[: t0 + 1]):
                for x, word in lev:
                    iv = _pull_interval(m, word, om[0], om[1], setup)
                    if iv is None or float(iv[1] - iv[0]) > limit:
                        ok = False
                        break
                    rows.append((depth, x, iv, word))
                if not ok:
                    break
            if ok:
                break
            r *= 0.5
        else:
            raise NoT0("no radius gives admissible copies of Omega_0")
        err = 0.0
        for depth, x, (a, b), word in rows:
            fa = mp_forward(m, a, depth, prec, setup)
            fb = mp_forward(m, b, depth, prec, setup)
            lo, hi = (fa, fb) if fa <= fb else (fb, fa)
            err = max(err, float(max(abs(lo - om[0]), abs(hi - om[1])) / (2 * r)))
        omega0 = (float(om[0]), float(om[1]))
    rows.sort(key=lambda row: (row[0], row[1]))
    off = np.zeros(t0 + 2, dtype=np.int64)
    for depth, *_ in rows:
        off[depth + 1] += 1
    off = np.cumsum(off)
    table = PreimageTable(np.array([row[1] for row in rows]), off,
                          np.array([float(row[2][0]) for row in rows]),
                          np.array([float(row[2][1]) for row in rows]),
                          tuple(row[3] for row in rows))
    return Omega0Choice(omega0, t0, table, c_index, core, max_gap, err)


# ----------------------------------------------------------------------------
# the return map


@dataclass(frozen=True)
class ReturnPiece:
    """One element ``omega`` of ``Q`` with ``f^R(omega) = Omega_0``.

    ``lo, hi`` come from pulling ``Omega_0`` back along the lap word and may
    coincide in float; ``log_length`` is then the informative size.
    ``chain`` lists the large-scale times ``p_hat_1 < ... < p_hat_s`` (first
    16 only).
    """

    lo: float
    hi: float
    log_length: float
    R: int
    s: int
    t: int
    chain: tuple[int, ...]
    orientation: int
    mass: float
    n_samples: int
    key: int
    markov_error: float

    def additivity_ok(self) -> bool:
        if self.s > len(self.chain):
            return True
        return self.chain[-1] + self.t == self.R


@dataclass(frozen=True)
class ReturnMapQ:
    omega0: tuple[float, float]
    t0: int
    pieces: tuple[ReturnPiece, ...]
    unresolved_mass: float
    status_mass: dict
    n_max: int
    run: SampleRun = field(repr=False)
    choice: Omega0Choice = field(repr=False)
    words: dict = field(default_factory=dict, repr=False)

    @property
    def length(self) -> float:
        return self.omega0[1] - self.omega0[0]

    @property
    def resolved_mass(self) -> float:
        return float(sum(p.mass for p in self.pieces))

    @property
    def resolved_fraction(self) -> float:
        return self.resolved_mass / self.length

    @property
    def markov_error(self) -> float:
        return max([p.markov_error for p in self.pieces] + [self.choice.markov_error])

    def violations(self) -> list[str]:
        out = []
        total = self.resolved_mass + self.unresolved_mass
        if abs(total - self.length) > 1e-9 * self.length:
            out.append(f"mass {total!r} differs from |Omega_0| = {self.length!r}")
        for p in self.pieces:
            if not p.additivity_ok():
                out.append(f"piece {p.key}: R = {p.R} but chain gives {p.chain[-1]} + {p.t}")
            if p.t > self.t0:
                out.append(f"piece {p.key}: t = {p.t} > t0 = {self.t0}")
            if p.markov_error > MARKOV_TOL:
                out.append(f"piece {p.key}: Markov mismatch {p.markov_error:.3g}")
        return out

    def csv_rows(self) -> list[tuple]:
        return [(p.lo, p.hi, p.R, p.s, p.t) for p in sorted(self.pieces, key=lambda p: p.lo)]


def _orientation(m: MapSpec, word: np.ndarray) -> int:
    signs = [1 if m.df(0.5 * (m.bounds[j] + m.bounds[j + 1])) > 0 else -1
             for j in range(m.n_laps)]
    o = 1
    for lap in word:
        o *= signs[int(lap)]
    return o


def verify_markov(m: MapSpec, word, omega0: tuple[float, float], R: int) -> float:
    """Pull ``Omega_0`` back along ``word`` in mp and push it forward ``R`` steps.

    Precision grows with ``R`` so the round trip is exact to ``~1e-20``;
    returns the endpoint mismatch relative to ``|Omega_0|``.
    """
    prec = 80 + 3 * int(R)
    L = omega0[1] - omega0[0]
    with mpmath.workprec(prec):
        setup = m.mp_setup()
        err = 0.0
        ends = []
        for y in omega0:
            x = mp_pullback(m, word, y, prec, setup)
            ends.append(mp_forward(m, x, R, prec, setup))
        lo, hi = min(ends), max(ends)
        err = max(abs(float(lo - omega0[0])), abs(float(hi - omega0[1]))) / L
    return float(err)


def build_return_map(ctx: InducingContext, choice: Omega0Choice, n_max: int = 2000,
                     samples: int = 1 << 14, verify_pieces: int = 64) -> ReturnMapQ:
    """Full-return map on ``Omega_0`` from stratified points, up to time ``n_max``.

    Points with equal piece hashes form one element of ``Q``.  The float
    endpoint mismatch of each sample is measured in the kernel; elements
    whose mismatch exceeds ``1e-8 |Omega_0|`` and the ``verify_pieces``
    heaviest ones are re-checked by a high-precision round trip.

    Raises:
        MarkovMismatch: an element fails the high-precision check.
    """
    om = choice.omega0
    run = run_samples(ctx, om, stratified_thetas(samples), n_max, full=True,
                      pre=choice.preimages, omega0=om)
    w = run.weights
    status_mass = {K.STATUS_NAMES[s]: float(w[run.status == s].sum()) for s in K.STATUS_NAMES}
    L = om[1] - om[0]
    pieces = []
    words = {}
    res = np.flatnonzero(run.resolved)
    for g in _group(run.key[res]):
        idx = res[g]
        rep = int(idx[0])
        oi = run.out_i[rep]
        R = int(oi[K.I_TIME])
        _, _, _, word = trace_sample(ctx, om, float(run.thetas[rep]), n_max, full=True,
                                     pre=choice.preimages, omega0=om)
        a, lg_a = pullback(ctx.m, word, om[0])
        b, lg_b = pullback(ctx.m, word, om[1])
        lo, hi = (a, b) if a <= b else (b, a)
        s = int(oi[K.I_S])
        chain = tuple(int(v) for v in oi[K.I_CHAIN: K.I_CHAIN + min(s, K.CHAIN)])
        ld = float(np.mean(run.out_f[idx, K.F_LD]))
        key = int(oi[K.I_HASH])
        words[key] = word
        pieces.append(ReturnPiece(lo, hi, math.log(L) - ld, R, s, int(oi[K.I_T]), chain,
                                  _orientation(ctx.m, word), float(w[idx].sum()), int(idx.size),
                                  key, float(np.max(run.out_f[idx, K.F_MARKOV]))))
    heavy = sorted(range(len(pieces)), key=lambda i: -pieces[i].mass)[:verify_pieces]
    check = set(heavy) | {i for i, p in enumerate(pieces) if p.markov_error > MARKOV_TOL}
    for i in sorted(check):
        p = pieces[i]
        err = verify_markov(ctx.m, words[p.key], om, p.R)
        if err > MARKOV_TOL:
            raise MarkovMismatch(f"element with R={p.R} misses Omega_0 by {err:.3g}")
        if p.markov_error > MARKOV_TOL:
            pieces[i] = replace(p, markov_error=err)
    unresolved = float(w[~run.resolved].sum())
    return ReturnMapQ(om, choice.t0, tuple(pieces), unresolved, status_mass, int(n_max), run,
                      choice, words)


def tail_of_R(Q: ReturnMapQ) -> TailStats:
    """``m_n = |{R > n}| / |Omega_0|``; unresolved mass counts as ``R > n_max``.

    The decay fit uses ``n <= n_max / 2`` only.
    """
    return make_tail(Q.run, Q.n_max // 2)


def xi_by_depth(Q: ReturnMapQ, depth_max: int = 5) -> np.ndarray:
    """Fraction of the mass reaching its ``i``-th large-scale time that returns there."""
    s = Q.run.out_i[:, K.I_S]
    ok = Q.run.resolved
    w = Q.run.weights
    out = np.full(depth_max, np.nan)
    for i in range(1, depth_max + 1):
        reach = w[s >= i].sum()
        if reach > 0:
            out[i - 1] = w[ok & (s == i)].sum() / reach
    return out


# ----------------------------------------------------------------------------
# separation time and distortion


@dataclass(frozen=True)
class ReturnStep:
    status: int
    key: int
    R: int
    image: float
    log_deriv: float


def return_step(ctx: InducingContext, Q: ReturnMapQ, x: float) -> ReturnStep:
    """Apply ``f_hat`` to one point of ``Omega_0`` (float resolution)."""
    om = Q.omega0
    theta = (x - om[0]) / (om[1] - om[0])
    out_i = np.zeros(K.N_INT, dtype=np.int64)
    out_f = np.zeros(K.N_FLOAT)
    pre = Q.choice.preimages
    K.track(ctx.m.code, ctx.m.kp, ctx.crit, ctx.levels.h, ctx.levels.p_edge, ctx.cfg.zorb,
            ctx.cfg.zcorr, ctx.fpar(om), ctx.ipar(Q.n_max, True, pre.t0), pre.x, pre.off,
            pre.wlo, pre.whi, om[0], om[1] - om[0], theta, out_i, out_f,
            np.empty((0, 3), dtype=np.int64), np.empty(0, dtype=np.int8))
    img = om[0] + out_f[K.F_THETA] * (om[1] - om[0])
    return ReturnStep(int(out_i[K.I_STATUS]), int(out_i[K.I_HASH]), int(out_i[K.I_TIME]),
                      float(img), float(out_f[K.F_LD]))


@dataclass(frozen=True)
class SeparationResult:
    s: int
    capped: bool = False
    escaped: bool = False


def separation_time(ctx: InducingContext, Q: ReturnMapQ, x: float, y: float,
                    horizon: int = 50, strict: bool = False) -> SeparationResult:
    """Least ``n <= horizon`` with ``f_hat^n(x)`` and ``f_hat^n(y)`` in different elements.

    An iterate outside the resolved elements ends the search with
    ``escaped`` set (or raises :class:`OrbitEscape` when ``strict``).
    """
    for n in range(horizon + 1):
        a = return_step(ctx, Q, x)
        b = return_step(ctx, Q, y)
        if a.status != K.OK or b.status != K.OK:
            if strict:
                raise OrbitEscape(f"iterate {n} left the resolved elements")
            return SeparationResult(n, False, True)
        if a.key != b.key:
            return SeparationResult(n)
        x, y = a.image, b.image
    return SeparationResult(horizon, True)


@dataclass(frozen=True)
class HolderReport:
    C: float
    beta: float
    N: int
    K: float
    n_pairs: int
    violations: int
    skipped: int
    worst_ratio: float

    @property
    def violation_rate(self) -> float:
        return self.violations / self.n_pairs if self.n_pairs else math.nan


def holder_constant(K_dist: float, omega0_len: float, dprime: float) -> float:
    """``C = 6 K |Omega_0| / delta' + (3 K |Omega_0| / delta')^2``."""
    q = K_dist * omega0_len / dprime
    return 6.0 * q + (3.0 * q) ** 2


def _batch_separation(ctx: InducingContext, Q: ReturnMapQ, a: np.ndarray, b: np.ndarray,
                      horizon: int, start: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Separation times of many pairs (relative positions in ``Omega_0``).

    Returns ``(s, escaped)``; ``start`` offsets the reported times.
    """
    om = Q.omega0
    pre = Q.choice.preimages
    s = np.full(a.size, start + horizon, dtype=np.int64)
    escaped = np.zeros(a.size, dtype=bool)
    live = np.arange(a.size)
    for n in range(start, start + horizon + 1):
        if live.size == 0:
            break
        run = run_samples(ctx, om, np.concatenate([a, b]), Q.n_max, full=True, pre=pre,
                          omega0=om)
        k = live.size
        ok = run.resolved[:k] & run.resolved[k:]
        split = ok & (run.key[:k] != run.key[k:])
        s[live[~ok | split]] = n
        escaped[live[~ok]] = True
        keep = ok & ~split
        img = run.out_f[:, K.F_THETA]
        live, a, b = live[keep], img[:k][keep], img[k:][keep]
    return s, escaped


def check_holder_distortion(ctx: InducingContext, Q: ReturnMapQ, K_dist: float,
                            sample_pairs: int = 10_000, seed: int = 0, slack: float = 1.1,
                            horizon: int = 30, max_rounds: int = 8) -> HolderReport:
    """Check ``|f_hat'(x)/f_hat'(y) - 1| <= C beta^s(x, y)`` on pairs in common elements.

    A pair is an element of ``Q`` and two image points ``z1, z2`` in
    ``Omega_0``; ``x, y`` are their preimages in the element, so ``s(x, y) =
    1 + s(z1, z2)``.  The element is drawn with probability proportional to
    its sampled mass.  ``z1, z2`` are resolved sample points of ``Q`` whose
    rank distance is log-uniform, so their first step is known.  Pairs whose
    separation cannot be decided (a later iterate outside the resolved
    elements) are skipped and counted.  ``beta = 2^(-1/N)`` with ``N`` the
    least iterate count giving ``|f_hat^N'| >= 2`` at every sampled point.
    """
    rng = np.random.default_rng(seed)
    om = Q.omega0
    L = om[1] - om[0]
    res = np.flatnonzero(Q.run.resolved)
    if res.size < 2:
        return HolderReport(math.nan, math.nan, 0, K_dist, 0, 0, 0, math.nan)
    res = res[np.argsort(Q.run.thetas[res], kind="stable")]
    C = holder_constant(K_dist, L, ctx.cfg.dprime)
    mass = Q.run.weights[res] / Q.run.weights[res].sum()
    words = {k: np.asarray(w, dtype=np.int64) for k, w in Q.words.items()}
    theta, key = Q.run.thetas, Q.run.key
    img = Q.run.out_f[:, K.F_THETA]
    lhs_all, s_all = [], []
    skipped = 0
    min_lg = math.inf
    for _ in range(max_rounds):
        need = sample_pairs - len(lhs_all)
        if need <= 0:
            break
        batch = 2 * need
        elem = key[res[rng.choice(res.size, size=batch, p=mass)]]
        i = rng.integers(res.size, size=batch)
        gap = np.floor(np.exp(rng.random(batch) * math.log(res.size))).astype(np.int64)
        j = np.clip(i + np.where(rng.random(batch) < 0.5, -gap, gap), 0, res.size - 1)
        i, j = res[i], res[j]
        keep = i != j
        elem, i, j = elem[keep], i[keep], j[keep]
        s = np.zeros(i.size, dtype=np.int64)
        esc = np.zeros(i.size, dtype=bool)
        same = np.flatnonzero(key[i] == key[j])
        if same.size:
            s[same], esc[same] = _batch_separation(ctx, Q, img[i[same]], img[j[same]],
                                                   horizon - 1, start=1)
        skipped += int(esc.sum())
        for t in np.flatnonzero(~esc)[:need]:
            w = words.get(int(elem[t]))
            if w is None:
                skipped += 1
                continue
            _, lg1 = pullback(ctx.m, w, om[0] + theta[i[t]] * L)
            _, lg2 = pullback(ctx.m, w, om[0] + theta[j[t]] * L)
            min_lg = min(min_lg, lg1, lg2)
            lhs_all.append(abs(math.expm1(lg1 - lg2)))
            s_all.append(1 + int(s[t]))
    N = max(1, math.ceil(math.log(2.0) / min_lg)) if min_lg > 0 else 0
    beta = 2.0 ** (-1.0 / N) if N > 0 else math.nan
    lhs = np.asarray(lhs_all)
    bound = C * beta ** np.asarray(s_all, dtype=np.float64)
    viol = int(np.sum(lhs > slack * bound)) if lhs.size else 0
    worst = float(np.max(lhs / bound)) if lhs.size else math.nan
    return HolderReport(C, beta, N, K_dist, int(lhs.size), viol, skipped, worst)


@dataclass(frozen=True)
class ConditionalTailReport:
    depth: int
    ratio: float
    passed: bool
    n_reached: int


def conditional_tail_check(Q: ReturnMapQ, m_tail: np.ndarray, K_dist: float, dprime: float,
                           depths=(1, 2, 3), slack: float = 1.2) -> list[ConditionalTailReport]:
    """Check ``|{p_hat_(i+1) > p_hat_i + k | p_hat_i}| <= (3K/delta') m_k``.

    For chain depth ``i`` the conditioning set is the mass that reached its
    ``i``-th large-scale time without returning there.  A point whose next
    large-scale time was not reached by ``n_max`` counts as ``> k`` for every
    ``k``.  ``ratio`` is the largest left/right
    quotient over ``k <= n_max / 2``.
    """
    out_i = Q.run.out_i
    s = out_i[:, K.I_S]
    ok = Q.run.resolved
    w = Q.run.weights
    time = out_i[:, K.I_TIME]
    Kt = 3.0 * K_dist / dprime
    k_max = min(Q.n_max // 2, m_tail.size - 1)
    ks = np.arange(k_max + 1)
    reports = []
    for i in depths:
        if i > K.CHAIN - 1:
            break
        cond = (s >= i) & ~(ok & (s == i))
        if not cond.any():
            reports.append(ConditionalTailReport(i, math.nan, True, 0))
            continue
        p_i = out_i[cond, K.I_CHAIN + i - 1]
        nxt = np.where(s[cond] >= i + 1, out_i[cond, K.I_CHAIN + min(i, K.CHAIN - 1)], -1)
        gap = np.where(nxt >= 0, nxt - p_i, time[cond] - p_i)
        known = nxt >= 0
        wc = w[cond]
        total = wc.sum()
        lhs = np.array([wc[(gap > k) | ~known].sum() for k in ks]) / total
        rhs = Kt * m_tail[: k_max + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
        ratio = float(np.max(q))
        reports.append(ConditionalTailReport(i, ratio, bool(ratio <= slack), int(cond.sum())))
    return reports
