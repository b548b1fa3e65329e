"""Tower over the return map, invariant density, correlations and the CLT test.

Statistics are measured on long orbits in double precision.  Every orbit
carries a restart guard: an orbit that leaves the open domain or lands on a
float fixed point is restarted from a fresh uniform point, so rounding cannot
trap it.  Random numbers come from ``numpy.random.SeedSequence`` streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numba import njit
from scipy import stats

from .critical import DecayClass, classify_growth
from .errors import (AllCensored, CoboundarySuspected, DegenerateSequence, KacDivergence,
                     NonConvergence)
from .full_return import ReturnMapQ
from .maps import MapSpec, _df, _f, _inv

BINS = 1 << 12
BURN_IN = 1000
KAC_TOL = 0.05
BATCHES = 50
RESERVE = 4096


# ----------------------------------------------------------------------------
# tower


@dataclass(frozen=True)
class TowerModel:
    """Young tower over the resolved elements of ``Q``.

    Level ``(omega, i)``, ``i < R(omega)``, carries mass ``|omega|``;
    ``total_mass = sum R |omega|`` over the resolved elements and
    ``censored_correction`` is the least extra mass of the unresolved part
    (``(n_max + 1) * unresolved``).  ``masses`` are exact binary fractions of
    the stored float masses.
    """

    R: np.ndarray
    masses: tuple[Fraction, ...] = field(repr=False)
    total_mass: float
    censored_correction: float
    words: tuple = field(repr=False)
    omega0: tuple[float, float]
    n_max: int

    @property
    def kac_ratio(self) -> float:
        return self.censored_correction / self.total_mass if self.total_mass > 0 else math.inf

    def level_weights(self) -> np.ndarray:
        """Normalised weight ``|omega| / total_mass`` of one level of each element."""
        return np.array([float(m) for m in self.masses]) / self.total_mass

    def base_tail(self, n_max: int | None = None) -> list[Fraction]:
        """``m({R > k})`` for ``k = 0..n_max`` as exact fractions."""
        n_max = self.n_max if n_max is None else n_max
        diff = [Fraction(0)] * (n_max + 2)
        for r, mass in zip(self.R, self.masses):
            diff[0] += mass
            diff[min(int(r), n_max + 1)] -= mass
        out = []
        acc = Fraction(0)
        for k in range(n_max + 1):
            acc += diff[k]
            out.append(acc)
        return out

    def height_tail(self, n_max: int | None = None) -> list[Fraction]:
        """``m_Omega({R_hat > n})`` summed level by level (``R_hat = R - i``)."""
        n_max = self.n_max if n_max is None else n_max
        top = int(self.R.max()) if self.R.size else 0
        # H[j]: mass of levels with R_hat = j, built from each element's levels
        diff = [Fraction(0)] * (top + 2)
        for r, mass in zip(self.R, self.masses):
            diff[1] += mass
            diff[int(r) + 1] -= mass
        H = []
        acc = Fraction(0)
        for j in range(top + 1):
            acc += diff[j]
            H.append(acc)
        suffix = [Fraction(0)] * (top + 2)
        for j in range(top, -1, -1):
            suffix[j] = suffix[j + 1] + H[j]
        return [suffix[n + 1] if n + 1 <= top else Fraction(0) for n in range(n_max + 1)]

    def tail_identity(self, n_max: int | None = None) -> tuple[bool, int]:
        """Check ``m_Omega({R_hat > n}) = sum_(k >= n) m({R > k})`` exactly for ``n <= n_max``.

        Returns ``(holds, first_failing_n)`` with ``-1`` when it holds.
        """
        n_max = self.n_max if n_max is None else n_max
        top = max(int(self.R.max()) if self.R.size else 0, n_max)
        base = self.base_tail(top)
        rhs_suffix = [Fraction(0)] * (top + 2)
        for k in range(top, -1, -1):
            rhs_suffix[k] = rhs_suffix[k + 1] + base[k]
        lhs = self.height_tail(n_max)
        for n in range(n_max + 1):
            if lhs[n] != rhs_suffix[n]:
                return False, n
        return True, -1


def build_tower(Q: ReturnMapQ, kac_tol: float = KAC_TOL, truncated: bool = False) -> TowerModel:
    """Tower over the resolved elements of ``Q`` with Kac normalisation.

    Raises:
        KacDivergence: the censored correction exceeds ``kac_tol`` of the
            total mass, unless ``truncated`` asks for the tower over the
            resolved part regardless.
    """
    R = np.array([p.R for p in Q.pieces], dtype=np.int64)
    masses = tuple(Fraction(p.mass) for p in Q.pieces)
    total = float(sum(R[i] * masses[i] for i in range(R.size))) if R.size else 0.0
    corr = (Q.n_max + 1) * Q.unresolved_mass
    tower = TowerModel(R, masses, total, corr, tuple(Q.words[p.key] for p in Q.pieces),
                       Q.omega0, Q.n_max)
    if not truncated and (total <= 0 or corr > kac_tol * total):
        raise KacDivergence(f"censored correction {corr:.3g} is {tower.kac_ratio:.3g} of the "
                            f"resolved tower mass {total:.3g}")
    return tower


@njit(cache=True)
def _level_points(code, kp, bounds, word, z):
    """Backward sweep: ``pts[i] = f^i(x)`` and ``lg = log|(f^R)'(x)|`` for ``f^R(x) = z``."""
    R = word.shape[0]
    pts = np.empty(R + 1)
    pts[R] = z
    lg = 0.0
    y = z
    for k in range(R - 1, -1, -1):
        y = _inv(code, kp, bounds, word[k], y)
        pts[k] = y
        d = abs(_df(code, kp, y))
        lg += math.log(d) if d > 0.0 else -np.inf
    return pts, lg


def commutation_check(m: MapSpec, tower: TowerModel, n_points: int = 1000,
                      seed: int = 0) -> float:
    """Largest ``|pi(g(x, i)) - f(pi(x, i))|`` over sampled tower points."""
    rng = np.random.default_rng(seed)
    if tower.R.size == 0:
        return 0.0
    w = tower.level_weights() * tower.R
    w = w / w.sum()
    worst = 0.0
    L = tower.omega0[1] - tower.omega0[0]
    for _ in range(n_points):
        j = int(rng.choice(tower.R.size, p=w))
        word = np.asarray(tower.words[j], dtype=np.int64)
        z = tower.omega0[0] + rng.random() * L
        pts, _ = _level_points(m.code, m.kp, m.bounds, word, z)
        i = int(rng.integers(tower.R[j]))
        # pi(x, i) = f^i(x); g moves up one level or returns to the base at f^R(x)
        pi_g = pts[i + 1]
        worst = max(worst, abs(pi_g - m.f(pts[i])))
    return worst


# ----------------------------------------------------------------------------
# invariant density


@dataclass(frozen=True)
class MeasureEstimate:
    """Histogram density on ``[0, 1]`` (working coordinates)."""

    edges: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)
    method: str
    n_samples: int
    seed: int
    invariance_defect: float = math.nan

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def masses(self) -> np.ndarray:
        return self.density * self.widths

    def integral(self) -> float:
        return float(math.fsum(self.masses))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Points distributed by the histogram (uniform inside each bin)."""
        p = self.masses / self.masses.sum()
        b = rng.choice(p.size, size=n, p=p)
        return self.edges[b] + rng.random(n) * self.widths[b]

    def mean(self, values_at_mid: np.ndarray) -> float:
        return float(math.fsum(values_at_mid * self.masses))

    def l1(self, other: "MeasureEstimate", skip_ends: bool = False) -> float:
        d = np.abs(self.density - other.density) * self.widths
        if skip_ends:
            d = d[1:-1]
        return float(d.sum())

    def csv_rows(self) -> list[tuple]:
        return [(float(a), float(b), float(d)) for a, b, d in
                zip(self.edges[:-1], self.edges[1:], self.density)]


@njit(cache=True)
def _orbit_hist(code, kp, x, n, burn, bins, reserve):
    h = np.zeros(bins, dtype=np.int64)
    k = 0
    for i in range(burn + n):
        y = _f(code, kp, x)
        if not (0.0 < y < 1.0) or y == x:
            y = reserve[k % reserve.shape[0]]
            k += 1
        x = y
        if i >= burn:
            b = int(x * bins)
            if b >= bins:
                b = bins - 1
            h[b] += 1
    return h, k


@njit(cache=True)
def _push_hist(code, kp, xs, bins):
    h = np.zeros(bins, dtype=np.int64)
    for x in xs:
        y = _f(code, kp, x)
        b = int(y * bins)
        if b >= bins:
            b = bins - 1
        if b < 0:
            b = 0
        h[b] += 1
    return h


def _invariance_defect(m: MapSpec, est: MeasureEstimate, per_bin: int = 64) -> float:
    """``|| P_f rho - rho ||_1`` with ``P_f rho`` pushed by midpoint quadrature in each bin."""
    bins = est.density.size
    sub = (np.arange(per_bin) + 0.5) / per_bin
    xs = (est.edges[:-1, None] + sub[None, :] * est.widths[:, None]).ravel()
    w = np.repeat(est.masses / per_bin, per_bin)
    b = np.clip((m.f(xs) * bins).astype(np.int64), 0, bins - 1)
    pushed = np.bincount(b, weights=w, minlength=bins) / est.widths
    return float(np.sum(np.abs(pushed - est.density) * est.widths))


def _tower_density(m: MapSpec, tower: TowerModel, bins: int, per_piece: int) -> np.ndarray:
    hist = np.zeros(bins)
    L = tower.omega0[1] - tower.omega0[0]
    zs = tower.omega0[0] + (np.arange(per_piece) + 0.5) / per_piece * L
    weights = tower.level_weights()
    for j, word in enumerate(tower.words):
        w = np.asarray(word, dtype=np.int64)
        pts_all = []
        lgs = np.empty(per_piece)
        for q, z in enumerate(zs):
            pts, lg = _level_points(m.code, m.kp, m.bounds, w, z)
            pts_all.append(pts[:-1])
            lgs[q] = lg
        # Lebesgue measure on omega has density 1/|(f^R)'| in image coordinates
        a = np.exp(-(lgs - lgs.max()))
        a /= a.sum()
        for q in range(per_piece):
            b = np.minimum((pts_all[q] * bins).astype(np.int64), bins - 1)
            np.add.at(hist, b, weights[j] * a[q])
    return hist


def invariant_density(m: MapSpec, method: str = "birkhoff-histogram", n_samples: int = 10 ** 7,
                      seed: int = 0, bins: int = BINS, tower: TowerModel | None = None,
                      per_piece: int = 8, defect: bool = True) -> MeasureEstimate:
    """Estimate the invariant density as a ``bins``-bin histogram.

    ``birkhoff-histogram`` follows one orbit from a uniform random start
    (burn-in 1000); ``tower-pushforward`` pushes the normalised tower levels
    through the projection.

    Raises:
        ValueError: fewer than ``10^6`` samples for the histogram method, or
            no tower for the pushforward method.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    edges = np.linspace(0.0, 1.0, bins + 1)
    if method == "birkhoff-histogram":
        if n_samples < 10 ** 6:
            raise ValueError("the histogram method needs at least 10^6 samples")
        reserve = rng.random(RESERVE)
        x0 = rng.random()
        h, _ = _orbit_hist(m.code, m.kp, x0, int(n_samples), BURN_IN, bins, reserve)
        dens = h / (n_samples * np.diff(edges))
    elif method == "tower-pushforward":
        if tower is None:
            raise ValueError("the pushforward method needs a tower")
        h = _tower_density(m, tower, bins, per_piece)
        dens = h / (h.sum() * np.diff(edges))
        n_samples = int(tower.R.size * per_piece)
    else:
        raise ValueError(f"unknown method {method!r}")
    est = MeasureEstimate(edges, dens, method, int(n_samples), int(seed))
    if defect:
        d = _invariance_defect(m, est)
        est = MeasureEstimate(edges, dens, method, int(n_samples), int(seed), d)
    return est


def check_density_convergence(m: MapSpec, n_samples: int = 10 ** 7, seeds=(0, 1),
                              tol: float = 0.05) -> float:
    """L1 distance between two independent histogram estimates.

    Raises:
        NonConvergence: the distance exceeds ``tol``.
    """
    a = invariant_density(m, n_samples=n_samples, seed=seeds[0], defect=False)
    b = invariant_density(m, n_samples=n_samples, seed=seeds[1], defect=False)
    d = a.l1(b)
    if d > tol:
        raise NonConvergence(f"independent estimates differ by {d:.3g} in L1")
    return d


def arcsine_bin_masses(edges: np.ndarray) -> np.ndarray:
    """Exact bin masses of the density ``1 / (pi sqrt(x (1 - x)))``."""
    cdf = 2.0 / math.pi * np.arcsin(np.sqrt(np.clip(edges, 0.0, 1.0)))
    return np.diff(cdf)


# ----------------------------------------------------------------------------
# observables


@dataclass(frozen=True)
class Observable:
    """Library observable in natural coordinates.

    ``coordinate`` is ``x``; ``abs`` is ``|x - a|``; ``bump`` is the smooth
    bump ``exp(-((x - a)/w)^2)``; ``const`` is the constant ``a``.
    """

    kind: str
    a: float = 0.0
    w: float = 1.0

    @property
    def code(self) -> int:
        return {"coordinate": 0, "abs": 1, "bump": 2, "const": 3}[self.kind]

    @property
    def name(self) -> str:
        if self.kind == "coordinate":
            return "x"
        if self.kind == "abs":
            return f"|x-{self.a:g}|"
        if self.kind == "bump":
            return f"bump({self.a:g},{self.w:g})"
        return f"const({self.a:g})"

    @classmethod
    def parse(cls, text: str) -> "Observable":
        """Parse ``x``, ``abs:a``, ``bump:a:w`` or ``const:a``."""
        parts = text.strip().split(":")
        kind = parts[0].lower()
        try:
            if kind in ("x", "coordinate"):
                return cls("coordinate")
            if kind == "abs":
                return cls("abs", float(parts[1]))
            if kind == "bump":
                return cls("bump", float(parts[1]), float(parts[2]))
            if kind == "const":
                return cls("const", float(parts[1]))
        except (IndexError, ValueError) as exc:
            raise ValueError(f"malformed observable {text!r}") from exc
        raise ValueError(f"unknown observable {text!r}")

    def params(self) -> np.ndarray:
        return np.array([self.code, self.a, self.w], dtype=np.float64)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return _obs_arr(self.params(), x)


@njit(cache=True)
def _obs(op, x):
    k = int(op[0])
    if k == 0:
        return x
    if k == 1:
        return abs(x - op[1])
    if k == 2:
        u = (x - op[1]) / op[2]
        return math.exp(-u * u)
    return op[1]


@njit(cache=True)
def _obs_arr(op, xs):
    out = np.empty_like(xs)
    for i in range(xs.shape[0]):
        out[i] = _obs(op, xs[i])
    return out


def _observable_moments(m: MapSpec, mu: MeasureEstimate, phi: Observable) -> tuple[float, float]:
    mid = m.to_natural(0.5 * (mu.edges[:-1] + mu.edges[1:]))
    v = phi(mid)
    mean = mu.mean(v)
    var = max(mu.mean(v * v) - mean * mean, 0.0)
    return mean, math.sqrt(var)


# ----------------------------------------------------------------------------
# correlations


@dataclass(frozen=True)
class CorrelationCurve:
    phi: str
    psi: str
    values: np.ndarray
    se: np.ndarray
    n_samples: int
    seed: int
    signed: np.ndarray = field(default=None, repr=False)

    @property
    def censored(self) -> np.ndarray:
        """Values below two standard errors (noise floor)."""
        return self.values < 2.0 * self.se

    def csv_rows(self) -> list[tuple]:
        return [(n, float(v), float(s), bool(c)) for n, (v, s, c) in
                enumerate(zip(self.values, self.se, self.censored))]


@njit(cache=True)
def _lag_sums(code, kp, lo, span, op_phi, op_psi, x, n, n_max, batches, reserve):
    """Per-batch sums of ``phi(x_(k+j)) psi(x_k)``, ``phi``, ``psi`` along one orbit."""
    L = n + n_max
    ph = np.empty(L)
    ps = np.empty(L)
    k = 0
    for i in range(L):
        xn = lo + span * x
        ph[i] = _obs(op_phi, xn)
        ps[i] = _obs(op_psi, xn)
        y = _f(code, kp, x)
        if not (0.0 < y < 1.0) or y == x:
            y = reserve[k % reserve.shape[0]]
            k += 1
        x = y
    per = n // batches
    prod = np.zeros((batches, n_max + 1))
    sphi = np.zeros((batches, n_max + 1))
    spsi = np.zeros(batches)
    for b in range(batches):
        s0 = b * per
        for i in range(s0, s0 + per):
            spsi[b] += ps[i]
            for j in range(n_max + 1):
                prod[b, j] += ph[i + j] * ps[i]
                sphi[b, j] += ph[i + j]
    return prod, sphi, spsi, per


def correlation(m: MapSpec, mu: MeasureEstimate, phi: Observable, psi: Observable,
                n_max: int = 20, n_samples: int = 10 ** 7, seed: int = 0,
                burn_in: int = 10_000, batches: int = BATCHES) -> CorrelationCurve:
    """``C_n = |<(phi o f^n) psi> - <phi><psi>|`` along one stationary orbit.

    The orbit starts at a ``mu``-distributed point followed by a burn-in.
    Standard errors come from ``batches`` batch means.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x0 = float(mu.sample(rng, 1)[0])
    reserve = rng.random(RESERVE)
    x = x0
    for _ in range(burn_in):
        y = m.f(x)
        x = y if 0.0 < y < 1.0 and y != x else float(rng.random())
    prod, sphi, spsi, per = _lag_sums(m.code, m.kp, m.x_lo, m.span, phi.params(), psi.params(),
                                      x, int(n_samples), int(n_max), batches, reserve)
    cov_b = prod / per - (sphi / per) * (spsi[:, None] / per)
    tot = np.array([math.fsum(prod[:, j]) for j in range(n_max + 1)]) / (per * batches)
    mphi = np.array([math.fsum(sphi[:, j]) for j in range(n_max + 1)]) / (per * batches)
    mpsi = math.fsum(spsi) / (per * batches)
    cov = tot - mphi * mpsi
    se = cov_b.std(axis=0, ddof=1) / math.sqrt(batches)
    return CorrelationCurve(phi.name, psi.name, np.abs(cov), se, int(per * batches), int(seed),
                            cov)


def fit_correlation_decay(curve: CorrelationCurve, min_points: int = 10) -> DecayClass:
    """Classify ``C_n`` on ``1 <= n`` before the first noise-floor value.

    Raises:
        AllCensored: the curve reaches the noise floor by ``n = 3``
            (decay at least exponential, too fast to classify).
        DegenerateSequence: fewer than ``min_points`` values above the floor.
    """
    cens = curve.censored
    idx = np.flatnonzero(cens[1:]) + 1
    first = int(idx[0]) if idx.size else curve.values.size
    if first <= 3:
        raise AllCensored(f"noise floor reached at n = {first}; decay at least exponential")
    n = np.arange(1, first)
    if n.size < min_points:
        raise DegenerateSequence(f"only {n.size} values above the noise floor")
    return classify_growth(curve.values[1:first], "tail-counts", n=n, window=(1, first - 1),
                           min_log_span=0.5, min_points=min_points)


# ----------------------------------------------------------------------------
# CLT


@dataclass(frozen=True)
class CLTResult:
    sigma: float
    ks: float
    passed: bool
    n_block: int
    n_trials: int
    mean: float


@njit(cache=True)
def _block_sums(code, kp, lo, span, op, starts, n_block, burn, centre, reserve):
    out = np.empty(starts.shape[0])
    k = 0
    for t in range(starts.shape[0]):
        x = starts[t]
        for _ in range(burn):
            y = _f(code, kp, x)
            if not (0.0 < y < 1.0) or y == x:
                y = reserve[k % reserve.shape[0]]
                k += 1
            x = y
        s = 0.0
        c = 0.0
        for _ in range(n_block):
            v = _obs(op, lo + span * x) - centre
            # Kahan summation keeps block sums exact to rounding
            yk = v - c
            tk = s + yk
            c = (tk - s) - yk
            s = tk
            y = _f(code, kp, x)
            if not (0.0 < y < 1.0) or y == x:
                y = reserve[k % reserve.shape[0]]
                k += 1
            x = y
        out[t] = s / math.sqrt(n_block)
    return out


def clt_test(m: MapSpec, mu: MeasureEstimate, phi: Observable, n_block: int = 10_000,
             n_trials: int = 10_000, seed: int = 0, burn_in: int = 100,
             ks_tol: float = 0.05) -> CLTResult:
    """Normalised block sums from ``mu``-distributed starts against ``Normal(0, sigma)``.

    Raises:
        CoboundarySuspected: ``sigma`` is below ``0.01 sd(phi)``.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    starts = mu.sample(rng, n_trials)
    reserve = rng.random(RESERVE)
    centre, sd = _observable_moments(m, mu, phi)
    sums = _block_sums(m.code, m.kp, m.x_lo, m.span, phi.params(), starts, int(n_block),
                       burn_in, centre, reserve)
    sigma = float(np.std(sums, ddof=1))
    if not sigma > 0.01 * sd:
        raise CoboundarySuspected(f"block-sum spread {sigma:.3g} below 0.01 sd(phi) = {0.01 * sd:.3g}")
    ks = float(stats.kstest(sums, "norm", args=(0.0, sigma)).statistic)
    return CLTResult(sigma, ks, bool(ks < ks_tol), int(n_block), int(n_trials),
                     float(np.mean(sums)))
