"""Interval map families, orbits and log-space derivative products.

Every family is affinely rescaled to the working domain ``[0, 1]``; the
natural coordinates are kept on the :class:`MapSpec` so reports can show
them.  Derivatives are invariant under the affine change, so derivative
products computed here equal those of the natural map.

The hot loops are numba kernels dispatching on an integer family code and a
packed parameter vector ``kp = [a, b, lo, span]``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import mpmath
import numpy as np
from numba import njit

from .errors import CriticalHit, DomainError, InvalidMap

log = logging.getLogger(__name__)

DOMAIN_TOL = 1e-12
DERIV_FLOOR = 1e-300

FAMILIES = {"logistic": 0, "normal": 1, "chebyshev": 2, "cubic": 3}
ALIASES = {
    "quadratic-logistic": "logistic",
    "quadratic-normal": "normal",
    "chebyshev-2": "chebyshev",
    "chebyshev degree-2": "chebyshev",
    "cubic-multimodal": "cubic",
}
N_PARAMS = {"logistic": 1, "normal": 1, "chebyshev": 0, "cubic": 2}


class PrecisionWarning(UserWarning):
    """An orbit passed numerically through a critical point."""


# ----------------------------------------------------------------------------
# numba kernels (working coordinates)


@njit(cache=True)
def _f(code, kp, u):
    if code == 0:
        return kp[0] * u * (1.0 - u)
    if code == 1:
        v = 2.0 * u - 1.0
        return 1.0 - 0.5 * kp[0] * v * v
    if code == 2:
        v = 2.0 * u - 1.0
        return v * v
    x = kp[2] + kp[3] * u
    return (x * x * x - 3.0 * kp[0] * x + kp[1] - kp[2]) / kp[3]


@njit(cache=True)
def _df(code, kp, u):
    if code == 0:
        return kp[0] * (1.0 - 2.0 * u)
    if code == 1:
        return -2.0 * kp[0] * (2.0 * u - 1.0)
    if code == 2:
        return 4.0 * (2.0 * u - 1.0)
    x = kp[2] + kp[3] * u
    return 3.0 * x * x - 3.0 * kp[0]


@njit(cache=True)
def _diff(code, kp, z, e):
    """f(z + e) - f(z) without cancellation."""
    if code == 0:
        return kp[0] * e * (1.0 - 2.0 * z) - kp[0] * e * e
    if code == 1:
        return -2.0 * kp[0] * e * (2.0 * z - 1.0) - 2.0 * kp[0] * e * e
    if code == 2:
        return 4.0 * e * (2.0 * z - 1.0) + 4.0 * e * e
    x = kp[2] + kp[3] * z
    big_e = kp[3] * e
    return ((3.0 * x * x - 3.0 * kp[0]) * big_e + 3.0 * x * big_e * big_e
            + big_e * big_e * big_e) / kp[3]


@njit(cache=True)
def _diff2(code, kp, z, e, w):
    """f(z + e + w) - f(z + e) for small offsets, without cancellation."""
    if code == 0:
        return w * (kp[0] * (1.0 - 2.0 * z) - kp[0] * (2.0 * e + w))
    if code == 1:
        return w * (-2.0 * kp[0] * (2.0 * z - 1.0) - 2.0 * kp[0] * (2.0 * e + w))
    if code == 2:
        return w * (4.0 * (2.0 * z - 1.0) + 4.0 * (2.0 * e + w))
    x = kp[2] + kp[3] * z
    big_e = kp[3] * e
    big_w = kp[3] * w
    slope = 3.0 * x * x - 3.0 * kp[0] + 3.0 * big_e * (2.0 * x + big_e)
    return big_w * (slope + 3.0 * (x + big_e) * big_w + big_w * big_w) / kp[3]


@njit(cache=True)
def _dfo(code, kp, z, e):
    """f'(z + e) with the offset kept separate from the base point."""
    if code == 0:
        return kp[0] * (1.0 - 2.0 * z) - 2.0 * kp[0] * e
    if code == 1:
        return -2.0 * kp[0] * (2.0 * z - 1.0) - 4.0 * kp[0] * e
    if code == 2:
        return 4.0 * (2.0 * z - 1.0) + 8.0 * e
    x = kp[2] + kp[3] * z
    big_e = kp[3] * e
    return 3.0 * x * x - 3.0 * kp[0] + 3.0 * big_e * (2.0 * x + big_e)


@njit(cache=True)
def _inv(code, kp, bounds, lap, y):
    """Preimage of ``y`` in lap ``lap`` (laps delimited by ``bounds``)."""
    if code == 0:
        a = kp[0]
        disc = (a - 4.0 * y) / a
        if disc < 0.0:
            disc = 0.0
        s = math.sqrt(disc)
        if lap == 0:
            return 2.0 * y / (a * (1.0 + s))
        return 0.5 * (1.0 + s)
    if code == 1:
        r = 2.0 * (1.0 - y) / kp[0]
        if r < 0.0:
            r = 0.0
        s = math.sqrt(r)
        if lap == 0:
            return 0.5 * (1.0 - s)
        return 0.5 * (1.0 + s)
    if code == 2:
        s = math.sqrt(y if y > 0.0 else 0.0)
        if lap == 0:
            return 0.5 * (1.0 - s)
        return 0.5 * (1.0 + s)
    lo = bounds[lap]
    hi = bounds[lap + 1]
    flo = _f(code, kp, lo)
    inc = _f(code, kp, hi) > flo
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        fm = _f(code, kp, mid)
        if (fm < y) == inc:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@njit(cache=True)
def _lap_of(bounds, u):
    k = bounds.shape[0] - 2
    for i in range(1, bounds.shape[0] - 1):
        if u < bounds[i]:
            return i - 1
    return k


@njit(cache=True)
def _orbit(code, kp, u, n):
    pts = np.empty(n + 1)
    logs = np.empty(n + 1)
    pts[0] = u
    logs[0] = 0.0
    hit = -1
    for k in range(n):
        d = abs(_df(code, kp, pts[k]))
        if d < 1e-300:
            if hit < 0:
                hit = k
            logs[k + 1] = -np.inf
        else:
            logs[k + 1] = logs[k] + math.log(d)
        v = _f(code, kp, pts[k])
        if v < 0.0:
            v = 0.0
        elif v > 1.0:
            v = 1.0
        pts[k + 1] = v
    return pts, logs, hit


@njit(cache=True)
def _f_arr(code, kp, u):
    out = np.empty_like(u)
    for i in range(u.shape[0]):
        out[i] = _f(code, kp, u[i])
    return out


@njit(cache=True)
def _df_arr(code, kp, u):
    out = np.empty_like(u)
    for i in range(u.shape[0]):
        out[i] = _df(code, kp, u[i])
    return out


@njit(cache=True)
def _pullback(code, kp, bounds, word, y):
    """Apply the inverse branches ``word[-1], ..., word[0]`` to ``y``.

    Returns the preimage and the log of the forward derivative along it.
    """
    lg = 0.0
    for k in range(word.shape[0] - 1, -1, -1):
        y = _inv(code, kp, bounds, word[k], y)
        d = abs(_df(code, kp, y))
        lg += math.log(d) if d > 0.0 else -np.inf
    return y, lg


# ----------------------------------------------------------------------------
# MapSpec


def canonical_family(name: str) -> str:
    key = name.strip().lower()
    key = ALIASES.get(key, key)
    if key not in FAMILIES:
        raise InvalidMap(f"unknown map family {name!r}")
    return key


def _natural_domain(family: str, params: tuple[float, ...]) -> tuple[float, float]:
    if family == "logistic":
        return 0.0, 1.0
    if family == "normal":
        return -params[0], params[0]
    if family == "chebyshev":
        return -1.0, 1.0
    a, b = params
    roots = np.roots([1.0, 0.0, -(3.0 * a + 1.0), b])
    real = np.sort(roots[np.abs(roots.imag) < 1e-9].real)
    if real.size == 0:
        raise InvalidMap("cubic has no real fixed points")
    out = []
    for x in (float(real[0]), float(real[-1])):
        for _ in range(3):
            g = x ** 3 - (3.0 * a + 1.0) * x + b
            dg = 3.0 * x * x - (3.0 * a + 1.0)
            if dg == 0.0:
                break
            x -= g / dg
        out.append(x)
    return out[0], out[1]


def _natural_critical(family: str, params: tuple[float, ...]) -> list[float]:
    if family == "logistic":
        return [0.5]
    if family in ("normal", "chebyshev"):
        return [0.0]
    a = params[0]
    if a <= 0:
        raise InvalidMap("cubic family needs a > 0 for two critical points")
    r = math.sqrt(a)
    return [-r, r]


@dataclass(frozen=True)
class MapSpec:
    """A smooth interval self-map in working coordinates ``[0, 1]``.

    Attributes:
        family: canonical family id (``logistic``, ``normal``, ``chebyshev``,
            ``cubic``).
        params: family parameters in natural coordinates.
        x_lo, x_hi: natural domain; the working coordinate is
            ``u = (x - x_lo) / (x_hi - x_lo)``.
        critical_points: sorted critical points in working coordinates.
        critical_order: common order of the critical points.
        hp_params: optional decimal strings of the parameters, used by the
            high-precision routines instead of ``params``.
    """

    family: str
    params: tuple[float, ...]
    x_lo: float
    x_hi: float
    critical_points: tuple[float, ...]
    critical_order: float = 2.0
    hp_params: tuple[str, ...] | None = field(default=None, compare=False)

    domain = (0.0, 1.0)

    @cached_property
    def code(self) -> int:
        return FAMILIES[self.family]

    @cached_property
    def kp(self) -> np.ndarray:
        a = self.params[0] if self.params else 0.0
        b = self.params[1] if len(self.params) > 1 else 0.0
        return np.array([a, b, self.x_lo, self.x_hi - self.x_lo], dtype=np.float64)

    @cached_property
    def bounds(self) -> np.ndarray:
        """Lap boundaries: domain ends and critical points."""
        return np.array([0.0, *self.critical_points, 1.0], dtype=np.float64)

    @property
    def n_laps(self) -> int:
        return len(self.critical_points) + 1

    @property
    def span(self) -> float:
        return self.x_hi - self.x_lo

    def f(self, u):
        """Vectorised map in working coordinates."""
        arr = np.asarray(u, dtype=np.float64)
        out = _f_arr(self.code, self.kp, np.atleast_1d(arr).ravel()).reshape(arr.shape)
        return out if arr.ndim else float(out)

    def df(self, u):
        arr = np.asarray(u, dtype=np.float64)
        out = _df_arr(self.code, self.kp, np.atleast_1d(arr).ravel()).reshape(arr.shape)
        return out if arr.ndim else float(out)

    def diff(self, z: float, e: float) -> float:
        """``f(z + e) - f(z)`` evaluated without cancellation."""
        return float(_diff(self.code, self.kp, z, e))

    def inverse(self, lap: int, y: float) -> float:
        return float(_inv(self.code, self.kp, self.bounds, lap, y))

    def lap_of(self, u: float) -> int:
        return int(_lap_of(self.bounds, u))

    def lap_image(self, lap: int) -> tuple[float, float]:
        ya = self.f(self.bounds[lap])
        yb = self.f(self.bounds[lap + 1])
        return (min(ya, yb), max(ya, yb))

    def dist_to_critical(self, u):
        arr = np.asarray(u, dtype=np.float64)
        c = np.asarray(self.critical_points)
        d = np.min(np.abs(arr[..., None] - c), axis=-1)
        return d if arr.ndim else float(d)

    def to_natural(self, u):
        return self.x_lo + self.span * np.asarray(u, dtype=np.float64)

    def to_working(self, x):
        return (np.asarray(x, dtype=np.float64) - self.x_lo) / self.span

    def interval_image(self, lo: float, hi: float) -> tuple[float, float]:
        """Exact image of ``[lo, hi]``: endpoint values and interior critical values."""
        vals = [self.f(lo), self.f(hi)]
        for c in self.critical_points:
            if lo < c < hi:
                vals.append(self.f(c))
        return min(vals), max(vals)

    # -- high precision ------------------------------------------------------

    def mp_params(self) -> tuple:
        src = self.hp_params if self.hp_params is not None else self.params
        return tuple(mpmath.mpf(p) for p in src)

    def mp_setup(self) -> dict:
        """High-precision constants for :meth:`mp_f` and friends."""
        ps = self.mp_params()
        fam = self.family
        if fam == "logistic":
            lo, span = mpmath.mpf(0), mpmath.mpf(1)
        elif fam == "normal":
            lo, span = -ps[0], 2 * ps[0]
        elif fam == "chebyshev":
            lo, span = mpmath.mpf(-1), mpmath.mpf(2)
        else:
            lo, span = mpmath.mpf(self.x_lo), mpmath.mpf(self.span)
        crit = []
        for cn in _natural_critical(fam, tuple(float(p) for p in ps)):
            if fam == "cubic":
                cn = mpmath.sqrt(ps[0]) * (1 if cn > 0 else -1)
            crit.append((mpmath.mpf(cn) - lo) / span)
        return {"params": ps, "lo": lo, "span": span, "crit": crit}

    def mp_f(self, u, setup: dict):
        ps = setup["params"]
        fam = self.family
        if fam == "logistic":
            return ps[0] * u * (1 - u)
        if fam == "normal":
            v = 2 * u - 1
            return 1 - ps[0] * v * v / 2
        if fam == "chebyshev":
            v = 2 * u - 1
            return v * v
        x = setup["lo"] + setup["span"] * u
        return (x ** 3 - 3 * ps[0] * x + ps[1] - setup["lo"]) / setup["span"]

    def mp_df(self, u, setup: dict):
        ps = setup["params"]
        fam = self.family
        if fam == "logistic":
            return ps[0] * (1 - 2 * u)
        if fam == "normal":
            return -2 * ps[0] * (2 * u - 1)
        if fam == "chebyshev":
            return 4 * (2 * u - 1)
        x = setup["lo"] + setup["span"] * u
        return 3 * x * x - 3 * ps[0]

    def mp_inverse(self, lap: int, y, setup: dict):
        ps = setup["params"]
        fam = self.family
        if fam == "logistic":
            a = ps[0]
            s = mpmath.sqrt(max((a - 4 * y) / a, 0))
            return 2 * y / (a * (1 + s)) if lap == 0 else (1 + s) / 2
        if fam == "normal":
            s = mpmath.sqrt(max(2 * (1 - y) / ps[0], 0))
            return (1 - s) / 2 if lap == 0 else (1 + s) / 2
        if fam == "chebyshev":
            s = mpmath.sqrt(max(y, 0))
            return (1 - s) / 2 if lap == 0 else (1 + s) / 2
        # cubic: Newton from the float preimage, safeguarded to the lap
        x = mpmath.mpf(self.inverse(lap, float(y)))
        crit = setup["crit"]
        lo = mpmath.mpf(0) if lap == 0 else crit[lap - 1]
        hi = mpmath.mpf(1) if lap == len(crit) else crit[lap]
        for _ in range(200):
            d = self.mp_df(x, setup)
            if d == 0:
                break
            step = (self.mp_f(x, setup) - y) / d
            x_new = min(max(x - step, lo), hi)
            if abs(x_new - x) <= abs(x) * mpmath.eps * 4:
                x = x_new
                break
            x = x_new
        return x


def make_map(family: str, params=(), critical_order: float | None = None,
             hp_params=None) -> MapSpec:
    """Build and validate a :class:`MapSpec` for a named family."""
    fam = canonical_family(family)
    params = tuple(float(p) for p in params)
    if len(params) != N_PARAMS[fam]:
        raise InvalidMap(f"family {fam} takes {N_PARAMS[fam]} parameter(s), got {len(params)}")
    x_lo, x_hi = _natural_domain(fam, params)
    if not x_hi > x_lo:
        raise InvalidMap("degenerate domain")
    span = x_hi - x_lo
    crit = [(c - x_lo) / span for c in _natural_critical(fam, params)]
    if hp_params is not None:
        hp_params = tuple(str(p) for p in hp_params)
    m = MapSpec(fam, params, x_lo, x_hi, (), 2.0, hp_params)
    polished = []
    for c in crit:
        # one Newton step on f'; second derivative by central difference
        h = 1e-6
        d2 = (m.df(c + h) - m.df(c - h)) / (2 * h)
        polished.append(c - m.df(c) / d2 if d2 != 0 else c)
    ell = 2.0 if critical_order is None else float(critical_order)
    m = MapSpec(fam, params, x_lo, x_hi, tuple(sorted(polished)), ell, hp_params)
    validate_map(m)
    return m


def validate_map(m: MapSpec) -> None:
    """Check invariance of the domain and the critical-point data."""
    if not 1.0 < m.critical_order < math.inf:
        raise InvalidMap("critical order must lie in (1, inf)")
    if abs(m.critical_order - 2.0) > 1e-12:
        raise InvalidMap(
            f"family {m.family} has non-degenerate (order 2) critical points; "
            f"got critical_order={m.critical_order}")
    grid = np.linspace(0.0, 1.0, 4097)
    vals = m.f(np.concatenate([grid, np.asarray(m.critical_points)]))
    if vals.min() < -DOMAIN_TOL or vals.max() > 1.0 + DOMAIN_TOL:
        raise InvalidMap("f does not map the domain into itself")
    cs = m.critical_points
    for c in cs:
        if not 0.0 < c < 1.0:
            raise InvalidMap("critical point outside the open domain")
        if abs(m.df(c)) >= 1e-12:
            raise InvalidMap(f"|f'(c)| = {abs(m.df(c)):.3g} at listed critical point {c}")
    bounds = m.bounds
    for i in range(len(bounds) - 1):
        inner = np.linspace(bounds[i], bounds[i + 1], 259)[1:-1]
        s = np.sign(m.df(inner))
        if np.any(s != s[0]):
            raise InvalidMap("f' changes sign between consecutive critical points")


# ----------------------------------------------------------------------------
# operations


@dataclass(frozen=True)
class Orbit:
    """Orbit of ``start`` with running sums of ``log|f'|``.

    ``log_deriv_partials[k]`` is the sum over ``j < k`` of ``log|f'(x_j)|``.
    ``critical_step`` is the first index whose derivative underflowed, or -1.
    """

    start: float
    points: np.ndarray
    log_deriv_partials: np.ndarray
    critical_step: int = -1

    @property
    def hit_critical(self) -> bool:
        return self.critical_step >= 0


def _check_point(x: float) -> float:
    if x < -DOMAIN_TOL or x > 1.0 + DOMAIN_TOL or not math.isfinite(x):
        raise DomainError(f"x={x!r} outside the domain [0, 1]")
    return min(max(x, 0.0), 1.0)


def _from_natural(m: MapSpec, x: float) -> float:
    u = (x - m.x_lo) / m.span
    if -DOMAIN_TOL < u < 0.0:
        u = 0.0
    elif 1.0 < u < 1.0 + DOMAIN_TOL:
        u = 1.0
    return u


def eval_map(m: MapSpec, x: float, natural: bool = False) -> float:
    """Return ``f(x)``; with ``natural=True`` in- and output use natural coordinates."""
    u = _check_point(_from_natural(m, x) if natural else float(x))
    y = float(_f(m.code, m.kp, u))
    if y < 0.0 or y > 1.0:
        if y < -DOMAIN_TOL or y > 1.0 + DOMAIN_TOL:
            raise DomainError(f"f({u}) = {y} leaves the domain")
        log.debug("clamped f(%r) = %r into the domain", u, y)
        y = min(max(y, 0.0), 1.0)
    return float(m.to_natural(y)) if natural else y


def eval_deriv(m: MapSpec, x: float, natural: bool = False) -> float:
    """Signed derivative ``f'(x)`` (coordinate independent)."""
    u = _check_point(_from_natural(m, x) if natural else float(x))
    return float(_df(m.code, m.kp, u))


def iterate(m: MapSpec, x: float, n: int) -> Orbit:
    """Orbit of length ``n + 1`` with running log-derivative sums."""
    if n < 0:
        raise ValueError("n must be >= 0")
    u = _check_point(float(x))
    pts, logs, hit = _orbit(m.code, m.kp, u, int(n))
    if hit >= 0:
        warnings.warn(f"orbit of {u} meets a critical point at step {hit}",
                      PrecisionWarning, stacklevel=2)
    return Orbit(u, pts, logs, int(hit))


def orbit_derivative_log(m: MapSpec, x: float, n: int) -> float:
    """``log|(f^n)'(x)|`` as a sum of logs along the orbit."""
    if n == 0:
        _check_point(float(x))
        return 0.0
    u = _check_point(float(x))
    pts, logs, hit = _orbit(m.code, m.kp, u, int(n))
    if 0 <= hit < n:
        raise CriticalHit(f"f^{hit}({u}) is numerically critical", hit)
    return float(logs[n])


def pullback(m: MapSpec, word, y: float) -> tuple[float, float]:
    """Pull ``y`` back along the lap sequence ``word`` (forward order).

    Returns ``(x, log|(f^len(word))'(x)|)``.
    """
    w = np.asarray(word, dtype=np.int64)
    x, lg = _pullback(m.code, m.kp, m.bounds, w, float(y))
    return float(x), float(lg)


def mp_pullback(m: MapSpec, word, y, prec: int, setup: dict | None = None):
    """High-precision pullback; returns an ``mpf`` preimage."""
    with mpmath.workprec(prec):
        st = m.mp_setup() if setup is None else setup
        y = mpmath.mpf(y)
        for lap in reversed(list(word)):
            y = m.mp_inverse(int(lap), y, st)
        return +y


def mp_forward(m: MapSpec, x, n: int, prec: int, setup: dict | None = None):
    with mpmath.workprec(prec):
        st = m.mp_setup() if setup is None else setup
        x = mpmath.mpf(x)
        for _ in range(n):
            x = m.mp_f(x, st)
        return +x
