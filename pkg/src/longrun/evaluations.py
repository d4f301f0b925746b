"""Evaluations: probability measures on the half-line used to weight running costs.

Every measure here is one of a few closed kinds (Cesaro, Abel, atomic,
piecewise-constant density), a smoothing of one of those, or a finite
mixture. All kinds expose the same small numerical core:

* ``antiderivative(x, n)`` -- the n-fold integral of the cdf, exact,
* ``density(x)`` -- only for atom-free kinds,
* ``kinks()`` -- points where the density is not smooth (or atoms sit),
* ``horizon(tail)`` -- a time after which at most ``tail`` mass remains.

Everything else (shift total variation, sampled quadrature weights,
smoothing) is built on top of that core.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import integrate as _spi
from scipy.optimize import brentq

from .errors import (
    InvalidEvaluationError,
    InvalidIntegrandError,
    InvalidMixtureError,
    InvalidWindowError,
    NoDensityError,
)

MASS_TOL = 1e-12
ABEL_TAIL = 1e-10

# 5-point Gauss-Legendre on [0, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def _as_array(x):
    return np.asarray(x, dtype=float)


class Evaluation:
    """Base class. Instances are immutable and safe to share between threads."""

    kind: str = ""

    # -- numerical core -------------------------------------------------
    def antiderivative(self, x, n: int = 0):
        raise NotImplementedError

    def cdf(self, x):
        """theta([0, x]) (right-continuous); zero for x < 0."""
        return self.antiderivative(x, 0)

    def density(self, x):
        raise NotImplementedError

    def kinks(self) -> np.ndarray:
        raise NotImplementedError

    def horizon(self, tail: float = ABEL_TAIL) -> float:
        raise NotImplementedError

    @property
    def has_atoms(self) -> bool:
        return False

    def atoms(self):
        """(times, weights) of the atomic part, unnormalised for mixtures."""
        return np.empty(0), np.empty(0)

    def density_parts(self):
        """List of (coefficient, atom-free evaluation) making up the a.c. part."""
        return [(1.0, self)]

    # -- derived quantities ---------------------------------------------
    def mass(self, lo, hi):
        """theta((lo, hi])."""
        return self.cdf(hi) - self.cdf(lo)

    def cell_moments(self, edges):
        """Zeroth and first local moments on the cells ``(e_i, e_{i+1}]``.

        Returns ``(m0, m1)`` with ``m0_i = theta(cell)`` and
        ``m1_i = int_cell (s - e_i) dtheta(s)``.
        """
        edges = _as_array(edges)
        m0 = np.diff(self.cdf(edges))
        m1 = _gl_first_moment(self.density, edges, self.kinks())
        return m0, m1

    def to_dict(self) -> dict:
        raise NotImplementedError

    def descriptor(self) -> str:
        raise NotImplementedError

    def __repr__(self):
        return self.descriptor()


def _gl_first_moment(density, edges, kinks):
    a, b = edges[:-1], edges[1:]
    h = b - a
    nodes = a[:, None] + h[:, None] * _GL_X[None, :]
    vals = density(nodes) * (nodes - a[:, None])
    m1 = (vals * _GL_W[None, :]).sum(axis=1) * h
    # cells with an interior kink are re-integrated piece by piece
    kinks = np.asarray(kinks, dtype=float)
    if kinks.size:
        idx = np.searchsorted(edges, kinks, side="right") - 1
        inside = (idx >= 0) & (idx < len(a))
        for i in np.unique(idx[inside]):
            ks = kinks[(kinks > a[i]) & (kinks < b[i])]
            if ks.size == 0:
                continue
            pts = np.concatenate([[a[i]], np.sort(ks), [b[i]]])
            lo, hi = pts[:-1], pts[1:]
            sub = lo[:, None] + (hi - lo)[:, None] * _GL_X[None, :]
            m1[i] = ((density(sub) * (sub - a[i])) * _GL_W).sum(axis=1) @ (hi - lo)
    return m1


def _poly_tail(z, w, n):
    """n-fold antiderivative of clip(z, 0, w), evaluated stably."""
    z = _as_array(z)
    out = np.zeros_like(z)
    fact = math.factorial(n + 1)
    inner = (z > 0) & (z <= w)
    out[inner] = z[inner] ** (n + 1) / fact
    outer = z > w
    if np.any(outer):
        zo = z[outer]
        acc = np.zeros_like(zo)
        for j in range(n + 1):
            acc += zo**j * (zo - w) ** (n - j)
        out[outer] = w * acc / fact
    return out


@dataclass(frozen=True, repr=False)
class PiecewiseDensity(Evaluation):
    """Density constant on each cell ``[edges[k], edges[k+1])``; bounded support."""

    edges: tuple
    densities: tuple
    kind = "piecewise"

    def __post_init__(self):
        e = _as_array(self.edges)
        d = _as_array(self.densities)
        if e.ndim != 1 or e.size < 2 or d.size != e.size - 1:
            raise InvalidEvaluationError("piecewise density needs len(densities) == len(edges) - 1")
        if e[0] < 0 or np.any(np.diff(e) <= 0) or not np.all(np.isfinite(e)):
            raise InvalidEvaluationError("edges must be finite, nonnegative and strictly increasing")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise InvalidEvaluationError("densities must be finite and nonnegative")
        total = float(d @ np.diff(e))
        if abs(total - 1.0) > MASS_TOL:
            raise InvalidEvaluationError(f"piecewise density has mass {total!r}, expected 1")
        object.__setattr__(self, "edges", tuple(float(v) for v in e))
        object.__setattr__(self, "densities", tuple(float(v) for v in d))

    @classmethod
    def from_weights(cls, edges, weights):
        """Build from cell masses; weights are normalised to sum to one."""
        e = _as_array(edges)
        w = _as_array(weights)
        w = w / w.sum()
        return cls(tuple(e), tuple(w / np.diff(e)))

    @cached_property
    def _e(self):
        return np.array(self.edges)

    @cached_property
    def _d(self):
        return np.array(self.densities)

    def antiderivative(self, x, n=0):
        x = _as_array(x)
        e, d = self._e, self._d
        w = np.diff(e)
        out = np.zeros(x.shape)
        for k in range(d.size):
            if d[k] != 0.0:
                out += d[k] * _poly_tail(x - e[k], w[k], n)
        return out

    def cdf(self, x):
        x = _as_array(x)
        e, d = self._e, self._d
        cum = np.concatenate([[0.0], np.cumsum(d * np.diff(e))])
        idx = np.clip(np.searchsorted(e, x, side="right") - 1, 0, d.size - 1)
        val = cum[idx] + d[idx] * (x - e[idx])
        val = np.where(x < e[0], 0.0, val)
        return np.where(x >= e[-1], 1.0, val)

    def density(self, x):
        x = _as_array(x)
        e, d = self._e, self._d
        idx = np.clip(np.searchsorted(e, x, side="right") - 1, 0, d.size - 1)
        return np.where((x >= e[0]) & (x < e[-1]), d[idx], 0.0)

    def kinks(self):
        return self._e.copy()

    def horizon(self, tail=ABEL_TAIL):
        return float(self._e[-1])

    def to_dict(self):
        return {"kind": "piecewise", "edges": list(self.edges), "densities": list(self.densities)}

    def descriptor(self):
        return f"piecewise(n={len(self.densities)},[{self.edges[0]:g},{self.edges[-1]:g}])"


@dataclass(frozen=True, repr=False)
class Cesaro(Evaluation):
    """Uniform evaluation on ``[0, horizon]`` (the t-horizon average)."""

    horizon_t: float
    kind = "cesaro"

    def __post_init__(self):
        if not (self.horizon_t > 0 and math.isfinite(self.horizon_t)):
            raise InvalidEvaluationError("Cesaro horizon must be positive")
        object.__setattr__(self, "horizon_t", float(self.horizon_t))

    def antiderivative(self, x, n=0):
        return _poly_tail(_as_array(x), self.horizon_t, n) / self.horizon_t

    def cdf(self, x):
        return np.clip(_as_array(x), 0.0, self.horizon_t) / self.horizon_t

    def density(self, x):
        x = _as_array(x)
        return np.where((x >= 0) & (x <= self.horizon_t), 1.0 / self.horizon_t, 0.0)

    def kinks(self):
        return np.array([0.0, self.horizon_t])

    def horizon(self, tail=ABEL_TAIL):
        return self.horizon_t

    def to_dict(self):
        return {"kind": "cesaro", "horizon": self.horizon_t}

    def descriptor(self):
        return f"cesaro(t={self.horizon_t:g})"


def _abel_series(z, n, terms=40):
    # sum_{j>=1} (-1)^(j+1) z^(n+j) / (n+j)!
    out = np.zeros_like(z)
    term = z**n / math.factorial(n)
    for j in range(1, terms):
        term = term * z / (n + j)
        out += term if j % 2 == 1 else -term
    return out


@dataclass(frozen=True, repr=False)
class Abel(Evaluation):
    """Exponential evaluation with density ``rate * exp(-rate * s)``."""

    rate: float
    kind = "abel"

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise InvalidEvaluationError("Abel rate must be positive")
        object.__setattr__(self, "rate", float(self.rate))

    def antiderivative(self, x, n=0):
        x = np.maximum(_as_array(x), 0.0)
        r = self.rate
        z = r * x
        if n == 0:
            return -np.expm1(-z)
        small = z < 1.0
        out = np.empty_like(z)
        out[small] = _abel_series(z[small], n) / r**n
        zb = z[~small]
        taylor = sum((-zb) ** k / math.factorial(k) for k in range(n))
        out[~small] = x[~small] ** n / math.factorial(n) - (-1) ** n * (np.exp(-zb) - taylor) / r**n
        return out

    def density(self, x):
        x = _as_array(x)
        return np.where(x >= 0, self.rate * np.exp(-self.rate * np.maximum(x, 0.0)), 0.0)

    def cell_moments(self, edges):
        edges = _as_array(edges)
        a = edges[:-1]
        h = np.diff(edges)
        r = self.rate
        ea = np.exp(-r * a)
        m0 = ea * -np.expm1(-r * h)
        # int_0^h u r e^{-r u} du = (1 - e^{-rh}(1 + rh)) / r
        rh = r * h
        core = np.where(rh < 1e-3, rh**2 / 2 - rh**3 / 3 + rh**4 / 8, -np.expm1(-rh) - rh * np.exp(-rh))
        return m0, ea * core / r

    def kinks(self):
        return np.array([0.0])

    def horizon(self, tail=ABEL_TAIL):
        return math.log(1.0 / tail) / self.rate

    def to_dict(self):
        return {"kind": "abel", "rate": self.rate}

    def descriptor(self):
        return f"abel(rho={self.rate:g})"


@dataclass(frozen=True, repr=False)
class Atomic(Evaluation):
    """Finite sum of Dirac masses."""

    times: tuple
    weights: tuple
    kind = "atomic"

    def __post_init__(self):
        t = np.atleast_1d(_as_array(self.times))
        w = np.atleast_1d(_as_array(self.weights))
        if t.size == 0 or t.size != w.size:
            raise InvalidEvaluationError("atomic evaluation needs matching nonempty times/weights")
        if np.any(t < 0) or not np.all(np.isfinite(t)):
            raise InvalidEvaluationError("atom times must be finite and nonnegative")
        if np.any(w <= 0):
            raise InvalidEvaluationError("atom weights must be positive")
        if abs(w.sum() - 1.0) > MASS_TOL:
            raise InvalidEvaluationError(f"atom weights sum to {w.sum()!r}, expected 1")
        order = np.argsort(t, kind="stable")
        object.__setattr__(self, "times", tuple(float(v) for v in t[order]))
        object.__setattr__(self, "weights", tuple(float(v) for v in w[order]))

    @classmethod
    def dirac(cls, t=0.0):
        return cls((t,), (1.0,))

    @cached_property
    def _t(self):
        return np.array(self.times)

    @cached_property
    def _w(self):
        return np.array(self.weights)

    @property
    def has_atoms(self):
        return True

    def atoms(self):
        return self._t, self._w

    def density_parts(self):
        return []

    def antiderivative(self, x, n=0):
        x = _as_array(x)
        z = x[..., None] - self._t
        if n == 0:
            vals = (z >= 0).astype(float)
        else:
            vals = np.where(z > 0, z, 0.0) ** n / math.factorial(n)
        return vals @ self._w

    def density(self, x):
        raise NoDensityError("atomic evaluation has no density")

    def cell_moments(self, edges):
        edges = _as_array(edges)
        n = edges.size - 1
        m0 = np.zeros(n)
        m1 = np.zeros(n)
        idx = np.searchsorted(edges, self._t, side="left") - 1
        ok = (idx >= 0) & (idx < n)
        np.add.at(m0, idx[ok], self._w[ok])
        np.add.at(m1, idx[ok], self._w[ok] * (self._t[ok] - edges[idx[ok]]))
        return m0, m1

    def kinks(self):
        return self._t.copy()

    def horizon(self, tail=ABEL_TAIL):
        return float(self._t[-1])

    def to_dict(self):
        return {"kind": "atomic", "times": list(self.times), "weights": list(self.weights)}

    def descriptor(self):
        if len(self.times) == 1:
            return f"dirac({self.times[0]:g})"
        return f"atomic(n={len(self.times)})"


@dataclass(frozen=True, repr=False)
class Smoothed(Evaluation):
    """Moving-average smoothing: density ``s -> base([s - window, s]) / window``."""

    base: Evaluation
    window: float
    kind = "smoothed"

    def __post_init__(self):
        if not (self.window > 0 and math.isfinite(self.window)):
            raise InvalidWindowError("smoothing window must be positive")
        if self.base.has_atoms:
            raise InvalidEvaluationError("use smooth() for evaluations with atoms")
        object.__setattr__(self, "window", float(self.window))

    def antiderivative(self, x, n=0):
        x = _as_array(x)
        S = self.window
        return (self.base.antiderivative(x, n + 1) - self.base.antiderivative(x - S, n + 1)) / S

    def density(self, x):
        x = _as_array(x)
        S = self.window
        return np.where(x >= 0, (self.base.cdf(x) - self.base.cdf(x - S)) / S, 0.0)

    def kinks(self):
        k = self.base.kinks()
        return np.unique(np.concatenate([k, k + self.window]))

    def horizon(self, tail=ABEL_TAIL):
        return self.base.horizon(tail) + self.window

    def to_dict(self):
        return {"kind": "smoothed", "base": self.base.to_dict(), "window": self.window}

    def descriptor(self):
        return f"smooth({self.base.descriptor()},S={self.window:g})"


@dataclass(frozen=True, repr=False)
class Mixture(Evaluation):
    """Convex combination of evaluations."""

    components: tuple  # of (coefficient, Evaluation)
    kind = "mixture"

    def __post_init__(self):
        comps = tuple((float(c), th) for c, th in self.components)
        if not comps:
            raise InvalidMixtureError("empty mixture")
        coefs = np.array([c for c, _ in comps])
        if np.any(coefs < 0) or np.any(~np.isfinite(coefs)):
            raise InvalidMixtureError("mixture coefficients must be nonnegative")
        if abs(coefs.sum() - 1.0) > MASS_TOL:
            raise InvalidMixtureError(f"mixture coefficients sum to {coefs.sum()!r}, expected 1")
        for _, th in comps:
            if not isinstance(th, Evaluation):
                raise InvalidMixtureError("mixture components must be evaluations")
        object.__setattr__(self, "components", comps)

    @property
    def has_atoms(self):
        return any(c > 0 and th.has_atoms for c, th in self.components)

    def atoms(self):
        ts, ws = [np.empty(0)], [np.empty(0)]
        for c, th in self.components:
            t, w = th.atoms()
            ts.append(t)
            ws.append(c * w)
        return np.concatenate(ts), np.concatenate(ws)

    def density_parts(self):
        out = []
        for c, th in self.components:
            out.extend((c * cc, part) for cc, part in th.density_parts())
        return out

    def antiderivative(self, x, n=0):
        return sum(c * th.antiderivative(x, n) for c, th in self.components)

    def density(self, x):
        if self.has_atoms:
            raise NoDensityError("mixture has an atomic component")
        return sum(c * th.density(x) for c, th in self.components)

    def cell_moments(self, edges):
        m0 = 0.0
        m1 = 0.0
        for c, th in self.components:
            a, b = th.cell_moments(edges)
            m0 = m0 + c * a
            m1 = m1 + c * b
        return m0, m1

    def kinks(self):
        return np.unique(np.concatenate([th.kinks() for _, th in self.components]))

    def horizon(self, tail=ABEL_TAIL):
        return max(th.horizon(tail) for c, th in self.components if c > 0)

    def to_dict(self):
        return {
            "kind": "mixture",
            "components": [{"coefficient": c, "evaluation": th.to_dict()} for c, th in self.components],
        }

    def descriptor(self):
        return "mix(" + ",".join(f"{c:g}*{th.descriptor()}" for c, th in self.components) + ")"


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def density_at(theta: Evaluation, s):
    """Density of ``theta`` at time(s) ``s``.

    Raises
    ------
    NoDensityError
        If ``theta`` has an atomic part.
    """
    if theta.has_atoms:
        raise NoDensityError(f"{theta.descriptor()} has no density")
    out = theta.density(s)
    return float(out) if np.ndim(out) == 0 else out


def _probe(h, pts):
    vals = np.array([float(h(p)) for p in pts])
    if not np.all(np.isfinite(vals)):
        raise InvalidIntegrandError("integrand is not finite at a sampled point")
    return vals


def integrate(theta: Evaluation, h: Callable[[float], float], tol: float = 1e-8,
              return_error: bool = False):
    """Integrate a bounded function of time against ``theta``.

    Density parts are integrated with adaptive quadrature between kinks;
    infinite supports are truncated where the tail mass drops below 1e-10
    and the truncation is charged ``sup|h| * tail`` in the error estimate.
    """
    t_atoms, w_atoms = theta.atoms()
    total = 0.0
    err = 0.0
    if t_atoms.size:
        vals = _probe(h, t_atoms)
        total += float(vals @ w_atoms)
    parts = theta.density_parts()
    if parts:
        def dens(x):
            return sum(c * p.density(x) for c, p in parts)

        end = max(p.horizon(ABEL_TAIL) for _, p in parts)
        tail = sum(c * (1.0 - float(p.cdf(end))) for c, p in parts)
        kinks = np.unique(np.concatenate([p.kinks() for _, p in parts] + [[0.0, end]]))
        kinks = kinks[(kinks >= 0) & (kinks <= end)]
        # long pieces are split so quad sees the decay scale
        pts = [kinks[0]]
        for lo, hi in zip(kinks[:-1], kinks[1:]):
            n_sub = int(min(64, max(1, math.ceil((hi - lo) / max(end / 16, 1e-12)))))
            pts.extend(np.linspace(lo, hi, n_sub + 1)[1:])
        probe_pts = np.linspace(0, end, 33)
        hv = _probe(h, probe_pts)
        for lo, hi in zip(pts[:-1], pts[1:]):
            val, e = _spi.quad(lambda x: float(h(x)) * float(dens(x)), lo, hi,
                               epsabs=tol / (4 * len(pts)), epsrel=1e-12, limit=200)
            if not math.isfinite(val):
                raise InvalidIntegrandError("integrand is not finite")
            total += val
            err += e
        err += float(np.max(np.abs(hv))) * tail
    if return_error:
        return total, err
    return total


def quadrature_weights(theta: Evaluation, times):
    """Weights ``w`` with ``sum(w * h(times))`` equal to the integral of the
    piecewise-linear interpolant of ``h`` against ``theta``.

    Mass beyond ``times[-1]`` is put on the last sample; its size is
    returned as the second value so callers can bound the truncation.
    """
    t = _as_array(times)
    m0, m1 = theta.cell_moments(t)
    dt = np.diff(t)
    w = np.zeros(t.size)
    w[0] += float(theta.cdf(t[0]))
    slope = m1 / dt
    w[:-1] += m0 - slope
    w[1:] += slope
    tail = max(0.0, 1.0 - float(theta.cdf(t[-1])))
    w[-1] += tail
    return w, tail


# -- shift total variation ---------------------------------------------------

def _atomic_shift_tv(times, weights, s):
    """sum_x (w(x) - w(x + s))^+ over atom locations x."""
    if times.size == 0:
        return 0.0
    ut, inv = np.unique(times, return_inverse=True)
    uw = np.zeros(ut.size)
    np.add.at(uw, inv, weights)
    tol = 1e-12 * max(1.0, float(ut[-1]))
    j = np.searchsorted(ut, ut + s - tol, side="left")
    shifted = np.zeros(ut.size)
    hit = j < ut.size
    hit[hit] = np.abs(ut[j[hit]] - (ut[hit] + s)) <= tol
    shifted[hit] = uw[j[hit]]
    return float(np.maximum(uw - shifted, 0.0).sum())


def _piecewise_shift(theta: PiecewiseDensity, s, mode):
    e = theta._e
    grid = np.unique(np.concatenate([e, e - s]))
    grid = grid[grid >= 0]
    if grid.size < 2:
        return 0.0
    mid = 0.5 * (grid[:-1] + grid[1:])
    d = theta.density(mid) - theta.density(mid + s)
    width = np.diff(grid)
    if mode == "pos":
        return float(np.maximum(d, 0.0) @ width)
    if mode == "neg":
        return float(np.maximum(-d, 0.0) @ width)
    return float(np.abs(d) @ width)


def _density_shift_part(parts, s, sign=1.0, n_grid=2048):
    """int (sign * (f(t) - f(t+s)))^+ dt for the combined density of ``parts``."""
    if not parts:
        return 0.0

    def dens(x):
        return sum(c * p.density(x) for c, p in parts)

    def cdf(x):
        return sum(c * p.cdf(x) for c, p in parts)

    end = max(p.horizon(1e-15) for _, p in parts)
    kinks = np.unique(np.concatenate([p.kinks() for _, p in parts]))
    pts = np.concatenate([np.linspace(0.0, end, n_grid), kinks, kinks - s, [end]])
    pts = np.unique(pts[(pts >= 0) & (pts <= end)])
    a, b = pts[:-1], pts[1:]
    eps = (b - a) * 1e-9

    def d(t):
        return sign * (dens(t) - dens(t + s))

    def mass(lo, hi):
        return sign * ((cdf(hi) - cdf(lo)) - (cdf(hi + s) - cdf(lo + s)))

    dl, dr = d(a + eps), d(b - eps)
    # rounding noise on flat stretches would otherwise look like sign changes
    floor = 1e-13 * max(float(np.max(np.abs(dens(pts)))), 1e-300)
    dl[np.abs(dl) <= floor] = 0.0
    dr[np.abs(dr) <= floor] = 0.0
    pos = ((dl > 0) & (dr >= 0)) | ((dl >= 0) & (dr > 0))
    total = float(np.sum(mass(a[pos], b[pos])))
    for i in np.flatnonzero(((dl > 0) & (dr < 0)) | ((dl < 0) & (dr > 0))):
        lo, hi = a[i] + eps[i], b[i] - eps[i]
        root = brentq(lambda t: float(d(t)), lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        if dl[i] > 0:
            total += float(mass(a[i], root))
        else:
            total += float(mass(root, b[i]))
    return total


def shift_tv(theta: Evaluation, s: float) -> float:
    """Shift total variation ``max_Q |theta(Q) - theta(Q + s)|``.

    The maximising set is ``{t : f(t) > f(t + s)}``: shifting right never
    brings mass onto the half-line, so the positive part dominates the
    negative part and ``TV_s = int (f(t) - f(t+s))^+ dt``. Atomic parts are
    mutually singular with density parts and are handled combinatorially.
    """
    if s < 0:
        raise ValueError("shift must be nonnegative")
    if s == 0:
        return 0.0
    if isinstance(theta, Cesaro):
        return min(s / theta.horizon_t, 1.0)
    if isinstance(theta, Abel):
        return float(-math.expm1(-theta.rate * s))
    if isinstance(theta, PiecewiseDensity):
        return _piecewise_shift(theta, s, "pos")
    t_atoms, w_atoms = theta.atoms()
    total = _atomic_shift_tv(t_atoms, w_atoms, s)
    total += _density_shift_part(theta.density_parts(), s)
    return float(min(max(total, 0.0), 1.0))


def shift_l1(theta: Evaluation, s: float) -> float:
    """``int |f(t+s) - f(t)| dt`` over the half-line, for atom-free evaluations."""
    if theta.has_atoms:
        raise NoDensityError("shift_l1 needs a density")
    if s == 0:
        return 0.0
    if isinstance(theta, PiecewiseDensity):
        return _piecewise_shift(theta, s, "abs")
    parts = theta.density_parts()
    return _density_shift_part(parts, s, 1.0) + _density_shift_part(parts, s, -1.0)


def shift_tv_profile(theta: Evaluation, S: float, steps: int = 1000):
    """TV_s on the grid ``s_k = k S / steps``, k = 0..steps."""
    grid = np.linspace(0.0, S, steps + 1)
    return grid, np.array([shift_tv(theta, float(s)) for s in grid])


def sup_shift_tv(theta: Evaluation, S: float, steps: int | None = None) -> float:
    """``sup_{0 <= s <= S} TV_s(theta)``.

    Cesaro and Abel are monotone in ``s`` so the sup sits at ``s = S``;
    other kinds are scanned on a grid of step ``S / steps`` (default 1000).
    """
    if S < 0:
        raise ValueError("S must be nonnegative")
    if S == 0:
        return 0.0
    if isinstance(theta, (Cesaro, Abel)):
        return shift_tv(theta, S)
    _, tv = shift_tv_profile(theta, S, steps or 1000)
    return float(tv.max())


# -- constructors ------------------------------------------------------------

def smooth(theta: Evaluation, S: float) -> Evaluation:
    """Return the smoothing with density ``s -> theta([s - S, s]) / S``.

    Atomic evaluations smooth to an exact piecewise-constant density;
    mixtures smooth component-wise.
    """
    if not (S > 0):
        raise InvalidWindowError(f"invalid window {S!r}")
    if isinstance(theta, Atomic):
        t, w = theta._t, theta._w
        edges = np.unique(np.concatenate([t, t + S]))
        mid = 0.5 * (edges[:-1] + edges[1:])
        covered = (mid[:, None] >= t[None, :]) & (mid[:, None] <= t[None, :] + S)
        dens = covered.astype(float) @ w / S
        # renormalise the last bits so the mass check sees exactly one
        dens = dens / float(dens @ np.diff(edges))
        return PiecewiseDensity(tuple(edges), tuple(dens))
    if isinstance(theta, Mixture):
        return Mixture(tuple((c, smooth(th, S)) for c, th in theta.components))
    return Smoothed(theta, S)


def mix(pairs: Sequence) -> Mixture:
    """Mixture of ``(coefficient, evaluation)`` pairs; coefficients sum to one."""
    return Mixture(tuple((c, th) for c, th in pairs))


# -- serialization -----------------------------------------------------------

def from_dict(data: dict) -> Evaluation:
    kind = data.get("kind")
    if kind == "cesaro":
        return Cesaro(data["horizon"])
    if kind == "abel":
        return Abel(data["rate"])
    if kind == "atomic":
        return Atomic(tuple(data["times"]), tuple(data["weights"]))
    if kind == "piecewise":
        return PiecewiseDensity(tuple(data["edges"]), tuple(data["densities"]))
    if kind == "mixture":
        return Mixture(tuple((c["coefficient"], from_dict(c["evaluation"])) for c in data["components"]))
    if kind == "smoothed":
        return smooth(from_dict(data["base"]), data["window"])
    raise InvalidEvaluationError(f"unknown evaluation kind {kind!r}")


EVALUATION_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$id": "evaluation",
    "type": "object",
    "required": ["kind"],
    "oneOf": [
        {"properties": {"kind": {"const": "cesaro"}, "horizon": {"type": "number", "exclusiveMinimum": 0}},
         "required": ["horizon"]},
        {"properties": {"kind": {"const": "abel"}, "rate": {"type": "number", "exclusiveMinimum": 0}},
         "required": ["rate"]},
        {"properties": {"kind": {"const": "atomic"},
                        "times": {"type": "array", "items": {"type": "number", "minimum": 0}},
                        "weights": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}}},
         "required": ["times", "weights"]},
        {"properties": {"kind": {"const": "piecewise"},
                        "edges": {"type": "array", "items": {"type": "number"}},
                        "densities": {"type": "array", "items": {"type": "number", "minimum": 0}}},
         "required": ["edges", "densities"]},
        {"properties": {"kind": {"const": "mixture"},
                        "components": {"type": "array", "items": {
                            "type": "object", "required": ["coefficient", "evaluation"],
                            "properties": {"coefficient": {"type": "number", "minimum": 0},
                                           "evaluation": {"$ref": "evaluation"}}}}},
         "required": ["components"]},
        {"properties": {"kind": {"const": "smoothed"}, "base": {"$ref": "evaluation"},
                        "window": {"type": "number", "exclusiveMinimum": 0}},
         "required": ["base", "window"]},
    ],
}
