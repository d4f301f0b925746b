"""Controlled ODE problems, piecewise-constant controls and fixed-step RK4.

Vector fields and costs are vectorised: ``f(y, u)`` takes states of shape
``(..., d)`` and control points of shape ``(..., m)``; ``g(y)`` maps
``(..., d)`` to ``(...)``. The control set is always a finite grid
(``control_grid``, shape ``(K, m)``) and controls refer to it by index.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvarianceViolation, ShadowFailure

BOX_INFLATION = 0.01
STABILITY_LIMIT = 0.1


@dataclass(frozen=True, eq=False)
class ControlProblem:
    name: str
    f: Callable
    g: Callable
    control_grid: np.ndarray
    box_lo: np.ndarray
    box_hi: np.ndarray
    lipschitz_L: float
    growth_a: float
    # membership test for the invariant set Y (inside the box); None means the box itself
    invariant: Callable | None = None
    cost_range: tuple | None = None
    grid_slack: float = 0.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        grid = np.atleast_2d(np.asarray(self.control_grid, dtype=float))
        lo = np.asarray(self.box_lo, dtype=float)
        hi = np.asarray(self.box_hi, dtype=float)
        if grid.shape[0] == 0:
            raise ValueError("control grid must be nonempty")
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("state box must be bounded with positive volume")
        object.__setattr__(self, "control_grid", grid)
        object.__setattr__(self, "box_lo", lo)
        object.__setattr__(self, "box_hi", hi)

    @property
    def dim(self) -> int:
        return self.box_lo.size

    def contains(self, y, tol=1e-9) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        span = self.box_hi - self.box_lo
        inside = np.all((y >= self.box_lo - tol * span) & (y <= self.box_hi + tol * span), axis=-1)
        if self.invariant is not None:
            inside &= self.invariant(y)
        return inside

    def sample_states(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Uniform samples from Y by rejection from the box."""
        out = []
        have = 0
        while have < n:
            cand = rng.uniform(self.box_lo, self.box_hi, size=(2 * (n - have) + 8, self.dim))
            cand = cand[self.contains(cand)]
            out.append(cand)
            have += len(cand)
        return np.concatenate(out)[:n]

    def radius(self) -> float:
        """max ||y|| over the box."""
        return float(np.linalg.norm(np.maximum(np.abs(self.box_lo), np.abs(self.box_hi))))

    def speed_bound(self) -> float:
        return self.growth_a * (1.0 + self.radius())

    def cost_oscillation(self) -> float:
        if self.cost_range is None:
            return math.inf
        return float(self.cost_range[1] - self.cost_range[0])


@dataclass(frozen=True)
class PureControl:
    """Piecewise-constant control: ``values[i]`` on ``[breakpoints[i], breakpoints[i+1])``.

    The last value is held forever.
    """

    breakpoints: tuple
    values: tuple

    def __post_init__(self):
        b = tuple(float(x) for x in self.breakpoints)
        v = tuple(int(x) for x in self.values)
        if not b or b[0] != 0.0:
            raise ValueError("breakpoints must start at 0")
        if len(b) != len(v):
            raise ValueError("one value per breakpoint")
        if any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, index: int) -> "PureControl":
        return cls((0.0,), (index,))

    @classmethod
    def from_steps(cls, indices, dt: float) -> "PureControl":
        """Compress a per-step index sequence into breakpoints."""
        idx = np.asarray(indices, dtype=int)
        if idx.size == 0:
            return cls.constant(0)
        change = np.flatnonzero(np.diff(idx)) + 1
        starts = np.concatenate([[0], change])
        return cls(tuple(starts * dt), tuple(idx[starts]))

    def index_at(self, t: float) -> int:
        i = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return self.values[max(i, 0)]

    def step_indices(self, n_steps: int, dt: float) -> np.ndarray:
        """Index used on each step ``[k dt, (k+1) dt)``; breakpoints snap to the grid."""
        starts = np.rint(np.asarray(self.breakpoints) / dt).astype(np.int64)
        k = np.arange(n_steps)
        piece = np.searchsorted(starts, k, side="right") - 1
        return np.asarray(self.values)[np.maximum(piece, 0)]

    def shifted(self, T: float) -> "PureControl":
        """The control ``t -> self(t + T)``."""
        i = int(np.searchsorted(self.breakpoints, T, side="right")) - 1
        b = [0.0] + [x - T for x in self.breakpoints[i + 1:]]
        return PureControl(tuple(b), self.values[i:])

    def concat(self, other: "PureControl", T: float) -> "PureControl":
        """``self`` on ``[0, T)``, then ``other`` started afresh at ``T``."""
        if T <= 0:
            return other
        b = [x for x in self.breakpoints if x < T]
        v = list(self.values[: len(b)])
        b += [T + x for x in other.breakpoints]
        v += list(other.values)
        # drop redundant breakpoints
        keep_b, keep_v = [b[0]], [v[0]]
        for bb, vv in zip(b[1:], v[1:]):
            if vv != keep_v[-1]:
                keep_b.append(bb)
                keep_v.append(vv)
        return PureControl(tuple(keep_b), tuple(keep_v))

    def to_dict(self) -> dict:
        return {"breakpoints": list(self.breakpoints), "values": list(self.values)}

    @classmethod
    def from_dict(cls, d) -> "PureControl":
        return cls(tuple(d["breakpoints"]), tuple(d["values"]))


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray  # grid index used on each step

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def at(self, t):
        """Piecewise-linear interpolation of the state."""
        t = np.asarray(t, dtype=float)
        return np.stack([np.interp(t, self.times, self.states[:, j]) for j in range(self.states.shape[1])], axis=-1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.states.shape[1]
        w.writerow(["t"] + [f"y{j + 1}" for j in range(d)] + ["u_index"])
        u = np.concatenate([self.controls, self.controls[-1:]]) if self.controls.size else np.zeros(len(self.times), int)
        for t, y, ui in zip(self.times, self.states, u):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in y] + [int(ui)])
        return buf.getvalue()


def n_steps_for(horizon: float, dt: float) -> int:
    return max(1, int(math.ceil(horizon / dt - 1e-9)))


def _check_step(problem: ControlProblem, dt: float):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt * problem.lipschitz_L > STABILITY_LIMIT + 1e-12:
        raise ValueError(f"dt*L = {dt * problem.lipschitz_L:g} exceeds the stability guard {STABILITY_LIMIT}")


def _rk4_step(f, y, u, dt):
    k1 = f(y, u)
    k2 = f(y + 0.5 * dt * k1, u)
    k3 = f(y + 0.5 * dt * k2, u)
    k4 = f(y + dt * k3, u)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_invariance(problem: ControlProblem, states: np.ndarray, dt: float):
    span = problem.box_hi - problem.box_lo
    lo = problem.box_lo - BOX_INFLATION * span
    hi = problem.box_hi + BOX_INFLATION * span
    bad = np.any((states < lo) | (states > hi), axis=-1)
    if np.any(bad):
        first = int(np.min(np.argmax(bad, axis=-1)[np.any(bad, axis=-1)]))
        t = first * dt
        raise InvarianceViolation(f"state left the inflated box at t={t:g}", exit_time=t)


def simulate_indices(problem: ControlProblem, indices: np.ndarray, y0s, dt: float,
                     check: bool = True, freeze_every: int = 32) -> np.ndarray:
    """Batched RK4. ``indices`` has shape ``(N, n_steps)``; returns ``(N, n_steps + 1, d)``.

    A row whose state did not move over a step while its control stays
    constant for the rest of the run is at an exact fixed point of the
    one-step map; it is filled forward and dropped from the active set.
    """
    _check_step(problem, dt)
    indices = np.atleast_2d(indices)
    N, n = indices.shape
    y = np.array(np.broadcast_to(np.asarray(y0s, dtype=float), (N, problem.dim)))
    out = np.empty((N, n + 1, problem.dim))
    out[:, 0] = y
    grid = problem.control_grid
    f = problem.f
    changes = np.diff(indices, axis=1) != 0
    last_change = np.zeros(N, dtype=int) if n < 2 else \
        np.where(changes.any(axis=1), n - 1 - np.argmax(changes[:, ::-1], axis=1), 0)
    act = np.arange(N)
    idx = indices
    for k in range(n):
        y_new = _rk4_step(f, y, grid[idx[:, k]], dt)
        out[act, k + 1] = y_new
        if freeze_every and k % freeze_every == freeze_every - 1:
            done = np.all(y_new == y, axis=1) & (last_change[act] <= k)
            if np.any(done):
                rows = act[done]
                out[rows, k + 2:] = y_new[done][:, None, :]
                keep = ~done
                act, y_new, idx = act[keep], y_new[keep], idx[keep]
                if act.size == 0:
                    break
        y = y_new
    if check:
        _check_invariance(problem, out, dt)
    return out


def simulate_batch(problem: ControlProblem, controls, y0s, horizon: float, dt: float,
                   check: bool = True):
    """Simulate several pure controls (from one or several initial states)."""
    n = n_steps_for(horizon, dt)
    idx = np.stack([u.step_indices(n, dt) for u in controls])
    return simulate_indices(problem, idx, y0s, dt, check=check), idx


def simulate(problem: ControlProblem, u: PureControl, y0, horizon: float, dt: float) -> Trajectory:
    """Integrate ``y' = f(y, u(t))`` from ``y0`` with classical RK4 on a ``dt`` grid.

    Raises
    ------
    InvarianceViolation
        If the state leaves the state box inflated by 1%.
    """
    y0 = np.asarray(y0, dtype=float)
    if not problem.contains(y0):
        raise ValueError(f"initial state {y0.tolist()} is outside the invariant set")
    states, idx = simulate_batch(problem, [u], y0[None, :], horizon, dt)
    times = np.arange(states.shape[1]) * dt
    return Trajectory(times, states[0], idx[0])


# -- standing assumptions -----------------------------------------------------

@dataclass
class AssumptionReport:
    lipschitz_observed: float
    lipschitz_declared: float
    growth_observed: float
    growth_declared: float
    lipschitz_witness: tuple | None
    growth_witness: tuple | None

    @property
    def lipschitz_ok(self):
        return self.lipschitz_observed <= self.lipschitz_declared * (1 + 1e-9) + 1e-12

    @property
    def growth_ok(self):
        return self.growth_observed <= self.growth_declared * (1 + 1e-9) + 1e-12

    @property
    def passed(self):
        return self.lipschitz_ok and self.growth_ok


def check_assumptions(problem: ControlProblem, sample_count: int = 512, rng_seed: int = 0) -> AssumptionReport:
    """Sample state pairs and controls; compare Lipschitz and growth quotients to the declared constants."""
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    lo, hi = problem.box_lo, problem.box_hi
    y1 = rng.uniform(lo, hi, size=(sample_count, problem.dim))
    y2 = rng.uniform(lo, hi, size=(sample_count, problem.dim))
    # include box corners, where quotients of polynomial fields peak
    corners = np.array(np.meshgrid(*[[a, b] for a, b in zip(lo, hi)])).reshape(problem.dim, -1).T
    y1 = np.concatenate([y1, corners, corners])
    y2 = np.concatenate([y2, np.roll(corners, 1, axis=0), corners * 0.999 + 0.001 * lo])
    grid = problem.control_grid
    K = grid.shape[0]
    Y1 = np.repeat(y1[:, None, :], K, axis=1)
    Y2 = np.repeat(y2[:, None, :], K, axis=1)
    U = np.broadcast_to(grid[None], (len(y1), K, grid.shape[1]))
    f1, f2 = problem.f(Y1, U), problem.f(Y2, U)
    dist = np.linalg.norm(Y1 - Y2, axis=-1)
    q = np.where(dist > 0, np.linalg.norm(f1 - f2, axis=-1) / np.where(dist > 0, dist, 1.0), 0.0)
    grow = np.linalg.norm(f1, axis=-1) / (1.0 + np.linalg.norm(Y1, axis=-1))
    i_l = np.unravel_index(np.argmax(q), q.shape)
    i_g = np.unravel_index(np.argmax(grow), grow.shape)
    return AssumptionReport(
        lipschitz_observed=float(q[i_l]),
        lipschitz_declared=problem.lipschitz_L,
        growth_observed=float(grow[i_g]),
        growth_declared=problem.growth_a,
        lipschitz_witness=(y1[i_l[0]].tolist(), y2[i_l[0]].tolist(), int(i_l[1])),
        growth_witness=(y1[i_g[0]].tolist(), int(i_g[1])),
    )


@dataclass
class NonexpansiveReport:
    worst_margin: float
    tolerance: float
    witness: tuple | None  # (y1, y2, control index a)

    @property
    def passed(self):
        return self.worst_margin <= self.tolerance


def check_nonexpansive(problem: ControlProblem, sample_count: int = 512, rng_seed: int = 0,
                       tol: float = 1e-9) -> NonexpansiveReport:
    """Largest observed ``max_a min_b <y1 - y2, f(y1, a) - f(y2, b)>`` over sampled pairs in Y.

    The allowed tolerance is ``tol`` plus ``problem.grid_slack * |y1 - y2|``
    for control grids that only approximate the compact control set.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    y1 = problem.sample_states(rng, sample_count)
    y2 = problem.sample_states(rng, sample_count)
    grid = problem.control_grid
    K = grid.shape[0]
    F1 = problem.f(np.repeat(y1[:, None], K, 1), np.broadcast_to(grid, (sample_count, K, grid.shape[1])))
    F2 = problem.f(np.repeat(y2[:, None], K, 1), np.broadcast_to(grid, (sample_count, K, grid.shape[1])))
    delta = y1 - y2
    inner = np.einsum("nd,nad->na", delta, F1)[:, :, None] - np.einsum("nd,nbd->nb", delta, F2)[:, None, :]
    best = inner.min(axis=2)  # (n, a)
    slack = problem.grid_slack * np.linalg.norm(delta, axis=1)
    excess = best - slack[:, None]
    n, a = np.unravel_index(np.argmax(excess), excess.shape)
    return NonexpansiveReport(
        worst_margin=float(excess[n, a]),
        tolerance=tol,
        witness=(y1[n].tolist(), y2[n].tolist(), int(a)),
    )


# -- shadow controls ----------------------------------------------------------

@dataclass
class ShadowResult:
    indices: np.ndarray      # (P, n) responses
    states_ref: np.ndarray   # (P, n+1, d)
    states: np.ndarray       # (P, n+1, d)
    distance: np.ndarray     # (P, n+1)
    bound: np.ndarray        # (P, n+1) a-posteriori distance bound
    margins: np.ndarray      # (P, n)


def shadow_batch(problem: ControlProblem, ref_indices, y1, y2, dt: float, tol: float = 1e-9) -> ShadowResult:
    """Greedy shadowing of several reference runs at once.

    At every step, with the reference playing ``a``, the follower plays the
    ``b`` minimising ``<y1 - y2, f(y1, a) - f(y2, b)>`` (ties go to ``b = a``).
    The bound accumulates ``phi = |y1 - y2|^2`` through the second-order
    estimate ``phi_{k+1} <= phi_k + 2 dt m_k + dt^2 (|F|^2 + <D, F'>)^+``
    where ``m_k`` is the chosen margin, ``F = f(y1, a) - f(y2, b)`` and
    ``F'`` is taken from the step difference of ``F``.
    """
    _check_step(problem, dt)
    ref_indices = np.atleast_2d(np.asarray(ref_indices, dtype=int))
    P, n = ref_indices.shape
    y1 = np.array(np.broadcast_to(np.asarray(y1, float), (P, problem.dim)))
    y2 = np.array(np.broadcast_to(np.asarray(y2, float), (P, problem.dim)))
    grid = problem.control_grid
    K = grid.shape[0]
    f = problem.f
    Gb = np.broadcast_to(grid[None], (P, K, grid.shape[1]))
    rows = np.arange(P)
    s1 = np.empty((P, n + 1, problem.dim))
    s2 = np.empty_like(s1)
    s1[:, 0], s2[:, 0] = y1, y2
    resp = np.empty((P, n), dtype=int)
    margins = np.empty((P, n))
    phi = np.sum((y1 - y2) ** 2, axis=1)
    bound = np.empty((P, n + 1))
    bound[:, 0] = np.sqrt(phi)
    for k in range(n):
        a_idx = ref_indices[:, k]
        a = grid[a_idx]
        delta = y1 - y2
        fa = f(y1, a)
        fb_all = f(np.repeat(y2[:, None], K, 1), Gb)
        inner = np.einsum("pd,pd->p", delta, fa)[:, None] - np.einsum("pd,pkd->pk", delta, fb_all)
        b_idx = np.argmin(inner, axis=1)
        scale = 1e-14 * (1.0 + np.abs(inner).max(axis=1))
        tie = inner[rows, a_idx] <= inner[rows, b_idx] + scale
        b_idx = np.where(tie, a_idx, b_idx)
        m = inner[rows, b_idx]
        slack = tol + problem.grid_slack * np.linalg.norm(delta, axis=1)
        if np.any(m > slack):
            raise ShadowFailure(f"nonexpansivity margin {m.max():.3g} > 0 at step {k}", step=k)
        resp[:, k] = b_idx
        margins[:, k] = m
        fb = fb_all[rows, b_idx]
        y1n = _rk4_step(f, y1, a, dt)
        y2n = _rk4_step(f, y2, grid[b_idx], dt)
        # second-order term |F|^2 + <D, F'> with F' from the step difference
        F0 = fa - fb
        F1 = f(y1n, a) - f(y2n, grid[b_idx])
        curv = np.einsum("pd,pd->p", F0, F0) + np.einsum("pd,pd->p", delta, F1 - F0) / dt
        phi = phi + 2 * dt * m + dt * dt * np.maximum(curv, 0.0)
        phi = np.maximum(phi, 0.0)
        y1, y2 = y1n, y2n
        s1[:, k + 1], s2[:, k + 1] = y1, y2
        bound[:, k + 1] = np.sqrt(phi)
    _check_invariance(problem, s2, dt)
    dist = np.linalg.norm(s1 - s2, axis=-1)
    # the certified curve is the running max of the a-posteriori estimate
    bound = np.maximum(np.maximum.accumulate(bound, axis=1), dist)
    return ShadowResult(resp, s1, s2, dist, bound, margins)


@dataclass
class ShadowReport:
    initial_distance: float
    max_distance: float
    C: float          # max_t bound(t) = |y1 - y2| + C * dt * horizon
    distance: np.ndarray


def shadow_control(problem: ControlProblem, u: PureControl, y1, y2, horizon: float, dt: float):
    """Build a response control ``v`` from ``y2`` that tracks ``u`` from ``y1``.

    Returns ``(v, trajectory_of_y2, report)``; the report's ``C`` satisfies
    ``|y(t,u,y1) - y(t,v,y2)| <= |y1 - y2| + C * dt * horizon`` on the run.
    """
    n = n_steps_for(horizon, dt)
    ref = u.step_indices(n, dt)[None, :]
    res = shadow_batch(problem, ref, np.asarray(y1, float)[None], np.asarray(y2, float)[None], dt)
    v = PureControl.from_steps(res.indices[0], dt)
    times = np.arange(n + 1) * dt
    traj = Trajectory(times, res.states[0], res.indices[0])
    d0 = float(res.distance[0, 0])
    C = max(0.0, float(res.bound[0].max()) - d0) / (dt * horizon)
    return v, traj, ShadowReport(d0, float(res.distance[0].max()), C, res.distance[0])
