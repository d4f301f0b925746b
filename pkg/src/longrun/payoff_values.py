"""Payoffs of controls under an evaluation, and numerical value functions.

Values are *best-found*: every optimizer output is the payoff of an explicit
control, hence an upper bound on the true infimum.

The optimizer searches over piecewise-constant controls on the control
grid. A cross-entropy stage samples grid values on a fixed geometric
breakpoint layout; a local stage then moves breakpoints on the ``dt`` grid,
changes values, splits and merges pieces. Candidates of both stages are
simulated together in one batched integration per round.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import ControlProblem, PureControl, _rk4_step, n_steps_for, simulate_indices
from .errors import HorizonUnderflow, InvarianceViolation, TauberianDisagreement
from .evaluations import ABEL_TAIL, Abel, Cesaro, Evaluation, quadrature_weights


@dataclass(frozen=True)
class OptimizerConfig:
    """Knobs of the control search.

    Parameters
    ----------
    t_max : float
        Cap on the simulated horizon during search.
    breakpoints : int
        Number of pieces in the cross-entropy layout.
    restarts : int
        Independent cross-entropy chains (run in the same batch).
    population : int
        Samples per chain and generation.
    elite_fraction : float
        Share of each generation used to refit the sampling law.
    generations : int
        Cross-entropy generations.
    seed : int
        Seed for every random draw.
    dt : float
        Integration step.
    first_piece : float
        Length of the first piece of the layout; later pieces grow geometrically.
    search_tail : float
        Tail mass of the evaluation ignored while ranking candidates.
    refine_iters : int
        Maximum rounds of local improvement.
    ladder : tuple of float
        Horizons ``T`` for the Cesaro/Abel cross-validation.
    tauberian_threshold : float
        Largest tolerated Cesaro/Abel gap at the top of the ladder.
    """

    t_max: float = 4000.0
    breakpoints: int = 10
    restarts: int = 2
    population: int = 48
    elite_fraction: float = 0.2
    generations: int = 10
    seed: int = 0
    dt: float = 0.1
    first_piece: float = 0.25
    search_tail: float = 1e-6
    refine_iters: int = 40
    ladder: tuple = (10.0, 40.0, 160.0)
    tauberian_threshold: float = 0.05

    def __post_init__(self):
        for name in ("breakpoints", "restarts", "population", "generations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 < self.elite_fraction <= 1:
            raise ValueError("elite_fraction must lie in (0, 1]")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.refine_iters < 0:
            raise ValueError("refine_iters must be >= 0")
        if len(self.ladder) < 1 or any(T <= 0 for T in self.ladder):
            raise ValueError("ladder needs positive horizons")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["ladder"] = list(self.ladder)
        return d


# -- trajectories of controls ---------------------------------------------------

def control_atoms(problem: ControlProblem, u, y0, horizon: float, dt: float):
    """``[(weight, PureControl)]`` realised by ``u`` from ``y0``."""
    if isinstance(u, PureControl):
        return [(1.0, u)]
    return u.materialize(problem, y0, horizon, dt)


def _cost_paths(problem, u, y0, horizon, dt):
    """Times, per-atom cost samples ``(A, n+1)`` and atom weights."""
    atoms = control_atoms(problem, u, y0, horizon, dt)
    n = n_steps_for(horizon, dt)
    idx = np.stack([c.step_indices(n, dt) for _, c in atoms])
    states = simulate_indices(problem, idx, np.asarray(y0, float), dt)
    G = problem.g(states)
    w = np.array([a for a, _ in atoms])
    return np.arange(n + 1) * dt, G, w


def expected_costs(problem, u, y0, horizon: float, dt: float):
    """Sampled expected running cost ``t -> E g(y(t))``."""
    times, G, w = _cost_paths(problem, u, y0, horizon, dt)
    return times, w @ G


def _check_horizon(theta: Evaluation, horizon: float):
    need = theta.horizon(ABEL_TAIL)
    if horizon < need - 1e-9:
        raise HorizonUnderflow(f"horizon {horizon:g} shorter than effective support {need:g} of {theta.descriptor()}")


def payoff(problem: ControlProblem, theta: Evaluation, y0, u, dt: float,
           horizon: float | None = None, return_error: bool = False):
    """``int g(y(t)) dtheta(t)`` along the trajectory of ``u`` from ``y0``.

    The sampled cost is integrated exactly as a piecewise-linear function.
    The error estimate combines the truncated tail mass times the cost
    oscillation with a step-doubling estimate of the interpolation error.

    Raises
    ------
    HorizonUnderflow
        If ``horizon`` does not cover ``theta`` up to tail mass ``1e-10``.
    """
    if horizon is None:
        horizon = theta.horizon(ABEL_TAIL)
    else:
        _check_horizon(theta, horizon)
    times, h = expected_costs(problem, u, y0, horizon, dt)
    w, tail = quadrature_weights(theta, times)
    value = float(w @ h)
    if not return_error:
        return value
    w2, _ = quadrature_weights(theta, times[::2])
    coarse = float(w2 @ h[::2])
    err = abs(coarse - value) / 3.0 + tail * float(np.ptp(h))
    return value, err


def _cumulative(times, h):
    return np.concatenate([[0.0], np.cumsum(0.5 * np.diff(times) * (h[1:] + h[:-1]))])


def _integral_to(times, h, C, x):
    """Integral of the interpolant of ``h`` over ``[0, x]`` (vectorised in ``x``)."""
    dt = times[1] - times[0]
    x = np.asarray(x, dtype=float)
    k = np.clip(np.floor(x / dt).astype(int), 0, len(times) - 2)
    r = x - times[k]
    slope = (h[k + 1] - h[k]) / dt
    return C[k] + r * h[k] + 0.5 * slope * r * r


def window_means(times, h, ts, S: float):
    """``(1/S) int_t^{t+S}`` of the interpolant of ``h`` for every ``t`` in ``ts``."""
    C = _cumulative(times, h)
    ts = np.asarray(ts, dtype=float)
    return (_integral_to(times, h, C, ts + S) - _integral_to(times, h, C, ts)) / S


def sliding_average(problem: ControlProblem, y0, u, t: float, S: float, dt: float,
                    horizon: float | None = None) -> float:
    """Mean expected cost over ``[t, t + S]``."""
    if S <= 0 or t < 0:
        raise ValueError("need t >= 0 and S > 0")
    if horizon is None:
        horizon = t + S
    elif horizon < t + S - 1e-12:
        raise HorizonUnderflow(f"horizon {horizon:g} < t + S = {t + S:g}")
    times, h = expected_costs(problem, u, y0, horizon, dt)
    return float(window_means(times, h, [t], S)[0])


# -- search machinery -----------------------------------------------------------

@dataclass(frozen=True)
class _Cand:
    starts: tuple   # step index where each piece starts; starts[0] == 0
    values: tuple   # grid index per piece


def _canon(starts, values, n) -> _Cand:
    s_out, v_out = [], []
    for s, v in sorted(zip(starts, values)):
        if s >= n and s_out:
            break
        if s_out and s == s_out[-1]:
            v_out[-1] = v
            continue
        if v_out and v == v_out[-1]:
            continue
        s_out.append(s)
        v_out.append(v)
    return _Cand(tuple(s_out), tuple(v_out))


def _to_control(c: _Cand, dt: float) -> PureControl:
    return PureControl(tuple(s * dt for s in c.starts), c.values)


def _from_control(u: PureControl, dt: float, n: int) -> _Cand:
    starts = [int(round(b / dt)) for b in u.breakpoints]
    return _canon(starts, list(u.values), n)


class _Objective:
    """Batched evaluation of candidates: ``combine(W @ g(y(t_k)))``.

    ``combine`` must be nondecreasing in every row value. With a known lower
    bound on the cost, a candidate whose partial sums already guarantee a
    result above its cutoff is stopped early and scored ``inf``; such scores
    are not cached.
    """

    def __init__(self, problem, y0, horizon, dt, rows, combine=None):
        self.problem = problem
        self.y0 = np.asarray(y0, dtype=float)
        self.dt = dt
        self.n = n_steps_for(horizon, dt)
        self.times = np.arange(self.n + 1) * dt
        self.W = np.atleast_2d(np.stack(rows))
        self.combine = combine or (lambda v: v[:, 0])
        self.cache: dict[_Cand, float] = {}
        cr = problem.cost_range
        self.g_lo = None if cr is None else float(cr[0])

    def weights_for(self, theta: Evaluation):
        w, _ = quadrature_weights(theta, self.times)
        return w

    def _indices(self, cands):
        idx = np.empty((len(cands), self.n), dtype=int)
        for r, c in enumerate(cands):
            bounds = list(c.starts) + [self.n]
            for v, a, b in zip(c.values, bounds, bounds[1:]):
                idx[r, a:b] = v
        return idx

    def _run(self, idx, cutoff, chunk=32):
        problem = self.problem
        f, g, grid, dt = problem.f, problem.g, problem.control_grid, self.dt
        N, n = idx.shape
        W = self.W
        # remaining weight from sample k on; one extra zero column
        rem = np.concatenate([np.cumsum(W[:, ::-1], axis=1)[:, ::-1], np.zeros((W.shape[0], 1))], axis=1)
        span = problem.box_hi - problem.box_lo
        lo = problem.box_lo - 0.01 * span
        hi = problem.box_hi + 0.01 * span
        changes = np.diff(idx, axis=1) != 0
        last_change = np.zeros(N, dtype=int) if n < 2 else \
        np.where(changes.any(axis=1), n - 1 - np.argmax(changes[:, ::-1], axis=1), 0)
        y = np.array(np.broadcast_to(self.y0, (N, problem.dim)))
        acc = g(y)[:, None] * W[None, :, 0]
        out = np.full(N, np.nan)
        act = np.arange(N)
        cut = np.asarray(cutoff, dtype=float)
        prune = self.g_lo is not None and np.any(np.isfinite(cut))
        for k in range(n):
            y_new = _rk4_step(f, y, grid[idx[act, k]], dt)
            if np.any((y_new < lo) | (y_new > hi)):
                raise InvarianceViolation(f"state left the inflated box at t={(k + 1) * dt:g}",
                                          exit_time=(k + 1) * dt)
            gy = g(y_new)
            acc += gy[:, None] * W[None, :, k + 1]
            if k % chunk == chunk - 1 and k < n - 1:
                done = np.all(y_new == y, axis=1) & (last_change[act] <= k)
                if np.any(done):
                    out[act[done]] = self.combine(acc[done] + gy[done, None] * rem[None, :, k + 2])
                drop = done
                if prune:
                    lb = self.combine(acc + self.g_lo * rem[None, :, k + 2])
                    hopeless = lb > cut[act] + 1e-15 * np.maximum(1.0, np.abs(cut[act]))
                    out[act[hopeless & ~done]] = np.inf
                    drop = done | hopeless
                if np.any(drop):
                    keep = ~drop
                    act, y_new, acc = act[keep], y_new[keep], acc[keep]
                    if act.size == 0:
                        break
            y = y_new
        if act.size:
            out[act] = self.combine(acc)
        return out

    def __call__(self, cands, cutoff=math.inf):
        cut = np.broadcast_to(np.asarray(cutoff, dtype=float), (len(cands),))
        todo, todo_cut = [], []
        for c, ct in zip(cands, cut):
            if c not in self.cache and c not in todo:
                todo.append(c)
                todo_cut.append(ct)
        if todo:
            vals = self._run(self._indices(todo), np.array(todo_cut))
            fresh = {}
            for c, v in zip(todo, vals):
                if np.isfinite(v):
                    self.cache[c] = float(v)
                fresh[c] = float(v)
            return np.array([self.cache.get(c, fresh.get(c, math.inf)) for c in cands])
        return np.array([self.cache[c] for c in cands])


def _layout(n: int, dt: float, pieces: int, first: float) -> list:
    """Geometric piece starts (in steps) from ``first`` up to a quarter of the run."""
    if pieces == 1:
        return [0]
    last = max(first, 0.25 * n * dt)
    if pieces == 2:
        pts = [first]
    else:
        pts = first * (last / first) ** (np.arange(pieces - 1) / (pieces - 2))
    steps = sorted({0} | {int(round(p / dt)) for p in pts if 0 < round(p / dt) < n})
    return steps


def _cross_entropy(obj: _Objective, K: int, cfg: OptimizerConfig, rng, seeds):
    starts = _layout(obj.n, obj.dt, cfg.breakpoints, cfg.first_piece)
    P = len(starts)
    R = cfg.restarts
    probs = np.full((R, P, K), 1.0 / K)
    n_elite = max(1, int(round(cfg.elite_fraction * cfg.population)))
    elites = [[] for _ in range(R)]
    pool = list(seeds)
    for gen in range(cfg.generations):
        batch, owner = [], []
        for r in range(R):
            cum = np.cumsum(probs[r], axis=1)
            u = rng.random((cfg.population, P, 1))
            vals = np.minimum((u > cum[None]).sum(axis=2), K - 1)
            for row in vals:
                batch.append(_canon(starts, row.tolist(), obj.n))
                owner.append(r)
            for c in elites[r]:
                batch.append(c)
                owner.append(r)
        if gen == 0:
            batch += pool
            owner += [-1] * len(pool)
        # previous elites are in the batch, so nothing worse than them can be selected
        worst = [max(obj(elites[r])) if elites[r] else math.inf for r in range(R)]
        scores = obj(batch, cutoff=[worst[o] if o >= 0 else math.inf for o in owner])
        owner = np.array(owner)
        for r in range(R):
            mine = np.flatnonzero((owner == r) | (owner == -1))
            order = mine[np.argsort(scores[mine], kind="stable")][:n_elite]
            elites[r] = [batch[i] for i in order]
            freq = np.zeros((P, K))
            for i in order:
                c = batch[i]
                # read the value in force at each layout start
                pos = np.searchsorted(c.starts, starts, side="right") - 1
                freq[np.arange(P), np.asarray(c.values)[pos]] += 1.0
            probs[r] = 0.7 * freq / len(order) + 0.3 * probs[r]
    found = [c for e in elites for c in e]
    return found


def _neighbours(c: _Cand, K: int, n: int):
    s, v = list(c.starts), list(c.values)
    P = len(s)
    out = []
    for j in range(P):
        for dv in (-1, 1, -2, 2):
            if 0 <= v[j] + dv < K:
                out.append(_canon(s, v[:j] + [v[j] + dv] + v[j + 1:], n))
    for j in range(1, P):
        lo = s[j - 1]
        hi = s[j + 1] if j + 1 < P else n
        for ds in (-1, 1, -3, 3, -9, 9, -27, 27):
            t = s[j] + ds
            if lo < t < hi:
                out.append(_canon(s[:j] + [t] + s[j + 1:], v, n))
        out.append(_canon(s[:j] + s[j + 1:], v[:j] + v[j + 1:], n))
        # hold the value of piece j - 1 for the rest of the run
        out.append(_canon(s[:j], v[:j], n))
    for j in range(P):
        end = s[j + 1] if j + 1 < P else n
        for dv in (-1, 1):
            if not 0 <= v[j] + dv < K:
                continue
            # one-step piece at either end of piece j
            if end - s[j] >= 2:
                out.append(_canon(s + [s[j] + 1], v[:j] + [v[j] + dv] + v[j + 1:] + [v[j]], n))
                if end < n:
                    out.append(_canon(s + [end - 1], v + [v[j] + dv], n))
    if P == 1 or s[-1] < n - 1:
        # try a new piece near the start of the run
        for t in (1, 3, 9):
            if t < n and t not in s:
                for val in range(K):
                    out.append(_canon(s + [t], v + [val], n))
    return [o for o in out if o != c]


def _refine(obj: _Objective, c: _Cand, K: int, iters: int):
    best = obj([c])[0]
    for _ in range(iters):
        nb = _neighbours(c, K, obj.n)
        if not nb:
            break
        sc = obj(nb, cutoff=best)
        i = int(np.argmin(sc))
        if not sc[i] < best - 1e-15 * max(1.0, abs(best)):
            break
        c, best = nb[i], sc[i]
    return c, best


def _optimize(obj: _Objective, cfg: OptimizerConfig, seeds=()):
    problem = obj.problem
    K = problem.control_grid.shape[0]
    if K == 1:
        c = _Cand((0,), (0,))
        return c, obj([c])[0]
    rng = np.random.default_rng(cfg.seed)
    seed_cands = [_canon([0], [k], obj.n) for k in range(K)]
    seed_cands += [_from_control(u, obj.dt, obj.n) for u in seeds]
    found = _cross_entropy(obj, K, cfg, rng, seed_cands)
    ranked = sorted(dict.fromkeys(found + seed_cands), key=lambda c: (obj([c])[0], c.starts, c.values))
    starts_for_refine = list(dict.fromkeys(ranked[:1] + seed_cands[K:]))
    best_c, best = None, math.inf
    for c in starts_for_refine:
        rc, rv = _refine(obj, c, K, cfg.refine_iters)
        if rv < best:
            best_c, best = rc, rv
    return best_c, best


def _search_horizon(theta: Evaluation, cfg: OptimizerConfig) -> float:
    return min(theta.horizon(cfg.search_tail), cfg.t_max)


def value(problem: ControlProblem, theta: Evaluation, y0, cfg: OptimizerConfig | None = None,
          seeds=()) -> tuple[float, PureControl]:
    """Best-found ``inf_u int g(y(t, u, y0)) dtheta(t)``.

    ``seeds`` are extra starting controls for the search. The returned
    value is the payoff of the returned control at full accuracy.
    """
    cfg = cfg or OptimizerConfig()
    obj = _Objective(problem, y0, _search_horizon(theta, cfg), cfg.dt, [np.zeros(1)])
    obj.W = obj.weights_for(theta)[None, :]
    c, _ = _optimize(obj, cfg, seeds)
    u = _to_control(c, cfg.dt)
    return payoff(problem, theta, y0, u, cfg.dt), u


# -- long-run values ----------------------------------------------------------

@dataclass
class LimitValue:
    estimate: float
    band: float
    ladder: list = field(default_factory=list)  # rows (T, cesaro, abel, gap)
    control: PureControl | None = None

    def to_dict(self):
        return {
            "estimate": self.estimate,
            "band": self.band,
            "ladder": [{"T": T, "cesaro": c, "abel": a, "gap": g} for T, c, a, g in self.ladder],
            "control": self.control.to_dict() if self.control else None,
        }


def tauberian_ladder(problem: ControlProblem, y0, cfg: OptimizerConfig | None = None):
    """Cesaro-``T`` and Abel-``1/T`` values along ``cfg.ladder``.

    Each pair of searches is cross-seeded: the Abel search starts from the
    Cesaro optimum, and the Abel optimum is re-scored under Cesaro. Both
    values therefore stay best-found payoffs of explicit controls.
    """
    cfg = cfg or OptimizerConfig()
    rows, best_u = [], None
    prev = []
    for T in cfg.ladder:
        ces, abel = Cesaro(T), Abel(1.0 / T)
        vc, uc = value(problem, ces, y0, cfg, seeds=prev)
        va, ua = value(problem, abel, y0, cfg, seeds=[uc] + prev)
        alt_c = payoff(problem, ces, y0, ua, cfg.dt)
        if alt_c < vc:
            vc, uc = alt_c, ua
        alt_a = payoff(problem, abel, y0, uc, cfg.dt)
        if alt_a < va:
            va, ua = alt_a, uc
        rows.append((float(T), vc, va, abs(vc - va)))
        best_u = uc
        prev = [uc, ua]
    return rows, best_u


def limit_value(problem: ControlProblem, y0, cfg: OptimizerConfig | None = None,
                raise_on_gap: bool = True) -> LimitValue:
    """Long-run value estimated by Cesaro/Abel agreement along a horizon ladder.

    The estimate is the midpoint of the two values at the largest ``T``;
    the band is their gap there.

    Raises
    ------
    TauberianDisagreement
        If the final gap exceeds ``cfg.tauberian_threshold``.
    """
    cfg = cfg or OptimizerConfig()
    rows, u = tauberian_ladder(problem, y0, cfg)
    T, vc, va, gap = rows[-1]
    res = LimitValue(0.5 * (vc + va), gap, rows, u)
    if raise_on_gap and gap > cfg.tauberian_threshold:
        raise TauberianDisagreement(f"Cesaro/Abel gap {gap:.3g} at T={T:g}", gap=gap, ladder=rows)
    return res


def tail_horizons(cfg: OptimizerConfig):
    T = float(cfg.ladder[-1])
    return (T, 2 * T, 4 * T)


def limsup_proxy(problem: ControlProblem, y0, u, cfg: OptimizerConfig | None = None) -> float:
    """Max of the horizon averages of ``u`` over ``{T, 2T, 4T}``."""
    cfg = cfg or OptimizerConfig()
    hs = tail_horizons(cfg)
    times, h = expected_costs(problem, u, y0, hs[-1], cfg.dt)
    C = _cumulative(times, h)
    return float(max(_integral_to(times, h, C, T) / T for T in hs))


def undiscounted_value(problem: ControlProblem, y0, cfg: OptimizerConfig | None = None,
                       limit: LimitValue | None = None) -> float:
    """Limsup proxy of the horizon averages for the control behind ``limit_value``."""
    cfg = cfg or OptimizerConfig()
    if limit is None:
        limit = limit_value(problem, y0, cfg, raise_on_gap=False)
    return limsup_proxy(problem, y0, limit.control, cfg)


def weighted_value(problem: ControlProblem, y0, rho: float, beta: float,
                   cfg: OptimizerConfig | None = None, seeds=()) -> tuple[float, PureControl]:
    """Best-found ``inf_u beta * abel_rho(u) + (1 - beta) * limsup_proxy(u)``."""
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    cfg = cfg or OptimizerConfig()
    abel = Abel(rho)
    hs = tail_horizons(cfg)
    H = max(_search_horizon(abel, cfg), hs[-1])
    obj = _Objective(problem, y0, H, cfg.dt, [np.zeros(1)])
    rows = [obj.weights_for(abel)] + [obj.weights_for(Cesaro(T)) for T in hs]
    obj.W = np.stack(rows)
    obj.combine = lambda v: beta * v[:, 0] + (1 - beta) * v[:, 1:].max(axis=1)
    c, _ = _optimize(obj, cfg, seeds)
    u = _to_control(c, cfg.dt)
    total = beta * payoff(problem, abel, y0, u, cfg.dt) + (1 - beta) * limsup_proxy(problem, y0, u, cfg)
    return total, u


def catalog_lower_bound(problem: ControlProblem, y0, catalog, shifts, cfg: OptimizerConfig | None = None):
    """Diagnostic ``max_theta min_s`` value of the ``s``-delayed evaluation.

    The delayed evaluation weights ``g(y(t + s))`` by ``theta``. Inner values
    are best-found, so this is an estimate rather than a certified bound.
    Returns ``(estimate, table)`` with one row per catalog entry.
    """
    cfg = cfg or OptimizerConfig()
    table = []
    for theta in catalog:
        per_shift = []
        for s in shifts:
            k0 = int(round(s / cfg.dt))
            H = _search_horizon(theta, cfg) + k0 * cfg.dt
            obj = _Objective(problem, y0, H, cfg.dt, [np.zeros(1)])
            w = np.zeros(obj.n + 1)
            w[k0:], _ = quadrature_weights(theta, obj.times[k0:] - obj.times[k0])
            obj.W = w[None, :]
            _, v = _optimize(obj, cfg)
            per_shift.append(float(v))
        table.append((theta.descriptor(), min(per_shift), per_shift))
    return max(r[1] for r in table), table


def quick_config(**overrides) -> OptimizerConfig:
    """Small search budget for tests and smoke runs."""
    base = OptimizerConfig(population=24, generations=6, restarts=1, refine_iters=20)
    return replace(base, **overrides)
