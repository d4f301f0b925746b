"""Finite random controls, distribution-valued trajectories and transport.

A random control is a finite list of ``(weight, policy)`` atoms, where a
policy maps an initial state to a pure control. State-dependent mixing
laws (different conditional weights for different initial states) are
realised on a common set of atoms by cutting ``[0, 1]`` at the cumulative
weights of every state and taking the common refinement.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from .dynamics import ControlProblem, PureControl, n_steps_for, shadow_batch, simulate_indices
from .errors import BoundViolated, InvalidDistribution, NotConverged
from .payoff_values import payoff

log = logging.getLogger(__name__)

WEIGHT_TOL = 1e-12
STATE_TOL = 1e-9


# -- policies -------------------------------------------------------------------

@dataclass(frozen=True)
class StaticPolicy:
    control: PureControl

    def __call__(self, problem, y0, dt) -> PureControl:
        return self.control

    def to_dict(self):
        return {"kind": "static", "control": self.control.to_dict()}


@dataclass(frozen=True)
class TabulatedPolicy:
    """Pure control looked up by initial state (matched within ``STATE_TOL``)."""

    states: tuple
    controls: tuple
    fallback: object | None = None

    def __call__(self, problem, y0, dt) -> PureControl:
        y0 = np.asarray(y0, dtype=float)
        pts = np.asarray(self.states, dtype=float)
        d = np.max(np.abs(pts - y0), axis=1)
        i = int(np.argmin(d))
        if d[i] <= STATE_TOL * (1.0 + np.abs(y0).max()):
            return self.controls[i]
        if self.fallback is None:
            raise KeyError(f"state {y0.tolist()} not in policy table")
        return self.fallback(problem, y0, dt)

    def to_dict(self):
        return {
            "kind": "tabulated",
            "states": [list(map(float, s)) for s in self.states],
            "controls": [c.to_dict() for c in self.controls],
            "fallback": None if self.fallback is None else self.fallback.to_dict(),
        }


@dataclass(frozen=True)
class ConcatPolicy:
    """``first`` on ``[0, T)``, then ``second`` from the state reached at ``T``."""

    first: object
    second: object
    T: float

    def __call__(self, problem, y0, dt) -> PureControl:
        u1 = self.first(problem, y0, dt)
        if isinstance(self.second, StaticPolicy):
            return u1.concat(self.second.control, self.T)
        n = int(round(self.T / dt))
        states = simulate_indices(problem, u1.step_indices(n, dt)[None], np.asarray(y0, float), dt)
        u2 = self.second(problem, states[0, -1], dt)
        return u1.concat(u2, self.T)

    def to_dict(self):
        return {"kind": "concat", "T": self.T, "first": self.first.to_dict(), "second": self.second.to_dict()}


def policy_from_dict(d):
    kind = d["kind"]
    if kind == "static":
        return StaticPolicy(PureControl.from_dict(d["control"]))
    if kind == "tabulated":
        fb = None if d.get("fallback") is None else policy_from_dict(d["fallback"])
        return TabulatedPolicy(tuple(tuple(s) for s in d["states"]),
                               tuple(PureControl.from_dict(c) for c in d["controls"]), fb)
    if kind == "concat":
        return ConcatPolicy(policy_from_dict(d["first"]), policy_from_dict(d["second"]), d["T"])
    raise ValueError(f"unknown policy kind {kind!r}")


# -- random controls --------------------------------------------------------------

@dataclass(frozen=True)
class RandomControl:
    atoms: tuple  # ((weight, policy), ...)

    def __post_init__(self):
        atoms = tuple((float(w), p) for w, p in self.atoms)
        if not atoms:
            raise ValueError("a random control needs at least one atom")
        if any(not 0 < w <= 1 + WEIGHT_TOL for w, _ in atoms):
            raise ValueError("atom weights must lie in (0, 1]")
        if abs(sum(w for w, _ in atoms) - 1.0) > WEIGHT_TOL * max(1, len(atoms)):
            raise ValueError("atom weights must sum to 1")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def pure(cls, u: PureControl) -> "RandomControl":
        return cls(((1.0, StaticPolicy(u)),))

    @classmethod
    def mixture(cls, pairs) -> "RandomControl":
        """From ``(weight, PureControl)`` pairs."""
        return cls(tuple((w, StaticPolicy(u)) for w, u in pairs))

    def materialize(self, problem, y0, horizon=None, dt=0.1, dedup=False):
        """``[(weight, PureControl)]`` from ``y0``; ``dedup`` merges identical controls."""
        out = [(w, p(problem, y0, dt)) for w, p in self.atoms]
        return merge_identical(out) if dedup else out

    def to_dict(self):
        return {"kind": "random", "atoms": [{"weight": w, "policy": p.to_dict()} for w, p in self.atoms]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple((a["weight"], policy_from_dict(a["policy"])) for a in d["atoms"]))


def merge_identical(pairs):
    merged: dict = {}
    for w, u in pairs:
        merged[u] = merged.get(u, 0.0) + w
    return [(w, u) for u, w in merged.items()]


def state_dependent(table) -> RandomControl:
    """Random control from per-state mixtures.

    ``table`` is a list of ``(state, [(weight, PureControl), ...])``. The
    unit interval is cut at every state's cumulative weights; each cell of
    the common refinement becomes an atom whose policy picks, for each
    state, the control owning that cell.
    """
    cuts = {0.0, 1.0}
    cums = []
    for _, mix in table:
        w = np.array([a for a, _ in mix], dtype=float)
        w = w / w.sum()
        c = np.concatenate([[0.0], np.cumsum(w)])
        c[-1] = 1.0
        cums.append(c)
        cuts.update(c.tolist())
    edges = np.array(sorted(cuts))
    edges = edges[np.concatenate([[True], np.diff(edges) > 1e-15])]
    edges[-1] = 1.0
    atoms = []
    states = tuple(tuple(map(float, s)) for s, _ in table)
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi)
        ctrls = []
        for (s, mix), c in zip(table, cums):
            k = min(int(np.searchsorted(c, mid, side="right")) - 1, len(mix) - 1)
            ctrls.append(mix[k][1])
        atoms.append((hi - lo, TabulatedPolicy(states, tuple(ctrls))))
    total = sum(w for w, _ in atoms)
    return RandomControl(tuple((w / total, p) for w, p in atoms))


def expected_payoff(problem: ControlProblem, theta, y0, u: RandomControl, dt: float,
                    horizon: float | None = None) -> float:
    """``sum_i w_i * payoff(u_i)``; affine in the mixture weights."""
    return payoff(problem, theta, y0, u, dt, horizon=horizon)


# -- distributions ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StateDistribution:
    weights: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        p = np.atleast_2d(np.asarray(self.points, dtype=float))
        if w.size == 0 or p.shape[0] != w.size:
            raise InvalidDistribution("a distribution needs one weight per point and at least one point")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise InvalidDistribution("weights must be positive and sum to 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "points", p)

    @classmethod
    def dirac(cls, point) -> "StateDistribution":
        return cls(np.array([1.0]), np.atleast_2d(np.asarray(point, float)))

    @classmethod
    def merged(cls, weights, points) -> "StateDistribution":
        """Merge exactly equal points."""
        points = np.atleast_2d(np.asarray(points, float))
        uniq, inv = np.unique(points, axis=0, return_inverse=True)
        w = np.bincount(inv.ravel(), weights=np.asarray(weights, float), minlength=len(uniq))
        keep = w > 0
        return cls(w[keep] / w[keep].sum(), uniq[keep])

    def __len__(self):
        return self.weights.size

    def mean(self):
        return self.weights @ self.points

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["weight"] + [f"y{j + 1}" for j in range(self.points.shape[1])])
        for a, p in zip(self.weights, self.points):
            w.writerow([repr(float(a))] + [repr(float(v)) for v in p])
        return buf.getvalue()


def _key(z: StateDistribution):
    return (len(z), z.points.tobytes(), z.weights.tobytes())


def kr_distance(z1: StateDistribution, z2: StateDistribution, return_coupling: bool = False):
    """Exact 1-Wasserstein distance with Euclidean ground cost.

    Solved as a transportation LP. The two arguments are put in a canonical
    order first so that swapping them gives bit-identical results.
    """
    if not isinstance(z1, StateDistribution) or not isinstance(z2, StateDistribution):
        raise InvalidDistribution("kr_distance takes two StateDistribution values")
    swap = _key(z1) > _key(z2)
    a, b = (z2, z1) if swap else (z1, z2)
    C = cdist(a.points, b.points)
    if len(a) == 1 or len(b) == 1:
        xi = np.outer(a.weights, b.weights)
        if len(a) == 1 and len(b) == 1:
            d = float(np.linalg.norm(a.points[0] - b.points[0]))
        else:
            d = float(np.sum(xi * C))
    else:
        n, m = C.shape
        A_eq = np.zeros((n + m, n * m))
        for i in range(n):
            A_eq[i, i * m:(i + 1) * m] = 1.0
        for j in range(m):
            A_eq[n + j, j::m] = 1.0
        b_eq = np.concatenate([a.weights, b.weights])
        res = linprog(C.ravel(), A_eq=A_eq[:-1], b_eq=b_eq[:-1], bounds=(0, None), method="highs",
                      options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
        if res.status != 0:
            raise InvalidDistribution(f"transport solve failed: {res.message}")
        xi = np.maximum(res.x.reshape(n, m), 0.0)
        d = float(np.sum(xi * C))
    if swap:
        xi = xi.T
    return (d, xi) if return_coupling else d


def coupling_csv(xi: np.ndarray) -> str:
    buf = io.StringIO()
    np.savetxt(buf, xi, delimiter=",", fmt="%.17g")
    return buf.getvalue()


def _particle_runs(problem, u: RandomControl, z: StateDistribution, horizon, dt):
    """Per (particle, atom): weights (R,), states (R, n+1, d), step indices (R, n)."""
    n = n_steps_for(horizon, dt)
    ws, idx, starts = [], [], []
    for pw, p in zip(z.weights, z.points):
        for aw, c in u.materialize(problem, p, horizon, dt):
            ws.append(pw * aw)
            idx.append(c.step_indices(n, dt))
            starts.append(p)
    idx = np.stack(idx)
    states = simulate_indices(problem, idx, np.stack(starts), dt)
    return np.array(ws), states, idx


def distribution_trajectory(problem: ControlProblem, u: RandomControl, z: StateDistribution,
                            times, dt: float) -> list:
    """Law of the state at each requested time when ``y0 ~ z`` and ``u`` is drawn independently."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("times must be nonnegative")
    if not np.all(problem.contains(z.points)):
        raise InvalidDistribution("particles must lie in the invariant set")
    horizon = max(float(times.max()), dt)
    ws, states, _ = _particle_runs(problem, u, z, horizon, dt)
    grid = np.arange(states.shape[1]) * dt
    out = []
    for t in times:
        k = min(int(np.floor(t / dt + 1e-9)), len(grid) - 1)
        r = (t - grid[k]) / dt if k + 1 < len(grid) else 0.0
        pts = states[:, k] if r < 1e-9 else (1 - r) * states[:, k] + r * states[:, k + 1]
        out.append(StateDistribution.merged(ws, pts))
    return out


# -- concatenation ----------------------------------------------------------------

def concatenate(u: RandomControl, v: RandomControl, T: float) -> RandomControl:
    """``u`` on ``[0, T)``, then ``v`` restarted from the state reached at ``T``; atoms multiply."""
    if not T > 0:
        raise ValueError("T must be positive")
    atoms = []
    for wu, pu in u.atoms:
        for wv, pv in v.atoms:
            if isinstance(pu, StaticPolicy) and isinstance(pv, StaticPolicy):
                pol = StaticPolicy(pu.control.concat(pv.control, T))
            else:
                pol = ConcatPolicy(pu, pv, T)
            atoms.append((wu * wv, pol))
    return RandomControl(tuple(atoms))


def prune_atoms(problem, pairs, y0, horizon, dt, delta):
    """Merge atoms whose trajectories stay within ``delta`` (sup norm) of a kept atom.

    Returns the pruned pairs and the KR perturbation bound it induces
    (moved weight times the largest sup distance).
    """
    n = n_steps_for(horizon, dt)
    idx = np.stack([u.step_indices(n, dt) for _, u in pairs])
    states = simulate_indices(problem, idx, np.asarray(y0, float), dt)
    kept, weights = [], []
    perturb = 0.0
    for i, (w, u) in enumerate(pairs):
        for k, j in enumerate(kept):
            gap = float(np.max(np.linalg.norm(states[i] - states[j], axis=-1)))
            if gap <= delta:
                weights[k] += w
                perturb += w * gap
                break
        else:
            kept.append(i)
            weights.append(w)
    if len(kept) < len(pairs):
        log.info("pruned %d atoms, KR perturbation <= %.3g", len(pairs) - len(kept), perturb)
    return [(w, pairs[i][1]) for w, i in zip(weights, kept)], perturb


# -- transport ------------------------------------------------------------------

@dataclass
class TransportReport:
    initial_distance: float
    C: float
    horizon: float
    dt: float
    times: np.ndarray
    distances: np.ndarray
    bound: np.ndarray
    coupling: np.ndarray

    @property
    def allowance(self) -> float:
        return self.initial_distance + self.C * self.dt * self.horizon

    @property
    def passed(self) -> bool:
        return bool(np.all(self.distances <= self.allowance + 1e-9))


def transport_mixture(problem: ControlProblem, u: RandomControl, z1: StateDistribution,
                      z2: StateDistribution, horizon: float, dt: float, samples: int = 21):
    """Random control from ``z2`` that keeps up with ``u`` from ``z1``.

    The optimal coupling of ``z1`` and ``z2`` pairs particles. For each pair
    ``(p, q)`` and each atom of ``u`` a shadow control is built from ``q``
    against the atom's run from ``p``. Returns ``(v, report)``; the report
    compares the distances between the two induced laws, at ``samples``
    times, with ``d_KR(z1, z2) + C dt horizon``.
    """
    d0, xi = kr_distance(z1, z2, return_coupling=True)
    n = n_steps_for(horizon, dt)
    refs, p_rows, q_rows, ws, owner = [], [], [], [], []
    for i, p in enumerate(z1.points):
        atoms = u.materialize(problem, p, horizon, dt)
        for j, q in enumerate(z2.points):
            if xi[i, j] <= 0:
                continue
            for aw, c in atoms:
                refs.append(c.step_indices(n, dt))
                p_rows.append(p)
                q_rows.append(q)
                ws.append(xi[i, j] * aw)
                owner.append(j)
    res = shadow_batch(problem, np.stack(refs), np.stack(p_rows), np.stack(q_rows), dt)
    ws = np.array(ws)
    owner = np.array(owner)
    table = []
    for j, q in enumerate(z2.points):
        rows = np.flatnonzero(owner == j)
        mix = merge_identical([(ws[r], PureControl.from_steps(res.indices[r], dt)) for r in rows])
        table.append((q, mix))
    v = state_dependent(table)

    times = np.linspace(0.0, n * dt, samples)
    law_u = distribution_trajectory(problem, u, z1, times, dt)
    law_v = distribution_trajectory(problem, v, z2, times, dt)
    dists = np.array([kr_distance(a, b) for a, b in zip(law_u, law_v)])
    bound_curve = ws @ res.bound
    C = max(0.0, float(bound_curve.max()) - d0) / (dt * horizon)
    report = TransportReport(d0, C, horizon, dt, times, dists, bound_curve, xi)
    return v, report


# -- limit trajectories -----------------------------------------------------------

@dataclass
class LimitTrajectory:
    times: np.ndarray
    distributions: list
    K: int
    gaps: np.ndarray           # (len(seq) - 1, windows)
    equicontinuity_ok: bool | None = None


def limit_trajectory(trajectories, window_count: int, tol: float, speed_bound: float | None = None):
    """Stabilised member of a sequence of distribution-valued trajectories.

    ``gaps[k, m]`` is the largest KR distance between members ``k`` and
    ``k + 1`` over grid times in ``[m, m + 1]``. ``K`` is the first index
    from which every later gap is at most ``tol``; member ``K`` is returned.
    ``speed_bound``, if given, checks that each member moves at most that
    fast in KR distance between grid times.

    Raises
    ------
    NotConverged
        If the last gap still exceeds ``tol``.
    """
    if len(trajectories) < 2:
        raise ValueError("need at least two trajectories")
    times = np.asarray(trajectories[0][0], dtype=float)
    for t, d in trajectories:
        if len(t) != len(times) or not np.allclose(t, times) or len(d) != len(times):
            raise ValueError("trajectories must share a time grid")
    wins = [(times >= m - 1e-12) & (times <= m + 1 + 1e-12) for m in range(window_count)]
    gaps = np.zeros((len(trajectories) - 1, window_count))
    for k in range(len(trajectories) - 1):
        a, b = trajectories[k][1], trajectories[k + 1][1]
        d = np.array([kr_distance(x, y) for x, y in zip(a, b)])
        for m, mask in enumerate(wins):
            gaps[k, m] = d[mask].max() if mask.any() else 0.0
    worst = gaps.max(axis=1)
    bad = np.flatnonzero(worst > tol)
    if bad.size and bad[-1] == len(worst) - 1:
        raise NotConverged(f"consecutive gap {worst[-1]:.3g} > {tol:g}", residuals=worst)
    K = int(bad[-1] + 1) if bad.size else 0
    eq_ok = None
    if speed_bound is not None:
        eq_ok = True
        for _, dists in trajectories:
            step = np.array([kr_distance(x, y) for x, y in zip(dists[:-1], dists[1:])])
            if np.any(step > speed_bound * np.diff(times) * (1 + 1e-6) + 1e-12):
                eq_ok = False
    return LimitTrajectory(times, trajectories[K][1], K, gaps, eq_ok)


# -- behavior controls ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BehaviorControl:
    """Blocks concatenated at ``partition``; ``composed`` is the result seen from ``anchor``."""

    partition: tuple
    blocks: tuple
    composed: RandomControl
    anchor: tuple
    bounds: tuple = field(default=())

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.partition, self.partition[1:])):
            raise ValueError("partition must be strictly increasing")

    def materialize(self, problem, y0, horizon=None, dt=0.1, dedup=False):
        if np.max(np.abs(np.asarray(y0, float) - np.asarray(self.anchor))) > STATE_TOL:
            raise ValueError("behavior control was built for a different initial state")
        return self.composed.materialize(problem, y0, horizon, dt, dedup)

    @property
    def atoms(self):
        return self.composed.atoms

    def to_dict(self):
        return {
            "kind": "behavior",
            "partition": list(self.partition),
            "anchor": list(self.anchor),
            "bounds": list(self.bounds),
            "composed": self.composed.to_dict(),
            "blocks": [b.to_dict() for b in self.blocks],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["partition"]), tuple(RandomControl.from_dict(b) for b in d["blocks"]),
                   RandomControl.from_dict(d["composed"]), tuple(d["anchor"]), tuple(d.get("bounds", ())))


def control_from_dict(d):
    if d.get("kind") == "behavior":
        return BehaviorControl.from_dict(d)
    if d.get("kind") == "random":
        return RandomControl.from_dict(d)
    return PureControl.from_dict(d)


def geometric_bound(eps: float, m: int) -> float:
    """``2 * sum_{l=1}^{m} eps**l``."""
    return 2.0 * sum(eps**l for l in range(1, m + 1))


def _continuation(problem, block: RandomControl, y0, T, dt):
    """Law at time ``T`` of a block started at ``y0`` and its continuation policy."""
    pairs = block.materialize(problem, y0, T + dt, dt, dedup=True)
    n = int(round(T / dt))
    if n == 0:
        z = StateDistribution.dirac(y0)
        return z, RandomControl(tuple((w, StaticPolicy(c)) for w, c in pairs))
    idx = np.stack([c.step_indices(n, dt) for _, c in pairs])
    states = simulate_indices(problem, idx, np.asarray(y0, float), dt)[:, -1]
    z = StateDistribution.merged([w for w, _ in pairs], states)
    table = []
    for p in z.points:
        mine = [(w, c.shifted(T)) for (w, c), s in zip(pairs, states) if np.array_equal(s, p)]
        table.append((p, merge_identical(mine)))
    return z, state_dependent(table)


@dataclass
class LimitControlReport:
    windows: list           # per window: (observed distance to the block law, allowance, certified bound)
    transport: list


def approximate_limit_control(problem: ControlProblem, block_controls, y0, eps: float, dt: float,
                              slack: float = 1e-6, samples: int = 11, target=None,
                              final_horizon: float = 1.0):
    """Concatenate block controls at integer times, re-anchoring each block.

    Block ``m`` governs ``[m, m + 1]``. At each junction its continuation is
    transported from the block's own law at time ``m`` to the law reached so
    far. On window ``m`` the accumulated bound to the common target is
    ``2 * sum_{l <= m + 1} eps**l``, given that each block is ``eps**(m + 1)``
    close to the target there. The last block is followed for
    ``final_horizon`` time units. ``target(t)``, if given, returns the target
    law at time ``t`` and is compared directly; otherwise the distance to
    the block's own law plus ``eps**(m + 1)`` is compared.

    Returns ``(BehaviorControl, report)``.

    Raises
    ------
    BoundViolated
        With the index of the first window that breaks its bound.
    """
    if not block_controls:
        raise ValueError("need at least one block")
    y0 = np.asarray(y0, dtype=float)
    M = len(block_controls)
    current = RandomControl(tuple((w, StaticPolicy(c)) for w, c in
                                  block_controls[0].materialize(problem, y0, 1.0, dt, dedup=True)))
    windows, reports = [], []
    for m in range(M):
        block = block_controls[m]
        if m > 0:
            z_block, cont = _continuation(problem, block, y0, float(m), dt)
            z_now = distribution_trajectory(problem, current, StateDistribution.dirac(y0), [float(m)], dt)[0]
            span = final_horizon if m == M - 1 else 1.0
            v, rep = transport_mixture(problem, cont, z_block, z_now, span, dt, samples=samples)
            reports.append(rep)
            current = RandomControl(tuple(
                (w, StaticPolicy(c)) for w, c in
                concatenate(current, v, float(m)).materialize(problem, y0, m + span, dt, dedup=True)))
        ts = np.linspace(m, m + 1.0, samples)
        law_now = distribution_trajectory(problem, current, StateDistribution.dirac(y0), ts, dt)
        if target is not None:
            obs = max(kr_distance(a, target(t)) for a, t in zip(law_now, ts))
            allowed = geometric_bound(eps, m + 1)
        else:
            law_blk = distribution_trajectory(problem, block, StateDistribution.dirac(y0), ts, dt)
            obs = max(kr_distance(a, b) for a, b in zip(law_now, law_blk)) + eps ** (m + 1)
            allowed = geometric_bound(eps, m + 1)
        windows.append((float(obs), float(allowed)))
        if obs > allowed + slack:
            raise BoundViolated(f"window {m}: {obs:.3g} > {allowed:.3g}", window=m)
    bc = BehaviorControl(tuple(float(t) for t in range(M + 1)), tuple(block_controls), current,
                         tuple(map(float, y0)), tuple(a for _, a in windows))
    return bc, LimitControlReport(windows, reports)
