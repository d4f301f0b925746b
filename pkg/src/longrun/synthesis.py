"""Robust random controls that are near-optimal for every regular evaluation.

Pipeline
--------
1. Estimate the long-run value ``V*`` by Cesaro/Abel agreement and pick a
   window ``S0`` from how fast the Cesaro values settle.
2. For a ladder of horizons ``T``, solve the game "mixture of controls vs.
   window start ``t``" on the window averages ``gamma_{t,S0}``. A
   multiplicative-weights adversary plays against best responses; an LP
   over the collected controls gives the final mixture.
3. Check that the laws of the ladder controls stabilise, re-anchor blocks
   by transport into one behavior control, and check its window averages.
4. Score the control on a catalog of evaluations; entries with
   ``sup_{s <= S0} TV_s <= eps`` must stay within ``3 eps`` of ``V*``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import linprog

from .dynamics import ControlProblem, PureControl
from .errors import (BoundViolated, CertificationFailure, HorizonUnderflow, MinmaxNotConverged,
                     NotConverged)
from .evaluations import (ABEL_TAIL, Abel, Atomic, Cesaro, Evaluation, mix, quadrature_weights,
                          shift_tv, smooth, sup_shift_tv)
from .payoff_values import (LimitValue, OptimizerConfig, expected_costs, limit_value, payoff, value,
                            window_means)
from .random_controls import (RandomControl, StateDistribution, approximate_limit_control,
                              distribution_trajectory, limit_trajectory)


def max_workers() -> int:
    """Thread cap from ``LONGRUN_THREADS`` (default: CPU count)."""
    env = os.environ.get("LONGRUN_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class SynthesisConfig:
    """Budget and tolerances of the synthesis pipeline."""

    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    best_response: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(
        population=24, generations=6, restarts=1, refine_iters=25, ladder=(10.0,)))
    mwu_iters: int = 24
    oracle_rounds: int = 8
    grid_divisions: int = 20
    gap_threshold: float = 0.02
    ladder_multipliers: tuple = (1.0, 2.0, 4.0)
    law_step: float = 0.5
    slack: float = 2e-3
    sup_tv_steps: int = 200
    blocks: int = 4

    def to_dict(self):
        d = asdict(self)
        d["ladder_multipliers"] = list(self.ladder_multipliers)
        return d


# -- the window game --------------------------------------------------------------

@dataclass
class PhiResult:
    value: float          # max over the t-grid of the mixture's window averages
    lower: float          # best adversary value seen
    gap: float
    control: RandomControl
    t_grid: np.ndarray
    adversary: np.ndarray  # last MWU weights over the t-grid
    pool: list
    mixture_weights: np.ndarray


def _window_rows(problem, y0, controls, ts, S, dt):
    H = float(ts[-1]) + S
    rows = []
    for u in controls:
        times, h = expected_costs(problem, u, y0, H, dt)
        rows.append(window_means(times, h, ts, S))
    return np.array(rows)


def _minmax_lp(A):
    """``min_x max_t (x @ A)[t]`` over the simplex; returns ``(value, x, mu)``.

    ``mu`` is the optimal adversary, read off the LP duals.
    """
    P, N = A.shape
    if P == 1:
        mu = np.zeros(N)
        mu[int(np.argmax(A[0]))] = 1.0
        return float(A[0].max()), np.ones(1), mu
    c = np.zeros(P + 1)
    c[-1] = 1.0
    A_ub = np.hstack([A.T, -np.ones((N, 1))])
    A_eq = np.concatenate([np.ones(P), [0.0]])[None]
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(N), A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * P + [(None, None)], method="highs")
    x = np.maximum(res.x[:P], 0.0)
    x /= x.sum()
    mu = np.maximum(-res.ineqlin.marginals, 0.0)
    mu = mu / mu.sum() if mu.sum() > 0 else np.full(N, 1.0 / N)
    return float((x @ A).max()), x, mu


def solve_phi(problem: ControlProblem, y0, T: float, S: float, cfg: SynthesisConfig | None = None,
              seeds=(), raise_on_gap: bool = True) -> PhiResult:
    """``inf`` over mixtures of ``max_t gamma_{t,S}`` for ``t`` on a grid of ``[0, T]``.

    The adversary keeps multiplicative weights on the grid; each round the
    minimiser answers with a best pure control for the smoothed adversary
    measure. A few double-oracle rounds follow, answering the adversary
    read off the LP duals. The returned mixture solves the LP restricted
    to all answers.
    ``gap`` is the mixture value minus the best adversary value found.

    Raises
    ------
    MinmaxNotConverged
        If ``gap`` exceeds ``cfg.gap_threshold``.
    """
    if not (T > 0 and S > 0):
        raise ValueError("T and S must be positive")
    cfg = cfg or SynthesisConfig()
    dt = cfg.optimizer.dt
    step = S / cfg.grid_divisions
    ts = np.arange(0.0, T + 1e-9, step)
    N = ts.size
    pool = list(dict.fromkeys([PureControl.constant(k) for k in range(problem.control_grid.shape[0])]
                              + list(seeds)))
    A = _window_rows(problem, y0, pool, ts, S, dt)
    osc = max(float(np.ptp(A)), 1e-12)
    eta = math.sqrt(8.0 * math.log(max(N, 2)) / cfg.mwu_iters) / osc
    K = problem.control_grid.shape[0]

    def respond(mu, it):
        """Best pure answer to ``mu``: the optimizer's, or a pool member if better."""
        nonlocal A
        pool_scores = A @ mu
        j = int(np.argmin(pool_scores))
        if K == 1:
            return A[j], float(pool_scores[j])
        keep = mu > 1e-14
        theta = smooth(Atomic(tuple(ts[keep]), tuple(mu[keep] / mu[keep].sum())), S)
        br_cfg = replace(cfg.best_response, seed=cfg.best_response.seed + it, dt=dt)
        _, u = value(problem, theta, y0, br_cfg, seeds=[pool[j]])
        row = _window_rows(problem, y0, [u], ts, S, dt)[0]
        if u not in pool:
            pool.append(u)
            A = np.vstack([A, row])
        if row @ mu > pool_scores[j]:
            return A[j], float(pool_scores[j])
        return row, float(row @ mu)

    logw = np.zeros(N)
    lower = -math.inf
    mu = np.full(N, 1.0 / N)
    for it in range(cfg.mwu_iters):
        mu = np.exp(logw - logw.max())
        mu /= mu.sum()
        row, br = respond(mu, it)
        lower = max(lower, br)
        logw += eta * row
    # double-oracle polish: answer the LP's own adversary until it stops helping
    for it in range(cfg.oracle_rounds):
        upper, x, mu_lp = _minmax_lp(A)
        _, br = respond(mu_lp, cfg.mwu_iters + it)
        lower = max(lower, br)
        if upper - lower <= 1e-3 * cfg.gap_threshold:
            break
        mu = mu_lp
    upper, x, _ = _minmax_lp(A)
    gap = max(0.0, upper - lower)
    keep = x > 1e-12
    pairs = [(w, u) for w, u, k in zip(x / x[keep].sum(), pool, keep) if k]
    control = RandomControl.mixture(pairs)
    res = PhiResult(upper, lower, gap, control, ts, mu, pool, x)
    if raise_on_gap and gap > cfg.gap_threshold:
        raise MinmaxNotConverged(f"minmax gap {gap:.3g} > {cfg.gap_threshold:g}", gap=gap)
    return res


# -- certificates -------------------------------------------------------------------

@dataclass
class CatalogEntry:
    descriptor: str
    evaluation: dict
    sup_tv: float
    regular: bool
    payoff: float | None
    gap: float | None
    error: str | None = None


@dataclass
class RobustnessCertificate:
    epsilon: float
    S0: float
    eta: float
    V_star: float
    slack: float
    entries: list
    diagnostics: dict = field(default_factory=dict)
    dt: float = 0.1
    sup_tv_steps: int = 200

    @property
    def regular_gaps(self):
        return [e.gap for e in self.entries if e.regular and e.gap is not None]

    @property
    def worst_regular_gap(self) -> float:
        g = self.regular_gaps
        return max(g) if g else -math.inf

    @property
    def worst_gap(self) -> float:
        g = [e.gap for e in self.entries if e.gap is not None]
        return max(g) if g else -math.inf

    @property
    def passed(self) -> bool:
        if any(e.regular and e.error for e in self.entries):
            return False
        return all(g <= 3 * self.epsilon + self.slack for g in self.regular_gaps)

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "S0": self.S0,
            "eta": self.eta,
            "V_star": self.V_star,
            "slack": self.slack,
            "worst_regular_gap": self.worst_regular_gap if self.regular_gaps else None,
            "worst_gap": self.worst_gap if any(e.gap is not None for e in self.entries) else None,
            "passed": self.passed,
            "entries": [asdict(e) for e in self.entries],
            "diagnostics": self.diagnostics,
            "dt": self.dt,
            "sup_tv_steps": self.sup_tv_steps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RobustnessCertificate":
        entries = [CatalogEntry(**e) for e in d["entries"]]
        return cls(d["epsilon"], d["S0"], d["eta"], d["V_star"], d["slack"], entries,
                   d.get("diagnostics", {}), d["dt"], d["sup_tv_steps"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_jsonable)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["evaluation", "sup_tv", "payoff", "gap", "regular", "error"])
        for e in self.entries:
            w.writerow([e.descriptor, repr(e.sup_tv), "" if e.payoff is None else repr(e.payoff),
                        "" if e.gap is None else repr(e.gap), int(e.regular), e.error or ""])
        return buf.getvalue()


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serialisable: {type(x)}")


def default_catalog(S0: float, eps: float) -> list:
    """Mixed catalog around the regularity threshold ``sup_{s <= S0} TV_s <= eps``."""
    long_c = 2 * S0 / eps
    return [
        Cesaro(S0 / 2),                                   # irregular
        Cesaro(long_c),
        Cesaro(10 * S0 / eps),
        Abel(0.5),                                        # irregular
        Abel(eps / (2 * S0)),
        Abel(0.9 * eps / S0),
        mix([(0.5, Cesaro(long_c)), (0.5, Abel(eps / (2 * S0)))]),
        mix([(0.5, Atomic.dirac(0.0)), (0.5, Cesaro(10 * S0 / eps))]),  # irregular
        smooth(Atomic.dirac(0.0), long_c),
        smooth(Atomic.dirac(S0), long_c),
        smooth(Atomic((0.0, S0, 3 * S0), (0.5, 0.25, 0.25)), long_c),
        Atomic.dirac(0.0),                                # irregular
        Atomic.dirac(S0),                                 # irregular
    ]


def verify_uniform(problem: ControlProblem, y0, u, V_star: float, catalog, S0: float, eps: float,
                   dt: float, slack: float = 2e-3, max_horizon: float | None = None,
                   sup_tv_steps: int = 200, diagnostics: dict | None = None) -> RobustnessCertificate:
    """Score ``u`` on every catalog entry.

    An entry is regular when ``sup_{s <= S0} TV_s(theta) <= eps``. The
    certificate passes iff every regular entry has ``gap <= 3 eps + slack``.
    Entries whose support exceeds ``max_horizon`` are reported with a
    horizon-underflow error instead of a payoff.
    """
    def one(theta: Evaluation) -> CatalogEntry:
        tv = float(sup_shift_tv(theta, S0, steps=sup_tv_steps))
        regular = tv <= eps
        try:
            if max_horizon is not None and theta.horizon(ABEL_TAIL) > max_horizon:
                raise HorizonUnderflow(f"support {theta.horizon(ABEL_TAIL):g} beyond {max_horizon:g}")
            p = float(payoff(problem, theta, y0, u, dt))
            return CatalogEntry(theta.descriptor(), theta.to_dict(), tv, regular, p, p - V_star)
        except HorizonUnderflow as exc:
            return CatalogEntry(theta.descriptor(), theta.to_dict(), tv, regular, None, None, str(exc))

    with ThreadPoolExecutor(max_workers=min(max_workers(), max(1, len(catalog)))) as ex:
        entries = list(ex.map(one, catalog))
    return RobustnessCertificate(eps, S0, eps, float(V_star), slack, entries, diagnostics or {}, dt,
                                 sup_tv_steps)


def smoothing_gap(problem: ControlProblem, y0, u, theta: Evaluation, S: float, dt: float):
    """``(|gamma_theta - gamma_smooth(theta, S)|, 2 TV_S(theta))``."""
    a = payoff(problem, theta, y0, u, dt)
    b = payoff(problem, smooth(theta, S), y0, u, dt)
    return abs(a - b), 2.0 * shift_tv(theta, S)


def smoothed_payoff_by_windows(problem: ControlProblem, y0, u, theta: Evaluation, S: float, dt: float):
    """``int gamma_{t,S} dtheta(t)``, the smoothed payoff computed from window averages."""
    H = theta.horizon(ABEL_TAIL)
    times, h = expected_costs(problem, u, y0, H + S, dt)
    ts = times[times <= H + 1e-9]
    w, _ = quadrature_weights(theta, ts)
    return float(w @ window_means(times, h, ts, S))


def _closed_mass(theta: Evaluation, lo: float, hi: float) -> float:
    """``theta([lo, hi])``; ``mass`` is half-open, so atoms at ``lo`` are added back."""
    if hi < 0 or hi < lo:
        return 0.0
    if lo <= 0:
        return float(theta.cdf(hi))
    t, w = theta.atoms()
    return float(theta.mass(lo, hi)) + float(np.sum(np.asarray(w)[np.asarray(t) == lo]))


def shift_identity_residual(theta: Evaluation, S: float, a: float, b: float) -> float:
    """``smooth(theta, S)([a, b]) - theta([a - S, b - S])``."""
    return float(smooth(theta, S).mass(a, b)) - _closed_mass(theta, a - S, b - S)


def averaged_shift_mass(theta: Evaluation, S: float, a: float, b: float, nodes: int = 64) -> float:
    """``(1/S) int_0^S theta([a - r, b - r]) dr`` by Gauss-Legendre over each smooth piece of ``r``."""
    kinks = np.asarray(theta.kinks(), dtype=float)
    cand = np.concatenate([[0.0, S], a - kinks, b - kinks, [a, b]])
    cuts = np.unique(np.clip(cand, 0.0, S))
    x, w = np.polynomial.legendre.leggauss(nodes)
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi <= lo:
            continue
        r = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        total += 0.5 * (hi - lo) * float(np.dot(w, [_closed_mass(theta, a - ri, b - ri) for ri in r]))
    return total / S


# -- the pipeline -------------------------------------------------------------------

@dataclass
class SynthesisResult:
    control: object
    certificate: RobustnessCertificate
    limit: LimitValue | None
    phi: list
    stages: dict


def _settle_time(limit: LimitValue, eps: float) -> float:
    """Smallest ladder ``T`` whose Cesaro and Abel values are within ``eps/2`` of the estimate."""
    for T, vc, va, _ in limit.ladder:
        if abs(vc - limit.estimate) <= eps / 2 and abs(va - limit.estimate) <= eps / 2:
            return T
    return limit.ladder[-1][0]


def synthesize_robust(problem: ControlProblem, y0, eps: float, cfg: SynthesisConfig | None = None,
                      catalog=None) -> SynthesisResult:
    """Build a random control whose window averages stay near ``V*`` and certify it.

    Raises
    ------
    CertificationFailure
        If a stage check fails; ``stage`` names it and ``report`` holds its data.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    cfg = cfg or SynthesisConfig()
    dt = cfg.optimizer.dt
    y0 = np.asarray(y0, dtype=float)
    stages: dict = {}

    if eps >= problem.cost_oscillation():
        # every control is within the cost oscillation of V*
        u = RandomControl.pure(PureControl.constant(0))
        lo = float(problem.cost_range[0])
        S0 = 1.0
        cat = catalog if catalog is not None else default_catalog(S0, eps)
        cert = verify_uniform(problem, y0, u, lo, cat, S0, eps, dt, slack=cfg.slack,
                              sup_tv_steps=cfg.sup_tv_steps, diagnostics={"trivial": True})
        return SynthesisResult(u, cert, None, [], {"trivial": True})

    limit = limit_value(problem, y0, cfg.optimizer, raise_on_gap=False)
    V = limit.estimate
    # window: a Cesaro horizon T' settles within eps/2; with S' = 1 and
    # eta' = S'/T' the regularity rule gives S0 = max(2 S'/eta', S') = 2 T'
    T_settle = _settle_time(limit, eps)
    S_prime, eta_prime = 1.0, 1.0 / T_settle
    S0 = max(2 * S_prime / eta_prime, S_prime)
    stages["game"] = {"V_star": V, "band": limit.band, "T_settle": T_settle, "S_prime": S_prime,
                   "eta_prime": eta_prime, "S0": S0}

    # window games along a ladder of horizons
    phis, controls = [], []
    seeds = [limit.control] if limit.control is not None else []
    for mult in cfg.ladder_multipliers:
        T = mult * S0
        ph = solve_phi(problem, y0, T, S0, cfg, seeds=seeds, raise_on_gap=False)
        if ph.gap > cfg.gap_threshold:
            raise CertificationFailure(f"minmax gap {ph.gap:.3g} at T={T:g}", stage="game",
                                       report={"T": T, "gap": ph.gap})
        ts = np.arange(0.0, T + 1e-9, dt)
        times, h = expected_costs(problem, ph.control, y0, T + S0, dt)
        worst = float(window_means(times, h, ts, S0).max())
        if worst > ph.value + eps / 2 + cfg.slack:
            raise CertificationFailure(f"window average {worst:.4g} above phi + eps/2 at T={T:g}",
                                       stage="game", report={"T": T, "worst": worst, "phi": ph.value})
        phis.append({"T": T, "phi": ph.value, "lower": ph.lower, "gap": ph.gap, "worst_window": worst,
                     "atoms": len(ph.control.atoms)})
        controls.append(ph.control)
        seeds = [u for w, u in ph.control.materialize(problem, y0, T, dt)]
    stages["game"]["phi"] = phis

    # stabilised laws, then one re-anchored control
    H_law = cfg.ladder_multipliers[0] * S0 + S0
    law_times = np.arange(0.0, H_law + 1e-9, cfg.law_step)
    z0 = StateDistribution.dirac(y0)
    seq = [(law_times, distribution_trajectory(problem, u, z0, law_times, dt)) for u in controls]
    try:
        lt = limit_trajectory(seq, int(H_law) - 1, tol=eps, speed_bound=problem.speed_bound())
    except NotConverged as exc:
        raise CertificationFailure(str(exc), stage="anchor", report={"residuals": list(exc.residuals)}) from exc
    T_last = cfg.ladder_multipliers[-1] * S0
    H_syn = T_last + S0
    M = max(1, min(cfg.blocks, int(H_syn)))
    block = controls[-1]
    try:
        u_star, lc = approximate_limit_control(problem, [block] * M, y0, eps, dt,
                                               final_horizon=H_syn - (M - 1))
    except BoundViolated as exc:
        raise CertificationFailure(str(exc), stage="anchor", report={"window": exc.window}) from exc
    stages["anchor"] = {"K": lt.K, "gaps": lt.gaps.max(axis=1).tolist(), "equicontinuity_ok": lt.equicontinuity_ok,
                   "blocks": M, "window_bounds": [list(w) for w in lc.windows],
                   "transport_C": [r.C for r in lc.transport]}

    # window averages of the final control, then the catalog
    times, h = expected_costs(problem, u_star, y0, H_syn, dt)
    ts = np.arange(0.0, T_last + 1e-9, dt)
    wm = window_means(times, h, ts, S0)
    worst = float(wm.max())
    drift = float(abs(wm[-1] - wm[max(0, len(wm) - 1 - int(round(S0 / dt)))]))
    stages["windows"] = {"worst_window": worst, "bound": V + 2 * eps + cfg.slack, "terminal_drift": drift,
                   "horizon": H_syn}
    if worst > V + 2 * eps + cfg.slack:
        raise CertificationFailure(f"window average {worst:.4g} > V* + 2 eps", stage="windows", report=stages["windows"])
    cat = catalog if catalog is not None else default_catalog(S0, eps)
    cert = verify_uniform(problem, y0, u_star, V, cat, S0, eps, dt, slack=cfg.slack,
                          sup_tv_steps=cfg.sup_tv_steps, diagnostics=_plain(stages))
    return SynthesisResult(u_star, cert, limit, phis, stages)


def _plain(obj):
    """Nested copy with numpy scalars turned into Python numbers."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj
