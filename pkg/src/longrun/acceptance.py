"""Acceptance suite: fourteen property checks with analytic oracles.

Each criterion returns ``(passed, detail)``; :func:`run_criterion` adds the
wall-clock time and fails criteria that exceed their time budget. Oracles
are computed here independently of the code under test (closed forms,
scipy quadrature, brute-force enumeration).
"""
from __future__ import annotations

import functools
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate as sp_integrate

from .dynamics import PureControl, check_nonexpansive, simulate
from .evaluations import (Abel, Atomic, Cesaro, Mixture, PiecewiseDensity, from_dict, mix, shift_l1, shift_tv,
                          smooth, sup_shift_tv)
from .payoff_values import OptimizerConfig, limit_value, undiscounted_value, weighted_value
from .problems import expanding_field, rotator, toy_pollution
from .random_controls import RandomControl, StateDistribution, kr_distance, transport_mixture
from .synthesis import averaged_shift_mass, shift_identity_residual, smoothing_gap, synthesize_robust


@dataclass(frozen=True)
class Criterion:
    number: int
    name: str
    tags: tuple
    budget: float  # seconds
    check: Callable[[], tuple]


@dataclass
class Outcome:
    number: int
    name: str
    passed: bool
    detail: str
    elapsed: float
    budget: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} [{self.number:2d}] {self.name}: {self.detail} "
                f"({self.elapsed:.2f}s of {self.budget:g}s)")


# -- shared fixtures ------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def _limit(name: str, y0: tuple):
    problem = toy_pollution() if name == "toy" else rotator()
    return problem, limit_value(problem, np.array(y0), OptimizerConfig(), raise_on_gap=False)


def _positive_part_tv(density, s: float, breaks, upper: float) -> float:
    """``int_0^upper (f(t) - f(t+s))^+ dt`` by adaptive quadrature."""
    pts = sorted({b for b in breaks if 0 < b < upper} | {max(b - s, 0.0) for b in breaks if 0 < b - s < upper})
    val, _ = sp_integrate.quad(lambda t: max(density(t) - density(t + s), 0.0), 0.0, upper,
                               points=pts or None, limit=400, epsabs=1e-13, epsrel=1e-12)
    return val


# -- criteria ---------------------------------------------------------------------

def tv_closed_forms():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        rho, s = rng.uniform(0.01, 1.0), rng.uniform(0.0, 20.0)
        exact = -math.expm1(-rho * s)
        theta = Abel(rho)
        quad = _positive_part_tv(lambda t: rho * math.exp(-rho * t), s, [], 60.0 / rho + s)
        worst = max(worst, abs(shift_tv(theta, s) - exact), abs(shift_tv(mix([(1.0, theta)]), s) - exact),
                    abs(quad - exact))
        t_h, s = rng.uniform(0.5, 30.0), rng.uniform(0.0, 40.0)
        exact = min(s / t_h, 1.0)
        theta = Cesaro(t_h)
        quad = _positive_part_tv(lambda t: (0.0 <= t <= t_h) / t_h, s, [t_h], t_h)
        worst = max(worst, abs(shift_tv(theta, s) - exact), abs(shift_tv(mix([(1.0, theta)]), s) - exact),
                    abs(quad - exact))
    return worst <= 1e-8, f"max error {worst:.2e} over 20 Abel and 20 Cesaro pairs (tol 1e-8)"


def _random_piecewise(rng) -> PiecewiseDensity:
    n = int(rng.integers(1, 8))
    edges = np.concatenate([[0.0], np.cumsum(rng.uniform(0.1, 3.0, n))])
    dens = rng.uniform(0.0, 1.0, n)
    dens[rng.integers(n)] += 0.1
    dens = dens / float(dens @ np.diff(edges))
    return PiecewiseDensity(tuple(edges), tuple(dens))


def tv_sandwich():
    rng = np.random.default_rng(2)
    worst = -math.inf
    for _ in range(50):
        theta = _random_piecewise(rng)
        s = float(rng.uniform(0.0, 1.2 * theta.edges[-1]))
        tv, i_s = shift_tv(theta, s), shift_l1(theta, s)
        worst = max(worst, i_s / 2 - tv, tv - i_s)
    return worst <= 1e-10, f"largest violation {worst:.2e} over 50 densities (slack 1e-10)"


def smoothing_regularity():
    worst = -math.inf
    for theta in (Atomic.dirac(0.0), Cesaro(5.0), Abel(0.3)):
        for S in (1.0, 10.0):
            sm = smooth(theta, S)
            grid = np.linspace(0.0, S, 101)[1:]
            tv = np.maximum.accumulate([shift_tv(sm, float(s)) for s in grid])
            worst = max(worst, float(np.max(tv - 2 * grid / S)))
            # the sup routine on its own grid must agree with the running max
            worst = max(worst, sup_shift_tv(sm, S, steps=100) - tv[-1])
    return worst <= 1e-8, f"max of sup TV_s - 2s/S = {worst:.2e} (tol 1e-8)"


def shift_identity():
    rng = np.random.default_rng(4)
    thetas = (Atomic.dirac(0.0), Cesaro(5.0), Abel(0.3))
    worst, worst_case, avg_err = 0.0, None, 0.0
    for k in range(100):
        theta = thetas[k % 3]
        S = float(rng.uniform(0.5, 10.0))
        a = float(rng.uniform(0.0, 30.0))
        b = a + float(rng.uniform(0.0, 10.0))
        r = abs(shift_identity_residual(theta, S, a, b))
        if r > worst:
            worst, worst_case = r, (theta.descriptor(), round(S, 3), round(a, 3), round(b, 3))
        avg_err = max(avg_err, abs(float(smooth(theta, S).mass(a, b)) - averaged_shift_mass(theta, S, a, b)))
    detail = (f"max |smooth(theta,S)(Q) - theta(Q-S)| = {worst:.3g} at {worst_case} (tol 1e-8); "
              f"averaged form (1/S) int_0^S theta(Q-r) dr agrees to {avg_err:.1e}")
    return worst <= 1e-8, detail


def toy_closed_form():
    problem = toy_pollution()
    traj = simulate(problem, PureControl.constant(problem.control_grid.shape[0] - 1), np.zeros(2), 10.0, 1e-3)
    err = float(np.max(np.abs(traj.states[:, 1] - (1.0 - np.exp(-traj.times)))))
    return err <= 1e-6, f"max |x2 - (1 - e^-t)| = {err:.2e} on [0, 10] at dt=1e-3"


def nonexpansivity():
    toy, rot = check_nonexpansive(toy_pollution()), check_nonexpansive(rotator())
    exp = check_nonexpansive(expanding_field())
    y1, y2, _ = exp.witness
    d = np.subtract(y1, y2)
    oracle = float(d @ d)  # <y1 - y2, y1 - y2> for f(y) = y
    ok = (toy.worst_margin <= 1e-9 and rot.worst_margin <= 1e-9 and not exp.passed
          and exp.worst_margin > 0 and abs(exp.worst_margin - oracle) <= 1e-12 * max(1.0, oracle))
    return ok, (f"toy {toy.worst_margin:.2e}, rotator {rot.worst_margin:.2e}, expanding witness margin "
                f"{exp.worst_margin:.3g} (oracle {oracle:.3g})")


def tauberian_agreement():
    _, lim = _limit("toy", (0.0, 0.0))
    gaps = [row[3] for row in lim.ladder]
    decreasing = all(b < a for a, b in zip(gaps, gaps[1:]))
    ok = gaps[-1] <= 0.05 and decreasing and [row[0] for row in lim.ladder] == [10.0, 40.0, 160.0]
    return ok, "Cesaro/Abel gaps at T=10,40,160: " + ", ".join(f"{g:.2e}" for g in gaps)


def state_dependent_limit():
    _, a = _limit("rotator", (1.0, 0.0))
    _, b = _limit("rotator", (0.5, 0.0))
    ok = abs(a.estimate - 0.5) <= 0.02 and abs(b.estimate - 0.125) <= 0.02
    return ok, f"from (1,0): {a.estimate:.4f} (oracle 0.5); from (0.5,0): {b.estimate:.4f} (oracle 0.125)"


def undiscounted_equality():
    parts, ok = [], True
    for name, y0 in (("toy", (0.0, 0.0)), ("rotator", (1.0, 0.0))):
        problem, lim = _limit(name, y0)
        v = undiscounted_value(problem, np.array(y0), OptimizerConfig(), limit=lim)
        ok &= abs(v - lim.estimate) <= 0.05
        parts.append(f"{name}: {v:.4f} vs {lim.estimate:.4f}")
    return ok, "; ".join(parts)


def weighted_limit():
    problem, lim = _limit("toy", (0.0, 0.0))
    cfg = OptimizerConfig()
    vals = [weighted_value(problem, np.zeros(2), rho, 0.5, cfg, seeds=[lim.control])[0]
            for rho in (0.1, 0.03, 0.01)]
    dist = [abs(v - lim.estimate) for v in vals]
    ok = all(b <= a for a, b in zip(dist, dist[1:])) and dist[-1] <= 0.05
    return ok, ("values " + ", ".join(f"{v:.5f}" for v in vals) + f" approaching {lim.estimate:.5f}; "
                f"final gap {dist[-1]:.2e}")


def _random_cloud(rng, n_max=8, dim=2):
    n = int(rng.integers(1, n_max + 1))
    w = rng.uniform(0.1, 1.0, n)
    return StateDistribution(w / w.sum(), rng.uniform(-1.0, 1.0, (n, dim)))


def kr_properties():
    rng = np.random.default_rng(11)
    asym, tri = 0.0, -math.inf
    for _ in range(100):
        a, b, c = (_random_cloud(rng) for _ in range(3))
        ab, ba = kr_distance(a, b), kr_distance(b, a)
        asym = max(asym, abs(ab - ba))
        tri = max(tri, ab - kr_distance(a, c) - kr_distance(c, b))
    dirac_err, pair_err = 0.0, 0.0
    for _ in range(50):
        p, q = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        dirac_err = max(dirac_err, abs(kr_distance(StateDistribution.dirac(p), StateDistribution.dirac(q))
                                       - float(np.linalg.norm(p - q))))
        # 2x1 instance: the only coupling sends both particles to the single point
        w = rng.uniform(0.1, 0.9)
        two = StateDistribution(np.array([w, 1 - w]), np.stack([p, q]))
        r = rng.uniform(-1, 1, 2)
        oracle = w * math.dist(p, r) + (1 - w) * math.dist(q, r)
        pair_err = max(pair_err, abs(kr_distance(two, StateDistribution.dirac(r)) - oracle))
    ok = asym == 0.0 and tri <= 1e-9 and dirac_err == 0.0 and pair_err <= 1e-12
    return ok, (f"asymmetry {asym:.1e}, triangle excess {tri:.2e}, Dirac error {dirac_err:.1e}, "
                f"2x1 error {pair_err:.1e}")


def _random_pure(rng, K, horizon):
    n = int(rng.integers(1, 4))
    bps = np.concatenate([[0.0], np.sort(rng.choice(np.arange(1, int(horizon * 10)), n - 1, replace=False)) / 10])
    return PureControl(tuple(float(b) for b in bps), tuple(int(v) for v in rng.integers(0, K, n)))


def transport_certificate():
    rng = np.random.default_rng(12)
    horizon, dt = 5.0, 0.01
    worst, fails = -math.inf, 0
    for k in range(20):
        problem = toy_pollution() if k % 2 == 0 else rotator()
        K = problem.control_grid.shape[0]
        clouds = []
        for _ in range(2):
            n = int(rng.integers(1, 4))
            w = rng.uniform(0.1, 1.0, n)
            clouds.append(StateDistribution(w / w.sum(), problem.sample_states(rng, n)))
        atoms = int(rng.integers(1, 3))
        ws = rng.uniform(0.2, 1.0, atoms)
        u = RandomControl.mixture([(w / ws.sum(), _random_pure(rng, K, horizon)) for w in ws])
        _, rep = transport_mixture(problem, u, clouds[0], clouds[1], horizon, dt)
        worst = max(worst, float(np.max(rep.distances - rep.allowance)))
        fails += not rep.passed
    return fails == 0, f"{20 - fails}/20 instances within d0 + C dt T; max excess {worst:.2e}"


def smoothing_payoff():
    rng = np.random.default_rng(13)
    problem = toy_pollution()
    down = np.sort(rng.uniform(0.1, 1.0, 5))[::-1]
    edges = np.concatenate([[0.0], np.cumsum(rng.uniform(1.0, 4.0, 5))])
    decreasing = PiecewiseDensity(tuple(edges), tuple(down / float(down @ np.diff(edges))))
    # every TV_s profile below is nondecreasing on [0, S]
    cases = [
        (Cesaro(10.0), 1.0), (Cesaro(50.0), 5.0), (Abel(0.1), 2.0), (Abel(0.01), 1.0),
        (Atomic.dirac(0.0), 1.0), (Atomic((0.0, 3.0), (0.5, 0.5)), 1.0),
        (mix([(0.5, Abel(0.05)), (0.5, Cesaro(20.0))]), 3.0), (smooth(Atomic.dirac(2.0), 10.0), 2.0),
        (decreasing, 4.0), (Abel(0.3), 0.5),
    ]
    worst, parts = -math.inf, []
    for theta, S in cases:
        u = _random_pure(rng, problem.control_grid.shape[0], 20.0)
        obs, bound = smoothing_gap(problem, np.zeros(2), u, theta, S, 0.1)
        worst = max(worst, obs - bound)
        parts.append(f"{obs:.2e}<={bound:.2e}")
    return worst <= 1e-6, f"max excess {worst:.2e} (tol 1e-6); " + ", ".join(parts)


def _catalog_oracle(theta, S0):
    """Closed-form ``sup_{s <= S0} TV_s`` where one is available, else ``None``."""
    if isinstance(theta, Cesaro):
        return min(S0 / theta.horizon_t, 1.0)
    if isinstance(theta, Abel):
        return -math.expm1(-theta.rate * S0)
    if isinstance(theta, Atomic):
        return 1.0 if len(theta.atoms()[0]) == 1 else None
    if isinstance(theta, Mixture):
        vals = [(c, _catalog_oracle(t, S0)) for c, t in theta.components]
        if any(v is None for _, v in vals):
            return None
        # an atom plus a density, or two nonincreasing densities, add exactly
        return sum(c * v for c, v in vals)
    if isinstance(theta, PiecewiseDensity) and len(theta.densities) == 1:
        return min(S0 / (theta.edges[1] - theta.edges[0]), 1.0)
    return None


def end_to_end():
    parts, ok = [], True
    for name, y0 in (("toy", (0.0, 0.0)), ("rotator", (1.0, 0.0))):
        problem = toy_pollution() if name == "toy" else rotator()
        res = synthesize_robust(problem, np.array(y0), 0.05)
        cert = res.certificate
        kinds = {e.evaluation["kind"] for e in cert.entries}
        misflag = 0
        for e in cert.entries:
            oracle = _catalog_oracle(from_dict(e.evaluation), cert.S0)
            if oracle is not None and abs(oracle - cert.epsilon) > 1e-6 and (oracle <= cert.epsilon) != e.regular:
                misflag += 1
        irregular = sum(not e.regular for e in cert.entries)
        good = (cert.worst_regular_gap <= 3 * 0.05 + 0.02 and len(cert.entries) >= 12 and misflag == 0
                and irregular > 0 and {"cesaro", "abel", "mixture", "piecewise"} <= kinds
                and not any(e.regular and e.error for e in cert.entries))
        ok &= good
        parts.append(f"{name}: worst regular gap {cert.worst_regular_gap:.4f}, {len(cert.entries)} entries, "
                     f"{irregular} irregular, {misflag} misflagged")
    return ok, "; ".join(parts) + " (bound 0.17)"


CRITERIA = [
    Criterion(1, "TV closed forms", ("tv", "evaluations"), 1.0, tv_closed_forms),
    Criterion(2, "TV sandwich", ("tv", "evaluations"), 5.0, tv_sandwich),
    Criterion(3, "smoothing regularity", ("tv", "evaluations"), 5.0, smoothing_regularity),
    Criterion(4, "shift identity", ("tv", "evaluations"), 5.0, shift_identity),
    Criterion(5, "toy dynamics closed form", ("dynamics",), 1.0, toy_closed_form),
    Criterion(6, "nonexpansivity", ("dynamics",), 5.0, nonexpansivity),
    Criterion(7, "Tauberian agreement", ("values",), 120.0, tauberian_agreement),
    Criterion(8, "state-dependent limit value", ("values",), 60.0, state_dependent_limit),
    Criterion(9, "undiscounted equality", ("values",), 120.0, undiscounted_equality),
    Criterion(10, "weighted-average limit", ("values",), 120.0, weighted_limit),
    Criterion(11, "KR metric properties", ("random",), 10.0, kr_properties),
    Criterion(12, "transport certificate", ("random",), 60.0, transport_certificate),
    Criterion(13, "smoothing payoff inequality", ("synthesis",), 60.0, smoothing_payoff),
    Criterion(14, "end-to-end robust synthesis", ("synthesis",), 600.0, end_to_end),
]


def select(filter_: str | None = None) -> list:
    """Criteria whose tag, number or name matches ``filter_`` (all if ``None``)."""
    if not filter_:
        return list(CRITERIA)
    key = filter_.lower()
    return [c for c in CRITERIA if key in c.tags or key == str(c.number) or key in c.name.lower()]


def run_criterion(c: Criterion) -> Outcome:
    start = time.perf_counter()
    try:
        ok, detail = c.check()
    except Exception as exc:  # a crash is a failure, reported like one
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    elapsed = time.perf_counter() - start
    if ok and elapsed > c.budget:
        ok, detail = False, detail + " [over time budget]"
    return Outcome(c.number, c.name, bool(ok), detail, elapsed, c.budget)


def run_all(filter_: str | None = None, echo: Callable[[str], None] = print) -> list:
    out = []
    for c in select(filter_):
        o = run_criterion(c)
        echo(o.line())
        out.append(o)
    return out
