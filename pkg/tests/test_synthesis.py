import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from longrun.dynamics import PureControl
from longrun.evaluations import Abel, Atomic, Cesaro, mix, shift_tv, smooth, sup_shift_tv
from longrun.payoff_values import expected_costs, payoff, window_means
from longrun.problems import rotator, toy_pollution
from longrun.random_controls import RandomControl
from longrun.schemas import validate
from longrun.synthesis import (RobustnessCertificate, averaged_shift_mass, default_catalog,
                               shift_identity_residual, smoothed_payoff_by_windows, smoothing_gap, solve_phi,
                               synthesize_robust, verify_uniform)

TOY = toy_pollution()
U_ONE = PureControl.constant(10)
ORACLE = RandomControl.pure(PureControl((0.0, 0.7), (10, 0)))  # reach x2 ~ 0.5, then stop


# -- the window game ---------------------------------------------------------------

def test_phi_of_constant_cost():
    res = solve_phi(toy_pollution(cost_constant=0.3), [0.0, 0.0], 4.0, 1.0)
    assert res.value == pytest.approx(0.3, abs=1e-12)
    assert res.gap == pytest.approx(0.0, abs=1e-12)


def test_phi_toy_near_zero():
    res = solve_phi(TOY, [0.0, 0.0], 20.0, 5.0)
    assert res.value <= 0.05
    assert res.gap <= 0.02
    # the reported value is the mixture's worst window on the grid
    times, h = expected_costs(TOY, res.control, [0.0, 0.0], 25.0, 0.1)
    worst = float(window_means(times, h, res.t_grid, 5.0).max())
    assert worst == pytest.approx(res.value, abs=1e-9)
    assert res.lower - 1e-12 <= res.value <= res.lower + res.gap + 1e-12


def test_adversary_is_regular():
    res = solve_phi(TOY, [0.0, 0.0], 10.0, 5.0)
    keep = res.adversary > 1e-14
    adv = smooth(Atomic(tuple(res.t_grid[keep]), tuple(res.adversary[keep] / res.adversary[keep].sum())), 5.0)
    for s in (0.5, 1.0, 2.5, 5.0):
        assert sup_shift_tv(adv, s, steps=50) <= 2 * s / 5.0 + 1e-9


# -- certificates --------------------------------------------------------------------

def test_regular_cesaro_entry_passes():
    S0, eps = 5.0, 0.05
    cert = verify_uniform(TOY, [0.0, 0.0], ORACLE, 0.0, [Cesaro(10 * S0 / eps)], S0, eps, 0.1)
    (e,) = cert.entries
    assert e.regular and e.sup_tv == pytest.approx(eps / 10, abs=1e-12)
    assert cert.passed


def test_irregular_entries_are_flagged_not_failed():
    S0, eps = 5.0, 0.05
    cert = verify_uniform(TOY, [0.0, 0.0], RandomControl.pure(PureControl.constant(0)), 0.0,
                          [Cesaro(S0 / 2), Atomic.dirac(0.0)], S0, eps, 0.1)
    assert [e.regular for e in cert.entries] == [False, False]
    assert [e.sup_tv for e in cert.entries] == [1.0, 1.0]
    assert cert.entries[1].gap == pytest.approx(0.25)
    assert cert.passed


def test_certificate_serialisation():
    S0, eps = 5.0, 0.05
    cert = verify_uniform(TOY, [0.0, 0.0], ORACLE, 0.0, default_catalog(S0, eps), S0, eps, 0.1)
    doc = json.loads(cert.to_json())
    validate("certificate", doc)
    back = RobustnessCertificate.from_dict(doc)
    assert back.to_json() == cert.to_json()
    rows = cert.to_csv().splitlines()
    assert rows[0] == "evaluation,sup_tv,payoff,gap,regular,error"
    assert len(rows) == len(cert.entries) + 1
    kinds = {e.evaluation["kind"] for e in cert.entries}
    assert {"cesaro", "abel", "mixture", "atomic", "piecewise"} <= kinds


def test_catalog_regularity_matches_closed_forms():
    S0, eps = 20.0, 0.05
    for theta in default_catalog(S0, eps):
        if isinstance(theta, Cesaro):
            assert sup_shift_tv(theta, S0) == pytest.approx(min(S0 / theta.horizon_t, 1.0), abs=1e-12)
        if isinstance(theta, Abel):
            assert sup_shift_tv(theta, S0) == pytest.approx(-math.expm1(-theta.rate * S0), abs=1e-12)


# -- smoothing ---------------------------------------------------------------------------

def test_smoothing_gap_examples():
    u = PureControl((0.0, 0.5), (10, 0))
    obs, bound = smoothing_gap(TOY, [0.0, 0.0], u, Abel(0.001), 1.0, 0.1)
    assert bound == pytest.approx(2 * (1 - math.exp(-0.001)), abs=1e-12)
    assert obs <= bound + 1e-6
    obs, bound = smoothing_gap(TOY, [0.0, 0.0], u, Atomic.dirac(0.0), 1.0, 0.1)
    assert bound == 2.0 and obs <= bound
    const = toy_pollution(cost_constant=0.7)
    for theta in (Abel(0.2), Cesaro(4.0), Atomic.dirac(1.0)):
        assert smoothing_gap(const, [0.0, 0.0], u, theta, 2.0, 0.1)[0] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("theta", [Cesaro(10.0), Abel(0.2), mix([(0.5, Abel(0.5)), (0.5, Cesaro(6.0))])])
def test_smoothed_payoff_two_ways(theta):
    u = PureControl((0.0, 0.6, 3.0), (10, 0, 4))
    direct = payoff(TOY, smooth(theta, 2.0), [0.0, 0.0], u, 0.01)
    by_windows = smoothed_payoff_by_windows(TOY, [0.0, 0.0], u, theta, 2.0, 0.01)
    assert direct == pytest.approx(by_windows, abs=1e-5)


def test_literal_shift_identity_does_not_hold():
    # a Dirac at 0 smoothed over [0, 2] puts mass 1/2 on [0, 1], while [0, 1] - 2 misses the half-line
    assert shift_identity_residual(Atomic.dirac(0.0), 2.0, 0.0, 1.0) == pytest.approx(0.5, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(k=st.integers(0, 2), S=st.floats(0.5, 10.0), a=st.floats(0.0, 30.0), L=st.floats(0.0, 10.0))
def test_smoothed_mass_is_averaged_shift(k, S, a, L):
    theta = (Atomic.dirac(0.0), Cesaro(5.0), Abel(0.3))[k]
    assert float(smooth(theta, S).mass(a, a + L)) == pytest.approx(averaged_shift_mass(theta, S, a, a + L),
                                                                     abs=1e-10)


# -- the pipeline ------------------------------------------------------------------------------

def test_trivial_synthesis_when_eps_exceeds_oscillation():
    res = synthesize_robust(TOY, [0.0, 0.0], 0.5)
    assert res.stages == {"trivial": True}
    assert res.certificate.passed


def test_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        synthesize_robust(TOY, [0.0, 0.0], 0.0)
