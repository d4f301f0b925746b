import math

import numpy as np
import pytest
from scipy import integrate as spi

from longrun.dynamics import PureControl
from longrun.errors import HorizonUnderflow
from longrun.evaluations import Abel, Atomic, Cesaro, mix, smooth
from longrun.payoff_values import (OptimizerConfig, limit_value, payoff, quick_config, sliding_average,
                                   undiscounted_value, value, weighted_value)
from longrun.problems import rotator, toy_pollution

TOY = toy_pollution()
ONE = toy_pollution(cost_constant=1.0)
U_ONE = PureControl.constant(10)
U_ZERO = PureControl.constant(0)
THETAS = [Abel(0.2), Cesaro(10.0), Atomic((0.0, 3.0), (0.5, 0.5)), mix([(0.3, Abel(1.0)), (0.7, Cesaro(5.0))]),
          smooth(Cesaro(4.0), 2.0)]


def toy_cost(s):
    """Running cost of the toy problem under u = 1 from the origin: (x2 - 0.5)^2 with x2 = 1 - e^-s."""
    return (0.5 - math.exp(-s)) ** 2


# -- payoff ----------------------------------------------------------------------

@pytest.mark.parametrize("theta", THETAS)
def test_unit_cost_pays_one(theta):
    assert payoff(ONE, theta, [0.3, 0.2], PureControl((0.0, 1.0), (4, 9)), 0.1) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("theta", THETAS)
def test_frozen_trajectory_pays_initial_cost(theta):
    assert payoff(TOY, theta, [0.0, 0.0], U_ZERO, 0.1) == pytest.approx(0.25, abs=1e-12)


def test_cesaro_payoff_closed_form():
    closed = (2.5 - (1 - math.exp(-10)) + 0.5 * (1 - math.exp(-20))) / 10
    quad, _ = spi.quad(toy_cost, 0, 10, epsabs=1e-14)
    assert closed == pytest.approx(quad / 10, abs=1e-13)
    assert closed == pytest.approx(0.2000045, abs=1e-7)
    p, err = payoff(TOY, Cesaro(10.0), [0.0, 0.0], U_ONE, 0.01, return_error=True)
    assert abs(p - closed) <= 1e-6
    assert abs(p - closed) <= 2 * err
    # interpolation error is second order in dt
    p2 = payoff(TOY, Cesaro(10.0), [0.0, 0.0], U_ONE, 0.005)
    assert 3.0 <= abs(p - closed) / abs(p2 - closed) <= 5.0


def test_payoff_horizon_underflow():
    with pytest.raises(HorizonUnderflow):
        payoff(TOY, Cesaro(10.0), [0.0, 0.0], U_ONE, 0.1, horizon=5.0)


# -- sliding averages ---------------------------------------------------------------

def test_sliding_average_constant_trajectory():
    for t, S in ((0.0, 1.0), (3.0, 7.5)):
        assert sliding_average(TOY, [0.3, 0.7], U_ZERO, t, S, 0.1) == pytest.approx(0.04, abs=1e-14)


def test_sliding_average_closed_form():
    quad, _ = spi.quad(toy_cost, 5, 6, epsabs=1e-14)
    assert quad == pytest.approx(0.2457604, abs=1e-7)
    assert sliding_average(TOY, [0.0, 0.0], U_ONE, 5.0, 1.0, 0.01) == pytest.approx(quad, abs=1e-6)


def test_sliding_average_additivity():
    u = PureControl((0.0, 0.7, 2.2), (10, 0, 6))
    whole = sliding_average(TOY, [0.0, 0.0], u, 1.3, 2.0, 0.1, horizon=5.0)
    halves = [sliding_average(TOY, [0.0, 0.0], u, t, 1.0, 0.1, horizon=5.0) for t in (1.3, 2.3)]
    assert whole == pytest.approx(np.mean(halves), abs=1e-9)


# -- values ---------------------------------------------------------------------------

def test_value_of_constant_cost():
    v, _ = value(ONE, Cesaro(10.0), [0.5, 0.5], quick_config())
    assert v == pytest.approx(1.0, abs=1e-12)


def test_value_beats_the_oracle_bound():
    # oracle control: u = 1 until x2 = 0.5 (time ln 2), then u = 0
    oracle = spi.quad(toy_cost, 0, math.log(2), epsabs=1e-15)[0] / 40
    assert oracle == pytest.approx(0.001207, abs=1e-6)
    v, u = value(TOY, Cesaro(40.0), [0.0, 0.0], quick_config())
    assert v <= 0.02
    assert v == pytest.approx(payoff(TOY, Cesaro(40.0), [0.0, 0.0], u, 0.1), abs=1e-15)


@pytest.mark.parametrize("theta", [Cesaro(10.0), Abel(0.1)])
def test_value_respects_monotone_reachability(theta):
    v, _ = value(TOY, theta, [0.0, 0.8], quick_config())
    assert v >= 0.09 - 1e-9


def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(population=0)
    with pytest.raises(ValueError):
        OptimizerConfig(dt=0.0)


# -- long-run values ----------------------------------------------------------------

def test_limit_value_toy():
    lim = limit_value(TOY, [0.0, 0.0])
    assert abs(lim.estimate - 0.0) <= max(lim.band, 1e-3)
    assert lim.control is not None


def test_limit_value_toy_from_high_state():
    lim = limit_value(TOY, [0.0, 0.8], quick_config())
    assert lim.estimate == pytest.approx(0.09, abs=max(lim.band, 5e-3))


def test_limit_value_rotator_depends_on_start():
    a = limit_value(rotator(), [1.0, 0.0])
    b = limit_value(rotator(), [0.5, 0.0])
    assert a.estimate == pytest.approx(0.5, abs=0.02)
    assert b.estimate == pytest.approx(0.125, abs=0.02)


def test_undiscounted_value():
    assert undiscounted_value(ONE, [0.0, 0.0], quick_config()) == pytest.approx(1.0, abs=1e-12)
    lim = limit_value(TOY, [0.0, 0.0], quick_config())
    v = undiscounted_value(TOY, [0.0, 0.0], quick_config(), limit=lim)
    assert abs(v - lim.estimate) <= 0.05 and v <= 0.01
    assert undiscounted_value(rotator(), [1.0, 0.0], quick_config()) == pytest.approx(0.5, abs=0.02)


def test_weighted_value():
    cfg = quick_config()
    for rho, beta in ((0.1, 0.5), (0.03, 0.2)):
        assert weighted_value(ONE, [0.0, 0.0], rho, beta, cfg)[0] == pytest.approx(1.0, abs=1e-12)
    # a blend that is almost all discounted recovers the discounted value
    w, _ = weighted_value(TOY, [0.0, 0.0], 0.1, 0.999, cfg)
    v, _ = value(TOY, Abel(0.1), [0.0, 0.0], cfg)
    assert w == pytest.approx(v, abs=2e-3)
    with pytest.raises(ValueError):
        weighted_value(TOY, [0.0, 0.0], 0.1, 1.0, cfg)


def test_weighted_value_approaches_zero():
    cfg = quick_config()
    vals = [weighted_value(TOY, [0.0, 0.0], rho, 0.5, cfg)[0] for rho in (0.1, 0.03, 0.01)]
    assert vals[0] >= vals[1] >= vals[2] >= 0.0
    assert vals[-1] <= 0.05
