import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate as spi

from longrun.errors import InvalidMixtureError, InvalidWindowError, NoDensityError
from longrun.evaluations import (Abel, Atomic, Cesaro, PiecewiseDensity, density_at, from_dict, integrate, mix,
                                 quadrature_weights, shift_l1, shift_tv, smooth, sup_shift_tv)
from longrun.schemas import validate


def positive_part_tv(f, s, upper, points=()):
    """Independent oracle: int_0^upper (f(t) - f(t+s))^+ dt."""
    val, _ = spi.quad(lambda t: max(f(t) - f(t + s), 0.0), 0.0, upper, points=list(points) or None,
                      limit=400, epsabs=1e-13)
    return val


def random_piecewise(draw_edges, draw_dens):
    edges = np.concatenate([[0.0], np.cumsum(draw_edges)])
    dens = np.asarray(draw_dens) + 1e-3
    dens = dens / float(dens @ np.diff(edges))
    return PiecewiseDensity(tuple(edges), tuple(dens))


piecewise = st.integers(1, 6).flatmap(lambda n: st.tuples(
    st.lists(st.floats(0.1, 5.0), min_size=n, max_size=n),
    st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n))).map(lambda t: random_piecewise(*t))


# -- density_at -----------------------------------------------------------------

def test_density_values():
    assert density_at(Abel(0.5), 0.0) == pytest.approx(0.5, abs=1e-15)
    assert density_at(Cesaro(4.0), 2.0) == pytest.approx(0.25, abs=1e-15)
    assert density_at(Cesaro(4.0), 5.0) == 0.0


def test_density_of_atom_raises():
    with pytest.raises(NoDensityError):
        density_at(Atomic.dirac(0.0), 0.0)


# -- integrate ------------------------------------------------------------------

@pytest.mark.parametrize("theta", [Abel(0.3), Cesaro(7.0), Atomic((0.0, 2.0), (0.25, 0.75)),
                                   mix([(0.5, Abel(0.1)), (0.5, Cesaro(3.0))])])
def test_integrate_constant(theta):
    assert integrate(theta, lambda s: 3.5) == pytest.approx(3.5, abs=1e-8)


def test_integrate_mean_of_uniform():
    assert integrate(Cesaro(4.0), lambda s: s) == pytest.approx(2.0, abs=1e-10)


def test_integrate_abel_exponential():
    oracle, _ = spi.quad(lambda s: math.exp(-s) * math.exp(-s), 0, np.inf, epsabs=1e-14)
    assert oracle == pytest.approx(0.5, abs=1e-12)
    assert integrate(Abel(1.0), lambda s: math.exp(-s)) == pytest.approx(oracle, abs=1e-8)


@settings(max_examples=30, deadline=None)
@given(c=st.floats(0.0, 1.0), a=st.floats(0.05, 2.0), t=st.floats(0.5, 20.0))
def test_integrate_is_linear_in_mixtures(c, a, t):
    h = lambda s: math.sin(s) + 2.0
    th = mix([(c, Abel(a)), (1 - c, Cesaro(t))]) if 0 < c < 1 else (Abel(a) if c >= 1 else Cesaro(t))
    expect = c * integrate(Abel(a), h) + (1 - c) * integrate(Cesaro(t), h)
    assert integrate(th, h) == pytest.approx(expect, abs=1e-7)


def test_quadrature_weights_exact_for_linear_functions():
    times = np.linspace(0.0, 50.0, 501)
    for theta in (Abel(0.2), Cesaro(13.3), smooth(Cesaro(4.0), 2.0)):
        w, tail = quadrature_weights(theta, times)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        if tail < 1e-12:
            assert w @ times == pytest.approx(integrate(theta, lambda s: s), abs=1e-7)


# -- shift total variation ---------------------------------------------------------

def test_shift_tv_closed_forms():
    assert shift_tv(Abel(0.1), 1.0) == pytest.approx(1 - math.exp(-0.1), abs=1e-12)
    assert shift_tv(Abel(0.1), 1.0) == pytest.approx(0.0951626, abs=1e-7)
    assert shift_tv(Cesaro(10.0), 2.0) == pytest.approx(0.2, abs=1e-12)
    assert shift_tv(Atomic.dirac(0.0), 1.0) == 1.0


def test_shift_tv_generic_path_matches_quadrature():
    for theta, f, upper, pts in [
        (Abel(0.1), lambda t: 0.1 * math.exp(-0.1 * t), 400.0, ()),
        (Cesaro(10.0), lambda t: 0.1 * (0 <= t <= 10), 10.0, (8.0,)),
    ]:
        oracle = positive_part_tv(f, 2.0, upper, pts)
        assert shift_tv(mix([(1.0, theta)]), 2.0) == pytest.approx(oracle, abs=1e-8)


def test_sup_shift_tv():
    assert sup_shift_tv(Abel(0.1), 1.0) == pytest.approx(1 - math.exp(-0.1), abs=1e-12)
    assert sup_shift_tv(Cesaro(10.0), 2.0) == pytest.approx(0.2, abs=1e-12)
    for theta in (Abel(0.1), Cesaro(3.0), Atomic.dirac(1.0)):
        assert sup_shift_tv(theta, 0.0) == 0.0


@settings(max_examples=50, deadline=None)
@given(theta=piecewise, frac=st.floats(0.0, 1.5))
def test_sandwich(theta, frac):
    s = frac * theta.edges[-1]
    tv, i_s = shift_tv(theta, s), shift_l1(theta, s)
    assert i_s / 2 - 1e-10 <= tv <= i_s + 1e-10


@settings(max_examples=30, deadline=None)
@given(theta=piecewise, frac=st.floats(0.01, 1.0))
def test_piecewise_tv_against_quadrature(theta, frac):
    s = frac * theta.edges[-1]
    pts = [e for e in theta.edges] + [e - s for e in theta.edges if e > s]
    oracle = positive_part_tv(lambda t: float(theta.density(t)), s, theta.edges[-1], pts)
    assert shift_tv(theta, s) == pytest.approx(oracle, abs=1e-8)


def test_mixture_tv_is_subadditive():
    m = mix([(0.5, Abel(0.1)), (0.5, Cesaro(10.0))])
    f = lambda t: 0.5 * 0.1 * math.exp(-0.1 * t) + 0.5 * 0.1 * (0 <= t <= 10)
    oracle = positive_part_tv(f, 1.0, 500.0, (9.0, 10.0))
    assert shift_tv(m, 1.0) == pytest.approx(oracle, abs=1e-8)
    assert shift_tv(m, 1.0) <= 0.5 * 0.0951626 + 0.5 * 0.1 + 1e-7


# -- smoothing and mixtures ---------------------------------------------------------

def test_smooth_dirac_is_uniform():
    sm = smooth(Atomic.dirac(0.0), 2.0)
    xs = np.array([0.1, 1.0, 1.9, 2.5])
    assert np.allclose(sm.density(xs), [0.5, 0.5, 0.5, 0.0])


def test_smooth_cesaro_is_trapezoid():
    sm = smooth(Cesaro(4.0), 2.0)
    # oracle: convolution of the two uniform densities by quadrature
    conv = lambda x: spi.quad(lambda r: 0.25 * (0 <= x - r <= 4) * 0.5, 0, 2, points=[x - 4, x])[0]
    for x in (0.5, 1.0, 2.0, 3.0, 4.5, 5.5, 7.0):
        assert density_at(sm, x) == pytest.approx(conv(x), abs=1e-10)
    assert density_at(sm, 1.0) == pytest.approx(0.125, abs=1e-12)
    assert density_at(sm, 3.0) == pytest.approx(0.25, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(theta=piecewise, S=st.floats(0.1, 10.0))
def test_smooth_has_unit_mass(theta, S):
    assert float(smooth(theta, S).cdf(theta.edges[-1] + S)) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("theta", [Atomic.dirac(0.0), Cesaro(5.0), Abel(0.3)])
@pytest.mark.parametrize("S", [1.0, 10.0])
def test_smoothing_regularity(theta, S):
    sm = smooth(theta, S)
    for s in np.linspace(0.0, S, 21)[1:]:
        assert sup_shift_tv(sm, s, steps=20) <= 2 * s / S + 1e-8


def test_smooth_rejects_bad_window():
    for S in (0.0, -1.0, float("nan")):
        with pytest.raises(InvalidWindowError):
            smooth(Abel(1.0), S)


def test_mix_identity_and_density():
    m = mix([(1.0, Cesaro(3.0))])
    assert density_at(m, 1.0) == density_at(Cesaro(3.0), 1.0)
    assert shift_tv(m, 1.0) == pytest.approx(shift_tv(Cesaro(3.0), 1.0), abs=1e-10)
    m2 = mix([(0.5, Abel(0.1)), (0.5, Cesaro(10.0))])
    assert density_at(m2, 0.0) == pytest.approx(0.1, abs=1e-15)


def test_mix_rejects_bad_coefficients():
    with pytest.raises(InvalidMixtureError):
        mix([(0.7, Abel(0.1)), (0.7, Cesaro(1.0))])
    with pytest.raises(InvalidMixtureError):
        mix([(1.5, Abel(0.1)), (-0.5, Cesaro(1.0))])


# -- serialization --------------------------------------------------------------------

@pytest.mark.parametrize("theta", [
    Abel(0.375), Cesaro(12.5), Atomic((0.0, 1.5), (0.25, 0.75)), PiecewiseDensity((0.0, 1.0, 3.0), (0.5, 0.25)),
    mix([(0.5, Abel(0.125)), (0.5, Atomic.dirac(2.0))]), smooth(Cesaro(4.0), 2.0),
])
def test_round_trip(theta):
    doc = json.loads(json.dumps(theta.to_dict()))
    validate("evaluation", doc)
    back = from_dict(doc)
    assert back.to_dict() == theta.to_dict()
    assert back.descriptor() == theta.descriptor()
