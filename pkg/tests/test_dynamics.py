import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from longrun.dynamics import (PureControl, check_assumptions, check_nonexpansive, shadow_control, simulate)
from longrun.errors import InvarianceViolation
from longrun.problems import (expanding_field, get_problem, problem_names, rotator, square_field, toy_pollution,
                              zero_field)

TOY = toy_pollution()
ROT = rotator()
U_ONE = PureControl.constant(10)   # grid value u = 1
U_ZERO = PureControl.constant(0)


# -- simulate -----------------------------------------------------------------

def test_zero_control_is_constant():
    traj = simulate(TOY, U_ZERO, [0.3, 0.7], 10.0, 0.1)
    assert np.all(traj.states == np.array([0.3, 0.7]))


def test_toy_closed_form():
    traj = simulate(TOY, U_ONE, [0.0, 0.0], 10.0, 1e-3)
    t = traj.times
    assert np.max(np.abs(traj.states[:, 0] - 2 * (1 - np.exp(-t)))) <= 1e-6
    assert np.max(np.abs(traj.states[:, 1] - (1 - np.exp(-t)))) <= 1e-6


def test_rotator_conserves_radius():
    traj = simulate(ROT, U_ZERO, [1.0, 0.0], 100.0, 1e-3)
    assert np.max(np.abs(np.linalg.norm(traj.states, axis=1) - 1.0)) <= 1e-6


def test_trajectory_grid_and_controls():
    u = PureControl((0.0, 1.0, 2.5), (3, 7, 0))
    traj = simulate(TOY, u, [0.0, 0.0], 4.0, 0.1)
    assert np.allclose(np.diff(traj.times), 0.1)
    assert traj.times[-1] == pytest.approx(4.0)
    assert len(traj.states) == len(traj.times) == len(traj.controls) + 1
    assert traj.controls.tolist() == [3] * 10 + [7] * 15 + [0] * 15
    header = traj.to_csv().splitlines()[0]
    assert header == "t,y1,y2,u_index"


def test_rk4_is_fourth_order():
    exact = 1 - np.exp(-5.0)
    errs = [abs(simulate(TOY, U_ONE, [0.0, 0.0], 5.0, dt).states[-1, 1] - exact) for dt in (0.1, 0.05)]
    assert 12.0 <= errs[0] / errs[1] <= 20.0


@settings(max_examples=100, deadline=None)
@given(values=st.lists(st.integers(0, 10), min_size=1, max_size=5),
       gaps=st.lists(st.floats(0.1, 3.0), min_size=4, max_size=4),
       y=st.tuples(st.floats(0.0, 2.0), st.floats(0.0, 1.0)))
def test_random_toy_controls_stay_in_box(values, gaps, y):
    bps = np.concatenate([[0.0], np.cumsum(gaps[:len(values) - 1])])
    traj = simulate(TOY, PureControl(tuple(bps), tuple(values)), y, 10.0, 0.1)
    assert np.all(traj.states >= -1e-12)
    assert np.all(traj.states <= np.array([2.0, 1.0]) + 1e-12)


def test_leaving_the_box_raises_with_exit_time():
    with pytest.raises(InvarianceViolation) as info:
        simulate(expanding_field(), U_ZERO, [0.5, 0.5], 2.0, 0.01)
    # y = 0.5 e^t leaves [-1, 1] inflated by 2% of the span at t = ln(2.04)
    assert info.value.exit_time == pytest.approx(np.log(2.04), abs=0.02)


def test_stability_guard_and_bad_start():
    with pytest.raises(ValueError):
        simulate(TOY, U_ONE, [0.0, 0.0], 1.0, 0.2)
    with pytest.raises(ValueError):
        simulate(TOY, U_ONE, [3.0, 0.0], 1.0, 0.1)


# -- pure controls ----------------------------------------------------------------

def test_pure_control_validation():
    with pytest.raises(ValueError):
        PureControl((1.0,), (0,))
    with pytest.raises(ValueError):
        PureControl((0.0, 2.0, 1.0), (0, 1, 2))


def test_concat_and_shift():
    a, b = PureControl((0.0, 1.0), (1, 2)), PureControl((0.0, 0.5), (3, 4))
    c = a.concat(b, 2.0)
    assert c.breakpoints == (0.0, 1.0, 2.0, 2.5) and c.values == (1, 2, 3, 4)
    assert PureControl.constant(5).concat(PureControl.constant(5), 3.0) == PureControl.constant(5)
    assert PureControl.from_dict(c.to_dict()) == c


# -- assumption checks ------------------------------------------------------------

def test_check_assumptions():
    assert check_assumptions(TOY).passed
    rep = check_assumptions(square_field(declared_L=1.0))
    assert not rep.lipschitz_ok
    y1, y2, _ = rep.lipschitz_witness
    assert abs(y1[0] ** 2 - y2[0] ** 2) / abs(y1[0] - y2[0]) == pytest.approx(rep.lipschitz_observed)
    assert rep.lipschitz_observed <= 4.0 + 1e-9
    for L in (0.0, 2.0):
        assert check_assumptions(zero_field(declared_L=L)).passed


def test_check_nonexpansive():
    assert check_nonexpansive(TOY).worst_margin <= 0.0
    assert abs(check_nonexpansive(ROT).worst_margin) <= 1e-12
    rep = check_nonexpansive(expanding_field())
    assert not rep.passed
    d = np.subtract(rep.witness[0], rep.witness[1])
    assert rep.worst_margin == pytest.approx(d @ d, rel=1e-12)


def test_registry():
    assert problem_names() == ["rotator", "toy_pollution"]
    assert get_problem("toy_pollution", A=3.0).box_hi.tolist() == [3.0, 1.0]
    with pytest.raises(KeyError):
        get_problem("nope")


# -- shadow controls -------------------------------------------------------------

def test_shadow_of_same_state_is_exact():
    u = PureControl((0.0, 2.0), (10, 3))
    v, traj, rep = shadow_control(TOY, u, [0.1, 0.2], [0.1, 0.2], 5.0, 0.01)
    assert np.all(rep.distance == 0.0)
    assert v == u


def test_shadow_toy_distance_nonincreasing():
    _, _, rep = shadow_control(TOY, U_ONE, [0.0, 0.0], [0.2, 0.1], 5.0, 0.01)
    assert rep.initial_distance == pytest.approx(np.hypot(0.2, 0.1))
    assert np.all(np.diff(rep.distance) <= 1e-12)


def test_shadow_rotator_distance_constant():
    _, _, rep = shadow_control(ROT, U_ZERO, [1.0, 0.0], [0.0, 0.5], 20.0, 0.01)
    assert np.ptp(rep.distance) <= 1e-6
    assert rep.max_distance <= rep.initial_distance + rep.C * 0.01 * 20.0 + 1e-12
