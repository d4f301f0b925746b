"""Built-in control problems and a small registry.

``toy_pollution`` drives two stocks towards ``(A, B)`` at rate ``u`` and
pays ``c(x2) - pi(x1)``. ``rotator`` is an uncontrolled rotation paying
``y1**2``; its long-run average depends on the radius of the start point.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .dynamics import ControlProblem, check_assumptions, check_nonexpansive


def toy_pollution(A: float = 2.0, B: float = 1.0, grid_points: int = 11,
                  target: float = 0.5, cost_constant: float | None = None) -> ControlProblem:
    """Pollution-abatement toy: ``x' = u (A - x1, B - x2)``, ``u in [0, 1]``.

    The default cost is ``(x2 - target)**2`` with no benefit term. Passing
    ``cost_constant`` replaces the cost by that constant.
    """
    A, B = float(A), float(B)

    def f(y, u):
        return u[..., :1] * (np.array([A, B]) - y)

    if cost_constant is None:
        def g(y):
            return (y[..., 1] - target) ** 2
        cost_range = (0.0, max(target, B - target) ** 2)
    else:
        c = float(cost_constant)

        def g(y):
            return np.full(np.shape(y)[:-1], c)
        cost_range = (c, c)

    return ControlProblem(
        name="toy_pollution",
        f=f,
        g=g,
        control_grid=np.linspace(0.0, 1.0, grid_points)[:, None],
        box_lo=np.array([0.0, 0.0]),
        box_hi=np.array([A, B]),
        lipschitz_L=1.0,
        growth_a=float(np.hypot(A, B)),
        cost_range=cost_range,
        params={"A": A, "B": B, "grid_points": grid_points, "target": target,
                "cost_constant": cost_constant},
    )


def rotator(cost_constant: float | None = None) -> ControlProblem:
    """Unit-speed rotation on the closed unit disk; the single control is inert."""

    def f(y, u):
        return np.stack([-y[..., 1], y[..., 0]], axis=-1)

    if cost_constant is None:
        def g(y):
            return y[..., 0] ** 2
        cost_range = (0.0, 1.0)
    else:
        c = float(cost_constant)

        def g(y):
            return np.full(np.shape(y)[:-1], c)
        cost_range = (c, c)

    return ControlProblem(
        name="rotator",
        f=f,
        g=g,
        control_grid=np.array([[0.0]]),
        box_lo=np.array([-1.0, -1.0]),
        box_hi=np.array([1.0, 1.0]),
        lipschitz_L=1.0,
        growth_a=1.0,
        invariant=lambda y: np.sum(np.asarray(y) ** 2, axis=-1) <= 1.0 + 1e-9,
        cost_range=cost_range,
        params={"cost_constant": cost_constant},
    )


# -- fields used to exercise the checks -------------------------------------

def expanding_field() -> ControlProblem:
    """``y' = y`` on ``[-1, 1]^2``: Lipschitz but not nonexpansive."""
    return ControlProblem(
        name="expanding",
        f=lambda y, u: np.array(y, dtype=float, copy=True),
        g=lambda y: np.zeros(np.shape(y)[:-1]),
        control_grid=np.array([[0.0]]),
        box_lo=np.array([-1.0, -1.0]),
        box_hi=np.array([1.0, 1.0]),
        lipschitz_L=1.0,
        growth_a=1.0,
    )


def square_field(declared_L: float = 1.0) -> ControlProblem:
    """``y' = y**2`` on ``[0, 2]``; the true Lipschitz constant there is 4."""
    return ControlProblem(
        name="square",
        f=lambda y, u: y**2,
        g=lambda y: np.zeros(np.shape(y)[:-1]),
        control_grid=np.array([[0.0]]),
        box_lo=np.array([0.0]),
        box_hi=np.array([2.0]),
        lipschitz_L=declared_L,
        growth_a=4.0 / 3.0,
    )


def zero_field(declared_L: float = 0.0, cost_constant: float = 0.0) -> ControlProblem:
    c = float(cost_constant)
    return ControlProblem(
        name="zero",
        f=lambda y, u: np.zeros(np.broadcast_shapes(np.shape(y), np.shape(y))),
        g=lambda y: np.full(np.shape(y)[:-1], c),
        control_grid=np.array([[0.0], [1.0]]),
        box_lo=np.array([0.0, 0.0]),
        box_hi=np.array([1.0, 1.0]),
        lipschitz_L=declared_L,
        growth_a=0.0,
        cost_range=(c, c),
    )


# -- registry -----------------------------------------------------------------

_REGISTRY: dict[str, Callable[..., ControlProblem]] = {}


def register_problem(name: str, factory: Callable[..., ControlProblem],
                     sample_count: int = 256, rng_seed: int = 0) -> None:
    """Register ``factory`` under ``name`` after checking its default instance."""
    problem = factory()
    rep = check_assumptions(problem, sample_count, rng_seed)
    if not rep.passed:
        raise ValueError(f"{name}: declared constants fail sampling check: {rep}")
    ne = check_nonexpansive(problem, sample_count, rng_seed)
    if not ne.passed:
        raise ValueError(f"{name}: not nonexpansive (margin {ne.worst_margin:g})")
    _REGISTRY[name] = factory


def problem_names() -> list[str]:
    return sorted(_REGISTRY)


def get_problem(name: str, **params) -> ControlProblem:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; known: {', '.join(problem_names())}") from None
    return factory(**params)


register_problem("toy_pollution", toy_pollution)
register_problem("rotator", rotator)
