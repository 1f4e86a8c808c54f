"""Registry of the four example problems: integrator, signed-sqrt, sin and pendulum."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .compfn import ScalarComparisonFn, check_class_k, quadratic
from .errors import InvalidInputError
from .model import (
    Discretization,
    ParametricSystem,
    integrator_system,
    pendulum_system,
    signed_sqrt_system,
    sin_system,
    wiggle,
)
from .ocp import AnalyticLaw, MpcController, MpcProblem
from .terminal import QuadraticCost, TerminalIngredients, pendulum_terminal_constants, verify_assumption3


def sat(v: float) -> float:
    return max(-1.0, min(1.0, v))


@dataclass
class Scenario:
    name: str
    plant: ParametricSystem
    problem: MpcProblem
    controller: MpcController
    analytic: Optional[AnalyticLaw]
    alpha1: ScalarComparisonFn
    alpha3: ScalarComparisonFn
    x_range: tuple[float, float]
    theta_range: tuple[float, float]
    x0: list[list[float]]
    thetas: list[list[float]]
    k_max: int
    rho: float
    delta: float
    steady_state: bool = True
    smooth: bool = True
    terminal_descent: bool = True
    lyapunov: Optional[Callable[[np.ndarray], float]] = None
    theta_builder: Optional[Callable[[float, int], np.ndarray]] = None
    theta_norm: Optional[Callable[[np.ndarray], float]] = None
    figure_artifacts: list[str] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def theta_samples(self, delta: float, count: int = 41) -> np.ndarray:
        if self.theta_builder is not None:
            return self.theta_builder(delta, count)
        return np.linspace(-delta, delta, count).reshape(-1, 1)

    def x_samples(self, count: int = 81) -> np.ndarray:
        lo, hi = self.problem.state_box
        if self.plant.n == 1:
            return np.linspace(lo[0], hi[0], count).reshape(-1, 1)
        side = max(2, int(round(math.sqrt(count))))
        a = np.linspace(lo[0], hi[0], side)
        b = np.linspace(lo[1], hi[1], side)
        return np.array([[p, q] for p in a for q in b])


def _check(scn: Scenario, samples: int = 2000, seed: int = 0) -> Scenario:
    """Load-time spot checks of the standing assumptions."""
    prob = scn.problem
    rng = np.random.default_rng(seed)
    lo, hi = prob.input_box
    grid = list(np.linspace(0.0, 4.0, 41))
    if not check_class_k(scn.alpha1, grid):
        raise InvalidInputError(f"{scn.name}: alpha1 is not class K on the check grid")
    slo, shi = prob.state_box
    for _ in range(200):
        x = rng.uniform(slo, shi)
        u = rng.uniform(lo, hi)
        if prob.cost(x, u) < scn.alpha1(float(np.linalg.norm(np.concatenate([x, u])))) - 1e-12:
            raise InvalidInputError(f"{scn.name}: stage cost bound fails at {x}, {u}")
    rep = verify_assumption3(prob.sys, prob.cost, prob.terminal, prob.input_box, samples, seed)
    if scn.terminal_descent and not rep.passed:
        raise InvalidInputError(f"{scn.name}: terminal descent fails (violation {rep.max_violation:.3g})")
    if scn.steady_state:
        for t in np.linspace(-2.0, 2.0, 5):
            th = np.full(scn.plant.n_theta, t)
            if np.any(scn.plant(np.zeros(scn.plant.n), np.zeros(scn.plant.m), th) != 0.0):
                raise InvalidInputError(f"{scn.name}: origin is not a steady state for theta={th}")
    return scn


def integrator() -> Scenario:
    plant = integrator_system()
    prob = MpcProblem(
        plant, 2, ([-1.0], [1.0]),
        QuadraticCost([[0.5]], [[0.5]]),
        TerminalIngredients([[0.5]], 0.5, lambda x: -np.asarray(x, dtype=float)),
        state_box=([-3.0], [3.0]),
    )

    def sequence(x):
        x = float(x[0])
        if abs(x) <= 5.0 / 3.0:
            return [[-3.0 * x / 5.0], [-x / 5.0]]
        s = math.copysign(1.0, x)
        return [[-s], [-x / 2.0 + s / 2.0]]

    def value(x):
        u = np.asarray(sequence(x)).ravel()
        x1 = float(x[0]) + u[0]
        x2 = x1 + u[1]
        return 0.5 * (float(x[0]) ** 2 + u[0] ** 2) + 0.5 * (x1 ** 2 + u[1] ** 2) + 0.5 * x2 ** 2

    law = AnalyticLaw(
        kappa=lambda x: np.array([-sat(0.6 * float(x[0]))]),
        value_fn=value,
        domain=(np.array([-3.0]), np.array([3.0])),
        sequence=sequence,
    )
    return Scenario(
        name="integrator",
        plant=plant,
        problem=prob,
        controller=MpcController(prob, "gradient"),
        analytic=law,
        alpha1=quadratic(0.5),
        alpha3=quadratic(prob.cost.c1),
        x_range=(-3.0, 3.0),
        theta_range=(-2.0, 4.0),
        x0=[[3.0]],
        thetas=[[0.0], [1.0], [2.0], [7.0 / 3.0], [3.0], [-0.5], [-0.9], [-1.5]],
        k_max=50,
        rho=8.0,
        delta=0.9,
        # no terminal law gives V_f(x+) + l(x, u) <= V_f(x) here: the minimum over u is x^2/4
        terminal_descent=False,
        figure_artifacts=["fig1_contour", "fig2_trajectories"],
    )


def signed_sqrt() -> Scenario:
    plant = signed_sqrt_system()
    prob = MpcProblem(
        plant, 1, ([-1.0], [1.0]),
        QuadraticCost([[1.0]], [[1.0]]),
        TerminalIngredients([[4.0]], 4.0, lambda x: -np.asarray(x, dtype=float)),
        state_box=([-2.0], [2.0]),
    )

    def value(x):
        a = abs(float(x[0]))
        return 2.0 * a * a if a <= 1.0 else a * a + 4.0 * a - 3.0

    law = AnalyticLaw(
        kappa=lambda x: np.array([-sat(float(x[0]))]),
        value_fn=value,
        domain=(np.array([-2.0]), np.array([2.0])),
    )
    return Scenario(
        name="signed-sqrt",
        plant=plant,
        problem=prob,
        controller=MpcController(prob, "analytic", law),
        analytic=law,
        alpha1=quadratic(1.0),
        alpha3=quadratic(2.0),
        x_range=(-2.0, 2.0),
        theta_range=(-3.0, 3.0),
        x0=[[2.0]],
        thetas=[[0.0], [0.25], [0.5], [1.0], [-0.25], [-0.5], [-1.0]],
        k_max=50,
        rho=2.0,
        delta=0.5,
        smooth=False,
        figure_artifacts=["fig3_contour", "fig4_trajectories"],
    )


def sin_example() -> Scenario:
    plant = sin_system()

    def kappa_f(x):
        x = float(np.asarray(x).ravel()[0])
        return np.array([-0.5 * (x + wiggle(x))])

    prob = MpcProblem(
        plant, 1, ([-1.0], [1.0]),
        QuadraticCost([[1.0]], [[1.0]]),
        TerminalIngredients([[4.0]], 4.0, kappa_f),
        state_box=([-2.0], [2.0]),
    )

    def kappa(x):
        x = float(x[0])
        return np.array([-sat(0.8 * x + 0.4 * wiggle(x))])

    def value(x):
        u = float(kappa(x)[0])
        xn = float(x[0]) + 0.5 * wiggle(float(x[0])) + u
        return float(x[0]) ** 2 + u * u + 4.0 * xn * xn

    law = AnalyticLaw(kappa=kappa, value_fn=value, domain=(np.array([-2.0]), np.array([2.0])))
    return Scenario(
        name="sin",
        plant=plant,
        problem=prob,
        controller=MpcController(prob, "analytic", law),
        analytic=law,
        alpha1=quadratic(1.0),
        alpha3=quadratic(0.75),
        x_range=(-2.0, 2.0),
        theta_range=(-1.5, 1.5),
        x0=[[2.0]],
        thetas=[[0.0], [0.25], [0.5], [1.0], [-0.25], [-0.5], [-1.0]],
        k_max=200,
        rho=4.0,
        delta=0.5,
        smooth=False,
        lyapunov=lambda x: float(np.dot(x, x)),
        figure_artifacts=["sin_contour", "sin_trajectories"],
        notes={"lyapunov": "V(x) = x^2", "a3": 0.75},
    )


PENDULUM_K_HAT = 5.0
PENDULUM_DELTA = 0.1


def _pendulum_thetas(delta: float, count: int) -> np.ndarray:
    """Samples ``(theta_1, theta_2, 1)`` with ``|(theta_1, theta_2)| <= delta``; exact discretization always on."""
    pts = [(0.0, 0.0)]
    ring = max(4, (count - 1) // 2)
    for k in range(ring):
        a = 2.0 * math.pi * k / ring
        pts.append((delta * math.cos(a), delta * math.sin(a)))
    for k in range(count - 1 - ring):
        a = 2.0 * math.pi * (k + 0.5) / max(1, count - 1 - ring)
        pts.append((0.5 * delta * math.cos(a), 0.5 * delta * math.sin(a)))
    return np.array([[p, q, 1.0] for p, q in pts[:count]])


def pendulum() -> Scenario:
    disc = Discretization(PENDULUM_DELTA, 100)
    plant = pendulum_system(PENDULUM_K_HAT, disc)
    consts = pendulum_terminal_constants(PENDULUM_K_HAT, PENDULUM_DELTA)
    prob = MpcProblem(
        plant, 20, ([-1.0], [1.0]),
        QuadraticCost(np.eye(2), np.eye(1)),
        TerminalIngredients(consts.P_f, consts.c_f, lambda x: np.array([-2.0 * x[0] - 2.0 * x[1]])),
        state_box=([-3.5, -7.0], [3.5, 7.0]),
    )
    return Scenario(
        name="pendulum",
        plant=plant,
        problem=prob,
        controller=MpcController(prob, "gradient"),
        analytic=None,
        alpha1=quadratic(1.0),
        alpha3=quadratic(prob.cost.c1),
        x_range=(-3.5, 3.5),
        theta_range=(-1.0, 1.0),
        x0=[[math.pi, 0.0]],
        thetas=[
            [0.0, 0.0, 1.0],
            [0.7, 0.0, 1.0],
            [1.0, 0.0, 1.0],
            [0.0, 5.0, 1.0],
            [0.0, 10.0, 1.0],
            [0.0, -2.0, 1.0],
            [0.0, -4.0, 1.0],
        ],
        k_max=150,
        rho=5.0,
        delta=0.5,
        theta_builder=_pendulum_thetas,
        theta_norm=lambda th: float(math.hypot(th[0], th[1])),
        figure_artifacts=["fig5_trajectories", "terminal_constants"],
        notes={"constants": consts.to_dict(), "k_hat": PENDULUM_K_HAT, "sample_time": PENDULUM_DELTA},
    )


_BUILDERS = {
    "integrator": integrator,
    "signed-sqrt": signed_sqrt,
    "sin": sin_example,
    "pendulum": pendulum,
}

SCENARIO_NAMES = tuple(_BUILDERS)


@lru_cache(maxsize=None)
def get_scenario(name: str) -> Scenario:
    if name not in _BUILDERS:
        raise InvalidInputError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIO_NAMES)}")
    return _check(_BUILDERS[name]())
