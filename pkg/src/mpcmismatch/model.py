"""Parametric discrete-time systems, RK4 integration and the pendulum plant.

A plant is ``x+ = f(x, u, theta)``; the controller's model is the same map at
``theta = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidInputError, NumericalOverflowError

Vector = np.ndarray
DynamicsFn = Callable[[Vector, Vector, Vector], Vector]
JacobianFn = Callable[[Vector, Vector], tuple[np.ndarray, np.ndarray]]


def as_vector(v, size: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    if arr.shape != (size,):
        raise InvalidInputError(f"{name} must have shape ({size},), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class ParametricSystem:
    """Discrete-time map ``f(x, u, theta)`` with dimensions ``(n, m, n_theta)``.

    ``model_jacobian``, when given, returns ``(df/dx, df/du)`` of the model
    map at ``theta = 0``; otherwise callers fall back to finite differences.
    """

    n: int
    m: int
    n_theta: int
    f: DynamicsFn
    name: str = ""
    model_jacobian: Optional[JacobianFn] = None

    def __call__(self, x, u, theta) -> np.ndarray:
        return np.asarray(self.f(x, u, theta), dtype=float)

    def model(self, x, u) -> np.ndarray:
        return self(x, u, np.zeros(self.n_theta))

    def zero_theta(self) -> np.ndarray:
        return np.zeros(self.n_theta)


@dataclass(frozen=True)
class OdeSystem:
    """Continuous-time vector field ``F(x, u, theta)``."""

    n: int
    m: int
    n_theta: int
    F: DynamicsFn
    labels: tuple[str, ...] = field(default=())


@dataclass(frozen=True)
class Discretization:
    delta: float
    substeps: int = 100

    def __post_init__(self):
        if not self.delta > 0:
            raise InvalidInputError("delta must be positive")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise InvalidInputError("substeps must be a positive integer")


def open_loop_rollout(sys: ParametricSystem, x0, u_seq, theta) -> np.ndarray:
    """States ``s[0..K]`` with ``s[0] = x0`` and ``s[k+1] = f(s[k], u[k], theta)``."""
    x = as_vector(x0, sys.n, "x0")
    th = as_vector(theta, sys.n_theta, "theta")
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, sys.m) if np.size(u_seq) else np.zeros((0, sys.m))
    states = np.empty((len(u_seq) + 1, sys.n))
    states[0] = x
    for k, u in enumerate(u_seq):
        states[k + 1] = sys(states[k], u, th)
    return states


def rk4_step(ode: OdeSystem, x, u, theta, h: float) -> np.ndarray:
    """One classical Runge-Kutta step of size ``h`` with ``u`` held constant."""
    if not h > 0:
        raise InvalidInputError("step size must be positive")
    F = ode.F
    k1 = F(x, u, theta)
    k2 = F(x + 0.5 * h * k1, u, theta)
    k3 = F(x + 0.5 * h * k2, u, theta)
    k4 = F(x + h * k3, u, theta)
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NumericalOverflowError("RK4 step produced a non-finite state")
    return out


def exact_discretize(ode: OdeSystem, disc: Discretization, x, u, theta) -> np.ndarray:
    """Flow of ``ode`` over one sample interval under zero-order hold."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    theta = np.asarray(theta, dtype=float)
    h = disc.delta / disc.substeps
    for _ in range(disc.substeps):
        x = rk4_step(ode, x, u, theta, h)
    return x


def residual_r(ode: OdeSystem, disc: Discretization, x, u, theta) -> np.ndarray:
    """Gap between the exact flow and one explicit Euler step."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    theta = np.asarray(theta, dtype=float)
    return exact_discretize(ode, disc, x, u, theta) - x - disc.delta * ode.F(x, u, theta)


# --- scenario dynamics -------------------------------------------------------

def signed_sqrt(y: float) -> float:
    return math.copysign(math.sqrt(abs(y)), y)


def wiggle(x: float) -> float:
    """``|x| sin(2 pi / x)`` extended by 0 at the origin (continuous, not differentiable)."""
    if x == 0.0:
        return 0.0
    return abs(x) * math.sin(2.0 * math.pi / x)


def integrator_system() -> ParametricSystem:
    def f(x, u, theta):
        return np.array([x[0] + (1.0 + theta[0]) * u[0]])

    def jac(x, u):
        return np.array([[1.0]]), np.array([[1.0]])

    return ParametricSystem(1, 1, 1, f, "integrator", jac)


def signed_sqrt_system() -> ParametricSystem:
    def f(x, u, theta):
        return np.array([signed_sqrt(x[0] + (1.0 + theta[0]) * u[0])])

    return ParametricSystem(1, 1, 1, f, "signed-sqrt")


def sin_system() -> ParametricSystem:
    def f(x, u, theta):
        return np.array([x[0] + 0.5 * wiggle(x[0]) + (1.0 + theta[0]) * u[0]])

    return ParametricSystem(1, 1, 1, f, "sin")


def pendulum_ode(k_hat: float = 5.0) -> OdeSystem:
    """Nondimensionalized pendulum about the upright position.

    theta = (air resistance factor, motor gain error, residual weight); the
    third entry does not enter the vector field.
    """

    def F(x, u, theta):
        return np.array([
            x[1],
            math.sin(x[0]) - theta[0] ** 2 * x[1] + (k_hat + theta[1]) * u[0],
        ])

    return OdeSystem(2, 1, 3, F, ("angle [rad]", "angular velocity [rad/s]"))


def pendulum_system(
    k_hat: float = 5.0, disc: Discretization = Discretization(0.1, 100)
) -> ParametricSystem:
    """``x+ = x + delta*F + theta_3 * r``: Euler model at theta = 0, exact flow at theta_3 = 1."""
    ode = pendulum_ode(k_hat)
    delta = disc.delta

    def f(x, u, theta):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        theta = np.asarray(theta, dtype=float)
        w = theta[2]
        if w == 1.0:
            return exact_discretize(ode, disc, x, u, theta)
        euler = x + delta * ode.F(x, u, theta)
        if w == 0.0:
            return euler
        return euler + w * residual_r(ode, disc, x, u, theta)

    def jac(x, u):
        A = np.array([[1.0, delta], [delta * math.cos(x[0]), 1.0]])
        B = np.array([[0.0], [delta * k_hat]])
        return A, B

    return ParametricSystem(2, 1, 3, f, "pendulum", jac)


def finite_difference_jacobian(
    fn: Callable[[np.ndarray], np.ndarray], z: np.ndarray
) -> np.ndarray:
    """Central differences with step ``1e-6 * (1 + |z_i|)``."""
    z = np.asarray(z, dtype=float)
    cols = []
    for i in range(z.size):
        h = 1e-6 * (1.0 + abs(z[i]))
        zp = z.copy()
        zm = z.copy()
        zp[i] += h
        zm[i] -= h
        cols.append((np.asarray(fn(zp)) - np.asarray(fn(zm))) / (2.0 * h))
    return np.column_stack(cols)


def model_jacobian(sys: ParametricSystem, x, u) -> tuple[np.ndarray, np.ndarray]:
    if sys.model_jacobian is not None:
        return sys.model_jacobian(x, u)
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    A = finite_difference_jacobian(lambda z: sys.model(z, u), x)
    B = finite_difference_jacobian(lambda v: sys.model(x, v), u)
    return A, B


def theta_sequence(theta, k_max: int, n_theta: int) -> np.ndarray:
    """Broadcast a constant parameter or validate a per-step sequence to shape ``(k_max, n_theta)``."""
    arr = np.asarray(theta, dtype=float)
    if arr.ndim <= 1:
        return np.tile(as_vector(arr, n_theta, "theta"), (k_max, 1))
    if arr.shape != (k_max, n_theta):
        raise InvalidInputError(f"theta sequence must have shape ({k_max}, {n_theta})")
    return arr


def sample_unit_sphere(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def grid_points(lo: Sequence[float], hi: Sequence[float], per_dim: int) -> np.ndarray:
    axes = [np.linspace(a, b, per_dim) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])
