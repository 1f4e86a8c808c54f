"""The finite-horizon optimal control problem behind the MPC law.

Single shooting over the input sequence. The terminal constraint
``V_f(x(N)) <= c_f`` is handled by an augmented Lagrangian; each subproblem is a
box-constrained smooth minimization (L-BFGS-B) with gradients from an adjoint
sweep.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import InfeasibleStartError, InvalidInputError, NumericalOverflowError, UnsupportedError
from .model import ParametricSystem, as_vector, model_jacobian
from .terminal import QuadraticCost, TerminalIngredients

FEAS_TOL = 1e-8
GRAD_TOL = 1e-8
INFEASIBLE_TOL = 1e-6
MAX_OUTER = 200
MAX_INNER = 2000
MU_START = 10.0
MU_GROWTH = 10.0
MU_MAX = 1e12


@dataclass(frozen=True)
class MpcProblem:
    """Horizon-``N`` problem for the model ``f(x, u, 0)``.

    ``state_box`` is an optional axis-aligned box known to contain the
    feasible set ``X_N``; it is used for sampling and escape detection.
    """

    sys: ParametricSystem
    N: int
    input_box: tuple[np.ndarray, np.ndarray]
    cost: QuadraticCost
    terminal: TerminalIngredients
    state_box: Optional[tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in self.input_box)
        object.__setattr__(self, "input_box", (lo, hi))
        if self.N < 1:
            raise InvalidInputError("horizon must be >= 1")
        if lo.shape != (self.sys.m,) or hi.shape != (self.sys.m,) or np.any(lo > hi):
            raise InvalidInputError("input box does not match the input dimension")
        if np.any(lo > 0) or np.any(hi < 0):
            raise InvalidInputError("input box must contain the origin")
        if self.state_box is not None:
            sb = tuple(np.atleast_1d(np.asarray(b, dtype=float)) for b in self.state_box)
            object.__setattr__(self, "state_box", sb)
        zx, zu = np.zeros(self.sys.n), np.zeros(self.sys.m)
        if self.cost(zx, zu) != 0.0 or self.terminal.V_f(zx) != 0.0:
            raise InvalidInputError("stage and terminal cost must vanish at the origin")

    def stage_cost(self, x, u) -> float:
        return self.cost(x, u)

    def project(self, u_seq) -> np.ndarray:
        lo, hi = self.input_box
        return np.clip(self.as_sequence(u_seq), lo, hi)

    def as_sequence(self, u_seq) -> np.ndarray:
        u = np.asarray(u_seq, dtype=float)
        if u.size != self.N * self.sys.m:
            raise InvalidInputError(f"input sequence needs {self.N * self.sys.m} entries, got {u.size}")
        return u.reshape(self.N, self.sys.m)

    def zero_sequence(self) -> np.ndarray:
        return np.zeros((self.N, self.sys.m))


@dataclass(frozen=True)
class OcpSolution:
    u_opt: np.ndarray
    x_traj: np.ndarray
    value: float
    terminal_value: float
    feasible: bool
    iterations: int = 0
    kkt_residual: float = 0.0

    @property
    def optimal_value(self) -> float:
        """``V_N^0(x)``, infinite when no admissible sequence was found."""
        return self.value if self.feasible else math.inf

    @property
    def first_input(self) -> np.ndarray:
        return self.u_opt[0]


@dataclass(frozen=True)
class AnalyticLaw:
    """Closed-form optimal input sequence for a scenario.

    ``sequence`` maps a state to the full optimal input sequence; when omitted
    the horizon must be 1 and the sequence is ``(kappa(x),)``.
    """

    kappa: Callable[[np.ndarray], np.ndarray]
    value_fn: Optional[Callable[[np.ndarray], float]] = None
    domain: Optional[tuple[np.ndarray, np.ndarray]] = None
    sequence: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def input_sequence(self, x, N: int, m: int) -> np.ndarray:
        if self.sequence is not None:
            return np.asarray(self.sequence(x), dtype=float).reshape(N, m)
        if N != 1:
            raise InvalidInputError("an analytic law without a sequence needs N = 1")
        return np.atleast_1d(np.asarray(self.kappa(x), dtype=float)).reshape(1, m)


# --- objective, gradient, feasibility ----------------------------------------

def _rollout(prob: MpcProblem, x, u_seq) -> np.ndarray:
    step = prob.sys.model
    states = np.empty((prob.N + 1, prob.sys.n))
    states[0] = x
    for k in range(prob.N):
        states[k + 1] = step(states[k], u_seq[k])
    return states


def _sequence_cost(prob: MpcProblem, states, u_seq) -> float:
    X = states[:-1]
    Q, R = prob.cost.Q, prob.cost.R
    return float(np.einsum("ki,ij,kj->", X, Q, X) + np.einsum("ki,ij,kj->", u_seq, R, u_seq))


def objective(prob: MpcProblem, x, u_seq) -> tuple[float, np.ndarray]:
    """``V_N(x, u)`` evaluated along the model, and the predicted states."""
    x = as_vector(x, prob.sys.n, "x")
    u_seq = prob.as_sequence(u_seq)
    states = _rollout(prob, x, u_seq)
    value = sum(prob.cost(states[k], u_seq[k]) for k in range(prob.N))
    value += prob.terminal.V_f(states[-1])
    if not math.isfinite(value):
        raise NumericalOverflowError("objective is not finite")
    return float(value), states


def in_input_box(prob: MpcProblem, u_seq, tol: float = 1e-12) -> bool:
    lo, hi = prob.input_box
    u = prob.as_sequence(u_seq)
    return bool(np.all(u >= lo - tol) and np.all(u <= hi + tol))


def feasible(prob: MpcProblem, x, u_seq) -> bool:
    """Inputs inside ``U`` and the predicted terminal state inside ``X_f``."""
    if not in_input_box(prob, u_seq):
        return False
    try:
        _, states = objective(prob, x, u_seq)
    except NumericalOverflowError:
        return False
    return prob.terminal.V_f(states[-1]) <= prob.terminal.c_f + FEAS_TOL


def _value_and_gradient(prob: MpcProblem, x, u_seq, terminal_weight_fn, stage: bool = True):
    """Objective plus terminal penalty and its gradient by a backward adjoint sweep."""
    states = _rollout(prob, x, u_seq)
    term = prob.terminal
    vf = term.V_f(states[-1])
    extra, weight = terminal_weight_fn(vf)
    value = vf + extra
    if stage:
        value += _sequence_cost(prob, states, u_seq)
    if not math.isfinite(value):
        return math.inf, None
    if stage:
        gx = 2.0 * states[:-1] @ prob.cost.Q
        gu = 2.0 * u_seq @ prob.cost.R
    else:
        gx = np.zeros((prob.N, prob.sys.n))
        gu = np.zeros_like(u_seq)
    p = (1.0 + weight) * term.grad_V_f(states[-1])
    grad = np.empty_like(u_seq)
    for k in range(prob.N - 1, -1, -1):
        A, B = model_jacobian(prob.sys, states[k], u_seq[k])
        grad[k] = gu[k] + B.T @ p
        p = gx[k] + A.T @ p
    return value, grad


def _projected_gradient_norm(prob: MpcProblem, u, g) -> float:
    return float(np.max(np.abs(u - prob.project(u - g))))


def _box_minimize(prob: MpcProblem, fun, u0, tol: float, max_iter: int):
    """Bound-constrained quasi-Newton minimization over ``U^N`` (L-BFGS-B).

    Returns the iterate, its value, the iteration count and the projected
    gradient norm at the iterate.
    """
    shape = (prob.N, prob.sys.m)
    lo, hi = prob.input_box
    bounds = list(zip(np.tile(lo, prob.N), np.tile(hi, prob.N)))

    def flat(z):
        val, grad = fun(z.reshape(shape))
        if grad is None:
            return 1e300, np.zeros(z.size)
        return val, grad.ravel()

    u0 = prob.project(u0)
    res = minimize(
        flat, u0.ravel(), jac=True, method="L-BFGS-B", bounds=bounds,
        options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-15, "maxcor": 20},
    )
    u = prob.project(res.x)
    val, grad = fun(u)
    pgn = math.inf if grad is None else _projected_gradient_norm(prob, u, grad)
    return u, val, int(res.nit), pgn


def _augmented_lagrangian(prob: MpcProblem, x, u0):
    """Outer multiplier loop; returns the iterate, inner iteration count and KKT residual.

    The gradient tolerance is relative to ``1 + |V_N|`` because the absolute
    noise floor of the gradient grows with the objective. A feasible iterate
    whose value no longer moves ends the loop as well.
    """
    c_f = prob.terminal.c_f
    lam, mu = 0.0, MU_START
    u = prob.project(u0)
    total = 0
    prev_viol = math.inf
    prev_val = math.inf
    stall = 0
    kkt = math.inf
    for _ in range(MAX_OUTER):
        def penalty(vf, lam=lam, mu=mu):
            g = vf - c_f
            if lam + mu * g >= 0.0:
                return lam * g + 0.5 * mu * g * g, lam + mu * g
            return -lam * lam / (2.0 * mu), 0.0

        def fun(v, penalty=penalty):
            return _value_and_gradient(prob, x, v, penalty)

        value, _ = fun(u)
        tol = GRAD_TOL * (1.0 + abs(value))
        u, _, iters, kkt = _box_minimize(prob, fun, u, tol, MAX_INNER)
        total += iters
        val, states = objective(prob, x, u)
        g = prob.terminal.V_f(states[-1]) - c_f
        viol = max(0.0, g)
        lam = max(0.0, lam + mu * g)
        scale = 1.0 + abs(val)
        if viol <= FEAS_TOL and (kkt <= GRAD_TOL * scale or abs(val - prev_val) <= 1e-12 * scale):
            break
        if viol > FEAS_TOL and viol > 0.25 * prev_viol:
            if mu >= MU_MAX:
                stall += 1
                if stall >= 3:
                    break
            mu = min(mu * MU_GROWTH, MU_MAX)
        else:
            stall = 0
        prev_viol = viol
        prev_val = val
    return u, total, kkt


def _phase_one(prob: MpcProblem, x, u0):
    """Minimize the terminal cost alone to find an admissible starting sequence."""

    def fun(v):
        return _value_and_gradient(prob, x, v, lambda vf: (0.0, 0.0), stage=False)

    u, f, iters, _ = _box_minimize(prob, fun, u0, 1e-10, MAX_INNER)
    return u, f, iters


def _make_solution(prob: MpcProblem, x, u, iterations: int, kkt: float) -> OcpSolution:
    u = prob.project(u)
    value, states = objective(prob, x, u)
    vf = prob.terminal.V_f(states[-1])
    ok = vf <= prob.terminal.c_f + FEAS_TOL
    return OcpSolution(u, states, value, vf, bool(ok), iterations, float(kkt))


def _better(a: Optional[OcpSolution], b: OcpSolution) -> bool:
    if a is None:
        return True
    if b.feasible != a.feasible:
        return b.feasible
    if b.feasible:
        return b.value < a.value
    return b.terminal_value < a.terminal_value


def solve(
    prob: MpcProblem,
    x,
    warm: Optional[np.ndarray] = None,
    extra_starts: Sequence[np.ndarray] = (),
) -> OcpSolution:
    """Local solution of the MPC problem at ``x`` (best of warm start and zero start).

    Infeasibility is reported through ``feasible=False`` together with the
    iterate closest to the terminal set.
    """
    x = as_vector(x, prob.sys.n, "x")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("state must be finite")
    starts: list[np.ndarray] = []
    best: Optional[OcpSolution] = None
    if warm is not None:
        w = prob.project(warm)
        starts.append(w)
        if feasible(prob, x, w):
            best = _make_solution(prob, x, w, 0, math.inf)
    starts.append(prob.zero_sequence())
    starts.extend(prob.project(s) for s in extra_starts)

    for u0 in starts:
        u, iters, kkt = _augmented_lagrangian(prob, x, u0)
        cand = _make_solution(prob, x, u, iters, kkt)
        if _better(best, cand):
            best = cand

    if not best.feasible:
        for u0 in starts:
            u1, f1, _ = _phase_one(prob, x, u0)
            if f1 <= prob.terminal.c_f:
                u, iters, kkt = _augmented_lagrangian(prob, x, u1)
                cand = _make_solution(prob, x, u, iters, kkt)
                if not cand.feasible:
                    cand = _make_solution(prob, x, u1, iters, math.inf)
                if _better(best, cand):
                    best = cand
                if best.feasible:
                    break
    return best


def analytic_solve(prob: MpcProblem, law: AnalyticLaw, x) -> OcpSolution:
    x = as_vector(x, prob.sys.n, "x")
    u = law.input_sequence(x, prob.N, prob.sys.m)
    return _make_solution(prob, x, u, 0, 0.0)


def _golden_section(fn: Callable[[float], float], a: float, b: float, iters: int = 60) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def brute_force_solve(prob: MpcProblem, x, grid_per_dim: int = 101) -> OcpSolution:
    """Exhaustive search over a grid of ``U^N`` (scalar input, ``N <= 2``) plus a golden-section polish."""
    if prob.sys.m != 1 or prob.N > 2:
        raise UnsupportedError("brute force supports m = 1 and N <= 2 only")
    if grid_per_dim < 101:
        raise InvalidInputError("grid_per_dim must be >= 101")
    x = as_vector(x, prob.sys.n, "x")
    lo, hi = float(prob.input_box[0][0]), float(prob.input_box[1][0])
    grid = np.linspace(lo, hi, grid_per_dim)
    h = grid[1] - grid[0]

    def score(u_seq) -> float:
        value, states = objective(prob, x, u_seq)
        if prob.terminal.V_f(states[-1]) > prob.terminal.c_f + FEAS_TOL:
            return math.inf
        return value

    best_val, best_u = math.inf, None
    for combo in itertools.product(grid, repeat=prob.N):
        v = score(np.array(combo))
        if v < best_val:
            best_val, best_u = v, np.array(combo)
    if best_u is None:
        u = np.full(prob.N, 0.0)
        return _make_solution(prob, x, u.reshape(prob.N, 1), grid_per_dim ** prob.N, math.inf)

    u = best_u.copy()
    for i in range(prob.N):
        def along(t, i=i):
            trial = u.copy()
            trial[i] = t
            val = score(trial)
            return val if math.isfinite(val) else 1e300
        a, b = max(lo, u[i] - h), min(hi, u[i] + h)
        t = _golden_section(along, a, b)
        trial = u.copy()
        trial[i] = t
        if score(trial) <= score(u):
            u = trial
    return _make_solution(prob, x, u.reshape(prob.N, 1), grid_per_dim ** prob.N, 0.0)


def warm_start(prob: MpcProblem, prev: OcpSolution) -> np.ndarray:
    """Shift the previous sequence and append the terminal law at the predicted terminal state."""
    if not prev.feasible:
        raise InvalidInputError("warm start needs a feasible previous solution")
    tail = np.atleast_1d(np.asarray(prob.terminal.kappa_f(prev.x_traj[-1]), dtype=float))
    seq = np.vstack([prev.u_opt[1:], tail.reshape(1, prob.sys.m)])
    return prob.project(seq)


@dataclass
class MpcController:
    """MPC law ``kappa_N`` backed by the gradient solver, a closed form, or brute force."""

    problem: MpcProblem
    backend: str = "gradient"
    law: Optional[AnalyticLaw] = None
    grid_per_dim: int = 101
    extra_starts: tuple = field(default=())

    def __post_init__(self):
        if self.backend not in ("gradient", "analytic", "brute"):
            raise InvalidInputError(f"unknown backend {self.backend!r}")
        if self.backend == "analytic" and self.law is None:
            raise InvalidInputError("analytic backend needs a law")

    def solve(self, x, warm: Optional[np.ndarray] = None) -> OcpSolution:
        if self.backend == "analytic":
            return analytic_solve(self.problem, self.law, x)
        if self.backend == "brute":
            return brute_force_solve(self.problem, x, self.grid_per_dim)
        return solve(self.problem, x, warm, self.extra_starts)

    def value(self, x, warm: Optional[np.ndarray] = None) -> float:
        return self.solve(x, warm).optimal_value

    def kappa(self, x, warm: Optional[np.ndarray] = None) -> np.ndarray:
        return control_law(self, x, warm)


def control_law(prob, x, warm: Optional[np.ndarray] = None) -> np.ndarray:
    """``kappa_N(x) = u^0(0; x)``; raises when the problem is infeasible at ``x``."""
    ctrl = prob if isinstance(prob, MpcController) else MpcController(prob)
    sol = ctrl.solve(x, warm)
    if not sol.feasible:
        raise InfeasibleStartError(f"no admissible input sequence at x = {np.asarray(x).tolist()}")
    return sol.u_opt[0]
