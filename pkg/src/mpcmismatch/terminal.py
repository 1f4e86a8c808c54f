"""Terminal ingredients: quadratic costs, discrete Lyapunov synthesis and the
terminal-descent check on ``X_f``.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InvalidInputError, NoSolutionError
from .model import ParametricSystem


@dataclass(frozen=True)
class QuadraticCost:
    """Stage cost ``|x|_Q^2 + |u|_R^2``."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q", np.atleast_2d(np.asarray(self.Q, dtype=float)))
        object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, dtype=float)))
        for name in ("Q", "R"):
            M = getattr(self, name)
            if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=1e-12):
                raise InvalidInputError(f"{name} must be square and symmetric")
            if min_eigenvalue_sym(M) <= 0:
                raise InvalidInputError(f"{name} must be positive definite")

    def __call__(self, x, u) -> float:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return float(x @ self.Q @ x + u @ self.R @ u)

    def grad_x(self, x, u) -> np.ndarray:
        return 2.0 * (self.Q @ x)

    def grad_u(self, x, u) -> np.ndarray:
        return 2.0 * (self.R @ u)

    @property
    def c1(self) -> float:
        """Smallest singular value of Q."""
        return min_eigenvalue_sym(self.Q)


@dataclass(frozen=True)
class TerminalIngredients:
    """``V_f(x) = |x|_{P_f}^2``, ``X_f = lev_{c_f} V_f`` and the terminal law."""

    P_f: np.ndarray
    c_f: float
    kappa_f: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        object.__setattr__(self, "P_f", np.atleast_2d(np.asarray(self.P_f, dtype=float)))
        if not self.c_f > 0:
            raise InvalidInputError("c_f must be positive")

    def V_f(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.P_f @ x)

    def grad_V_f(self, x) -> np.ndarray:
        return 2.0 * (self.P_f @ np.asarray(x, dtype=float))

    def in_terminal_set(self, x, tol: float = 1e-8) -> bool:
        return self.V_f(x) <= self.c_f + tol

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        half = np.sqrt(self.c_f * np.diag(np.linalg.inv(self.P_f)))
        return -half, half


@dataclass(frozen=True)
class LinearFeedback:
    A: np.ndarray
    B: np.ndarray
    K: np.ndarray

    @property
    def A_K(self) -> np.ndarray:
        return np.asarray(self.A, float) - np.asarray(self.B, float) @ np.asarray(self.K, float)

    def Q_K(self, cost: QuadraticCost) -> np.ndarray:
        K = np.asarray(self.K, float)
        return cost.Q + K.T @ cost.R @ K


def eigenvalues_2x2(A) -> tuple[complex, complex]:
    """Roots of ``lambda^2 - tr(A) lambda + det(A)``, larger real part first."""
    A = np.asarray(A, dtype=float)
    if A.shape != (2, 2):
        raise InvalidInputError("expected a 2x2 matrix")
    tr = A[0, 0] + A[1, 1]
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    disc = cmath.sqrt(tr * tr - 4.0 * det)
    l1 = (tr + disc) / 2.0
    l2 = (tr - disc) / 2.0
    # the smaller-magnitude root of a real quadratic is better conditioned via det
    if abs(l1) > abs(l2) and l1 != 0:
        l2 = det / l1
    elif l2 != 0:
        l1 = det / l2
    return l1, l2


def min_eigenvalue_sym(M) -> float:
    """Smallest eigenvalue of a symmetric matrix; closed form for sizes 1 and 2."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape == (1, 1):
        return float(M[0, 0])
    if M.shape == (2, 2):
        mean = 0.5 * (M[0, 0] + M[1, 1])
        rad = math.hypot(0.5 * (M[0, 0] - M[1, 1]), M[0, 1])
        return mean - rad
    return float(np.linalg.eigvalsh(M)[0])


def spectral_radius(A) -> float:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape == (1, 1):
        return abs(float(A[0, 0]))
    if A.shape == (2, 2):
        return max(abs(z) for z in eigenvalues_2x2(A))
    return float(max(abs(np.linalg.eigvals(A))))


def dlyap_solve(A, C) -> np.ndarray:
    """Solve ``A^T P A - P = -C`` through the column-stacked linear system.

    Adequate for n <= 8. Raises ``NoSolutionError`` unless ``A`` is Schur stable.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or C.shape != (n, n):
        raise InvalidInputError("A and C must be square and of equal size")
    if not np.allclose(C, C.T, atol=1e-12):
        raise InvalidInputError("C must be symmetric")
    if spectral_radius(A) >= 1.0:
        raise NoSolutionError("spectral radius of A must be < 1")
    # vec(A^T P A) = (A^T kron A^T) vec(P) for column-major vec
    M = np.kron(A.T, A.T) - np.eye(n * n)
    try:
        p = np.linalg.solve(M, -C.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise NoSolutionError("stacked Lyapunov system is singular") from exc
    P = p.reshape(n, n, order="F")
    P = 0.5 * (P + P.T)
    residual = np.max(np.abs(A.T @ P @ A - P + C))
    if residual > 1e-10 * max(1.0, np.max(np.abs(C))):
        raise NoSolutionError(f"Lyapunov residual {residual:.3g} too large")
    return P


@dataclass(frozen=True)
class TerminalDescentReport:
    max_violation: float
    worst_point: np.ndarray
    input_feasible: bool
    samples: int

    @property
    def passed(self) -> bool:
        return self.max_violation <= 1e-9 and self.input_feasible


def sample_terminal_set(term: TerminalIngredients, count: int, seed: int) -> np.ndarray:
    """Rejection samples from ``X_f`` plus the ends of its principal axes."""
    if count < 1:
        raise InvalidInputError("sample_count must be positive")
    rng = np.random.default_rng(seed)
    lo, hi = term.bounding_box()
    n = lo.size
    pts: list[np.ndarray] = []
    w, V = np.linalg.eigh(term.P_f)
    for i in range(n):
        r = math.sqrt(term.c_f / w[i])
        pts.append(V[:, i] * r)
        pts.append(-V[:, i] * r)
    pts.append(np.zeros(n))
    batch = max(64, count)
    while len(pts) < count:
        cand = rng.uniform(lo, hi, size=(batch, n))
        vals = np.einsum("ij,jk,ik->i", cand, term.P_f, cand)
        for c in cand[vals <= term.c_f]:
            pts.append(c)
            if len(pts) >= count:
                break
    return np.array(pts[:count])


def verify_assumption3(
    sys: ParametricSystem,
    stage_cost: Callable[[np.ndarray, np.ndarray], float],
    term: TerminalIngredients,
    input_box: tuple[np.ndarray, np.ndarray],
    sample_count: int = 10_000,
    seed: int = 0,
) -> TerminalDescentReport:
    """Check ``V_f(f^(x, k_f(x))) <= V_f(x) - l(x, k_f(x))`` and ``k_f(x) in U`` on samples of ``X_f``."""
    pts = sample_terminal_set(term, sample_count, seed)
    if len(pts) == 0:
        raise InvalidInputError("empty sample set")
    lo, hi = (np.asarray(b, dtype=float) for b in input_box)
    worst = -math.inf
    worst_pt = pts[0]
    feasible = True
    for x in pts:
        u = np.atleast_1d(term.kappa_f(x))
        if np.any(u < lo - 1e-12) or np.any(u > hi + 1e-12):
            feasible = False
        viol = term.V_f(sys.model(x, u)) - term.V_f(x) + stage_cost(x, u)
        if viol > worst:
            worst = viol
            worst_pt = x
    return TerminalDescentReport(float(worst), np.array(worst_pt), feasible, len(pts))


@dataclass(frozen=True)
class PendulumConstants:
    P_f: np.ndarray
    a: float
    b: float
    x_star: float
    x_lower: float
    c_f: float

    def bracket(self, s: float) -> float:
        """Descent margin polynomial ``1 - b s^2 - a s^4``."""
        return 1.0 - self.b * s * s - self.a * s ** 4

    def to_dict(self) -> dict:
        return {
            "P_f": self.P_f.tolist(),
            "a": self.a,
            "b": self.b,
            "x_star": self.x_star,
            "x_lower": self.x_lower,
            "c_f": self.c_f,
        }


def pendulum_linear_feedback(k_hat: float = 5.0, delta: float = 0.1) -> LinearFeedback:
    """Linearization of the Euler pendulum model at the upright position with ``K = [2 2]``."""
    A = np.array([[1.0, delta], [delta, 1.0]])
    B = np.array([[0.0], [delta * k_hat]])
    return LinearFeedback(A, B, np.array([[2.0, 2.0]]))


def _bisect(fn: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10) -> float:
    flo = fn(lo)
    if flo == 0.0:
        return lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def pendulum_terminal_constants(
    k_hat: float = 5.0, delta: float = 0.1, P_f: Optional[np.ndarray] = None
) -> PendulumConstants:
    """Terminal weight, ``c_f`` and the bracket-polynomial constants for the pendulum."""
    fb = pendulum_linear_feedback(k_hat, delta)
    cost = QuadraticCost(np.eye(2), np.eye(1))
    if P_f is None:
        P_f = dlyap_solve(fb.A_K, 2.0 * fb.Q_K(cost))
    a = float(P_f[1, 1]) * delta ** 2 / 36.0
    b = delta * float(np.linalg.norm(fb.A_K.T @ P_f @ np.array([0.0, 1.0]))) / 3.0

    def bracket(s: float) -> float:
        return 1.0 - b * s * s - a * s ** 4

    hi = 1.0
    while bracket(hi) > 0:
        hi *= 2.0
    x_star = _bisect(bracket, 0.0, hi)
    # even polynomial: the negative root mirrors the positive one
    x_lower = -_bisect(lambda s: bracket(-s), 0.0, hi)
    c_f = float(min_eigenvalue_sym(P_f)) / 8.0
    return PendulumConstants(np.asarray(P_f), a, b, x_star, x_lower, c_f)
