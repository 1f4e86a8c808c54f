import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpcmismatch.errors import InvalidInputError, NoSolutionError
from mpcmismatch.model import integrator_system, pendulum_system, signed_sqrt_system
from mpcmismatch.terminal import (
    QuadraticCost,
    TerminalIngredients,
    dlyap_solve,
    eigenvalues_2x2,
    min_eigenvalue_sym,
    pendulum_linear_feedback,
    pendulum_terminal_constants,
    sample_terminal_set,
    verify_assumption3,
)

A_K = np.array([[1.0, 0.1], [-0.9, 0.0]])
Q_K = np.array([[5.0, 4.0], [4.0, 5.0]])


def _residual(A, P, C):
    return np.max(np.abs(A.T @ P @ A - P + C))


def test_dlyap_zero_dynamics():
    assert np.allclose(dlyap_solve(np.zeros((2, 2)), np.eye(2)), np.eye(2), atol=1e-14)


def test_dlyap_pendulum_weight():
    P = dlyap_solve(A_K, 2 * Q_K)
    assert np.allclose(P, [[31.133, 10.196], [10.196, 10.311]], atol=1e-3)
    assert _residual(A_K, P, 2 * Q_K) <= 1e-10


def test_dlyap_scalar_fixed_point():
    P = dlyap_solve(np.diag([0.5, 0.5]), np.eye(2))
    assert np.allclose(P, np.diag([4 / 3, 4 / 3]), atol=1e-12)


def test_dlyap_unstable_raises():
    with pytest.raises(NoSolutionError):
        dlyap_solve(np.diag([1.0, 0.5]), np.eye(2))


def test_dlyap_asymmetric_rhs_rejected():
    with pytest.raises(InvalidInputError):
        dlyap_solve(np.zeros((2, 2)), np.array([[1.0, 2.0], [0.0, 1.0]]))


@settings(max_examples=100, deadline=None)
@given(
    entries=st.lists(st.floats(-1.0, 1.0), min_size=9, max_size=9),
    n=st.sampled_from([1, 2, 3]),
)
def test_dlyap_residual_and_definiteness(entries, n):
    A = np.array(entries[: n * n]).reshape(n, n)
    rho = max(abs(np.linalg.eigvals(A))) if n > 1 else abs(A[0, 0])
    A = A * (0.9 / rho) if rho >= 0.9 else A
    C = np.eye(n)
    P = dlyap_solve(A, C)
    assert _residual(A, P, C) <= 1e-10
    assert np.max(np.abs(P - P.T)) <= 1e-12
    assert np.all(np.linalg.eigvalsh(P) > 0)


def test_eigenvalues_closed_loop():
    ev = sorted(z.real for z in eigenvalues_2x2(A_K))
    assert abs(ev[0] - 0.1) <= 1e-12 and abs(ev[1] - 0.9) <= 1e-12


def test_eigenvalues_identity_and_rotation():
    assert eigenvalues_2x2(np.eye(2)) == (1, 1)
    ev = eigenvalues_2x2([[0.0, -1.0], [1.0, 0.0]])
    assert sorted((z.imag for z in ev)) == [-1.0, 1.0]
    assert all(z.real == 0 for z in ev)


def test_linear_feedback_reproduces_reference_closed_loop():
    fb = pendulum_linear_feedback()
    assert np.allclose(fb.A_K, A_K, atol=1e-15)
    assert np.allclose(fb.Q_K(QuadraticCost(np.eye(2), np.eye(1))), Q_K)


def test_pendulum_constants():
    c = pendulum_terminal_constants()
    assert c.a == pytest.approx(2.8643e-3, abs=1e-6)
    assert c.b == pytest.approx(0.045675, abs=1e-5)
    assert np.max(np.abs(c.P_f - c.P_f.T)) <= 1e-12
    assert min_eigenvalue_sym(c.P_f) > 0
    assert c.c_f == pytest.approx(min_eigenvalue_sym(c.P_f) / 8)


def test_pendulum_bracket_roots_are_symmetric_roots_of_the_quartic():
    c = pendulum_terminal_constants()
    # 1 - b s^2 - a s^4 = 0 is a quadratic in s^2
    s2 = (-c.b + math.sqrt(c.b ** 2 + 4 * c.a)) / (2 * c.a)
    assert c.x_star == pytest.approx(math.sqrt(s2), abs=1e-8)
    assert c.x_lower == pytest.approx(-c.x_star, abs=1e-8)
    assert abs(c.bracket(c.x_star)) < 1e-9
    assert c.x_star > 1 / (2 * math.sqrt(2))


def test_pendulum_terminal_descent_and_input_feasibility():
    c = pendulum_terminal_constants()
    term = TerminalIngredients(c.P_f, c.c_f, lambda x: np.array([-2 * x[0] - 2 * x[1]]))
    rep = verify_assumption3(pendulum_system(), QuadraticCost(np.eye(2), np.eye(1)), term, ([-1.0], [1.0]), 10_000, 0)
    assert rep.passed
    pts = sample_terminal_set(term, 10_000, 0)
    norms = np.linalg.norm(pts, axis=1)
    assert np.all(norms <= 1 / (2 * math.sqrt(2)) + 1e-12)
    assert all(c.bracket(s) > 0 for s in norms)
    assert np.all(np.abs(2 * pts[:, 0] + 2 * pts[:, 1]) <= 1 + 1e-12)


def test_scalar_terminal_descent():
    term = TerminalIngredients([[4.0]], 4.0, lambda x: -np.asarray(x))
    rep = verify_assumption3(signed_sqrt_system(), QuadraticCost([[1.0]], [[1.0]]), term, ([-1.0], [1.0]), 500)
    assert rep.passed
    # V_f(0) - 4x^2 + 2x^2 = -2x^2, worst at the origin
    assert rep.max_violation == pytest.approx(0.0, abs=1e-12)


def test_integrator_ingredients_violate_terminal_descent():
    term = TerminalIngredients([[0.5]], 0.5, lambda x: -np.asarray(x))
    rep = verify_assumption3(integrator_system(), QuadraticCost([[0.5]], [[0.5]]), term, ([-1.0], [1.0]), 500)
    # violation x^2 / 2, maximal on the boundary |x| = 1 of X_f
    assert not rep.passed
    assert rep.max_violation == pytest.approx(0.5, abs=1e-12)


def test_terminal_samples_cover_the_boundary():
    term = TerminalIngredients(np.diag([1.0, 4.0]), 1.0, lambda x: np.zeros(1))
    pts = sample_terminal_set(term, 200, 3)
    vals = np.einsum("ij,jk,ik->i", pts, term.P_f, pts)
    assert np.all(vals <= 1.0 + 1e-12)
    assert np.isclose(vals.max(), 1.0)


def test_quadratic_cost_validation():
    with pytest.raises(InvalidInputError):
        QuadraticCost([[1.0, 2.0], [2.0, 1.0]], [[1.0]])
    with pytest.raises(InvalidInputError):
        QuadraticCost(np.eye(2), [[0.0]])
    with pytest.raises(InvalidInputError):
        verify_assumption3(integrator_system(), QuadraticCost([[1.0]], [[1.0]]),
                           TerminalIngredients([[1.0]], 1.0, lambda x: -x), ([-1.0], [1.0]), 0)
