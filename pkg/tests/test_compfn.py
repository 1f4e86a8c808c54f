import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpcmismatch.compfn import (
    JointComparisonFn,
    ScalarComparisonFn,
    TabulatedEnvelope,
    check_class_k,
    check_joint_k,
    find_delta_for_rho,
    quadratic,
    scaling_limit_estimate,
)
from mpcmismatch.errors import DivisionDomainError, InvalidInputError

GRID = [0.0, 0.5, 1.0, 2.0]


def test_square_is_class_k():
    assert check_class_k(ScalarComparisonFn(lambda s: s * s), GRID)


def test_saturation_is_not_strict():
    assert not check_class_k(ScalarComparisonFn(lambda s: min(1.0, s)), GRID)


def test_offset_fails_at_zero():
    assert not check_class_k(ScalarComparisonFn(lambda s: s - 0.1), [0.0, 0.5, 1.0])


def test_empty_grid_rejected():
    with pytest.raises(InvalidInputError):
        check_class_k(quadratic(1.0), [])


def test_grid_without_zero_rejected():
    with pytest.raises(InvalidInputError):
        check_class_k(quadratic(1.0), [0.5, 1.0])


def test_plateau_within_strictness_tolerance_is_rejected():
    f = ScalarComparisonFn(lambda s: 0.0 if s == 0 else 1.0 + 1e-14 * s)
    assert not check_class_k(f, [0.0, 1.0, 2.0])


def test_joint_k_product_and_sum():
    grid = [0.0, 0.1, 1.0, 3.0]
    assert check_joint_k(JointComparisonFn(lambda s, t: s * t), grid, grid)
    assert not check_joint_k(JointComparisonFn(lambda s, t: s + t), grid, grid)


def test_scaling_example_a_fails():
    rep = scaling_limit_estimate(JointComparisonFn(lambda s, t: s * t), quadratic(1.0), 0.1)
    assert rep.verdict == "fails"
    assert rep.limit_estimate > 10


def test_scaling_example_b_fails_with_limit_two():
    gamma = JointComparisonFn(lambda s, t: 2 * s * t / (s + t))
    rep = scaling_limit_estimate(gamma, ScalarComparisonFn(lambda s: s), 0.1)
    assert rep.verdict == "fails"
    # ratio 2t/(s+t) at s = 1e-8, t = 0.1
    assert rep.limit_estimate == pytest.approx(0.2 / (0.1 + 1e-8), rel=1e-12)


def test_scaling_sqrt_envelope_fails():
    gamma = JointComparisonFn(lambda s, t: s * t + 4 * math.sqrt(s * t))
    assert scaling_limit_estimate(gamma, quadratic(2.0), 1.0).verdict == "fails"


def test_scaling_quadratic_form_passes():
    gamma = JointComparisonFn(lambda s, t: t * s * s)
    rep = scaling_limit_estimate(gamma, quadratic(2.0), 1.0)
    assert rep.verdict == "passes"
    assert rep.limit_estimate == pytest.approx(0.5, abs=1e-12)


def test_scaling_samples_decrease_toward_zero():
    rep = scaling_limit_estimate(JointComparisonFn(lambda s, t: t * s * s), quadratic(2.0), 1.0, 1e-6, 2.0, 16)
    s_vals = [s for s, _ in rep.ratio_samples]
    assert len(s_vals) == 16
    assert all(b < a for a, b in zip(s_vals, s_vals[1:]))
    assert s_vals[0] == pytest.approx(2.0) and s_vals[-1] == pytest.approx(1e-6)


def test_scaling_oscillating_ratio_is_inconclusive():
    gamma = JointComparisonFn(lambda s, t: t * s * s * (1.5 + math.sin(40 * math.log(s))))
    assert scaling_limit_estimate(gamma, quadratic(1.0), 0.5).verdict == "inconclusive"


def test_scaling_zero_alpha_is_domain_error():
    with pytest.raises(DivisionDomainError):
        scaling_limit_estimate(JointComparisonFn(lambda s, t: s * t), ScalarComparisonFn(lambda s: 0.0), 0.1)


def test_scaling_argument_checks():
    g, a = JointComparisonFn(lambda s, t: s * t), quadratic(1.0)
    with pytest.raises(InvalidInputError):
        scaling_limit_estimate(g, a, 0.1, s_min=1.0, s_max=0.5)
    with pytest.raises(InvalidInputError):
        scaling_limit_estimate(g, a, 0.1, points=4)


def test_find_delta_quadratic():
    gamma = JointComparisonFn(lambda s, t: t * s * s)
    s_grid = list(np.geomspace(1e-6, 1.0, 40))
    t_grid = [round(0.1 * k, 10) for k in range(1, 41)]
    # t s^2 < 2 s^2 iff t < 2; the largest grid value below 2 is 1.9
    assert find_delta_for_rho(gamma, quadratic(2.0), 1.0, s_grid, t_grid) == pytest.approx(1.9)


def test_find_delta_sqrt_envelope_none():
    gamma = JointComparisonFn(lambda s, t: s * t + 4 * math.sqrt(s * t))
    s_grid = list(np.geomspace(1e-6, 1.0, 40))
    t_grid = list(np.geomspace(1e-4, 1.0, 20))
    assert find_delta_for_rho(gamma, quadratic(2.0), 1.0, s_grid, t_grid) is None


def test_find_delta_zero_gamma_returns_largest():
    t_grid = [0.5, 1.0, 7.0]
    assert find_delta_for_rho(JointComparisonFn(lambda s, t: 0.0), quadratic(1.0), 2.0, [0.1, 1.0], t_grid) == 7.0


def test_find_delta_rejects_bad_grids():
    g = JointComparisonFn(lambda s, t: 0.0)
    with pytest.raises(InvalidInputError):
        find_delta_for_rho(g, quadratic(1.0), 1.0, [], [1.0])
    with pytest.raises(InvalidInputError):
        find_delta_for_rho(g, quadratic(1.0), 1.0, [1.0, 0.5], [1.0])


def test_tabulated_envelope():
    env = TabulatedEnvelope((1.0, 2.0), (0.5, 1.5))
    assert env(0.0) == 0.0
    assert env(0.5) == pytest.approx(0.25)
    assert env(1.5) == pytest.approx(1.0)
    assert env(2.0) == 1.5
    assert math.isinf(env(2.1))


@settings(max_examples=100, deadline=None)
@given(
    c=st.floats(0.01, 5.0),
    tau=st.floats(1e-3, 1.0),
    shrink=st.floats(0.01, 0.99),
)
def test_passing_scaling_survives_smaller_tau(c, tau, shrink):
    gamma = JointComparisonFn(lambda s, t: c * t * s * s + t * t * s ** 3)
    alpha = quadratic(2.0)
    rep = scaling_limit_estimate(gamma, alpha, tau, 1e-8, 1.0, 32)
    if rep.verdict == "passes":
        smaller = scaling_limit_estimate(gamma, alpha, tau * shrink, 1e-8, 1.0, 32)
        assert all(r < 1.0 for _, r in smaller.ratio_samples)


@settings(max_examples=100, deadline=None)
@given(c=st.floats(0.01, 10.0), p=st.floats(1.0, 3.0))
def test_found_delta_satisfies_inequality(c, p):
    gamma = JointComparisonFn(lambda s, t: c * (t ** p) * s * s)
    alpha = quadratic(1.0)
    s_grid = list(np.geomspace(1e-4, 1.0, 25))
    t_grid = list(np.linspace(0.05, 3.0, 30))
    delta = find_delta_for_rho(gamma, alpha, 1.0, s_grid, t_grid)
    if delta is not None:
        assert all(gamma(s, delta) < alpha(s) for s in s_grid)


@settings(max_examples=100, deadline=None)
@given(a=st.floats(0.01, 10.0), b=st.floats(0.01, 10.0))
def test_joint_functions_vanish_on_axes(a, b):
    g = JointComparisonFn(lambda s, t: a * s * t + b * math.sqrt(s * t))
    grid = [0.0, 0.01, 0.5, 2.0]
    assert all(g(s, 0.0) == 0.0 and g(0.0, s) == 0.0 for s in grid)
    assert check_joint_k(g, grid, grid)
