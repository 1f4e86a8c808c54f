"""Acceptance criteria 1-11, one summary line each.

Run with ``pytest tests/test_acceptance.py -s`` or ``python tests/test_acceptance.py``.
Sub-checks that cannot hold because of inconsistent reference data are run
as written and marked ``xfail(strict=True)``; their criterion line reads FAIL.
"""
import math
import sys
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from conftest import record  # noqa: E402

from mpcmismatch.cli import run as cli_run  # noqa: E402
from mpcmismatch.closedloop import (  # noqa: E402
    cost_difference_field,
    descent_certification,
    descent_samples,
    lyapunov_increase_envelope,
    robust_descent_residuals,
    run_closed_loop,
)
from mpcmismatch.compfn import JointComparisonFn, ScalarComparisonFn, quadratic, scaling_limit_estimate  # noqa: E402
from mpcmismatch.ocp import brute_force_solve, feasible, objective, warm_start  # noqa: E402
from mpcmismatch.scenarios import get_scenario  # noqa: E402
from mpcmismatch.terminal import dlyap_solve, eigenvalues_2x2, pendulum_terminal_constants  # noqa: E402

A_K = np.array([[1.0, 0.1], [-0.9, 0.0]])
Q_K = np.array([[5.0, 4.0], [4.0, 5.0]])
P_F = np.array([[31.133, 10.196], [10.196, 10.311]])


def _ok(flag, detail=""):
    return bool(flag), detail


def _assert_all(checks, skip=()):
    bad = {k: v[1] for k, v in checks.items() if k not in skip and not v[0]}
    assert not bad, bad


# 1 ---------------------------------------------------------------------------------

def test_criterion_01_lyapunov_synthesis():
    P = dlyap_solve(A_K, 2 * Q_K)
    ev = sorted(z.real for z in eigenvalues_2x2(A_K))
    checks = {
        "P_f": _ok(np.max(np.abs(P - P_F)) <= 1e-3, f"max error {np.max(np.abs(P - P_F)):.2e}"),
        "eigenvalues": _ok(abs(ev[0] - 0.1) <= 1e-12 and abs(ev[1] - 0.9) <= 1e-12, f"{ev}"),
    }
    record(1, "Lyapunov synthesis", checks)
    _assert_all(checks)


# 2 ---------------------------------------------------------------------------------

def _criterion_02_checks():
    c = pendulum_terminal_constants()
    return {
        "a": _ok(abs(c.a - 2.8643e-3) <= 1e-6, f"a = {c.a:.6e}"),
        "b": _ok(abs(c.b - 0.045675) <= 1e-5, f"b = {c.b:.6f}"),
        "x*": _ok(abs(c.x_star - 0.9774) <= 1e-3,
                  f"root of 1 - b s^2 - a s^4 is {c.x_star:.4f}, reference 0.9774 solves 1 - b s - s^2"),
    }


def test_criterion_02_pendulum_constants():
    checks = _criterion_02_checks()
    record(2, "Pendulum constants", checks)
    _assert_all(checks, skip=("x*",))


@pytest.mark.xfail(strict=True, reason="reference x* is not a root of the stated bracket polynomial (ledgered)")
def test_criterion_02_x_star():
    ok, detail = _criterion_02_checks()["x*"]
    assert ok, detail


# 3 ---------------------------------------------------------------------------------

def test_criterion_03_solver_vs_analytic():
    scn = get_scenario("integrator")
    ctrl = scn.controller
    err_u = err_v = 0.0
    for x in np.linspace(-3.0, 3.0, 41):
        sol = ctrl.solve([x])
        err_u = max(err_u, abs(sol.u_opt[0, 0] + max(-1.0, min(1.0, 0.6 * x))))
    for x in np.linspace(-5 / 3, 5 / 3, 41):
        err_v = max(err_v, abs(ctrl.solve([x]).value - 0.8 * x * x))
    checks = {
        "kappa_2": _ok(err_u <= 1e-4, f"max error {err_u:.2e}"),
        "V_2^0": _ok(err_v <= 1e-4, f"max error {err_v:.2e}"),
    }
    record(3, "Solver vs analytic (integrator)", checks)
    _assert_all(checks)


# 4 ---------------------------------------------------------------------------------

def test_criterion_04_oracle_equivalence():
    scn = get_scenario("integrator")
    err = 0.0
    for x in np.linspace(-3.0, 3.0, 21):
        bf = brute_force_solve(scn.problem, [x])
        gr = scn.controller.solve([x])
        err = max(err, abs(bf.value - gr.value))
    checks = {"values": _ok(err <= 1e-3, f"max gap {err:.2e}")}
    record(4, "Oracle equivalence (brute force vs gradient)", checks)
    _assert_all(checks)


# 5 ---------------------------------------------------------------------------------

def test_criterion_05_strong_stability_window():
    scn = get_scenario("integrator")
    xs = np.linspace(-3.0, 3.0, 61)
    inner = descent_samples(scn.controller, scn.plant, xs, np.linspace(-0.9, 0.9, 19))
    verdicts = {}
    for radius in (0.3, 0.6, 0.9):
        rep = descent_certification(scn.controller, scn.plant, scn.rho, radius, None, None, scn.alpha3, precomputed=inner)
        verdicts[radius] = rep.verdict
    # theta = -2.5 leaves X_2 at once; the window edge 7/3 is approached from above
    outer = descent_certification(scn.controller, scn.plant, scn.rho, 2.5, xs, np.linspace(0.0, 2.5, 11), scn.alpha3)
    escape = run_closed_loop(scn.controller, scn.plant, [3.0], [-1.5], 50)
    checks = {
        "SES for radii <= 0.9": _ok(all(v == "SES" for v in verdicts.values()), f"{verdicts}"),
        "not SES at 2.5": _ok(outer.verdict in ("RAS-only", "inconclusive", "unstable"), outer.verdict),
        "theta=-1.5 escapes": _ok(escape.escaped, f"escaped={escape.escaped}"),
    }
    record(5, "Strong-stability window (integrator)", checks)
    _assert_all(checks)


# 6 ---------------------------------------------------------------------------------

def test_criterion_06_sqrt_counterexample():
    scn = get_scenario("signed-sqrt")
    xs = np.linspace(-1.0, 1.0, 41)
    ths = np.linspace(-1.0, 1.0, 41)
    fld = cost_difference_field(scn.controller, scn.plant, xs, ths)
    expected = np.array([[2 * (abs(t) - abs(x)) * abs(x) for t in ths] for x in xs])
    err = float(np.max(np.abs(fld.dv - expected)))
    rep = descent_certification(scn.controller, scn.plant, 2.0, 0.5, xs, np.linspace(-0.5, 0.5, 21), scn.alpha3)
    scal = scaling_limit_estimate(JointComparisonFn(lambda s, t: s * t + 4 * math.sqrt(s * t)), quadratic(2.0), 1.0)
    checks = {
        "field": _ok(err <= 1e-8, f"max error {err:.2e}"),
        "verdict": _ok(rep.verdict == "RAS-only", rep.verdict),
        "scaling": _ok(scal.verdict == "fails", scal.verdict),
    }
    record(6, "Counterexample reproduction (signed sqrt)", checks)
    _assert_all(checks)


# 7 ---------------------------------------------------------------------------------

def test_criterion_07_scaling_calibration():
    a = scaling_limit_estimate(JointComparisonFn(lambda s, t: s * t), quadratic(1.0), 0.1)
    b = scaling_limit_estimate(JointComparisonFn(lambda s, t: 2 * s * t / (s + t)), ScalarComparisonFn(lambda s: s), 0.1)
    q = scaling_limit_estimate(JointComparisonFn(lambda s, t: t * s * s), quadratic(2.0), 1.0)
    checks = {
        "example A": _ok(a.verdict == "fails", a.verdict),
        "example B": _ok(b.verdict == "fails" and 1.8 <= b.limit_estimate <= 2.2, f"{b.verdict}, L = {b.limit_estimate:.4f}"),
        "quadratic": _ok(q.verdict == "passes", q.verdict),
    }
    record(7, "Scaling estimator calibration", checks)
    _assert_all(checks)


# 8 ---------------------------------------------------------------------------------

def test_criterion_08_sin_ses():
    scn = get_scenario("sin")
    env = lyapunov_increase_envelope(scn.lyapunov, scn.controller, scn.plant, np.linspace(-2, 2, 161), np.linspace(-0.5, 0.5, 41))
    sigma = env(0.5)
    slow = []
    for x0 in (2.0, -2.0, 1.0, -1.0, 0.3, -0.3):
        for th in np.linspace(-0.5, 0.5, 11):
            run = run_closed_loop(scn.controller, scn.plant, [x0], [th], 200)
            if run.escaped or not np.any(run.norms < 1e-6):
                slow.append((x0, float(th)))
        for seed in range(5):
            seq = np.random.default_rng(seed).uniform(-0.5, 0.5, size=(200, 1))
            run = run_closed_loop(scn.controller, scn.plant, [x0], seq, 200)
            if run.escaped or not np.any(run.norms < 1e-6):
                slow.append((x0, f"seed {seed}"))
    checks = {
        "sigma_V(0.5)": _ok(sigma <= 0.75 - 1e-3, f"sigma_V(0.5) = {sigma:.4f}"),
        "runs": _ok(not slow, f"not converged: {slow[:4]}"),
    }
    record(8, "Sin-example SES", checks)
    _assert_all(checks)


# 9 ---------------------------------------------------------------------------------

def test_criterion_09_pendulum_closed_loop():
    scn = get_scenario("pendulum")
    x0 = [math.pi, 0.0]
    nominal = run_closed_loop(scn.controller, scn.plant, x0, [0.0, 0.0, 1.0], 150)
    damped = run_closed_loop(scn.controller, scn.plant, x0, [0.7, 0.0, 1.0], 150)
    weak = run_closed_loop(scn.controller, scn.plant, x0, [0.0, -4.0, 1.0], 150)
    tail = float(np.min(weak.norms[len(weak.norms) // 2:]))
    checks = {
        "discretization mismatch": _ok(nominal.norms[-1] < 1e-3 and not nominal.escaped, f"|x(150)| = {nominal.norms[-1]:.2e}"),
        "damping": _ok(damped.norms[-1] < 1e-3 and not damped.escaped, f"|x(150)| = {damped.norms[-1]:.2e}"),
        "overestimated gain": _ok(weak.escaped or tail > 0.1, f"escaped={weak.escaped}, tail min {tail:.3f}"),
    }
    record(9, "Pendulum closed loop", checks)
    _assert_all(checks)


# 10 --------------------------------------------------------------------------------

def _residual_samples(scn, x_lo, x_hi, radius, count, seed):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        x = rng.uniform(x_lo, x_hi)
        ths = []
        for _ in range(5):
            if scn.plant.n_theta == 1:
                ths.append([rng.uniform(-radius, radius)])
            else:
                a, r = rng.uniform(0, 2 * math.pi), radius * math.sqrt(rng.uniform())
                ths.append([r * math.cos(a), r * math.sin(a), 1.0])
        for th, res in zip(ths, robust_descent_residuals(scn.controller, scn.plant, x, ths)):
            if res is not None:
                out.append((x.tolist(), th, res))
    return out[:count]


@lru_cache(maxsize=None)
def _criterion_10_checks():
    checks = {}
    for name, lo, hi, radius in (("pendulum", [-1.0, -1.0], [1.0, 1.0], 0.5), ("integrator", [-3.0], [3.0], 0.9)):
        scn = get_scenario(name)
        samples = _residual_samples(scn, np.array(lo), np.array(hi), radius, 500, 0)
        worst = max(samples, key=lambda s: s[2])
        checks[name] = _ok(worst[2] <= 1e-6, f"max residual {worst[2]:.3e} at x={np.round(worst[0], 3).tolist()}")
    return checks


def test_criterion_10_robust_descent():
    checks = _criterion_10_checks()
    record(10, "Robust descent inequality (500 samples per C1 scenario)", checks)
    _assert_all(checks, skip=("integrator",))


@pytest.mark.xfail(strict=True, reason="integrator terminal ingredients violate the terminal descent condition (ledgered)")
def test_criterion_10_integrator():
    ok, detail = _criterion_10_checks()["integrator"]
    assert ok, detail


# 11 --------------------------------------------------------------------------------

def test_criterion_11_property_suite(tmp_path, capsys):
    seeds = range(100)
    bad = {"warm-start descent": [], "projection": [], "dV(0,theta)": [], "csv determinism": []}
    scns = {n: get_scenario(n) for n in ("integrator", "signed-sqrt", "sin", "pendulum")}
    for seed in seeds:
        rng = np.random.default_rng(seed)
        for name in ("integrator", "signed-sqrt", "sin"):
            scn = scns[name]
            prob = scn.problem
            x = rng.uniform(*prob.state_box)
            sol = scn.controller.solve(x)
            u_t = warm_start(prob, sol)
            x_hat = prob.sys.model(x, sol.u_opt[0])
            if not feasible(prob, x_hat, u_t):
                bad["warm-start descent"].append((name, seed, "infeasible"))
                continue
            cost_t = objective(prob, x_hat, u_t)[0]
            v_next = scn.controller.solve(x_hat, u_t).value
            if not (v_next <= cost_t + 1e-9 and v_next < sol.value or sol.value == 0.0):
                bad["warm-start descent"].append((name, seed, v_next - sol.value))

            u = rng.normal(0.0, 3.0, size=(prob.N, prob.sys.m))
            p = prob.project(u)
            if not np.array_equal(prob.project(p), p):
                bad["projection"].append((name, seed))

        for name, scn in scns.items():
            th = rng.uniform(-2.0, 2.0, size=scn.plant.n_theta)
            if name == "pendulum":
                th[2] = float(rng.integers(0, 2))
                if seed % 10:
                    continue  # one in ten draws keeps the pendulum solves affordable
            x0 = np.zeros(scn.plant.n)
            fld = cost_difference_field(scn.controller, scn.plant, [x0], [th])
            if fld.dv[0, 0] != 0.0:
                bad["dV(0,theta)"].append((name, seed))

        thetas = ",".join(f"{v:.6f}" for v in rng.uniform(-1, 1, size=3))
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / f"s{seed}{rep}"
            args = ["sweep", "--scenario", "signed-sqrt", "--x-points", "11", "--out", str(out), "--seed", str(seed)]
            for t in thetas.split(","):
                args += ["--theta", t]
            assert cli_run(args) == 0
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if outs[0] != outs[1]:
            bad["csv determinism"].append(seed)
    capsys.readouterr()  # drop the per-sweep CLI summaries

    checks = {k: _ok(not v, f"{len(v)} failures, first {v[:3]}") for k, v in bad.items()}
    record(11, "Property suite (100 seeds)", checks)
    _assert_all(checks)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
