"""Closed-loop simulation of the nominal MPC on a mismatched plant, and the
sample-based certification of robust versus strong stability.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .compfn import (
    JointComparisonFn,
    ScalarComparisonFn,
    ScalingReport,
    TabulatedEnvelope,
)
from .errors import InconclusiveError, InfeasibleStartError, InvalidInputError
from .model import ParametricSystem, as_vector, sample_unit_sphere, theta_sequence
from .ocp import MpcController, MpcProblem, OcpSolution, feasible, objective, warm_start

VALUE_TOL = 1e-8


def as_controller(ctrl) -> MpcController:
    if isinstance(ctrl, MpcController):
        return ctrl
    if isinstance(ctrl, MpcProblem):
        return MpcController(ctrl)
    raise InvalidInputError("expected an MpcController or MpcProblem")


def _as_rows(values, dim: int) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim <= 1 and dim == 1:
        return arr.reshape(-1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, dim)
    if arr.shape[1] != dim:
        raise InvalidInputError(f"expected rows of length {dim}, got shape {arr.shape}")
    return arr


def escape_radius(prob: MpcProblem) -> float:
    if prob.state_box is None:
        return math.inf
    lo, hi = prob.state_box
    return 10.0 * float(np.linalg.norm(hi - lo))


@dataclass
class ClosedLoopRun:
    theta_seq: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    values: np.ndarray
    escaped: bool

    @property
    def delta_v(self) -> np.ndarray:
        v = self.values
        out = np.full(len(v) - 1, math.nan)
        for k in range(len(v) - 1):
            if math.isfinite(v[k]) and math.isfinite(v[k + 1]):
                out[k] = v[k + 1] - v[k]
            elif math.isfinite(v[k]):
                out[k] = math.inf
        return out

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)


def run_closed_loop(
    ctrl,
    plant: ParametricSystem,
    x0,
    theta_seq,
    k_max: int,
) -> ClosedLoopRun:
    """Apply ``kappa_N`` to the plant for up to ``k_max`` steps, warm-starting each solve."""
    ctrl = as_controller(ctrl)
    prob = ctrl.problem
    x = as_vector(x0, plant.n, "x0")
    thetas = theta_sequence(theta_seq, k_max, plant.n_theta)
    sol = ctrl.solve(x)
    if not sol.feasible:
        raise InfeasibleStartError(f"OCP infeasible at x0 = {x.tolist()}")
    radius = escape_radius(prob)
    states = [x]
    inputs: list[np.ndarray] = []
    values = [sol.value]
    escaped = False
    for k in range(k_max):
        u = sol.u_opt[0]
        x_next = plant(x, u, thetas[k])
        inputs.append(u)
        states.append(x_next)
        if not np.all(np.isfinite(x_next)) or np.linalg.norm(x_next) > radius:
            values.append(math.inf)
            escaped = True
            break
        sol = ctrl.solve(x_next, warm_start(prob, sol))
        values.append(sol.optimal_value)
        if not sol.feasible:
            escaped = True
            break
        x = x_next
    steps = len(inputs)
    return ClosedLoopRun(
        theta_seq=thetas[:steps],
        states=np.array(states),
        inputs=np.array(inputs).reshape(steps, plant.m),
        values=np.array(values, dtype=float),
        escaped=escaped,
    )


@dataclass
class CostDifferenceField:
    x_grid: np.ndarray
    theta_grid: np.ndarray
    dv: np.ndarray
    feasible: np.ndarray
    values: np.ndarray

    def sign_classes(self) -> np.ndarray:
        """-1 where the cost decreases, +1 where it increases, 0 otherwise (NaN rows stay 0)."""
        out = np.zeros(self.dv.shape, dtype=int)
        with np.errstate(invalid="ignore"):
            out[self.dv < 0] = -1
            out[self.dv > 0] = 1
        return out


def _successor(ctrl: MpcController, plant: ParametricSystem, sol: OcpSolution, theta) -> tuple[np.ndarray, OcpSolution]:
    x_next = plant(sol.x_traj[0], sol.u_opt[0], theta)
    if not np.all(np.isfinite(x_next)):
        return x_next, None
    return x_next, ctrl.solve(x_next, warm_start(ctrl.problem, sol))


def cost_difference_field(ctrl, plant: ParametricSystem, x_grid, theta_grid) -> CostDifferenceField:
    """``dV(x, theta) = V_N^0(f_c(x, theta)) - V_N^0(x)`` on a grid; ``inf`` when the successor is infeasible."""
    ctrl = as_controller(ctrl)
    xs = _as_rows(x_grid, plant.n)
    ths = _as_rows(theta_grid, plant.n_theta)
    dv = np.full((len(xs), len(ths)), math.nan)
    mask = np.zeros(len(xs), dtype=bool)
    values = np.full(len(xs), math.inf)
    for i, x in enumerate(xs):
        sol = ctrl.solve(x)
        if not sol.feasible:
            continue
        mask[i] = True
        values[i] = sol.value
        for j, th in enumerate(ths):
            _, nxt = _successor(ctrl, plant, sol, th)
            v_next = math.inf if nxt is None else nxt.optimal_value
            dv[i, j] = v_next - sol.value
    return CostDifferenceField(xs, ths, dv, mask, values)


# --- sampling -----------------------------------------------------------------

def default_theta_samples(n_theta: int, delta: float, count: int = 41, seed: int = 0) -> np.ndarray:
    """Parameter samples with ``|theta| <= delta``: the sphere ``|theta| = delta`` plus interior points."""
    if delta < 0:
        raise InvalidInputError("delta must be nonnegative")
    if n_theta == 1:
        return np.linspace(-delta, delta, count).reshape(-1, 1)
    rng = np.random.default_rng(seed)
    pts = [np.zeros(n_theta)]
    for i in range(n_theta):
        e = np.zeros(n_theta)
        e[i] = delta
        pts.extend([e, -e])
    rest = max(0, count - len(pts))
    sphere = sample_unit_sphere(rng, rest // 2 + 1, n_theta) * delta
    interior = sample_unit_sphere(rng, rest - rest // 2, n_theta) * delta * rng.uniform(0, 1, (rest - rest // 2, 1))
    return np.vstack([np.array(pts), sphere, interior])[:count]


def sublevel_box(prob: MpcProblem, rho: float) -> Optional[tuple[np.ndarray, np.ndarray]]:
    """Box containing ``lev_rho V_N^0``: ``V_N^0(x) >= l(x, u) >= c1 |x|^2`` gives ``|x| <= sqrt(rho / c1)``."""
    r = math.sqrt(rho / prob.cost.c1)
    lo, hi = -np.full(prob.sys.n, r), np.full(prob.sys.n, r)
    if prob.state_box is not None:
        lo, hi = np.maximum(lo, prob.state_box[0]), np.minimum(hi, prob.state_box[1])
    return lo, hi


def sample_sublevel_set(
    ctrl: MpcController,
    rho: float,
    samples: int,
    seed: int = 0,
    box: Optional[tuple[np.ndarray, np.ndarray]] = None,
    max_attempts: Optional[int] = None,
) -> list[OcpSolution]:
    """Rejection-sample states with ``V_N^0(x) <= rho`` from a bounding box."""
    prob = ctrl.problem
    box = box if box is not None else sublevel_box(prob, rho)
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    rng = np.random.default_rng(seed)
    max_attempts = max_attempts or 50 * samples
    out: list[OcpSolution] = []
    attempts = 0
    while len(out) < samples and attempts < max_attempts:
        attempts += 1
        sol = ctrl.solve(rng.uniform(lo, hi))
        if sol.feasible and sol.value <= rho:
            out.append(sol)
    if not out:
        raise InconclusiveError("no sample fell inside the sublevel set")
    return out


@dataclass(frozen=True)
class RpiResult:
    ok: Optional[bool]
    worst_point: Optional[tuple[list, list]]
    worst_value: float
    checked: int

    def to_dict(self) -> dict:
        return {"ok": self.ok, "worst_point": self.worst_point, "worst_value": self.worst_value, "checked": self.checked}


def rpi_check(
    ctrl,
    plant: ParametricSystem,
    rho: float,
    delta: float,
    samples: int = 200,
    seed: int = 0,
    theta_samples=None,
    box=None,
) -> RpiResult:
    """Sampled check that ``lev_rho V_N^0`` is robustly positive invariant for ``|theta| <= delta``."""
    if not rho > 0:
        raise InvalidInputError("rho must be positive")
    ctrl = as_controller(ctrl)
    try:
        sols = sample_sublevel_set(ctrl, rho, samples, seed, box)
    except InconclusiveError:
        return RpiResult(None, None, math.nan, 0)
    ths = _as_rows(theta_samples, plant.n_theta) if theta_samples is not None else default_theta_samples(plant.n_theta, delta, 11, seed)
    worst, worst_pt = -math.inf, None
    checked = 0
    for sol in sols:
        for th in ths:
            _, nxt = _successor(ctrl, plant, sol, th)
            v = math.inf if nxt is None else nxt.optimal_value
            checked += 1
            if v > worst:
                worst, worst_pt = v, (sol.x_traj[0].tolist(), th.tolist())
    return RpiResult(bool(worst <= rho + VALUE_TOL), worst_pt, float(worst), checked)


# --- descent certification ------------------------------------------------------

@dataclass
class DescentSample:
    x: np.ndarray
    theta: np.ndarray
    value: float
    value_next: float

    @property
    def dv(self) -> float:
        return self.value_next - self.value


def descent_samples(
    ctrl,
    plant: ParametricSystem,
    x_samples,
    theta_samples,
    lyapunov: Optional[Callable[[np.ndarray], float]] = None,
) -> tuple[list[DescentSample], int]:
    """``V(x)`` and ``V(f_c(x, theta))`` at every sample pair; ``V`` defaults to ``V_N^0``.

    Returns the samples and the number of infeasible states excluded.
    """
    ctrl = as_controller(ctrl)
    xs = _as_rows(x_samples, plant.n)
    ths = _as_rows(theta_samples, plant.n_theta)
    out: list[DescentSample] = []
    excluded = 0
    for x in xs:
        sol = ctrl.solve(x)
        if not sol.feasible:
            excluded += 1
            continue
        v = sol.value if lyapunov is None else lyapunov(x)
        for th in ths:
            x_next, nxt = _successor(ctrl, plant, sol, th)
            if lyapunov is None:
                v_next = math.inf if nxt is None else nxt.optimal_value
            else:
                v_next = lyapunov(x_next) if (nxt is not None and nxt.feasible) else math.inf
            out.append(DescentSample(x.copy(), th.copy(), float(v), float(v_next)))
    return out, excluded


@dataclass
class CertificationReport:
    rho: float
    delta_tested: float
    rpi_ok: Optional[bool]
    descent_margin: float
    max_observed_increase: float
    verdict: str
    samples_used: int
    samples_excluded: int
    worst_point: Optional[tuple[list, list]] = None
    lyap_increase_fit: Optional[JointComparisonFn] = None
    scaling: Optional[ScalingReport] = None
    delta_star: Optional[float] = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        fit = None
        if self.lyap_increase_fit is not None:
            fit = {"label": self.lyap_increase_fit.label}
            env = getattr(self.lyap_increase_fit, "envelope", None)
            if env is not None:
                fit["envelope"] = env.to_dict()
        return {
            "rho": self.rho,
            "delta_tested": self.delta_tested,
            "rpi_ok": self.rpi_ok,
            "descent_margin": self.descent_margin,
            "max_observed_increase": self.max_observed_increase,
            "verdict": self.verdict,
            "samples_used": self.samples_used,
            "samples_excluded": self.samples_excluded,
            "worst_point": self.worst_point,
            "lyap_increase_fit": fit,
            "scaling": None if self.scaling is None else self.scaling.to_dict(),
            "delta_star": self.delta_star,
            "extras": self.extras,
        }


def _theta_norm(th: np.ndarray, theta_norm: Optional[Callable] = None) -> float:
    return float(theta_norm(th) if theta_norm is not None else np.linalg.norm(th))


def _assess(
    samples: Sequence[DescentSample],
    rho: float,
    delta: float,
    alpha3: ScalarComparisonFn,
    theta_norm: Optional[Callable] = None,
):
    used = [s for s in samples if s.value <= rho + VALUE_TOL and _theta_norm(s.theta, theta_norm) <= delta * (1 + 1e-12)]
    if not used:
        return None
    rpi_ok = all(s.value_next <= rho + VALUE_TOL for s in used)
    margin, worst_pt = math.inf, None
    max_inc = -math.inf
    for s in used:
        nx = float(np.linalg.norm(s.x))
        if nx == 0.0:
            continue
        ratio = -s.dv / (nx * nx)
        if ratio < margin:
            margin, worst_pt = ratio, (s.x.tolist(), s.theta.tolist())
        max_inc = max(max_inc, s.dv + alpha3(nx))
    return used, rpi_ok, margin, max_inc, worst_pt


def descent_certification(
    ctrl,
    plant: ParametricSystem,
    rho: float,
    delta: float,
    x_samples,
    theta_samples,
    alpha3: ScalarComparisonFn,
    exponential: bool = True,
    lyapunov: Optional[Callable[[np.ndarray], float]] = None,
    theta_norm: Optional[Callable] = None,
    precomputed: Optional[tuple[list[DescentSample], int]] = None,
) -> CertificationReport:
    """Verdict on ``S = lev_rho V`` for ``|theta| <= delta`` from sampled one-step cost differences.

    ``descent_margin`` is the largest ``eps`` with ``dV(x, theta) <= -eps |x|^2``
    over the samples. The verdict is SES (or SAS when ``exponential`` is False)
    when ``eps > 0`` and no successor leaves ``S``; RAS-only when ``S`` stays
    invariant but some ``dV >= 0`` at ``x != 0``; unstable when a successor leaves.
    """
    samples, excluded = precomputed if precomputed is not None else descent_samples(
        ctrl, plant, x_samples, theta_samples, lyapunov
    )
    assessed = _assess(samples, rho, delta, alpha3, theta_norm)
    if assessed is None:
        return CertificationReport(rho, delta, None, math.nan, math.nan, "inconclusive", 0, excluded)
    used, rpi_ok, margin, max_inc, worst_pt = assessed
    if not rpi_ok:
        verdict = "unstable"
    elif math.isnan(margin) or margin == math.inf:
        verdict = "inconclusive"
    elif margin > 1e-12:
        verdict = "SES" if exponential else "SAS"
    else:
        verdict = "RAS-only"
    return CertificationReport(
        rho=rho,
        delta_tested=delta,
        rpi_ok=rpi_ok,
        descent_margin=float(margin),
        max_observed_increase=float(max_inc),
        verdict=verdict,
        samples_used=len(used),
        samples_excluded=excluded,
        worst_point=worst_pt,
    )


def delta_bisection(
    samples: Sequence[DescentSample],
    rho: float,
    delta_max: float,
    alpha3: ScalarComparisonFn,
    iterations: int = 20,
    theta_norm: Optional[Callable] = None,
) -> float:
    """Largest ``delta`` in ``[0, delta_max]`` at which the sampled descent margin stays positive."""

    def ok(delta: float) -> bool:
        res = _assess(samples, rho, delta, alpha3, theta_norm)
        if res is None:
            return True
        _, rpi_ok, margin, _, _ = res
        return bool(rpi_ok and margin > 1e-12)

    if ok(delta_max):
        return float(delta_max)
    lo, hi = 0.0, float(delta_max)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


# --- increase envelopes -----------------------------------------------------------

@dataclass(frozen=True)
class FittedJointFn(JointComparisonFn):
    envelope: Optional[TabulatedEnvelope] = None
    table: Optional[dict] = None


def _shell_envelope(pairs: Sequence[tuple[float, float]], digits: int = 12) -> TabulatedEnvelope:
    """Per-shell maxima of ``(t, value)`` pairs, made nondecreasing in ``t``."""
    shells: dict[float, float] = {}
    for t, v in pairs:
        key = round(t, digits)
        if key <= 0.0:
            continue
        shells[key] = max(shells.get(key, 0.0), v)
    ts = sorted(shells)
    raw = [shells[t] for t in ts]
    env = list(np.maximum.accumulate(raw)) if raw else []
    return TabulatedEnvelope(tuple(ts), tuple(float(v) for v in env), tuple(float(v) for v in raw))


def fit_gamma_v(
    ctrl,
    plant: ParametricSystem,
    x_samples,
    theta_samples,
    quadratic: bool = True,
    theta_norm: Optional[Callable] = None,
) -> FittedJointFn:
    """Envelope of ``|V_N(f_c(x,theta), u~(x)) - V_N(f^_c(x), u~(x))|``.

    Quadratic track: ``gamma_V(s, t) = sigma_V(t) s^2`` with ``sigma_V`` the
    nondecreasing envelope of ``d / |x|^2`` over ``|theta| = t`` shells.
    General track: the raw table over ``(|x|, |theta|)``, made monotone in both
    arguments and interpolated bilinearly.
    """
    ctrl = as_controller(ctrl)
    prob = ctrl.problem
    xs = _as_rows(x_samples, plant.n)
    ths = _as_rows(theta_samples, plant.n_theta)
    records: list[tuple[float, float, float]] = []
    for x in xs:
        sol = ctrl.solve(x)
        if not sol.feasible:
            continue
        u_tilde = warm_start(prob, sol)
        x_hat = prob.sys.model(x, sol.u_opt[0])
        v_hat, _ = objective(prob, x_hat, u_tilde)
        s = float(np.linalg.norm(x))
        for th in ths:
            x_next = plant(x, sol.u_opt[0], th)
            v_pert, _ = objective(prob, x_next, u_tilde)
            records.append((s, _theta_norm(th, theta_norm), abs(v_pert - v_hat)))

    if quadratic:
        env = _shell_envelope([(t, d / (s * s)) for s, t, d in records if s > 0])
        return FittedJointFn(lambda s, t, env=env: env(t) * s * s if s > 0 else 0.0, "sigma_V(t)*s^2 (fitted)", env, None)

    s_axis = sorted({round(s, 12) for s, _, _ in records if s > 0})
    t_axis = sorted({round(t, 12) for _, t, _ in records if t > 0})
    table = np.zeros((len(s_axis) + 1, len(t_axis) + 1))
    s_idx = {s: i + 1 for i, s in enumerate(s_axis)}
    t_idx = {t: j + 1 for j, t in enumerate(t_axis)}
    for s, t, d in records:
        i, j = s_idx.get(round(s, 12)), t_idx.get(round(t, 12))
        if i is not None and j is not None:
            table[i, j] = max(table[i, j], d)
    table = np.maximum.accumulate(np.maximum.accumulate(table, axis=0), axis=1)
    sa = np.array([0.0] + s_axis)
    ta = np.array([0.0] + t_axis)

    def bilinear(s: float, t: float) -> float:
        if s <= 0 or t <= 0:
            return 0.0
        if s > sa[-1] * (1 + 1e-12) or t > ta[-1] * (1 + 1e-12):
            return math.inf
        col = np.array([np.interp(s, sa, table[:, j]) for j in range(len(ta))])
        return float(np.interp(t, ta, col))

    return FittedJointFn(bilinear, "gamma_V(s,t) (tabulated)", None, {"s": sa.tolist(), "t": ta.tolist(), "d": table.tolist()})


def lyapunov_increase_envelope(
    lyapunov: Callable[[np.ndarray], float],
    ctrl,
    plant: ParametricSystem,
    x_samples,
    theta_samples,
    theta_norm: Optional[Callable] = None,
) -> TabulatedEnvelope:
    """Shell envelope of ``|V(f_c(x, theta)) - V(f^_c(x))| / |x|^2`` for a candidate ``V``."""
    ctrl = as_controller(ctrl)
    prob = ctrl.problem
    xs = _as_rows(x_samples, plant.n)
    ths = _as_rows(theta_samples, plant.n_theta)
    pairs = []
    for x in xs:
        s = float(np.linalg.norm(x))
        if s == 0.0:
            continue
        sol = ctrl.solve(x)
        if not sol.feasible:
            continue
        u = sol.u_opt[0]
        v_hat = lyapunov(prob.sys.model(x, u))
        for th in ths:
            d = abs(lyapunov(plant(x, u, th)) - v_hat)
            pairs.append((_theta_norm(th, theta_norm), d / (s * s)))
    return _shell_envelope(pairs)


def robust_descent_residuals(ctrl, plant: ParametricSystem, x, thetas) -> list[Optional[float]]:
    """Left minus right side of the robust descent inequality at ``x`` for each ``theta``.

    An entry is ``None`` when the problem is infeasible at ``x`` or the shifted
    sequence is not admissible at the perturbed successor.
    """
    ctrl = as_controller(ctrl)
    prob = ctrl.problem
    x = as_vector(x, plant.n, "x")
    ths = _as_rows(thetas, plant.n_theta)
    sol = ctrl.solve(x)
    if not sol.feasible:
        return [None] * len(ths)
    u0 = sol.u_opt[0]
    u_tilde = warm_start(prob, sol)
    x_hat = prob.sys.model(x, u0)
    base = sol.value - prob.cost(x, u0) - objective(prob, x_hat, u_tilde)[0]
    out: list[Optional[float]] = []
    for th in ths:
        x_next = plant(x, u0, th)
        if not feasible(prob, x_next, u_tilde):
            out.append(None)
            continue
        lhs = ctrl.solve(x_next, u_tilde).optimal_value
        out.append(float(lhs - (base + objective(prob, x_next, u_tilde)[0])))
    return out


def robust_descent_residual(ctrl, plant: ParametricSystem, x, theta) -> Optional[float]:
    return robust_descent_residuals(ctrl, plant, x, [theta])[0]


# --- model error bounds -------------------------------------------------------------

@dataclass
class ModelErrorReport:
    shell_t: list[float]
    envelope: list[float]
    finite: bool
    zero_at_zero: bool
    c1_bounded: bool
    vanishes_at_origin: bool
    probe_ratios: list[list[float]]

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def model_error_bounds_check(
    plant: ParametricSystem,
    compact_box: tuple[Sequence[float], Sequence[float]],
    theta_box: tuple[Sequence[float], Sequence[float]],
    samples: int = 2000,
    shells: int = 10,
    seed: int = 0,
) -> ModelErrorReport:
    """Sampled envelopes of ``|f(x,u,theta) - f^(x,u)|`` relative to ``|(x,u)|``.

    ``compact_box`` bounds ``(x, u)`` stacked; ``theta_box`` bounds ``theta``.
    The C^1 track needs a finite shell envelope and bounded ratios along rays
    into the origin; the continuity track needs the error to vanish on both axes.
    """
    n, m = plant.n, plant.m
    zlo, zhi = (np.asarray(b, dtype=float) for b in compact_box)
    tlo, thi = (np.asarray(b, dtype=float) for b in theta_box)
    if zlo.shape != (n + m,) or tlo.shape != (plant.n_theta,):
        raise InvalidInputError("box dimensions do not match the plant")
    rng = np.random.default_rng(seed)

    zs = [z for z in rng.uniform(zlo, zhi, size=(samples, n + m))]
    for i in range(n + m):  # axis points, where the ratio bound is often tight
        for b in (zlo[i], zhi[i]):
            z = np.zeros(n + m)
            z[i] = b
            if np.any(z != 0):
                zs.append(z)
    ths = [t for t in rng.uniform(tlo, thi, size=(len(zs), plant.n_theta))]
    corners = [np.array(c) for c in np.array(np.meshgrid(*zip(tlo, thi))).T.reshape(-1, plant.n_theta)]
    zero_theta = np.zeros(plant.n_theta)

    def err(z, th) -> float:
        x, u = z[:n], z[n:]
        return float(np.linalg.norm(plant(x, u, th) - plant.model(x, u)))

    pairs = []
    zero_max = 0.0
    for k, z in enumerate(zs):
        nz = float(np.linalg.norm(z))
        th = ths[k] if k % 4 else corners[(k // 4) % len(corners)]
        pairs.append((float(np.linalg.norm(th)), err(z, th) / nz))
        zero_max = max(zero_max, err(z, zero_theta))
    t_max = max(t for t, _ in pairs)
    edges = np.linspace(0.0, t_max, shells + 1)[1:]
    env = [max([r for t, r in pairs if t <= e] or [0.0]) for e in edges]
    finite = bool(np.all(np.isfinite(env)))

    # rays into the origin
    dirs = [np.eye(n + m)[i] for i in range(n + m)]
    if n == m:
        d = np.concatenate([np.ones(n), -np.ones(m)])
        dirs.append(d / np.linalg.norm(d))
    probe_theta = 0.5 * (tlo + thi) + 0.25 * (thi - tlo)
    if not np.any(probe_theta):
        probe_theta = thi
    radii = [10.0 ** -k for k in range(1, 9)]
    probes = []
    c1_ok = True
    for d in dirs:
        ratios = [err(r * d, probe_theta) / r for r in radii]
        probes.append(ratios)
        if ratios[-1] > 10.0 * ratios[0] + 1e-12:
            c1_ok = False
    at_origin = max(err(np.zeros(n + m), th) for th in list(ths[:50]) + corners)
    return ModelErrorReport(
        shell_t=[float(e) for e in edges],
        envelope=[float(v) for v in env],
        finite=finite,
        zero_at_zero=zero_max == 0.0,
        c1_bounded=bool(c1_ok and finite),
        vanishes_at_origin=at_origin == 0.0,
        probe_ratios=probes,
    )


# --- exponential fit ------------------------------------------------------------------

@dataclass(frozen=True)
class ExponentialFit:
    c: float
    lam: float
    residual: float
    tail_lambda: float
    points: int

    @property
    def converging(self) -> bool:
        """Geometric decay overall and along the second half of the run."""
        return self.lam < 1.0 and self.tail_lambda < 1.0 - 1e-3


def _loglinear(ks: np.ndarray, logs: np.ndarray) -> tuple[float, float]:
    A = np.column_stack([ks, np.ones_like(ks)])
    slope, intercept = np.linalg.lstsq(A, logs, rcond=None)[0]
    return float(slope), float(intercept)


def exponential_fit(run: ClosedLoopRun, floor: float = 1e-10) -> ExponentialFit:
    """Fit ``|x(k)| <= c |x(0)| lambda^k`` by least squares on ``log |x(k)|``."""
    if run.escaped:
        raise InconclusiveError("run escaped")
    norms = run.norms
    if norms[0] <= 0:
        raise InconclusiveError("|x(0)| must be positive")
    ks = np.array([k for k, v in enumerate(norms) if v > floor], dtype=float)
    if len(ks) < 3:
        raise InconclusiveError("fewer than 3 usable points")
    logs = np.log(norms[ks.astype(int)])
    slope, intercept = _loglinear(ks, logs)
    lam = math.exp(slope)
    c0 = math.exp(intercept) / norms[0]
    bound = c0 * norms[0] * lam ** ks
    residual = float(max(0.0, np.max(norms[ks.astype(int)] - bound)))
    c = float(np.max(norms[ks.astype(int)] / (norms[0] * lam ** ks)))
    half = ks[len(ks) // 2:]
    tail = math.exp(_loglinear(half, np.log(norms[half.astype(int)]))[0]) if len(half) >= 2 else lam
    return ExponentialFit(c=c, lam=lam, residual=residual, tail_lambda=tail, points=len(ks))
