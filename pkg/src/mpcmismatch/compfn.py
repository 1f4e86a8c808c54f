"""Comparison functions (class K, K-infinity, K^2) and the scaling-condition estimator.

Everything here is sampling based: membership claims are checked on grids and
limits at ``s -> 0+`` are estimated from log-spaced samples. When the samples
do not settle, the estimator says so instead of guessing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DivisionDomainError, InvalidInputError

STRICT_RTOL = 1e-12
DIVERGENCE_THRESHOLD = 10.0


@dataclass(frozen=True)
class ScalarComparisonFn:
    """A candidate class-K function ``s -> eval(s)``."""

    eval: Callable[[float], float]
    label: str = ""

    def __call__(self, s: float) -> float:
        return float(self.eval(s))


@dataclass(frozen=True)
class JointComparisonFn:
    """A candidate class-K^2 function ``(s, t) -> eval(s, t)``."""

    eval: Callable[[float, float], float]
    label: str = ""

    def __call__(self, s: float, t: float) -> float:
        return float(self.eval(s, t))


@dataclass(frozen=True)
class ScalingReport:
    tau: float
    ratio_samples: list[tuple[float, float]]
    limit_estimate: Optional[float]
    verdict: str  # "passes" | "fails" | "inconclusive"

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "limit_estimate": self.limit_estimate,
            "verdict": self.verdict,
            "ratio_samples": [[s, r] for s, r in self.ratio_samples],
        }


def _strictly_increasing(values: Sequence[float]) -> bool:
    for prev, cur in zip(values, values[1:]):
        if not cur - prev > STRICT_RTOL * (1.0 + abs(prev)):
            return False
    return True


def check_class_k(f: ScalarComparisonFn, grid: Sequence[float]) -> bool:
    """Return True iff ``f(0) = 0`` and ``f`` is strictly increasing on ``grid``."""
    grid = list(grid)
    if not grid:
        raise InvalidInputError("grid must be nonempty")
    if any(s < 0 for s in grid) or any(b < a for a, b in zip(grid, grid[1:])):
        raise InvalidInputError("grid must be nonnegative and sorted ascending")
    if grid[0] != 0.0:
        raise InvalidInputError("grid must contain 0")
    values = [f(s) for s in grid]
    if values[0] != 0.0:
        return False
    return _strictly_increasing(values)


def check_joint_k(
    g: JointComparisonFn, s_grid: Sequence[float], t_grid: Sequence[float]
) -> bool:
    """Sampled K^2 check: vanishing on both axes, increasing in each argument."""
    s_grid = sorted(s_grid)
    t_grid = sorted(t_grid)
    if not s_grid or not t_grid:
        raise InvalidInputError("grids must be nonempty")
    for s in s_grid:
        if g(s, 0.0) != 0.0:
            return False
    for t in t_grid:
        if g(0.0, t) != 0.0:
            return False
    pos_s = [s for s in s_grid if s > 0]
    pos_t = [t for t in t_grid if t > 0]
    for t in pos_t:
        if not _strictly_increasing([g(s, t) for s in [0.0] + pos_s]):
            return False
    for s in pos_s:
        if not _strictly_increasing([g(s, t) for t in [0.0] + pos_t]):
            return False
    return True


def _monotone(values: Sequence[float]) -> Optional[str]:
    diffs = [b - a for a, b in zip(values, values[1:])]
    tol = [STRICT_RTOL * (1.0 + abs(a)) for a in values[:-1]]
    if all(d >= -e for d, e in zip(diffs, tol)):
        return "increasing"
    if all(d <= e for d, e in zip(diffs, tol)):
        return "decreasing"
    return None


def scaling_limit_estimate(
    gamma: JointComparisonFn,
    alpha: ScalarComparisonFn,
    tau: float,
    s_min: float = 1e-8,
    s_max: float = 1.0,
    points: int = 64,
) -> ScalingReport:
    """Estimate ``lim_{s->0+} gamma(s, tau) / alpha(s)`` from log-spaced samples.

    The ratio is sampled from ``s_max`` down to ``s_min``. If it is monotone
    over the last quartile of samples, the final ratio is taken as the limit
    estimate. A ratio that keeps increasing and ends above 10 is reported as
    divergent.
    """
    if not (0 < s_min < s_max):
        raise InvalidInputError("need 0 < s_min < s_max")
    if points < 8:
        raise InvalidInputError("points must be >= 8")
    if tau < 0:
        raise InvalidInputError("tau must be nonnegative")

    s_values = np.geomspace(s_max, s_min, points)
    samples: list[tuple[float, float]] = []
    for s in s_values:
        a = alpha(float(s))
        if a <= 0.0:
            raise DivisionDomainError(f"alpha({s:g}) = {a:g} is not positive")
        samples.append((float(s), gamma(float(s), tau) / a))

    ratios = [r for _, r in samples]
    quartile = ratios[-max(2, points // 4):]
    trend = _monotone(quartile)
    limit = ratios[-1] if trend is not None else None

    if trend == "increasing" and ratios[-1] > DIVERGENCE_THRESHOLD and quartile[-1] > quartile[0]:
        verdict = "fails"
    elif limit is not None and limit >= 1.0:
        verdict = "fails"
    elif limit is not None and all(r < 1.0 for r in ratios):
        verdict = "passes"
    else:
        verdict = "inconclusive"
    if verdict == "fails" and limit is None:
        limit = math.inf
    return ScalingReport(tau=float(tau), ratio_samples=samples, limit_estimate=limit, verdict=verdict)


def find_delta_for_rho(
    gamma: JointComparisonFn,
    alpha: ScalarComparisonFn,
    rho: float,
    s_grid: Sequence[float],
    t_grid: Sequence[float],
) -> Optional[float]:
    """Largest sampled ``delta`` with ``gamma(s, t) < alpha(s)`` for all ``s <= rho``, ``t <= delta``."""
    s_grid = list(s_grid)
    t_grid = list(t_grid)
    if not s_grid or not t_grid:
        raise InvalidInputError("grids must be nonempty")
    for grid in (s_grid, t_grid):
        if any(v <= 0 for v in grid) or any(b < a for a, b in zip(grid, grid[1:])):
            raise InvalidInputError("grids must be positive and sorted ascending")
    if rho <= 0:
        raise InvalidInputError("rho must be positive")

    s_in = [s for s in s_grid if s <= rho]
    if not s_in:
        raise InvalidInputError("no s-grid point inside (0, rho]")
    alphas = [alpha(s) for s in s_in]
    best: Optional[float] = None
    for t in t_grid:
        if all(gamma(s, t) < a for s, a in zip(s_in, alphas)):
            best = t
        else:
            break
    return best


def quadratic(coeff: float, label: str = "") -> ScalarComparisonFn:
    """``s -> coeff * s**2``."""
    return ScalarComparisonFn(lambda s: coeff * s * s, label or f"{coeff:g}*s^2")


@dataclass(frozen=True)
class TabulatedEnvelope:
    """Nondecreasing piecewise-linear envelope ``t -> sigma(t)`` with ``sigma(0) = 0``."""

    t: tuple[float, ...]
    sigma: tuple[float, ...]
    raw: tuple[float, ...] = field(default=())

    def __call__(self, t: float) -> float:
        if t <= 0.0:
            return 0.0
        ts = (0.0,) + self.t
        ss = (0.0,) + self.sigma
        if t > ts[-1] * (1.0 + 1e-12):
            return math.inf  # no data beyond the sampled radius
        if t >= ts[-1]:
            return ss[-1]
        return float(np.interp(t, ts, ss))

    def to_dict(self) -> dict:
        return {"t": list(self.t), "sigma": list(self.sigma), "raw": list(self.raw)}
