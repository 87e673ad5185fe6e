"""Asymptotic key-rate bounds, abort tests and log-log scaling fits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import linregress

from dpsqkd.errors import ConfigError
from dpsqkd.optics import expected_detection_rate
from dpsqkd.source import tail_bound

CONTINUE, ABORT = "continue", "abort"


def min_lower_bound_f_det(n: int) -> float:
    """Smallest admissible detection-rate factor for the e=0 lower bound: n/((n-1)(n-1)!)."""
    return n / ((n - 1) * math.factorial(n - 1))


def default_f_det(n: int) -> float:
    return 2 * min_lower_bound_f_det(n)


@dataclass(frozen=True)
class ProtocolParams:
    n: int
    mu: float
    eta: float
    f_det: float = 0.5
    f_err: float = 2.0
    e: float = 0.0

    def __post_init__(self):
        if self.n < 3:
            raise ConfigError(f"block size must be >= 3, got {self.n}")
        if not self.mu >= 0:
            raise ConfigError(f"mu must be >= 0, got {self.mu}")
        if not 0 <= self.eta <= 1:
            raise ConfigError(f"eta must lie in [0, 1], got {self.eta}")
        if not self.f_det > 0:
            raise ConfigError(f"f_det must be > 0, got {self.f_det}")
        if not self.f_err >= 0:
            raise ConfigError(f"f_err must be >= 0, got {self.f_err}")
        if not 0 <= self.e <= 1:
            raise ConfigError(f"e must lie in [0, 1], got {self.e}")

    @property
    def r(self) -> float:
        return expected_detection_rate(self.n, self.mu, self.eta)

    @property
    def lower_bound_admissible(self) -> bool:
        return self.f_det > min_lower_bound_f_det(self.n)


@dataclass(frozen=True)
class RatePoint:
    eta: float
    g_lower: float
    g_upper_cap: float
    mu_used: float


@dataclass(frozen=True)
class FitResult:
    exponent: float
    intercept: float
    stderr: float
    eta_range: tuple[float, float]


def abort_decision(p_det: float, p_err: float, params: ProtocolParams) -> str:
    """Continue only if P_det >= f_det * r and P_err <= f_err * e * r."""
    r = params.r
    if p_det >= params.f_det * r and p_err <= params.f_err * params.e * r:
        return CONTINUE
    return ABORT


def select_f_det(grid: Sequence[float], observed_p_det: float, params: ProtocolParams) -> float | None:
    """Largest grid factor whose detection-rate test passes, or None (abort)."""
    grid = list(grid)
    if not grid:
        raise ConfigError("empty f_det grid")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("f_det grid must be strictly ascending")
    r = params.r
    passing = [f for f in grid if observed_p_det >= f * r]
    return passing[-1] if passing else None


def lower_bound_rate(params: ProtocolParams, h_n: float) -> float:
    """(f_det * r - mu^(n-1)/(n-1)!) * H_n, clamped at 0.

    Valid for e = 0 and f_det above ``min_lower_bound_f_det``; a smaller
    f_det is allowed but see ``params.lower_bound_admissible``.
    """
    if params.e != 0:
        raise ConfigError("the lower bound is only available for e = 0")
    if not h_n > 0:
        raise ConfigError(f"H_n must be > 0, got {h_n}")
    value = (params.f_det * params.r - tail_bound(params.mu, params.n)) * h_n
    return max(0.0, value)


def corollary_rate_curve(n: int, eta_grid: Iterable[float], f_det: float, h_n: float,
                         upper_caps: Sequence[float] | None = None) -> list[RatePoint]:
    """Lower bound evaluated at mu = eta^(1/(n-2)) across ``eta_grid``.

    ``upper_caps`` optionally supplies the matching envelope caps; otherwise
    the cap column is NaN.
    """
    etas = [float(x) for x in eta_grid]
    if not etas:
        raise ConfigError("empty eta grid")
    if f_det <= min_lower_bound_f_det(n):
        raise ConfigError(f"f_det must exceed {min_lower_bound_f_det(n):.6g} for n={n}")
    caps = list(upper_caps) if upper_caps is not None else [math.nan] * len(etas)
    points = []
    for eta, cap in zip(etas, caps):
        mu = eta ** (1.0 / (n - 2))
        g = lower_bound_rate(ProtocolParams(n, mu, eta, f_det=f_det), h_n)
        points.append(RatePoint(eta, g, float(cap), mu))
    return points


def devetak_winter_gap(h_ae: float, h_ab: float) -> float:
    return max(0.0, h_ae - h_ab)


def fit_scaling_exponent(points: Iterable[tuple[float, float]]) -> FitResult:
    """Least-squares slope of log(value) against log(eta)."""
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 3:
        raise ConfigError("need at least 3 points for a fit")
    x, y = np.array(pts).T
    if np.any(y <= 0) or np.any(x <= 0):
        raise ConfigError("log-log fit needs positive coordinates and values")
    if len(np.unique(x)) != len(x):
        raise ConfigError("eta values must be distinct")
    res = linregress(np.log(x), np.log(y))
    return FitResult(float(res.slope), float(res.intercept), float(res.stderr),
                     (float(x.min()), float(x.max())))


def log_grid(lo: float = 1e-5, hi: float = 1e-2, num: int = 20) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), num)
