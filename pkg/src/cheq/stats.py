"""Rank correlation, Welch t-test and across-district confidence intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._special import t_two_sided_p, z_critical
from .exceptions import ConstantInput, TooFewObservations, ZeroVariance


@dataclass(frozen=True)
class CorrelationResult:
    rho: float
    n: int
    t_stat: float
    p_two_sided: float

    def to_dict(self):
        return dict(rho=self.rho, n=self.n, t_stat=self.t_stat, p_two_sided=self.p_two_sided)


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: float
    p: float

    def to_dict(self):
        return dict(t=self.t, df=self.df, p=self.p)


def rankdata(x):
    """Ranks starting at 1, ties receiving their average rank."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], len(xs)]
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(len(x))
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def spearman(x, y) -> CorrelationResult:
    """Spearman rank correlation with a Student-t p-value.

    ``t = rho * sqrt((n - 2) / (1 - rho**2))`` on ``n - 2`` degrees of
    freedom. Ties get average ranks.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D and of equal length")
    n = len(x)
    if n < 3:
        raise TooFewObservations(f"spearman needs n >= 3, got {n}")
    rx = rankdata(x) - (n + 1) / 2.0
    ry = rankdata(y) - (n + 1) / 2.0
    sxx = float(rx @ rx)
    syy = float(ry @ ry)
    if sxx == 0.0 or syy == 0.0:
        raise ConstantInput("rank correlation is undefined for a constant input")
    rho = float(rx @ ry) / math.sqrt(sxx * syy)
    rho = max(-1.0, min(1.0, rho))
    return correlation_from_rho(rho, n)


def correlation_from_rho(rho, n) -> CorrelationResult:
    """t statistic and two-sided p-value for a given correlation and n."""
    if abs(rho) >= 1.0:
        return CorrelationResult(rho, n, math.copysign(math.inf, rho), 0.0)
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return CorrelationResult(rho, n, t, t_two_sided_p(t, n - 2))


def welch_t(x, y) -> TTestResult:
    """Two-sided Welch t-test with Satterthwaite degrees of freedom."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nx, ny = len(x), len(y)
    if nx < 2 or ny < 2:
        raise TooFewObservations("each sample needs at least 2 values")
    vx = float(np.var(x, ddof=1)) / nx
    vy = float(np.var(y, ddof=1)) / ny
    if vx == 0.0 and vy == 0.0:
        raise ZeroVariance("both samples are constant")
    diff = float(np.mean(x) - np.mean(y))
    t = diff / math.sqrt(vx + vy)
    df = (vx + vy) ** 2 / (vx**2 / (nx - 1) + vy**2 / (ny - 1))
    return TTestResult(t, df, t_two_sided_p(t, df))


def across_district_ci(values, level=0.99):
    """Mean with a normal-approximation interval, ``mean ± z * sd / sqrt(n)``.

    ``sd`` uses the n-1 denominator. Returns ``(mean, lo, hi)``.
    """
    v = np.asarray(values, dtype=float)
    n = len(v)
    if n < 2:
        raise TooFewObservations("need at least 2 values")
    mean = float(np.mean(v))
    half = z_critical(level) * float(np.std(v, ddof=1)) / math.sqrt(n)
    return mean, mean - half, mean + half
