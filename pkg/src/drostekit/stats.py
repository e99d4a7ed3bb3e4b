"""Statistics layer: one-way ANOVA with F-critical values, coefficient of
variation.  The F quantile comes from an in-house regularized incomplete
beta inversion so no statistics package or printed table is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError

__all__ = [
    "AnovaResult",
    "anova_oneway",
    "coefficient_of_variation",
    "f_critical",
    "regularized_incomplete_beta",
]


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz method)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise DomainError("beta parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # the continued fraction converges fast on the near side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def f_critical(df1: int, df2: int, p: float = 0.95) -> float:
    """Quantile of the F(df1, df2) distribution via bisection on the
    regularized incomplete beta, solved to 1e-10.

    P(F <= f) = I_x(df1/2, df2/2) with x = df1 f / (df1 f + df2).
    """
    if df1 < 1 or df2 < 1:
        raise DomainError("degrees of freedom must be >= 1")
    if not 0.0 < p < 1.0:
        raise DomainError("p must be in (0, 1)")
    a, b = df1 / 2.0, df2 / 2.0
    lo, hi = 0.0, 1.0 - 1e-16
    while hi - lo > 1e-14:
        mid = 0.5 * (lo + hi)
        if regularized_incomplete_beta(a, b, mid) < p:
            lo = mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    return df2 * x / (df1 * (1.0 - x))


@dataclass(frozen=True)
class AnovaResult:
    f_stat: float
    df1: int
    df2: int
    fcrit_05: float
    reject: bool


def anova_oneway(groups: Sequence[Sequence[float]], p: float = 0.95) -> AnovaResult:
    """One-way ANOVA: F = MS_between / MS_within, with the critical value at
    the given level and the reject decision F > Fcrit."""
    if len(groups) < 2:
        raise DomainError("need at least two groups")
    arrays = [np.asarray(g, dtype=np.float64) for g in groups]
    for g in arrays:
        if g.ndim != 1 or g.size < 2:
            raise DomainError("each group needs at least two values")
        if not np.isfinite(g).all():
            raise DomainError("groups must be finite")
    k = len(arrays)
    n_total = sum(g.size for g in arrays)
    grand = sum(float(g.sum()) for g in arrays) / n_total
    ss_between = sum(g.size * (float(g.mean()) - grand) ** 2 for g in arrays)
    ss_within = sum(float(((g - g.mean()) ** 2).sum()) for g in arrays)
    df1 = k - 1
    df2 = n_total - k
    ms_within = ss_within / df2
    if ms_within == 0.0:
        raise DomainError("zero within-group variance, F is undefined")
    f_stat = (ss_between / df1) / ms_within
    fcrit = f_critical(df1, df2, p)
    return AnovaResult(f_stat, df1, df2, fcrit, bool(f_stat > fcrit))


def coefficient_of_variation(series: Sequence[float]) -> float:
    """Sample standard deviation (n-1 denominator) over the mean, as percent."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise DomainError("need at least two values")
    if not np.isfinite(x).all():
        raise DomainError("series must be finite")
    mean = float(x.mean())
    if mean == 0.0:
        raise DomainError("coefficient of variation is undefined for zero mean")
    std = float(x.std(ddof=1))
    return 100.0 * std / mean
