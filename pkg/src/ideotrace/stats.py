"""Correlation, F1 and the paired t-test.

The Student-t tail probability is computed from the regularized incomplete
beta function, evaluated with a modified-Lentz continued fraction.
"""

from __future__ import annotations

import math

import numpy as np


def _as_pair(x, y, min_len):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("vectors must have equal length")
    if len(x) < min_len:
        raise ValueError(f"need at least {min_len} observations")
    return x, y


def rank(x) -> np.ndarray:
    """Fractional ranks starting at 1; ties share their average rank."""
    x = np.asarray(x, dtype=float).ravel()
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    start = 0
    for stop in range(1, len(x) + 1):
        if stop == len(x) or sx[stop] != sx[start]:
            ranks[order[start:stop]] = 0.5 * (start + stop - 1) + 1.0
            start = stop
    return ranks


def pearson(x, y) -> float:
    x, y = _as_pair(x, y, 2)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("undefined correlation: constant vector")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def spearman(x, y) -> float:
    x, y = _as_pair(x, y, 3)
    return pearson(rank(x), rank(y))


def confusion(predicted, actual) -> tuple[int, int, int]:
    """``(TP, FP, FN)`` of two binary vectors."""
    p = np.asarray(predicted).ravel().astype(bool)
    a = np.asarray(actual).ravel().astype(bool)
    if p.shape != a.shape:
        raise ValueError("vectors must have equal length")
    return int(np.sum(p & a)), int(np.sum(p & ~a)), int(np.sum(~p & a))


def f1(predicted, actual) -> float:
    """F1 score; 1.0 when there is nothing to predict and nothing predicted."""
    tp, fp, fn = confusion(predicted, actual)
    if tp == 0:
        return 1.0 if fp == 0 and fn == 0 else 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def _betacf(a, b, x, max_iter=500, eps=1e-16):
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function ``I_x(a, b)``."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # The continued fraction converges fast only on this side of the mean.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """``P(|T| >= |t|)`` for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be positive")
    if math.isinf(t):
        return 0.0
    return betainc(0.5 * df, 0.5, df / (df + t * t))


def dependent_t_test(before, after) -> tuple[float, float]:
    """Paired t statistic of ``after - before`` and its two-sided p-value."""
    b, a = _as_pair(before, after, 2)
    d = a - b
    n = len(d)
    sd = float(np.std(d, ddof=1))
    # Rounding in ``a - b`` leaves a constant shift with sd around 1e-17.
    if not sd > 1e-12 * max(1.0, float(np.abs(d).max())):
        raise ValueError("degenerate differences: zero variance")
    t = float(d.mean()) / (sd / math.sqrt(n))
    return t, t_sf_two_sided(t, n - 1)
