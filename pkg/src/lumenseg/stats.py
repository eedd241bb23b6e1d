"""Kruskal-Wallis rank test with tie correction.

The p-value comes from the chi-squared survival function, computed through
the regularized incomplete gamma function (series for x < a+1, continued
fraction otherwise), good to about 1e-10 in absolute terms.
"""

import math

import numpy as np

from .errors import ConfigError

_MAX_ITER = 500
_TINY = 1e-300


def _gamma_series(a, x):
    """Lower regularized incomplete gamma P(a,x) by power series (x < a+1)."""
    term = 1.0 / a
    total = term
    n = a
    for _ in range(_MAX_ITER):
        n += 1.0
        term *= x / n
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))

def _gamma_cf(a, x):
    """Upper regularized incomplete gamma Q(a,x) by continued fraction (x >= a+1)."""
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def chi2_sf(x, df):
    """Survival function of the chi-squared distribution."""
    if df <= 0:
        raise ConfigError(f"chi2_sf needs df > 0, got {df}")
    if x <= 0:
        return 1.0
    a = 0.5 * df
    half = 0.5 * x
    if half < a + 1.0:
        return 1.0 - _gamma_series(a, half)
    return _gamma_cf(a, half)


def _average_ranks(values):
    """Ranks 1..N with ties receiving the average of their positions."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def kruskal_wallis(groups):
    """H statistic and chi-squared p-value for >= 2 nonempty groups.

    Ties are handled with average ranks and the standard correction factor.
    All-identical pooled data degenerates to (H=0, p=1).
    """
    if len(groups) < 2:
        raise ConfigError("kruskal_wallis needs at least two groups")
    sizes = [len(g) for g in groups]
    if any(s == 0 for s in sizes):
        raise ConfigError("kruskal_wallis groups must be nonempty")
    pooled = np.concatenate([np.asarray(g, dtype=np.float64) for g in groups])
    n = pooled.size
    ranks = _average_ranks(pooled)

    h = 0.0
    start = 0
    for s in sizes:
        r_sum = ranks[start : start + s].sum()
        h += r_sum * r_sum / s
        start += s
    h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0)

    # tie correction: 1 - sum(t^3 - t) / (N^3 - N)
    _, counts = np.unique(pooled, return_counts=True)
    tie_sum = float(((counts.astype(np.float64)) ** 3 - counts).sum())
    correction = 1.0 - tie_sum / (n ** 3 - n)
    if correction == 0.0:
        return 0.0, 1.0
    h /= correction

    df = len(groups) - 1
    return float(h), float(chi2_sf(h, df))
