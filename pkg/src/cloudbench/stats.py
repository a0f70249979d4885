"""Statistical kernel used by the rest of the pipeline.

Only what the analysis needs: descriptive statistics, ECDF, Pearson
correlation, Gaussian KDE, the normal and Snedecor-F distribution
functions, and the Lilliefors normality test.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Sequence

import numpy as np
from scipy.special import ndtr


class StatsError(ValueError):
    pass


class TooFewSamplesError(StatsError):
    pass


class ZeroVarianceError(StatsError):
    pass


class ZeroMeanError(StatsError):
    pass


def _as_array(xs) -> np.ndarray:
    a = np.asarray(xs, dtype=float)
    if a.ndim != 1:
        a = a.ravel()
    return a


def mean_std_cv(xs: Sequence[float]) -> tuple[float, float, float]:
    """Mean, sample standard deviation (n-1) and coefficient of variation."""
    a = _as_array(xs)
    if a.size < 2:
        raise TooFewSamplesError(f"need at least 2 samples, got {a.size}")
    mean = float(a.mean())
    std = float(a.std(ddof=1))
    if abs(mean) < 1e-12:
        raise ZeroMeanError("coefficient of variation undefined for zero mean")
    return mean, std, std / mean


def pearson_rho(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = _as_array(xs)
    y = _as_array(ys)
    if x.size != y.size:
        raise StatsError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 3:
        raise TooFewSamplesError(f"need at least 3 pairs, got {x.size}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    scale = max(float(np.abs(x).max()), float(np.abs(y).max()), 1.0)
    if sxx <= (1e-14 * scale) ** 2 * x.size or syy <= (1e-14 * scale) ** 2 * y.size:
        raise ZeroVarianceError("correlation undefined for a constant sequence")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def normal_cdf(z):
    """Standard normal CDF; scalar in, scalar out, arrays elementwise."""
    if np.ndim(z) == 0:
        return 0.5 * math.erfc(-float(z) / math.sqrt(2.0))
    return ndtr(np.asarray(z, dtype=float))


# -- incomplete beta / F distribution -----------------------------------------

_BETA_EPS = 1e-16
_BETA_TINY = 1e-300


def _betacf(a: float, b: float, x: float, max_iter: int = 100_000) -> float:
    """Continued fraction for I_x(a, b), modified Lentz evaluation."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETA_TINY:
        d = _BETA_TINY
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_TINY:
            d = _BETA_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETA_TINY:
            c = _BETA_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_TINY:
            d = _BETA_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETA_TINY:
            c = _BETA_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_EPS:
            return h
    raise StatsError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def _beta_front(a: float, b: float, x: float) -> float:
    return math.exp(
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise StatsError("betainc requires a > 0 and b > 0")
    if not 0.0 <= x <= 1.0:
        raise StatsError(f"betainc argument out of [0, 1]: {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    front = _beta_front(a, b, x)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def _betainc_pair(a: float, b: float, x: float, y: float) -> tuple[float, float]:
    """(I_x(a, b), 1 - I_x(a, b)) with y = 1 - x supplied exactly by the caller."""
    if x <= 0.0:
        return 0.0, 1.0
    if y <= 0.0:
        return 1.0, 0.0
    lfront = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log(y)
    )
    front = math.exp(lfront)
    if x < (a + 1.0) / (a + b + 2.0):
        lower = front * _betacf(a, b, x) / a
        return lower, 1.0 - lower
    upper = front * _betacf(b, a, y) / b
    return 1.0 - upper, upper


def _check_df(d1, d2) -> None:
    if not (d1 > 0 and d2 > 0):
        raise StatsError(f"degrees of freedom must be positive, got ({d1}, {d2})")


def f_cdf(x: float, d1: float, d2: float) -> float:
    """CDF of the Snedecor-F distribution with (d1, d2) degrees of freedom."""
    _check_df(d1, d2)
    if x <= 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    num = d1 * x
    return _betainc_pair(d1 / 2.0, d2 / 2.0, num / (num + d2), d2 / (num + d2))[0]


def f_sf(x: float, d1: float, d2: float) -> float:
    """Upper tail 1 - f_cdf, evaluated without cancellation."""
    _check_df(d1, d2)
    if x <= 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    num = d1 * x
    return _betainc_pair(d1 / 2.0, d2 / 2.0, num / (num + d2), d2 / (num + d2))[1]


# -- ECDF and KDE ---------------------------------------------------------------

class Ecdf:
    """Right-continuous empirical CDF."""

    def __init__(self, xs: Sequence[float]):
        a = np.sort(_as_array(xs))
        if a.size == 0:
            raise StatsError("ECDF of an empty sample")
        self.values = a

    def __len__(self) -> int:
        return self.values.size

    def __call__(self, x):
        p = np.searchsorted(self.values, x, side="right") / self.values.size
        return float(p) if np.ndim(p) == 0 else p

    def steps(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct jump points and the cumulative probability after each."""
        uniq, counts = np.unique(self.values, return_counts=True)
        return uniq, np.cumsum(counts) / self.values.size


def ecdf(xs: Sequence[float]) -> Ecdf:
    return Ecdf(xs)


@dataclass(frozen=True)
class KdeCurve:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def modes(self) -> np.ndarray:
        d = self.density
        inner = (d[1:-1] > d[:-2]) & (d[1:-1] >= d[2:])
        return self.grid[1:-1][inner]

    def cdf(self) -> np.ndarray:
        """Cumulative trapezoid integral of the density over the grid."""
        steps = np.diff(self.grid) * (self.density[1:] + self.density[:-1]) / 2
        return np.concatenate([[0.0], np.cumsum(steps)])


def kde_bandwidth(xs) -> float:
    a = _as_array(xs)
    return 1.06 * float(a.std(ddof=1)) * a.size ** (-0.2)


def gaussian_kde(xs: Sequence[float], grid_points: int = 512) -> KdeCurve:
    a = _as_array(xs)
    if a.size < 2:
        raise TooFewSamplesError("KDE needs at least 2 samples")
    h = kde_bandwidth(a)
    if not h > 0:
        raise ZeroVarianceError("KDE of a degenerate sample")
    grid = np.linspace(a.min() - 4 * h, a.max() + 4 * h, grid_points)
    dens = np.zeros(grid_points)
    # chunk over samples to bound memory
    for start in range(0, a.size, 4096):
        u = (grid[:, None] - a[None, start:start + 4096]) / h
        dens += np.exp(-0.5 * u * u).sum(axis=1)
    dens /= a.size * h * math.sqrt(2 * math.pi)
    return KdeCurve(grid, dens, h)


# -- Lilliefors -----------------------------------------------------------------

LILLIEFORS_MIN_N = 30
LILLIEFORS_TABLE = "lilliefors_5pct.csv"
LILLIEFORS_TABLE_VERSION = 1


@dataclass(frozen=True)
class LillieforsResult:
    statistic: float
    critical_value: float
    reject: bool
    n: int


def lilliefors_statistic(xs) -> float:
    """Sup distance between the sample ECDF and the fitted normal CDF."""
    a = np.sort(_as_array(xs))
    n = a.size
    s = a.std(ddof=1)
    if not s > 1e-12 * max(1.0, float(np.abs(a).max())):
        raise ZeroVarianceError("Lilliefors test of a constant sample")
    f = ndtr((a - a.mean()) / s)
    i = np.arange(1, n + 1)
    return float(max((i / n - f).max(), (f - (i - 1) / n).max()))


def lilliefors_statistics_batch(samples: np.ndarray) -> np.ndarray:
    """Row-wise Lilliefors statistics for a (reps, n) array."""
    a = np.sort(samples, axis=1)
    n = a.shape[1]
    z = (a - a.mean(axis=1, keepdims=True)) / a.std(axis=1, ddof=1, keepdims=True)
    f = ndtr(z)
    i = np.arange(1, n + 1)
    return np.maximum((i / n - f).max(axis=1), (f - (i - 1) / n).max(axis=1))


def build_lilliefors_table(ns: Sequence[int], reps: int = 100_000, seed: int = 20150805,
                           alpha: float = 0.05) -> list[tuple[int, float]]:
    """Monte Carlo (1 - alpha) quantiles of the statistic under normality."""
    rng = np.random.default_rng(seed)
    out = []
    for n in ns:
        chunk = max(1, 4_000_000 // n)
        stats = []
        done = 0
        while done < reps:
            k = min(chunk, reps - done)
            stats.append(lilliefors_statistics_batch(rng.standard_normal((k, n))))
            done += k
        d = np.concatenate(stats)
        out.append((int(n), float(np.quantile(d, 1 - alpha))))
    return out


def write_lilliefors_table(table, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "critical_value"])
        for n, c in table:
            w.writerow([n, f"{c:.6f}"])


@lru_cache(maxsize=None)
def _bundled_table() -> tuple[np.ndarray, np.ndarray]:
    text = resources.files("cloudbench.data").joinpath(LILLIEFORS_TABLE).read_text()
    rows = list(csv.DictReader(text.splitlines()))
    ns = np.array([int(r["n"]) for r in rows], dtype=float)
    cs = np.array([float(r["critical_value"]) for r in rows])
    order = np.argsort(ns)
    return ns[order], cs[order]


def lilliefors_critical_value(n: int) -> float:
    """5% critical value, interpolated in log-log space between table rows.

    Past the largest tabulated n the value is extrapolated with the
    asymptotic 1/sqrt(n) scaling.
    """
    if n < LILLIEFORS_MIN_N:
        raise TooFewSamplesError(f"Lilliefors test needs n >= {LILLIEFORS_MIN_N}, got {n}")
    ns, cs = _bundled_table()
    if n >= ns[-1]:
        return float(cs[-1] * math.sqrt(ns[-1] / n))
    return float(np.exp(np.interp(math.log(n), np.log(ns), np.log(cs))))


def lilliefors(xs: Sequence[float], alpha: float = 0.05) -> LillieforsResult:
    if alpha != 0.05:
        raise StatsError("only the bundled 5% table is available")
    a = _as_array(xs)
    if a.size < LILLIEFORS_MIN_N:
        raise TooFewSamplesError(f"Lilliefors test needs n >= {LILLIEFORS_MIN_N}, got {a.size}")
    d = lilliefors_statistic(a)
    c = lilliefors_critical_value(a.size)
    return LillieforsResult(d, c, d > c, int(a.size))
