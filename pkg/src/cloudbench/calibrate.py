"""Measurement-duration calibration from per-second throughput samples."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core_model import BandwidthSample, Path
from .stats import Ecdf, StatsError, ecdf, mean_std_cv

GROUND_TRUTH_WINDOW_S = 900


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorRatioCurve:
    path: Path
    ratios: np.ndarray  # ratios[N - 1] is the error after N seconds

    def __len__(self) -> int:
        return self.ratios.size

    def at(self, n_seconds: int) -> float:
        return float(self.ratios[n_seconds - 1])


@dataclass(frozen=True)
class DurationRecommendation:
    seconds: int | None
    achievable: bool
    best_n: int
    best_fraction: float


def _per_second(sample: BandwidthSample) -> np.ndarray:
    if sample.per_second_mbps is None:
        raise CalibrationError(f"{sample.path}: no per-second data")
    return np.asarray(sample.per_second_mbps, dtype=float)


def error_ratio_curve(sample: BandwidthSample, window: int = GROUND_TRUTH_WINDOW_S) -> ErrorRatioCurve:
    """|mean of first N seconds - window mean| / window mean, for N = 1..window."""
    x = _per_second(sample)
    if x.size != window:
        raise CalibrationError(f"{sample.path}: expected {window} per-second values, got {x.size}")
    csum = np.cumsum(x)
    truth = csum[-1] / window
    if truth <= 0:
        raise CalibrationError(f"{sample.path}: ground-truth mean is zero")
    running = csum / np.arange(1, window + 1)
    ratios = np.abs(running - truth) / truth
    ratios[-1] = 0.0  # exact by definition; cumsum rounding can leave ~1e-16
    return ErrorRatioCurve(sample.path, ratios)


def sample_cv(sample: BandwidthSample) -> float:
    x = _per_second(sample)
    try:
        return mean_std_cv(x)[2]
    except StatsError as exc:
        raise CalibrationError(f"{sample.path}: {exc}") from exc


def cv_distribution(samples: Sequence[BandwidthSample]) -> Ecdf:
    if not samples:
        raise CalibrationError("no samples")
    return ecdf([sample_cv(s) for s in samples])


def ratio_matrix(curves: Sequence[ErrorRatioCurve]) -> np.ndarray:
    if not curves:
        raise CalibrationError("no curves")
    widths = {len(c) for c in curves}
    if len(widths) != 1:
        raise CalibrationError("curves have different windows")
    return np.vstack([c.ratios for c in curves])


def recommend_duration(curves: Sequence[ErrorRatioCurve], threshold: float = 0.1,
                       quantile: float = 0.95) -> DurationRecommendation:
    """Smallest N whose ratio is within `threshold` for at least `quantile`
    of the curves, at N and at every longer aggregation.

    Only N shorter than the window count: at the full window every ratio
    is zero, which would make any threshold trivially reachable.
    """
    if not threshold >= 0:
        raise CalibrationError("threshold must be >= 0")
    if not 0 < quantile <= 1:
        raise CalibrationError("quantile must be in (0, 1]")
    R = ratio_matrix(curves)[:, :-1]
    if R.shape[1] == 0:
        raise CalibrationError("window too short")
    frac = (R <= threshold).mean(axis=0)
    ok = frac >= quantile - 1e-12
    best = int(np.argmax(frac))
    if not ok[-1]:
        return DurationRecommendation(None, False, best + 1, float(frac[best]))
    failing = np.flatnonzero(~ok)
    first = int(failing[-1]) + 1 if failing.size else 0
    return DurationRecommendation(first + 1, True, first + 1, float(frac[first]))


def quantile_curve(curves: Sequence[ErrorRatioCurve], quantile: float = 0.95) -> np.ndarray:
    """Per-N quantile of the error ratio across curves."""
    return np.quantile(ratio_matrix(curves), quantile, axis=0)
