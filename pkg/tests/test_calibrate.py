import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudbench.calibrate import (
    CalibrationError,
    cv_distribution,
    error_ratio_curve,
    quantile_curve,
    recommend_duration,
)
from cloudbench.core_model import BandwidthSample, Path

P = Path("virginia_c1", "ireland_c1")


def _sample(values, path=P):
    v = tuple(float(round(x, 6)) for x in values)
    return BandwidthSample(path, 0, len(v), round(sum(v) / len(v), 6), v)


def test_constant_curve_is_zero():
    c = error_ratio_curve(_sample([200.0] * 900))
    assert np.all(c.ratios == 0.0) and len(c) == 900


def test_step_profile():
    c = error_ratio_curve(_sample([100.0] * 600 + [400.0] * 300))
    assert c.at(600) == pytest.approx(0.5)
    assert c.at(900) == 0.0
    assert c.at(1) == pytest.approx(0.5)


def test_guards():
    with pytest.raises(CalibrationError, match="expected 900"):
        error_ratio_curve(_sample([1.0] * 450))
    with pytest.raises(CalibrationError, match="no per-second"):
        error_ratio_curve(BandwidthSample(P, 0, 900, 5.0))
    with pytest.raises(CalibrationError, match="zero"):
        error_ratio_curve(_sample([0.0] * 900))
    with pytest.raises(CalibrationError):
        cv_distribution([])


def test_cv_distribution():
    e = cv_distribution([_sample([50.0] * 10), _sample([80.0] * 10)])
    assert e(0.0) == 1.0
    e = cv_distribution([_sample([2.0, 4.0]), _sample([5.0] * 3)])
    assert e(0.0) == 0.5 and e(0.4714) == 0.5 and e(0.4715) == 1.0


def test_cv_error_names_path():
    bad = _sample([0.0, 0.0], Path("taiwan_c4", "sydney_c3"))
    with pytest.raises(CalibrationError, match="taiwan_c4->sydney_c3"):
        cv_distribution([bad])


def _noisy(seed, cv=0.2):
    rng = np.random.default_rng(seed)
    return _sample(np.clip(300 * (1 + cv * rng.standard_normal(900)), 0, None))


def test_recommend_constant():
    curves = [error_ratio_curve(_sample([200.0] * 900)) for _ in range(5)]
    r = recommend_duration(curves, 0.1, 0.95)
    assert r.achievable and r.seconds == 1


def test_recommend_threshold_zero_not_achievable():
    curves = [error_ratio_curve(_noisy(s)) for s in range(10)]
    r = recommend_duration(curves, 0.0, 0.95)
    assert not r.achievable and r.seconds is None
    assert 1 <= r.best_n < 900


def test_recommend_requires_suffix():
    # ratio dips to 0 at N=10 by construction, then drifts away again
    x = np.array([300.0] * 900)
    x[:10] = 300.0
    x[10:20] = 600.0
    x[20:] = (300 * 900 - 300 * 10 - 600 * 10) / 880
    c = error_ratio_curve(_sample(x))
    assert c.at(10) > 0.0
    r = recommend_duration([c], 0.01, 1.0)
    assert r.achievable
    assert np.all(c.ratios[r.seconds - 1:] <= 0.01)
    assert c.ratios[r.seconds - 2] > 0.01


def test_recommend_monotone_in_threshold():
    curves = [error_ratio_curve(_noisy(s, 0.4)) for s in range(30)]
    ns = [recommend_duration(curves, t, 0.9).seconds for t in (0.2, 0.1, 0.05, 0.02, 0.01)]
    assert all(b >= a for a, b in zip(ns, ns[1:]))


def test_quantile_curve_shape():
    curves = [error_ratio_curve(_noisy(s)) for s in range(8)]
    q = quantile_curve(curves, 0.95)
    assert q.shape == (900,) and q[-1] == 0.0


def _raw(values):
    v = tuple(float(x) for x in values)
    return BandwidthSample(P, 0, len(v), sum(v) / len(v), v)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 1000))
def test_scale_invariance(seed, c):
    x = np.random.default_rng(seed).uniform(10, 500, 900)
    a = error_ratio_curve(_raw(x)).ratios
    b = error_ratio_curve(_raw(x * c)).ratios
    assert np.allclose(a, b, rtol=1e-9, atol=1e-12)
    assert np.all(a >= 0) and a[-1] == 0.0
