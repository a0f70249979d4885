"""Acceptance suite: one PASS/FAIL line per criterion, at the stated tolerance.

Each test prints its verdict with the measured numbers before asserting,
so the lines show up in ``pytest -v`` output whether or not the criterion
holds.
"""
import time

import numpy as np
import pytest

from cloudbench.anova import (
    ModelSpec,
    bandwidth_levels,
    bandwidth_model,
    correlation_levels,
    correlation_model,
    fit_sequential,
    with_reference,
)
from cloudbench.calibrate import error_ratio_curve, recommend_duration, sample_cv
from cloudbench.core_model import BandwidthSample, Path
from cloudbench.correlation import all_pair_rhos, build_triples
from cloudbench.decompose import decompose_dataset, pooled_stationary_fraction
from cloudbench.simulate import (
    generate,
    per_second_corpus,
    scenario_excursions,
    scenario_table3,
    scenario_table5,
)
from cloudbench.stats import f_cdf, lilliefors, normal_cdf, pearson_rho
from oracles import f_cdf_mc, normal_cdf_qmc, one_way, two_way_sequential

SEED = 20150302


@pytest.fixture
def verdict(capsys):
    def emit(n: int, ok: bool, detail: str) -> bool:
        with capsys.disabled():
            print(f"\n[acceptance {n}] {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return emit


def _rows(**cols):
    n = len(next(iter(cols.values())))
    return [{k: v[i] for k, v in cols.items()} for i in range(n)]


def _additive(fit) -> bool:
    t = fit.table
    ss_ok = abs(sum(r.ss for r in t.rows[:-1]) - t.total.ss) <= 1e-8 * t.total.ss
    return ss_ok and sum(r.df for r in t.rows[:-1]) == t.total.df


def _bandwidth_fit(spec, gen):
    levels = with_reference(bandwidth_levels(spec.catalog), spec.reference_levels)
    return fit_sequential(gen.dataset.rows(), bandwidth_model(), levels=levels)


@pytest.fixture(scope="module")
def coupled_study():
    spec = scenario_table5(seed=SEED)
    gen = generate(spec, weeks=3)
    pairs = all_pair_rhos(gen.dataset)
    triples = build_triples(pairs, spec.catalog)
    rows = [vars(r) for r in triples.records]
    fit = fit_sequential(rows, correlation_model(), correlation_levels(spec.catalog))
    return pairs, triples, fit


@pytest.fixture(scope="module")
def null_pairs():
    spec = scenario_table5(seed=SEED, coupled=False)
    return all_pair_rhos(generate(spec, weeks=3).dataset)


def test_criterion_1_structural_df(verdict):
    spec = scenario_table3(seed=SEED)
    gen = generate(spec, weeks=1)
    t0 = time.perf_counter()
    fit = _bandwidth_fit(spec, gen)
    elapsed = time.perf_counter() - t0
    want = {"Time": 23, "Weekday": 6, "Area^S": 6, "Area^D": 6, "CSP^S": 3, "CSP^D": 3,
            "DC^S": 8, "DC^D": 8, "Area^S*Area^D": 35, "CSP^S*CSP^D": 9, "DC^S*DC^D": 226}
    got = fit.table.df_column()
    diff = {k: (got.get(k), v) for k, v in want.items() if got.get(k) != v}
    ok = not diff and elapsed < 60 and _additive(fit)
    verdict(1, ok, f"n={fit.table.n}, fit {elapsed:.1f} s, df mismatches (got, want) {diff or 'none'}")
    assert ok


def test_criterion_2_parameter_recovery(verdict):
    spec = scenario_table3(noise_sigma=25.0, seed=SEED)
    gen = generate(spec, weeks=3)
    fit = _bandwidth_fit(spec, gen)
    est = fit.estimates
    z = []
    for term, cells in spec.coefficients.items():
        for lv, v in cells.items():
            if v == 0:
                continue
            se = est.se(term, *lv)
            z.append((est.get(term, *lv) - v) / se)
    z = np.abs(np.array(z))
    icpt_err = abs(est.intercept - spec.intercept)
    r2 = fit.table.adjusted_r2
    ok = icpt_err <= 3 and z.max() <= 3 and np.mean(z <= 2) >= 0.9 and r2 >= 0.9
    verdict(2, ok, f"intercept {est.intercept:.2f} (planted {spec.intercept:g}), {z.size} coefficients, "
                   f"max |z| {z.max():.2f}, within 2 SE {np.mean(z <= 2):.1%}, adjusted R2 {r2:.3f}")
    assert ok


def test_criterion_3_oracle_equivalence(verdict):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    mismatched_df = 0
    for i in range(200):
        n = int(rng.integers(8, 61))
        y = rng.normal(rng.uniform(-20, 20), rng.uniform(0.5, 10), n)
        if i % 2 == 0:
            k = int(rng.integers(2, 6))
            g = [f"g{v}" for v in rng.integers(0, k, n)]
            fit = fit_sequential(_rows(g=g, y=y), ModelSpec((("g",),), "y"))
            o = one_way([y[np.array(g) == lv] for lv in sorted(set(g))])
            ref = {"g": (o["ss"], o["df"], o["F"])}
        else:
            a = [f"a{v}" for v in rng.integers(0, int(rng.integers(2, 4)), n)]
            b = [f"b{v}" for v in rng.integers(0, int(rng.integers(2, 4)), n)]
            y = y + np.array([{"a0": 0.0, "a1": 3.0, "a2": -2.0}[v] for v in a])
            fit = fit_sequential(_rows(a=a, b=b, y=y), ModelSpec((("a",), ("b",), ("a", "b")), "y"))
            o = two_way_sequential(a, b, y)
            ref = {"a": o["A"], "b": o["B"], "a*b": o["AB"]}
        for term, (ss, df, F) in ref.items():
            row = fit.table[term]
            mismatched_df += row.df != df
            if df == 0:
                continue
            worst = max(worst, abs(row.ss - ss) / abs(ss))
            if F is not None:
                worst = max(worst, abs(row.F - F) / abs(F))
    ok = worst <= 1e-9 and mismatched_df == 0
    verdict(3, ok, f"200 datasets, worst relative SS/F deviation {worst:.2e}, df mismatches {mismatched_df}")
    assert ok


def test_criterion_4_lilliefors_calibration(verdict):
    rng = np.random.default_rng(SEED)
    t0 = time.perf_counter()
    rejected = sum(lilliefors(rng.normal(size=288)).reject for _ in range(2000))
    elapsed = time.perf_counter() - t0
    rate = rejected / 2000
    ok = 0.035 <= rate <= 0.065 and elapsed < 30
    verdict(4, ok, f"rejection rate {rate:.2%} over 2000 samples of n=288, {elapsed:.1f} s")
    assert ok


def test_criterion_5_decomposition_fidelity(verdict):
    spec = scenario_excursions(seed=SEED)
    gen = generate(spec, days=3, samples_per_hour=4)
    results = decompose_dataset(gen.dataset.series())
    pooled = pooled_stationary_fraction(results)
    tp = fp = dips = dips_found = 0
    for r in results:
        truth = gen.truth["paths"][str(r.path)]
        planted = set(truth["excursion_indices"])
        flagged = set(r.decomposition.excursion_indices)
        tp += len(flagged & planted)
        fp += len(flagged - planted)
        for ev in truth["events"]:
            if ev["depth_z"] < 0:
                idx = set(range(ev["start"], ev["end"] + 1))
                dips += len(idx)
                dips_found += len(idx & flagged)
    precision = tp / (tp + fp)
    recall = dips_found / dips
    ok = pooled > 0.85 and precision >= 0.95 and recall >= 0.95
    verdict(5, ok, f"pooled stationary fraction {pooled:.3f}, precision {precision:.3f}, "
                   f"dip recall {recall:.3f} ({dips} planted dip samples)")
    assert ok


def test_criterion_6_duration_calibration(verdict):
    spec = scenario_table3(seed=SEED)
    samples = per_second_corpus(spec, duration_s=900)
    curves = [error_ratio_curve(s) for s in samples]
    rec = recommend_duration(curves, threshold=0.1, quantile=0.95)
    cvs = np.array([sample_cv(s) for s in samples])
    ok = rec.achievable and rec.seconds <= 300 and cvs.max() < 0.5 and np.mean(cvs < 0.2) >= 0.8
    verdict(6, ok, f"recommended {rec.seconds} s, realized CV range {cvs.min():.3f}-{cvs.max():.3f}, "
                   f"{np.mean(cvs < 0.2):.1%} below 0.2")
    assert ok


def test_criterion_7_correlation_null_and_alternative(verdict, null_pairs, coupled_study):
    null = null_pairs.values()
    null_frac = np.mean(np.abs(null) <= 0.25)
    _, triples, fit = coupled_study
    pct = {r.term: r.pct_factors for r in fit.table.terms}
    non_dc = sorted((t for t in pct if "DC" not in t), key=lambda t: -pct[t])
    top = set(non_dc[:2])
    small = max(pct["Area^D1"], pct["Area^D2"])
    ok = (null_frac >= 0.95 and top == {"Area^S", "CSP^S"} and small < 0.2 * min(pct["Area^S"], pct["CSP^S"])
          and len(triples.records) == 4896 and _additive(fit))
    verdict(7, ok, f"null within 0.25: {null_frac:.1%}; top non-DC terms {non_dc[:3]} "
                   f"(Area^S {pct['Area^S']:.2f}%, CSP^S {pct['CSP^S']:.2f}%, Area^D1 {pct['Area^D1']:.2f}%, "
                   f"Area^D2 {pct['Area^D2']:.2f}%); triples {len(triples.records)}")
    assert ok


def test_criterion_8_counts(verdict, null_pairs):
    from cloudbench.core_model import reference_catalog

    paths = len(reference_catalog().paths())
    doubled = null_pairs.count(doubled=True)
    ok = paths == 306 and doubled == 93330
    verdict(8, ok, f"{paths} directed paths, {doubled} doubled coefficients")
    assert ok


def test_criterion_9_invariant_suites(verdict, null_pairs):
    failures = []
    rng = np.random.default_rng(SEED)
    # SS/df additivity on randomized fits
    for _ in range(20):
        n = 40
        a = list(rng.choice(["p", "q", "r"], n))
        b = list(rng.choice(["s", "t"], n))
        fit = fit_sequential(_rows(a=a, b=b, y=rng.normal(5, 2, n)), ModelSpec((("a",), ("b",), ("a", "b")), "y"))
        if not _additive(fit):
            failures.append("additivity")
    # pearson symmetry and affine invariance
    x, y = rng.normal(size=200), rng.normal(size=200) + 0.3 * np.arange(200) / 200
    r = pearson_rho(x, y)
    if abs(r - pearson_rho(y, x)) > 1e-12 or abs(r - pearson_rho(3 * x + 7, 0.5 * y - 2)) > 1e-12 \
            or abs(r + pearson_rho(-x, y)) > 1e-12:
        failures.append("pearson")
    # doubled convention is symmetric
    if null_pairs.count(doubled=True) != 2 * null_pairs.count():
        failures.append("doubling")
    # error ratio is scale invariant
    raw = rng.uniform(50, 150, 900)
    p = Path("virginia_c1", "ireland_c1")
    c1 = error_ratio_curve(BandwidthSample(p, 0, 900, float(raw.mean()), tuple(raw)))
    c2 = error_ratio_curve(BandwidthSample(p, 0, 900, float(raw.mean() * 8), tuple(raw * 8)))
    if np.max(np.abs(c1.ratios - c2.ratios)) > 1e-12:
        failures.append("error ratio scaling")
    # simulator determinism
    spec = scenario_excursions(seed=SEED)
    if generate(spec, days=2).dataset.samples != generate(spec, days=2).dataset.samples:
        failures.append("determinism")
    # distribution functions against Monte Carlo oracles
    f_dev = max(abs(f_cdf(xv, d1, d2) - f_cdf_mc(xv, d1, d2, draws=2_000_000))
                for xv, d1, d2 in ((1.0, 3, 20), (2.5, 9, 500), (0.8, 1, 4)))
    n_dev = max(abs(normal_cdf(z) - normal_cdf_qmc(z)) for z in (-2.5, -1.0, 0.0, 0.7, 1.96))
    if f_dev > 1e-3:
        failures.append("F cdf")
    if n_dev > 1e-4:
        failures.append("normal cdf")
    ok = not failures
    verdict(9, ok, f"failed suites: {failures or 'none'}; F cdf vs MC {f_dev:.1e}, normal cdf vs QMC {n_dev:.1e}")
    assert ok
