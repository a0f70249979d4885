import calendar
import json

import numpy as np
import pytest

from cloudbench.core_model import Path
from cloudbench.correlation import all_pair_rhos
from cloudbench.simulate import (
    CAPACITY_CAP_MBPS,
    CouplingGroup,
    ExcursionProcess,
    ScenarioError,
    ScenarioSpec,
    generate,
    generate_per_second,
    load_scenario,
    field_cv_targets,
    preset_table3,
    preset_table5,
    save_scenario,
    scenario_excursions,
    scenario_table3,
    scenario_table5,
)
from cloudbench.stats import mean_std_cv


def test_preset_table3_values():
    p = preset_table3()
    assert p["intercept"] == 40
    c = p["coefficients"]
    assert c["Weekday"][("Sun",)] == 34
    assert c["CSP^S*CSP^D"][("C1", "C4")] == 308
    assert c["Time"][(23,)] == 19
    assert c["Area^S*Area^D"][("EastUS", "EastUS")] == 365
    assert c["CSP^S*CSP^D"][("C1", "C2")] == 109


def test_preset_table5_values():
    p = preset_table5()
    assert p["intercept"] == pytest.approx(0.10)
    area, csp = p["coefficients"]["Area^S"], p["coefficients"]["CSP^S"]
    assert area[("EastAsia",)] == pytest.approx(0.37)
    assert area[("CentralUS",)] == pytest.approx(0.32)
    assert area[("WestUS",)] == pytest.approx(0.00)
    assert csp[("C3",)] == pytest.approx(0.38)
    assert csp[("C4",)] == pytest.approx(0.00)


def test_sunday_night_intra_east_planted_sum():
    spec = scenario_table3()
    ts = calendar.timegm((2015, 3, 8, 23, 0, 0))  # a Sunday
    path = Path("virginia_c1", "virginia_c2")
    c = preset_table3()["coefficients"]
    expected = (40 + c["Time"][(23,)] + c["Weekday"][("Sun",)]
                + c["Area^S"].get(("EastUS",), 0) + c["Area^D"].get(("EastUS",), 0)
                + c["CSP^S"].get(("C1",), 0) + c["CSP^D"].get(("C2",), 0)
                + c["Area^S*Area^D"][("EastUS", "EastUS")] + c["CSP^S*CSP^D"][("C1", "C2")])
    assert spec.planted_mean(path, ts) == pytest.approx(expected)
    assert {34, 19, 365, 109} <= {c["Weekday"][("Sun",)], c["Time"][(23,)],
                                  c["Area^S*Area^D"][("EastUS", "EastUS")], c["CSP^S*CSP^D"][("C1", "C2")]}


def test_zero_noise_equals_planted_sum():
    spec = scenario_table3(noise_sigma=0.0)
    gen = generate(spec, weeks=1)
    for s in gen.dataset.samples[::97]:
        want = min(spec.planted_mean(s.path, s.start_utc), CAPACITY_CAP_MBPS)
        assert s.mean_mbps == round(want, 6)


def test_determinism_and_seed_splitting():
    spec = scenario_excursions(seed=11)
    a = generate(spec, days=2, samples_per_hour=2)
    b = generate(spec, days=2, samples_per_hour=2)
    assert a.dataset.samples == b.dataset.samples and a.truth == b.truth
    some = [Path("taiwan_c4", "sydney_c3"), Path("virginia_c1", "ireland_c1")]
    c = generate(spec, days=2, samples_per_hour=2, paths=some)
    full = a.dataset.series()
    for p, s in c.dataset.series().items():
        assert s.values == full[p].values
    other = generate(scenario_excursions(seed=12), days=2, samples_per_hour=2)
    assert other.dataset.samples != a.dataset.samples


def test_cap_and_floor():
    gen = generate(scenario_table5(seed=3), weeks=1)
    v = np.array([s.mean_mbps for s in gen.dataset.samples])
    assert v.max() <= CAPACITY_CAP_MBPS and v.min() >= 0


def test_path_means_converge():
    spec = scenario_table3(seed=5)
    gen = generate(spec, weeks=3)
    n = len(gen.truth["timestamps"])
    z = []
    for p, s in gen.dataset.series().items():
        t = gen.truth["paths"][str(p)]
        if t["clipped_indices"]:
            continue
        z.append((np.mean(s.values) - t["planted_mean"]) / (t["sigma"] / np.sqrt(n)))
    z = np.abs(z)
    assert len(z) > 250
    assert np.mean(z < 3) >= 0.99 and z.max() < 4.5


def test_truth_consistent_with_samples():
    gen = generate(scenario_excursions(seed=2), days=3, samples_per_hour=4)
    series = gen.dataset.series()
    p = next(iter(series))
    t = gen.truth["paths"][str(p)]
    covered = set()
    for ev in t["events"]:
        covered.update(range(ev["start"], ev["end"] + 1))
    assert covered == set(t["excursion_indices"])
    assert len(series[p]) == len(gen.truth["timestamps"])


def test_coupling_probability_one_inside_zero_outside():
    spec = scenario_table3(noise_sigma=20.0, seed=4)
    spec.coefficients.pop("Time")
    spec.coefficients.pop("Weekday")
    group = [Path("virginia_c1", d) for d in ("california_c1", "ireland_c1", "virginia_c2", "virginia_c3")]
    proc = ExcursionProcess(rate_per_week=12, depth_z=6, duration_mean=3, peak_fraction=0.0)
    spec.coupling = [CouplingGroup("g", group, 1.0, proc)]
    gen = generate(spec, weeks=3)
    res = all_pair_rhos(gen.dataset)
    members = set(group)
    inside = [pr.rho for pr in res.pairs if pr.path_a in members and pr.path_b in members]
    outside = [pr.rho for pr in res.pairs if not (pr.path_a in members and pr.path_b in members)]
    assert len(inside) == 6 and min(inside) > 0.5
    assert np.mean(np.abs(outside) < 0.25) >= 0.95


def test_per_second_examples():
    spec = scenario_table3()
    p = Path("virginia_c1", "california_c1")
    s = generate_per_second(spec, p, 900, cv=0.0)
    assert len(set(s.per_second_mbps)) == 1
    s = generate_per_second(spec, p, 900, cv=0.46)
    assert abs(mean_std_cv(s.per_second_mbps)[2] - 0.46) <= 0.05
    assert s.mean_mbps == pytest.approx(np.mean(s.per_second_mbps), rel=1e-6)
    with pytest.raises(ScenarioError):
        generate_per_second(spec, p, 1)
    with pytest.raises(ScenarioError):
        generate_per_second(spec, p, 10, cv=-0.1)


def test_field_cv_targets():
    cvs = field_cv_targets(306, seed=7)
    assert cvs.min() == pytest.approx(0.09) and cvs.max() == pytest.approx(0.46)
    assert np.mean(cvs < 0.2) >= 0.8


def test_validation_errors():
    spec = scenario_table3()
    spec.intercept = -500
    with pytest.raises(ScenarioError, match="not positive"):
        spec.validate()
    spec = scenario_table3(noise_sigma=400)
    with pytest.raises(ScenarioError, match="CV"):
        spec.validate()
    with pytest.raises(ScenarioError):
        CouplingGroup("g", [Path("virginia_c1", "ireland_c1")], 1.5)
    with pytest.raises(ScenarioError):
        generate(scenario_table3(), weeks=0)


def test_json_round_trip(tmp_path):
    spec = scenario_table5(seed=9)
    f = tmp_path / "s.json"
    save_scenario(spec, f)
    back = load_scenario(f)
    assert back.to_json() == spec.to_json()
    assert json.loads(f.read_text())["rng_seed"] == 9
    assert generate(back, days=1).dataset.samples == generate(spec, days=1).dataset.samples


def test_spec_from_json_rejects_unknown_term():
    doc = scenario_table3().to_json()
    doc["coefficients"]["Moon"] = {"x": 1.0}
    with pytest.raises(ScenarioError):
        ScenarioSpec.from_json(doc)
