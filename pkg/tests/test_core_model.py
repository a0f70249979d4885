import calendar
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudbench.core_model import (
    BandwidthSample,
    BandwidthSeries,
    Catalog,
    CatalogError,
    DataCenter,
    Dataset,
    DatasetError,
    DatasetWriter,
    Path,
    UnknownDataCenterError,
    catalog_load,
    dataset_load,
    dataset_store,
    derive_factors,
)


def test_reference_catalog_matches_testbed(catalog):
    assert len(catalog) == 18
    counts = {c: sum(dc.csp == c for dc in catalog) for c in ("C1", "C2", "C3", "C4")}
    assert counts == {"C1": 6, "C2": 5, "C3": 4, "C4": 3}
    assert len(catalog.levels("area")) == 7
    assert len(catalog.paths()) == 306


def test_empty_catalog_file(tmp_path):
    f = tmp_path / "c.csv"
    f.write_text("")
    with pytest.raises(CatalogError, match="empty catalog"):
        catalog_load(f)


def test_duplicate_id_names_line(tmp_path):
    f = tmp_path / "c.csv"
    f.write_text("id,csp,area,name\nvirginia_c1,C1,EastUS,a\nvirginia_c1,C2,EastUS,b\n")
    with pytest.raises(CatalogError, match=r"c\.csv:3: duplicate"):
        catalog_load(f)


def test_unknown_enum(tmp_path):
    f = tmp_path / "c.csv"
    f.write_text("id,csp,area,name\nx,C9,EastUS,a\n")
    with pytest.raises(CatalogError, match="unknown CSP"):
        catalog_load(f)
    f.write_text("id,csp,area,name\nx,C1,Mars,a\n")
    with pytest.raises(CatalogError, match="unknown area"):
        catalog_load(f)


def test_derive_factors_monday_afternoon(catalog):
    ts = calendar.timegm((2015, 3, 2, 15, 30, 0))
    row = derive_factors(BandwidthSample(Path("virginia_c1", "taiwan_c4"), ts, 300, 12.5), catalog)
    assert (row.time_level, row.weekday_level) == (15, "Mon")
    assert (row.area_s, row.csp_s, row.dc_s) == ("EastUS", "C1", "virginia_c1")
    assert (row.area_d, row.csp_d) == ("EastAsia", "C4")
    assert row.response == 12.5


def test_derive_factors_unknown_id(catalog):
    with pytest.raises(UnknownDataCenterError):
        derive_factors(BandwidthSample(Path("virginia_c1", "atlantis"), 0, 300, 1.0), catalog)


def test_sample_invariants():
    with pytest.raises(ValueError):
        BandwidthSample(Path("a", "a"), 0, 300, 1.0)
    with pytest.raises(ValueError):
        BandwidthSample(Path("a", "b"), 0, 0, 1.0)
    with pytest.raises(ValueError):
        BandwidthSample(Path("a", "b"), 0, 2, 1.0, (1.0, 3.0))
    BandwidthSample(Path("a", "b"), 0, 2, 2.0, (1.0, 3.0))


def test_series_requires_increasing_time():
    p = Path("a", "b")
    with pytest.raises(ValueError):
        BandwidthSeries(p, (BandwidthSample(p, 10, 1, 1.0), BandwidthSample(p, 10, 1, 1.0)))


def test_round_trip(tmp_path, catalog):
    ds = Dataset(catalog)
    ds.append(BandwidthSample(Path("virginia_c1", "ireland_c1"), 1425254400, 300, 123.456789))
    ds.append(BandwidthSample(Path("ireland_c1", "virginia_c1"), 1425258000, 3, 2.0, (1.0, 2.0, 3.0)))
    ds.append(BandwidthSample(Path("taiwan_c4", "sydney_c3"), 1425261600, 300, 0.0))
    f = tmp_path / "d.jsonl"
    dataset_store(ds, f)
    back = dataset_load(f, catalog)
    assert back.samples == [
        BandwidthSample(Path("virginia_c1", "ireland_c1"), 1425254400, 300, 123.456789),
        *ds.samples[1:],
    ]
    assert back.rows() == ds.rows()


def test_malformed_record_names_index(tmp_path, catalog):
    f = tmp_path / "d.jsonl"
    good = {"v": 1, "ts": 0, "src": "virginia_c1", "dst": "ireland_c1", "dur_s": 300, "mbps_mean": 1.0}
    f.write_text(json.dumps(good) + "\n" + '{"v": 1, "ts": "x"}\n')
    with pytest.raises(DatasetError, match="record 1"):
        dataset_load(f, catalog)


def test_newer_schema_rejected(tmp_path, catalog):
    f = tmp_path / "d.jsonl"
    f.write_text(json.dumps({"v": 2, "ts": 0, "src": "virginia_c1", "dst": "ireland_c1",
                             "dur_s": 300, "mbps_mean": 1.0}) + "\n")
    with pytest.raises(DatasetError, match="version mismatch"):
        dataset_load(f, catalog)


def test_writer_lock_and_crash_safety(tmp_path, catalog):
    f = tmp_path / "d.jsonl"
    s = BandwidthSample(Path("virginia_c1", "ireland_c1"), 0, 300, 5.0)
    with DatasetWriter(f, catalog) as w:
        w.append(s)
        with pytest.raises(DatasetError, match="locked"):
            DatasetWriter(f, catalog).__enter__()
        # a reader mid-campaign sees every completed line
        assert len(dataset_load(f, catalog)) == 1
        w.append(BandwidthSample(Path("virginia_c1", "ireland_c1"), 3600, 300, 6.0))
    assert len(dataset_load(f, catalog)) == 2
    assert not (tmp_path / "d.jsonl.lock").exists()


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=2, max_value=8))
def test_path_enumeration_count(n):
    cat = Catalog(DataCenter(f"dc{i}", "C1", "EastUS") for i in range(n))
    paths = cat.paths()
    assert len(paths) == n * (n - 1) == len(set(paths))
    assert all(p.src != p.dst for p in paths)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(min_value=0, max_value=2_000_000_000),
    st.lists(st.floats(min_value=0, max_value=930, allow_nan=False), min_size=1, max_size=20),
)
def test_round_trip_property(tmp_path_factory, ts, values):
    cat = Catalog([DataCenter("a", "C1", "EastUS"), DataCenter("b", "C2", "WestUS")])
    vals = tuple(round(v, 6) for v in values)
    mean = round(sum(vals) / len(vals), 6)
    ds = Dataset(cat)
    ds.append(BandwidthSample(Path("a", "b"), ts, len(vals), mean, vals))
    f = tmp_path_factory.mktemp("rt") / "d.jsonl"
    dataset_store(ds, f)
    assert dataset_load(f, cat).samples == ds.samples
