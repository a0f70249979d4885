"""Data-center catalog, measurement records and dataset persistence.

Everything downstream keys off the catalog: factor levels for the ANOVA
models are copied from it, and its row order decides which level of each
factor ends up as the reference level.
"""
from __future__ import annotations

import csv
import datetime as _dt
import io
import itertools
import json
import math
import os
import pathlib
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Iterator, NamedTuple, Sequence

CSPS = ("C1", "C2", "C3", "C4")
AREAS = (
    "EastUS",
    "WestUS",
    "CentralUS",
    "NorthEurope",
    "EastAsia",
    "Australia",
    "SouthAmerica",
)
WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")

SCHEMA_VERSION = 1


class CatalogError(ValueError):
    pass


class DatasetError(ValueError):
    pass


class UnknownDataCenterError(KeyError):
    def __str__(self) -> str:
        return f"unknown data-center id: {self.args[0]!r}"


@dataclass(frozen=True)
class DataCenter:
    id: str
    csp: str
    area: str
    display_name: str = ""

    def __post_init__(self):
        if not self.id:
            raise CatalogError("empty data-center id")
        if self.csp not in CSPS:
            raise CatalogError(f"unknown CSP {self.csp!r} for {self.id!r}")
        if self.area not in AREAS:
            raise CatalogError(f"unknown area {self.area!r} for {self.id!r}")


class Catalog:
    """Ordered, immutable collection of data-centers with lookup by id."""

    def __init__(self, datacenters: Iterable[DataCenter]):
        self._items = tuple(datacenters)
        self._by_id: dict[str, DataCenter] = {}
        for dc in self._items:
            if dc.id in self._by_id:
                raise CatalogError(f"duplicate data-center id {dc.id!r}")
            self._by_id[dc.id] = dc
        if not self._items:
            raise CatalogError("empty catalog")

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[DataCenter]:
        return iter(self._items)

    def __getitem__(self, dc_id: str) -> DataCenter:
        try:
            return self._by_id[dc_id]
        except KeyError:
            raise UnknownDataCenterError(dc_id) from None

    def __contains__(self, dc_id: object) -> bool:
        return dc_id in self._by_id

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Catalog) and self._items == other._items

    def __repr__(self) -> str:
        return f"Catalog({len(self)} data-centers)"

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(dc.id for dc in self._items)

    def subset(self, ids: Iterable[str]) -> "Catalog":
        wanted = set(ids)
        return Catalog(dc for dc in self._items if dc.id in wanted)

    def paths(self) -> list["Path"]:
        """All ordered (src, dst) pairs with src != dst, in catalog order."""
        return [Path(a, b) for a, b in itertools.permutations(self.ids, 2)]

    def levels(self, attr: str) -> list[str]:
        """Distinct values of `attr` ("id", "csp" or "area") in first-appearance order."""
        seen: dict[str, None] = {}
        for dc in self._items:
            seen.setdefault(getattr(dc, attr), None)
        return list(seen)


class Path(NamedTuple):
    src: str
    dst: str

    def __str__(self) -> str:
        return f"{self.src}->{self.dst}"


@dataclass(frozen=True)
class BandwidthSample:
    path: Path
    start_utc: int
    duration_s: int
    mean_mbps: float
    per_second_mbps: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.path.src == self.path.dst:
            raise ValueError(f"path endpoints must differ: {self.path}")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if not (self.mean_mbps >= 0 and math.isfinite(self.mean_mbps)):
            raise ValueError(f"mean_mbps must be finite and >= 0, got {self.mean_mbps}")
        if self.per_second_mbps is not None:
            ps = tuple(float(x) for x in self.per_second_mbps)
            object.__setattr__(self, "per_second_mbps", ps)
            if len(ps) != self.duration_s:
                raise ValueError(
                    f"per_second_mbps has {len(ps)} entries, expected {self.duration_s}"
                )
            if any(x < 0 for x in ps):
                raise ValueError("per_second_mbps entries must be >= 0")
            m = math.fsum(ps) / len(ps)
            if abs(m - self.mean_mbps) > 1e-6 * max(abs(m), 1.0):
                raise ValueError(
                    f"mean_mbps {self.mean_mbps} disagrees with per-second mean {m}"
                )


@dataclass(frozen=True)
class BandwidthSeries:
    path: Path
    samples: tuple[BandwidthSample, ...]

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        prev = None
        for s in self.samples:
            if s.path != self.path:
                raise ValueError(f"sample for {s.path} in series of {self.path}")
            if prev is not None and s.start_utc <= prev:
                raise ValueError("series timestamps must be strictly increasing")
            prev = s.start_utc

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def values(self) -> list[float]:
        return [s.mean_mbps for s in self.samples]

    @property
    def timestamps(self) -> list[int]:
        return [s.start_utc for s in self.samples]


@dataclass(frozen=True)
class ObservationRow:
    response: float
    time_level: int
    weekday_level: str
    area_s: str
    csp_s: str
    dc_s: str
    area_d: str
    csp_d: str
    dc_d: str


def utc_hour_weekday(ts: int) -> tuple[int, str]:
    t = _dt.datetime.fromtimestamp(ts, tz=_dt.timezone.utc)
    return t.hour, WEEKDAYS[t.weekday()]


def derive_factors(sample: BandwidthSample, catalog: Catalog) -> ObservationRow:
    src = catalog[sample.path.src]
    dst = catalog[sample.path.dst]
    hour, wd = utc_hour_weekday(sample.start_utc)
    return ObservationRow(
        response=sample.mean_mbps,
        time_level=hour,
        weekday_level=wd,
        area_s=src.area,
        csp_s=src.csp,
        dc_s=src.id,
        area_d=dst.area,
        csp_d=dst.csp,
        dc_d=dst.id,
    )


# -- catalog file -------------------------------------------------------------

CATALOG_HEADER = ["id", "csp", "area", "name"]


def _parse_catalog(text: str, source: str) -> Catalog:
    reader = csv.reader(io.StringIO(text))
    rows = [(n, r) for n, r in enumerate(reader, start=1) if any(c.strip() for c in r)]
    if not rows:
        raise CatalogError("empty catalog")
    lineno, header = rows[0]
    if [h.strip() for h in header] != CATALOG_HEADER:
        raise CatalogError(f"{source}:{lineno}: expected header {','.join(CATALOG_HEADER)}")
    items = []
    seen = set()
    for lineno, row in rows[1:]:
        if len(row) != 4:
            raise CatalogError(f"{source}:{lineno}: expected 4 fields, got {len(row)}")
        dc_id, csp, area, name = (c.strip() for c in row)
        if dc_id in seen:
            raise CatalogError(f"{source}:{lineno}: duplicate data-center id {dc_id!r}")
        seen.add(dc_id)
        try:
            items.append(DataCenter(dc_id, csp, area, name))
        except CatalogError as exc:
            raise CatalogError(f"{source}:{lineno}: {exc}") from None
    return Catalog(items)


def catalog_load(path: str | os.PathLike) -> Catalog:
    p = pathlib.Path(path)
    return _parse_catalog(p.read_text(encoding="utf-8"), str(p))


def reference_catalog() -> Catalog:
    """The bundled 18 data-center testbed."""
    text = resources.files("cloudbench.data").joinpath("catalog.csv").read_text("utf-8")
    return _parse_catalog(text, "catalog.csv")


# -- dataset ------------------------------------------------------------------

@dataclass
class Dataset:
    """Append-only collection of samples bound to a catalog."""

    catalog: Catalog
    samples: list[BandwidthSample] = field(default_factory=list)

    def __post_init__(self):
        samples, self.samples = list(self.samples), []
        for s in samples:
            self.append(s)

    def append(self, sample: BandwidthSample) -> None:
        for dc_id in sample.path:
            if dc_id not in self.catalog:
                raise UnknownDataCenterError(dc_id)
        self.samples.append(sample)

    def __len__(self) -> int:
        return len(self.samples)

    def rows(self) -> list[ObservationRow]:
        return [derive_factors(s, self.catalog) for s in self.samples]

    def series(self) -> dict[Path, BandwidthSeries]:
        """Group samples by path, time-ordered; paths in first-seen order."""
        by_path: dict[Path, list[BandwidthSample]] = {}
        for s in self.samples:
            by_path.setdefault(s.path, []).append(s)
        return {
            p: BandwidthSeries(p, tuple(sorted(v, key=lambda s: s.start_utc)))
            for p, v in by_path.items()
        }


def _fmt(x: float) -> float:
    return round(float(x), 6)


def sample_to_record(sample: BandwidthSample) -> dict:
    rec = {
        "v": SCHEMA_VERSION,
        "ts": int(sample.start_utc),
        "src": sample.path.src,
        "dst": sample.path.dst,
        "dur_s": int(sample.duration_s),
        "mbps_mean": _fmt(sample.mean_mbps),
    }
    if sample.per_second_mbps is not None:
        rec["mbps_sec"] = [_fmt(x) for x in sample.per_second_mbps]
    return rec


def record_to_sample(rec: dict) -> BandwidthSample:
    v = rec.get("v")
    if not isinstance(v, int):
        raise DatasetError("missing schema version field 'v'")
    if v != SCHEMA_VERSION:
        raise DatasetError(f"schema version mismatch: file has v={v}, reader supports v={SCHEMA_VERSION}")
    ps = rec.get("mbps_sec")
    return BandwidthSample(
        path=Path(str(rec["src"]), str(rec["dst"])),
        start_utc=int(rec["ts"]),
        duration_s=int(rec["dur_s"]),
        mean_mbps=float(rec["mbps_mean"]),
        per_second_mbps=tuple(float(x) for x in ps) if ps is not None else None,
    )


def format_record(sample: BandwidthSample) -> str:
    return json.dumps(sample_to_record(sample), separators=(",", ":"))


def dataset_store(ds: Dataset, path: str | os.PathLike) -> None:
    p = pathlib.Path(path)
    tmp = p.with_name(p.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for s in ds.samples:
            fh.write(format_record(s) + "\n")
    os.replace(tmp, p)


def dataset_load(path: str | os.PathLike, catalog: Catalog | None = None) -> Dataset:
    catalog = catalog or reference_catalog()
    ds = Dataset(catalog)
    with open(path, encoding="utf-8") as fh:
        for idx, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise DatasetError("record is not a JSON object")
                sample = record_to_sample(rec)
            except DatasetError as exc:
                raise DatasetError(f"record {idx}: {exc}") from None
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(f"record {idx}: malformed record ({exc})") from None
            try:
                ds.append(sample)
            except UnknownDataCenterError as exc:
                raise DatasetError(f"record {idx}: {exc}") from None
    return ds


class DatasetWriter:
    """Single-writer, line-atomic appender guarded by an advisory lock file."""

    def __init__(self, path: str | os.PathLike, catalog: Catalog):
        self.path = pathlib.Path(path)
        self.catalog = catalog
        self.lock_path = self.path.with_name(self.path.name + ".lock")
        self._fh = None
        self._lock_fd = None

    def __enter__(self) -> "DatasetWriter":
        try:
            self._lock_fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise DatasetError(f"dataset {self.path} is locked by another writer") from None
        os.write(self._lock_fd, str(os.getpid()).encode())
        self._fh = open(self.path, "a", encoding="utf-8")
        return self

    def append(self, sample: BandwidthSample) -> None:
        for dc_id in sample.path:
            if dc_id not in self.catalog:
                raise UnknownDataCenterError(dc_id)
        self._fh.write(format_record(sample) + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def __exit__(self, *exc) -> None:
        if self._fh is not None:
            self._fh.close()
        if self._lock_fd is not None:
            os.close(self._lock_fd)
            os.unlink(self.lock_path)

