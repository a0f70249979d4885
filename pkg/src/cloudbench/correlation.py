"""Cross-path Pearson correlation, its summaries, and the triple dataset."""
from __future__ import annotations

import enum
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core_model import BandwidthSeries, Catalog, Dataset, Path
from .stats import Ecdf, StatsError, ecdf, pearson_rho

DEFAULT_TOLERANCE_S = 300
DEFAULT_MIN_OVERLAP = 100
WEAK_RHO = 0.25
STRONG_RHO = 0.5


class RhoClass(str, enum.Enum):
    StrongNeg = "StrongNeg"
    SignifNeg = "SignifNeg"
    None_ = "None"
    SignifPos = "SignifPos"
    StrongPos = "StrongPos"


def classify_rho(rho: float, weak: float = WEAK_RHO, strong: float = STRONG_RHO) -> RhoClass:
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"correlation {rho} outside [-1, 1]")
    a = abs(rho)
    if a < weak:
        return RhoClass.None_
    if a < strong:
        return RhoClass.SignifPos if rho > 0 else RhoClass.SignifNeg
    return RhoClass.StrongPos if rho > 0 else RhoClass.StrongNeg


@dataclass(frozen=True)
class PairRho:
    path_a: Path
    path_b: Path
    rho: float
    overlap: int

    def key(self) -> tuple[Path, Path]:
        return (self.path_a, self.path_b)


@dataclass(frozen=True)
class SkippedPair:
    path_a: Path
    path_b: Path
    overlap: int
    reason: str


def align_series(a: BandwidthSeries, b: BandwidthSeries,
                 tolerance_s: int = DEFAULT_TOLERANCE_S) -> tuple[np.ndarray, np.ndarray]:
    """Pair samples at most `tolerance_s` apart, closest pairs first, each used once."""
    ta, tb = np.asarray(a.timestamps, dtype=np.int64), np.asarray(b.timestamps, dtype=np.int64)
    va, vb = np.asarray(a.values, dtype=float), np.asarray(b.values, dtype=float)
    if ta.size == tb.size and np.array_equal(ta, tb):
        return va, vb
    lo = np.searchsorted(tb, ta - tolerance_s, side="left")
    hi = np.searchsorted(tb, ta + tolerance_s, side="right")
    cand = []
    for i in np.flatnonzero(hi > lo):
        for j in range(lo[i], hi[i]):
            cand.append((abs(int(ta[i]) - int(tb[j])), int(i), j))
    cand.sort()
    used_a, used_b = set(), set()
    pairs = []
    for _, i, j in cand:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    pairs.sort()
    ia = np.array([p[0] for p in pairs], dtype=int)
    ib = np.array([p[1] for p in pairs], dtype=int)
    return va[ia], vb[ib]


@dataclass
class PairRhoResult:
    pairs: list[PairRho]
    skipped: list[SkippedPair] = field(default_factory=list)

    def values(self, doubled: bool = False) -> np.ndarray:
        """Coefficients, each pair once, or twice (a,b and b,a) when `doubled`."""
        v = np.array([p.rho for p in self.pairs])
        return np.concatenate([v, v]) if doubled else v

    def ecdf(self, doubled: bool = False) -> Ecdf:
        return ecdf(self.values(doubled))

    def lookup(self) -> dict[tuple[Path, Path], PairRho]:
        out = {}
        for p in self.pairs:
            out[(p.path_a, p.path_b)] = p
            out[(p.path_b, p.path_a)] = p
        return out

    def count(self, doubled: bool = False) -> int:
        return len(self.pairs) * (2 if doubled else 1)


def _series_map(data) -> dict[Path, BandwidthSeries]:
    if isinstance(data, Dataset):
        return data.series()
    return dict(data)


def _pair_task(a, b, sa, sb, tolerance_s, min_overlap):
    xa, xb = align_series(sa, sb, tolerance_s)
    if xa.size < min_overlap:
        return SkippedPair(a, b, int(xa.size), f"overlap {xa.size} < {min_overlap}")
    try:
        return PairRho(a, b, pearson_rho(xa, xb), int(xa.size))
    except StatsError as exc:
        return SkippedPair(a, b, int(xa.size), str(exc))


def all_pair_rhos(data, min_overlap: int = DEFAULT_MIN_OVERLAP, tolerance_s: int = DEFAULT_TOLERANCE_S,
                  workers: int | None = None) -> PairRhoResult:
    """Pearson coefficient of every unordered pair of path series.

    Series sharing an identical timestamp grid are correlated in one
    matrix operation; the rest go through `align_series` on a thread pool.
    Results are ordered by (path_a, path_b) regardless of scheduling.
    """
    series = _series_map(data)
    paths = sorted(series)
    grids: dict[tuple, list[Path]] = {}
    for p in paths:
        grids.setdefault(tuple(series[p].timestamps), []).append(p)

    pairs: list[PairRho] = []
    skipped: list[SkippedPair] = []
    for grid, members in grids.items():
        if len(members) < 2:
            continue
        X = np.array([series[p].values for p in members], dtype=float)
        n = X.shape[1]
        Xc = X - X.mean(axis=1, keepdims=True)
        norms = np.sqrt(np.einsum("ij,ij->i", Xc, Xc))
        safe = np.where(norms > 0, norms, 1.0)
        C = np.clip((Xc / safe[:, None]) @ (Xc / safe[:, None]).T, -1.0, 1.0)
        for i, j in itertools.combinations(range(len(members)), 2):
            a, b = members[i], members[j]
            if n < min_overlap:
                skipped.append(SkippedPair(a, b, n, f"overlap {n} < {min_overlap}"))
            elif n < 3:
                skipped.append(SkippedPair(a, b, n, "need at least 3 aligned samples"))
            elif norms[i] == 0 or norms[j] == 0:
                skipped.append(SkippedPair(a, b, n, "zero variance"))
            else:
                pairs.append(PairRho(a, b, float(C[i, j]), n))

    group_of = {p: g for g, ms in grids.items() for p in ms}
    cross = [(a, b) for a, b in itertools.combinations(paths, 2) if group_of[a] != group_of[b]]
    if cross:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = pool.map(
                lambda ab: _pair_task(ab[0], ab[1], series[ab[0]], series[ab[1]], tolerance_s, min_overlap),
                cross,
            )
            for r in results:
                (pairs if isinstance(r, PairRho) else skipped).append(r)

    pairs.sort(key=PairRho.key)
    skipped.sort(key=lambda s: (s.path_a, s.path_b))
    return PairRhoResult(pairs, skipped)


@dataclass
class MeanRhoMatrix:
    ids: list[str]
    cells: np.ndarray          # [src, dst] mean rho of that path against all others
    by_source: np.ndarray      # row means over present cells
    by_destination: np.ndarray  # column means over present cells
    missing: list[Path]

    def cell(self, path: Path) -> float:
        return float(self.cells[self.ids.index(path.src), self.ids.index(path.dst)])


def mean_rho_matrix(pairs: Sequence[PairRho] | PairRhoResult, catalog: Catalog) -> MeanRhoMatrix:
    if isinstance(pairs, PairRhoResult):
        pairs = pairs.pairs
    if not pairs:
        raise ValueError("no coefficients")
    sums: dict[Path, float] = {}
    counts: dict[Path, int] = {}
    for p in pairs:
        for path in (p.path_a, p.path_b):
            sums[path] = sums.get(path, 0.0) + p.rho
            counts[path] = counts.get(path, 0) + 1
    ids = list(catalog.ids)
    k = len(ids)
    cells = np.full((k, k), np.nan)
    missing = []
    for path in catalog.paths():
        i, j = ids.index(path.src), ids.index(path.dst)
        if path in counts:
            cells[i, j] = sums[path] / counts[path]
        else:
            missing.append(path)
    with np.errstate(all="ignore"):
        present = ~np.isnan(cells)
        rows = np.where(present.any(1), np.nansum(cells, 1) / np.maximum(present.sum(1), 1), np.nan)
        cols = np.where(present.any(0), np.nansum(cells, 0) / np.maximum(present.sum(0), 1), np.nan)
    return MeanRhoMatrix(ids, cells, rows, cols, missing)


@dataclass(frozen=True)
class TripleRecord:
    s: str
    d1: str
    d2: str
    rho: float
    area_s: str
    csp_s: str
    dc_s: str
    area_d1: str
    csp_d1: str
    dc_d1: str
    area_d2: str
    csp_d2: str
    dc_d2: str


@dataclass
class TripleResult:
    records: list[TripleRecord]
    missing: list[tuple[str, str, str]]


def build_triples(pairs: PairRhoResult | Iterable[PairRho], catalog: Catalog) -> TripleResult:
    """One record per ordered triple (S, D1, D2) of distinct data-centers,
    carrying the coefficient between paths S->D1 and S->D2."""
    if len(catalog) < 3:
        raise ValueError("need at least 3 data-centers")
    if not isinstance(pairs, PairRhoResult):
        pairs = PairRhoResult(list(pairs))
    lookup = pairs.lookup()
    records, missing = [], []
    for s, d1, d2 in itertools.permutations(catalog.ids, 3):
        pr = lookup.get((Path(s, d1), Path(s, d2)))
        if pr is None:
            missing.append((s, d1, d2))
            continue
        S, D1, D2 = catalog[s], catalog[d1], catalog[d2]
        records.append(TripleRecord(
            s, d1, d2, pr.rho,
            S.area, S.csp, S.id, D1.area, D1.csp, D1.id, D2.area, D2.csp, D2.id,
        ))
    return TripleResult(records, missing)


def triples_from_dataset(data, catalog: Catalog, min_overlap: int = DEFAULT_MIN_OVERLAP,
                         tolerance_s: int = DEFAULT_TOLERANCE_S) -> TripleResult:
    return build_triples(all_pair_rhos(data, min_overlap, tolerance_s), catalog)


def class_counts(values: Iterable[float]) -> Mapping[RhoClass, int]:
    out = {c: 0 for c in RhoClass}
    for v in values:
        out[classify_rho(v)] += 1
    return out
