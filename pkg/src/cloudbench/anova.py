"""Sequential (Type I) ANOVA for crossed categorical factors.

Each term is credited with the drop in residual sum of squares when its
indicator columns are appended to the running design. Columns are
orthogonalized one at a time in term order; a column whose residual norm
falls below ``tol`` times its own norm is linearly dependent on what came
before (e.g. a data-center already determined by its area and CSP) and
is dropped, contributing no degree of freedom and a zero coefficient.

Factors use reference-level coding: the last level of each factor's
declared order is the reference and its indicator is omitted.
Interaction columns are products of the non-reference main-effect
indicators of their factors.

Tall designs are first compressed to the triangular factor of
``[X | y]`` by a chunked QR, which preserves every inner product the
sequential decomposition needs while keeping memory at O(p^2).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .core_model import WEEKDAYS, Catalog
from .stats import f_sf

DEFAULT_TOL = 1e-8
P_DISPLAY_FLOOR = 1e-16

FACTOR_LABELS = {
    "time_level": "Time",
    "weekday_level": "Weekday",
    "area_s": "Area^S",
    "csp_s": "CSP^S",
    "dc_s": "DC^S",
    "area_d": "Area^D",
    "csp_d": "CSP^D",
    "dc_d": "DC^D",
    "area_d1": "Area^D1",
    "csp_d1": "CSP^D1",
    "dc_d1": "DC^D1",
    "area_d2": "Area^D2",
    "csp_d2": "CSP^D2",
    "dc_d2": "DC^D2",
}


class AnovaError(ValueError):
    pass


Term = tuple[str, ...]


def term_label(term: Term) -> str:
    return "*".join(FACTOR_LABELS.get(f, f) for f in term)


@dataclass(frozen=True)
class ModelSpec:
    terms: tuple[Term, ...]
    response: str = "response"

    def __post_init__(self):
        terms = tuple(tuple(t) if not isinstance(t, str) else (t,) for t in self.terms)
        object.__setattr__(self, "terms", terms)
        seen = set()
        for t in terms:
            if not t or len(set(t)) != len(t):
                raise AnovaError(f"malformed term {t!r}")
            key = frozenset(t)
            if key in seen:
                raise AnovaError(f"duplicate term {term_label(t)}")
            seen.add(key)
        declared = {t[0] for t in terms if len(t) == 1}
        for t in terms:
            if len(t) > 1 and not set(t) <= declared:
                raise AnovaError(f"interaction {term_label(t)} uses undeclared factors")

    @property
    def factors(self) -> list[str]:
        out: dict[str, None] = {}
        for t in self.terms:
            for f in t:
                out.setdefault(f, None)
        return list(out)

    @property
    def labels(self) -> list[str]:
        return [term_label(t) for t in self.terms]


def bandwidth_model() -> ModelSpec:
    """Time, weekday, area/CSP/data-center per end and their pairwise interactions.

    Ends are interleaved within each granularity (sources before
    destinations), general factors first.
    """
    return ModelSpec(
        terms=(
            ("time_level",),
            ("weekday_level",),
            ("area_s",),
            ("area_d",),
            ("csp_s",),
            ("csp_d",),
            ("dc_s",),
            ("dc_d",),
            ("area_s", "area_d"),
            ("csp_s", "csp_d"),
            ("dc_s", "dc_d"),
        ),
        response="response",
    )


def correlation_model() -> ModelSpec:
    """Model of the correlation between paths S->D1 and S->D2."""
    mains = []
    for kind in ("area", "csp", "dc"):
        mains += [(f"{kind}_s",), (f"{kind}_d1",), (f"{kind}_d2",)]
    twos = []
    for kind in ("area", "csp", "dc"):
        s, d1, d2 = f"{kind}_s", f"{kind}_d1", f"{kind}_d2"
        twos += [(s, d1), (s, d2), (d1, d2)]
    threes = [(f"{k}_s", f"{k}_d1", f"{k}_d2") for k in ("area", "csp", "dc")]
    return ModelSpec(terms=tuple(mains + twos + threes), response="rho")


# -- level declarations -----------------------------------------------------------

def bandwidth_levels(catalog: Catalog) -> dict[str, list]:
    """Level orders for the bandwidth model taken from the catalog (reference last)."""
    areas, csps, ids = catalog.levels("area"), catalog.levels("csp"), list(catalog.ids)
    return {
        "time_level": list(range(24)),
        "weekday_level": list(WEEKDAYS),
        "area_s": areas, "area_d": list(areas),
        "csp_s": csps, "csp_d": list(csps),
        "dc_s": ids, "dc_d": list(ids),
    }


def correlation_levels(catalog: Catalog) -> dict[str, list]:
    areas, csps, ids = catalog.levels("area"), catalog.levels("csp"), list(catalog.ids)
    out = {}
    for end in ("s", "d1", "d2"):
        out[f"area_{end}"] = list(areas)
        out[f"csp_{end}"] = list(csps)
        out[f"dc_{end}"] = list(ids)
    return out


def with_reference(levels: Mapping[str, Sequence], references: Mapping[str, Any]) -> dict[str, list]:
    """Copy of `levels` with each named reference level moved to the end."""
    out = {k: list(v) for k, v in levels.items()}
    for factor, ref in references.items():
        lv = out[factor]
        if ref not in lv:
            raise AnovaError(f"reference {ref!r} is not a level of {factor}")
        lv.remove(ref)
        lv.append(ref)
    return out


# -- results ----------------------------------------------------------------------

@dataclass(frozen=True)
class AnovaRow:
    term: str
    ss: float
    pct_total: float
    pct_factors: float | None
    df: int
    ms: float | None
    F: float | None
    p_value: float | None

    @property
    def p_display(self) -> float | None:
        if self.p_value is None:
            return None
        return 0.0 if self.p_value < P_DISPLAY_FLOOR else self.p_value


@dataclass
class AnovaTable:
    rows: list[AnovaRow]
    n: int
    adjusted_r2: float | None
    r2: float | None

    def __getitem__(self, term: str) -> AnovaRow:
        for r in self.rows:
            if r.term == term:
                return r
        raise KeyError(term)

    @property
    def intercept(self) -> AnovaRow:
        return self.rows[0]

    @property
    def terms(self) -> list[AnovaRow]:
        return self.rows[1:-2]

    @property
    def error(self) -> AnovaRow:
        return self.rows[-2]

    @property
    def total(self) -> AnovaRow:
        return self.rows[-1]

    def df_column(self) -> dict[str, int]:
        return {r.term: r.df for r in self.terms}


@dataclass
class ParameterEstimates:
    intercept: float
    intercept_se: float | None
    coefficients: dict[str, dict[tuple, float]]
    standard_errors: dict[str, dict[tuple, float | None]]
    aliased: dict[str, set[tuple]] = field(default_factory=dict)

    def get(self, term: str, *levels) -> float:
        return self.coefficients[term][tuple(levels)]

    def se(self, term: str, *levels) -> float | None:
        return self.standard_errors[term][tuple(levels)]

    def items(self) -> Iterable[tuple[str, tuple, float]]:
        for term, coefs in self.coefficients.items():
            for lv, v in coefs.items():
                yield term, lv, v


@dataclass
class DesignInfo:
    factor_levels: dict[str, list]
    term_columns: dict[str, int]
    term_df: dict[str, int]
    retained: dict[str, list[tuple]]
    rejected: dict[str, list[tuple]]


@dataclass
class AnovaFit:
    spec: ModelSpec
    table: AnovaTable
    estimates: ParameterEstimates
    residuals: np.ndarray
    fitted: np.ndarray
    design: DesignInfo


# -- data extraction ----------------------------------------------------------------

def _columns(rows, names: Sequence[str]) -> dict[str, list]:
    if hasattr(rows, "keys") and not isinstance(rows, (list, tuple)):
        missing = [n for n in names if n not in rows]
        if missing:
            raise AnovaError(f"unknown factor(s) {missing}")
        return {n: list(rows[n]) for n in names}
    rows = list(rows)
    if not rows:
        raise AnovaError("no observations")
    first = rows[0]
    if isinstance(first, Mapping):
        get = lambda r, n: r[n]  # noqa: E731
        have = set(first)
    else:
        get = getattr
        have = {n for n in names if hasattr(first, n)}
    missing = [n for n in names if n not in have]
    if missing:
        raise AnovaError(f"unknown factor(s) {missing}")
    return {n: [get(r, n) for r in rows] for n in names}


def _sort_key(v):
    return (0, v, "") if isinstance(v, (int, float)) else (1, 0, str(v))


class _Encoded:
    """Integer-coded factors plus the column layout of every term."""

    def __init__(self, data: dict[str, list], spec: ModelSpec, levels: Mapping[str, Sequence] | None):
        levels = dict(levels or {})
        self.n = len(data[spec.response])
        self.levels: dict[str, list] = {}
        self.codes: dict[str, np.ndarray] = {}
        for f in spec.factors:
            values = data[f]
            observed = set(values)
            declared = list(levels[f]) if f in levels else sorted(observed, key=_sort_key)
            if len(set(declared)) != len(declared):
                raise AnovaError(f"duplicate levels declared for {f}")
            undeclared = observed - set(declared)
            if undeclared:
                raise AnovaError(f"levels {sorted(map(str, undeclared))} of {f} not declared")
            index = {lv: i for i, lv in enumerate(declared)}
            self.levels[f] = declared
            self.codes[f] = np.fromiter((index[v] for v in values), dtype=np.int64, count=self.n)
        self.terms = spec.terms
        self.offsets = []
        off = 1  # column 0 is the intercept
        for t in spec.terms:
            self.offsets.append(off)
            off += self.width(t)
        self.p = off

    def width(self, term: Term) -> int:
        return math.prod(len(self.levels[f]) - 1 for f in term)

    def term_index(self, term: Term, rows: slice | np.ndarray) -> np.ndarray:
        """Column index within the term for each row, or -1 at a reference level."""
        idx = np.zeros(len(self.codes[term[0]][rows]), dtype=np.int64)
        valid = np.ones_like(idx, dtype=bool)
        for f in term:
            c = self.codes[f][rows]
            k = len(self.levels[f]) - 1
            valid &= c < k
            idx = idx * k + np.minimum(c, k - 1)
        idx[~valid] = -1
        return idx

    def combos(self, term: Term) -> list[tuple]:
        """Level combinations in column order (non-reference levels only)."""
        return list(itertools.product(*(self.levels[f][:-1] for f in term)))

    def design_chunk(self, rows: slice) -> np.ndarray:
        m = rows.stop - rows.start
        X = np.zeros((m, self.p))
        X[:, 0] = 1.0
        r = np.arange(m)
        for t, off in zip(self.terms, self.offsets):
            idx = self.term_index(t, rows)
            ok = idx >= 0
            X[r[ok], off + idx[ok]] = 1.0
        return X


def _compressed(enc: _Encoded, y: np.ndarray) -> np.ndarray:
    """Matrix W = [X | y] or its R factor; W^T W == [X | y]^T [X | y]."""
    n, p = enc.n, enc.p
    if n <= 2 * (p + 1):
        W = enc.design_chunk(slice(0, n))
        return np.hstack([W, y[:, None]])
    chunk = max(4 * (p + 1), 4096)
    R = None
    for start in range(0, n, chunk):
        sl = slice(start, min(n, start + chunk))
        block = np.hstack([enc.design_chunk(sl), y[sl, None]])
        if R is not None:
            block = np.vstack([R, block])
        R = np.linalg.qr(block, mode="r")
    return R


class _SequentialBasis:
    """Orthonormal basis grown column by column with dependency rejection."""

    SUB = 64

    def __init__(self, m: int, capacity: int, tol: float):
        self.Q = np.zeros((m, min(m, capacity)))
        self.k = 0
        self.tol = tol

    @property
    def full(self) -> bool:
        return self.k >= self.Q.shape[0]

    def _project_out(self, S: np.ndarray) -> np.ndarray:
        if self.k:
            Q = self.Q[:, : self.k]
            for _ in range(2):
                S = S - Q @ (Q.T @ S)
        return S

    def add_block(self, B: np.ndarray) -> list[bool]:
        """Try each column of B in order; returns the acceptance flag per column."""
        norms = np.linalg.norm(B, axis=0)
        accepted: list[bool] = []
        for start in range(0, B.shape[1], self.SUB):
            if self.full:
                accepted += [False] * (B.shape[1] - start)
                break
            S = self._project_out(B[:, start:start + self.SUB].copy())
            local_start = self.k
            for j in range(S.shape[1]):
                nrm0 = norms[start + j]
                if self.full or nrm0 == 0.0:
                    accepted.append(False)
                    continue
                v = S[:, j]
                if self.k > local_start:
                    L = self.Q[:, local_start:self.k]
                    for _ in range(2):
                        v = v - L @ (L.T @ v)
                nv = float(np.linalg.norm(v))
                if nv > self.tol * nrm0:
                    self.Q[:, self.k] = v / nv
                    self.k += 1
                    accepted.append(True)
                else:
                    accepted.append(False)
        return accepted


def fit_sequential(rows, spec: ModelSpec, levels: Mapping[str, Sequence] | None = None,
                   tol: float = DEFAULT_TOL) -> AnovaFit:
    """Fit `spec` by sequential sums of squares.

    `rows` is a sequence of records (objects or dicts) or a mapping of
    column name to values. `levels` optionally declares the level order of
    each factor; the last level is the reference.
    """
    data = _columns(rows, [spec.response] + spec.factors)
    y = np.asarray(data[spec.response], dtype=float)
    n = y.size
    if n < 2:
        raise AnovaError(f"need at least 2 observations, got {n}")
    if not np.all(np.isfinite(y)):
        raise AnovaError("response contains non-finite values")
    enc = _Encoded(data, spec, levels)
    W = _compressed(enc, y)
    Xw, yw = W[:, :-1], W[:, -1]

    basis = _SequentialBasis(W.shape[0], enc.p, tol)
    acc0 = basis.add_block(Xw[:, :1])
    term_slices = [(0, 1)] + [(off, off + enc.width(t)) for t, off in zip(enc.terms, enc.offsets)]
    accepted = [acc0]
    k_bounds = [(0, basis.k)]
    for t, (a, b) in zip(enc.terms, term_slices[1:]):
        k0 = basis.k
        accepted.append(basis.add_block(Xw[:, a:b]))
        k_bounds.append((k0, basis.k))

    Q = basis.Q[:, : basis.k]
    qty = Q.T @ yw
    ss_parts = [float(np.sum(qty[k0:k1] ** 2)) for k0, k1 in k_bounds]
    dfs = [k1 - k0 for k0, k1 in k_bounds]
    resid_w = yw - Q @ qty
    sse = float(resid_w @ resid_w)
    total = float(y @ y)
    rank = basis.k
    df_error = n - rank

    explained = math.fsum(ss_parts)
    if abs(explained + sse - total) > 1e-8 * max(total, 1e-300):
        raise AnovaError(
            f"sum-of-squares additivity violated: {explained} + {sse} != {total}"
        )

    # -- coefficients of the retained columns
    retained_idx = np.concatenate(
        [np.arange(a, b)[np.asarray(acc, dtype=bool)] for (a, b), acc in zip(term_slices, accepted)]
    ).astype(int)
    T = np.triu(Q.T @ Xw[:, retained_idx])
    beta = solve_triangular(T, qty)
    if sse <= 1e-16 * total:
        sse = 0.0  # rounding residue of an exact fit
    mse = sse / df_error if df_error > 0 else None
    if mse is not None:
        Tinv = solve_triangular(T, np.eye(rank))
        se = np.sqrt(mse * np.sum(Tinv ** 2, axis=1))
    else:
        se = np.full(rank, np.nan)
    col_value = np.zeros(enc.p)
    col_se = np.full(enc.p, np.nan)
    col_value[retained_idx] = beta
    col_se[retained_idx] = se

    coefficients: dict[str, dict[tuple, float]] = {}
    errors: dict[str, dict[tuple, float | None]] = {}
    aliased: dict[str, set[tuple]] = {}
    retained: dict[str, list[tuple]] = {}
    rejected: dict[str, list[tuple]] = {}
    fitted = np.full(n, float(col_value[0]))
    for t, off, acc in zip(enc.terms, enc.offsets, accepted[1:]):
        name = term_label(t)
        combos = enc.combos(t)
        retained[name] = [c for c, ok in zip(combos, acc) if ok]
        rejected[name] = [c for c, ok in zip(combos, acc) if not ok]
        aliased[name] = set(rejected[name])
        width = len(combos)
        vals = col_value[off:off + width]
        ses = col_se[off:off + width]
        coefs = {}
        errs = {}
        for full in itertools.product(*(enc.levels[f] for f in t)):
            coefs[full] = 0.0
            errs[full] = None
        for c, v, s in zip(combos, vals, ses):
            coefs[c] = float(v)
            errs[c] = None if math.isnan(s) else float(s)
        coefficients[name] = coefs
        errors[name] = errs
        idx = enc.term_index(t, slice(0, n))
        ok = idx >= 0
        fitted[ok] += vals[idx[ok]]
    residuals = y - fitted

    estimates = ParameterEstimates(
        intercept=float(col_value[0]),
        intercept_se=None if math.isnan(col_se[0]) else float(col_se[0]),
        coefficients=coefficients,
        standard_errors=errors,
        aliased=aliased,
    )

    # -- table
    ss_int = ss_parts[0]
    corrected = total - ss_int
    labels = ["mu"] + [term_label(t) for t in enc.terms]
    table_rows = []
    for i, (label, ss, df) in enumerate(zip(labels, ss_parts, dfs)):
        ms = ss / df if df > 0 else None
        F = None
        p = None
        if ms is not None and mse is not None and mse > 0:
            F = ms / mse
            p = f_sf(F, df, df_error)
        table_rows.append(AnovaRow(
            term=label, ss=ss,
            pct_total=100.0 * ss / total if total > 0 else 0.0,
            pct_factors=None if i == 0 else (100.0 * ss / corrected if corrected > 0 else 0.0),
            df=df, ms=ms, F=F, p_value=p,
        ))
    table_rows.append(AnovaRow(
        "Error", sse, 100.0 * sse / total if total > 0 else 0.0,
        100.0 * sse / corrected if corrected > 0 else 0.0,
        df_error, mse, None, None,
    ))
    table_rows.append(AnovaRow("Total", total, 100.0, 100.0, n, None, None, None))
    r2 = 1.0 - sse / corrected if corrected > 0 else None
    adj = None
    if df_error > 0 and corrected > 0 and n > 1:
        adj = 1.0 - (sse / df_error) / (corrected / (n - 1))
    table = AnovaTable(table_rows, n, adj, r2)

    design = DesignInfo(
        factor_levels=enc.levels,
        term_columns={term_label(t): enc.width(t) for t in enc.terms},
        term_df={label: df for label, df in zip(labels[1:], dfs[1:])},
        retained=retained,
        rejected=rejected,
    )
    return AnovaFit(spec, table, estimates, residuals, fitted, design)


@dataclass(frozen=True)
class IndependenceCheck:
    lag1: float
    threshold: float
    passed: bool


def residual_independence_check(residuals: Sequence[float]) -> IndependenceCheck:
    """Lag-1 autocorrelation against the 2/sqrt(n) band."""
    e = np.asarray(residuals, dtype=float)
    if e.size < 30:
        raise AnovaError(f"need at least 30 residuals, got {e.size}")
    d = e - e.mean()
    denom = float(d @ d)
    r1 = float(d[:-1] @ d[1:]) / denom if denom > 0 else 0.0
    thr = 2.0 / math.sqrt(e.size)
    return IndependenceCheck(r1, thr, abs(r1) < thr)
