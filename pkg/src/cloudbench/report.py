"""Figure data (CSV) and static SVG renderings, plus the run manifest.

CSV is the contract; the SVGs are plain line/step/heat plots meant for a
quick look. Every number is written with fixed precision so reruns on
identical inputs hash identically.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import pathlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .calibrate import ErrorRatioCurve
from .core_model import Catalog, Dataset
from .correlation import MeanRhoMatrix
from .stats import Ecdf

MANIFEST = "manifest.json"
FIGURES = ("cv_ecdf", "error_ratio", "path_mean_heatmap", "rho_ecdf", "mean_rho_matrix")


class ReportError(ValueError):
    pass


def _num(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{float(x):.6f}"


# -- CSV writers / readers -----------------------------------------------------------

def write_ecdf_csv(e: Ecdf, path, column: str) -> None:
    xs, ps = e.steps()
    _rewrite_ecdf(xs, ps, path, column)


def read_ecdf_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows = _read_rows(path)
    if not rows or len(rows[0]) != 2:
        raise ReportError(f"{path}: expected a two-column ECDF table")
    data = np.array([[float(a), float(b)] for a, b in rows[1:]], dtype=float).reshape(-1, 2)
    return data[:, 0], data[:, 1]


def write_ratio_csv(curves: Sequence[ErrorRatioCurve], path) -> None:
    if not curves:
        raise ReportError("no error-ratio curves")
    width = len(curves[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst"] + [str(n) for n in range(1, width + 1)])
        for c in curves:
            w.writerow([c.path.src, c.path.dst] + [_num(v) for v in c.ratios])


def read_ratio_csv(path) -> tuple[list[tuple[str, str]], np.ndarray]:
    rows = _read_rows(path)
    if not rows or rows[0][:2] != ["src", "dst"]:
        raise ReportError(f"{path}: expected an error-ratio matrix with src,dst columns")
    keys = [(r[0], r[1]) for r in rows[1:]]
    M = np.array([[float(v) for v in r[2:]] for r in rows[1:]], dtype=float)
    return keys, M.reshape(len(keys), len(rows[0]) - 2)


def write_matrix_csv(ids: Sequence[str], cells: np.ndarray, row_means: np.ndarray,
                     col_means: np.ndarray, path, corner: float | None = None) -> None:
    """Square matrix with the row means as the last column and the column
    means as the last row."""
    if corner is None:
        corner = float(np.nanmean(cells)) if np.isfinite(cells).any() else float("nan")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src"] + list(ids) + ["mean"])
        for i, dc in enumerate(ids):
            w.writerow([dc] + [_num(v) for v in cells[i]] + [_num(row_means[i])])
        w.writerow(["mean"] + [_num(v) for v in col_means] + [_num(corner)])


def read_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    """Returns the ids and the full (k+1)x(k+1) grid including marginals."""
    rows = _read_rows(path)
    if not rows or rows[0][0] != "src" or rows[0][-1] != "mean":
        raise ReportError(f"{path}: expected a matrix with marginal means")
    ids = rows[0][1:-1]
    grid = np.array([[float(v) if v else np.nan for v in r[1:]] for r in rows[1:]], dtype=float)
    if grid.shape != (len(ids) + 1, len(ids) + 1):
        raise ReportError(f"{path}: matrix is {grid.shape}, expected {(len(ids) + 1,) * 2}")
    return ids, grid


def write_mean_rho_csv(m: MeanRhoMatrix, path) -> None:
    write_matrix_csv(m.ids, m.cells, m.by_source, m.by_destination, path)


def path_mean_matrix(ds: Dataset, catalog: Catalog) -> tuple[list[str], np.ndarray, np.ndarray, np.ndarray]:
    """Per-path mean bandwidth with by-source and by-destination means."""
    ids = list(catalog.ids)
    idx = {dc: i for i, dc in enumerate(ids)}
    k = len(ids)
    sums = np.zeros((k, k))
    counts = np.zeros((k, k))
    for p, s in ds.series().items():
        v = s.values
        sums[idx[p.src], idx[p.dst]] += math.fsum(v)
        counts[idx[p.src], idx[p.dst]] += len(v)
    if not counts.any():
        raise ReportError("dataset has no samples")
    with np.errstate(invalid="ignore", divide="ignore"):
        cells = np.where(counts > 0, sums / np.where(counts > 0, counts, 1), np.nan)
        present = ~np.isnan(cells)
        rows = np.where(present.any(1), np.nansum(cells, 1) / np.maximum(present.sum(1), 1), np.nan)
        cols = np.where(present.any(0), np.nansum(cells, 0) / np.maximum(present.sum(0), 1), np.nan)
    return ids, cells, rows, cols


def _read_rows(path) -> list[list[str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return list(csv.reader(fh))
    except FileNotFoundError:
        raise ReportError(f"missing input file: {path}") from None


# -- SVG ---------------------------------------------------------------------------

W, H = 640, 420
ML, MR, MT, MB = 70, 20, 40, 55


def _svg(body: list[str], title: str, width: int = W, height: int = H) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">'
    )
    t = f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{_esc(title)}</text>'
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', t] + body + ["</svg>", ""])


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _axes(xlo, xhi, ylo, yhi, xlabel, ylabel, xlog=False):
    pw, ph = W - ML - MR, H - MT - MB

    def fx(x):
        if xlog:
            return ML + (math.log10(x) - math.log10(xlo)) / (math.log10(xhi) - math.log10(xlo)) * pw
        return ML + (x - xlo) / (xhi - xlo) * pw

    def fy(y):
        return MT + ph - (y - ylo) / (yhi - ylo) * ph

    out = [
        f'<rect x="{ML}" y="{MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{ML + pw / 2:.1f}" y="{H - 12}" text-anchor="middle">{_esc(xlabel)}</text>',
        f'<text x="16" y="{MT + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {MT + ph / 2:.1f})">{_esc(ylabel)}</text>',
    ]
    xt = [10 ** e for e in range(int(math.floor(math.log10(xlo))), int(math.ceil(math.log10(xhi))) + 1)
          if xlo <= 10 ** e <= xhi] if xlog else np.linspace(xlo, xhi, 6)
    for x in xt:
        out.append(f'<line x1="{fx(x):.1f}" y1="{MT + ph}" x2="{fx(x):.1f}" y2="{MT + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{fx(x):.1f}" y="{MT + ph + 17}" text-anchor="middle">{x:g}</text>')
    for y in np.linspace(ylo, yhi, 6):
        out.append(f'<line x1="{ML - 4}" y1="{fy(y):.1f}" x2="{ML}" y2="{fy(y):.1f}" stroke="black"/>')
        out.append(f'<text x="{ML - 7}" y="{fy(y) + 4:.1f}" text-anchor="end">{y:.3g}</text>')
    return out, fx, fy


def _span(lo: float, hi: float) -> tuple[float, float]:
    if hi - lo < 1e-12:
        pad = max(abs(lo) * 0.1, 0.5)
        return lo - pad, hi + pad
    return lo, hi


def ecdf_svg(xs: np.ndarray, ps: np.ndarray, title: str, xlabel: str) -> str:
    lo, hi = _span(float(xs.min()), float(xs.max()))
    body, fx, fy = _axes(lo, hi, 0.0, 1.0, xlabel, "ECDF")
    if xs.size > 1500:  # thin for display; the CSV keeps every step
        keep = np.unique(np.linspace(0, xs.size - 1, 1500).round().astype(int))
        xs, ps = xs[keep], ps[keep]
    pts = [(lo, 0.0)]
    prev = 0.0
    for x, p in zip(xs, ps):
        pts += [(x, prev), (x, p)]
        prev = p
    pts.append((hi, prev))
    d = " ".join(f"{fx(x):.2f},{fy(y):.2f}" for x, y in pts)
    body.append(f'<polyline points="{d}" fill="none" stroke="#1f5fa8" stroke-width="1.5"/>')
    return _svg(body, title)


def ratio_svg(M: np.ndarray, title: str = "Error ratio vs aggregation time") -> str:
    width = M.shape[1]
    ns = np.unique(np.round(np.geomspace(1, max(width - 1, 1), 120)).astype(int))
    top = max(float(np.quantile(M[:, ns - 1], 0.99)), 1e-6)
    body, fx, fy = _axes(1, max(width - 1, 2), 0.0, top, "aggregation time N (s)", "error ratio", xlog=True)
    for row in M:
        d = " ".join(f"{fx(n):.1f},{fy(min(row[n - 1], top)):.1f}" for n in ns)
        body.append(f'<polyline points="{d}" fill="none" stroke="#999" stroke-opacity="0.35"/>')
    q = np.quantile(M, 0.95, axis=0)
    d = " ".join(f"{fx(n):.1f},{fy(min(q[n - 1], top)):.1f}" for n in ns)
    body.append(f'<polyline points="{d}" fill="none" stroke="#c0392b" stroke-width="2"/>')
    body.append(f'<text x="{W - MR - 4}" y="{MT + 14}" text-anchor="end" fill="#c0392b">95% quantile</text>')
    return _svg(body, title)


def _color(v: float, lo: float, hi: float) -> str:
    if not math.isfinite(v):
        return "#eeeeee"
    t = 0.5 if hi <= lo else min(max((v - lo) / (hi - lo), 0.0), 1.0)
    # white to dark blue
    r = int(round(255 - t * (255 - 20)))
    g = int(round(255 - t * (255 - 60)))
    b = int(round(255 - t * (255 - 140)))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(ids: Sequence[str], grid: np.ndarray, title: str) -> str:
    k = grid.shape[0]
    cell = 22
    left, top = 120, 40
    width = left + k * cell + 20
    height = top + k * cell + 110
    finite = grid[np.isfinite(grid)]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    labels = list(ids) + ["mean"]
    body = []
    for i in range(k):
        for j in range(k):
            x, y = left + j * cell, top + i * cell
            body.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                        f'fill="{_color(grid[i, j], lo, hi)}" stroke="white"/>')
        body.append(f'<text x="{left - 4}" y="{top + i * cell + 15}" text-anchor="end">{_esc(labels[i])}</text>')
    for j in range(k):
        x = left + j * cell + 15
        y = top + k * cell + 6
        body.append(f'<text x="{x}" y="{y}" text-anchor="end" transform="rotate(-60 {x} {y})">'
                    f'{_esc(labels[j])}</text>')
    body.append(f'<line x1="{left}" y1="{top + (k - 1) * cell}" x2="{left + k * cell}" '
                f'y2="{top + (k - 1) * cell}" stroke="black"/>')
    body.append(f'<line x1="{left + (k - 1) * cell}" y1="{top}" x2="{left + (k - 1) * cell}" '
                f'y2="{top + k * cell}" stroke="black"/>')
    body.append(f'<text x="8" y="{height - 8}">range {lo:.3g} .. {hi:.3g} (rows: source, columns: destination)</text>')
    return _svg(body, title, width, height)


# -- bundle ----------------------------------------------------------------------------

@dataclass
class ReportBundle:
    out_dir: pathlib.Path
    files: dict[str, str] = field(default_factory=dict)  # name -> sha256

    def manifest(self) -> dict:
        return {"files": [{"name": k, "sha256": self.files[k]} for k in sorted(self.files)]}


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, names: Iterable[str]) -> ReportBundle:
    out_dir = pathlib.Path(out_dir)
    bundle = ReportBundle(out_dir, {n: sha256_file(out_dir / n) for n in names})
    with open(out_dir / MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(bundle.manifest(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return bundle


def _write_text(path: pathlib.Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def report(out_dir, dataset: Dataset, cv_ecdf_csv, error_ratio_csv, rho_ecdf_csv,
           mean_rho_csv) -> ReportBundle:
    """Collect the five figure tables into `out_dir`, render each, and
    write the manifest. The per-path mean heatmap is computed from
    `dataset`; the rest are read from earlier analysis outputs."""
    for p in (cv_ecdf_csv, error_ratio_csv, rho_ecdf_csv, mean_rho_csv):
        if not os.path.exists(p):
            raise ReportError(f"missing input file: {p}")
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []

    cx, cp = read_ecdf_csv(cv_ecdf_csv)
    _rewrite_ecdf(cx, cp, out / "cv_ecdf.csv", "cv")
    _write_text(out / "cv_ecdf.svg", ecdf_svg(cx, cp, "CV of per-second throughput", "CV"))
    names += ["cv_ecdf.csv", "cv_ecdf.svg"]

    keys, M = read_ratio_csv(error_ratio_csv)
    with open(out / "error_ratio.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst"] + [str(n) for n in range(1, M.shape[1] + 1)])
        for (s, d), row in zip(keys, M):
            w.writerow([s, d] + [_num(v) for v in row])
    _write_text(out / "error_ratio.svg", ratio_svg(M))
    names += ["error_ratio.csv", "error_ratio.svg"]

    ids, cells, rmean, cmean = path_mean_matrix(dataset, dataset.catalog)
    write_matrix_csv(ids, cells, rmean, cmean, out / "path_mean_heatmap.csv")
    _, grid = read_matrix_csv(out / "path_mean_heatmap.csv")
    _write_text(out / "path_mean_heatmap.svg", heatmap_svg(ids, grid, "Mean bandwidth per path (Mb/s)"))
    names += ["path_mean_heatmap.csv", "path_mean_heatmap.svg"]

    rx, rp = read_ecdf_csv(rho_ecdf_csv)
    _rewrite_ecdf(rx, rp, out / "rho_ecdf.csv", "rho")
    _write_text(out / "rho_ecdf.svg", ecdf_svg(rx, rp, "Pairwise correlation coefficients", "rho"))
    names += ["rho_ecdf.csv", "rho_ecdf.svg"]

    rids, rgrid = read_matrix_csv(mean_rho_csv)
    k = len(rids)
    write_matrix_csv(rids, rgrid[:k, :k], rgrid[:k, k], rgrid[k, :k], out / "mean_rho_matrix.csv", rgrid[k, k])
    _write_text(out / "mean_rho_matrix.svg", heatmap_svg(rids, rgrid, "Mean rho per path"))
    names += ["mean_rho_matrix.csv", "mean_rho_matrix.svg"]

    return write_manifest(out, names)


def _rewrite_ecdf(xs, ps, path, column) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([column, "probability"])
        for x, p in zip(xs, ps):
            w.writerow([_num(x), _num(p)])
