"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
Randomized subcommands default to seed 7.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import pathlib
import sys
from typing import Sequence

from . import __version__

DEFAULT_SEED = 7
EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

log = logging.getLogger("cloudbench.cli")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# -- helpers ---------------------------------------------------------------------------

def _catalog(args):
    from .core_model import catalog_load, reference_catalog

    return catalog_load(args.catalog) if getattr(args, "catalog", None) else reference_catalog()


def _load(args):
    from .core_model import dataset_load

    return dataset_load(args.inp, _catalog(args))


def _out_dir(path) -> pathlib.Path:
    p = pathlib.Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _fmt(x) -> str:
    return "" if x is None else f"{float(x):.6g}"


def _references(pairs: Sequence[str] | None) -> dict:
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--reference expects factor=level, got {item!r}")
        out[key] = int(value) if key == "time_level" else value
    return out


# -- subcommands -------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .core_model import Dataset, dataset_store
    from .simulate import PRESETS, generate, load_scenario, field_cv_targets, per_second_corpus

    if args.scenario:
        spec = load_scenario(args.scenario)
        if args.seed is not None:
            spec.rng_seed = args.seed
    else:
        spec = PRESETS[args.preset](seed=DEFAULT_SEED if args.seed is None else args.seed)
    out = pathlib.Path(args.out)
    truth_path = pathlib.Path(args.truth) if args.truth else out.with_name("truth.json")
    if args.per_second:
        samples = per_second_corpus(spec, duration_s=args.per_second)
        ds = Dataset(spec.catalog)
        for s in samples:
            ds.append(s)
        cvs = field_cv_targets(len(samples), spec.rng_seed)
        truth = {"per_second": True, "duration_s": args.per_second,
                 "cv_targets": [round(float(c), 6) for c in cvs]}
    else:
        gen = generate(spec, weeks=args.weeks, samples_per_hour=args.samples_per_hour, days=args.days)
        ds, truth = gen.dataset, gen.truth
    dataset_store(ds, out)
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump({"scenario": spec.to_json(), **truth}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(ds)} samples to {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .calibrate import cv_distribution, error_ratio_curve, recommend_duration
    from .report import write_ecdf_csv, write_ratio_csv

    ds = _load(args)
    samples = [s for s in ds.samples if s.per_second_mbps is not None]
    if not samples:
        raise ValueError(f"{args.inp}: no samples carry per-second data")
    out = _out_dir(args.out_dir)
    write_ecdf_csv(cv_distribution(samples), out / "cv_ecdf.csv", "cv")
    curves = [error_ratio_curve(s, args.window) for s in samples]
    write_ratio_csv(curves, out / "error_ratio.csv")
    rec = recommend_duration(curves, args.threshold, args.quantile)
    if rec.achievable:
        print(f"recommended duration: {rec.seconds} s "
              f"({rec.best_fraction:.1%} of {len(curves)} samples within {args.threshold} from there on)")
    else:
        print(f"no duration under {args.window} s meets threshold {args.threshold} for {args.quantile:.0%} "
              f"of samples; best {rec.best_n} s at {rec.best_fraction:.1%}")
    return EXIT_OK


def cmd_decompose(args) -> int:
    from .decompose import decompose_dataset

    ds = _load(args)
    results = decompose_dataset(ds.series())
    fh = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for r in results:
            fh.write(json.dumps(r.to_record(), sort_keys=True) + "\n")
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def _write_anova(fit, out: pathlib.Path) -> None:
    with open(out / "anova_table.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term", "ss", "pct_total", "pct_factors", "df", "ms", "F", "p"])
        for r in fit.table.rows:
            w.writerow([r.term, _fmt(r.ss), _fmt(r.pct_total), _fmt(r.pct_factors), r.df,
                        _fmt(r.ms), _fmt(r.F), _fmt(r.p_display)])
    with open(out / "parameters.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term", "level", "estimate"])
        w.writerow(["Intercept", "", _fmt(fit.estimates.intercept)])
        for term, levels, value in fit.estimates.items():
            w.writerow([term, "*".join(str(v) for v in levels), _fmt(value)])


def cmd_anova(args) -> int:
    from .anova import (bandwidth_levels, bandwidth_model, correlation_levels, correlation_model,
                        fit_sequential, with_reference)

    catalog = _catalog(args)
    refs = _references(args.reference)
    if args.model == "bandwidth":
        ds = _load(args)
        rows = ds.rows()
        spec, levels = bandwidth_model(), bandwidth_levels(catalog)
    else:
        rows = read_triples_csv(args.inp)
        spec, levels = correlation_model(), correlation_levels(catalog)
    fit = fit_sequential(rows, spec, with_reference(levels, refs))
    out = _out_dir(args.out_dir)
    _write_anova(fit, out)
    r2 = fit.table.adjusted_r2
    print(f"{args.model}: n={fit.table.n}, adjusted R2={'undefined' if r2 is None else f'{r2:.4f}'}")
    return EXIT_OK


TRIPLE_FIELDS = ("s", "d1", "d2", "rho", "area_s", "csp_s", "dc_s", "area_d1", "csp_d1", "dc_d1",
                 "area_d2", "csp_d2", "dc_d2")


def read_triples_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no triples")
    missing = set(TRIPLE_FIELDS) - set(rows[0])
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    for r in rows:
        r["rho"] = float(r["rho"])
    return rows


def cmd_correlate(args) -> int:
    from .correlation import all_pair_rhos, build_triples, mean_rho_matrix
    from .report import write_ecdf_csv, write_mean_rho_csv

    ds = _load(args)
    res = all_pair_rhos(ds, args.min_overlap, args.tolerance)
    if not res.pairs:
        raise ValueError("no path pair has enough overlapping samples")
    out = _out_dir(args.out_dir)
    with open(out / "pair_rho.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src_a", "dst_a", "src_b", "dst_b", "rho", "overlap"])
        for p in res.pairs:
            w.writerow([p.path_a.src, p.path_a.dst, p.path_b.src, p.path_b.dst, f"{p.rho:.6f}", p.overlap])
    write_ecdf_csv(res.ecdf(doubled=True), out / "rho_ecdf.csv", "rho")
    write_mean_rho_csv(mean_rho_matrix(res, ds.catalog), out / "mean_rho_matrix.csv")
    triples = build_triples(res, ds.catalog)
    with open(out / "triples.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIPLE_FIELDS)
        for t in triples.records:
            w.writerow([f"{t.rho:.6f}" if f == "rho" else getattr(t, f) for f in TRIPLE_FIELDS])
    print(f"{res.count()} pairs ({res.count(doubled=True)} doubled), {len(res.skipped)} skipped, "
          f"{len(triples.records)} triples")
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import report

    ds = _load(args)
    cal, cor = pathlib.Path(args.calibrate_dir), pathlib.Path(args.correlate_dir)
    bundle = report(args.out_dir, ds, cal / "cv_ecdf.csv", cal / "error_ratio.csv",
                    cor / "rho_ecdf.csv", cor / "mean_rho_matrix.csv")
    print(f"wrote {len(bundle.files)} files and manifest.json to {bundle.out_dir}")
    return EXIT_OK


def cmd_probe_run(args) -> int:
    from .core_model import DatasetWriter
    from .probe import CommandRunner, ProbeConfig, SimulatedRunner, run_campaign
    from .simulate import load_scenario

    catalog = _catalog(args)
    config = ProbeConfig.load(args.config)
    if args.ticks is not None:
        config.ticks = args.ticks
    if args.simulated:
        scenario = load_scenario(args.simulated)
        runner = SimulatedRunner(scenario)
    else:
        runner = CommandRunner(config)
    with DatasetWriter(args.out, catalog) as sink:
        rep = run_campaign(config, runner, sink, catalog)
    print(f"{rep.samples_written} samples written, {sum(rep.failures.values())} failures, "
          f"{len(rep.unreachable)} unreachable endpoints")
    return EXIT_OK


def cmd_lilliefors_table(args) -> int:
    from .stats import build_lilliefors_table, write_lilliefors_table

    ns = [int(x) for x in args.ns.split(",")] if args.ns else list(range(30, 101)) + list(range(110, 1001, 10))
    table = build_lilliefors_table(ns, args.reps, args.seed)
    write_lilliefors_table(table, args.out)
    print(f"wrote {len(table)} rows to {args.out}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cloudbench", description="Inter-datacenter bandwidth measurement and analysis.")
    p.add_argument("--version", action="version", version=f"cloudbench {__version__}")
    p.add_argument("--catalog", help="catalog CSV (default: bundled 18 data-center catalog)")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--preset", choices=["table3", "excursions", "table5", "null"], default="table3")
    g.add_argument("--scenario", help="ScenarioSpec JSON file")
    s.add_argument("--weeks", type=int, default=3)
    s.add_argument("--days", type=int, help="campaign length in days (overrides --weeks)")
    s.add_argument("--samples-per-hour", type=float, default=1.0)
    s.add_argument("--per-second", type=int, metavar="SECONDS",
                   help="emit one per-second sample of this length per path instead")
    s.add_argument("--seed", type=int, help=f"RNG seed (default {DEFAULT_SEED}, or the scenario's)")
    s.add_argument("--out", required=True)
    s.add_argument("--truth", help="planted-truth JSON (default: truth.json next to --out)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("calibrate", help="CV distribution and measurement-duration recommendation")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out-dir", default=".")
    s.add_argument("--threshold", type=float, default=0.1)
    s.add_argument("--quantile", type=float, default=0.95)
    s.add_argument("--window", type=int, default=900)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("decompose", help="Gaussian bulk and excursions per path (JSON lines)")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", help="output file (default stdout)")
    s.set_defaults(func=cmd_decompose)

    s = sub.add_parser("anova", help="sequential ANOVA of the bandwidth or correlation model")
    s.add_argument("model", choices=["bandwidth", "correlation"])
    s.add_argument("--in", dest="inp", required=True, help="dataset (bandwidth) or triples.csv (correlation)")
    s.add_argument("--out-dir", default=".")
    s.add_argument("--reference", action="append", metavar="FACTOR=LEVEL",
                   help="reference level for a factor (default: last level in catalog order)")
    s.set_defaults(func=cmd_anova)

    s = sub.add_parser("correlate", help="pairwise path correlations and triples")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out-dir", default=".")
    s.add_argument("--min-overlap", type=int, default=100)
    s.add_argument("--tolerance", type=int, default=300, help="alignment tolerance in seconds")
    s.set_defaults(func=cmd_correlate)

    s = sub.add_parser("report", help="figure tables, SVGs and manifest")
    s.add_argument("--in", dest="inp", required=True, help="dataset for the per-path mean heatmap")
    s.add_argument("--calibrate-dir", required=True)
    s.add_argument("--correlate-dir", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("probe", help="measurement campaigns")
    psub = s.add_subparsers(dest="probe_command", parser_class=_Parser)
    r = psub.add_parser("run", help="run a campaign")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--simulated", metavar="SCENARIO", help="draw measurements from a scenario file")
    r.add_argument("--ticks", type=int)
    r.set_defaults(func=cmd_probe_run)

    s = sub.add_parser("lilliefors-table", help="regenerate the Lilliefors critical-value table")
    s.add_argument("--out", required=True)
    s.add_argument("--reps", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=20150805)
    s.add_argument("--ns", help="comma-separated sample sizes")
    s.set_defaults(func=cmd_lilliefors_table)

    # --catalog is accepted before or after the subcommand
    for sp in [*sub.choices.values(), *psub.choices.values()]:
        if sp.prog.endswith(" probe") or sp.prog.endswith("lilliefors-table"):
            continue
        sp.add_argument("--catalog", default=argparse.SUPPRESS, help="catalog CSV")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    from .probe import configure_logging

    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            raise UsageError(parser.format_help())
        return args.func(args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"cloudbench: error: {msg}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:
        from .probe import ProbeError

        if isinstance(exc, ProbeError):
            print(f"cloudbench: error: {exc}", file=sys.stderr)
            return EXIT_DATA
        raise


if __name__ == "__main__":
    sys.exit(main())
