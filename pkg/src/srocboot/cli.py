"""Command-line interface: ``srocboot {fit,auc-ci,compare,influence,simulate,plot}``.

Exit codes:
    0  success
    2  usage error (unknown flag, conflicting options, missing group)
    3  input data error (parse failure, too few studies)
    4  REML convergence failure
    5  bootstrap failure budget exceeded
    6  file system error
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import datasets
from .bootstrap import (BootstrapConfig, Variant, bootstrap_auc_ci, bootstrap_compare_auc)
from .data import Dataset, read_dataset, to_outcomes
from .errors import BudgetExceededError, ConvergenceError, DataError, SrocUndefinedError
from .influence import flag_influential, leave_one_out_table
from .reml import fit_reml, wald_compare_summary
from .report import (ACCURACY_COLUMNS, COMPARE_COLUMNS, INFLUENCE_COLUMNS, Report, format_table, influence_rows,
                     statistics_csv, accuracy_row, to_json, write_reports)
from .simulate import append_ledger, coverage_study, default_scenario, parse_scenario
from .sroc import auc_of_fit, hsroc_params, sample_curve
from .svg import PlotSeries, render_sroc_svg

log = logging.getLogger("srocboot")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONVERGENCE, EXIT_BUDGET, EXIT_IO = 0, 2, 3, 4, 5, 6


class UsageError(Exception):
    pass


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected lo,hi") from None
    if not 0.0 <= lo < hi <= 1.0:
        raise argparse.ArgumentTypeError("range must satisfy 0 <= lo < hi <= 1")
    return lo, hi


def _formats(text: str) -> list[str]:
    fmts = [f.strip().lower() for f in text.split(",") if f.strip()]
    bad = [f for f in fmts if f not in ("json", "csv", "svg")]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown format(s): {', '.join(bad)}")
    return fmts


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, help="output directory for report files")
    common.add_argument("--format", type=_formats, default=None, help="comma list of json,csv,svg")
    common.add_argument("--no-timestamp", action="store_true", help="omit generated_at from JSON")
    common.add_argument("--stdout", action="store_true", help="write the JSON result to stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--input", required=True, help="CSV file (study,TP,FP,FN,TN[,test])")
    data.add_argument("--correction", choices=["affected", "all", "none"], default="affected")
    data.add_argument("--range", type=_range, default=(0.0, 1.0), help="FPR range lo,hi for the AUC")
    data.add_argument("--level", type=float, default=0.95)

    boot = argparse.ArgumentParser(add_help=False)
    boot.add_argument("--b", type=int, default=2000, help="bootstrap replicates")
    boot.add_argument("--seed", type=int, default=2020)
    boot.add_argument("--variant", choices=[v.value for v in Variant], default="normal")
    boot.add_argument("--threads", type=int, default=None, help="worker threads (default: $SROCBOOT_THREADS or 1)")
    boot.add_argument("--max-failure-fraction", type=float, default=0.05)
    boot.add_argument("--dump-statistics", action="store_true", help="also write raw replicate statistics CSV")

    p = argparse.ArgumentParser(prog="srocboot", description="Bivariate REML meta-analysis of diagnostic "
                                "accuracy with parametric-bootstrap inference for the SROC AUC.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("fit", parents=[common, data], help="summary sensitivity, FPR, SDs and AUC")
    s.add_argument("--group", help="test group(s), comma separated")
    s = sub.add_parser("auc-ci", parents=[common, data, boot], help="bootstrap CI of the AUC")
    s.add_argument("--group", help="test group(s), comma separated")
    s = sub.add_parser("compare", parents=[common, data, boot], help="bootstrap test of an AUC difference")
    s.add_argument("--groups", required=True, help="exactly two test groups, e.g. CT,LAG")
    s = sub.add_parser("influence", parents=[common, data, boot], help="leave-one-out AUC influence table")
    s.add_argument("--group", help="single test group")
    s = sub.add_parser("plot", parents=[common, data], help="SVG of SROC curves")
    s.add_argument("--group", help="test group(s), comma separated")
    s.add_argument("--exclude", help="also overlay the fit without this study label")
    s.add_argument("--title", default="")
    s = sub.add_parser("simulate", parents=[common], help="coverage study on synthetic data")
    s.add_argument("--scenario", type=Path, help="key = value scenario file (default built-in scenario)")
    s.add_argument("--replications", type=int)
    s.add_argument("--ledger", type=Path, help="CSV results ledger to append to")
    return p


def _load(args) -> Dataset:
    path = Path(args.input)
    if not path.exists():
        bundled = datasets.find(path.name)
        if bundled is None:
            raise FileNotFoundError(f"input file {args.input} not found")
        path = bundled
    return read_dataset(path)


def _groups(d: Dataset, spec: str | None) -> list[tuple[str, Dataset]]:
    if spec:
        names = [g.strip() for g in spec.split(",") if g.strip()]
        missing = [g for g in names if g not in d.groups()]
        if missing:
            raise UsageError(f"test group(s) not in data: {', '.join(missing)} (available: {', '.join(d.groups()) or 'none'})")
        return [(g, d.select(g)) for g in names]
    if d.groups():
        return [(g, d.select(g)) for g in d.groups()]
    return [(d.name or "all", d)]


def _config(args) -> BootstrapConfig:
    return BootstrapConfig(b=args.b, seed=args.seed, variant=Variant(args.variant), level=args.level,
                           max_failure_fraction=args.max_failure_fraction, threads=args.threads,
                           fpr_range=args.range)


def _common_payload(args) -> dict:
    out = {"command": args.command}
    for k in ("input", "correction", "level", "seed", "b", "variant"):
        if hasattr(args, k):
            out[k] = getattr(args, k)
    if hasattr(args, "range"):
        out["fpr_range"] = list(args.range)
    return out


def cmd_fit(args) -> Report:
    d = _load(args)
    rows, fits = [], {}
    for name, sub in _groups(d, args.group):
        fit = fit_reml(to_outcomes(sub, args.correction))
        rows.append(accuracy_row(name, fit, args.level, auc_of_fit(fit, args.range)))
        fits[name] = fit.to_dict()
    payload = _common_payload(args) | {"table": rows, "fits": fits}
    return Report("fit", payload, {"fit": (ACCURACY_COLUMNS, rows)})


def cmd_auc_ci(args) -> Report:
    d = _load(args)
    config = _config(args)
    rows, runs, tables = [], {}, {}
    for name, sub in _groups(d, args.group):
        out = to_outcomes(sub, args.correction)
        fit = fit_reml(out)
        run = bootstrap_auc_ci(out, config, fit=fit)
        rows.append(accuracy_row(name, fit, args.level, run.point, run.interval))
        runs[name] = {"fit": fit.to_dict(), "bootstrap": run.to_dict()}
        if args.dump_statistics:
            tables[f"auc_ci_statistics_{name}"] = statistics_csv(run.statistics)
    tables = {"auc_ci": (ACCURACY_COLUMNS, rows)} | tables
    payload = _common_payload(args) | {"table": rows, "runs": runs}
    return Report("auc_ci", payload, tables)


def cmd_compare(args) -> Report:
    d = _load(args)
    names = [g.strip() for g in args.groups.split(",") if g.strip()]
    if len(names) != 2 or names[0] == names[1]:
        raise UsageError("compare requires exactly two distinct groups, e.g. --groups CT,LAG")
    (n1, d1), (n2, d2) = _groups(d, ",".join(names))
    o1, o2 = to_outcomes(d1, args.correction), to_outcomes(d2, args.correction)
    res = bootstrap_compare_auc(o1, o2, _config(args))
    wald = wald_compare_summary(fit_reml(o1), fit_reml(o2))
    row = {"comparison": f"{n1} vs. {n2}", "dauc": res.dauc, "dauc_lo": res.interval[0],
           "dauc_hi": res.interval[1], "p_value": res.p_value, "auc1": res.auc1, "auc2": res.auc2,
           "z_sens": wald.z_sens, "p_sens": wald.p_sens, "z_fpr": wald.z_fpr, "p_fpr": wald.p_fpr}
    tables = {"compare": (COMPARE_COLUMNS, [row])}
    if args.dump_statistics:
        tables["compare_statistics"] = statistics_csv(res.run.statistics)
    payload = _common_payload(args) | {"table": [row], "result": res.to_dict()}
    return Report("compare", payload, tables)


def cmd_influence(args) -> Report:
    d = _load(args)
    groups = _groups(d, args.group)
    if len(groups) != 1:
        raise UsageError("influence works on one test group; pass --group")
    name, sub = groups[0]
    table = leave_one_out_table(to_outcomes(sub, args.correction), _config(args))
    rows = influence_rows(table)
    flagged = [{"study": f.row.label, "index": f.row.index, "direction": f.direction}
               for f in flag_influential(table.rows)]
    tables = {"influence": (INFLUENCE_COLUMNS, rows)}
    if args.dump_statistics:
        cols = ["replicate", "full_auc"] + list(table.distribution.labels)
        dist = table.distribution
        tables["influence_statistics"] = (cols, [
            {"replicate": b + 1, "full_auc": float(dist.full_auc[b]),
             **{lab: float(dist.deltas[b, i]) for i, lab in enumerate(dist.labels)}}
            for b in range(dist.deltas.shape[0])])
    payload = _common_payload(args) | {"group": name, "full_auc": table.full_auc, "table": rows,
                                       "flagged": flagged, "result": table.to_dict()}
    return Report("influence", payload, tables)


def cmd_plot(args) -> Report:
    d = _load(args)
    series = []
    rows = []
    for name, sub in _groups(d, args.group):
        out = to_outcomes(sub, args.correction)
        fit = fit_reml(out)
        series.append(PlotSeries(name, fit, out))
        rows.append(accuracy_row(name, fit, args.level, auc_of_fit(fit, args.range)))
        if args.exclude:
            if args.exclude not in out.labels:
                raise UsageError(f"study {args.exclude!r} not found in group {name}")
            loo = out.drop(out.labels.index(args.exclude))
            lfit = fit_reml(loo)
            series.append(PlotSeries(f"{name} without {args.exclude}", lfit, loo,
                                     color=None, dashed=True))
            rows.append(accuracy_row(f"{name} without {args.exclude}", lfit, args.level, auc_of_fit(lfit, args.range)))
    svg = render_sroc_svg(series, title=args.title, level=args.level)
    curve_rows = [{"series": s.name, "fpr": float(x), "sensitivity": float(y)}
                  for s in series for x, y in sample_curve(hsroc_params(s.fit))]
    payload = _common_payload(args) | {"table": rows}
    return Report("sroc", payload, {"sroc_fit": (ACCURACY_COLUMNS, rows),
                                    "sroc_curve": (["series", "fpr", "sensitivity"], curve_rows)}, svg=svg)


def cmd_simulate(args) -> Report:
    scenario = parse_scenario(args.scenario.read_text(encoding="utf-8")) if args.scenario else default_scenario()
    if args.replications:
        scenario = replace(scenario, replications=args.replications)

    def progress(done, total):
        if done % max(1, total // 20) == 0:
            log.info("replication %d/%d", done, total)

    result = coverage_study(scenario, progress=progress)
    if args.ledger:
        append_ledger(args.ledger, result)
    d = result.to_dict()
    row = {"scenario_hash": d["scenario_hash"], "replications": d["replications"], "completed": d["completed"],
           "true_auc": d["true_auc"], "coverage": d["coverage"], "coverage_se": d["coverage_se"],
           "mean_width": d["mean_width"], **{f"bias_{k}": v for k, v in d["bias"].items()}}
    cols = list(row)
    return Report("simulate", {"command": "simulate", "table": [row], "result": d}, {"simulate": (cols, [row])})


COMMANDS = {"fit": cmd_fit, "auc-ci": cmd_auc_ci, "compare": cmd_compare, "influence": cmd_influence,
            "plot": cmd_plot, "simulate": cmd_simulate}
DEFAULT_FORMATS = {"plot": ["svg", "json", "csv"]}
# machine-oriented tables written to CSV but not echoed to the terminal
RAW_TABLES = {"sroc_curve"}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if hasattr(args, "level") and not 0.0 < args.level < 1.0:
        print("error: --level must be in (0, 1)", file=sys.stderr)
        return EXIT_USAGE
    try:
        report = COMMANDS[args.command](args)
        if args.out is not None:
            formats = args.format or DEFAULT_FORMATS.get(args.command, ["json", "csv"])
            for path in write_reports(report, formats, args.out, timestamp=not args.no_timestamp):
                log.info("wrote %s", path)
        elif args.format:
            raise UsageError("--format needs --out")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # DataError, SrocUndefinedError and config validation all land here
        if isinstance(exc, (DataError, SrocUndefinedError)):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except BudgetExceededError as exc:
        print(f"bootstrap failure budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except OSError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_IO

    if args.stdout:
        sys.stdout.write(to_json(report.payload, timestamp=not args.no_timestamp))
    else:
        for stem, (cols, rows) in report.tables.items():
            if stem in RAW_TABLES or "statistics" in stem:
                continue
            sys.stdout.write(format_table(cols, rows))
        if args.command == "influence" and report.payload.get("flagged"):
            names = ", ".join(f["study"] for f in report.payload["flagged"])
            sys.stdout.write(f"influential: {names}\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
