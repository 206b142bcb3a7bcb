"""Batch front-end.

Three commands, all driven by one YAML config:

* ``evaluate``  -- tabulate evolved correlation values over the configured
  (arity, time, point) grid for the requested solution routes (CSV).
* ``transform`` -- apply the correlation<->distribution transforms over the
  grid (CSV).
* ``verify``    -- run property suites, stream line-delimited JSON reports,
  print a summary table, and render a companion figure next to the report.

Exit status: 0 all good, 1 a property failed or an evaluation errored,
2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .config import RunConfig
from .errors import ConfigError, CorrdynError
from .hierarchy import (
    D_from_g,
    evolved_g1,
    g_from_D,
    scattering_cumulant_apply,
    solve_g,
    solve_g_chaos,
    solve_g_via_D,
)
from .verify import SUITES, run_suite

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig.default()
    return RunConfig.load(path)


def _open_out(path: str | None):
    if path is None:
        return sys.stdout, False
    return open(path, "w", encoding="utf-8", newline=""), True


def cmd_evaluate(config: RunConfig, out_path: str | None) -> int:
    ctx = config.build_context()
    initial = config.build_initial()
    g1 = config.build_g1() if ("chaos" in config.grid.routes or "scattering" in config.grid.routes) else None
    had_error = False
    rows: list[tuple] = []
    for n in config.grid.arities:
        cfg = config.sample_points(n)
        for t in config.grid.times:
            for route in config.grid.routes:
                if route == "scattering" and n < 2:
                    continue  # the scattering representation starts at n = 2
                try:
                    if route == "direct":
                        values = solve_g(t, n, initial, cfg, ctx)
                    elif route == "via_D":
                        values = solve_g_via_D(t, n, initial, cfg, ctx)
                    elif route == "chaos":
                        values = solve_g_chaos(t, n, g1, cfg, ctx)
                    else:
                        values = scattering_cumulant_apply(t, n, evolved_g1(g1, t, ctx), cfg, ctx)
                except CorrdynError as e:
                    had_error = True
                    for pid in range(cfg.batch_size):
                        rows.append((n, t, pid, route, f"error:{type(e).__name__}"))
                else:
                    for pid in range(cfg.batch_size):
                        rows.append((n, t, pid, route, repr(float(values[pid]))))
    fh, close = _open_out(out_path)
    try:
        writer = csv.writer(fh)
        writer.writerow(["n", "t", "point_id", "route", "value"])
        writer.writerows(rows)
    finally:
        if close:
            fh.close()
    return EXIT_FAILURE if had_error else EXIT_OK


def cmd_transform(config: RunConfig, direction: str, out_path: str | None) -> int:
    max_arity = max(config.grid.arities)
    if direction == "g_to_D":
        seq = config.build_initial()

        def transform(n, cfg):
            return D_from_g(seq, n, cfg)

    else:
        dens = config.build_distributions(max_arity)

        def transform(n, cfg):
            return g_from_D(dens, n, cfg)

    had_error = False
    rows: list[tuple] = []
    for n in config.grid.arities:
        cfg = config.sample_points(n)
        try:
            values = transform(n, cfg)
        except CorrdynError as e:
            had_error = True
            for pid in range(cfg.batch_size):
                rows.append((n, pid, direction, f"error:{type(e).__name__}"))
        else:
            for pid in range(cfg.batch_size):
                rows.append((n, pid, direction, repr(float(values[pid]))))
    fh, close = _open_out(out_path)
    try:
        writer = csv.writer(fh)
        writer.writerow(["n", "point_id", "direction", "value"])
        writer.writerows(rows)
    finally:
        if close:
            fh.close()
    return EXIT_FAILURE if had_error else EXIT_OK


def cmd_verify(config: RunConfig, suite: str, report_path: str | None, figures: bool) -> int:
    reports = run_suite(suite, config)
    records = [json.dumps(r.to_record(), sort_keys=True) for r in reports]
    if report_path is not None:
        with open(report_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(records) + "\n")
        summary_stream = sys.stdout
    else:
        sys.stdout.write("\n".join(records) + "\n")
        summary_stream = sys.stderr
    n_pass = sum(1 for r in reports if r.passed)
    print(f"{'report':<44} {'observed':>12} {'target':>12}  status", file=summary_stream)
    for r in reports:
        tag = ", ".join(f"{k}={v}" for k, v in r.params.items() if k in ("n", "t", "t1", "t2"))
        name = f"{r.name} [{tag}]" if tag else r.name
        target = "-" if r.target is None else f"{r.target:.3e}"
        status = "PASS" if r.passed else "FAIL"
        print(f"{name:<44} {r.observed:>12.3e} {target:>12}  {status}", file=summary_stream)
    print(f"{n_pass}/{len(reports)} reports passed", file=summary_stream)
    if report_path is not None and figures:
        from .figures import render_report_figure

        render_report_figure(reports, Path(report_path).with_suffix(".png"))
    return EXIT_OK if n_pass == len(reports) else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corrdyn",
        description="Evaluate, transform, and verify cluster-cumulant correlation dynamics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("evaluate", help="tabulate evolved correlation values (CSV)")
    pe.add_argument("--config", help="YAML run configuration (default: built-in)")
    pe.add_argument("--out", help="output CSV path (default: stdout)")

    pt = sub.add_parser("transform", help="correlation<->distribution transforms (CSV)")
    pt.add_argument("--config", help="YAML run configuration (default: built-in)")
    pt.add_argument("--direction", required=True, choices=("g_to_D", "D_to_g"))
    pt.add_argument("--out", help="output CSV path (default: stdout)")

    pv = sub.add_parser("verify", help="run property suites and emit reports (JSONL)")
    pv.add_argument("--config", help="YAML run configuration (default: built-in)")
    pv.add_argument("--suite", default="all", choices=SUITES + ("all",))
    pv.add_argument("--report", help="report JSONL path (default: stdout)")
    pv.add_argument(
        "--no-figures",
        action="store_true",
        help="skip rendering the summary figure next to the report file",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"cannot read config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "evaluate":
            return cmd_evaluate(config, args.out)
        if args.command == "transform":
            return cmd_transform(config, args.direction, args.out)
        return cmd_verify(config, args.suite, args.report, figures=not args.no_figures)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
