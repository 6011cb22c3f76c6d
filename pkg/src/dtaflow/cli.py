"""Command-line front end: load replays (dnl), equilibrium solves (due),
path-set generation (paths) and post-hoc reporting (report).

Exit codes: 0 success, 1 usage, 2 parse, 3 validation, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from typing import List, Optional

import numpy as np

from . import fileio
from .delays import PenaltyParams
from .dnl import DNLError, run_dnl
from .fileio import ParseError
from .network import NetworkError, TimeGrid, validate_network
from .solver import SolverConfig, solve_due

EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_RUNTIME = 4

logger = logging.getLogger("dtaflow")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _setup_logging():
    level = os.environ.get("DTAFLOW_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def _build_parser() -> _Parser:
    p = _Parser(prog="dtaflow",
                description="Dynamic network loading and user-equilibrium solver")
    sub = p.add_subparsers(dest="command", required=True)

    def add_grid(sp):
        sp.add_argument("--dt", type=float, required=True,
                        help="time step (seconds)")
        sp.add_argument("--horizon", type=float, required=True,
                        help="horizon length tf - t0 (seconds)")
        sp.add_argument("--t0", type=float, default=0.0,
                        help="horizon start (seconds, default 0)")

    def add_common(sp):
        sp.add_argument("--network", required=True, help="network data file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker cap (loading currently runs serially)")

    sp = sub.add_parser("dnl", help="replay a fixed departure profile")
    add_common(sp)
    sp.add_argument("--paths", required=True, help="path data file")
    sp.add_argument("--departures", required=True,
                    help="|P| x N departure-rate matrix (CSV)")
    sp.add_argument("--demand", required=True,
                    help="demand file (for O-D/path association)")
    add_grid(sp)

    sp = sub.add_parser("due", help="solve for a dynamic user equilibrium")
    add_common(sp)
    sp.add_argument("--paths", help="path data file")
    sp.add_argument("--auto-paths", type=int, metavar="K",
                    help="generate up to K shortest paths per O-D instead")
    sp.add_argument("--demand", required=True, help="O-D demand file")
    add_grid(sp)
    sp.add_argument("--alpha", type=float, required=True, help="step size > 0")
    sp.add_argument("--epsilon", type=float, default=1e-4,
                    help="relative-gap threshold")
    sp.add_argument("--max-iters", type=int, default=100)
    sp.add_argument("--br-tolerance", type=float, default=0.0,
                    help="bounded-rationality indifference band (seconds)")
    sp.add_argument("--early-weight", type=float, default=0.5)
    sp.add_argument("--late-weight", type=float, default=2.0)
    sp.add_argument("--init-window", type=str, default=None,
                    metavar="LO:HI", help="initial departure window (seconds)")

    sp = sub.add_parser("paths", help="enumerate k shortest paths per O-D")
    sp.add_argument("--network", required=True)
    sp.add_argument("--demand", required=True)
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--out", required=True, help="output paths file")

    sp = sub.add_parser("report", help="summarize a completed run directory")
    sp.add_argument("--in", dest="run_dir", required=True)
    sp.add_argument("--paths", dest="selected", default=None,
                    help="comma-separated path ids for curve extraction")
    return p


def _load_bundle(args, need_paths=True):
    nodes, links = fileio.load_network(args.network)
    od_pairs = fileio.load_demand(args.demand)
    if need_paths:
        if getattr(args, "auto_paths", None):
            paths = fileio.enumerate_paths(nodes, links, od_pairs, args.auto_paths)
        elif args.paths:
            paths = fileio.load_paths(args.paths)
        else:
            raise SystemExit(_usage_error("one of --paths or --auto-paths required"))
    else:
        paths = []
    return validate_network(nodes, links, paths, od_pairs)


def _usage_error(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_USAGE


def _make_grid(args) -> TimeGrid:
    return TimeGrid(args.t0, args.t0 + args.horizon, args.dt)


def _warn_dt(net, grid):
    if grid.dt_s > net.min_free_flow_time_s:
        print(
            f"warning: time step {grid.dt_s} s exceeds the minimum link "
            f"free-flow time {net.min_free_flow_time_s:.3g} s", file=sys.stderr,
        )


def cmd_dnl(args) -> int:
    net = _load_bundle(args)
    grid = _make_grid(args)
    _warn_dt(net, grid)
    h = fileio.load_departures(args.departures, tuple(net.paths), grid.n_steps)
    result = run_dnl(net, h, grid)
    fileio.write_dnl_results(result, args.out)
    print(f"dnl complete: {len(net.paths)} paths, {grid.n_steps} steps, "
          f"outputs in {args.out}")
    return 0


def cmd_due(args) -> int:
    if args.alpha <= 0:
        return _usage_error("--alpha must be positive")
    net = _load_bundle(args)
    grid = _make_grid(args)
    _warn_dt(net, grid)
    window = None
    if args.init_window:
        try:
            lo, hi = (float(x) for x in args.init_window.split(":"))
        except ValueError:
            return _usage_error("--init-window must look like LO:HI")
        window = (lo, hi)
    config = SolverConfig(
        alpha=args.alpha,
        epsilon=args.epsilon,
        max_iters=args.max_iters,
        br_tolerance=args.br_tolerance,
        penalty=PenaltyParams(args.early_weight, args.late_weight),
        initial_window_s=window,
    )
    report = solve_due(net, grid, config)
    for i, g in enumerate(report.relative_gap_history, start=1):
        print(f"iter {i:4d}  log10(relative gap) = "
              f"{math.log10(g) if g > 0 else float('-inf'):8.3f}")
    fileio.write_due_results(report, report.final_dnl, args.out)
    status = "CONVERGED" if report.converged else "NOT-CONVERGED"
    print(f"{status} after {report.iterations_used} iterations; "
          f"max O-D gap {max(report.od_gaps.values()) if report.od_gaps else 0:.3g} s; "
          f"outputs in {args.out}")
    return 0


def cmd_paths(args) -> int:
    nodes, links = fileio.load_network(args.network)
    od_pairs = fileio.load_demand(args.demand)
    paths = fileio.enumerate_paths(nodes, links, od_pairs, args.k)
    fileio.write_paths(paths, args.out)
    print(f"wrote {len(paths)} paths to {args.out}")
    return 0


def cmd_report(args) -> int:
    run_dir = args.run_dir
    gaps_file = os.path.join(run_dir, "od_gaps.csv")
    if not os.path.isdir(run_dir) or not os.path.exists(gaps_file):
        print(f"error: {run_dir} is not a completed DUE run directory",
              file=sys.stderr)
        return EXIT_PARSE
    with open(gaps_file) as fh:
        rows = list(csv.reader(fh))[1:]
    gaps = np.array([float(r[2]) for r in rows]) if rows else np.zeros(0)
    pct = {
        "min": float(gaps.min()) if gaps.size else 0.0,
        "p25": float(np.percentile(gaps, 25)) if gaps.size else 0.0,
        "p50": float(np.percentile(gaps, 50)) if gaps.size else 0.0,
        "p75": float(np.percentile(gaps, 75)) if gaps.size else 0.0,
        "max": float(gaps.max()) if gaps.size else 0.0,
    }
    out = os.path.join(run_dir, "gap_percentiles.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["statistic", "gap_s"])
        for k, v in pct.items():
            w.writerow([k, repr(v)])
    print("O-D gap percentiles (s): " +
          ", ".join(f"{k}={v:.4g}" for k, v in pct.items()))

    if args.selected:
        wanted = [p.strip() for p in args.selected.split(",") if p.strip()]
        for name in ("h_final.csv", "eff_delay.csv"):
            src = os.path.join(run_dir, name)
            if not os.path.exists(src):
                continue
            with open(src) as fh:
                rows = list(csv.reader(fh))
            header, body = rows[0], {r[0]: r for r in rows[1:]}
            for pid in wanted:
                if pid not in body:
                    print(f"error: path {pid} not present in {name}",
                          file=sys.stderr)
                    return EXIT_PARSE
                dst = os.path.join(run_dir, f"curve_{pid}_{name}")
                with open(dst, "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(header)
                    w.writerow(body[pid])
        print(f"wrote curve files for {len(wanted)} paths")
    return 0


_COMMANDS = {"dnl": cmd_dnl, "due": cmd_due, "paths": cmd_paths,
             "report": cmd_report}


def main(argv: Optional[List[str]] = None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        return _usage_error("--threads must be >= 1")
    try:
        return _COMMANDS[args.command](args)
    except SystemExit as e:
        return int(e.code or 0)
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except NetworkError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DNLError, RuntimeError, ValueError, OSError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
