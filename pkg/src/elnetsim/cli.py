"""Command line front-end: ``elnetsim run|certify|rates|validate``.

Exit codes: 0 when everything passes, 1 on a certification failure, 2 on
usage, input or I/O errors.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import analysis
from .integrate import SimulationDiverged
from .scenario import ScenarioError, build_loop, load_scenario, read_csv, run_scenario, write_report

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _run_one(path, out):
    """Run a single scenario file; returns (exit code, message). Runs in a worker."""
    try:
        scenario = load_scenario(path)
        _, report = run_scenario(scenario, out)
    except (OSError, ScenarioError) as exc:
        return EXIT_USAGE, f"{path}: {exc}"
    except (SimulationDiverged, ValueError) as exc:
        return EXIT_FAIL, f"{path}: {exc}"
    return (EXIT_OK if report.ok else EXIT_FAIL), f"{path}:\n{report.summary()}"


def cmd_run(args) -> int:
    out = Path(args.out)
    codes = []
    if args.jobs > 1 and len(args.scenarios) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, args.scenarios, [out] * len(args.scenarios)))
    else:
        results = [_run_one(p, out) for p in args.scenarios]
    for code, message in results:
        print(message, file=sys.stderr if code == EXIT_USAGE else sys.stdout)
        codes.append(code)
    return max(codes)


def cmd_certify(args) -> int:
    scenario = load_scenario(args.scenario)
    loop = build_loop(scenario)
    layout = {"N": loop.N, "n": loop.n, "M": loop.M_edges if loop.has_edges else 0}
    trace = read_csv(args.trace, layout)
    report = analysis.certify_trace(trace, loop, tol=scenario.tolerance)
    print(report.summary())
    if args.report:
        write_report(report, args.report, {"scenario": scenario.name, "trace": str(args.trace)})
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_rates(args) -> int:
    scenario = load_scenario(args.scenario)
    rates = analysis.loop_rate_bounds(build_loop(scenario))
    print(f"k1={rates.k1!r}")
    print(f"k2={rates.k2!r}")
    print(f"k3={rates.k3!r}")
    print(f"beta={rates.beta!r}")
    return EXIT_OK


def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    build_loop(scenario)
    g = scenario.graph
    print(f"ok: {scenario.name} (N={g.num_vertices}, n={g.agent_dim}, M={g.num_edges}, "
          f"protocol={scenario.protocol})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elnetsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate and certify scenarios, writing CSV, report and SVG")
    p.add_argument("scenarios", nargs="+", metavar="scenario.json")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--jobs", type=int, default=1, help="scenarios to run in parallel")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("certify", help="certify a recorded trace against its scenario")
    p.add_argument("trace", metavar="trace.csv")
    p.add_argument("scenario", metavar="scenario.json")
    p.add_argument("--report", help="also write the JSON report here")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("rates", help="print the rate constants k1, k2, k3 and beta")
    p.add_argument("scenario", metavar="scenario.json")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("validate", help="check a scenario file without simulating")
    p.add_argument("scenario", metavar="scenario.json")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args)
    except (OSError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # malformed traces, gains that are not positive definite, ...
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
