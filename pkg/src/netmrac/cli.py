"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 divergence, 4 I/O error.
The default output root is ``$NETMRAC_OUT`` (``./results`` when unset).
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .config import ConfigError, apply_overrides, load_scenario
from .numerics import DesignError
from .scenarios import CATALOG, get_scenario, run_and_report, validate

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
OUT_ENV = "NETMRAC_OUT"

FORMATS = {"csv": ("csv",), "summary": ("summary",), "both": ("csv", "summary")}


def _default_out() -> str:
    return os.environ.get(OUT_ENV, "results")


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _scenario_from_args(args):
    """Resolve --scenario/--config plus overrides into a validated Scenario."""
    if args.config:
        sc = load_scenario(args.config)
        if args.seed is not None:
            sc = apply_overrides(sc, [f"seed={args.seed}"])
    else:
        try:
            sc = get_scenario(args.scenario, 1 if args.seed is None else args.seed)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from None
    extra = []
    if args.dt is not None:
        extra.append(f"dt={args.dt!r}")
    if args.horizon is not None:
        extra.append(f"horizon={args.horizon!r}")
    extra += list(args.override or [])
    if extra:
        sc = apply_overrides(sc, extra)
    problems = validate(sc)
    if problems:
        raise ConfigError(problems)
    return sc


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, bool):
        return str(v)
    return f"{v:.4g}"


def print_summary(report, out=None) -> None:
    out = sys.stdout if out is None else out
    s = report.scalars
    get = lambda k: s[k]["value"] if k in s else None  # noqa: E731
    print(f"scenario {report.scenario}  seed {report.seed}  status {report.status}", file=out)
    print(f"  final topology error   {_fmt(get('final_topology_error'))}", file=out)
    print(f"  final tracking error   {_fmt(get('final_tracking_error'))}", file=out)
    print(f"  PE                     {'satisfied' if get('pe_satisfied') else 'not satisfied'}"
          f" (min eig {_fmt(get('pe_min_eig'))})", file=out)
    if "steady_max_dispersion" in s and report.meta.get("kind") == "synchronization":
        print(f"  steady dispersion      {_fmt(get('steady_max_dispersion'))}", file=out)
        print(f"  steady ramp deviation  {_fmt(get('steady_max_ramp_deviation'))}", file=out)
    if "reaching_fraction" in s:
        print(f"  reaching fraction      {_fmt(get('reaching_fraction'))}", file=out)
    print(f"  detections             {len(report.events)}", file=out)
    for ev in report.events:
        lat = "" if ev.latency is None else f" latency {ev.latency:.4g}"
        print(f"    link {ev.link} at t={ev.time:.4g}: {ev.pre_weight:.4g} -> {ev.new_weight:.4g}{lat}", file=out)
    files = report.meta.get("files")
    if files:
        print(f"  wrote {len(files)} files under {os.path.dirname(files[0])}", file=out)


def _execute(sc, out_dir, formats):
    """Run one scenario; returns (exit code, report or None)."""
    try:
        report = run_and_report(sc, out_dir=out_dir, formats=formats, figures=True)
    except OSError as exc:
        _err(f"cannot write output: {exc}")
        return EXIT_IO, None
    if report.status == "diverged":
        _err(f"integration diverged at t={report.diverged_at:.6g}")
        return EXIT_DIVERGED, report
    return EXIT_OK, report


def _check_writable(path: str) -> str | None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        return str(exc)
    if not os.access(path, os.W_OK):
        return f"{path}: not writable"
    return None


def cmd_run(args) -> int:
    try:
        sc = _scenario_from_args(args)
    except ConfigError as exc:
        for e in exc.errors:
            _err(e)
        return EXIT_CONFIG
    except DesignError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    if args.dry_run:
        print(f"{sc.name} (seed {sc.seed}): configuration ok")
        return EXIT_OK
    out = args.out or _default_out()
    problem = _check_writable(out)
    if problem:
        _err(f"cannot write output: {problem}")
        return EXIT_IO
    code, report = _execute(sc, out, FORMATS[args.format])
    if report is not None:
        print_summary(report)
    return code


def cmd_list(args) -> int:
    width = max(map(len, CATALOG))
    for name, (_, fig, desc) in CATALOG.items():
        print(f"{name:<{width}}  {fig:<5}  {desc}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        sc = load_scenario(args.path)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"  {e}")
        return EXIT_CONFIG
    except OSError as exc:
        _err(str(exc))
        return EXIT_IO
    problems = validate(sc)
    if problems:
        for e in problems:
            print(f"  {e}")
        return EXIT_CONFIG
    print(f"{args.path}: ok")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .calibration import run_calibration, write_calibration

    doc = run_calibration(args.seeds, dt=args.dt)
    try:
        path = write_calibration(doc, args.out)
    except OSError as exc:
        _err(f"cannot write calibration file: {exc}")
        return EXIT_IO
    print(f"wrote {path}")
    for name, entry in doc["calibrated"].items():
        print(f"  {name:<24} {entry['bound']:.6g}")
    return EXIT_OK


def _batch_job(job):
    name, seed, out, formats = job
    sc = get_scenario(name, seed)
    code, report = _execute(sc, out, formats)
    return name, seed, code, None if report is None else report.summary()["scalars"]


def cmd_batch(args) -> int:
    names = list(CATALOG) if args.scenario == ["all"] else args.scenario
    unknown = [n for n in names if n not in CATALOG]
    if unknown:
        _err(f"unknown scenario {', '.join(unknown)}; known: {', '.join(CATALOG)}")
        return EXIT_CONFIG
    out = args.out or _default_out()
    problem = _check_writable(out)
    if problem:
        _err(f"cannot write output: {problem}")
        return EXIT_IO
    jobs = [(n, s, out, FORMATS[args.format]) for n in names for s in args.seeds]
    worst = EXIT_OK
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        for name, seed, code, scalars in pool.map(_batch_job, jobs):
            topo = None if scalars is None else scalars["final_topology_error"]["value"]
            print(f"{name:<20} seed {seed:<4} exit {code}  topology error {_fmt(topo)}")
            worst = max(worst, code)
    return worst


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="netmrac",
        description="Adaptive identification and control of networked linear systems.",
        epilog=f"Exit codes: 0 ok, 2 config error, 3 divergence, 4 I/O error. "
               f"${OUT_ENV} sets the default output root.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario and export its results")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help="catalog name (see `list`)")
    src.add_argument("--config", help="path to a scenario YAML file")
    r.add_argument("--seed", type=int, help="scenario seed (default 1, or the file's seed)")
    r.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./results)")
    r.add_argument("--dt", type=float, help="integration step")
    r.add_argument("--horizon", type=float, help="simulated time")
    r.add_argument("--override", action="append", metavar="KEY=VALUE",
                   help="dotted scenario key, e.g. sliding.delta=1e-2 or adaptive.w_scale=5; repeatable")
    r.add_argument("--dry-run", action="store_true", help="validate only, run nothing")
    r.add_argument("--format", choices=sorted(FORMATS), default="both", help="exports to write")
    r.set_defaults(func=cmd_run)

    ls = sub.add_parser("list", help="list the scenario catalog")
    ls.set_defaults(func=cmd_list)

    v = sub.add_parser("validate", help="validate a scenario file without running it")
    v.add_argument("path")
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("calibrate", help="regenerate the calibration file from oracle pre-runs")
    c.add_argument("--seeds", type=int, nargs="+", default=[1, 2])
    c.add_argument("--dt", type=float, default=1e-3)
    c.add_argument("--out", help="calibration file path (default: the packaged file)")
    c.set_defaults(func=cmd_calibrate)

    b = sub.add_parser("batch", help="run scenarios x seeds on a worker pool")
    b.add_argument("--scenario", nargs="+", default=["all"], help="catalog names or `all`")
    b.add_argument("--seeds", type=int, nargs="+", default=[1])
    b.add_argument("--workers", type=int, default=None)
    b.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./results)")
    b.add_argument("--format", choices=sorted(FORMATS), default="both")
    b.set_defaults(func=cmd_batch)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
