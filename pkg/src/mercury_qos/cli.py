"""Command line: validate, profile, calibrate, run, compare, sweep."""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional, Sequence

from .baselines import CONTROLLERS, make_controller
from .core import ScenarioSpec, ValidationError
from .profiler import CalibrationUnreachable, calibrate_thresholds, profile_app
from .report import FORMATS, Report, emit_report, summarize_trace
from .scenario_io import ParseError, load_scenario
from .sweep import interleave_sweep
from .tiersim import Trace, run_scenario


class ControllerRunError(RuntimeError):
    def __init__(self, controller: str, cause: BaseException):
        self.controller = controller
        self.cause = cause
        super().__init__(f"[{controller}] {type(cause).__name__}: {cause}")


def _run_one(scenario: ScenarioSpec, name: str, seed: int) -> tuple[Trace, float]:
    t0 = time.perf_counter()
    try:
        trace = run_scenario(scenario, make_controller(name), seed)
    except Exception as exc:  # tag whatever broke with the controller that hit it
        raise ControllerRunError(name, exc) from exc
    return trace, time.perf_counter() - t0


def run_traces(scenario: ScenarioSpec, controllers: Sequence[str], seed: Optional[int] = None,
               jobs: int = 1) -> dict[str, tuple[Trace, float]]:
    """Run every controller on the same scenario and seed; results keyed in input order."""
    if not controllers:
        raise ValueError("need at least one controller")
    for c in controllers:
        if c not in CONTROLLERS:
            raise ValueError(f"unknown controller {c!r}; choose from {list(CONTROLLERS)}")
    seed = scenario.seed if seed is None else seed
    if jobs <= 1:
        results = [_run_one(scenario, c, seed) for c in controllers]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_one, scenario, c, seed) for c in controllers]
            results = [f.result() for f in futures]
    return dict(zip(controllers, results))


def run_compare(scenario: ScenarioSpec, controllers: Sequence[str], out_dir=None,
                seed: Optional[int] = None, jobs: int = 1, warmup_s: float = 0.0,
                fmt: str = "json", plots: bool = True, timing: bool = False) -> Report:
    """Run, summarize and (if ``out_dir`` is given) write traces, action logs, report and figures."""
    seed = scenario.seed if seed is None else seed
    results = run_traces(scenario, controllers, seed, jobs)
    report = Report(scenario.name, seed, warmup_s)
    for name, (trace, wall) in results.items():
        summary = summarize_trace(trace, warmup_s)
        if timing:
            summary.wall_time_s = round(wall, 3)
        report.runs.append(summary)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, (trace, _) in results.items():
            (out / f"{name}_trace.csv").write_text(trace.to_csv())
            (out / f"{name}_actions.jsonl").write_text(
                "".join(json.dumps(a) + "\n" for a in trace.actions))
        ext = "json" if fmt == "json" else "csv"
        (out / f"report.{ext}").write_text(emit_report(report, fmt))
        if plots:
            from .plots import plot_slo_fractions, plot_timeseries

            for name, (trace, _) in results.items():
                plot_timeseries(trace, out / f"{name}_timeseries.png")
            plot_slo_fractions(report, out / "slo_fraction.png")
    return report


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mercury-qos",
                                 description="Tiered-memory QoS simulator and controllers.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def scenario_arg(p):
        p.add_argument("--scenario", required=True,
                       help="scenario JSON path or bundled name (e.g. fig10_mixed)")
        p.add_argument("--tick", type=float, default=None, help="override tick length (s)")

    p = sub.add_parser("validate", help="parse and validate a scenario")
    scenario_arg(p)

    p = sub.add_parser("profile", help="profile one app of a scenario in isolation")
    scenario_arg(p)
    p.add_argument("--app", required=True)

    p = sub.add_parser("calibrate", help="calibrate controller thresholds for a scenario's machine")
    scenario_arg(p)

    for cmd, default in (("run", "mercury"), ("compare", "mercury,tpp")):
        p = sub.add_parser(cmd, help=f"{cmd} controller(s) on a scenario")
        scenario_arg(p)
        p.add_argument("--controller", default=default,
                       help=f"comma-separated, from {','.join(CONTROLLERS)}")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--format", choices=FORMATS, default="json")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--warmup", type=float, default=0.0,
                       help="seconds excluded from SLO statistics")
        p.add_argument("--no-plots", action="store_true")
        p.add_argument("--timing", action="store_true",
                       help="include wall time (makes reports non-reproducible)")

    p = sub.add_parser("sweep", help="static interleave sweep of one app")
    scenario_arg(p)
    p.add_argument("--app", required=True)
    p.add_argument("--steps", type=int, default=20)
    return ap


def _load(args) -> ScenarioSpec:
    spec = load_scenario(args.scenario)
    if args.tick is not None:
        spec = replace(spec, tick_s=args.tick)
    return spec


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        spec = _load(args)
        if args.cmd == "validate":
            print(json.dumps({"ok": True, "scenario": spec.name, "apps": len(spec.apps),
                              "events": len(spec.timeline())}))
        elif args.cmd == "profile":
            app = spec.app(args.app)
            print(json.dumps(profile_app(app.with_phase(app.initial_phase()), spec.machine).to_json()))
        elif args.cmd == "calibrate":
            print(json.dumps(asdict(calibrate_thresholds(spec.machine))))
        elif args.cmd in ("run", "compare"):
            ctrls = [c.strip() for c in args.controller.split(",") if c.strip()]
            report = run_compare(spec, ctrls, args.out, args.seed, args.jobs, args.warmup,
                                 args.format, not args.no_plots, args.timing)
            sys.stdout.write(emit_report(report, args.format))
        elif args.cmd == "sweep":
            pts = interleave_sweep(spec, args.app, args.steps)
            print(json.dumps([asdict(p) for p in pts], indent=2))
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return 2
    except KeyError as exc:
        print(f"unknown app: {exc}", file=sys.stderr)
        return 2
    except (ValueError, CalibrationUnreachable, ControllerRunError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0
