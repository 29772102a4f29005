"""Command line front end: single runs, seeded batches, noise sweeps."""
from __future__ import annotations

import argparse
import sys
from dataclasses import fields, replace

from .harness import MetricsRow, export, run_batch, run_scenario, sweep
from .planner import CostWeights
from .scenario import PRESETS, ScenarioSpec, load_layout, preset


def _parse_weights(items: list[str]) -> CostWeights | None:
    if not items:
        return None
    valid = {f.name for f in fields(CostWeights)}
    overrides = {}
    for item in items:
        name, _, value = item.partition("=")
        if name not in valid or not value:
            raise SystemExit(f"bad weight override {item!r}; "
                             f"expected one of {sorted(valid)} as name=value")
        overrides[name] = float(value)
    return replace(CostWeights(), **overrides)


def _spec_from_args(args) -> ScenarioSpec:
    spec = preset(args.scenario)
    overrides = {}
    if args.noise_scale is not None:
        overrides["noise_scale"] = args.noise_scale
    if args.noise_target is not None:
        overrides["noise_target"] = args.noise_target
    if args.predictor is not None:
        overrides["predictor"] = args.predictor
    if args.external_cmd:
        overrides["predictor"] = "external"
        overrides["external_command"] = tuple(args.external_cmd.split())
    if args.soft:
        overrides["hard_safety"] = False
    if getattr(args, "seed_base", None) is not None:
        overrides["seed_base"] = args.seed_base
    return replace(spec, **overrides) if overrides else spec


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--scenario", default="coop-sparse", choices=sorted(PRESETS),
                   help="scenario preset")
    p.add_argument("--noise-scale", type=float, default=None)
    p.add_argument("--noise-target", default=None,
                   choices=["localization", "perception", "both"])
    p.add_argument("--predictor", default=None,
                   choices=["rollout", "cv", "external"])
    p.add_argument("--external-cmd", default=None,
                   help="command line of an external predictor process")
    p.add_argument("--soft", action="store_true",
                   help="soft safety penalties instead of hard rejection")
    p.add_argument("--weight", action="append", default=[],
                   metavar="NAME=VALUE", help="cost weight override")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--strict", action="store_true",
                   help="exit nonzero if any run ends in a collision")


def _print_metrics(rows: list[MetricsRow]):
    for r in rows:
        tm = "-" if r.time_mean is None else f"{r.time_mean:.1f}s"
        print(f"{r.label}: success {100 * r.success_rate:.0f}%  "
              f"collision {100 * r.collision_rate:.0f}%  "
              f"timeout {100 * r.timeout_rate:.0f}%  time {tm}  "
              f"plan {1e3 * r.plan_wall_mean:.1f}ms  "
              f"jerk {r.jerk_lng_mean:.2f}m/s^3 over {r.runs} runs")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lanemerge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="single closed-loop run")
    _add_common(p_run)
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--layout", default=None,
                       help="YAML layout file overriding the preset draw")
    p_run.add_argument("--trace", action="store_true",
                       help="retain the tick trace (implied by --out)")

    p_batch = sub.add_parser("batch", help="seeded batch of runs")
    _add_common(p_batch)
    p_batch.add_argument("--runs", type=int, default=None)
    p_batch.add_argument("--seed-base", type=int, default=None)
    p_batch.add_argument("--workers", type=int, default=1)
    p_batch.add_argument("--traces", action="store_true",
                         help="retain per-run traces (needs --out to persist)")

    p_sweep = sub.add_parser("sweep", help="noise-scale sweep")
    _add_common(p_sweep)
    p_sweep.add_argument("--runs", type=int, default=None)
    p_sweep.add_argument("--seed-base", type=int, default=None)
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.add_argument("--scales", type=float, nargs="+",
                         default=[1.0, 2.0, 5.0])
    p_sweep.add_argument("--target", default="localization",
                         choices=["localization", "perception", "both"])

    args = parser.parse_args(argv)
    weights = _parse_weights(args.weight)

    if args.command == "run":
        spec = _spec_from_args(args)
        layout = load_layout(args.layout) if args.layout else None
        keep = args.trace or args.out is not None
        outcome = run_scenario(spec, args.seed, keep_trace=keep,
                               layout=layout, weights=weights)
        print(f"seed {outcome.seed}: {outcome.verdict} in {outcome.duration:.2f}s "
              f"({outcome.plan_calls} plans, mean {1e3 * outcome.plan_wall_mean:.1f}ms, "
              f"{outcome.fallback_plans} fallbacks)")
        if args.out:
            row = MetricsRow.aggregate([outcome], label=f"run@{outcome.seed}")
            paths = export([outcome], [row], args.out)
            print(f"wrote {paths['metrics']} and {len(paths['traces'])} trace(s)")
        return 1 if args.strict and outcome.verdict == "Collision" else 0

    if args.command == "batch":
        spec = _spec_from_args(args)
        outcomes, row = run_batch(spec, runs=args.runs, workers=args.workers,
                                  keep_traces=args.traces, weights=weights)
        _print_metrics([row])
        if args.out:
            export(outcomes, [row], args.out)
        return 1 if args.strict and row.collision_rate > 0 else 0

    spec = _spec_from_args(args)
    rows = sweep(spec, args.scales, args.target, runs=args.runs,
                 workers=args.workers, weights=weights)
    _print_metrics(rows)
    if args.out:
        export([], rows, args.out)
    return 1 if args.strict and any(r.collision_rate > 0 for r in rows) else 0


if __name__ == "__main__":
    sys.exit(main())
