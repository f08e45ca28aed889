"""Command-line surface: explore, schedule, simulate, report.

Each verb maps to one toolkit layer: `explore` searches accelerator designs,
`schedule` maps DNN variants onto a node for a given grid intensity,
`simulate` replays execution against an intensity trace, `report` aggregates
artifacts from previous runs.

Exit codes: 0 success, 2 validation, 3 infeasible, 4 I/O. Failures print one
machine-parsable line (`error[CODE]: message`) before any human-readable
detail. The EDCARB_LOG environment variable (debug|info|warning) controls
log verbosity; it never affects artifacts.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, cli_io
from .carbon_model import PackageKind
from .design_explorer import DesignSpace, pareto_front, run_ga
from .edc_scheduler import ci_to_threshold, search_mapping, select_variant
from .errors import IoFailure, ToolkitError, ValidationFailure
from .runtime_sim import PoissonArrivals, SimConfig, run_simulation

log = logging.getLogger("edcarb")

_ERROR_LABELS = {2: "VALIDATION", 3: "INFEASIBLE", 4: "IO"}


def _configure_logging() -> None:
    level_name = os.environ.get("EDCARB_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level_name, logging.WARNING))


def _require(value, what: str):
    if value is None or (isinstance(value, (list, tuple)) and not value):
        raise ValidationFailure(f"config is missing the {what} needed by this command")
    return value


# ---------------------------------------------------------------------------
# explore
# ---------------------------------------------------------------------------


def _cmd_explore(args: argparse.Namespace) -> int:
    config = cli_io.load_config(args.config)
    space = _require(config.design_space, "design_space section")
    workload = _require(config.workload, "workload_file")

    if not args.appx:
        exact = [m for m in space.multipliers if m.accuracy_drop_pct == 0.0]
        if not exact:
            raise ValidationFailure("multiplier library has no exact (zero-drop) variant")
        space = _replace_space(space, multipliers=(exact[0],))
    if args.stacking:
        kind = PackageKind.STACKED_3D if args.stacking == "3d" else PackageKind.PLANAR_2D
        space = _replace_space(space, stacking=kind)

    log.info("exploring %d designs (fitness=%s)", space.size, args.fitness)
    result = run_ga(space, config.ga_params, workload, fitness=args.fitness)
    front = pareto_front(list(result.evaluated), space)

    meta = cli_io.RunMeta(command="explore", config_hash=config.config_hash, seed=config.seed)
    bundle = cli_io.ResultBundle(meta=meta)
    bundle.csv_artifacts["pareto.csv"] = (
        ["px", "py", "b_local", "b_global", "dataflow", "multiplier", "embodied_kg", "latency_s", "cdp_kg_s"],
        [
            [
                d.chromosome.px,
                d.chromosome.py,
                d.chromosome.b_local,
                d.chromosome.b_global,
                d.chromosome.dataflow.value,
                d.chromosome.multiplier.name,
                d.embodied_kg,
                d.latency_s,
                d.cdp_kg_s,
            ]
            for d in front
        ],
    )
    bundle.csv_artifacts["history.csv"] = (
        ["generation", "best", "mean"],
        [[h.generation, h.best_fitness, h.mean_fitness] for h in result.history],
    )
    best = result.best
    bundle.json_artifacts["best_design.json"] = {
        "fitness": args.fitness,
        "best": {
            "px": best.chromosome.px,
            "py": best.chromosome.py,
            "b_local": best.chromosome.b_local,
            "b_global": best.chromosome.b_global,
            "dataflow": best.chromosome.dataflow.value,
            "multiplier": best.chromosome.multiplier.name,
            "embodied_kg": best.embodied_kg,
            "latency_s": best.latency_s,
            "cdp_kg_s": best.cdp_kg_s,
        },
        "space_size": space.size,
        "pareto_size": len(front),
    }
    paths = cli_io.emit_report(bundle, args.out)
    for p in paths:
        print(p)
    return 0


def _replace_space(space: DesignSpace, **updates) -> DesignSpace:
    return replace(space, **updates)


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------


def _cmd_schedule(args: argparse.Namespace) -> int:
    config = cli_io.load_config(args.config)
    node = _require(config.node, "node_file")
    variant_sets = _require(config.variant_sets, "variants_file")
    policy = config.policy

    threshold = ci_to_threshold(
        args.ci_now, policy.ci_min, policy.ci_max, policy.p_min_w, policy.p_max_w
    )
    log.info("ci=%.1f -> power threshold %.2f W", args.ci_now, threshold)

    choices = []
    for vset in variant_sets:
        choice = select_variant(
            vset,
            policy.latency_constraint_ms,
            policy.accuracy_floor,
            node,
            threshold,
            config.search,
        )
        choices.append((vset, choice))

    chosen_variants = [choice.variant for _, choice in choices]
    solution = search_mapping(chosen_variants, node, threshold, config.search)

    meta = cli_io.RunMeta(command="schedule", config_hash=config.config_hash, seed=config.seed)
    bundle = cli_io.ResultBundle(meta=meta)
    bundle.json_artifacts["plan.json"] = {
        "ci_now": args.ci_now,
        "power_threshold_w": threshold,
        "models": [
            {
                "model": vset.name,
                "variant": choice.variant.name,
                "accuracy": choice.variant.accuracy,
                "constraint_violated": choice.constraint_violated,
                "segments": [
                    {
                        "start": seg.start,
                        "end": seg.end,
                        "unit": seg.unit_id,
                        "freq_idx": seg.freq_idx,
                    }
                    for seg in plan.segments
                ],
            }
            for (vset, choice), plan in zip(choices, solution.plans)
        ],
        "system": {
            "throughput_inf_per_s": solution.estimate.throughput_inf_per_s,
            "power_w": solution.estimate.power_w,
            "ipw": solution.estimate.ipw,
        },
    }
    for p in cli_io.emit_report(bundle, args.out):
        print(p)
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _cmd_simulate(args: argparse.Namespace) -> int:
    config = cli_io.load_config(args.config)
    trace = cli_io.load_ci_trace(args.trace)
    sim = config.sim

    if args.arrivals.startswith("poisson:"):
        rate = float(args.arrivals.split(":", 1)[1])
        arrivals = PoissonArrivals(rate_per_s=rate, seed=config.seed)
    elif args.arrivals == "poisson":
        arrivals = PoissonArrivals(rate_per_s=sim.arrival_rate_per_s, seed=config.seed)
    else:
        arrivals = cli_io.load_arrivals(args.arrivals)

    sim_config = SimConfig(
        mode=sim.mode,
        horizon_s=sim.horizon_s,
        step_s=sim.step_s,
        policy=args.policy,
        deadline_ms=sim.deadline_ms,
        hysteresis_fraction=config.policy.hysteresis_fraction,
        p_min_w=config.policy.p_min_w,
        p_max_w=config.policy.p_max_w,
        idle_power_w=sim.idle_power_w,
        tokens_per_request=sim.tokens_per_request,
        tps_floor=config.policy.tps_floor or 0.0,
        seed=config.seed,
    )
    workloads = None
    if sim.mode == "mapping":
        sets = _require(config.variant_sets, "variants_file")
        workloads = [vset.variants[0] for vset in sets]
    report = run_simulation(
        sim_config,
        trace,
        arrivals,
        table=sim.exec_table,
        node=config.node,
        workloads=workloads,
        llm_variants=sim.llm_variants,
        search_params=config.search,
    )
    if sim.embodied_total_kg is not None and sim.lifetime_inferences is not None:
        # config supplies the embodied total as a scalar; same arithmetic as
        # amortized_report over a full EmbodiedReport
        report.embodied_amortized_g_per_inference = (
            sim.embodied_total_kg * 1000.0 / sim.lifetime_inferences
        )

    meta = cli_io.RunMeta(command="simulate", config_hash=config.config_hash, seed=config.seed)
    bundle = cli_io.ResultBundle(meta=meta)
    bundle.json_artifacts["sim_report.json"] = cli_io.sim_report_to_dict(report)
    bundle.csv_artifacts["timeseries.csv"] = (
        cli_io.TIMESERIES_COLUMNS,
        cli_io.timeseries_rows(report),
    )
    for p in cli_io.emit_report(bundle, args.out):
        print(p)
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

_SUMMARY_KEYS = {
    "best_design.json": [
        ("best_cdp_kg_s", ("best", "cdp_kg_s")),
        ("best_embodied_kg", ("best", "embodied_kg")),
        ("best_latency_s", ("best", "latency_s")),
    ],
    "plan.json": [
        ("power_threshold_w", ("power_threshold_w",)),
        ("system_power_w", ("system", "power_w")),
        ("system_ipw", ("system", "ipw")),
    ],
    "sim_report.json": [
        ("total_energy_kwh", ("total_energy_kwh",)),
        ("operational_g", ("operational_g",)),
        ("inferences_done", ("inferences_done",)),
        ("deadline_misses", ("deadline_misses",)),
        ("mean_tps", ("mean_tps",)),
    ],
}


def _dig(doc: dict, path: tuple[str, ...]):
    value = doc
    for key in path:
        if not isinstance(value, dict) or key not in value:
            return None
        value = value[key]
    return value


def _cmd_report(args: argparse.Namespace) -> int:
    rows = []
    config_hash = "aggregate"
    seed = 0
    for in_dir in args.in_dirs:
        folder = Path(in_dir)
        if not folder.is_dir():
            raise IoFailure(f"{folder} is not a directory")
        for name, keys in _SUMMARY_KEYS.items():
            artifact = folder / name
            if not artifact.exists():
                continue
            try:
                doc = json.loads(artifact.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ValidationFailure(f"{artifact}: not a readable artifact: {exc}") from exc
            meta = doc.get("meta", {})
            for metric, path in keys:
                value = _dig(doc, path)
                if value is not None:
                    rows.append(
                        [str(folder), meta.get("command", "?"), metric, value]
                    )
    if not rows:
        raise ValidationFailure("no known artifacts found in the given directories")
    for row in rows:
        print(f"{row[0]:<24} {row[1]:<10} {row[2]:<26} {row[3]}")
    if args.out:
        meta = cli_io.RunMeta(command="report", config_hash=config_hash, seed=seed)
        bundle = cli_io.ResultBundle(meta=meta)
        bundle.csv_artifacts["summary.csv"] = (["source", "command", "metric", "value"], rows)
        for p in cli_io.emit_report(bundle, args.out):
            print(p)
    return 0


# ---------------------------------------------------------------------------
# argument parsing / entry
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edcarb", description=__doc__)
    parser.add_argument("--version", action="version", version=f"edcarb {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explore", help="GA design-space exploration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fitness", choices=["cdp", "delay"], default="cdp")
    p.add_argument("--appx", action="store_true", help="include approximate multipliers")
    p.add_argument("--stacking", choices=["2d", "3d"], default=None)
    p.set_defaults(func=_cmd_explore)

    p = sub.add_parser("schedule", help="map DNN variants onto the node")
    p.add_argument("--config", required=True)
    p.add_argument("--ci-now", type=float, required=True, dest="ci_now")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_schedule)

    p = sub.add_parser("simulate", help="replay execution against a CI trace")
    p.add_argument("--config", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--arrivals", required=True, help="arrivals CSV, 'poisson' or 'poisson:<rate>'")
    p.add_argument("--policy", choices=["adaptive", "static"], default="adaptive")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("report", help="aggregate artifacts from previous runs")
    p.add_argument("--in", dest="in_dirs", nargs="+", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ToolkitError as exc:
        label = _ERROR_LABELS.get(exc.exit_code, "ERROR")
        print(f"error[{label}]: {exc}", file=sys.stderr)
        if isinstance(exc, cli_io.ConfigError):
            for detail in exc.errors:
                print(f"  - {detail}", file=sys.stderr)
        return exc.exit_code


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
