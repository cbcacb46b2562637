"""
StochLTM command line.

Runs the loading models on a scenario file (or a bundled scenario name) and
writes CSV outputs plus a run manifest into the output directory.

Examples:
  python -m stochltm.scripts.cli scenarios list

  python -m stochltm.scripts.cli analytic --config merge_exp1 --out runs/merge1

  python -m stochltm.scripts.cli simulate --config merge_exp1 --replications 2000 --seed 7 --out runs/merge1

  python -m stochltm.scripts.cli compare --analytic runs/merge1/trajectories.csv --simulated runs/merge1/simulated.csv

  python -m stochltm.scripts.cli optimize --config grid20_high --model analytic --budget 40 --seed 3
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import ConfigurationError, SimulationError
from .event_simulator import monte_carlo
from .network_config import NetworkConfig
from .network_loader import NetworkLoader, run_deterministic_baseline
from .run_manifest import RunManifest, save_manifest
from .runtime_config import RuntimeConfig, load_runtime_config
from .scenarios import describe_scenarios, load_scenario, resolve_scenario_path
from .signal_control import (
    MODELS,
    evaluate_plan_by_simulation,
    optimize,
    phase_labels,
    sample_feasible_plan,
)
from .trajectory_io import (
    baseline_frame,
    compare_trajectories,
    optimization_trace_frame,
    read_trajectories,
    simulation_frame,
    trajectory_frame,
    write_frame,
)
from .validators import (
    log_level_number,
    validate_budget,
    validate_positive_seconds,
    validate_replications,
    validate_seed,
    validate_weight,
    validate_workers,
)

logger = logging.getLogger(__name__)


def _runtime() -> RuntimeConfig:
    runtime = load_runtime_config()
    logging.getLogger().setLevel(log_level_number(runtime.log_level))
    return runtime


def _output_dir(args: argparse.Namespace, runtime: RuntimeConfig, subcommand: str) -> Path:
    if args.out:
        return Path(args.out).expanduser()
    return Path(runtime.output_dir) / subcommand


def _load_config(args: argparse.Namespace) -> NetworkConfig:
    config = load_scenario(args.config)
    weight = None if args.weight is None else validate_weight(args.weight)
    return config.with_overrides(
        horizon=None if args.horizon_s is None else validate_positive_seconds(args.horizon_s, "horizon"),
        output_stride=None if args.stride_s is None else validate_positive_seconds(args.stride_s, "stride"),
        delta=None if args.delta_s is None else validate_positive_seconds(args.delta_s, "delta"),
        mixture_weight=weight,
    )


def _manifest(args: argparse.Namespace, subcommand: str, out_dir: Path, **extra) -> RunManifest:
    return RunManifest(
        subcommand=subcommand,
        config_path=str(resolve_scenario_path(args.config)),
        output_dir=str(out_dir),
        weight=getattr(args, "weight", None),
        **extra,
    )


def cmd_scenarios_list(args: argparse.Namespace) -> int:
    print(json.dumps({"scenarios": describe_scenarios()}, indent=2))
    return 0


def cmd_analytic(args: argparse.Namespace) -> int:
    runtime = _runtime()
    config = _load_config(args)
    coupling = "marginal" if args.model == "marginal" else "network"
    loader = NetworkLoader(config, coupling=coupling)
    frame = trajectory_frame(loader.run())

    out_dir = _output_dir(args, runtime, "analytic")
    csv_path = write_frame(frame, out_dir / "trajectories.csv")
    manifest = _manifest(args, "analytic", out_dir, model=args.model, outputs={"trajectories": str(csv_path)})
    save_manifest(manifest)

    peaks = frame.groupby("link_id", sort=False)["e_uq"].max()
    print(
        json.dumps(
            {
                "scenario": config.name,
                "model": args.model,
                "records": int(len(frame)),
                "retained_output_values": loader.retained_output_values(),
                "peak_e_uq": {str(k): round(float(v), 6) for k, v in peaks.items()},
                "output": str(csv_path),
            },
            indent=2,
        )
    )
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    runtime = _runtime()
    config = _load_config(args)
    replications = validate_replications(
        runtime.replications if args.replications is None else args.replications, minimum=2
    )
    seed = validate_seed(runtime.seed if args.seed is None else args.seed)
    workers = validate_workers(runtime.workers if args.workers is None else args.workers)

    result = monte_carlo(config, replications, seed, workers=workers)
    frame = simulation_frame(result)
    out_dir = _output_dir(args, runtime, "simulate")
    csv_path = write_frame(frame, out_dir / "simulated.csv")
    save_manifest(
        _manifest(
            args,
            "simulate",
            out_dir,
            seed=seed,
            replications=replications,
            model="mc",
            outputs={"simulated": str(csv_path)},
        )
    )
    print(
        json.dumps(
            {
                "scenario": config.name,
                "replications": replications,
                "seed": seed,
                "records": int(len(frame)),
                "max_ci_half_width_uq": float(frame["ci_half_width_uq"].max()),
                "max_ci_half_width_dq": float(frame["ci_half_width_dq"].max()),
                "output": str(csv_path),
            },
            indent=2,
        )
    )
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    runtime = _runtime()
    config = _load_config(args)
    frame = baseline_frame(run_deterministic_baseline(config))
    out_dir = _output_dir(args, runtime, "baseline")
    csv_path = write_frame(frame, out_dir / "baseline.csv")
    save_manifest(_manifest(args, "baseline", out_dir, model="baseline", outputs={"baseline": str(csv_path)}))
    final = frame[frame["time_s"] == frame["time_s"].max()]
    print(
        json.dumps(
            {
                "scenario": config.name,
                "records": int(len(frame)),
                "vehicles_at_end": {str(r.link_id): round(float(r.vehicles), 6) for r in final.itertuples()},
                "output": str(csv_path),
            },
            indent=2,
        )
    )
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    report = compare_trajectories(read_trajectories(Path(args.analytic)), read_trajectories(Path(args.simulated)))
    payload = {"links": report.to_dict(orient="records")}
    if args.out:
        payload["output"] = str(write_frame(report, Path(args.out).expanduser() / "compare.csv"))
    print(json.dumps(payload, indent=2))
    return 0


def cmd_optimize(args: argparse.Namespace) -> int:
    runtime = _runtime()
    config = _load_config(args)
    if config.signals is None:
        raise ConfigurationError(f"scenario {config.name!r} has no signal settings to optimize")
    budget = validate_budget(args.budget)
    seed = validate_seed(runtime.seed if args.seed is None else args.seed)
    workers = validate_workers(runtime.workers if args.workers is None else args.workers)
    replications = validate_replications(
        runtime.replications if args.replications is None else args.replications, minimum=2
    )

    rng = np.random.default_rng(seed)
    initial = sample_feasible_plan(config.signals, rng)
    result = optimize(
        initial, args.model, config, budget, replications=replications, seed=seed, workers=workers
    )

    out_dir = _output_dir(args, runtime, "optimize")
    trace_path = write_frame(optimization_trace_frame(result, config.signals), out_dir / "optimization_trace.csv")
    labels = phase_labels(config.signals)
    summary = {
        "scenario": config.name,
        "model": args.model,
        "seed": seed,
        "evaluations": result.evaluations,
        "initial_objective": result.initial_objective,
        "best_objective": result.best_objective,
        "initial_plan": dict(zip(labels, initial.x)),
        "best_plan": dict(zip(labels, result.best_plan.x)),
        "trace": str(trace_path),
    }
    if args.evaluate_replications:
        n = validate_replications(args.evaluate_replications, minimum=2)
        before = evaluate_plan_by_simulation(initial, config, n, seed, workers=workers)
        after = evaluate_plan_by_simulation(result.best_plan, config, n, seed, workers=workers)
        summary["simulated"] = {
            "replications": n,
            "initial_mean": before.mean,
            "initial_half_width": before.half_width,
            "best_mean": after.mean,
            "best_half_width": after.half_width,
            "initial_travel_time_s": before.mean_travel_time,
            "initial_travel_time_half_width_s": before.travel_time_half_width,
            "best_travel_time_s": after.mean_travel_time,
            "best_travel_time_half_width_s": after.travel_time_half_width,
        }
    plan_path = out_dir / "best_plan.json"
    plan_path.write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
    save_manifest(
        _manifest(
            args,
            "optimize",
            out_dir,
            seed=seed,
            replications=replications if args.model == "mc" else None,
            model=args.model,
            outputs={"trace": str(trace_path), "plan": str(plan_path)},
        )
    )
    print(json.dumps(summary, indent=2))
    return 0


def _add_scenario_args(parser_obj: argparse.ArgumentParser) -> None:
    parser_obj.add_argument("--config", required=True, help="Scenario file path or bundled scenario name")
    parser_obj.add_argument("--out", default=None, help="Output directory (default: STOCHLTM_OUTPUT_DIR/<command>)")
    parser_obj.add_argument("--horizon-s", default=None, type=float, help="Override the scenario horizon [s]")
    parser_obj.add_argument("--stride-s", default=None, type=float, help="Override the output stride [s]")
    parser_obj.add_argument("--delta-s", default=None, type=float, help="Override the time step [s]")
    parser_obj.add_argument("--weight", default=None, type=float, help="Mixture weight applied to every link")


def _add_sampling_args(parser_obj: argparse.ArgumentParser) -> None:
    parser_obj.add_argument("--seed", default=None, type=int, help="Base seed (default: STOCHLTM_SEED)")
    parser_obj.add_argument(
        "--replications", default=None, type=int, help="Monte-Carlo replications (default: STOCHLTM_REPLICATIONS)"
    )
    parser_obj.add_argument("--workers", default=None, type=int, help="Worker processes (default: STOCHLTM_WORKERS)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochltm", description="Stochastic network loading CLI")
    sub = p.add_subparsers(dest="cmd", required=True)

    p_scen = sub.add_parser("scenarios", help="Bundled scenarios")
    scen_sub = p_scen.add_subparsers(dest="scenarios_cmd", required=True)
    p_scen_list = scen_sub.add_parser("list", help="List bundled scenarios")
    p_scen_list.set_defaults(func=cmd_scenarios_list)

    p_analytic = sub.add_parser("analytic", help="Run the analytical network model and write trajectories")
    _add_scenario_args(p_analytic)
    p_analytic.add_argument("--model", choices=["analytic", "marginal"], default="analytic")
    p_analytic.set_defaults(func=cmd_analytic)

    p_sim = sub.add_parser("simulate", help="Run Monte-Carlo replications of the event simulator")
    _add_scenario_args(p_sim)
    _add_sampling_args(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_base = sub.add_parser("baseline", help="Run the deterministic link transmission model")
    _add_scenario_args(p_base)
    p_base.set_defaults(func=cmd_baseline)

    p_cmp = sub.add_parser("compare", help="Compare analytical and simulated trajectory files")
    p_cmp.add_argument("--analytic", required=True, help="Trajectory CSV of the analytical model")
    p_cmp.add_argument("--simulated", required=True, help="Trajectory CSV of the simulator")
    p_cmp.add_argument("--out", default=None, help="Optional directory for compare.csv")
    p_cmp.set_defaults(func=cmd_compare)

    p_opt = sub.add_parser("optimize", help="Optimize fixed-time green splits from a random feasible plan")
    _add_scenario_args(p_opt)
    _add_sampling_args(p_opt)
    p_opt.add_argument("--model", choices=list(MODELS), default="analytic")
    p_opt.add_argument("--budget", default=50, type=int, help="Maximum objective evaluations")
    p_opt.add_argument(
        "--evaluate-replications",
        default=0,
        type=int,
        help="Re-evaluate the initial and best plans with this many simulator replications",
    )
    p_opt.set_defaults(func=cmd_optimize)

    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args))
    except (ConfigurationError, ValueError, FileNotFoundError) as exc:
        print(json.dumps({"ok": False, "error": str(exc)}, indent=2), file=sys.stderr)
        return 2
    except (SimulationError, RuntimeError, FloatingPointError) as exc:
        logger.exception("Run failed")
        print(json.dumps({"ok": False, "error": str(exc)}, indent=2), file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
