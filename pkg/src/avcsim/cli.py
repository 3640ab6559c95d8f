"""Command line interface: `avc pf`, `avc run`, `avc report`.

Exit codes: 0 success, 1 validation error (bad case/config/arguments),
2 runtime failure. A JSON config file can mirror any `run` flag; explicit
flags override the file.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .controllers import DroopParams
from .harness import RunSpec, build_environment, run_eval, summary_csv
from .metrics import AggregateReport, metric_extended, read_record
from .network import CaseError, load_case
from .powerflow import InjectionSet, solve_power_flow
from .profiles import ProfileError
from .reward import BARRIER_SHAPES

CONTROLLERS = ("none", "droop", "opf", "random")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avc", description="Active voltage control simulation harness"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pf = sub.add_parser("pf", help="one-shot power flow on a case")
    pf.add_argument("--case", required=True, help="case document path")
    pf.add_argument("--injections", required=True, help="JSON injection file")
    pf.add_argument(
        "--trace", action="store_true", help="print per-iteration residuals"
    )

    run = sub.add_parser("run", help="evaluate a controller over episodes")
    run.add_argument("--config", help="JSON file mirroring the flags below")
    run.add_argument("--case", help="case document path")
    run.add_argument("--profiles", help="profile bundle directory")
    run.add_argument("--controller", choices=CONTROLLERS)
    run.add_argument("--barrier", choices=BARRIER_SHAPES)
    run.add_argument("--episodes", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="directory for record files and summary")
    run.add_argument("--alpha", type=float)
    run.add_argument("--episode-length", type=int, dest="episode_length")
    run.add_argument("--data-noise-sigma", type=float, dest="data_noise_sigma")
    run.add_argument("--obs-noise-sigma", type=float, dest="obs_noise_sigma")
    run.add_argument(
        "--offset-mode", choices=("uniform", "fixed"), dest="offset_mode"
    )
    run.add_argument(
        "--droop-mode",
        choices=("fixed-point", "one-step-lag"),
        dest="droop_mode",
        help="settled within-step droop (default) or raw lagged feedback",
    )

    report = sub.add_parser("report", help="recompute metrics from record files")
    report.add_argument("--records", required=True, help="directory of .jsonl records")
    report.add_argument("--format", choices=("csv", "table"), default="table")
    return parser


_RUN_DEFAULTS = {
    "case": None,
    "profiles": None,
    "controller": "none",
    "barrier": "l1",
    "episodes": 1,
    "seed": 0,
    "out": None,
    "alpha": 0.1,
    "episode_length": 240,
    "data_noise_sigma": 0.01,
    "obs_noise_sigma": 0.0,
    "offset_mode": "uniform",
    "droop_mode": "fixed-point",
    # controller parameters, settable from the config file
    "droop_v_ref": 1.0,
    "droop_deadband": 0.0,
    "droop_slope": None,
    "opf_tolerance": 1e-5,
    "opf_max_sweeps": 200,
}


def _merged_run_options(args: argparse.Namespace) -> dict:
    options = dict(_RUN_DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CaseError(f"config file: {exc}") from exc
        unknown = set(loaded) - set(options)
        if unknown:
            raise CaseError(f"config file: unknown keys {sorted(unknown)}")
        options.update(loaded)
    for key in options:
        value = getattr(args, key, None)
        if value is not None:
            options[key] = value
    if not options["case"] or not options["profiles"]:
        raise CaseError("a case path and a profiles directory are required")
    return options


def _cmd_pf(args: argparse.Namespace) -> int:
    case = load_case(args.case)
    raw = json.loads(Path(args.injections).read_text())
    inj = InjectionSet(
        p_pv={int(k): float(v) for k, v in raw.get("p_pv", {}).items()},
        q_pv={int(k): float(v) for k, v in raw.get("q_pv", {}).items()},
        p_load={int(k): float(v) for k, v in raw.get("p_load", {}).items()},
        q_load={int(k): float(v) for k, v in raw.get("q_load", {}).items()},
    )
    if args.trace:
        from .powerflow import diagnostic_dump

        print(diagnostic_dump(case, inj))
    state = solve_power_flow(case, inj)
    print(f"case: {case.name}  converged: {state.converged}  iterations: {state.iterations}")
    if not state.converged:
        return 2
    print(f"slack_p: {state.slack_p:.6f} MW  slack_q: {state.slack_q:.6f} MVAr")
    print(f"total_loss: {state.total_loss:.6f} MW")
    print("bus,v_pu,theta_rad")
    for i, bus in enumerate(case.buses):
        print(f"{bus.index},{state.v[i]:.8f},{state.theta[i]:.8f}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    options = _merged_run_options(args)
    spec = RunSpec(
        case_path=options["case"],
        profiles_dir=options["profiles"],
        controller=options["controller"],
        barrier=options["barrier"],
        episodes=int(options["episodes"]),
        seed=int(options["seed"]),
        alpha=float(options["alpha"]),
        episode_length=int(options["episode_length"]),
        obs_noise_sigma=float(options["obs_noise_sigma"]),
        data_noise_sigma=float(options["data_noise_sigma"]),
        offset_mode=options["offset_mode"],
        droop_mode=options["droop_mode"],
        droop_v_ref=float(options["droop_v_ref"]),
        droop_deadband=float(options["droop_deadband"]),
        droop_slope=(
            None if options["droop_slope"] is None else float(options["droop_slope"])
        ),
        opf_tolerance=float(options["opf_tolerance"]),
        opf_max_sweeps=int(options["opf_max_sweeps"]),
    )
    env = build_environment(spec)
    aggregate, records, _ = run_eval(
        env,
        spec.controller,
        spec.episodes,
        base_seed=spec.seed,
        barrier_name=spec.barrier,
        out_dir=options["out"],
        policy_options=spec.policy_options(),
    )
    csv_text = summary_csv(aggregate, spec.controller, spec.barrier)
    if options["out"]:
        out = Path(options["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.csv").write_text(csv_text)
    _print_aggregate(aggregate, spec.controller, spec.barrier)
    return 0


def _print_aggregate(aggregate: AggregateReport, controller: str, barrier: str) -> None:
    m = aggregate.metrics
    print(f"controller: {controller}  barrier: {barrier}  episodes: {aggregate.episodes}")
    print(f"  CR:            {100 * m['cr']:.1f} %")
    print(f"  V out of ctrl: {100 * m['pct_out']:.2f} %  "
          f"(below {100 * m['pct_below']:.2f} %, above {100 * m['pct_above']:.2f} %)")
    print(f"  V deviation:   {m['v_dev_mean']:.4f} ± {m['v_dev_mean_std']:.4f} pu")
    print(f"  max drop dev:  {m['max_drop_dev']:.4f} ± {m['max_drop_dev_std']:.4f} pu")
    print(f"  max rise dev:  {m['max_rise_dev']:.4f} ± {m['max_rise_dev_std']:.4f} pu")
    print(f"  PL:            {m['pl_mean']:.4f} ± {m['pl_mean_std']:.4f} MW")
    print(f"  QL:            {m['ql_mean']:.4f} ± {m['ql_mean_std']:.4f} MVAr")


def _cmd_report(args: argparse.Namespace) -> int:
    records_dir = Path(args.records)
    paths = sorted(records_dir.glob("*.jsonl"))
    if not paths:
        raise CaseError(f"no .jsonl records under {records_dir}")
    records = [read_record(p) for p in paths]
    reports = [metric_extended(r) for r in records]
    aggregate = AggregateReport.from_reports(reports)
    first = records[0]
    if args.format == "csv":
        sys.stdout.write(summary_csv(aggregate, first.controller, first.barrier))
    else:
        _print_aggregate(aggregate, first.controller, first.barrier)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "pf":
            return _cmd_pf(args)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "report":
            return _cmd_report(args)
        raise AssertionError("unreachable")
    except (CaseError, ProfileError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, RuntimeError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
