from __future__ import annotations

from pathlib import Path

from simnet.scenario import load_scenario, run_scenario, write_report


def register_commands(subparsers):
    parser = subparsers.add_parser("sim", help="Simnet-Szenarien")
    actions = parser.add_subparsers(dest="action", required=True)

    run = actions.add_parser("run", help="Netz bauen, Staged-Writes injizieren, Propagation messen")
    run.add_argument("--scenario", type=Path)
    run.add_argument("--report", type=Path, required=True, help="CSV oder .parquet")
    run.set_defaults(handler=sim_run)


def sim_run(args, settings) -> int:
    scenario = load_scenario(args.scenario or settings.scenario_path, settings.fee_policy)
    seed = args.seed if args.seed is not None else 0
    net, report = run_scenario(scenario.with_seed(seed))
    path = write_report(report, args.report)
    reached = report["node_id"].nunique() if not report.empty else 0
    print(f"{len(report)} Zeilen, {reached}/{len(net.nodes)} Knoten erreicht -> {path}")
    return 0
