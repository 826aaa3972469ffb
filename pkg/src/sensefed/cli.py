"""Command-line front end: runs, solver calls, bound reports, load tables.

Exit codes: 0 success, 2 configuration error (bad flags, bad config
file, bad values), 3 infeasible design (the sensing ceiling cannot be
met within the power budget). Everything else is a genuine crash and
comes with a traceback.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import (
    ScenarioConfig,
    config_to_dict,
    load_scenario,
    protocol_kwargs,
    realize,
    save_scenario,
)
from .crb import crb, fisher_info, varsigma_bar2
from .errors import InfeasibleError, ParameterError
from .geometry import sample_rayleigh_channels
from .metrics import (
    PARETO_COLUMNS,
    ROUND_COLUMNS,
    SSL_COLUMNS,
    export_metrics,
    make_ssl_report,
    pareto_rows,
    round_rows,
    ssl_rows,
    write_run_metadata,
)
from .moop import bcd_solve
from .protocol import BASELINES, run_baselines
from .seeds import derive_rng
from .signaling import make_weights

DEFAULT_PARETO_POINTS = 8
# Log-spaced ceiling ladder around the scenario's automatic epsilon0.
PARETO_SPAN_DECADES = 1.0


def _comma_list(text: str, parse, flag: str):
    try:
        return [parse(part) for part in text.split(",") if part]
    except ValueError as exc:
        raise ParameterError(f"{flag}: {exc}") from exc


def _seed_list(cfg: ScenarioConfig, count: int) -> list[int]:
    if count < 1:
        raise ParameterError("--seeds must be >= 1")
    return list(range(cfg.master_seed, cfg.master_seed + count))


def _out_dir(args) -> Path | None:
    if args.out_dir is None:
        return None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _block0_channels(cfg: ScenarioConfig, scenario):
    return sample_rayleigh_channels(
        derive_rng(cfg.master_seed, "channels", 0), cfg.K, cfg.N, cfg.M)


def cmd_run(args) -> int:
    cfg = load_scenario(args.scenario)
    rounds = args.rounds if args.rounds is not None else cfg.protocol.rounds
    names = tuple(_comma_list(args.baselines, str, "--baselines"))
    for name in names:
        if name not in BASELINES:
            raise ParameterError(
                f"--baselines: unknown baseline '{name}', options: {BASELINES}")
    seeds = _seed_list(cfg, args.seeds)
    knobs = protocol_kwargs(cfg)
    rows = []
    final = {}
    scenario = None
    for seed in seeds:
        scenario, task = realize(cfg, master_seed=seed)
        runs = run_baselines(scenario, task, rounds, master_seed=seed,
                             baselines=names, **knobs)
        for name in names:
            block = round_rows(runs[name], name, seed)
            rows.extend(block)
            final[name] = block[-1]
    out = _out_dir(args)
    if out is not None:
        csv_path = export_metrics(rows, out / "metrics.csv", ROUND_COLUMNS)
        write_run_metadata(out / "run.json", config_to_dict(cfg), seeds,
                           rounds=rounds, baselines=list(names),
                           rho=scenario.rho,
                           epsilon0=scenario.moop.epsilon0)
        print(f"wrote {csv_path} ({len(rows)} rows)")
    else:
        for name in names:
            row = final[name]
            print(f"{name} (last seed, final round): "
                  f"sensing_mse={row['sensing_mse']:.6g} "
                  f"accuracy={row['task_accuracy']:.4f}")
    return 0


def cmd_solve_moop(args) -> int:
    cfg = load_scenario(args.scenario)
    scenario, task = realize(cfg)
    weights = make_weights(cfg.K, task.sample_counts,
                           sensing=cfg.I == 2, learning=True)
    channels = _block0_channels(cfg, scenario)
    sol = bcd_solve(channels, weights, scenario.pulses, scenario.sigma2,
                    scenario.moop, scenario.rho,
                    varsigma_bar2(scenario.varsigma2, cfg.K),
                    seed=derive_rng(cfg.master_seed, "design-init", 0))
    print(f"mse={sol.mse:.8g} crb_l={sol.crb_l:.8g} iters={sol.iters} "
          f"converged={sol.converged} kkt_residual={sol.kkt_residual:.3g}")
    out = _out_dir(args)
    if out is not None:
        export_metrics(pareto_rows([(scenario.moop.epsilon0, sol)]),
                       out / "solution.csv", PARETO_COLUMNS)
        write_run_metadata(out / "solve_moop.json", config_to_dict(cfg),
                           [cfg.master_seed], rho=scenario.rho,
                           epsilon0=scenario.moop.epsilon0,
                           objective_trace=list(sol.objective_trace))
        print(f"wrote {out / 'solution.csv'}")
    return 0


def cmd_pareto(args) -> int:
    cfg = load_scenario(args.scenario)
    scenario, task = realize(cfg)
    if args.epsilon0:
        ladder = _comma_list(args.epsilon0, float, "--epsilon0")
    else:
        center = scenario.moop.epsilon0
        ladder = list(center * np.logspace(-PARETO_SPAN_DECADES,
                                           PARETO_SPAN_DECADES, args.points))
    weights = make_weights(cfg.K, task.sample_counts,
                           sensing=cfg.I == 2, learning=True)
    channels = _block0_channels(cfg, scenario)
    solver = scenario.moop
    solved, skipped = [], []
    for eps0 in ladder:
        config = type(solver)(
            epsilon0=eps0, power_budget=solver.power_budget,
            max_outer_iters=solver.max_outer_iters, tol_rel=solver.tol_rel,
            max_inner_iters=solver.max_inner_iters, backtrack=solver.backtrack,
            kkt_tol=solver.kkt_tol)
        try:
            sol = bcd_solve(channels, weights, scenario.pulses, scenario.sigma2,
                            config, scenario.rho,
                            varsigma_bar2(scenario.varsigma2, cfg.K),
                            seed=derive_rng(cfg.master_seed, "design-init", 0))
        except InfeasibleError:
            skipped.append(eps0)
            continue
        solved.append((eps0, sol))
    if not solved:
        raise InfeasibleError(
            "every requested ceiling was infeasible within the power budget")
    solved.sort(key=lambda pair: pair[1].crb_l)
    rows = pareto_rows(solved)
    for row in rows:
        print(f"epsilon0={row['epsilon0']:.6g} mse={row['mse']:.8g} "
              f"crb_l={row['crb_l']:.8g} converged={row['converged']}")
    if skipped:
        print(f"skipped {len(skipped)} infeasible ceiling(s): "
              + ", ".join(f"{e:.3g}" for e in skipped))
    out = _out_dir(args)
    if out is not None:
        export_metrics(rows, out / "pareto.csv", PARETO_COLUMNS)
        write_run_metadata(out / "pareto.json", config_to_dict(cfg),
                           [cfg.master_seed], skipped_epsilon0=skipped)
        print(f"wrote {out / 'pareto.csv'}")
    return 0


def cmd_crb(args) -> int:
    cfg = load_scenario(args.scenario)
    scenario, task = realize(cfg)
    weights = make_weights(cfg.K, task.sample_counts,
                           sensing=cfg.I == 2, learning=True)
    channels = _block0_channels(cfg, scenario)
    sol = bcd_solve(channels, weights, scenario.pulses, scenario.sigma2,
                    scenario.moop, scenario.rho,
                    varsigma_bar2(scenario.varsigma2, cfg.K),
                    seed=derive_rng(cfg.master_seed, "design-init", 0))
    info = fisher_info(sol.precoders, scenario.target.as_array(), scenario.scene,
                       cfg.T, scenario.varsigma2)
    at_truth = crb(info)
    # Universal floor with every joule of the K*P cap spent on the frame.
    floor = scenario.rho * varsigma_bar2(scenario.varsigma2, cfg.K) \
        / (cfg.T * cfg.K * cfg.P)
    print(f"rho={scenario.rho:.8g}")
    print(f"epsilon0={scenario.moop.epsilon0:.8g}")
    print(f"crb_l_design={sol.crb_l:.8g}")
    print(f"crb_at_target={at_truth:.8g}")
    print(f"crb_floor_full_energy={floor:.8g}")
    out = _out_dir(args)
    if out is not None:
        write_run_metadata(out / "crb.json", config_to_dict(cfg),
                           [cfg.master_seed], rho=scenario.rho,
                           epsilon0=scenario.moop.epsilon0,
                           crb_l_design=sol.crb_l, crb_at_target=at_truth,
                           crb_floor_full_energy=floor)
        print(f"wrote {out / 'crb.json'}")
    return 0


def cmd_ssl(args) -> int:
    m_values = _comma_list(args.M, int, "--M")
    if not m_values:
        raise ParameterError("--M needs at least one antenna count")
    reports = [make_ssl_report(args.K, m, args.s, args.d, args.R, args.tau)
               for m in m_values]
    for rep in reports:
        print(f"M={rep.M}: centralized={rep.centralized} "
              f"distributed={rep.distributed}")
    out = _out_dir(args)
    if out is not None:
        export_metrics(ssl_rows(reports), out / "ssl.csv", SSL_COLUMNS)
        print(f"wrote {out / 'ssl.csv'}")
    return 0


def cmd_selftest(args) -> int:
    """Miniature end-to-end run plus a determinism check, in a few seconds."""
    from .geometry import ArrayParams, SensingScene, TargetRegion, place_devices, place_target
    from .learning import make_synthetic_task
    from .protocol import make_scenario, run_collabsensefed
    from .signaling import dft_pulses

    devices = place_devices(3, 4)
    scene = SensingScene(devices=devices, params=ArrayParams(m_antennas=2))
    region = TargetRegion(100, 110, 10, 0, 3)
    target = place_target(4, region, devices)
    scn = make_scenario(scene, target, region, dft_pulses(4, 4), n_rx=6,
                        power_budget=1.0, sigma2=0.05, varsigma2=1e-9,
                        max_outer_iters=3, max_inner_iters=120,
                        tol_rel=1e-3, kkt_tol=1e-3)
    task = make_synthetic_task(11, 4, 0.4, dim=8, n_classes=2,
                               n_train=240, n_test=80)
    first = run_collabsensefed(scn, task, 3, master_seed=0, eta_v=0.01)
    again = run_collabsensefed(scn, task, 3, master_seed=0, eta_v=0.01)
    checks = {
        "finite metrics": all(
            np.isfinite([log.sensing_mse, log.agg_mse, log.task_loss,
                         log.task_accuracy]).all() for log in first),
        "rounds numbered": [log.round for log in first] == [1, 2, 3],
        "deterministic rerun": first == again,
        "positive aggregation error": all(log.agg_mse > 0 for log in first),
    }
    for name, ok in checks.items():
        print(f"{'ok' if ok else 'FAIL'} - {name}")
    if not all(checks.values()):
        print("selftest failed")
        return 1
    print("selftest passed")
    return 0


def cmd_init_config(args) -> int:
    path = Path(args.path)
    if path.exists() and not args.force:
        raise ParameterError(f"'{path}' exists; pass --force to overwrite")
    save_scenario(ScenarioConfig(), path)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sensefed",
        description="Over-the-air federated learning with collaborative "
                    "target localization: runs, designs, bounds, load tables.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the protocol and its baselines")
    run_p.add_argument("--scenario", required=True, help="config JSON path")
    run_p.add_argument("--rounds", type=int, default=None,
                       help="override the config's round count")
    run_p.add_argument("--seeds", type=int, default=1,
                       help="number of master seeds, counting up from the config's")
    run_p.add_argument("--baselines", default=",".join(BASELINES),
                       help="comma-separated subset of " + ",".join(BASELINES))
    run_p.add_argument("--out-dir", default=None,
                       help="write metrics.csv and run.json here")
    run_p.set_defaults(func=cmd_run)

    solve_p = sub.add_parser("solve-moop", help="one beamformer design solve")
    solve_p.add_argument("--scenario", required=True)
    solve_p.add_argument("--out-dir", default=None)
    solve_p.set_defaults(func=cmd_solve_moop)

    pareto_p = sub.add_parser("pareto", help="sweep the sensing ceiling")
    pareto_p.add_argument("--scenario", required=True)
    pareto_p.add_argument("--epsilon0", default=None,
                          help="comma-separated ceilings (default: auto ladder)")
    pareto_p.add_argument("--points", type=int, default=DEFAULT_PARETO_POINTS,
                          help="ladder size when --epsilon0 is not given")
    pareto_p.add_argument("--out-dir", default=None)
    pareto_p.set_defaults(func=cmd_pareto)

    crb_p = sub.add_parser("crb", help="bound report for the configured scenario")
    crb_p.add_argument("--scenario", required=True)
    crb_p.add_argument("--out-dir", default=None)
    crb_p.set_defaults(func=cmd_crb)

    ssl_p = sub.add_parser("ssl", help="sensing signaling load comparison")
    ssl_p.add_argument("--K", type=int, required=True, help="device count")
    ssl_p.add_argument("--M", required=True,
                       help="comma-separated antenna counts")
    ssl_p.add_argument("--s", type=int, required=True,
                       help="samples per antenna, centralized forwarding")
    ssl_p.add_argument("--d", type=int, required=True,
                       help="statistic entries per round, distributed")
    ssl_p.add_argument("--R", type=int, required=True, help="round count")
    ssl_p.add_argument("--tau", type=float, required=True,
                       help="entries per uplink resource unit")
    ssl_p.add_argument("--out-dir", default=None)
    ssl_p.set_defaults(func=cmd_ssl)

    self_p = sub.add_parser("selftest", help="fast end-to-end sanity run")
    self_p.set_defaults(func=cmd_selftest)

    init_p = sub.add_parser("init-config", help="write the default config JSON")
    init_p.add_argument("path")
    init_p.add_argument("--force", action="store_true")
    init_p.set_defaults(func=cmd_init_config)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleError as exc:
        print(f"infeasible design: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
