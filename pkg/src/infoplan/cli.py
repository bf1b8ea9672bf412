"""Command-line entry point: ``infoplan {plan,verify,montecarlo,print-defaults}``."""

from __future__ import annotations

import argparse
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import BoundInputs, bound_eps_delta, delta_T, eta_star, peak_error, zeta
from .config import DEFAULTS_TOML, ExperimentConfig, PlannerSpec, load, validate
from .errors import BoundInapplicable, ConfigError, PlannerAbort
from .kalman import logdet
from .records import slug, write_csv, write_json
from .scenarios.gas import GasGrid, gas_scenario, run_gas_experiment
from .scenarios.random_instances import random_instance
from .scenarios.tracking import (
    PlannerConfig,
    TrackingWorld,
    monte_carlo,
    mpc_run,
    poisson_disc_trees,
)
from .search import PlanResult, fvi, greedy, rvi

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_BOUND = 0, 1, 2, 3


class BoundViolation(Exception):
    pass


def _header(cfg: ExperimentConfig, command: str) -> dict:
    return {
        "schema": "infoplan.report/1",
        "command": command,
        "versions": {"infoplan": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "config": cfg.echo(),
    }


def gas_grid(cfg: ExperimentConfig) -> GasGrid:
    g = dict(cfg.section("gas"))
    g.pop("field_seed")
    g.pop("engine")
    g["start"] = tuple(g["start"])
    try:
        return GasGrid(**g)
    except TypeError as exc:
        raise ConfigError(f"gas: {exc}") from exc


def tracking_world(cfg: ExperimentConfig) -> TrackingWorld:
    t = dict(cfg.section("tracking"))
    arena = tuple(float(v) for v in t["arena"])
    if len(arena) != 4 or arena[0] >= arena[1] or arena[2] >= arena[3]:
        raise ConfigError("tracking.arena must be [xmin, xmax, ymin, ymax]")
    trees = poisson_disc_trees(
        t["tree_seed"], arena, t["tree_min_dist"], t["tree_radius"], keep_clear=(*t["sensor_start"][:2], 4.0)
    )
    return TrackingWorld(
        tau=t["tau"],
        q=t["q"],
        max_range=t["max_range"],
        a0=t["a0"],
        a1=t["a1"],
        a2=t["a2"],
        b0=t["b0"],
        b1=t["b1"],
        trees=trees,
        arena=arena,
        sensor_start=tuple(t["sensor_start"]),
        target_start=tuple(t["target_start"]),
        prior_cov=tuple(t["prior_cov"]),
    )


def _random(cfg: ExperimentConfig, seed: int):
    r = cfg.section("random")
    return random_instance(
        seed,
        r["n_y"],
        r["n_controls"],
        lambda_w_min=r["lambda_w_min"],
        dim=r["dim"],
        step=r["step"],
        modulation=r["modulation"],
        frequency=r["frequency"],
    )


def _run_generic(spec: PlannerSpec, sc, cfg: ExperimentConfig) -> PlanResult:
    if spec.kind == "fvi":
        return fvi(sc, spec.T, workers=cfg.workers)
    if spec.kind == "greedy":
        return greedy(sc, spec.T, workers=cfg.workers)
    return rvi(
        sc, spec.T, spec.epsilon, spec.delta,
        tol=cfg.section("random")["tol"], node_cap=cfg.node_cap, workers=cfg.workers,
    )


def _plan_summary(p: PlanResult) -> dict:
    return {
        "planner": p.planner,
        "final_cost": p.final_cost,
        "controls": p.controls,
        "tree_sizes": p.tree_sizes,
        "expanded_sizes": p.expanded_sizes,
        "wall_time_s": p.wall_time,
    }


def _trajectory_rows(p: PlanResult):
    for t, (x, c) in enumerate(zip(p.states, p.covs)):
        yield (t, *x.coords, logdet(c))


def _tree_rows(plans):
    for label, sizes in plans:
        for t, n in enumerate(sizes):
            yield (t, label, n)


def _write_plans(out: Path, plans: list[PlanResult], coord_names) -> None:
    for p in plans:
        write_csv(out / f"trajectory_{slug(p.planner)}.csv", "trajectory", ["t", *coord_names, "logdet"], _trajectory_rows(p))
    write_csv(out / "tree_sizes.csv", "tree_sizes", ["t", "planner", "nodes"], _tree_rows((p.planner, p.tree_sizes) for p in plans))


def _bound_report(inst, T: int, spec: PlannerSpec, V_fvi: float, beta: float, V_rvi: float, tol: float) -> dict:
    sc = inst.scenario
    eps_eff = spec.epsilon + tol
    inp = BoundInputs(
        beta_star=beta,
        lambda_w_min=sc.target.lambda_w_min,
        n_y=sc.n_y,
        T=T,
        epsilon=eps_eff,
        delta=spec.delta,
        L_f=inst.L_f,
        L_m=inst.L_m,
        logdet_W=logdet(sc.target.W),
    )
    b = math.inf if math.isinf(spec.epsilon) else bound_eps_delta(inp, V_fvi)
    gap = V_rvi - V_fvi
    return {
        "planner": spec.label,
        "beta_star": beta,
        "eta_star": eta_star(beta, inp.lambda_w_min),
        "zeta_T": zeta(inst.L_f, inst.L_m, spec.delta, T),
        "delta_T": delta_T(inp),
        "epsilon_effective": eps_eff,
        "bound": b,
        "gap": gap,
        "ok": bool(-1e-9 <= gap <= b + 1e-9),
    }


def cmd_plan(cfg: ExperimentConfig) -> dict:
    out = cfg.out
    report = _header(cfg, "plan")
    specs = cfg.planners
    if cfg.scenario == "gas":
        grid = gas_grid(cfg)
        g = cfg.section("gas")
        sc = gas_scenario(grid)
        plans = []
        for i, spec in enumerate(specs):
            if spec.kind == "rvi" and not (math.isinf(spec.epsilon) and spec.delta == 0):
                raise ConfigError(f"planners[{i}]: gas rvi runs with epsilon = inf and delta = 0")
            run = run_gas_experiment(
                grid, spec.T, spec.kind, field_seed=g["field_seed"], node_cap=cfg.node_cap, engine=g["engine"], scenario=sc
            )
            plans.append(run.plan)
        _write_plans(out, plans, ["i", "j", "theta"])
        field = run.field
        write_csv(
            out / "field.csv", "field", ["i", "j", "ppm"],
            ((i, j, field[grid.cell_index(i, j)]) for i in range(grid.width) for j in range(grid.height)),
        )
        report["plans"] = [_plan_summary(p) for p in plans]
        report["bounds"] = "bound inapplicable (W singular)"
    elif cfg.scenario == "random":
        inst = _random(cfg, cfg.seed)
        plans = [_run_generic(s, inst.scenario, cfg) for s in specs]
        _write_plans(out, plans, [f"x{k}" for k in range(len(inst.scenario.x0.coords))])
        report["plans"] = [_plan_summary(p) for p in plans]
        report["instance"] = {"seed": inst.seed, "L_f": inst.L_f, "L_m": inst.L_m, **inst.params}
        ref = next((p for p, s in zip(plans, specs) if s.kind == "fvi"), None)
        if ref is None:
            report["bounds"] = "no fvi planner configured; beta_* unavailable"
        else:
            beta = peak_error(ref.covs[1:])
            tol = cfg.section("random")["tol"]
            report["bounds"] = [
                _bound_report(inst, s.T, s, ref.final_cost, beta, p.final_cost, tol)
                for p, s in zip(plans, specs)
                if s.kind == "rvi" and s.T == ref.horizon
            ]
    else:
        world = tracking_world(cfg)
        T_max = cfg.section("tracking")["T_max"]
        results = []
        for spec in specs:
            pc = PlannerConfig(spec.kind, spec.T, spec.epsilon, spec.delta, cfg.node_cap)
            res = mpc_run(world, pc, T_max, cfg.seed, workers=cfg.workers)
            results.append((spec, res))
            write_csv(
                out / f"trajectory_{slug(spec.label)}.csv", "tracking_trajectory",
                ["t", "x", "y", "theta", "target_x", "target_y", "est_x", "est_y", "logdet_pred", "measured"],
                (
                    (t, *res.sensors[t], *res.targets[t, :2], *res.means[t, :2], res.predicted_logdet[t],
                     res.measurements[t] is not None)
                    for t in range(T_max)
                ),
            )
        write_csv(out / "tree_sizes.csv", "tree_sizes", ["t", "planner", "nodes"],
                  _tree_rows((s.label, r.first_tree_sizes) for s, r in results))
        report["tracking"] = [
            {
                "planner": s.label,
                "mean_position_error": float(np.mean(r.position_error)),
                "mean_velocity_error": float(np.mean(r.velocity_error)),
                "final_logdet": float(r.predicted_logdet[-1]),
                "lost": r.lost,
                "controls": r.controls,
            }
            for s, r in results
        ]
    write_json(out / "report.json", report)
    return report


def cmd_verify(cfg: ExperimentConfig) -> dict:
    r = cfg.section("random")
    T, tol = r["T"], r["tol"]
    seeds = [int(s) for s in np.random.SeedSequence(cfg.seed).generate_state(r["instances"])]
    rows = []
    for iid, seed in enumerate(seeds):
        inst = _random(cfg, seed)
        sc = inst.scenario
        ref = fvi(sc, T, workers=cfg.workers)
        beta = peak_error(ref.covs[1:])
        for eps in r["epsilons"]:
            for delta in r["deltas"]:
                spec = PlannerSpec("rvi", T, float(eps), float(delta))
                res = rvi(sc, T, spec.epsilon, spec.delta, tol=tol, node_cap=cfg.node_cap, workers=cfg.workers)
                b = _bound_report(inst, T, spec, ref.final_cost, beta, res.final_cost, tol)
                rows.append((iid, spec.epsilon, spec.delta, ref.final_cost, res.final_cost, b["gap"], b["bound"], b["ok"], beta))
    write_csv(
        cfg.out / "bounds.csv", "bounds",
        ["instance", "epsilon", "delta", "V_fvi", "V_rvi", "gap", "bound", "ok", "beta_star"], rows,
    )
    bad = [row for row in rows if not row[7]]
    report = _header(cfg, "verify")
    report["verify"] = {"cases": len(rows), "violations": len(bad), "T": T, "instance_seeds": seeds}
    write_json(cfg.out / "report.json", report)
    if bad:
        raise BoundViolation(f"{len(bad)} of {len(rows)} bound checks failed; see {cfg.out / 'bounds.csv'}")
    return report


def cmd_montecarlo(cfg: ExperimentConfig) -> dict:
    world = tracking_world(cfg)
    t = cfg.section("tracking")
    configs = [PlannerConfig(s.kind, s.T, s.epsilon, s.delta, cfg.node_cap) for s in cfg.planners]
    labels = [c.label for c in configs]
    if len(set(labels)) != len(labels):
        raise ConfigError("planners must be distinct for a Monte-Carlo comparison")
    started = time.perf_counter()
    summaries, _ = monte_carlo(world, configs, t["runs"], cfg.seed, t["T_max"], workers=cfg.workers)
    write_csv(
        cfg.out / "montecarlo_series.csv", "montecarlo_series",
        ["t", "planner", "position_rmse", "velocity_rmse", "mean_logdet_pred"],
        ((k + 1, s.label, s.position_rmse[k], s.velocity_rmse[k], s.mean_logdet[k])
         for s in summaries for k in range(len(s.position_rmse))),
    )
    write_csv(
        cfg.out / "montecarlo_summary.csv", "montecarlo_summary",
        ["planner", "mean_position_rmse", "mean_velocity_rmse", "mean_final_logdet", "lost_fraction"],
        ((s.label, s.mean_position_rmse, s.mean_velocity_rmse, s.mean_final_logdet, s.lost_fraction) for s in summaries),
    )
    write_csv(cfg.out / "tree_sizes.csv", "tree_sizes", ["t", "planner", "nodes"],
              _tree_rows((s.label, s.first_tree_sizes) for s in summaries))
    report = _header(cfg, "montecarlo")
    report["montecarlo"] = [
        {
            "planner": s.label,
            "mean_position_rmse": s.mean_position_rmse,
            "mean_velocity_rmse": s.mean_velocity_rmse,
            "mean_final_logdet": s.mean_final_logdet,
            "lost_fraction": s.lost_fraction,
        }
        for s in summaries
    ]
    report["wall_time_s"] = time.perf_counter() - started
    write_json(cfg.out / "report.json", report)
    return report


COMMANDS = {"plan": cmd_plan, "verify": cmd_verify, "montecarlo": cmd_montecarlo}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="infoplan", description="Informative sensor path planning experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("plan", "run the configured planners on one scenario"),
        ("verify", "check suboptimality bounds on random instances against exhaustive search"),
        ("montecarlo", "paired Monte-Carlo tracking study"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="TOML or JSON config (a previous report.json also works)")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="base seed (overrides config)")
        p.add_argument("--workers", type=int, help="worker count (overrides config)")
        p.add_argument("--node-cap", type=int, help="per-level node cap (overrides config)")
    sub.add_parser("print-defaults", help="print the default configuration with comments")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "print-defaults":
        sys.stdout.write(DEFAULTS_TOML)
        return EXIT_OK
    try:
        cfg = load(args.config)
        for key, val in (("out", args.out), ("seed", args.seed), ("workers", args.workers), ("node_cap", args.node_cap)):
            if val is not None:
                cfg.raw[key] = val
        cfg = validate(cfg.raw)
        if args.command == "montecarlo" and cfg.scenario != "tracking":
            raise ConfigError("montecarlo needs scenario = \"tracking\"")
        if args.command == "verify" and cfg.scenario != "random":
            raise ConfigError("verify needs scenario = \"random\"")
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BoundInapplicable as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PlannerAbort as exc:
        print(f"planner aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except BoundViolation as exc:
        print(f"bound violation: {exc}", file=sys.stderr)
        return EXIT_BOUND
    print(f"wrote {cfg.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
