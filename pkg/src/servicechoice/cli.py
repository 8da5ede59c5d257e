"""Command-line interface.

Exit codes: 0 success, 1 solver non-convergence (or a simulation that
neither converged nor cycled), 2 configuration error. Results go to files
and a short summary to standard output; diagnostics go to standard error.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import ConfigError, ScenarioConfig, build_scenario, parse_config
from .csvio import (
    write_partition_csv,
    write_partition_plot_data,
    write_trajectory_csv,
    write_trajectory_plot_data,
)
from .dynamics import (
    ChoiceField,
    FixedPrudence,
    GlobalMemory,
    Weighted,
    Window,
    geometric_recency,
    harmonic_prudence,
    run_memory,
    run_prudence,
    run_standard,
)
from .equilibrium import solve_equilibrium_general, solve_equilibrium_k2
from .optimum import solve_optimum, solve_optimum_k2
from .presets import get_preset, preset_names
from .transport import lp_oracle, wasserstein

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_CONFIG = 0, 1, 2


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _add_source(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="JSON scenario file")
    src.add_argument("--preset", help="named preset, e.g. 'beach(0.1)'")
    p.add_argument("--resolution", type=int, help="override cells per axis")
    p.add_argument("--tol", type=float, help="override solver.tol")


def _add_output(p: argparse.ArgumentParser, default: str) -> None:
    p.add_argument("--out", type=Path, default=Path(default), help=f"CSV output (default {default})")
    p.add_argument("--plot-data", type=Path, help="also write long-format CSV for plotting")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="servicechoice", description="Service-choice optimum, equilibrium and dynamics.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a config and print a summary")
    _add_source(p)

    p = sub.add_parser("solve-optimum", help="global optimum partition")
    _add_source(p)
    _add_output(p, "optimum.csv")
    p.add_argument("--seed", type=int, default=0, help="seed for multi-start runs")

    p = sub.add_parser("solve-equilibrium", help="Nash equilibrium partition")
    _add_source(p)
    _add_output(p, "equilibrium.csv")
    p.add_argument("--seed", type=int, default=0, help="accepted for symmetry; the solvers are deterministic")

    p = sub.add_parser("simulate", help="day-by-day dynamics (two services)")
    _add_source(p)
    _add_output(p, "trajectory.csv")
    p.add_argument("--dynamics", choices=("standard", "prudence", "memory"))
    p.add_argument("--days", type=int, help="override solver.max_days")
    p.add_argument("--t0", type=float, help="initial threshold (standard dynamics)")
    p.add_argument("--rho", type=float, help="fixed prudence in [0, 1]")
    p.add_argument("--harmonic", type=float, metavar="S", help="increasing prudence rho_j = 1 - S/j")
    p.add_argument("--psi0", type=float, help="uniform initial share of site 2 (prudence)")
    p.add_argument("--memory", choices=("window", "global", "weighted"))
    p.add_argument("--kappa", type=int, help="window length for --memory window")
    p.add_argument("--seeds", type=float, nargs="+", help="initial thresholds for memory dynamics")
    p.add_argument("--seed", type=int, default=0, help="accepted for symmetry; dynamics are deterministic")

    p = sub.add_parser("oracle", help="compare the transport solver with the exact LP")
    _add_source(p)
    p.add_argument("--loads", type=float, nargs="+", help="site loads (default: uniform, or random with --random)")
    p.add_argument("--random", type=int, default=0, metavar="N", help="also test N random load vectors")
    p.add_argument("--seed", type=int, default=0)

    sub.add_parser("preset-list", help="list named presets")
    return parser


def _load(args) -> ScenarioConfig:
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}") from None
        config = parse_config(text, name=args.config.stem)
    else:
        config = get_preset(args.preset).config
    if args.resolution is not None:
        if args.resolution < 2:
            raise ConfigError("--resolution: must be at least 2")
        domain = dataclasses.replace(config.domain, resolution=(args.resolution,) * len(config.domain.box))
        config = dataclasses.replace(config, domain=domain)
    if args.tol is not None:
        if not args.tol > 0:
            raise ConfigError("--tol: must be positive")
        config = dataclasses.replace(config, solver=dataclasses.replace(config.solver, tol=args.tol))
    return config


def _fmt(values) -> str:
    return "(" + ", ".join(f"{v:.9g}" for v in np.atleast_1d(values)) + ")"


def _cmd_validate(args) -> int:
    config = _load(args)
    scenario = build_scenario(config)
    print(f"ok: {scenario.k} services, {scenario.grid.n_cells} cells, p={config.p:g}, mode={config.run.mode}")
    return EXIT_OK


def _cmd_optimum(args) -> int:
    config = _load(args)
    scenario = build_scenario(config)
    tol = config.solver.tol
    k2 = scenario.k == 2 and all(q.has_convex_total_wait for q in scenario.queues)
    if k2:
        result = solve_optimum_k2(scenario)
    else:
        result = solve_optimum(scenario, tol=tol, max_iter=config.solver.max_iter, seed=args.seed)
    write_partition_csv(result.partition, scenario, args.out)
    if args.plot_data:
        write_partition_plot_data(result.partition, scenario, args.plot_data)
    print(f"loads={_fmt(result.loads)} total_cost={result.total_cost:.12g} cns_residual={result.cns_residual:.3g}")
    if result.cns_advisory:
        _log("note: a load sits near a queue kink; the first-order residual is advisory")
    if not result.uniqueness_certified:
        _log("note: total waits are not convex; the optimum is not certified unique")
    if not result.converged:
        _log("error: optimum solver did not converge")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_equilibrium(args) -> int:
    config = _load(args)
    scenario = build_scenario(config)
    tol = config.solver.tol
    if scenario.k == 2 and all(q.is_monotone for q in scenario.queues):
        result = solve_equilibrium_k2(scenario)
    else:
        result = solve_equilibrium_general(scenario, tol=tol, max_iter=config.solver.max_iter)
    write_partition_csv(result.partition, scenario, args.out)
    if args.plot_data:
        write_partition_plot_data(result.partition, scenario, args.plot_data)
    print(
        f"loads={_fmt(result.loads)} queue_times={_fmt(result.queue_times)} "
        f"ce_residual={result.ce_residual:.3g} dual_feasible={result.dual_feasible}"
    )
    if not result.uniqueness_certified:
        _log("note: queues are not monotone; the equilibrium is not certified unique")
    if not (result.dual_feasible or result.ce_residual <= max(tol, 1e-9)):
        _log("error: equilibrium solver did not reach the requested accuracy")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _memory_scheme(kind: str, kappa: Optional[int]):
    if kind == "window":
        if kappa is None:
            raise ConfigError("memory window needs a kappa")
        return Window(kappa)
    if kind == "global":
        return GlobalMemory()
    return Weighted(geometric_recency, label="geometric")


def _cmd_simulate(args) -> int:
    config = _load(args)
    scenario = build_scenario(config)
    run = config.run
    dynamics = args.dynamics or run.dynamics
    days = args.days if args.days is not None else config.solver.max_days
    if days < 1:
        raise ConfigError("--days: must be at least 1")
    tol = config.solver.tol
    if scenario.k != 2:
        raise ConfigError("simulate: dynamics need exactly 2 services")
    if dynamics == "standard":
        t0 = args.t0 if args.t0 is not None else run.t0
        traj = run_standard(scenario, t0=t0, max_days=days, conv_tol=tol)
    elif dynamics == "prudence":
        if args.rho is not None:
            if not 0 <= args.rho <= 1:
                raise ConfigError("--rho: must lie in [0, 1]")
            schedule = FixedPrudence(args.rho)
        elif args.harmonic is not None:
            schedule = harmonic_prudence(args.harmonic)
        elif run.prudence is not None:
            pr = run.prudence
            schedule = FixedPrudence(pr["rho"]) if pr["kind"] == "fixed" else harmonic_prudence(pr["scale"])
        else:
            raise ConfigError("prudence dynamics need --rho, --harmonic or run.prudence")
        psi = args.psi0 if args.psi0 is not None else run.initial_psi
        if psi is not None and not 0 <= psi <= 1:
            raise ConfigError("--psi0: must lie in [0, 1]")
        psi0 = ChoiceField.uniform(scenario, psi) if psi is not None else None
        traj = run_prudence(scenario, schedule, psi0=psi0, max_days=days, conv_tol=tol)
    else:
        spec = dict(run.memory or {"kind": "window", "kappa": 2})
        if args.memory is not None:
            spec = {"kind": args.memory, "kappa": spec.get("kappa")}
        if args.kappa is not None:
            spec["kappa"] = args.kappa
        scheme = _memory_scheme(spec["kind"], spec.get("kappa"))
        seeds = args.seeds or run.seeds
        if seeds is None:
            seeds = [0.0] * getattr(scheme, "kappa", 1)
        try:
            traj = run_memory(scenario, scheme, seeds, max_days=days, conv_tol=tol)
        except ValueError as exc:
            raise ConfigError(f"memory: {exc}") from None
    write_trajectory_csv(traj, args.out)
    if args.plot_data:
        write_trajectory_plot_data(traj, args.plot_data)
    print(str(traj.verdict))
    if traj.verdict.kind == "cycle":
        print("cycle values=" + _fmt(traj.verdict.values))
    if traj.verdict.kind == "max_days":
        _log(f"warning: no convergence or cycle within {days} days")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_oracle(args) -> int:
    config = _load(args)
    scenario = build_scenario(config)
    rng = np.random.default_rng(args.seed)
    loads = [np.asarray(args.loads, float) if args.loads else np.full(scenario.k, 1.0 / scenario.k)]
    loads += [rng.dirichlet(np.ones(scenario.k)) for _ in range(args.random)]
    worst = 0.0
    for c in loads:
        if c.size != scenario.k:
            raise ConfigError(f"--loads: expected {scenario.k} values")
        try:
            value, _ = wasserstein(scenario, c)
            exact = lp_oracle(scenario, c)
        except ValueError as exc:
            raise ConfigError(f"oracle: {exc}") from None
        err = abs(value - exact) / (1.0 + abs(exact))
        worst = max(worst, err)
        print(f"loads={_fmt(c)} dual={value:.15g} lp={exact:.15g} rel_err={err:.3g}")
    if worst > 1e-6:
        _log("error: transport solver disagrees with the LP oracle")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _cmd_presets(args) -> int:
    for name in preset_names():
        preset = get_preset("beach(0.1)" if name == "beach(eps)" else name)
        print(f"{name}\t{preset.description}")
    return EXIT_OK


COMMANDS = {
    "validate": _cmd_validate,
    "solve-optimum": _cmd_optimum,
    "solve-equilibrium": _cmd_equilibrium,
    "simulate": _cmd_simulate,
    "oracle": _cmd_oracle,
    "preset-list": _cmd_presets,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, matching the config-error code
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG
    except OSError as exc:
        _log(f"i/o error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
