"""Command-line front end.

Subcommands: ``fluid``, ``simulate``, ``diffusion``, ``stationary``,
``validate``.  All randomness flows from explicit seeds (config or flag),
so rerunning any command with the same inputs produces byte-identical
files.  Exit codes: 0 success / all checks pass, 1 check failure,
2 usage or config error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import yaml

from . import checks as checks_mod
from . import diffusion, mcsim
from .config import load_experiment, load_run_config
from .fluid import fluid_equilibrium, regime_classify, solve_fluid

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


def _is_unit_capacity_constant(rc) -> bool:
    s = rc.scheme
    return all(f.kind == "constant" for f in (s.lam, s.mu, s.theta, s.k)) \
        and s.k.params[0] == 1.0


def _grid(rc, horizon=None, grid_step=None):
    horizon = rc.horizon if horizon is None else horizon
    step = rc.grid_step if grid_step is None else grid_step
    return np.linspace(0.0, horizon, int(round(horizon / step)) + 1)


def cmd_fluid(args) -> int:
    rc = load_run_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = _grid(rc, grid_step=args.grid_step)
    fp = solve_fluid(rc.scheme.q0, rc.scheme.lam, rc.scheme.mu, rc.scheme.theta,
                     rc.scheme.k, rc.horizon, tol=rc.tol, grid=grid)
    with (out / "fluid.csv").open("w") as fh:
        fp.to_csv(fh)
    report = {
        "name": rc.name,
        "horizon": rc.horizon,
        "q0": rc.scheme.q0,
        "residual_max": float(fp.residual_max()),
        "crossings": [float(c) for c in fp.crossings],
    }
    if _is_unit_capacity_constant(rc):
        lam = rc.scheme.lam.params[0]
        mu = rc.scheme.mu.params[0]
        theta = rc.scheme.theta.params[0]
        report["equilibrium"] = fluid_equilibrium(lam, mu, theta)
        report["regime"] = regime_classify(lam, mu, rc.scheme.q0).value
    text = yaml.safe_dump(report, sort_keys=True)
    (out / "fluid_report.yaml").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    rc = load_run_config(args.config)
    n = args.n if args.n is not None else rc.n
    reps = args.reps if args.reps is not None else rc.replications
    seed = args.seed if args.seed is not None else rc.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = _grid(rc, grid_step=args.grid_step)
    mean, var = mcsim.aggregate_grid(rc.scheme, n, rc.horizon, grid, reps, seed,
                                     workers=args.workers)
    with (out / "aggregate.csv").open("w") as fh:
        mcsim.aggregate_csv(grid, mean, var, reps, fh)
    record = mcsim.RecordFlags(path=True, martingales=args.martingales,
                               quadratic_variations=args.martingales,
                               scaled=args.scaled)
    cfg = mcsim.SimConfig(scheme=rc.scheme, n=n, horizon=rc.horizon, seed=seed,
                          record=record)
    fp = None
    if record.scaled:
        fp = solve_fluid(rc.scheme.q0, rc.scheme.lam, rc.scheme.mu,
                         rc.scheme.theta, rc.scheme.k, rc.horizon, tol=rc.tol)
    for r in range(min(args.dump_paths, reps)):
        sp = mcsim.simulate(cfg, rep=r)
        with (out / f"path_{r:04d}.csv").open("w") as fh:
            sp.to_csv(fh)
        if record.martingales:
            rep = mcsim.martingale_report(sp, grid[1:])
            with (out / f"martingales_{r:04d}.csv").open("w") as fh:
                rep.to_csv(fh)
        if record.scaled:
            fluid_scaled, diff_scaled = mcsim.scaled_paths(sp, fp, n, grid)
            with (out / f"scaled_{r:04d}.csv").open("w") as fh:
                fh.write("t,fluid_scaled,diffusion_scaled\n")
                for row in zip(grid, fluid_scaled, diff_scaled):
                    fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    sys.stdout.write(
        f"simulated n={n} reps={reps} seed={seed} -> {out / 'aggregate.csv'}\n")
    return EXIT_OK


def _stationary_report(rc) -> dict:
    s = rc.scheme
    if s.alpha.kind != "constant":
        raise ValueError("stationary laws require a constant alpha")
    law = diffusion.stationary_law(
        s.lam.params[0], s.mu.params[0], s.theta.params[0],
        s.alpha.params[0], s.q0)
    return law.to_dict()


def cmd_diffusion(args) -> int:
    rc = load_run_config(args.config)
    dt = args.dt if args.dt is not None else rc.dt
    seed = args.seed if args.seed is not None else rc.seed
    n_paths = args.paths
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fp = solve_fluid(rc.scheme.q0, rc.scheme.lam, rc.scheme.mu, rc.scheme.theta,
                     rc.scheme.k, rc.horizon, tol=rc.tol)
    ts, mean, var = diffusion.sde_moments(
        rc.scheme.x0, rc.scheme, fp, dt, seed, n_paths)
    with (out / "moments.csv").open("w") as fh:
        diffusion.moments_csv(ts, mean, var, n_paths, fh)
    for r in range(min(args.dump_paths, n_paths)):
        dp = diffusion.solve_sde(rc.scheme.x0, rc.scheme, fp, dt, seed + r)
        with (out / f"xpath_{r:04d}.csv").open("w") as fh:
            dp.to_csv(fh)
    if _is_unit_capacity_constant(rc):
        text = yaml.safe_dump(_stationary_report(rc), sort_keys=True)
        (out / "stationary_report.yaml").write_text(text)
        sys.stdout.write(text)
    sys.stdout.write(
        f"diffusion dt={dt:g} paths={n_paths} seed={seed} -> {out / 'moments.csv'}\n")
    return EXIT_OK


def cmd_stationary(args) -> int:
    rc = load_run_config(args.config)
    if not _is_unit_capacity_constant(rc):
        raise ValueError(
            "stationary laws require constant rates and unit capacity")
    sys.stdout.write(yaml.safe_dump(_stationary_report(rc), sort_keys=True))
    return EXIT_OK


def cmd_validate(args) -> int:
    exp = load_experiment(args.experiment)
    results = checks_mod.run_checks(exp.checks, base_dir=exp.base_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "verdicts.csv").open("w") as fh:
        fh.write("check,statistic,tolerance,passed\n")
        for r in results:
            fh.write(f"{r.name},{r.statistic:.17g},{r.tolerance:.17g},"
                     f"{'PASS' if r.passed else 'FAIL'}\n")
    doc = [{"check": r.name, "statistic": float(r.statistic),
            "tolerance": float(r.tolerance),
            "passed": bool(r.passed), "detail": r.detail} for r in results]
    (out / "verdicts.yaml").write_text(yaml.safe_dump(doc, sort_keys=False))
    width = max(len(r.name) for r in results)
    for r in results:
        sys.stdout.write(
            f"{r.name:<{width}}  {r.statistic:>12.5g}  {r.tolerance:>12.5g}  "
            f"{'PASS' if r.passed else 'FAIL'}\n")
    n_fail = sum(not r.passed for r in results)
    sys.stdout.write(
        f"{len(results) - n_fail}/{len(results)} checks passed\n")
    return EXIT_OK if n_fail == 0 else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="qlimits",
        description="Many-server queue simulator with fluid and diffusion limits")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fluid", help="solve the fluid limit, emit CSV + report")
    p.add_argument("config")
    p.add_argument("--out", default="out")
    p.add_argument("--grid-step", type=float, default=None)
    p.set_defaults(fn=cmd_fluid)

    p = sub.add_parser("simulate", help="replicated exact simulation, aggregate CSV")
    p.add_argument("config")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out")
    p.add_argument("--grid-step", type=float, default=None)
    p.add_argument("--dump-paths", type=int, default=0,
                   help="also write the first N event paths")
    p.add_argument("--workers", type=int, default=1,
                   help="worker threads for replications (results identical)")
    p.add_argument("--martingales", action="store_true",
                   help="with --dump-paths, also write martingale/QV tables")
    p.add_argument("--scaled", action="store_true",
                   help="with --dump-paths, also write the scaled paths")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("diffusion", help="Euler-Maruyama ensemble, moments CSV")
    p.add_argument("config")
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out")
    p.add_argument("--dump-paths", type=int, default=0)
    p.set_defaults(fn=cmd_diffusion)

    p = sub.add_parser("stationary", help="print the closed-form long-run law")
    p.add_argument("config")
    p.set_defaults(fn=cmd_stationary)

    p = sub.add_parser("validate", help="run an experiment's checks, emit verdicts")
    p.add_argument("experiment")
    p.add_argument("--out", default="out")
    p.set_defaults(fn=cmd_validate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, ValueError, KeyError, yaml.YAMLError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
