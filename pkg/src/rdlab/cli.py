"""Command line entry point: ``rdlab {solve,estimate,sweep,calibrate,inverse-check}``."""
from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace

from . import majorants as mj
from .femcore import SolverError, error_norms, solve_reaction_diffusion
from .fluxrec import average_flux, l2_project_flux, numerical_flux
from .mesh import MeshError, build_structured_unit_square, load_mesh
from .studylab import (SWEEP_ESTIMATORS, ConfigError, Constants, StudyConfig, _evaluate,
                       _sigma_star,
                       builtin_problem, emit_summary, load_config, resolve_constants,
                       resolve_sigma, run_calibration, run_inverse_check, run_sweep)

ESTIMATE_CHOICES = SWEEP_ESTIMATORS + ("boxed_integral", "aive")


def _common(p):
    p.add_argument("--config", help="key=value study configuration file")
    p.add_argument("--out", help="output file (overrides 'output' in the config)")
    p.add_argument("--seedless-deterministic", action="store_true",
                   help="accepted for compatibility; every command is deterministic and uses no seeds")


def _cell_args(p):
    p.add_argument("--problem", help="sinsin, polybubble or zero")
    p.add_argument("--n", type=int, default=16, help="structured mesh subdivisions (default 16)")
    p.add_argument("--mesh", help="mesh file to use instead of the structured unit square")
    p.add_argument("--sigma", default="0", help="reaction value: number, h^-1, h^-2 or c*h^-2")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rdlab", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one problem on one mesh and write the vertex values")
    _common(p)
    _cell_args(p)

    p = sub.add_parser("estimate", help="evaluate one estimator on one (mesh, sigma) cell")
    _common(p)
    _cell_args(p)
    p.add_argument("--estimator", required=True, choices=ESTIMATE_CHOICES)
    p.add_argument("--flux", choices=("average", "l2project"))
    p.add_argument("--c-dagger", type=float)
    p.add_argument("--c-sz01", type=float)
    p.add_argument("--c-sz11", type=float)

    for name, text in (("sweep", "run the full (level, sigma) study"),
                       ("calibrate", "calibrate c_dagger and the Scott-Zhang constants"),
                       ("inverse-check", "check the inverse-like bound with L2-projected fluxes")):
        p = sub.add_parser(name, help=text)
        _common(p)
    return ap


def _config(args) -> StudyConfig:
    cfg = load_config(args.config) if args.config else StudyConfig()
    if args.out:
        cfg.output = args.out
    return cfg


def _mesh(args):
    return load_mesh(args.mesh) if args.mesh else build_structured_unit_square(args.n)


def cmd_solve(args) -> int:
    cfg = _config(args)
    mesh = _mesh(args)
    problem = builtin_problem(args.problem or cfg.problem, resolve_sigma(args.sigma, mesh.h), cfg.matrix)
    u = solve_reaction_diffusion(problem, mesh)
    out = open(cfg.output, "w", newline="") if cfg.output else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["vertex", "x", "y", "u"])
        for i, ((x, y), c) in enumerate(zip(mesh.vertices, u.coefficients)):
            w.writerow([i, repr(float(x)), repr(float(y)), repr(float(c))])
    finally:
        if out is not sys.stdout:
            out.close()
    if cfg.output:
        e = error_norms(problem, u, cfg.error_degree)
        print(f"{problem.name}: n_vertices={mesh.n_vertices} h={mesh.h:.6g} sigma={problem.sigma:.6g} "
              f"||e||_0={e.l2:.6e} ||e||_A={e.a:.6e} |||e|||={e.energy:.6e}")
    return 0


def cmd_estimate(args) -> int:
    cfg = _config(args)
    cfg = replace(cfg, flux=args.flux or cfg.flux,
                  c_dagger=args.c_dagger if args.c_dagger is not None else cfg.c_dagger,
                  c_sz01=args.c_sz01 if args.c_sz01 is not None else cfg.c_sz01,
                  c_sz11=args.c_sz11 if args.c_sz11 is not None else cfg.c_sz11)
    if args.problem:
        cfg.problem = args.problem
    if any(v is not None for v in (args.c_dagger, args.c_sz01, args.c_sz11)):
        cfg.constants = "explicit"
    mesh = _mesh(args)
    needs_constants = args.estimator in ("consistent", "consistent_osc_low", "consistent_osc_high",
                                         "fem_majorant_1", "fem_majorant_1_osc", "fem_majorant_2")
    consts = None
    if needs_constants:
        cfg.estimators = [args.estimator]
        cfg.validate()
        consts = resolve_constants(cfg, [build_structured_unit_square(n) for n in cfg.levels])
    sigma_star = _sigma_star(cfg, consts, mesh.h) if consts else None
    problem = builtin_problem(cfg.problem, resolve_sigma(args.sigma, mesh.h, sigma_star), cfg.matrix)
    u = solve_reaction_diffusion(problem, mesh)
    zb = numerical_flux(u, problem.A)
    z = average_flux(zb) if cfg.flux == "average" else l2_project_flux(zb)
    true_sq = error_norms(problem, u, cfg.error_degree).energy ** 2
    print(f"problem={problem.name} h={mesh.h:.6g} sigma={problem.sigma:.6g} flux={cfg.flux} "
          f"true_energy_sq={true_sq:.6e}")
    if args.estimator == "boxed_integral":
        val = mj.boxed_integral(problem, u, z)
        print(f"boxed_integral (bound on ||grad e||_0) = {val:.6e}")
        if true_sq > 0:
            print(f"effectivity = {val / true_sq ** 0.5:.4f}")
        return 0
    if args.estimator == "aive":
        ind = mj.aive_indicator(problem, u, z, cfg.quad_degree)
        print(f"eta^2 = {ind.eta_sq:.6e}  osc^2 = {ind.oscillation_sq:.6e}  bound = {ind.bound:.6e}  "
              f"low-reaction elements = {int(ind.low_reaction.sum())}/{mesh.n_triangles}")
        return 0
    rep = _evaluate(args.estimator, problem, u, z, consts or Constants(), sigma_star, cfg)
    for key in ("estimator", "total", "prefactor", "diffusion", "residual_mult", "residual_sq",
                "oscillation", "sigma_star"):
        print(f"{key:>14} = {getattr(rep, key)}")
    for key, val in rep.constants.items():
        print(f"{key:>14} = {val}")
    if true_sq > 0:
        print(f"{'effectivity':>14} = {rep.effectivity(true_sq):.6f}")
    if cfg.output:
        mj.write_reports_csv([rep], cfg.output, true_sq if true_sq > 0 else None)
    return 0


def cmd_sweep(args) -> int:
    result = run_sweep(_config(args))
    print(emit_summary(result))
    return 0


def cmd_calibrate(args) -> int:
    reports = run_calibration(_config(args))
    for name, rep in reports.items():
        sups = ", ".join(f"{s:.5g}" for s in rep.running_supremum)
        print(f"{name:>11}: running sup [{sups}] -> value {rep.value:.6g} (safety {rep.safety_factor:g})")
    return 0


def cmd_inverse_check(args) -> int:
    result = run_inverse_check(_config(args))
    for r in result.inverse:
        print(f"level {r.level:>4} sigma {r.sigma:<10.4g} k={r.k} ratio {r.ratio:.4f}")
    for k in (1, 2):
        print(f"k={k}: max/min = {result.inverse_spread(k):.4f}")
    return 0


COMMANDS = {"solve": cmd_solve, "estimate": cmd_estimate, "sweep": cmd_sweep,
            "calibrate": cmd_calibrate, "inverse-check": cmd_inverse_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MeshError) as exc:
        print(f"rdlab: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, SolverError, OSError) as exc:
        print(f"rdlab: {args.command} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
