"""Command-line driver: diagonalize, solve, sweep and spectrum commands.

Every experiment is described by a config file (see config.py); results
come out as CSV with the fixed schema

  problem,N,J,mu,lambda,tau,s,K_list,xi_list,precond,include_storage,
  iterations,converged,final_ratio,seed,walltime_s[,eig_min,eig_max,kappa,estimate]

where list-valued fields join their entries with ';' and xi_list holds the
upper triangle of the exchange table row by row.  Sweep and spectrum runs
can additionally render overview figures next to the CSV.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import analysis as _analysis
from .config import ConfigError, parse_config
from .congruence import (
    CongruenceError,
    diagonalize_by_congruence,
    transform_parameters,
    read_matrix,
)
from .meshfem import MeshError, build_unit_square_mesh
from .solvers import (
    SolverError,
    build_precond_mpet_naive,
    build_precond_mpet_transformed,
    build_precond_mpt_naive,
    build_precond_mpt_transformed,
    minres,
)
from .systems import (
    assemble_mpet,
    assemble_mpet_transformed,
    assemble_mpt,
    assemble_mpt_transformed,
    build_mpet_rhs,
    build_mpt_rhs,
    recover_pressures,
    split_vector,
    transform_rhs,
)

__all__ = ["main"]

HEADER_BASE = (
    "problem,N,J,mu,lambda,tau,s,K_list,xi_list,precond,include_storage,"
    "iterations,converged,final_ratio,seed,walltime_s"
)
HEADER_SPECTRUM = HEADER_BASE + ",eig_min,eig_max,kappa,estimate"


def _fmt(x):
    return f"{float(x):.10g}"


def _fmt_list(values):
    return ";".join(_fmt(v) for v in np.atleast_1d(values))


def _fmt_xi(xi):
    xi = np.atleast_2d(xi)
    J = xi.shape[0]
    return ";".join(_fmt(xi[i, j]) for i in range(J) for j in range(i + 1, J))


def _bool(flag):
    return "true" if flag else "false"


def format_row(cfg, params, N, report, spectrum=None, with_spectrum=False):
    fields = [
        cfg.problem, str(N), str(params.J), _fmt(params.mu), _fmt(params.lam),
        _fmt(params.tau), _fmt_list(params.s), _fmt_list(params.K),
        _fmt_xi(params.xi), cfg.precond, _bool(cfg.include_storage),
        str(report.iterations), _bool(report.converged),
        f"{report.final_ratio:.6e}", str(report.seed), f"{report.wall_time:.3f}",
    ]
    if with_spectrum:
        if spectrum is None:
            fields += ["", "", "", ""]
        else:
            fields += [
                f"{spectrum.eig_min:.10e}", f"{spectrum.eig_max:.10e}",
                f"{spectrum.kappa:.10e}", _bool(spectrum.estimate),
            ]
    return ",".join(fields)


def solve_point(cfg, params, N, seed):
    """Assemble and solve one (parameter point, mesh) pair.

    Returns (solution segments in the original variables, SolveReport).
    """
    mesh = build_unit_square_mesh(N)
    norm_tol = float(np.sqrt(cfg.tol))
    if cfg.problem == "mpt":
        E = params.exchange_matrix()
        g = build_mpt_rhs(mesh, [1.0] + [0.0] * (params.J - 1))
        if cfg.precond == "naive":
            system = assemble_mpt(mesh, params.K, E)
            precond = build_precond_mpt_naive(system)
            rhs_segments = g
        else:
            result = diagonalize_by_congruence(params.K, E)
            system = assemble_mpt_transformed(mesh, result)
            precond = build_precond_mpt_transformed(mesh, result)
            rhs_segments = transform_rhs(g, result.P)
        x, report = minres(system, precond, np.concatenate(rhs_segments),
                           tol=norm_tol, maxit=cfg.maxit, seed=seed)
        segments = split_vector(x, system.layout)
        if cfg.precond == "transformed":
            segments = recover_pressures(segments, result.P)
        return segments, report
    # mpet
    rhs_segments = build_mpet_rhs(mesh, params)
    if cfg.precond == "naive":
        system = assemble_mpet(mesh, params)
        precond = build_precond_mpet_naive(system, params)
    else:
        result = transform_parameters(params, include_storage=cfg.include_storage)
        system = assemble_mpet_transformed(mesh, params, result)
        precond = build_precond_mpet_transformed(mesh, params, result)
        rhs_segments = rhs_segments[:2] + transform_rhs(rhs_segments[2:], result.P)
    x, report = minres(system, precond, np.concatenate(rhs_segments),
                       tol=norm_tol, maxit=cfg.maxit, seed=seed)
    segments = split_vector(x, system.layout)
    if cfg.precond == "transformed":
        segments = segments[:2] + recover_pressures(segments[2:], result.P)
    return segments, report


def _write_csv(lines, out, what):
    text = "\n".join(lines) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
        print(f"wrote {len(lines) - 1} {what} row(s) to {out}")
    else:
        sys.stdout.write(text)


def cmd_solve(cfg):
    if cfg.sweeps:
        raise ConfigError("solve expects a single parameter point; use sweep for lists")
    if len(cfg.mesh_sizes) != 1:
        raise ConfigError("solve expects exactly one mesh size")
    params = cfg.point_params()
    N = cfg.mesh_sizes[0]
    segments, report = solve_point(cfg, params, N, cfg.seed)
    lines = [HEADER_BASE, format_row(cfg, params, N, report)]
    _write_csv(lines, cfg.out, "solve")
    if cfg.solution_out:
        np.savetxt(cfg.solution_out, np.concatenate(segments))
        print(f"wrote solution vector to {cfg.solution_out}")
    return 0


def cmd_sweep(cfg):
    points = cfg.sweep_points()
    tasks = [
        (idx, overrides, params, N)
        for idx, (overrides, params) in enumerate(points)
        for N in cfg.mesh_sizes
    ]

    def run(task):
        _, _, params, N = task
        _, report = solve_point(cfg, params, N, cfg.seed)
        return format_row(cfg, params, N, report)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            rows = list(pool.map(run, tasks))
    else:
        rows = [run(t) for t in tasks]
    lines = [HEADER_BASE] + rows
    _write_csv(lines, cfg.out, "sweep")
    if cfg.plot:
        from .plots import render_sweep_figure

        png = _figure_path(cfg.out, "sweep")
        render_sweep_figure(_rows_to_dicts(lines), png)
        print(f"wrote figure to {png}")
    return 0


def cmd_spectrum(cfg):
    if cfg.problem != "mpt" and cfg.problem != "mpet":
        raise ConfigError(f"unknown problem {cfg.problem!r}")
    if cfg.problem == "mpt":
        raise ConfigError("spectrum reporting covers the poroelastic problem; set problem = mpet")
    grid = [params for _, params in cfg.sweep_points()]
    table = _analysis.robustness_table(
        cfg.mesh_sizes, grid, precond_kind=cfg.precond,
        include_storage=cfg.include_storage, tol=cfg.tol, maxit=cfg.maxit,
        seed=cfg.seed,
    )
    lines = [HEADER_SPECTRUM]
    for row in table:
        lines.append(format_row(cfg, row.params, row.N, row.solve_report,
                                spectrum=row.spectrum, with_spectrum=True))
    _write_csv(lines, cfg.out, "spectrum")
    if cfg.plot:
        from .plots import render_spectrum_figure

        png = _figure_path(cfg.out, "spectrum")
        render_spectrum_figure(_rows_to_dicts(lines), png)
        print(f"wrote figure to {png}")
    return 0


def cmd_diagonalize(cfg):
    spec = cfg.diagonalize
    for key in ("k_file", "e_file"):
        if key not in spec:
            raise ConfigError(f"[diagonalize] section must name {key}")
    K = read_matrix(spec["k_file"])
    E = read_matrix(spec["e_file"])
    mode = spec.get("mode", "paper")
    normalize = bool(spec.get("normalize", True))
    result = diagonalize_by_congruence(K, E, mode=mode, normalize_columns=normalize)
    print("eigenvalues:", " ".join(f"{v:.4e}" for v in result.eigenvalues))
    print("P =")
    for row in result.P:
        print("  " + "  ".join(f"{v: .4e}" for v in row))
    print("K~ diagonal:", " ".join(f"{v:.4e}" for v in result.dK))
    print("Gamma~ diagonal:", " ".join(f"{v:.4e}" for v in result.dGamma))
    return 0


def _figure_path(out, default_stem):
    if out:
        stem = out[:-4] if out.endswith(".csv") else out
        return stem + ".png"
    return default_stem + ".png"


def _rows_to_dicts(lines):
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="mpetprec",
        description="Block-preconditioned solvers for multi-network "
                    "poroelasticity and multi-compartment Darcy flow",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("diagonalize", "print the congruence transform of a (K, E) matrix pair"),
        ("solve", "run one preconditioned MinRes solve, emit a CSV row"),
        ("sweep", "run the Cartesian parameter sweep, emit a CSV table"),
        ("spectrum", "sweep with condition-number columns (dense or Lanczos)"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", help="output CSV path (default: config value or stdout)")
        p.add_argument("--seed", type=int, help="override the RNG seed")
        p.add_argument("--threads", type=int, help="worker threads for sweep rows")
        p.add_argument("--plot", action="store_true",
                       help="also render a PNG figure next to the CSV")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config)
        if args.out is not None:
            cfg.out = args.out
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            cfg.threads = args.threads
        if args.plot:
            cfg.plot = True
        command = {
            "diagonalize": cmd_diagonalize,
            "solve": cmd_solve,
            "sweep": cmd_sweep,
            "spectrum": cmd_spectrum,
        }[args.command]
    except (ConfigError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2

    try:
        return command(cfg)
    except (ConfigError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except CongruenceError as err:
        # distinguish unreadable inputs (config problem) from numerics
        if "matrix file" in str(err) or "empty matrix" in str(err):
            print(f"error: {err}", file=sys.stderr)
            return 2
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    except (SolverError, MeshError, _analysis.AnalysisError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
