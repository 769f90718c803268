"""Command-line driver: gen, run, sample, profile-report.

Exit codes: 0 success, 1 usage error, 2 runtime failure.  The --threads
flag must take effect before numpy first loads its threading runtime, so
this module imports nothing heavy at the top; every subcommand pulls in
what it needs after main() has pinned the environment.

A generated case directory holds mesh.msh and case.ini.  A run directory
is self-contained: a copy of the mesh, the effective config, residual log
and field CSVs, a legacy VTK snapshot, report.json, and profile.json.
"""

import argparse
import json
import os
import shutil
import sys
import time
from pathlib import Path

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


def _apply_threads(argv):
    """Pin BLAS worker counts from --threads before numpy is imported."""
    n = None
    for i, a in enumerate(argv):
        if a == "--threads" and i + 1 < len(argv):
            n = argv[i + 1]
        elif a.startswith("--threads="):
            n = a.split("=", 1)[1]
    if n is not None:
        try:
            int(n)
        except ValueError:
            return  # leave it to argparse to reject
        for var in _THREAD_VARS:
            os.environ[var] = n


def effective_threads() -> int:
    return int(os.environ.get("OMP_NUM_THREADS", os.cpu_count() or 1))


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage problems; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    p = _Parser(prog="fvflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a case directory (mesh + config)")
    g.add_argument("case", choices=("cavity", "channel", "skewed-duct"))
    g.add_argument("out_dir", type=Path)
    g.add_argument("--n", type=int, help="cavity cells per edge")
    g.add_argument("--nx", type=int, help="streamwise cell count")
    g.add_argument("--ny", type=int, help="cross-stream cell count")
    g.add_argument("--skew", type=float, default=30.0, help="duct skew angle, degrees")

    r = sub.add_parser("run", help="run a case directory")
    r.add_argument("case_dir", type=Path)
    r.add_argument("--out", type=Path, help="output directory (default CASE_DIR/run)")
    r.add_argument("--profile", action="store_true",
                   help="record per-kernel solver timings for profile-report")
    r.add_argument("--threads", type=int, help="BLAS worker count (default: all cores)")
    r.add_argument("--quiet", action="store_true", help="suppress progress lines")
    r.add_argument("--algorithm", choices=("simple", "piso"))
    r.add_argument("--max-outer", type=int, dest="max_outer")
    r.add_argument("--outer-tol", type=float, dest="outer_tol")
    r.add_argument("--dt", type=float)
    r.add_argument("--end-time", type=float, dest="end_time")
    r.add_argument("--write-interval", type=int, dest="write_interval")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. --set alpha_p=0.5")

    s = sub.add_parser("sample", help="sample a finished run along a line")
    s.add_argument("run_dir", type=Path)
    s.add_argument("--p0", type=float, nargs=3, required=True, metavar=("X", "Y", "Z"))
    s.add_argument("--p1", type=float, nargs=3, required=True, metavar=("X", "Y", "Z"))
    s.add_argument("-n", "--samples", type=int, default=32, dest="n")
    s.add_argument("--field", choices=("all", "u", "p", "u_x", "u_y", "u_z"),
                   default="all")
    s.add_argument("--out", type=Path, help="output CSV (default RUN_DIR/sample.csv)")

    pr = sub.add_parser("profile-report",
                        help="tables and figures from a profiled run")
    pr.add_argument("run_dir", type=Path)
    pr.add_argument("--out", type=Path, help="where to write tables/figures "
                                             "(default RUN_DIR)")
    return p


def cmd_gen(args, parser):
    from .cases import gen_cavity, gen_channel, gen_skewed_duct
    from .config import write_config
    from .fileio import write_mesh

    if args.case == "cavity":
        if args.n is None or args.n < 1:
            parser.error("cavity needs --n >= 1")
        case = gen_cavity(args.n)
    else:
        if args.nx is None or args.ny is None or args.nx < 1 or args.ny < 1:
            parser.error(f"{args.case} needs --nx >= 1 and --ny >= 1")
        if args.case == "channel":
            case = gen_channel(args.nx, args.ny)
        else:
            if not 0.0 <= args.skew <= 45.0:
                parser.error("--skew must lie in [0, 45]")
            case = gen_skewed_duct(args.nx, args.ny, args.skew)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_mesh(case.mesh, args.out_dir / "mesh.msh")
    write_config(case.config, args.out_dir / "case.ini")
    print(f"{case.name}: {case.mesh.n_cells} cells, {case.mesh.n_faces} faces "
          f"-> {args.out_dir}")
    return 0


def _load_case(case_dir: Path):
    from .cases import Case
    from .config import read_config
    from .fileio import read_mesh

    mesh_path = case_dir / "mesh.msh"
    cfg_path = case_dir / "case.ini"
    for path in (mesh_path, cfg_path):
        if not path.exists():
            raise FileNotFoundError(f"{path} not found; is {case_dir} a case directory?")
    mesh = read_mesh(mesh_path)
    config = read_config(cfg_path)
    return Case(name=case_dir.name, mesh=mesh, config=config), mesh_path


def cmd_run(args, parser, t_process):
    from .config import _SCHEMA, format_config, validate_config
    from .coupling import (
        RESIDUAL_COLUMNS,
        CouplingConfig,
        continuity_error,
        run_case,
    )
    from .fileio import (
        SamplingError,
        sample_line,
        write_csv,
        write_fields_csv,
        write_vtk,
    )
    from .report import collect_profile, write_profile

    case, mesh_path = _load_case(args.case_dir)
    cc = case.config
    for flag in ("algorithm", "max_outer", "outer_tol", "dt", "end_time",
                 "write_interval"):
        val = getattr(args, flag)
        if val is not None:
            setattr(cc, flag, val)
    for item in args.set:
        if "=" not in item:
            parser.error(f"--set takes KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        if key not in _SCHEMA:
            parser.error(f"--set: unknown config key {key!r}")
        try:
            setattr(cc, key, _SCHEMA[key][1](raw))
        except ValueError:
            parser.error(f"--set {key}: cannot parse {raw!r}")
    validate_config(cc)

    out = args.out if args.out is not None else args.case_dir / "run"
    out.mkdir(parents=True, exist_ok=True)

    def writer(state, label):
        write_vtk(case.mesh, {"u": state.u.values, "p": state.p.values},
                  out / f"fields_{label}.vtk")

    cfg = CouplingConfig.from_case_config(cc, record_stages=args.profile)
    state = run_case(case, cfg, writer=writer if cc.write_interval else None,
                     verbose=not args.quiet)

    shutil.copyfile(mesh_path, out / "mesh.msh")
    (out / "config_used.ini").write_text(format_config(cc))
    write_csv(out / "residuals.csv", RESIDUAL_COLUMNS, state.residual_log)
    write_fields_csv(out / "fields_final.csv", case.mesh, state.geom,
                     state.u.values, state.p.values)
    write_vtk(case.mesh, {"u": state.u.values, "p": state.p.values},
              out / "fields_final.vtk")

    for line in cc.samples:
        try:
            rows = sample_line(case.mesh, state.geom, state.u.values,
                               line.p0, line.p1, line.n)
        except SamplingError as e:
            print(f"warning: sample {line.name}: {e}", file=sys.stderr)
            continue
        write_csv(out / f"sample_{line.name}.csv",
                  ["s", "u_x", "u_y", "u_z"], rows)

    cont = continuity_error(state)
    flux_scale = float(abs(state.flux).max()) if state.flux.size else 0.0
    report = {
        "case": case.name,
        "n_cells": case.mesh.n_cells,
        "n_faces": case.mesh.n_faces,
        "algorithm": cc.algorithm,
        "converged": state.converged,
        "outer_iterations": state.outer,
        "end_time": state.t,
        "cum_inner_iterations": dict(state.cum_iters),
        "continuity_error": cont,
        "continuity_scale": flux_scale,
        "threads": effective_threads(),
        "time_to_solution_s": time.perf_counter() - t_process,
        "wall_s": dict(state.wall),
    }
    with open(out / "report.json", "w") as f:
        json.dump(report, f, indent=1, sort_keys=True)
        f.write("\n")
    write_profile(collect_profile(state), out / "profile.json")

    tag = "converged" if state.converged else "NOT converged"
    print(f"{case.name}: {tag} after {state.outer} outer steps, "
          f"continuity {cont:.3e}, outputs in {out}")
    return 0


_SAMPLE_COLS = {
    "all": (["u_x", "u_y", "u_z", "p"], slice(4, 8)),
    "u": (["u_x", "u_y", "u_z"], slice(4, 7)),
    "p": (["p"], slice(7, 8)),
    "u_x": (["u_x"], slice(4, 5)),
    "u_y": (["u_y"], slice(5, 6)),
    "u_z": (["u_z"], slice(6, 7)),
}


def cmd_sample(args):
    import numpy as np

    from .fileio import read_mesh, sample_line, write_csv
    from .mesh import compute_geometry

    mesh = read_mesh(args.run_dir / "mesh.msh")
    table = np.loadtxt(args.run_dir / "fields_final.csv", delimiter=",", skiprows=1)
    table = table.reshape(-1, 8)
    if len(table) != mesh.n_cells:
        raise ValueError("fields_final.csv does not match the mesh cell count")
    names, cols = _SAMPLE_COLS[args.field]
    geom = compute_geometry(mesh)
    rows = sample_line(mesh, geom, table[:, cols], args.p0, args.p1, args.n)
    out = args.out if args.out is not None else args.run_dir / "sample.csv"
    write_csv(out, ["s"] + names, rows)
    print(f"{len(rows)} samples -> {out}")
    return 0


def cmd_profile_report(args):
    import csv

    from .fileio import write_csv
    from .report import (
        ProfileError,
        assembly_norm_table,
        cg_stage_table,
        format_tables,
        read_profile,
        render_figures,
        solver_share_table,
    )

    profile_path = args.run_dir / "profile.json"
    if not profile_path.exists():
        raise FileNotFoundError(f"{profile_path} not found; run the case first")
    profile = read_profile(profile_path)
    out = args.out if args.out is not None else args.run_dir
    out.mkdir(parents=True, exist_ok=True)

    residual_rows = []
    res_path = args.run_dir / "residuals.csv"
    if res_path.exists():
        with open(res_path, newline="") as f:
            rd = csv.reader(f)
            next(rd, None)
            residual_rows = [r for r in rd if r]

    print(format_tables(profile), end="")

    header, rows = solver_share_table(profile)
    write_csv(out / "time_share.csv", header, rows)
    figures = render_figures(profile, residual_rows, out)
    try:
        header, rows = cg_stage_table(profile)
        write_csv(out / "cg_stages.csv", header, rows)
        header, rows = assembly_norm_table(profile)
        write_csv(out / "assembly_norm.csv", header, rows)
    except ProfileError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print("figures: " + " ".join(str(f) for f in figures))
    return 0


def main(argv=None) -> int:
    t_process = time.perf_counter()
    if argv is None:
        argv = sys.argv[1:]
    _apply_threads(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen":
            return cmd_gen(args, parser)
        if args.command == "run":
            return cmd_run(args, parser, t_process)
        if args.command == "sample":
            return cmd_sample(args)
        return cmd_profile_report(args)
    except SystemExit:
        raise
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
