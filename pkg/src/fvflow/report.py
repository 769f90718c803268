"""Post-run profiling: where the wall time went, and report figures.

collect_profile reduces a finished run to a plain dict (JSON-ready) with
three views: share of total time per section (linear solvers, matrix
assembly, rest), the within-CG kernel breakdown, and per-operator assembly
cost normalized to the cost of one sparse matrix-vector product.  The
table helpers shape those views as (header, rows) pairs for CSV/terminal
output and render_figures draws them, plus the residual history, to PNG.
"""

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .linsolve import STAGES


class ProfileError(Exception):
    pass


# distinguishes "absent because not recorded" from a measured zero
def _stage_sum(stages: dict) -> float:
    return float(sum(stages.values()))


def collect_profile(state) -> dict:
    """Timing summary of a RunState; pure data, no figure objects."""
    if "total" not in state.wall:
        raise ProfileError("state has no recorded wall time; run it first")
    solves = {"cg": 0, "bicgstab": 0}
    iters = {"cg": 0, "bicgstab": 0}
    for solver, _field, _outer, n, _r0, _r1 in state.residual_log:
        solves[solver] += 1
        iters[solver] += n
    profile = {
        "total": state.wall["total"],
        "sections": dict(state.wall),
        "solvers": {
            name: {
                "wall": state.wall.get(wall_key, 0.0),
                "stages": dict(state.stage_times.get(name, {})),
                "solves": solves[name],
                "iterations": iters[name],
                # one product to seed the residual, then per iteration:
                # cg applies the matrix once, bicgstab twice
                "smvp_calls": solves[name] + per_iter * iters[name],
            }
            for name, wall_key, per_iter in (
                ("cg", "pressure_solve", 1),
                ("bicgstab", "momentum_solve", 2),
            )
        },
        "assembly": state.wall.get("momentum_assembly", 0.0)
        + state.wall.get("pressure_assembly", 0.0),
        "ops": {name: {"seconds": s, "calls": c} for name, (s, c) in state.ops.items()},
        "cum_iters": dict(state.cum_iters),
        "outer": state.outer,
        "converged": state.converged,
    }
    return profile


def write_profile(profile: dict, path):
    with open(path, "w") as f:
        json.dump(profile, f, indent=1, sort_keys=True)
        f.write("\n")


def read_profile(path) -> dict:
    with open(path) as f:
        return json.load(f)


def solver_share_table(profile: dict):
    """Share of the total wall time: cg, bicgstab, assembly, other."""
    total = profile["total"]
    if total <= 0:
        raise ProfileError("profile covers zero wall time")
    parts = [
        ("cg", profile["solvers"]["cg"]["wall"]),
        ("bicgstab", profile["solvers"]["bicgstab"]["wall"]),
        ("assembly", profile["assembly"]),
    ]
    other = total - sum(s for _, s in parts)
    parts.append(("other", max(other, 0.0)))
    denom = sum(s for _, s in parts)
    rows = [(name, sec, 100.0 * sec / denom) for name, sec in parts]
    return ("section", "seconds", "percent"), rows


def cg_stage_table(profile: dict):
    """Within-CG kernel split over the six stage groups."""
    stages = profile["solvers"]["cg"]["stages"]
    if not stages:
        raise ProfileError(
            "no stage data recorded for cg; rerun with profiling enabled"
        )
    total = _stage_sum(stages)
    if total <= 0:
        raise ProfileError("cg stage data covers zero wall time")
    rows = [(s, stages.get(s, 0.0), 100.0 * stages.get(s, 0.0) / total) for s in STAGES]
    return ("stage", "seconds", "percent"), rows


_OP_ORDER = ("gradient", "divergence", "convection", "laplacian", "ddt")


def assembly_norm_table(profile: dict):
    """Per-operator assembly cost, also normalized to one SMVP."""
    cg = profile["solvers"]["cg"]
    stages = cg["stages"]
    if not stages:
        raise ProfileError(
            "no stage data recorded for cg; rerun with profiling enabled"
        )
    if cg["smvp_calls"] == 0 or stages.get("smvp", 0.0) <= 0:
        raise ProfileError("no smvp timings to normalize against")
    smvp_per_call = stages["smvp"] / cg["smvp_calls"]
    rows = []
    for name in _OP_ORDER:
        if name not in profile["ops"]:
            continue
        rec = profile["ops"][name]
        per_call = rec["seconds"] / rec["calls"]
        rows.append((name, rec["seconds"], rec["calls"], per_call,
                     per_call / smvp_per_call))
    return ("operator", "seconds", "calls", "per_call_s", "per_smvp"), rows


def format_tables(profile: dict) -> str:
    """Aligned text rendering of every table the profile supports."""
    blocks = []

    def block(title, header, rows, fmts):
        if not rows:
            blocks.append(f"{title}\n(nothing recorded)")
            return
        widths = [max(len(header[i]), *(len(fmts[i] % r[i]) for r in rows))
                  for i in range(len(header))]
        lines = [title,
                 "  ".join(h.rjust(w) for h, w in zip(header, widths))]
        for r in rows:
            lines.append("  ".join((fmts[i] % r[i]).rjust(widths[i])
                                   for i in range(len(header))))
        blocks.append("\n".join(lines))

    header, rows = solver_share_table(profile)
    block("time share by section", header, rows, ("%s", "%.4f", "%.1f"))
    try:
        header, rows = cg_stage_table(profile)
        block("cg kernel breakdown", header, rows, ("%s", "%.4f", "%.1f"))
        header, rows = assembly_norm_table(profile)
        block("assembly cost per operator", header, rows,
              ("%s", "%.4f", "%d", "%.3e", "%.2f"))
    except ProfileError as e:
        blocks.append(f"(stage tables unavailable: {e})")
    return "\n\n".join(blocks) + "\n"


def _bar(ax, labels, values, title, unit):
    ax.barh(range(len(labels)), values, color="#4878a8")
    ax.set_yticks(range(len(labels)))
    ax.set_yticklabels(labels)
    ax.invert_yaxis()
    ax.set_xlabel(unit)
    ax.set_title(title)
    for i, v in enumerate(values):
        ax.annotate(f"{v:.1f}", (v, i), xytext=(3, 0),
                    textcoords="offset points", va="center", fontsize=8)


def render_figures(profile: dict, residual_rows, out_dir) -> list:
    """PNG files for the profile tables and the residual history.

    residual_rows: iterables shaped like the residual-log CSV rows
    (solver, field, outer_iter, inner_iters, initial_res, final_res).
    Returns the written paths.
    """
    out_dir = Path(out_dir)
    written = []

    if residual_rows:
        fig, ax = plt.subplots(figsize=(7, 4.5))
        series = {}
        for solver, fname, outer, _n, r0, _r1 in residual_rows:
            series.setdefault((solver, fname), []).append((int(outer), float(r0)))
        for (solver, fname), pts in sorted(series.items()):
            pts = np.array(pts, dtype=float)
            # one entry per outer: nonorthogonal repeats keep the first
            _, first = np.unique(pts[:, 0], return_index=True)
            pts = pts[first]
            ax.semilogy(pts[:, 0], np.maximum(pts[:, 1], 1e-300),
                        label=f"{fname} ({solver})")
        ax.set_xlabel("outer iteration / time step")
        ax.set_ylabel("initial residual")
        ax.set_title("residual history")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=8)
        path = out_dir / "residuals.png"
        fig.savefig(path, dpi=130, bbox_inches="tight")
        plt.close(fig)
        written.append(path)

    header, rows = solver_share_table(profile)
    fig, ax = plt.subplots(figsize=(6, 3))
    _bar(ax, [r[0] for r in rows], [r[2] for r in rows],
         "share of total wall time", "percent")
    path = out_dir / "time_share.png"
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    written.append(path)

    try:
        _, rows = cg_stage_table(profile)
        fig, ax = plt.subplots(figsize=(6, 3.2))
        _bar(ax, [r[0] for r in rows], [r[2] for r in rows],
             "cg kernel breakdown", "percent of cg time")
        path = out_dir / "cg_stages.png"
        fig.savefig(path, dpi=130, bbox_inches="tight")
        plt.close(fig)
        written.append(path)

        _, rows = assembly_norm_table(profile)
        fig, ax = plt.subplots(figsize=(6, 3.2))
        _bar(ax, [r[0] for r in rows], [r[4] for r in rows],
             "assembly cost per operator call", "multiples of one smvp")
        path = out_dir / "assembly_norm.png"
        fig.savefig(path, dpi=130, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    except ProfileError:
        pass

    return written
