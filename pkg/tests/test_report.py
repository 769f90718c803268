"""Profile collection, share tables, and figure rendering."""

import numpy as np
import pytest

from fvflow.cases import gen_cavity
from fvflow.coupling import run_case
from fvflow.report import (
    STAGES,
    ProfileError,
    assembly_norm_table,
    cg_stage_table,
    collect_profile,
    format_tables,
    read_profile,
    render_figures,
    solver_share_table,
    write_profile,
)


@pytest.fixture(scope="module")
def profiled():
    case = gen_cavity(5)
    case.config.outer_tol = 1e-4
    state = run_case(case, record_stages=True)
    assert state.converged
    return state, collect_profile(state)


@pytest.fixture(scope="module")
def unprofiled():
    case = gen_cavity(4)
    case.config.outer_tol = 1e-3
    state = run_case(case)
    return collect_profile(state)


def test_profile_counts_match_the_solve_log(profiled):
    state, prof = profiled
    # smvp calls: one priming product per solve, then one per cg iteration
    # and two per bicgstab iteration
    for solver, per_iter in (("cg", 1), ("bicgstab", 2)):
        rows = [r for r in state.residual_log if r[0] == solver]
        iters = sum(r[3] for r in rows)
        rec = prof["solvers"][solver]
        assert rec["solves"] == len(rows)
        assert rec["iterations"] == iters == state.cum_iters[solver]
        assert rec["smvp_calls"] == len(rows) + per_iter * iters
    assert prof["total"] == pytest.approx(state.wall["total"])
    assert prof["outer"] == state.outer
    assert prof["converged"]


def test_solver_share_percentages_partition_the_total(profiled):
    _, prof = profiled
    header, rows = solver_share_table(prof)
    assert header == ("section", "seconds", "percent")
    names = [r[0] for r in rows]
    assert names == ["cg", "bicgstab", "assembly", "other"]
    assert all(r[1] >= 0.0 for r in rows)
    assert sum(r[2] for r in rows) == pytest.approx(100.0, abs=0.1)


def test_cg_stage_percentages_partition_the_solver_wall(profiled):
    _, prof = profiled
    header, rows = cg_stage_table(prof)
    assert [r[0] for r in rows] == list(STAGES)
    assert sum(r[2] for r in rows) == pytest.approx(100.0, abs=0.1)


def test_assembly_table_normalizes_by_smvp_cost(profiled):
    _, prof = profiled
    header, rows = assembly_norm_table(prof)
    assert header == ("operator", "seconds", "calls", "per_call_s", "per_smvp")
    ops = {r[0]: r for r in rows}
    # steady SIMPLE assembles these four; ddt only appears in transient runs
    for name in ("gradient", "divergence", "convection", "laplacian"):
        assert name in ops
        assert ops[name][2] > 0
        assert ops[name][4] > 0.0
    assert "ddt" not in ops
    smvp_per_call = prof["solvers"]["cg"]["stages"]["smvp"] / prof["solvers"]["cg"]["smvp_calls"]
    row = ops["laplacian"]
    assert row[4] == pytest.approx(row[3] / smvp_per_call)


def test_transient_profile_includes_ddt(tmp_path):
    case = gen_cavity(3)
    case.config.algorithm = "piso"
    case.config.dt = 0.01
    case.config.end_time = 0.03
    prof = collect_profile(run_case(case, record_stages=True))
    _, rows = assembly_norm_table(prof)
    assert "ddt" in [r[0] for r in rows]


def test_stage_tables_require_recorded_stages(unprofiled):
    with pytest.raises(ProfileError, match="stage data"):
        cg_stage_table(unprofiled)
    with pytest.raises(ProfileError, match="stage data"):
        assembly_norm_table(unprofiled)
    text = format_tables(unprofiled)
    assert "time share by section" in text
    assert "stage tables unavailable" in text


def test_format_tables_mentions_each_section(profiled):
    _, prof = profiled
    text = format_tables(prof)
    for token in ("time share by section", "cg kernel breakdown",
                  "assembly cost per operator", "laplacian", "percent"):
        assert token in text


def test_profile_json_round_trip(profiled, tmp_path):
    _, prof = profiled
    path = tmp_path / "profile.json"
    write_profile(prof, path)
    assert read_profile(path) == prof
    # rewriting is byte-stable
    first = path.read_bytes()
    write_profile(prof, path)
    assert path.read_bytes() == first


def test_render_figures_writes_pngs(profiled, tmp_path):
    state, prof = profiled
    paths = render_figures(prof, state.residual_log, tmp_path)
    names = sorted(p.name for p in paths)
    assert names == ["assembly_norm.png", "cg_stages.png",
                     "residuals.png", "time_share.png"]
    for p in paths:
        assert p.stat().st_size > 1000


def test_render_figures_skips_stage_plots_without_data(unprofiled, tmp_path):
    paths = render_figures(unprofiled, [], tmp_path)
    assert sorted(p.name for p in paths) == ["time_share.png"]


def test_render_figures_accepts_csv_string_rows(profiled, tmp_path):
    # the CLI feeds rows read back from residuals.csv, so every entry is str
    state, prof = profiled
    rows = [tuple(str(v) for v in r) for r in state.residual_log]
    paths = render_figures(prof, rows, tmp_path)
    assert any(p.name == "residuals.png" for p in paths)
