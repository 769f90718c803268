"""Pressure-velocity coupling: SIMPLE outer iterations and PISO time steps.

Both algorithms share one building block, the pressure correction.  After
the momentum solve we form

    HbyA = u* + (b - A u*) / a_P

from the bare (never relaxed) momentum matrix A, its pressure-free
right-hand side b and diagonal a_P, interpolate it to faces as the
uncorrected flux, and solve

    div(rAU_f grad p) = div(phiHbyA),    rAU = V / a_P.

The corrected face flux is phiHbyA minus the face flux of the solved
pressure laplacian, so the per-cell flux imbalance equals the linear
residual of the pressure solve; velocities are corrected explicitly with
u = HbyA - rAU grad p.  The compact pressure stencil against the
interpolated HbyA is what suppresses checkerboard modes on the
collocated grid.

Momentum is solved segregated: the three components share one scalar
matrix and are relaxed implicitly (diagonal scaled by 1/alpha for the
solve only, the difference restored on the right-hand side).  Keeping
the pressure path on the bare diagonal makes the converged fields
independent of the relaxation factors and, at matching time-step
influence, brings SIMPLE and PISO to the same place; relaxation and dt
then shape only the route.  Convergence of the SIMPLE
loop is judged on the initial residuals of the momentum and pressure
solves, each normalized by the largest initial residual seen so far in
its own slot.  Everything here is sequential; parallelism, if any, lives
inside the matrix and solver kernels.
"""

import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .config import CaseConfig
from .fvm import (
    Field,
    LinearSystem,
    SchemeConfig,
    apply_bcs,
    bc_from_tuple,
    ddt_euler,
    divergence_convection,
    face_divergence,
    gauss_gradient,
    interpolate_cell_values,
    interpolate_to_faces,
    is_value_bc,
    laplacian,
    laplacian_face_flux,
    make_scalar,
    make_vector,
    _boundary_masks,
)
from .linsolve import SolveConfig, SolverError, bicgstab, cg
from .mesh import Mesh, MeshGeometry, compute_geometry
from .sparse import SparsityPattern, build_pattern, smvp


class CouplingError(Exception):
    pass


@dataclass
class CouplingConfig:
    """Algorithm knobs; from_case_config maps a parsed case onto them."""

    algorithm: str = "simple"  # simple | piso
    nu: float = 1e-6
    alpha_u: float = 0.7
    alpha_p: float = 0.3
    n_correctors: int = 2  # PISO pressure corrections per step
    n_nonorth_correctors: int = 0
    dt: float = 1e-3
    end_time: float = 1.0
    outer_tol: float = 1e-5
    max_outer: int = 2000
    scheme: SchemeConfig = dc_field(default_factory=SchemeConfig)
    momentum: SolveConfig = dc_field(default_factory=lambda: SolveConfig(tolerance=1e-7))
    pressure: SolveConfig = dc_field(default_factory=lambda: SolveConfig(tolerance=1e-7))
    pressure_ref_cell: int = 0
    pressure_ref_value: float = 0.0

    def __post_init__(self):
        if self.algorithm not in ("simple", "piso"):
            raise CouplingError(f"unknown algorithm {self.algorithm!r}")
        for name in ("alpha_u", "alpha_p"):
            a = getattr(self, name)
            if not 0.0 < a <= 1.0:
                raise CouplingError(f"{name} must lie in (0, 1]")
        if self.n_correctors < 1:
            raise CouplingError("n_correctors must be >= 1")
        if self.n_nonorth_correctors < 0:
            raise CouplingError("n_nonorth_correctors must be >= 0")
        if self.dt <= 0.0:
            raise CouplingError("dt must be positive")

    @classmethod
    def from_case_config(cls, cc: CaseConfig, record_stages: bool = False):
        scheme = SchemeConfig(
            convection=cc.convection,
            nonorth_correction=cc.nonorth_correction,
            limiter=cc.limiter,
        )
        return cls(
            algorithm=cc.algorithm,
            nu=cc.nu,
            alpha_u=cc.alpha_u,
            alpha_p=cc.alpha_p,
            n_correctors=cc.n_correctors,
            n_nonorth_correctors=cc.n_nonorth_correctors,
            dt=cc.dt,
            end_time=cc.end_time,
            outer_tol=cc.outer_tol,
            max_outer=cc.max_outer,
            scheme=scheme,
            momentum=SolveConfig(
                tolerance=cc.bicgstab_tol, max_iters=cc.max_iters, record_stages=record_stages
            ),
            pressure=SolveConfig(
                tolerance=cc.cg_tol, max_iters=cc.max_iters, record_stages=record_stages
            ),
            pressure_ref_cell=cc.pressure_ref_cell,
            pressure_ref_value=cc.pressure_ref_value,
        )


@dataclass
class RunState:
    """Everything an outer loop advances, plus the bookkeeping it grows."""

    mesh: Mesh
    geom: MeshGeometry
    pattern: SparsityPattern
    u: Field
    p: Field
    flux: np.ndarray
    t: float = 0.0
    outer: int = 0  # SIMPLE iterations or PISO steps taken
    pin_pressure: bool = True
    converged: bool = False
    cum_iters: dict = dc_field(default_factory=lambda: {"cg": 0, "bicgstab": 0})
    residual_log: list = dc_field(default_factory=list)  # per linear solve
    stage_times: dict = dc_field(default_factory=dict)  # solver -> stage -> s
    wall: dict = dc_field(default_factory=dict)  # section -> s
    ops: dict = dc_field(default_factory=dict)  # operator -> [seconds, calls]
    _res_scale: dict = dc_field(default_factory=dict)

    def log_solve(self, solver, name, report):
        self.cum_iters[solver] += report.iterations
        self.residual_log.append(
            (solver, name, self.outer, report.iterations,
             report.initial_residual, report.final_residual)
        )
        for stage, sec in report.stage_times.items():
            bucket = self.stage_times.setdefault(solver, {})
            bucket[stage] = bucket.get(stage, 0.0) + sec

    def add_wall(self, section, seconds):
        self.wall[section] = self.wall.get(section, 0.0) + seconds

    def add_op(self, name, seconds):
        rec = self.ops.setdefault(name, [0.0, 0])
        rec[0] += seconds
        rec[1] += 1

    def normalized(self, slot, res):
        """Residual scaled by the largest initial residual seen in slot."""
        seen = max(self._res_scale.get(slot, 0.0), res)
        self._res_scale[slot] = seen
        return res / max(seen, 1e-30)


RESIDUAL_COLUMNS = ("solver", "field", "outer_iter", "inner_iters",
                    "initial_res", "final_res")


def init_state(case, cfg: CouplingConfig) -> RunState:
    """Build fields from the case boundary table and an initial flux."""
    mesh = case.mesh
    geom = compute_geometry(mesh)
    pattern = build_pattern(mesh)
    missing = [p.name for p in mesh.patches if p.name not in case.config.boundary]
    if missing:
        raise CouplingError(f"no boundary conditions for patches {missing}")
    u_bcs = {name: bc_from_tuple(bs.u) for name, bs in case.config.boundary.items()}
    p_bcs = {name: bc_from_tuple(bs.p) for name, bs in case.config.boundary.items()}
    u = make_vector("u", mesh, u_bcs)
    p = make_scalar("p", mesh, p_bcs)
    apply_bcs(u, geom, t=0.0)
    apply_bcs(p, geom, t=0.0)
    pin = not any(is_value_bc(bc) for bc in p_bcs.values())
    if pin and not 0 <= cfg.pressure_ref_cell < mesh.n_cells:
        raise CouplingError(
            f"pressure reference cell {cfg.pressure_ref_cell} outside 0..{mesh.n_cells - 1}"
        )
    flux = _plain_flux(u, geom)
    return RunState(mesh=mesh, geom=geom, pattern=pattern, u=u, p=p,
                    flux=flux, pin_pressure=pin)


def _plain_flux(u: Field, geom: MeshGeometry) -> np.ndarray:
    """S . u_f without pressure smoothing; zero on empty faces."""
    mesh = u.mesh
    uf = interpolate_to_faces(u, geom)
    flux = np.einsum("ij,ij->i", uf, geom.face_area)
    _, _, empty = _boundary_masks(u)
    flux[mesh.n_internal :][empty] = 0.0
    return flux


def _momentum_matrix(state: RunState, cfg: CouplingConfig, u_old=None):
    """Assemble convection-diffusion(-time) for u; rhs excludes pressure."""
    t0 = time.perf_counter()
    sys = LinearSystem.zeros(state.pattern, rank="vector")
    if u_old is not None:
        t1 = time.perf_counter()
        ddt_euler(sys, state.u, u_old, cfg.dt, state.geom)
        state.add_op("ddt", time.perf_counter() - t1)
    t1 = time.perf_counter()
    divergence_convection(sys, state.flux, state.u, cfg.scheme, geom=state.geom)
    t2 = time.perf_counter()
    state.add_op("convection", t2 - t1)
    laplacian(sys, cfg.nu, state.u, state.geom, cfg.scheme, coeff=-1.0)
    state.add_op("laplacian", time.perf_counter() - t2)
    state.add_wall("momentum_assembly", time.perf_counter() - t0)
    return sys


def _solve_momentum(state: RunState, cfg: CouplingConfig, sys: LinearSystem, relax: bool):
    """Add the pressure source and solve the three components.

    Under-relaxation only stabilizes the linear solves: the diagonal is
    scaled for the solve and restored afterwards, and the matching source
    goes into the solve rhs alone.  The returned pressure-free rhs and
    diagonal belong to the bare operator, so the downstream HbyA, rAU and
    velocity correction are relaxation-free and the converged answer
    cannot depend on alpha_u (only the path there does).

    Returns (pressure-free rhs, diagonal, largest initial residual).
    """
    n = state.mesh.n_cells
    diag_idx = (np.arange(n), state.pattern.diag_slot)
    diag = sys.A.V[diag_idx].copy()
    b0 = sys.rhs
    t1 = time.perf_counter()
    grad_p = gauss_gradient(state.p, state.geom)
    state.add_op("gradient", time.perf_counter() - t1)
    rhs = b0 - state.geom.cell_volume[:, None] * grad_p
    relaxing = relax and cfg.alpha_u < 1.0
    if relaxing:
        scaled = diag / cfg.alpha_u
        sys.A.V[diag_idx] = scaled
        rhs = rhs + (scaled - diag)[:, None] * state.u.values
    # the solver normalizes each component by its own rhs norm, which turns
    # into noise/noise for the out-of-plane component of a one-cell-thick
    # mesh (its rhs is pure roundoff); the outer measure therefore rescales
    # every component against the largest rhs norm of the three
    bnorms = np.linalg.norm(rhs, axis=0)
    bscale = max(float(bnorms.max()), 1e-30)
    worst = 0.0
    t0 = time.perf_counter()
    for comp, name in enumerate(("ux", "uy", "uz")):
        try:
            x, rep = bicgstab(sys.A, rhs[:, comp], state.u.values[:, comp], cfg.momentum)
        except SolverError as e:
            raise CouplingError(f"momentum solve for {name} failed at outer "
                                f"{state.outer}: {e}") from e
        state.u.values[:, comp] = x
        state.log_solve("bicgstab", name, rep)
        worst = max(worst, rep.initial_residual * float(bnorms[comp]) / bscale)
    if relaxing:
        sys.A.V[diag_idx] = diag
    state.add_wall("momentum_solve", time.perf_counter() - t0)
    return b0, diag, worst


def _pressure_correct(state: RunState, cfg: CouplingConfig, sys: LinearSystem,
                      b0: np.ndarray, diag: np.ndarray, relax_p: bool) -> float:
    """One pressure solve (plus non-orthogonal repeats) and the explicit
    velocity/flux corrections.  Returns the first initial residual."""
    mesh, geom, pattern = state.mesh, state.geom, state.pattern
    u, p = state.u, state.p
    t0 = time.perf_counter()

    a_u = np.stack([smvp(sys.A, u.values[:, c]) for c in range(3)], axis=1)
    hvals = u.values + (b0 - a_u) / diag[:, None]
    hby_a = Field("HbyA", mesh, hvals, u.bcs, boundary=u.boundary)
    hf = interpolate_to_faces(hby_a, geom)
    phi_h = np.einsum("ij,ij->i", hf, geom.face_area)
    _, _, u_empty = _boundary_masks(u)
    phi_h[mesh.n_internal :][u_empty] = 0.0
    t1 = time.perf_counter()
    div_h = face_divergence(mesh, phi_h)
    state.add_op("divergence", time.perf_counter() - t1)

    r_au = geom.cell_volume / diag
    rauf = interpolate_cell_values(mesh, geom, r_au)
    p_before = p.values.copy()
    state.add_wall("pressure_assembly", time.perf_counter() - t0)

    first_res = None
    fdata = None
    for _ in range(cfg.n_nonorth_correctors + 1):
        t0 = time.perf_counter()
        psys = LinearSystem.zeros(pattern)
        t1 = time.perf_counter()
        fdata = laplacian(psys, rauf, p, geom, cfg.scheme, coeff=-1.0)
        state.add_op("laplacian", time.perf_counter() - t1)
        rhs = psys.rhs - div_h
        if state.pin_pressure:
            ref = cfg.pressure_ref_cell
            dref = psys.A.V[ref, pattern.diag_slot[ref]]
            rhs[ref] += dref * cfg.pressure_ref_value
            psys.A.V[ref, pattern.diag_slot[ref]] = 2.0 * dref
        state.add_wall("pressure_assembly", time.perf_counter() - t0)
        t0 = time.perf_counter()
        try:
            x, rep = cg(psys.A, rhs, p.values, cfg.pressure)
        except SolverError as e:
            raise CouplingError(f"pressure solve failed at outer {state.outer}: {e}") from e
        state.add_wall("pressure_solve", time.perf_counter() - t0)
        state.log_solve("cg", "p", rep)
        if first_res is None:
            first_res = rep.initial_residual
        p.values = x

    t0 = time.perf_counter()
    # corrected flux from the unrelaxed pressure keeps discrete continuity
    state.flux = phi_h - laplacian_face_flux(fdata, p)
    if relax_p and cfg.alpha_p < 1.0:
        p.values = p_before + cfg.alpha_p * (p.values - p_before)
    apply_bcs(p, geom, t=state.t)
    t1 = time.perf_counter()
    grad_p = gauss_gradient(p, geom)
    state.add_op("gradient", time.perf_counter() - t1)
    u.values = hvals - r_au[:, None] * grad_p
    apply_bcs(u, geom, t=state.t)
    state.add_wall("correction", time.perf_counter() - t0)
    return first_res


def simple_outer_iteration(state: RunState, cfg: CouplingConfig):
    """One SIMPLE sweep; returns normalized (momentum, pressure) residuals."""
    state.outer += 1
    sys = _momentum_matrix(state, cfg)
    b0, diag, mom_res = _solve_momentum(state, cfg, sys, relax=True)
    p_res = _pressure_correct(state, cfg, sys, b0, diag, relax_p=True)
    return state.normalized("u", mom_res), state.normalized("p", p_res)


def piso_time_step(state: RunState, cfg: CouplingConfig):
    """Advance one dt: predictor plus n_correctors pressure corrections."""
    state.outer += 1
    state.t = state.outer * cfg.dt
    apply_bcs(state.u, state.geom, t=state.t)
    apply_bcs(state.p, state.geom, t=state.t)
    u_old = state.u.values.copy()
    sys = _momentum_matrix(state, cfg, u_old=u_old)
    b0, diag, mom_res = _solve_momentum(state, cfg, sys, relax=False)
    p_res = None
    for _ in range(cfg.n_correctors):
        res = _pressure_correct(state, cfg, sys, b0, diag, relax_p=False)
        if p_res is None:
            p_res = res
    return mom_res, p_res


def continuity_error(state: RunState) -> float:
    """Largest per-cell flux imbalance, for reporting and acceptance."""
    return float(np.abs(face_divergence(state.mesh, state.flux)).max())


def kinetic_energy(state: RunState) -> float:
    return float(0.5 * (state.geom.cell_volume * (state.u.values**2).sum(axis=1)).sum())


def run_case(case, cfg: CouplingConfig = None, writer=None, verbose: bool = False,
             record_stages: bool = False) -> RunState:
    """Drive a case to its stopping point.

    SIMPLE loops until both normalized outer residuals drop below
    outer_tol or max_outer sweeps pass; PISO takes round(end_time / dt)
    steps.  writer(state, label), if given, runs every write_interval
    outer steps and once at the end.  Non-convergence is reported in
    state.converged, never raised.
    """
    if cfg is None:
        cfg = CouplingConfig.from_case_config(case.config, record_stages=record_stages)
    state = init_state(case, cfg)
    every = case.config.write_interval
    t_start = time.perf_counter()
    if cfg.algorithm == "simple":
        for _ in range(cfg.max_outer):
            ru, rp = simple_outer_iteration(state, cfg)
            if verbose:
                print(f"iter {state.outer}: u {ru:.3e} p {rp:.3e} "
                      f"(cg {state.cum_iters['cg']}, bicgstab {state.cum_iters['bicgstab']})")
            if every and state.outer % every == 0 and writer is not None:
                writer(state, f"{state.outer:06d}")
            if max(ru, rp) < cfg.outer_tol:
                state.converged = True
                break
    else:
        n_steps = int(round(cfg.end_time / cfg.dt))
        for _ in range(n_steps):
            ru, rp = piso_time_step(state, cfg)
            if verbose:
                print(f"step {state.outer} t={state.t:.6g}: u {ru:.3e} p {rp:.3e} "
                      f"(cg {state.cum_iters['cg']}, bicgstab {state.cum_iters['bicgstab']})")
            if every and state.outer % every == 0 and writer is not None:
                writer(state, f"{state.outer:06d}")
        state.converged = True  # transient runs complete by construction
    state.add_wall("total", time.perf_counter() - t_start)
    if writer is not None:
        writer(state, "final")
    if verbose and not state.converged:
        print(f"not converged after {state.outer} iterations")
    return state
