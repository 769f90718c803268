"""Finite-volume fields, boundary conditions and discrete operators.

Every operator that produces matrix coefficients follows one convention:
a term T(phi) of the governing equation is discretized as M*phi - s, and
the operator adds coeff*M into the system matrix and coeff*s into the
system right-hand side.  The assembled LinearSystem then reads A x = rhs.
With that convention the Laplacian operator itself carries a negative
diagonal (each internal face of a uniform cubic mesh contributes +gamma*h
off-diagonal and -gamma*h on the diagonal), and the momentum equation
subtracts it with coeff = -1.

The Laplacian splits each face flux with the over-relaxed decomposition
S_f = Delta_f + k_f, Delta_f parallel to the centroid line d: the Delta
part is implicit with coefficient gamma*|S_f|^2/(S_f . d) (which reduces
to gamma*|S_f|/|d| on orthogonal meshes), the k part becomes an explicit
deferred correction gamma*k_f . (grad phi)_f, scaled by the scheme
limiter.  Faces in "empty" patches carry nothing at all.
"""

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, MeshGeometry
from .sparse import HybridMatrix, SparsityPattern

TWO_PI = 2.0 * np.pi


class FvmError(Exception):
    pass


# ---------------------------------------------------------------- boundaries


class BoundaryCondition:
    pass


@dataclass
class FixedValue(BoundaryCondition):
    value: object  # scalar, (3,), or per-face array


@dataclass
class FixedValueTimed(BoundaryCondition):
    """Inflow along the inward face normal: speed u0*sin(2*pi*freq*t)."""

    u0: float
    freq: float


@dataclass
class ZeroGradient(BoundaryCondition):
    pass


@dataclass
class NoSlip(BoundaryCondition):
    pass


@dataclass
class FixedMassFlow(BoundaryCondition):
    """Uniform inflow normal speed rate/(rho * patch area)."""

    rate: float  # kg/s
    rho: float  # kg/m^3


@dataclass
class FixedPressure(BoundaryCondition):
    value: float


@dataclass
class Empty(BoundaryCondition):
    pass


_BC_TAGS = {
    "fixed_value": lambda a: FixedValue(value=np.asarray(a[0]) if len(a) == 1 else float(a[0])),
    "sine_inlet": lambda a: FixedValueTimed(u0=float(a[0]), freq=float(a[1])),
    "mass_flow": lambda a: FixedMassFlow(rate=float(a[0]), rho=float(a[1])),
    "no_slip": lambda a: NoSlip(),
    "zero_gradient": lambda a: ZeroGradient(),
    "empty": lambda a: Empty(),
}


def bc_from_tuple(spec: tuple) -> BoundaryCondition:
    """Build a condition from a config tuple like ("fixed_value", (1,0,0))."""
    tag, args = spec[0], spec[1:]
    if tag not in _BC_TAGS:
        raise FvmError(f"unknown boundary condition tag {tag!r}")
    bc = _BC_TAGS[tag](args)
    if isinstance(bc, FixedMassFlow) and bc.rho <= 0:
        raise FvmError("mass-flow condition needs rho > 0")
    return bc


def is_value_bc(bc) -> bool:
    """Conditions that pin the face value (Dirichlet-like)."""
    return isinstance(bc, (FixedValue, FixedValueTimed, NoSlip, FixedMassFlow, FixedPressure))


@dataclass
class SchemeConfig:
    convection: str = "upwind"  # upwind | linear
    nonorth_correction: bool = True
    limiter: float = 1.0  # scales the explicit non-orthogonal term
    # time integration is implicit Euler; there is no alternative here

    def __post_init__(self):
        if self.convection not in ("upwind", "linear"):
            raise FvmError(f"unknown convection scheme {self.convection!r}")
        if not 0.0 <= self.limiter <= 1.0:
            raise FvmError("limiter must lie in [0, 1]")


# -------------------------------------------------------------------- fields


@dataclass
class Field:
    """Cell-centred unknown with one boundary condition per patch.

    values has shape (n_cells,) for scalars or (n_cells, 3) for vectors;
    boundary mirrors it over the boundary faces.  face_flux, used by the
    velocity field, carries volumetric face fluxes in m^3/s.
    """

    name: str
    mesh: Mesh
    values: np.ndarray
    bcs: dict
    boundary: np.ndarray = None
    face_flux: np.ndarray = None

    def __post_init__(self):
        patch_names = {p.name for p in self.mesh.patches}
        if set(self.bcs) != patch_names:
            missing = patch_names - set(self.bcs)
            extra = set(self.bcs) - patch_names
            raise FvmError(
                f"field {self.name!r}: boundary coverage mismatch "
                f"(missing {sorted(missing)}, unknown {sorted(extra)})"
            )
        if len(self.values) != self.mesh.n_cells:
            raise FvmError(f"field {self.name!r}: cell value count mismatch")
        if self.boundary is None:
            shape = (self.mesh.n_boundary,) + self.values.shape[1:]
            self.boundary = np.zeros(shape)

    @property
    def rank(self):
        return "vector" if self.values.ndim == 2 else "scalar"


def make_scalar(name, mesh, bcs, init=0.0) -> Field:
    return Field(name, mesh, np.full(mesh.n_cells, float(init)), dict(bcs))


def make_vector(name, mesh, bcs, init=(0.0, 0.0, 0.0)) -> Field:
    vals = np.tile(np.asarray(init, dtype=float), (mesh.n_cells, 1))
    return Field(name, mesh, vals, dict(bcs))


def apply_bcs(field: Field, geom: MeshGeometry, t: float = 0.0):
    """Refresh boundary face values from the conditions at time t."""
    mesh = field.mesh
    ni = mesh.n_internal
    for patch in mesh.patches:
        bc = field.bcs[patch.name]
        sl = slice(patch.start - ni, patch.start - ni + patch.count)
        faces = slice(patch.start, patch.start + patch.count)
        own = mesh.owner[faces]
        if isinstance(bc, (FixedValue, FixedPressure)):
            field.boundary[sl] = bc.value
        elif isinstance(bc, NoSlip):
            field.boundary[sl] = 0.0
        elif isinstance(bc, FixedValueTimed):
            speed = bc.u0 * np.sin(TWO_PI * bc.freq * t)
            n_hat = geom.face_area[faces] / geom.face_area_mag[faces, None]
            field.boundary[sl] = -speed * n_hat  # inward
        elif isinstance(bc, FixedMassFlow):
            area = float(geom.face_area_mag[faces].sum())
            if area <= 0.0:
                raise FvmError(f"mass-flow patch {patch.name!r} has zero area")
            speed = bc.rate / (bc.rho * area)
            n_hat = geom.face_area[faces] / geom.face_area_mag[faces, None]
            field.boundary[sl] = -speed * n_hat
        elif isinstance(bc, (ZeroGradient, Empty)):
            field.boundary[sl] = field.values[own]
        else:
            raise FvmError(f"unhandled boundary condition {type(bc).__name__}")


def _boundary_masks(field: Field):
    """Boolean masks over boundary faces: (value-pinned, zero-grad, empty)."""
    mesh = field.mesh
    ni = mesh.n_internal
    nb = mesh.n_boundary
    value = np.zeros(nb, dtype=bool)
    zerog = np.zeros(nb, dtype=bool)
    empty = np.zeros(nb, dtype=bool)
    for patch in mesh.patches:
        bc = field.bcs[patch.name]
        sl = slice(patch.start - ni, patch.start - ni + patch.count)
        if isinstance(bc, Empty):
            empty[sl] = True
        elif is_value_bc(bc):
            value[sl] = True
        else:
            zerog[sl] = True
    return value, zerog, empty


def interpolate_to_faces(field: Field, geom: MeshGeometry) -> np.ndarray:
    """Linear face interpolation; boundary faces take their BC values.

    Zero-gradient and empty faces use the instantaneous owner-cell value,
    not the possibly stale stored boundary array.
    """
    mesh = field.mesh
    ni = mesh.n_internal
    w = geom.weight
    if field.rank == "vector":
        w = w[:, None]
    vals = field.values
    internal = w * vals[mesh.owner[:ni]] + (1.0 - w) * vals[mesh.neighbour]
    value_m, _, _ = _boundary_masks(field)
    bvals = np.where(
        (value_m[:, None] if field.rank == "vector" else value_m),
        field.boundary,
        vals[mesh.owner[ni:]],
    )
    return np.concatenate([internal, bvals])


def interpolate_cell_values(mesh: Mesh, geom: MeshGeometry, values: np.ndarray) -> np.ndarray:
    """Face interpolation of a raw cell array; boundary faces copy the owner."""
    ni = mesh.n_internal
    w = geom.weight
    internal = w * values[mesh.owner[:ni]] + (1.0 - w) * values[mesh.neighbour]
    return np.concatenate([internal, values[mesh.owner[ni:]]])


def face_divergence(mesh: Mesh, face_flux: np.ndarray) -> np.ndarray:
    """Per-cell sum of signed face fluxes, positive out of the owner."""
    div = np.zeros(mesh.n_cells)
    np.add.at(div, mesh.owner, face_flux)
    np.add.at(div, mesh.neighbour, -face_flux[: mesh.n_internal])
    return div


def gauss_gradient(field: Field, geom: MeshGeometry) -> np.ndarray:
    """Cell gradients by Gauss' theorem over face values.

    Returns (n, 3) for scalar fields and (n, 3, 3) for vectors, with
    grad[c, i, d] = d u_i / d x_d.
    """
    mesh = field.mesh
    ni = mesh.n_internal
    fv = interpolate_to_faces(field, geom)
    sf = geom.face_area
    if field.rank == "scalar":
        contrib = fv[:, None] * sf
    else:
        contrib = fv[:, :, None] * sf[:, None, :]
    grad = np.zeros((mesh.n_cells,) + contrib.shape[1:])
    np.add.at(grad, mesh.owner, contrib)
    np.add.at(grad, mesh.neighbour, -contrib[:ni])
    return grad / geom.cell_volume.reshape((-1,) + (1,) * (grad.ndim - 1))


# ------------------------------------------------------------------ systems


@dataclass
class LinearSystem:
    """A x = rhs under assembly; rhs is (n,) or (n, 3)."""

    A: HybridMatrix
    rhs: np.ndarray

    @classmethod
    def zeros(cls, pattern: SparsityPattern, rank: str = "scalar"):
        shape = (pattern.n,) if rank == "scalar" else (pattern.n, 3)
        return cls(A=HybridMatrix.zeros(pattern), rhs=np.zeros(shape))

    @property
    def pattern(self):
        return self.A.pattern


def _face_gamma(gamma, n_faces):
    g = np.asarray(gamma, dtype=float)
    if g.ndim == 0:
        return np.full(n_faces, float(g))
    if g.shape != (n_faces,):
        raise FvmError("gamma must be a scalar or a per-face array")
    return g


def _overrelaxed_split(sf, d):
    """Implicit coefficient a = |S|^2/(S.d) and explicit rest k = S - a*d.

    The decomposition S = Delta + k with Delta = a*d parallel to d; a*|d|
    is the implicit distance-weighted coefficient.
    """
    ss = np.einsum("ij,ij->i", sf, sf)
    sd = np.einsum("ij,ij->i", sf, d)
    a = ss / sd
    k = sf - a[:, None] * d
    return a, k


@dataclass
class LaplacianFaceData:
    """Per-face record of the assembled laplacian, before the coeff factor.

    coef holds gamma*|S|^2/(S.d) on internal and value-pinned boundary
    faces (zero elsewhere); corr holds the explicit non-orthogonal flux
    frozen at assembly time.  laplacian_face_flux combines them with the
    solved field so the reconstructed face fluxes sum, cell by cell, to
    exactly the discrete operator that was solved.
    """

    coef: np.ndarray
    corr: np.ndarray


def laplacian(sys: LinearSystem, gamma, field: Field, geom: MeshGeometry,
              scheme: SchemeConfig, coeff: float = 1.0) -> LaplacianFaceData:
    """Add coeff * laplacian(gamma, phi) to the system.

    Implicit over-relaxed orthogonal part on internal and value-pinned
    boundary faces; explicit limited correction gamma*k_f.(grad phi)_f
    when the scheme asks for it.  Returns the per-face data needed to
    reconstruct consistent face fluxes afterwards.
    """
    mesh = field.mesh
    ni = mesh.n_internal
    p = sys.pattern
    gamma_f = _face_gamma(gamma, mesh.n_faces)
    fdata = LaplacianFaceData(
        coef=np.zeros(mesh.n_faces),
        corr=np.zeros((mesh.n_faces,) if field.rank == "scalar" else (mesh.n_faces, 3)),
    )

    if (geom.d_mag == 0.0).any():
        raise FvmError(f"coincident centroids at internal face {int(np.argmax(geom.d_mag == 0.0))}")

    a_int, k_int = _overrelaxed_split(geom.face_area[:ni], geom.d)
    w_int = coeff * gamma_f[:ni] * a_int
    fdata.coef[:ni] = gamma_f[:ni] * a_int
    sys.A.add_at(p.face_addr[:, 0], w_int)
    sys.A.add_at(p.face_addr[:, 1], w_int)
    sys.A.add_at(p.diag_addr[mesh.owner[:ni]], -w_int)
    sys.A.add_at(p.diag_addr[mesh.neighbour], -w_int)

    value_m, _, _ = _boundary_masks(field)
    bsel = np.nonzero(value_m)[0]
    bfaces = bsel + ni
    own_b = mesh.owner[bfaces]
    if len(bsel):
        if (geom.d_boundary_mag[bsel] == 0.0).any():
            bad = bsel[np.argmax(geom.d_boundary_mag[bsel] == 0.0)]
            raise FvmError(f"coincident centroids at boundary face {int(bad) + ni}")
        a_b, k_b = _overrelaxed_split(geom.face_area[bfaces], geom.d_boundary[bsel])
        w_b = coeff * gamma_f[bfaces] * a_b
        fdata.coef[bfaces] = gamma_f[bfaces] * a_b
        sys.A.add_at(p.diag_addr[own_b], -w_b)
        # T = M phi - s: the explicit Dirichlet part enters s with a minus
        phi_b = field.boundary[bsel]
        if field.rank == "vector":
            sys.rhs[own_b] -= w_b[:, None] * phi_b
        else:
            np.add.at(sys.rhs, own_b, -w_b * phi_b)

    if scheme.nonorth_correction and scheme.limiter > 0.0:
        lim = scheme.limiter
        grad = gauss_gradient(field, geom)
        w = geom.weight
        gf = w.reshape((-1,) + (1,) * (grad.ndim - 1)) * grad[mesh.owner[:ni]] + (
            1.0 - w.reshape((-1,) + (1,) * (grad.ndim - 1))
        ) * grad[mesh.neighbour]
        if field.rank == "scalar":
            corr = np.einsum("ij,ij->i", k_int, gf) * gamma_f[:ni] * lim
            np.add.at(sys.rhs, mesh.owner[:ni], -coeff * corr)
            np.add.at(sys.rhs, mesh.neighbour, coeff * corr)
        else:
            corr = np.einsum("fij,fj->fi", gf, k_int) * (gamma_f[:ni] * lim)[:, None]
            np.add.at(sys.rhs, mesh.owner[:ni], -coeff * corr)
            np.add.at(sys.rhs, mesh.neighbour, coeff * corr)
        fdata.corr[:ni] = corr
        if len(bsel):
            gb = grad[own_b]
            if field.rank == "scalar":
                corr_b = np.einsum("ij,ij->i", k_b, gb) * gamma_f[bfaces] * lim
                np.add.at(sys.rhs, own_b, -coeff * corr_b)
            else:
                corr_b = np.einsum("fij,fj->fi", gb, k_b) * (gamma_f[bfaces] * lim)[:, None]
                np.add.at(sys.rhs, own_b, -coeff * corr_b)
            fdata.corr[bfaces] = corr_b
    return fdata


def laplacian_face_flux(fdata: LaplacianFaceData, field: Field) -> np.ndarray:
    """Face fluxes of the unit-coeff laplacian recorded by an assembly.

    Uses the field's current cell values with the correction frozen at
    assembly time, exactly mirroring the solved operator: summing these
    fluxes per cell (owner positive) reproduces M*phi - s.
    """
    mesh = field.mesh
    ni = mesh.n_internal
    vals = field.values
    value_m, _, _ = _boundary_masks(field)
    own_b = mesh.owner[ni:]
    if field.rank == "vector":
        bval = np.where(value_m[:, None], field.boundary, vals[own_b])
        dphi = np.concatenate([vals[mesh.neighbour] - vals[mesh.owner[:ni]], bval - vals[own_b]])
        return fdata.coef[:, None] * dphi + fdata.corr
    bval = np.where(value_m, field.boundary, vals[own_b])
    dphi = np.concatenate([vals[mesh.neighbour] - vals[mesh.owner[:ni]], bval - vals[own_b]])
    return fdata.coef * dphi + fdata.corr


def divergence_convection(sys: LinearSystem, flux: np.ndarray, field: Field,
                          scheme: SchemeConfig, geom: MeshGeometry = None,
                          coeff: float = 1.0):
    """Add coeff * div(flux, phi), implicit in phi.

    Upwind takes the face value from the upstream cell (flux >= 0 means
    owner side); linear uses the interpolation weights and therefore needs
    geom.  Value-pinned boundary faces convect the boundary value
    explicitly; zero-gradient faces convect the owner value implicitly
    while the flux leaves the domain and nothing when it re-enters; empty
    faces are skipped.
    """
    mesh = field.mesh
    ni = mesh.n_internal
    p = sys.pattern
    if flux is None or len(flux) != mesh.n_faces:
        raise FvmError("divergence needs a flux value for every face")
    f_int = flux[:ni]

    if scheme.convection == "upwind":
        w_own = (f_int >= 0.0).astype(float)  # share taken from the owner
    else:
        if geom is None:
            raise FvmError("linear convection needs the mesh geometry")
        w_own = geom.weight
    c_own = coeff * f_int * w_own
    c_nbr = coeff * f_int * (1.0 - w_own)
    # owner row: + F*phi_f ; neighbour row: - F*phi_f
    sys.A.add_at(p.diag_addr[mesh.owner[:ni]], c_own)
    sys.A.add_at(p.face_addr[:, 0], c_nbr)
    sys.A.add_at(p.face_addr[:, 1], -c_own)
    sys.A.add_at(p.diag_addr[mesh.neighbour], -c_nbr)

    value_m, zerog_m, _ = _boundary_masks(field)
    f_b = flux[ni:]
    own_b_all = mesh.owner[ni:]
    vsel = np.nonzero(value_m)[0]
    if len(vsel):
        contrib = coeff * f_b[vsel]
        phi_b = field.boundary[vsel]
        if field.rank == "vector":
            sys.rhs[own_b_all[vsel]] -= contrib[:, None] * phi_b
        else:
            np.add.at(sys.rhs, own_b_all[vsel], -contrib * phi_b)
    zsel = np.nonzero(zerog_m)[0]
    if len(zsel):
        # outflow convects the owner value implicitly; reversed (entering)
        # flux would subtract from the diagonal and destabilize the solve,
        # and its upstream momentum is unknown anyway, so it carries nothing
        sys.A.add_at(p.diag_addr[own_b_all[zsel]],
                     coeff * np.maximum(f_b[zsel], 0.0))


def ddt_euler(sys: LinearSystem, field: Field, old_values: np.ndarray,
              dt: float, geom: MeshGeometry, coeff: float = 1.0):
    """Implicit Euler time term: V/dt on the diagonal, V*phi_old/dt as source."""
    if dt <= 0.0:
        raise FvmError("dt must be positive")
    p = sys.pattern
    vdt = coeff * geom.cell_volume / dt
    sys.A.add_at(p.diag_addr, vdt)
    if field.rank == "vector":
        sys.rhs += vdt[:, None] * old_values
    else:
        sys.rhs += vdt * old_values


def rhie_chow_flux(u: Field, p_field: Field, a_diag: np.ndarray,
                   geom: MeshGeometry) -> np.ndarray:
    """Face volume fluxes with pressure-gradient smoothing.

    F_f = S_f . u_bar_f - D_bar_f a_f [(p_N - p_O) - (grad p)_f . d], the
    collocated-grid flux that suppresses checkerboard pressure modes.
    D = V/a_diag is interpolated to faces; a_f = |S|^2/(S.d).
    """
    mesh = u.mesh
    ni = mesh.n_internal
    if (a_diag == 0.0).any():
        raise FvmError(f"zero momentum diagonal at cell {int(np.argmax(a_diag == 0.0))}")
    own, nbr = mesh.owner, mesh.neighbour

    uf = interpolate_to_faces(u, geom)
    flux = np.einsum("ij,ij->i", uf, geom.face_area)

    d_cell = geom.cell_volume / a_diag
    w = geom.weight
    d_f = w * d_cell[own[:ni]] + (1.0 - w) * d_cell[nbr]
    a_geom, _ = _overrelaxed_split(geom.face_area[:ni], geom.d)
    grad_p = gauss_gradient(p_field, geom)
    gp_f = w[:, None] * grad_p[own[:ni]] + (1.0 - w[:, None]) * grad_p[nbr]
    dp = p_field.values[nbr] - p_field.values[own[:ni]]
    flux[:ni] -= d_f * a_geom * (dp - np.einsum("ij,ij->i", gp_f, geom.d))

    # boundary: pinned velocity values already set the flux via uf above;
    # pressure smoothing applies where the pressure is pinned instead
    u_value, _, u_empty = _boundary_masks(u)
    p_value, _, _ = _boundary_masks(p_field)
    psel = np.nonzero(p_value & ~u_value & ~u_empty)[0]
    if len(psel):
        bfaces = psel + ni
        own_b = mesh.owner[bfaces]
        a_b, _ = _overrelaxed_split(geom.face_area[bfaces], geom.d_boundary[psel])
        dp_b = p_field.boundary[psel] - p_field.values[own_b]
        gdotd = np.einsum("ij,ij->i", grad_p[own_b], geom.d_boundary[psel])
        flux[bfaces] -= d_cell[own_b] * a_b * (dp_b - gdotd)
    if u_empty.any():
        flux[ni:][u_empty] = 0.0
    return flux
