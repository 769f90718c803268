"""Unstructured polyhedral mesh with face-addressed connectivity.

The mesh is stored in owner/neighbour form: every face knows the cell that
owns it and, if it is an internal face, the cell on the other side.  Face
point loops are oriented counter-clockwise when viewed from the owner cell,
so the area vector of a face always points out of its owner.  Owner indices
are strictly smaller than neighbour indices for internal faces, internal
faces come first in the face list, and boundary faces are grouped into
contiguous patches.

Two-dimensional problems are represented as one-cell-thick 3D meshes whose
front and back planes are patches of kind "empty"; those faces carry no
fluxes and no boundary conditions.
"""

from dataclasses import dataclass, field

import numpy as np

PATCH_KINDS = ("wall", "inlet", "outlet", "empty")

# Internal faces whose cell-centre line deviates from the face normal by more
# than this angle make the over-relaxed Laplacian decomposition useless.
MAX_NONORTHOGONALITY_DEG = 80.0


class MeshError(Exception):
    """Topological or geometric defect in a mesh."""


@dataclass
class Patch:
    """Contiguous run of boundary faces sharing a physical role."""

    name: str
    kind: str
    start: int  # absolute face index of the first face in the patch
    count: int

    @property
    def faces(self):
        return np.arange(self.start, self.start + self.count)


@dataclass
class Mesh:
    """Polyhedral mesh in owner/neighbour face addressing.

    Face point loops are stored flattened: face f uses point indices
    ``face_points[face_offsets[f]:face_offsets[f+1]]``.
    """

    points: np.ndarray  # (n_points, 3) float
    face_points: np.ndarray  # flattened point loops, int
    face_offsets: np.ndarray  # (n_faces + 1,) int
    owner: np.ndarray  # (n_faces,) int
    neighbour: np.ndarray  # (n_internal,) int
    patches: list = field(default_factory=list)
    n_cells: int = 0

    @property
    def n_faces(self):
        return len(self.owner)

    @property
    def n_internal(self):
        return len(self.neighbour)

    @property
    def n_boundary(self):
        return self.n_faces - self.n_internal

    @property
    def n_points(self):
        return len(self.points)

    def patch_by_name(self, name: str) -> Patch:
        for p in self.patches:
            if p.name == name:
                return p
        raise KeyError(f"no patch named {name!r}")

    def face_patch_ids(self) -> np.ndarray:
        """Patch index per face, -1 for internal faces."""
        ids = np.full(self.n_faces, -1, dtype=np.int64)
        for i, p in enumerate(self.patches):
            ids[p.start : p.start + p.count] = i
        return ids

    def validate(self):
        """Check structural invariants, raising MeshError on the first failure."""
        nf, ni, nc = self.n_faces, self.n_internal, self.n_cells
        if len(self.face_offsets) != nf + 1:
            raise MeshError("face_offsets length does not match face count")
        counts = np.diff(self.face_offsets)
        if counts.min(initial=3) < 3:
            bad = int(np.argmax(counts < 3))
            raise MeshError(f"face {bad} has fewer than 3 points")
        if self.face_points.min(initial=0) < 0 or (
            nf and self.face_points.max() >= self.n_points
        ):
            raise MeshError("face point index out of range")
        if self.owner.min(initial=0) < 0 or (nf and self.owner.max() >= nc):
            raise MeshError("owner cell index out of range")
        if ni:
            if self.neighbour.min() < 0 or self.neighbour.max() >= nc:
                raise MeshError("neighbour cell index out of range")
            if not (self.owner[:ni] < self.neighbour).all():
                bad = int(np.argmax(~(self.owner[:ni] < self.neighbour)))
                raise MeshError(f"internal face {bad}: owner must be < neighbour")
        covered = np.zeros(nf - ni, dtype=bool)
        for p in self.patches:
            if p.kind not in PATCH_KINDS:
                raise MeshError(f"patch {p.name!r} has unknown kind {p.kind!r}")
            if p.start < ni or p.start + p.count > nf:
                raise MeshError(f"patch {p.name!r} extends outside boundary faces")
            seg = covered[p.start - ni : p.start - ni + p.count]
            if seg.any():
                raise MeshError(f"patch {p.name!r} overlaps another patch")
            seg[:] = True
        if not covered.all():
            raise MeshError("boundary faces not fully covered by patches")
        # every cell must appear on at least one face
        touched = np.zeros(nc, dtype=bool)
        touched[self.owner] = True
        touched[self.neighbour] = True
        if not touched.all():
            raise MeshError(f"cell {int(np.argmax(~touched))} has no faces")


@dataclass
class MeshGeometry:
    """Metric quantities derived from a mesh, one entry per face or cell."""

    cell_volume: np.ndarray  # (n_cells,)
    cell_centroid: np.ndarray  # (n_cells, 3)
    face_area: np.ndarray  # (n_faces, 3), points owner -> neighbour / outward
    face_area_mag: np.ndarray  # (n_faces,)
    face_centroid: np.ndarray  # (n_faces, 3)
    # internal-face quantities, length n_internal
    d: np.ndarray  # (n_internal, 3) centroid-to-centroid vector
    d_mag: np.ndarray
    weight: np.ndarray  # linear interpolation weight of the owner value
    nonorth_deg: np.ndarray  # angle between d and the face area vector
    # boundary-face quantities, length n_boundary
    d_boundary: np.ndarray  # (n_boundary, 3) owner centroid -> face centroid
    d_boundary_mag: np.ndarray

    @property
    def max_nonorth_deg(self):
        return float(self.nonorth_deg.max()) if len(self.nonorth_deg) else 0.0


def _face_triangles(mesh: Mesh):
    """Fan triangulation of every face about its point-average seed.

    Returns (a, b, seed_rep, tri_face): the two loop vertices and the seed
    point of each triangle, plus the face each triangle belongs to.
    """
    pts = mesh.points
    fp = mesh.face_points
    off = mesh.face_offsets
    counts = np.diff(off)
    seed = np.add.reduceat(pts[fp], off[:-1], axis=0) / counts[:, None]
    nxt = np.arange(len(fp)) + 1
    nxt[off[1:] - 1] = off[:-1]  # wrap each loop back to its first point
    a = pts[fp]
    b = pts[fp[nxt]]
    tri_face = np.repeat(np.arange(mesh.n_faces), counts)
    return a, b, seed[tri_face], tri_face


def compute_geometry(mesh: Mesh, check: bool = True) -> MeshGeometry:
    """Compute volumes, centroids, area vectors and interpolation factors.

    Faces are fan-triangulated about the average of their points; cells are
    decomposed into tetrahedra joining those triangles to the average of the
    cell's face centroids.  This is exact for planar faces and convex cells
    and consistent (divergence-free) for warped faces.

    Raises MeshError for zero-area faces, non-positive cell volumes, and
    (when check=True) internal faces more than MAX_NONORTHOGONALITY_DEG
    out of alignment.
    """
    ni = mesh.n_internal
    own = mesh.owner
    nbr = mesh.neighbour

    a, b, seed, tri_face = _face_triangles(mesh)
    tri_sf = 0.5 * np.cross(b - a, seed - a)
    tri_area = np.linalg.norm(tri_sf, axis=1)
    tri_ctr = (a + b + seed) / 3.0

    face_area = np.zeros((mesh.n_faces, 3))
    np.add.at(face_area, tri_face, tri_sf)
    area_sum = np.bincount(tri_face, weights=tri_area, minlength=mesh.n_faces)
    if (area_sum < 1e-30).any():
        bad = int(np.argmax(area_sum < 1e-30))
        raise MeshError(f"face {bad} is degenerate (zero area)")
    face_centroid = np.zeros((mesh.n_faces, 3))
    for k in range(3):
        np.add.at(face_centroid[:, k], tri_face, tri_area * tri_ctr[:, k])
    face_centroid /= area_sum[:, None]
    face_area_mag = np.linalg.norm(face_area, axis=1)

    # cell seed = average of the centroids of the cell's faces
    nfaces_per_cell = np.bincount(own, minlength=mesh.n_cells) + np.bincount(
        nbr, minlength=mesh.n_cells
    )
    cell_seed = np.zeros((mesh.n_cells, 3))
    np.add.at(cell_seed, own, face_centroid)
    np.add.at(cell_seed, nbr, face_centroid[:ni])
    cell_seed /= nfaces_per_cell[:, None]

    def tet_accumulate(apex_cell, tri_sel, flip):
        """Signed tet volumes and centroids from face triangles to cell seeds."""
        d = cell_seed[apex_cell]
        aa, bb, ss = a[tri_sel] - d, b[tri_sel] - d, seed[tri_sel] - d
        vol = np.einsum("ij,ij->i", aa, np.cross(bb, ss)) / 6.0
        if flip:
            vol = -vol
        ctr = (a[tri_sel] + b[tri_sel] + seed[tri_sel] + d) / 4.0
        return vol, ctr

    internal_tri = tri_face < ni
    cell_volume = np.zeros(mesh.n_cells)
    cell_centroid = np.zeros((mesh.n_cells, 3))

    for apex, sel, flip in (
        (own[tri_face], slice(None), False),
        (nbr[tri_face[internal_tri]], internal_tri, True),
    ):
        vol, ctr = tet_accumulate(apex, sel, flip)
        cells = apex
        np.add.at(cell_volume, cells, vol)
        for k in range(3):
            np.add.at(cell_centroid[:, k], cells, vol * ctr[:, k])

    if (cell_volume <= 0.0).any():
        bad = int(np.argmax(cell_volume <= 0.0))
        raise MeshError(f"cell {bad} has non-positive volume {cell_volume[bad]:g}")
    cell_centroid /= cell_volume[:, None]

    d = cell_centroid[nbr] - cell_centroid[own[:ni]]
    d_mag = np.linalg.norm(d, axis=1)
    sf_i = face_area[:ni]
    sd = np.einsum("ij,ij->i", sf_i, d)
    if (sd <= 0.0).any():
        bad = int(np.argmax(sd <= 0.0))
        raise MeshError(f"internal face {bad}: area vector points away from neighbour")
    # weight of the owner value in linear face interpolation:
    # phi_f = w*phi_own + (1-w)*phi_nbr, from projected distances along Sf
    w = np.einsum("ij,ij->i", sf_i, cell_centroid[nbr] - face_centroid[:ni]) / sd
    cosang = sd / np.maximum(d_mag * face_area_mag[:ni], 1e-300)
    nonorth = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    if check and ni and nonorth.max() > MAX_NONORTHOGONALITY_DEG:
        bad = int(np.argmax(nonorth))
        raise MeshError(
            f"internal face {bad} is {nonorth[bad]:.1f} deg non-orthogonal "
            f"(limit {MAX_NONORTHOGONALITY_DEG:g})"
        )

    d_b = face_centroid[ni:] - cell_centroid[own[ni:]]
    d_b_mag = np.linalg.norm(d_b, axis=1)

    return MeshGeometry(
        cell_volume=cell_volume,
        cell_centroid=cell_centroid,
        face_area=face_area,
        face_area_mag=face_area_mag,
        face_centroid=face_centroid,
        d=d,
        d_mag=d_mag,
        weight=w,
        nonorth_deg=nonorth,
        d_boundary=d_b,
        d_boundary_mag=d_b_mag,
    )


def cell_face_adjacency(mesh: Mesh):
    """Per-cell face table: list of (face, sign, other) triples.

    sign is +1 where the cell owns the face and -1 where it is the
    neighbour, so sign * face_area always points out of the cell.  other is
    the cell on the far side for internal faces and, for boundary faces,
    the patch index encoded as -(patch_id + 1).
    """
    ni = mesh.n_internal
    patch_ids = mesh.face_patch_ids()
    adj = [[] for _ in range(mesh.n_cells)]
    for f in range(mesh.n_faces):
        o = int(mesh.owner[f])
        if f < ni:
            n = int(mesh.neighbour[f])
            adj[o].append((f, 1, n))
            adj[n].append((f, -1, o))
        else:
            adj[o].append((f, 1, -(int(patch_ids[f]) + 1)))
    return adj


def cell_neighbour_counts(mesh: Mesh) -> np.ndarray:
    """Number of internal-face neighbours of each cell."""
    ni = mesh.n_internal
    return np.bincount(mesh.owner[:ni], minlength=mesh.n_cells) + np.bincount(
        mesh.neighbour, minlength=mesh.n_cells
    )


def max_neighbours(mesh: Mesh) -> int:
    """Largest internal-face neighbour count over all cells."""
    counts = cell_neighbour_counts(mesh)
    return int(counts.max()) if len(counts) else 0


def closedness_error(mesh: Mesh, geom: MeshGeometry) -> float:
    """Max over cells of |sum of outward face area vectors|.

    Exactly closed meshes give 0; anything above ~1e-12 times the total
    face area indicates broken connectivity or orientation.
    """
    ni = mesh.n_internal
    acc = np.zeros((mesh.n_cells, 3))
    np.add.at(acc, mesh.owner, geom.face_area)
    np.add.at(acc, mesh.neighbour, -geom.face_area[:ni])
    return float(np.linalg.norm(acc, axis=1).max())
