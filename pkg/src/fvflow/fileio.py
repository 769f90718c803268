"""Mesh file format, legacy VTK output, line sampling, CSV writers.

All formats are plain ASCII.  Floats are written with 17 significant
digits, which round-trips IEEE doubles exactly, so a write/read cycle and
repeated writes of the same data are bit-identical and diffable.

The mesh file is five fixed-order sections, each a header line with a
count followed by that many rows:

    POINTS <n_points>        x y z per row
    FACES <n_faces>          n_pts p0 p1 ... per row, loop order preserved
    OWNER <n_faces>          one cell index per row
    NEIGHBOUR <n_internal>   one cell index per row, internal faces only
    PATCHES <n_patches>      name kind start count per row

Blank lines and #-comments are allowed anywhere; parse errors report the
1-based line number.
"""

import csv

import numpy as np
from scipy.spatial import cKDTree

from .mesh import Mesh, MeshGeometry, Patch, cell_face_adjacency


class MeshFileError(Exception):
    """Malformed mesh file; message carries the line number."""


class SamplingError(Exception):
    """Sampling request that yields no in-domain points."""


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(v)
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


# --------------------------------------------------------------------------
# mesh file


def write_mesh(mesh: Mesh, path):
    lines = [f"POINTS {mesh.n_points}"]
    lines += [" ".join(f"{c:.17g}" for c in p) for p in mesh.points]
    lines.append(f"FACES {mesh.n_faces}")
    off = mesh.face_offsets
    for f in range(mesh.n_faces):
        pts = mesh.face_points[off[f]:off[f + 1]]
        lines.append(" ".join(str(int(p)) for p in (len(pts), *pts)))
    lines.append(f"OWNER {mesh.n_faces}")
    lines += [str(int(o)) for o in mesh.owner]
    lines.append(f"NEIGHBOUR {mesh.n_internal}")
    lines += [str(int(n)) for n in mesh.neighbour]
    lines.append(f"PATCHES {len(mesh.patches)}")
    lines += [f"{p.name} {p.kind} {p.start} {p.count}" for p in mesh.patches]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


class _Cursor:
    """Line iterator that skips blanks/comments and tracks line numbers."""

    def __init__(self, text):
        self.lines = text.splitlines()
        self.pos = 0  # 0-based index of the next line

    def next_tokens(self, section):
        while self.pos < len(self.lines):
            self.pos += 1
            raw = self.lines[self.pos - 1]
            body = raw.split("#", 1)[0].strip()
            if body:
                return body.split(), self.pos
        raise MeshFileError(
            f"{section}: file ends at line {len(self.lines)} before the section is complete"
        )

    def header(self, name):
        toks, ln = self.next_tokens(name)
        if len(toks) != 2 or toks[0] != name:
            raise MeshFileError(f"line {ln}: expected '{name} <count>', got {' '.join(toks)!r}")
        try:
            count = int(toks[1])
        except ValueError:
            raise MeshFileError(f"line {ln}: {name} count {toks[1]!r} is not an integer") from None
        if count < 0:
            raise MeshFileError(f"line {ln}: {name} count must be non-negative")
        return count


def _ints(toks, ln, what):
    try:
        return [int(t) for t in toks]
    except ValueError:
        raise MeshFileError(f"line {ln}: non-integer {what} in {' '.join(toks)!r}") from None


def read_mesh(path) -> Mesh:
    with open(path) as f:
        text = f.read()
    cur = _Cursor(text)

    n_points = cur.header("POINTS")
    points = np.empty((n_points, 3))
    for i in range(n_points):
        toks, ln = cur.next_tokens("POINTS")
        if len(toks) != 3:
            raise MeshFileError(f"line {ln}: expected 3 coordinates, got {len(toks)}")
        try:
            points[i] = [float(t) for t in toks]
        except ValueError:
            raise MeshFileError(f"line {ln}: non-numeric coordinate") from None

    n_faces = cur.header("FACES")
    loops = []
    for _ in range(n_faces):
        toks, ln = cur.next_tokens("FACES")
        vals = _ints(toks, ln, "point index")
        if vals[0] != len(vals) - 1:
            raise MeshFileError(
                f"line {ln}: face declares {vals[0]} points but lists {len(vals) - 1}"
            )
        if vals[0] < 3:
            raise MeshFileError(f"line {ln}: face needs at least 3 points")
        for p in vals[1:]:
            if not 0 <= p < n_points:
                raise MeshFileError(f"line {ln}: face references point {p} of {n_points}")
        loops.append(vals[1:])

    n_owner = cur.header("OWNER")
    if n_owner != n_faces:
        raise MeshFileError(f"OWNER count {n_owner} does not match FACES count {n_faces}")
    owner = np.empty(n_owner, dtype=np.int64)
    for i in range(n_owner):
        toks, ln = cur.next_tokens("OWNER")
        if len(toks) != 1:
            raise MeshFileError(f"line {ln}: expected one owner index")
        owner[i] = _ints(toks, ln, "owner index")[0]

    n_internal = cur.header("NEIGHBOUR")
    if n_internal > n_faces:
        raise MeshFileError(
            f"NEIGHBOUR count {n_internal} exceeds FACES count {n_faces}"
        )
    neighbour = np.empty(n_internal, dtype=np.int64)
    for i in range(n_internal):
        toks, ln = cur.next_tokens("NEIGHBOUR")
        if len(toks) != 1:
            raise MeshFileError(f"line {ln}: expected one neighbour index")
        neighbour[i] = _ints(toks, ln, "neighbour index")[0]

    n_patches = cur.header("PATCHES")
    patches = []
    for _ in range(n_patches):
        toks, ln = cur.next_tokens("PATCHES")
        if len(toks) != 4:
            raise MeshFileError(f"line {ln}: expected 'name kind start count'")
        start, count = _ints(toks[2:], ln, "patch range")
        patches.append(Patch(name=toks[0], kind=toks[1], start=start, count=count))

    face_points = np.array([p for loop in loops for p in loop], dtype=np.int64)
    face_offsets = np.zeros(n_faces + 1, dtype=np.int64)
    np.cumsum([len(l) for l in loops], out=face_offsets[1:])
    n_cells = int(owner.max()) + 1 if n_owner else 0
    if n_internal and int(neighbour.max()) + 1 > n_cells:
        n_cells = int(neighbour.max()) + 1
    mesh = Mesh(
        points=points,
        face_points=face_points,
        face_offsets=face_offsets,
        owner=owner,
        neighbour=neighbour,
        patches=patches,
        n_cells=n_cells,
    )
    mesh.validate()
    return mesh


# --------------------------------------------------------------------------
# legacy VTK


def _hex_connectivity(mesh: Mesh):
    """Per-cell VTK hexahedron point ordering.

    The base quad is oriented so its normal points into the cell (VTK wants
    the first four points counter-clockwise as seen from the opposite
    face); each top point is the one sharing an edge, i.e. sharing exactly
    two of the cell's faces, with the base point below it.
    """
    off = mesh.face_offsets
    loops = [mesh.face_points[off[f]:off[f + 1]] for f in range(mesh.n_faces)]
    adj = cell_face_adjacency(mesh)
    conn = np.empty((mesh.n_cells, 8), dtype=np.int64)
    for c, entries in enumerate(adj):
        if len(entries) != 6 or any(len(loops[f]) != 4 for f, _, _ in entries):
            raise MeshFileError(
                f"VTK writer needs hexahedral cells; cell {c} has "
                f"{len(entries)} faces"
            )
        face_sets = [frozenset(int(p) for p in loops[f]) for f, _, _ in entries]
        f0, sign, _ = entries[0]
        base = [int(p) for p in loops[f0]]
        if sign > 0:  # stored loop normal points out of the owner cell
            base = base[::-1]
        top_set = next((s for s in face_sets[1:] if not (s & face_sets[0])), None)
        if top_set is None:
            raise MeshFileError(f"cell {c} has no face opposite its first face")
        for i, b in enumerate(base):
            counts = {}
            for s in face_sets:
                if b in s:
                    for t in s & top_set:
                        counts[t] = counts.get(t, 0) + 1
            conn[c, i] = b
            conn[c, i + 4] = max(counts, key=counts.get)
    return conn


def write_vtk(mesh: Mesh, fields: dict, path, title="fvflow fields"):
    """Legacy ASCII unstructured-grid file with one CELL_DATA entry per field.

    fields maps name -> (n_cells,) scalar or (n_cells, 3) vector array.
    """
    conn = _hex_connectivity(mesh)
    out = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_points} double",
    ]
    out += [" ".join(f"{c:.17g}" for c in p) for p in mesh.points]
    out.append(f"CELLS {mesh.n_cells} {9 * mesh.n_cells}")
    out += ["8 " + " ".join(str(p) for p in row) for row in conn]
    out.append(f"CELL_TYPES {mesh.n_cells}")
    out += ["12"] * mesh.n_cells
    if fields:
        out.append(f"CELL_DATA {mesh.n_cells}")
    for name, values in fields.items():
        values = np.asarray(values)
        if values.shape[0] != mesh.n_cells:
            raise ValueError(f"field {name!r} has {values.shape[0]} entries "
                             f"for {mesh.n_cells} cells")
        if values.ndim == 1:
            out.append(f"SCALARS {name} double 1")
            out.append("LOOKUP_TABLE default")
            out += [f"{v:.17g}" for v in values]
        elif values.ndim == 2 and values.shape[1] == 3:
            out.append(f"VECTORS {name} double")
            out += [" ".join(f"{c:.17g}" for c in row) for row in values]
        else:
            raise ValueError(f"field {name!r} must be (n,) or (n, 3)")
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")


# --------------------------------------------------------------------------
# line sampling


def _outward_faces(mesh: Mesh):
    """(face, sign) pairs per cell with sign * area pointing outward."""
    return [[(f, s) for f, s, _ in entries] for entries in cell_face_adjacency(mesh)]


def point_in_cell(pt, cell, geom: MeshGeometry, outward, tol):
    for f, s in outward[cell]:
        if s * np.dot(pt - geom.face_centroid[f], geom.face_area[f]) > tol:
            return False
    return True


def sample_line(mesh: Mesh, geom: MeshGeometry, values, p0, p1, n: int):
    """Nearest-cell samples at n uniform stations from p0 to p1.

    Returns an (n_inside, 1 + n_comp) array whose first column is the arc
    length from p0; stations whose nearest cell does not geometrically
    contain them (the segment has left the domain) are dropped.  Raises
    SamplingError when nothing remains.
    """
    if n < 2:
        raise ValueError("need at least 2 sample points")
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    values = np.asarray(values, dtype=float)
    cols = values.reshape(len(values), -1)
    t = np.linspace(0.0, 1.0, n)
    pts = p0 + t[:, None] * (p1 - p0)
    s = t * np.linalg.norm(p1 - p0)

    tree = cKDTree(geom.cell_centroid)
    _, cells = tree.query(pts)
    outward = _outward_faces(mesh)
    # the plane test compares distance * area, so the slack scales with the
    # cell volume; it only needs to beat roundoff for on-boundary stations
    keep = np.array(
        [
            point_in_cell(pts[i], int(cells[i]), geom, outward,
                          1e-9 * geom.cell_volume[cells[i]])
            for i in range(n)
        ]
    )
    if not keep.any():
        raise SamplingError("sample segment lies outside the mesh")
    rows = np.column_stack([s[keep], cols[cells[keep]]])
    return rows


# --------------------------------------------------------------------------
# CSV


def write_csv(path, header, rows):
    """Delimited writer with repr-faithful float formatting."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_fields_csv(path, mesh: Mesh, geom: MeshGeometry, u, p):
    header = ["cell", "x", "y", "z", "u_x", "u_y", "u_z", "p"]
    rows = (
        (c, *geom.cell_centroid[c], *u[c], p[c]) for c in range(mesh.n_cells)
    )
    write_csv(path, header, rows)
