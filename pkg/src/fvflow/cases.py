"""Built-in test cases: lid-driven cavity, pulsatile channel, skewed duct.

All three run on block-structured hexahedral meshes produced by box_mesh,
which emits faces in canonical order (internal faces sorted by owner then
neighbour, boundary faces grouped per patch).  The skewed duct shears an
orthogonal channel sideways so that every internal face of constant-x
orientation is non-orthogonal by exactly the shear angle; it serves as the
non-orthogonal stress case.
"""

from dataclasses import dataclass

import numpy as np

from .config import BoundarySpec, CaseConfig
from .mesh import Mesh, Patch

# side id -> (axis, at_end); used when assembling patch face lists
_SIDES = {"x-": (0, 0), "x+": (0, 1), "y-": (1, 0), "y+": (1, 1), "z-": (2, 0), "z+": (2, 1)}


def box_counts(nx: int, ny: int, nz: int):
    """Cell and face counts of an nx x ny x nz box mesh."""
    cells = nx * ny * nz
    internal = (nx - 1) * ny * nz + nx * (ny - 1) * nz + nx * ny * (nz - 1)
    boundary = 2 * (ny * nz + nx * nz + nx * ny)
    return cells, internal + boundary


def box_mesh(nx, ny, nz, lx, ly, lz, patch_sides, shear_xy=0.0) -> Mesh:
    """Hexahedral box [0,lx] x [0,ly] x [0,lz] split into nx*ny*nz cells.

    patch_sides: list of (name, kind, sides) with sides drawn from
    {x-, x+, y-, y+, z-, z+}; together they must cover all six sides.
    shear_xy displaces points by x += shear_xy * y, producing uniform
    non-orthogonality of atan(shear_xy) on x-normal internal faces.
    """
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    zs = np.linspace(0.0, lz, nz + 1)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1).transpose(2, 1, 0, 3).reshape(-1, 3)
    if shear_xy:
        pts = pts.copy()
        pts[:, 0] += shear_xy * pts[:, 1]

    def pid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    def cid(i, j, k):
        return i + nx * (j + ny * k)

    quads = []
    owners = []
    nbrs = []

    # internal faces, one bundle per direction; quad loops are CCW seen
    # from the owner (lower-index) cell so area vectors point owner->nbr
    i, j, k = np.meshgrid(np.arange(nx - 1), np.arange(ny), np.arange(nz), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    quads.append(
        np.stack(
            [pid(i + 1, j, k), pid(i + 1, j + 1, k), pid(i + 1, j + 1, k + 1), pid(i + 1, j, k + 1)],
            axis=1,
        )
    )
    owners.append(cid(i, j, k))
    nbrs.append(cid(i + 1, j, k))

    i, j, k = np.meshgrid(np.arange(nx), np.arange(ny - 1), np.arange(nz), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    quads.append(
        np.stack(
            [pid(i, j + 1, k), pid(i, j + 1, k + 1), pid(i + 1, j + 1, k + 1), pid(i + 1, j + 1, k)],
            axis=1,
        )
    )
    owners.append(cid(i, j, k))
    nbrs.append(cid(i, j + 1, k))

    i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz - 1), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    quads.append(
        np.stack(
            [pid(i, j, k + 1), pid(i + 1, j, k + 1), pid(i + 1, j + 1, k + 1), pid(i, j + 1, k + 1)],
            axis=1,
        )
    )
    owners.append(cid(i, j, k))
    nbrs.append(cid(i, j, k + 1))

    quads = np.concatenate(quads)
    owners = np.concatenate(owners)
    nbrs = np.concatenate(nbrs)
    order = np.lexsort((nbrs, owners))
    quads, owners, nbrs = quads[order], owners[order], nbrs[order]

    def side_faces(axis, at_end):
        """Boundary quads with outward orientation, plus their owner cells."""
        if axis == 0:
            j, k = np.meshgrid(np.arange(ny), np.arange(nz), indexing="ij")
            j, k = j.ravel(), k.ravel()
            if at_end:
                quad = [pid(nx, j, k), pid(nx, j + 1, k), pid(nx, j + 1, k + 1), pid(nx, j, k + 1)]
                own = cid(nx - 1, j, k)
            else:
                quad = [pid(0, j, k), pid(0, j, k + 1), pid(0, j + 1, k + 1), pid(0, j + 1, k)]
                own = cid(0, j, k)
        elif axis == 1:
            i, k = np.meshgrid(np.arange(nx), np.arange(nz), indexing="ij")
            i, k = i.ravel(), k.ravel()
            if at_end:
                quad = [pid(i, ny, k), pid(i, ny, k + 1), pid(i + 1, ny, k + 1), pid(i + 1, ny, k)]
                own = cid(i, ny - 1, k)
            else:
                quad = [pid(i, 0, k), pid(i + 1, 0, k), pid(i + 1, 0, k + 1), pid(i, 0, k + 1)]
                own = cid(i, 0, k)
        else:
            i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
            i, j = i.ravel(), j.ravel()
            if at_end:
                quad = [pid(i, j, nz), pid(i + 1, j, nz), pid(i + 1, j + 1, nz), pid(i, j + 1, nz)]
                own = cid(i, j, nz - 1)
            else:
                quad = [pid(i, j, 0), pid(i, j + 1, 0), pid(i + 1, j + 1, 0), pid(i + 1, j, 0)]
                own = cid(i, j, 0)
        return np.stack(quad, axis=1), own

    patches = []
    bquads = [quads]
    bown = [owners]
    start = len(owners)
    seen = set()
    for name, kind, sides in patch_sides:
        count = 0
        for s in sides:
            if s in seen:
                raise ValueError(f"side {s} assigned to two patches")
            seen.add(s)
            q, o = side_faces(*_SIDES[s])
            bquads.append(q)
            bown.append(o)
            count += len(o)
        patches.append(Patch(name=name, kind=kind, start=start, count=count))
        start += count
    if seen != set(_SIDES):
        raise ValueError(f"sides not covered by patches: {sorted(set(_SIDES) - seen)}")

    quads = np.concatenate(bquads)
    owners = np.concatenate(bown)
    mesh = Mesh(
        points=pts,
        face_points=quads.ravel().astype(np.int64),
        face_offsets=4 * np.arange(len(owners) + 1, dtype=np.int64),
        owner=owners.astype(np.int64),
        neighbour=nbrs.astype(np.int64),
        patches=patches,
        n_cells=nx * ny * nz,
    )
    mesh.validate()
    return mesh


@dataclass
class Case:
    """A mesh plus the configuration needed to run it."""

    name: str
    mesh: Mesh
    config: CaseConfig


def gen_cavity(n: int) -> Case:
    """Lid-driven cubic cavity, Re = u_lid * L / nu = 10.

    0.1 m cube, top wall (y+) sliding at 1 m/s in +x, all other walls
    fixed.  Steady problem; preset for the SIMPLE loop.
    """
    mesh = box_mesh(
        n, n, n, 0.1, 0.1, 0.1,
        [("lid", "wall", ["y+"]), ("walls", "wall", ["x-", "x+", "y-", "z-", "z+"])],
    )
    cfg = CaseConfig()
    cfg.nu = 0.01
    cfg.algorithm = "simple"
    cfg.boundary = {
        "lid": BoundarySpec(u=("fixed_value", (1.0, 0.0, 0.0)), p=("zero_gradient",)),
        "walls": BoundarySpec(u=("no_slip",), p=("zero_gradient",)),
    }
    return Case(name=f"cavity{n}", mesh=mesh, config=cfg)


def gen_channel(nx: int, ny: int, length: float = 0.16, height: float = 0.02) -> Case:
    """Straight 2D channel with a sinusoidally pulsed inlet.

    One cell thick in z with empty front/back planes.  Inlet speed is
    u0*sin(2*pi*f*t) along +x; outlet holds pressure at zero.  Preset for
    the PISO loop at dt = 0.1 ms.
    """
    mesh = box_mesh(
        nx, ny, 1, length, height, height / ny,
        [
            ("inlet", "inlet", ["x-"]),
            ("outlet", "outlet", ["x+"]),
            ("walls", "wall", ["y-", "y+"]),
            ("frontAndBack", "empty", ["z-", "z+"]),
        ],
    )
    cfg = CaseConfig()
    cfg.nu = 3.3e-6
    cfg.algorithm = "piso"
    cfg.dt = 1e-4
    cfg.end_time = 0.5
    cfg.boundary = {
        "inlet": BoundarySpec(u=("sine_inlet", 0.01, 0.5), p=("zero_gradient",)),
        "outlet": BoundarySpec(u=("zero_gradient",), p=("fixed_value", 0.0)),
        "walls": BoundarySpec(u=("no_slip",), p=("zero_gradient",)),
        "frontAndBack": BoundarySpec(u=("empty",), p=("empty",)),
    }
    return Case(name=f"channel{nx}x{ny}", mesh=mesh, config=cfg)


def gen_skewed_duct(
    nx: int, ny: int, skew_deg: float, length: float = 1.0, height: float = 1.0
) -> Case:
    """Sheared duct whose x-normal faces are skew_deg non-orthogonal.

    Same boundary layout as the channel but with a steady mass-flow inlet;
    used to exercise the non-orthogonal correction.  skew_deg up to 45.
    """
    if not 0.0 <= skew_deg <= 45.0:
        raise ValueError("skew_deg must be in [0, 45]")
    mesh = box_mesh(
        nx, ny, 1, length, height, height / ny,
        [
            ("inlet", "inlet", ["x-"]),
            ("outlet", "outlet", ["x+"]),
            ("walls", "wall", ["y-", "y+"]),
            ("frontAndBack", "empty", ["z-", "z+"]),
        ],
        shear_xy=np.tan(np.radians(skew_deg)),
    )
    cfg = CaseConfig()
    cfg.nu = 3e-6
    cfg.algorithm = "simple"
    cfg.n_nonorth_correctors = 1
    cfg.boundary = {
        "inlet": BoundarySpec(u=("mass_flow", 9.975e-4, 1000.0), p=("zero_gradient",)),
        "outlet": BoundarySpec(u=("zero_gradient",), p=("fixed_value", 0.0)),
        "walls": BoundarySpec(u=("no_slip",), p=("zero_gradient",)),
        "frontAndBack": BoundarySpec(u=("empty",), p=("empty",)),
    }
    return Case(name=f"duct{nx}x{ny}s{skew_deg:g}", mesh=mesh, config=cfg)


GENERATORS = {
    "cavity": gen_cavity,
    "channel": gen_channel,
    "skewed-duct": gen_skewed_duct,
}
