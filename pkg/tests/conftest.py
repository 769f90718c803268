import numpy as np
import pytest

from fvflow.mesh import Mesh, Patch

# unit cube corner points, z-slab order
CUBE_POINTS = np.array(
    [
        [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
        [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
    ],
    dtype=float,
)

# outward-oriented quad loops of the unit cube (owner inside)
CUBE_FACES = [
    [0, 3, 2, 1],  # z-
    [4, 5, 6, 7],  # z+
    [0, 4, 7, 3],  # x-
    [1, 2, 6, 5],  # x+
    [0, 1, 5, 4],  # y-
    [3, 7, 6, 2],  # y+
]


def make_single_cube(points=None, faces=None):
    """One-cell hexahedral mesh, all faces in a single wall patch."""
    pts = CUBE_POINTS if points is None else np.asarray(points, dtype=float)
    fcs = CUBE_FACES if faces is None else faces
    flat = np.concatenate([np.asarray(f) for f in fcs])
    offsets = np.cumsum([0] + [len(f) for f in fcs])
    mesh = Mesh(
        points=pts,
        face_points=flat.astype(np.int64),
        face_offsets=offsets.astype(np.int64),
        owner=np.zeros(len(fcs), dtype=np.int64),
        neighbour=np.zeros(0, dtype=np.int64),
        patches=[Patch(name="walls", kind="wall", start=0, count=len(fcs))],
        n_cells=1,
    )
    mesh.validate()
    return mesh


@pytest.fixture
def single_cube():
    return make_single_cube()
