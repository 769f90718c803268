"""Strict standalone reader for legacy ASCII unstructured-grid VTK files.

Written independently of the writer so it can serve as a validation
oracle: it tokenizes the exact legacy layout, checks every declared count
against the data actually present, and range-checks connectivity.
"""

import numpy as np

_CELL_ARITY = {12: 8}  # hexahedron


class VtkFormatError(Exception):
    pass


class _Tok:
    def __init__(self, text):
        self.lines = text.splitlines()
        if len(self.lines) < 4:
            raise VtkFormatError("file too short for a legacy VTK header")
        self.toks = " ".join(self.lines[3:]).split()
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.toks):
            raise VtkFormatError("file ends inside a declared section")
        out = self.toks[self.pos:self.pos + n]
        self.pos += n
        return out

    @property
    def exhausted(self):
        return self.pos == len(self.toks)


def read_legacy_vtk(path):
    with open(path) as f:
        text = f.read()
    lines = text.splitlines()
    if not lines[0].startswith("# vtk DataFile Version"):
        raise VtkFormatError(f"bad header line: {lines[0]!r}")
    if lines[2].strip() != "ASCII":
        raise VtkFormatError("only ASCII files supported")
    t = _Tok(text)
    if t.take(2) != ["DATASET", "UNSTRUCTURED_GRID"]:
        raise VtkFormatError("not an unstructured grid")

    kw, n, _dtype = t.take(3)
    if kw != "POINTS":
        raise VtkFormatError(f"expected POINTS, got {kw}")
    n_points = int(n)
    points = np.array([float(v) for v in t.take(3 * n_points)]).reshape(n_points, 3)

    kw, n, size = t.take(3)
    if kw != "CELLS":
        raise VtkFormatError(f"expected CELLS, got {kw}")
    n_cells, list_size = int(n), int(size)
    raw = [int(v) for v in t.take(list_size)]
    cells = []
    pos = 0
    for _ in range(n_cells):
        k = raw[pos]
        cell = raw[pos + 1:pos + 1 + k]
        if len(cell) != k:
            raise VtkFormatError("cell list truncated")
        if any(not 0 <= p < n_points for p in cell):
            raise VtkFormatError("cell references a point out of range")
        cells.append(cell)
        pos += 1 + k
    if pos != list_size:
        raise VtkFormatError(f"CELLS size {list_size} does not match data {pos}")

    kw, n = t.take(2)
    if kw != "CELL_TYPES" or int(n) != n_cells:
        raise VtkFormatError("CELL_TYPES missing or count mismatch")
    types = [int(v) for v in t.take(n_cells)]
    for ctype, cell in zip(types, cells):
        if ctype in _CELL_ARITY and len(cell) != _CELL_ARITY[ctype]:
            raise VtkFormatError(f"type {ctype} cell with {len(cell)} points")

    data = {}
    if not t.exhausted:
        kw, n = t.take(2)
        if kw != "CELL_DATA" or int(n) != n_cells:
            raise VtkFormatError("expected CELL_DATA <n_cells>")
        while not t.exhausted:
            kind = t.take(1)[0]
            if kind == "SCALARS":
                name, _dtype, comps = t.take(3)
                if int(comps) != 1:
                    raise VtkFormatError("multi-component SCALARS unsupported")
                if t.take(2) != ["LOOKUP_TABLE", "default"]:
                    raise VtkFormatError("expected LOOKUP_TABLE default")
                data[name] = np.array([float(v) for v in t.take(n_cells)])
            elif kind == "VECTORS":
                name, _dtype = t.take(2)
                data[name] = np.array(
                    [float(v) for v in t.take(3 * n_cells)]
                ).reshape(n_cells, 3)
            else:
                raise VtkFormatError(f"unsupported attribute {kind!r}")
    return {"points": points, "cells": cells, "types": types, "data": data}
