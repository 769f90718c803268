"""Structurally symmetric sparse matrices in a hybrid ELL + CRS layout.

A matrix is split A = B + C.  B holds up to K entries per row in ELLPACK
style: V (N x K values) and I (N x K column indices, sentinel -1 with value
0.0 at padding).  Rows with more than K entries spill their off-diagonal
entries with the highest column indices into C, a small CRS block.  The
diagonal always stays in the ELL part, at slot diag_slot[i].

Structural symmetry ((i,j) present iff (j,i) present) lets a transposed
product run by column through the same row-major storage: a third N x K
array J records, for each ELL entry (i, k), the slot of its transposed twin
inside row I[i][k]; J = -1 marks either padding (I = -1 too) or a twin that
lives in the CRS block, in which case ell_twin_crs holds its position
there.  CRS entries carry the mirror back-references.  The pattern is built
once per mesh and shared by every matrix assembled on it; entries are
addressed by flat codes (row*K + slot for ELL, N*K + pos for CRS) kept in
face_addr / diag_addr so assembly never searches.
"""

from dataclasses import dataclass

import numpy as np


class SparseError(Exception):
    pass


@dataclass
class SparsityPattern:
    n: int
    k: int
    I: np.ndarray  # (n, k) column indices, -1 padding
    J: np.ndarray  # (n, k) twin slot in row I[i][k]; -1 for padding/CRS twin
    diag_slot: np.ndarray  # (n,)
    ell_twin_crs: np.ndarray  # (n, k) CRS position of twin where J = -1 and I >= 0
    crs_row_ptr: np.ndarray  # (n + 1,)
    crs_col: np.ndarray
    crs_twin_in_ell: np.ndarray  # bool per CRS entry
    crs_twin_row: np.ndarray  # row holding the twin (= the entry's column)
    crs_twin_pos: np.ndarray  # ELL slot when twin_in_ell else CRS position
    diag_addr: np.ndarray  # (n,) flat addresses of diagonal entries
    face_addr: np.ndarray  # (n_pairs, 2) addresses of (lo,hi) and (hi,lo) entries

    @property
    def nnz_crs(self):
        return len(self.crs_col)

    @property
    def crs_row(self):
        """Row index per CRS entry, expanded from the row pointer."""
        return np.repeat(np.arange(self.n), np.diff(self.crs_row_ptr))

    def address(self, i: int, j: int) -> int:
        """Flat address of entry (i, j); raises if it is not in the pattern."""
        row = self.I[i]
        hits = np.nonzero(row == j)[0]
        if len(hits):
            return i * self.k + int(hits[0])
        lo, hi = self.crs_row_ptr[i], self.crs_row_ptr[i + 1]
        hits = lo + np.nonzero(self.crs_col[lo:hi] == j)[0]
        if len(hits):
            return self.n * self.k + int(hits[0])
        raise SparseError(f"entry ({i}, {j}) not in pattern")

    def check_invariants(self):
        """Exhaustive scan of the structural invariants; for tests."""
        n, k = self.n, self.k
        for i in range(n):
            cols = self.I[i]
            real = cols[cols >= 0]
            assert (np.diff(real) > 0).all(), f"row {i} columns not increasing"
            nreal = len(real)
            assert (cols[:nreal] >= 0).all(), f"row {i} sentinel before entry"
            assert self.I[i, self.diag_slot[i]] == i, f"row {i} diagonal misplaced"
            for kk in range(k):
                c, j = self.I[i, kk], self.J[i, kk]
                if c < 0:
                    assert j == -1 and self.ell_twin_crs[i, kk] == -1
                elif j >= 0:
                    assert self.I[c, j] == i, f"J inconsistent at ({i},{kk})"
                else:
                    pos = self.ell_twin_crs[i, kk]
                    assert pos >= 0, f"missing CRS twin ref at ({i},{kk})"
                    assert self.crs_col[pos] == i
                    lo, hi = self.crs_row_ptr[c], self.crs_row_ptr[c + 1]
                    assert lo <= pos < hi, f"CRS twin of ({i},{kk}) in wrong row"
        crs_row = self.crs_row
        for p in range(self.nnz_crs):
            i, c = crs_row[p], self.crs_col[p]
            assert i != c, "diagonal must not overflow to CRS"
            assert self.crs_twin_row[p] == c
            if self.crs_twin_in_ell[p]:
                assert self.I[c, self.crs_twin_pos[p]] == i
            else:
                q = self.crs_twin_pos[p]
                assert self.crs_col[q] == i and crs_row[q] == c
        # no duplicate coordinates across the union
        coords = set()
        for i in range(n):
            for c in self.I[i][self.I[i] >= 0]:
                coords.add((i, int(c)))
        for p in range(self.nnz_crs):
            pair = (int(crs_row[p]), int(self.crs_col[p]))
            assert pair not in coords, f"{pair} in both ELL and CRS"
            coords.add(pair)
        for i, c in list(coords):
            assert (c, i) in coords, f"({i},{c}) lacks structural twin"


def pattern_from_pairs(n: int, pairs, k_cap: int, face_pairs=None) -> SparsityPattern:
    """Build a pattern from unordered off-diagonal pairs (i, j), i != j.

    Duplicate pairs are merged.  K = min(1 + max neighbour count, k_cap).
    Rows with more entries than K keep the diagonal plus their
    lowest-column off-diagonals in ELL; the rest go to CRS.  face_pairs
    (default: pairs) selects which (lo, hi) pairs get face_addr rows.
    """
    if k_cap < 1:
        raise SparseError("k_cap must be at least 1")
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs):
        lo = pairs.min(axis=1)
        hi = pairs.max(axis=1)
        if (lo == hi).any():
            raise SparseError("self-pair in adjacency")
        upairs = np.unique(lo * n + hi)
        lo, hi = upairs // n, upairs % n
    else:
        lo = hi = np.zeros(0, dtype=np.int64)

    # full entry list: both orientations plus diagonals, sorted by (row, col)
    rows = np.concatenate([lo, hi, np.arange(n, dtype=np.int64)])
    cols = np.concatenate([hi, lo, np.arange(n, dtype=np.int64)])
    key = rows * n + cols
    order = np.argsort(key)
    rows, cols, key = rows[order], cols[order], key[order]
    ne = len(rows)

    counts = np.bincount(rows, minlength=n)
    k = int(min(counts.max(), k_cap))
    row_start = np.concatenate([[0], np.cumsum(counts)])
    rank = np.arange(ne) - row_start[rows]  # position within the row

    # ELL/CRS split: diagonal pinned in ELL, highest-column off-diags spill
    keep = np.ones(ne, dtype=bool)
    for i in np.nonzero(counts > k)[0]:
        s, e = row_start[i], row_start[i + 1]
        c = cols[s:e]
        offdiag = np.nonzero(c != i)[0]
        spill = offdiag[k - 1 :]  # all but the k-1 lowest off-diagonal columns
        keep[s + spill] = False

    ell_slot = np.cumsum(keep) - 1 - np.concatenate([[0], np.cumsum(keep)])[row_start[rows]]
    crs_pos = np.cumsum(~keep) - 1

    # location of every entry: flat ELL address or N*K + CRS position
    addr = np.where(keep, rows * k + ell_slot, n * k + crs_pos)
    twin_idx = np.searchsorted(key, cols * n + rows)
    twin_addr = addr[twin_idx]

    I = np.full((n, k), -1, dtype=np.int64)
    J = np.full((n, k), -1, dtype=np.int64)
    ell_twin_crs = np.full((n, k), -1, dtype=np.int64)
    e_rows, e_slots, e_cols, e_twin = rows[keep], ell_slot[keep], cols[keep], twin_addr[keep]
    I[e_rows, e_slots] = e_cols
    in_ell = e_twin < n * k
    J[e_rows[in_ell], e_slots[in_ell]] = e_twin[in_ell] % k
    ell_twin_crs[e_rows[~in_ell], e_slots[~in_ell]] = e_twin[~in_ell] - n * k

    diag_slot = ell_slot[rows == cols]
    diag_addr = np.arange(n, dtype=np.int64) * k + diag_slot

    cm = ~keep
    crs_rows = rows[cm]
    crs_col = cols[cm]
    crs_row_ptr = np.concatenate([[0], np.cumsum(np.bincount(crs_rows, minlength=n))])
    ct = twin_addr[cm]
    crs_twin_in_ell = ct < n * k
    crs_twin_row = crs_col.copy()
    crs_twin_pos = np.where(crs_twin_in_ell, ct % k, ct - n * k)

    if face_pairs is None:
        face_pairs = np.stack([lo, hi], axis=1) if len(lo) else np.zeros((0, 2), np.int64)
    face_pairs = np.asarray(face_pairs, dtype=np.int64).reshape(-1, 2)
    if len(face_pairs):
        f_lo = face_pairs.min(axis=1)
        f_hi = face_pairs.max(axis=1)
        a01 = addr[np.searchsorted(key, f_lo * n + f_hi)]
        a10 = addr[np.searchsorted(key, f_hi * n + f_lo)]
        face_addr = np.stack([a01, a10], axis=1)
    else:
        face_addr = np.zeros((0, 2), dtype=np.int64)

    return SparsityPattern(
        n=n,
        k=k,
        I=I,
        J=J,
        diag_slot=diag_slot.astype(np.int64),
        ell_twin_crs=ell_twin_crs,
        crs_row_ptr=crs_row_ptr.astype(np.int64),
        crs_col=crs_col,
        crs_twin_in_ell=crs_twin_in_ell,
        crs_twin_row=crs_twin_row,
        crs_twin_pos=crs_twin_pos.astype(np.int64),
        diag_addr=diag_addr,
        face_addr=face_addr,
    )


def build_pattern(mesh, k_cap: int = 16) -> SparsityPattern:
    """Pattern of the cell-connectivity matrix: diagonal + internal faces.

    face_addr[f] gives the flat addresses of the (owner, neighbour) and
    (neighbour, owner) coefficients of internal face f.
    """
    ni = mesh.n_internal
    pairs = np.stack([mesh.owner[:ni], mesh.neighbour], axis=1)
    return pattern_from_pairs(mesh.n_cells, pairs, k_cap, face_pairs=pairs)


def build_pattern_from_example() -> SparsityPattern:
    """4x4 ring-coupled fixture with K = 3.

    Cells 0-1-2-3 joined in a ring; every row holds its diagonal plus two
    off-diagonals, exercising twin slots across all rows without any CRS
    spill.  Used as a reference point in tests.
    """
    return pattern_from_pairs(4, [(0, 1), (1, 2), (2, 3), (0, 3)], 3)


@dataclass
class HybridMatrix:
    pattern: SparsityPattern
    V: np.ndarray  # (n, k), 0.0 at padding
    crs_val: np.ndarray

    @classmethod
    def zeros(cls, pattern: SparsityPattern):
        return cls(
            pattern=pattern,
            V=np.zeros((pattern.n, pattern.k)),
            crs_val=np.zeros(pattern.nnz_crs),
        )

    def clear(self):
        self.V[:] = 0.0
        self.crs_val[:] = 0.0

    def add_at(self, addr, values):
        """Accumulate values at flat addresses (vectorized, unchecked)."""
        addr = np.asarray(addr)
        values = np.asarray(values)
        split = self.pattern.n * self.pattern.k
        ell = addr < split
        np.add.at(self.V.reshape(-1), addr[ell], values[ell])
        np.add.at(self.crs_val, addr[~ell] - split, values[~ell])

    def to_dense(self) -> np.ndarray:
        p = self.pattern
        d = np.zeros((p.n, p.n))
        r, c = np.nonzero(p.I >= 0)
        d[r, p.I[r, c]] = self.V[r, c]
        d[p.crs_row, p.crs_col] = self.crs_val
        return d


def coeff_accumulate(A: HybridMatrix, addr: int, value: float, add: bool = True):
    """Set or increment a single entry by flat address, with checks."""
    p = A.pattern
    split = p.n * p.k
    if 0 <= addr < split:
        i, k = divmod(int(addr), p.k)
        if p.I[i, k] < 0:
            raise SparseError(f"address {addr} points at a padding sentinel")
        if add:
            A.V[i, k] += value
        else:
            A.V[i, k] = value
    elif split <= addr < split + p.nnz_crs:
        pos = int(addr) - split
        if add:
            A.crs_val[pos] += value
        else:
            A.crs_val[pos] = value
    else:
        raise SparseError(f"address {addr} outside pattern")


def diagonal(A: HybridMatrix) -> np.ndarray:
    p = A.pattern
    return A.V[np.arange(p.n), p.diag_slot].copy()


def smvp(A: HybridMatrix, x: np.ndarray) -> np.ndarray:
    """y = A x.  Row access: ELL slots then the CRS tail."""
    p = A.pattern
    if len(x) != p.n:
        raise SparseError(f"dimension mismatch: {len(x)} != {p.n}")
    idx = np.maximum(p.I, 0)  # padding has V = 0, safe to gather anywhere
    y = np.einsum("nk,nk->n", A.V, x[idx])
    if p.nnz_crs:
        y += np.bincount(p.crs_row, weights=A.crs_val * x[p.crs_col], minlength=p.n)
    return y


def stmvp(A: HybridMatrix, x: np.ndarray) -> np.ndarray:
    """y = A^T x without forming the transpose.

    Column access: for each stored entry (i, c) the value of the twin
    (c, i) is gathered through J (ELL twins) or the CRS back-references,
    so y[i] accumulates A[c, i] * x[c] while scanning row i.
    """
    p = A.pattern
    if len(x) != p.n:
        raise SparseError(f"dimension mismatch: {len(x)} != {p.n}")
    col = np.maximum(p.I, 0)
    slot = np.maximum(p.J, 0)
    twin_val = A.V[col, slot]
    if p.nnz_crs:
        twin_val = np.where(p.J >= 0, twin_val, A.crs_val[np.maximum(p.ell_twin_crs, 0)])
    twin_val = np.where(p.I >= 0, twin_val, 0.0)  # padding contributes nothing
    y = np.einsum("nk,nk->n", twin_val, x[col])
    if p.nnz_crs:
        # clamp the index of whichever branch is not taken; both arrays are
        # indexed before np.where selects
        tv = np.where(
            p.crs_twin_in_ell,
            A.V[p.crs_twin_row, np.minimum(p.crs_twin_pos, p.k - 1)],
            A.crs_val[np.minimum(p.crs_twin_pos, p.nnz_crs - 1)],
        )
        y += np.bincount(p.crs_row, weights=tv * x[p.crs_col], minlength=p.n)
    return y


def pack_q(pattern: SparsityPattern, mode: str = "by_N") -> np.ndarray:
    """Fuse I and J into one integer array Q.

    by_N: Q = N*I + J (decode by divmod N); by_K: Q = K*I + J (divmod K).
    Padding packs to -1; entries whose twin sits in the CRS block pack to
    -2 - I, keeping the column recoverable.
    """
    p = pattern
    if mode == "by_N":
        q = p.n * p.I + p.J
    elif mode == "by_K":
        q = p.k * p.I + p.J
    else:
        raise SparseError(f"unknown mode {mode!r}")
    q = np.where(p.I < 0, -1, q)
    q = np.where((p.I >= 0) & (p.J < 0), -2 - p.I, q)
    return q


def unpack_q(q: np.ndarray, n: int, k: int, mode: str = "by_N"):
    """Inverse of pack_q: recover (I, J) exactly, sentinels included."""
    base = n if mode == "by_N" else k
    if mode not in ("by_N", "by_K"):
        raise SparseError(f"unknown mode {mode!r}")
    I = np.where(q >= 0, q // base, np.where(q == -1, -1, -2 - q))
    J = np.where(q >= 0, q % base, -1)
    return I, J


def format_debug(A: HybridMatrix) -> str:
    """Human-readable dump of a small matrix: dense grid plus raw tables."""
    p = A.pattern
    if p.n > 16:
        raise SparseError("debug dump limited to n <= 16")
    lines = [f"hybrid {p.n}x{p.n}, K={p.k}, crs entries: {p.nnz_crs}"]
    dense = A.to_dense()
    for row in dense:
        lines.append("  [" + " ".join(f"{v:10.4g}" for v in row) + "]")
    lines.append(f"I = {p.I.tolist()}")
    lines.append(f"J = {p.J.tolist()}")
    lines.append(f"V = {np.round(A.V, 6).tolist()}")
    if p.nnz_crs:
        lines.append(
            f"CRS rows {p.crs_row.tolist()} cols {p.crs_col.tolist()} "
            f"vals {np.round(A.crs_val, 6).tolist()}"
        )
    return "\n".join(lines)
