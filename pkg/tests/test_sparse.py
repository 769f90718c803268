import numpy as np
import pytest

from fvflow.cases import box_mesh, gen_cavity
from fvflow.sparse import (
    HybridMatrix,
    SparseError,
    build_pattern,
    build_pattern_from_example,
    coeff_accumulate,
    diagonal,
    format_debug,
    pack_q,
    pattern_from_pairs,
    smvp,
    stmvp,
    unpack_q,
)

ALL_WALLS = [("walls", "wall", ["x-", "x+", "y-", "y+", "z-", "z+"])]


def random_adjacency(rng, n):
    iu, ju = np.triu_indices(n, 1)
    mask = rng.random(len(iu)) < rng.uniform(0.02, 0.3)
    return np.stack([iu[mask], ju[mask]], axis=1)


def fill_random(pattern, pairs, rng):
    """Fill a matrix entry by entry and build the dense oracle from the
    same (i, j, value) triples, independent of the hybrid layout."""
    A = HybridMatrix.zeros(pattern)
    dense = np.zeros((pattern.n, pattern.n))
    coords = [(i, i) for i in range(pattern.n)]
    for i, j in pairs:
        coords.append((int(i), int(j)))
        coords.append((int(j), int(i)))
    for i, j in coords:
        v = rng.normal()
        coeff_accumulate(A, pattern.address(i, j), v, add=False)
        dense[i, j] = v
    return A, dense


def test_fixture_matches_reference_layout():
    p = build_pattern_from_example()
    assert p.n == 4 and p.k == 3
    assert p.I.tolist() == [[0, 1, 3], [0, 1, 2], [1, 2, 3], [0, 2, 3]]
    assert p.J.tolist() == [[0, 0, 0], [1, 1, 0], [2, 1, 1], [2, 2, 2]]
    assert p.J[1][2] == 0  # entry (1,2): twin (2,1) sits in slot 0 of row 2
    assert p.diag_slot.tolist() == [0, 1, 1, 2]
    assert p.nnz_crs == 0
    p.check_invariants()


def test_fixture_smvp_row_sums():
    p = build_pattern_from_example()
    A = HybridMatrix.zeros(p)
    A.V[:] = np.arange(1, 13, dtype=float).reshape(4, 3)
    y = smvp(A, np.ones(4))
    assert y == pytest.approx(A.to_dense().sum(axis=1), rel=1e-14)
    yt = stmvp(A, np.ones(4))
    assert yt == pytest.approx(A.to_dense().sum(axis=0), rel=1e-14)


def test_identity_smvp():
    p = pattern_from_pairs(5, [], 4)
    assert p.k == 1
    A = HybridMatrix.zeros(p)
    A.V[:, 0] = 1.0
    x = np.arange(5.0)
    assert smvp(A, x) == pytest.approx(x)
    assert stmvp(A, x) == pytest.approx(x)
    assert diagonal(A) == pytest.approx(np.ones(5))


def test_single_cell_pattern():
    mesh = box_mesh(1, 1, 1, 1, 1, 1, ALL_WALLS)
    p = build_pattern(mesh, 16)
    assert (p.n, p.k) == (1, 1)
    assert p.I.tolist() == [[0]] and p.J.tolist() == [[0]]
    assert p.nnz_crs == 0


def test_random_format_property_suite():
    # acceptance-grade sweep: >= 100 random structurally symmetric matrices,
    # smvp/stmvp vs dense oracles, invariant scan, Q round-trip
    rng = np.random.default_rng(2024)
    n_with_crs = 0
    for trial in range(110):
        n = int(rng.integers(1, 65))
        pairs = random_adjacency(rng, n)
        k_cap = int(rng.integers(1, 11))
        p = pattern_from_pairs(n, pairs, k_cap)
        p.check_invariants()
        n_with_crs += p.nnz_crs > 0
        A, dense = fill_random(p, pairs, rng)
        assert np.allclose(A.to_dense(), dense, rtol=0, atol=0)
        x = rng.normal(size=n)
        ref, reft = dense @ x, dense.T @ x
        # relative to the row magnitude |A||x|, which bounds the achievable
        # accuracy of any summation order
        scale = np.maximum(np.abs(dense) @ np.abs(x), 1e-30)
        assert (np.abs(smvp(A, x) - ref) / scale < 1e-13).all()
        scale = np.maximum(np.abs(dense).T @ np.abs(x), 1e-30)
        assert (np.abs(stmvp(A, x) - reft) / scale < 1e-13).all()
        for mode in ("by_N", "by_K"):
            q = pack_q(p, mode)
            ii, jj = unpack_q(q, p.n, p.k, mode)
            assert (ii == p.I).all() and (jj == p.J).all()
            assert (q[p.I < 0] == -1).all()
            assert (q[(p.I >= 0) & (p.J < 0)] < -1).all()
    assert n_with_crs >= 20  # the sweep must genuinely exercise the CRS path


def test_symmetric_values_make_stmvp_equal_smvp():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n = int(rng.integers(2, 40))
        pairs = random_adjacency(rng, n)
        p = pattern_from_pairs(n, pairs, int(rng.integers(1, 8)))
        A = HybridMatrix.zeros(p)
        for i, j in [(i, i) for i in range(n)] + [tuple(x) for x in pairs]:
            v = rng.normal()
            coeff_accumulate(A, p.address(i, j), v, add=False)
            if i != j:
                coeff_accumulate(A, p.address(j, i), v, add=False)
        x = rng.normal(size=n)
        assert stmvp(A, x) == pytest.approx(smvp(A, x), rel=1e-13, abs=1e-13)


def test_overflow_star_graph():
    # hub vertex of degree 6 with k_cap 6: only the hub row spills, and it
    # spills exactly one entry (its highest-column neighbour)
    n = 8
    pairs = [(0, j) for j in range(1, 7)]
    p = pattern_from_pairs(n, pairs, 6)
    assert p.k == 6
    assert p.nnz_crs == 1
    assert p.crs_row_ptr.tolist() == [0, 1, 1, 1, 1, 1, 1, 1, 1]
    assert p.crs_col.tolist() == [6]  # highest column of row 0 spilled
    p.check_invariants()
    # union of ELL and CRS equals adjacency + diagonal, by brute-force sets
    want = {(i, i) for i in range(n)} | {(a, b) for a, b in pairs} | {
        (b, a) for a, b in pairs
    }
    got = set()
    for i in range(n):
        for c in p.I[i][p.I[i] >= 0]:
            got.add((i, int(c)))
    for pos in range(p.nnz_crs):
        got.add((int(p.crs_row[pos]), int(p.crs_col[pos])))
    assert got == want
    # twin of the spilled (0,6) entry: (6,0) stays in ELL and its J is -1
    assert p.J[6][0] == -1 and p.I[6][0] == 0
    assert p.ell_twin_crs[6][0] == 0


def test_diag_pinned_in_ell_under_overflow():
    # row 7's diagonal is its highest column; it must stay in ELL anyway
    pairs = [(j, 7) for j in range(6)]
    p = pattern_from_pairs(8, pairs, 3)
    p.check_invariants()
    assert p.I[7][p.diag_slot[7]] == 7
    crs7 = p.crs_col[p.crs_row_ptr[7] : p.crs_row_ptr[8]]
    assert 7 not in crs7.tolist()


def test_coeff_accumulate_semantics():
    p = build_pattern_from_example()
    A = HybridMatrix.zeros(p)
    coeff_accumulate(A, p.diag_addr[2], 5.0, add=False)
    assert A.V[2, p.diag_slot[2]] == 5.0
    addr = p.face_addr[0, 0]
    coeff_accumulate(A, addr, 1.0)
    coeff_accumulate(A, addr, 1.0)
    flat = np.concatenate([A.V.ravel(), A.crs_val])
    assert flat[addr] == 2.0
    with pytest.raises(SparseError, match="outside"):
        coeff_accumulate(A, 99, 1.0)


def test_sentinel_address_rejected():
    p = pattern_from_pairs(3, [(0, 1)], 3)  # k=2, row 2 has one padding slot
    A = HybridMatrix.zeros(p)
    assert p.I[2, 1] == -1
    with pytest.raises(SparseError, match="sentinel"):
        coeff_accumulate(A, 2 * p.k + 1, 1.0)


def test_structured_meshes_have_empty_crs():
    for mesh in (
        gen_cavity(4).mesh,
        box_mesh(3, 4, 5, 1, 1, 1, ALL_WALLS),
        box_mesh(2, 1, 1, 1, 1, 1, ALL_WALLS),
    ):
        for k_cap in (7, 16):
            p = build_pattern(mesh, k_cap)
            assert p.nnz_crs == 0
            p.check_invariants()


def test_pattern_deterministic():
    mesh = gen_cavity(5).mesh
    p1 = build_pattern(mesh, 16)
    p2 = build_pattern(mesh, 16)
    assert (p1.I == p2.I).all() and (p1.J == p2.J).all()


def test_face_addr_assembly_matches_triple_oracle():
    mesh = box_mesh(3, 3, 3, 1, 1, 1, ALL_WALLS)
    p = build_pattern(mesh, 16)
    rng = np.random.default_rng(11)
    A = HybridMatrix.zeros(p)
    dense = np.zeros((p.n, p.n))
    ni = mesh.n_internal
    own, nbr = mesh.owner[:ni], mesh.neighbour
    coef = rng.normal(size=ni)
    A.add_at(p.face_addr[:, 0], coef)
    A.add_at(p.face_addr[:, 1], coef)
    A.add_at(p.diag_addr[own], -coef)
    A.add_at(p.diag_addr[nbr], -coef)
    for f in range(ni):
        o, nb = own[f], nbr[f]
        dense[o, nb] += coef[f]
        dense[nb, o] += coef[f]
        dense[o, o] -= coef[f]
        dense[nb, nb] -= coef[f]
    assert np.allclose(A.to_dense(), dense, atol=1e-15)
    x = rng.normal(size=p.n)
    assert smvp(A, x) == pytest.approx(dense @ x, abs=1e-13)


def test_pack_q_reference_values():
    p = build_pattern_from_example()
    q = pack_q(p, "by_N")
    assert p.I[3][2] == 3 and p.J[3][2] == 2
    assert q[3][2] == 4 * 3 + 2 == 14
    assert q[0][0] == 0
    assert pack_q(p, "by_K")[0][0] == 0
    with pytest.raises(SparseError):
        pack_q(p, "by_killer")


def test_k_cap_validation():
    with pytest.raises(SparseError, match="k_cap"):
        pattern_from_pairs(3, [(0, 1)], 0)


def test_debug_dump():
    p = build_pattern_from_example()
    A = HybridMatrix.zeros(p)
    A.V[0, 0] = 2.5
    text = format_debug(A)
    assert "4x4" in text and "2.5" in text and "I =" in text
    big = HybridMatrix.zeros(pattern_from_pairs(20, [(0, 1)], 4))
    with pytest.raises(SparseError, match="16"):
        format_debug(big)


def test_dimension_mismatch_rejected():
    p = build_pattern_from_example()
    A = HybridMatrix.zeros(p)
    with pytest.raises(SparseError, match="mismatch"):
        smvp(A, np.ones(5))
    with pytest.raises(SparseError, match="mismatch"):
        stmvp(A, np.ones(3))
