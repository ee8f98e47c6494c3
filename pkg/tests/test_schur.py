import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from efieschur import cluster, schur
from efieschur import ordering as ordmod
from efieschur.lowrank import LowRankBlock

from conftest import random_symmetric_near


def dense_elimination(z, slices, order):
    """Plain dense block elimination: returns A = E_1 ... E_K and the final pivots."""
    z = z.copy()
    n = z.shape[0]
    a = np.eye(n, dtype=complex)
    pivots = {}
    for step, k in enumerate(order):
        later = order[step + 1:]
        sk = slices[k]
        pivots[k] = z[sk, sk].copy()
        e = np.eye(n, dtype=complex)
        for j in later:
            e[sk, slices[j]] = -np.linalg.solve(z[sk, sk], z[sk, slices[j]])
        z = e.T @ z @ e
        a = a @ e
    return a, pivots


def _block_diag_error(pre, zn):
    a = schur.scaling_matrix_dense(pre)
    return schur.block_off_diagonal_mass(a.T @ zn @ a, pre.leaf_slices) / np.linalg.norm(zn)


def test_plate_block_diagonalization_exact(plate_operator):
    tree, part, H = plate_operator
    g = cluster.near_field_graph(part)
    pre = schur.build(H.near, H.leaf_slices, ordmod.sloan(g), fill_tol=0.0)
    zn = schur.near_matrix_dense(H.near, H.leaf_slices)
    assert _block_diag_error(pre, zn) <= 1e-12
    # stored pivots are the diagonal of A^T Z_N A
    a = schur.scaling_matrix_dense(pre)
    d = a.T @ zn @ a
    rng = np.random.default_rng(0)
    x = rng.standard_normal(H.n) + 0j
    np.testing.assert_allclose(pre.diag_matvec(x), d @ x, rtol=1e-9, atol=1e-9 * np.abs(d @ x).max())
    np.testing.assert_allclose(pre.solve_diag(pre.diag_matvec(x)), x, rtol=1e-8, atol=1e-8)


def test_chain_fill_pattern():
    rng = np.random.default_rng(1)
    near, sl = random_symmetric_near(rng, [5, 6, 4, 7], [(0, 1), (1, 2), (2, 3)])
    pre = schur.build(near, sl, np.arange(4), fill_tol=0.0)
    assert pre.stats["fill_blocks"] == 0
    assert pre.stats["scaling_blocks"] == 3
    assert [s.cols for s in pre.steps] == [[1], [2], [3], []]
    # eliminating an interior leaf first couples its two neighbours
    pre = schur.build(near, sl, [1, 3, 0, 2], fill_tol=0.0)
    assert [(s.pivot, s.cols) for s in pre.steps] == [(1, [0, 2]), (3, [2]), (0, [2]), (2, [])]
    assert pre.stats["fill_blocks"] == 1
    assert pre.stats["scaling_blocks"] == 4


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.data())
def test_random_patterns_against_dense_oracle(seed, data):
    rng = np.random.default_rng(seed)
    sizes = [int(v) for v in rng.integers(2, 7, 6)]
    pairs = [(t, s) for t in range(6) for s in range(t + 1, 6) if rng.random() < 0.4]
    near, sl = random_symmetric_near(rng, sizes, pairs)
    order = np.array(data.draw(st.permutations(range(6))))
    pre = schur.build(near, sl, order, fill_tol=0.0)
    zn = schur.near_matrix_dense(near, sl)
    a_ref, pivots = dense_elimination(zn, sl, list(order))
    a = schur.scaling_matrix_dense(pre)
    np.testing.assert_allclose(a, a_ref, rtol=1e-10, atol=1e-10 * np.abs(a_ref).max())
    assert _block_diag_error(pre, zn) <= 1e-12
    d = a.T @ zn @ a
    for k, p in pivots.items():
        np.testing.assert_allclose(d[sl[k], sl[k]], p, rtol=1e-9, atol=1e-9 * np.abs(p).max())


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_left_application_is_transpose(seed):
    rng = np.random.default_rng(seed)
    near, sl = random_symmetric_near(rng, [4, 3, 5, 4, 6], [(0, 1), (0, 3), (1, 2), (2, 4), (3, 4)])
    order = rng.permutation(5)
    pre = schur.build(near, sl, order, fill_tol=0.0)
    a = schur.scaling_matrix_dense(pre)
    np.testing.assert_allclose(schur.left_matrix_dense(pre), a.T, rtol=1e-14, atol=1e-14)
    x = rng.standard_normal((pre.n, 3)) + 0j
    np.testing.assert_allclose(pre.apply_right(x), a @ x, rtol=1e-12, atol=1e-12)


def test_symmetric_build_halves_solves(plate_operator):
    _, part, H = plate_operator
    order = ordmod.sloan(cluster.near_field_graph(part))
    sym = schur.build(H.near, H.leaf_slices, order, fill_tol=0.0)
    ref = schur.build(H.near, H.leaf_slices, order, fill_tol=0.0, symmetric=False)
    assert ref.stats["block_solves"] == 2 * sym.stats["block_solves"]
    # one-sided updates cover j >= i only, the reference covers every (i, j)
    c = sym.stats["scaling_blocks"]
    assert ref.stats["block_updates"] == 2 * sym.stats["block_updates"] - c
    for s1, s2 in zip(sym.steps, ref.steps):
        assert s1.cols == s2.cols
        for r, l in zip(s2.blocks, s2.left):
            np.testing.assert_allclose(l, r.T, rtol=1e-10, atol=1e-12 * np.abs(r).max())
    np.testing.assert_allclose(
        schur.scaling_matrix_dense(ref), schur.scaling_matrix_dense(sym), rtol=1e-9, atol=1e-11
    )
    np.testing.assert_allclose(
        schur.left_matrix_dense(ref), schur.scaling_matrix_dense(sym).T, rtol=1e-9, atol=1e-11
    )


def test_fill_compression_keeps_blocks_small(plate_operator):
    _, part, H = plate_operator
    order = ordmod.order_graph(cluster.near_field_graph(part), "none")
    exact = schur.build(H.near, H.leaf_slices, order, fill_tol=0.0)
    comp = schur.build(H.near, H.leaf_slices, order, fill_tol=1e-2)
    assert comp.stats["fill_blocks"] == exact.stats["fill_blocks"] > 0
    assert comp.stats["nnz"] < exact.stats["nnz"]
    pattern = {(t, s) for t, s in H.near} | {(s, t) for t, s in H.near}
    ranks = []
    for st_ in comp.steps:
        for j, b in zip(st_.cols, st_.blocks):
            if (st_.pivot, j) not in pattern and isinstance(b, LowRankBlock):
                ranks.append(b.rank / min(b.shape))
    assert ranks and max(ranks) <= 0.25
    zn = schur.near_matrix_dense(H.near, H.leaf_slices)
    # approximate, but only at the fill tolerance scale
    err = _block_diag_error(comp, zn)
    assert 1e-12 < err < 5e-2


def test_null_field_is_approximate(plate_operator):
    _, part, H = plate_operator
    order = ordmod.sloan(cluster.near_field_graph(part))
    pre = schur.null_field_build(H.near, H.leaf_slices, order)
    assert pre.kind == "nullfield" and not pre.left_scaling
    assert pre.stats["fill_blocks"] == 0
    x = np.arange(H.n, dtype=complex)
    np.testing.assert_array_equal(pre.apply_left(x), x)
    zn = schur.near_matrix_dense(H.near, H.leaf_slices)
    assert _block_diag_error(pre, zn) > 1e-6


def test_jacobi_and_identity():
    rng = np.random.default_rng(2)
    near, sl = random_symmetric_near(rng, [3, 4], [(0, 1)])
    jac = schur.block_jacobi_build(near, sl)
    y = rng.standard_normal(7) + 0j
    x = jac.solve_diag(y)
    np.testing.assert_allclose(near[(0, 0)] @ x[sl[0]], y[sl[0]])
    np.testing.assert_allclose(near[(1, 1)] @ x[sl[1]], y[sl[1]])
    np.testing.assert_array_equal(jac.apply_right(y), y)
    ident = schur.identity_preconditioner(sl)
    np.testing.assert_array_equal(ident.solve_diag(y), y)


@pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
def test_singular_pivot_reported():
    rng = np.random.default_rng(3)
    near, sl = random_symmetric_near(rng, [3, 3], [(0, 1)])
    near[(0, 0)] = np.zeros((3, 3), complex)
    with pytest.raises(schur.SingularPivotError) as err:
        schur.build(near, sl, [0, 1])
    assert err.value.leaf == 0
    with pytest.raises(ValueError):
        schur.build(near, sl, [0, 0])


def test_write_stats(tmp_path):
    path = tmp_path / "stats.csv"
    schur.write_stats(path, [{"nnz": 3, "fill_blocks": 1}, {"nnz": 5}])
    lines = path.read_text().splitlines()
    assert lines[0] == "fill_blocks,nnz"
    assert len(lines) == 3
