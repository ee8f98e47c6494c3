import csv

import numpy as np
import pytest

from efieschur import cluster, efie, hmatrix, schur, solver
from efieschur import mesh as meshmod
from efieschur import ordering as ordmod


def test_gmres_identity_one_iteration():
    b = np.arange(1, 6, dtype=complex)
    x, res, ok = solver.gmres(lambda v: v, b)
    assert ok and len(res) == 2
    np.testing.assert_allclose(x, b)


@pytest.mark.parametrize("restart", [None, 5])
def test_gmres_random_system(restart):
    rng = np.random.default_rng(0)
    n = 40
    a = np.eye(n) * 4 + rng.standard_normal((n, n)) / np.sqrt(n) + 1j * rng.standard_normal((n, n)) / np.sqrt(n)
    b = rng.standard_normal(n) + 0j
    x, res, ok = solver.gmres(lambda v: a @ v, b, tol=1e-10, restart=restart, max_iter=500)
    assert ok
    assert np.linalg.norm(a @ x - b) <= 1e-9 * np.linalg.norm(b)
    assert res[-1] <= 1e-10
    # residual history of full GMRES is non-increasing
    if restart is None:
        assert all(r2 <= r1 * (1 + 1e-12) for r1, r2 in zip(res, res[1:]))


def test_gmres_edge_cases():
    x, res, ok = solver.gmres(lambda v: v, np.zeros(3))
    assert ok and not x.any()
    with pytest.raises(ValueError):
        solver.gmres(lambda v: v, np.ones(3), tol=0)
    rng = np.random.default_rng(1)
    a = rng.standard_normal((30, 30))
    _, res, ok = solver.gmres(lambda v: a @ v, np.ones(30), tol=1e-14, max_iter=3)
    assert not ok and len(res) == 4


def _problem(basis, medium, leaf_size, tol=1e-4):
    tree = cluster.build_tree(basis, leaf_size=leaf_size)
    part = cluster.build_partition(tree, 1.0)
    H = hmatrix.assemble(basis, medium, part, tol)
    order = ordmod.sloan(cluster.near_field_graph(part))
    return H, order


def test_single_leaf_is_identity(plate_basis, medium):
    H, _ = _problem(plate_basis, medium, plate_basis.n)
    pre = schur.build(H.near, H.leaf_slices)
    system = solver.PreconditionedSystem(H, pre)
    w = efie.PlaneWave.from_angles(0.3, 0.0)
    b = efie.excitation_vector(plate_basis, w, medium)
    x, rep = solver.solve(system, b)
    assert rep.converged and rep.iterations == 1
    np.testing.assert_allclose(x, solver.dense_solve(plate_basis, medium, b), rtol=1e-8)


@pytest.fixture(scope="module")
def plate2(medium):
    basis = meshmod.build_rwg(meshmod.generate_plate(2, 2, 10, 0.3e9))
    H, order = _problem(basis, medium, 100)
    return basis, H, order


def test_operator_composition_against_dense(plate2):
    basis, H, order = plate2
    pre = schur.build(H.near, H.leaf_slices, order, fill_tol=0.0)
    system = solver.PreconditionedSystem(H, pre)
    n = H.n
    sample = np.random.default_rng(2).choice(n, 12, replace=False)
    a = schur.scaling_matrix_dense(pre)
    zf = np.zeros((n, n), complex)
    for rs, cs, blk in H.far:
        zf[rs, cs] = blk.to_dense()
    inner = a.T @ zf @ a
    for c in sample:
        e = np.zeros(n, complex)
        e[c] = 1.0
        want = e + pre.solve_diag(inner[:, c])
        np.testing.assert_allclose(system.apply_operator(e), want, rtol=1e-10, atol=1e-10 * np.abs(want).max())
    with pytest.raises(ValueError):
        system.apply_operator(np.ones(n + 1))


@pytest.mark.parametrize("pc", ["schur", "nullfield", "jacobi"])
def test_solution_matches_dense(plate2, medium, pc):
    basis, H, order = plate2
    if pc == "schur":
        pre = schur.build(H.near, H.leaf_slices, order, fill_tol=1e-2)
    elif pc == "nullfield":
        pre = schur.null_field_build(H.near, H.leaf_slices, order)
    else:
        pre = schur.block_jacobi_build(H.near, H.leaf_slices)
    system = solver.PreconditionedSystem(H, pre)
    b = efie.excitation_vector(basis, efie.PlaneWave.from_angles(1.0, 0.4), medium)
    x, rep = solver.solve(system, b, tol=1e-6)
    xd = solver.dense_solve(basis, medium, b)
    assert rep.converged
    assert np.linalg.norm(x - xd) / np.linalg.norm(xd) <= 1e-3
    assert rep.original_residual <= 1e-5
    assert set(rep.times) == {"t_rhs", "t_solve", "t_mm", "t_mpp", "t_mps"}
    assert len(system.per_call) >= rep.iterations


def test_iteration_times_skip_warmup(plate2):
    _, H, _ = plate2
    system = solver.PreconditionedSystem(H, schur.identity_preconditioner(H.leaf_slices))
    system.per_call = [(10.0, 10.0, 10.0), (5.0, 5.0, 5.0), (1.0, 2.0, 3.0), (3.0, 4.0, 5.0)]
    assert system.iteration_times() == (2.0, 3.0, 4.0)
    system.per_call = [(1.0, 1.0, 1.0)]
    assert system.iteration_times() == (1.0, 1.0, 1.0)


def test_mismatched_sizes(plate2, plate_basis):
    _, H, _ = plate2
    other = schur.identity_preconditioner([slice(0, 3)])
    with pytest.raises(ValueError):
        solver.PreconditionedSystem(H, other)
    with pytest.raises(ValueError):
        solver.PreconditionedSystem(H, schur.identity_preconditioner(H.leaf_slices), mode="right")


def test_eigen_diagnostic_and_csv(tmp_path, plate_basis, medium, plate_dense):
    H, order = _problem(plate_basis, medium, 100)
    pre = schur.build(H.near, H.leaf_slices, order)
    system = solver.PreconditionedSystem(H, pre)
    diag = solver.eigen_diagnostic(plate_basis, medium, system, plate_dense)
    assert diag["eigs_before"].shape == diag["eigs_after"].shape == (plate_basis.n,)
    assert solver.spread_ratio(diag["eigs_after"]) < solver.spread_ratio(diag["eigs_before"])
    solver.write_eigenvalues(tmp_path / "e.csv", diag)
    rows = list(csv.reader(open(tmp_path / "e.csv")))
    assert rows[0] == ["re", "im", "tag"] and len(rows) == 1 + 2 * plate_basis.n
    rep = solver.SolveReport(2, [1.0, 0.1, 0.001], True)
    solver.write_residuals(tmp_path / "r.csv", rep)
    assert (tmp_path / "r.csv").read_text().splitlines()[-1] == "2,0.001"
