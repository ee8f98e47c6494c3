import numpy as np
import pytest

from efieschur import cluster, efie, hmatrix
from efieschur import mesh as meshmod

FREQ = 0.3e9  # 1 m wavelength keeps geometry numbers readable


@pytest.fixture(scope="session")
def freq():
    return FREQ


@pytest.fixture(scope="session")
def medium():
    return efie.Medium(FREQ)


@pytest.fixture(scope="session")
def plate_basis():
    """1 x 1 wavelength plate, 10 cells per wavelength: 280 unknowns."""
    return meshmod.build_rwg(meshmod.generate_plate(1.0, 1.0, 10, FREQ))


@pytest.fixture(scope="session")
def cube_basis():
    """Half-wavelength cube, 5 cells per side: 450 unknowns."""
    return meshmod.build_rwg(meshmod.generate_cube(0.5, 10, FREQ))


@pytest.fixture(scope="session")
def plate_dense(plate_basis, medium):
    return efie.assemble_dense(plate_basis, medium)


def make_operator(basis, medium, leaf_size=40, eta=1.0, tol=1e-4, far=True):
    tree = cluster.build_tree(basis, leaf_size=leaf_size)
    part = cluster.build_partition(tree, eta)
    if far:
        H = hmatrix.assemble(basis, medium, part, tol)
    else:
        near = hmatrix.assemble_near(basis, medium, part)
        H = hmatrix.HOperator(tree.n, tree.perm, hmatrix._leaf_slices(tree), near)
    return tree, part, H


@pytest.fixture(scope="session")
def plate_operator(plate_basis, medium):
    """Tree, partition and near-only H operator of the small plate (16 leaves)."""
    return make_operator(plate_basis, medium, leaf_size=60, eta=1.0, far=False)


def random_symmetric_near(rng, sizes, pairs, diag_shift=4.0):
    """
    Complex symmetric block pattern with well-conditioned diagonal blocks.
    ``pairs`` lists off-diagonal leaf pairs (t < s).
    """
    near = {}
    for t, m in enumerate(sizes):
        a = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
        near[(t, t)] = 0.5 * (a + a.T) + diag_shift * np.sqrt(m) * np.eye(m)
    for t, s in pairs:
        near[(t, s)] = rng.standard_normal((sizes[t], sizes[s])) + 1j * rng.standard_normal(
            (sizes[t], sizes[s])
        )
    starts = np.concatenate([[0], np.cumsum(sizes)])
    slices = [slice(int(a), int(b)) for a, b in zip(starts[:-1], starts[1:])]
    return near, slices


# --- acceptance report ---

_CRITERIA = {}


@pytest.fixture(scope="session")
def criterion():
    """``criterion(label, ok, detail)`` records one line for the terminal summary."""

    def record(label, ok, detail=""):
        _CRITERIA[label] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA, key=lambda s: (int(s.split()[0].rstrip("abc")), s)):
        ok, detail = _CRITERIA[label]
        terminalreporter.write_line(f"CRITERION {label}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
