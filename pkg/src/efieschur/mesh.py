"""
Triangulated PEC surfaces and the RWG basis built over their interior edges.

Meshes are stored as plain arrays: ``vertices`` (V, 3) in meters and
``triangles`` (T, 3) of zero-based vertex indices. The text format written by
:func:`save_mesh` is::

    ntri nvert
    x y z            (nvert lines)
    i j k            (ntri lines)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.constants import speed_of_light

__all__ = [
    "MeshError",
    "MeshFormatError",
    "TriangleMesh",
    "RwgBasis",
    "wavelength",
    "generate_plate",
    "generate_cube",
    "generate_sphere",
    "build_rwg",
    "load_mesh",
    "save_mesh",
]


class MeshError(ValueError):
    """Structural problem with a mesh (bad indices, degenerate or non-manifold)."""


class MeshFormatError(MeshError):
    """Malformed mesh file; ``lineno`` points at the offending line (1-based)."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


def wavelength(frequency):
    """Free-space wavelength in meters."""
    return speed_of_light / frequency


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    frequency: float | None = None

    def __post_init__(self):
        v = _frozen(self.vertices, float)
        t = _frozen(self.triangles, np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must have shape (V, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError(f"triangles must have shape (T, 3), got {t.shape}")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            bad = np.flatnonzero((t < 0).any(axis=1) | (t >= len(v)).any(axis=1))[0]
            raise MeshError(f"triangle {bad} references a vertex outside 0..{len(v) - 1}")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if t.size:
            areas = self.areas
            scale = max(np.ptp(v, axis=0).max(), 1.0e-300)
            bad = np.flatnonzero(areas <= 1.0e-14 * scale**2)
            if bad.size:
                raise MeshError(f"triangle {bad[0]} is degenerate (zero area)")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def areas(self):
        p = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    @property
    def normals(self):
        p = self.vertices[self.triangles]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @property
    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    def edges(self):
        """Unique undirected edges as a sorted (E, 2) array."""
        e = np.sort(self.triangles[:, [1, 2, 2, 0, 0, 1]].reshape(-1, 2), axis=1)
        return np.unique(e, axis=0)

    def euler_characteristic(self):
        return self.n_vertices - len(self.edges()) + self.n_triangles


@dataclass(frozen=True, eq=False)
class RwgBasis:
    """
    One RWG function per interior edge.

    Local edge ``a`` of a triangle is the edge opposite its vertex ``a``, so the
    free vertex of basis ``i`` in its plus triangle is
    ``mesh.triangles[tri_plus[i], local_plus[i]]``. Current flows from the plus
    triangle into the minus triangle; the plus triangle is the lower-index one.
    """

    mesh: TriangleMesh
    edge_vertices: np.ndarray  # (N, 2) sorted vertex pair
    tri_plus: np.ndarray
    tri_minus: np.ndarray
    local_plus: np.ndarray
    local_minus: np.ndarray
    lengths: np.ndarray
    tri_basis: np.ndarray = field(repr=False)  # (T, 3) basis on each local edge, -1 if boundary
    tri_sign: np.ndarray = field(repr=False)  # (T, 3) +1 / -1 / 0

    @property
    def n(self):
        return len(self.lengths)

    def __len__(self):
        return self.n

    @property
    def centers(self):
        """Edge midpoints, the point used to place each unknown in the cluster tree."""
        v = self.mesh.vertices
        return 0.5 * (v[self.edge_vertices[:, 0]] + v[self.edge_vertices[:, 1]])

    def free_vertices(self):
        t = self.mesh.triangles
        return (t[self.tri_plus, self.local_plus], t[self.tri_minus, self.local_minus])


def build_rwg(mesh):
    """
    Build the RWG basis of ``mesh``.

    Interior edges are ordered lexicographically by their sorted vertex pair, so
    the basis depends on connectivity only (triangle order affects numbering of
    the plus/minus assignment but not the basis set).
    """
    tris = mesh.triangles
    nt = len(tris)
    if nt == 0:
        raise MeshError("mesh has no triangles")
    # local edge a is opposite vertex a
    pairs = np.stack([tris[:, [1, 2]], tris[:, [2, 0]], tris[:, [0, 1]]], axis=1)
    pairs = np.sort(pairs, axis=2).reshape(-1, 2)
    owner = np.repeat(np.arange(nt), 3)
    local = np.tile(np.arange(3), nt)
    uniq, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if (counts > 2).any():
        e = uniq[np.flatnonzero(counts > 2)[0]]
        raise MeshError(f"non-manifold edge ({e[0]}, {e[1]}) shared by more than two triangles")

    interior = np.flatnonzero(counts == 2)
    basis_of_edge = np.full(len(uniq), -1, dtype=np.int64)
    basis_of_edge[interior] = np.arange(len(interior))

    order = np.argsort(inverse, kind="stable")
    sorted_edges = inverse[order]
    first = np.searchsorted(sorted_edges, interior, side="left")
    a = order[first]
    b = order[first + 1]
    # plus triangle is the lower-index triangle
    swap = owner[a] > owner[b]
    plus = np.where(swap, b, a)
    minus = np.where(swap, a, b)
    if (owner[plus] == owner[minus]).any():
        raise MeshError("triangle repeats one of its own edges")

    ev = uniq[interior]
    v = mesh.vertices
    lengths = np.linalg.norm(v[ev[:, 1]] - v[ev[:, 0]], axis=1)

    tri_basis = basis_of_edge[inverse].reshape(nt, 3)
    tri_sign = np.zeros((nt, 3), dtype=np.int64)
    tri_sign.flat[plus] = 1
    tri_sign.flat[minus] = -1

    return RwgBasis(
        mesh=mesh,
        edge_vertices=_frozen(ev, np.int64),
        tri_plus=_frozen(owner[plus], np.int64),
        tri_minus=_frozen(owner[minus], np.int64),
        local_plus=_frozen(local[plus], np.int64),
        local_minus=_frozen(local[minus], np.int64),
        lengths=_frozen(lengths, float),
        tri_basis=_frozen(tri_basis, np.int64),
        tri_sign=_frozen(tri_sign, np.int64),
    )


def _grid_triangles(index):
    """Split every cell of an (ny+1, nx+1) vertex index grid along the same diagonal."""
    v00 = index[:-1, :-1].ravel()
    v10 = index[:-1, 1:].ravel()
    v11 = index[1:, 1:].ravel()
    v01 = index[1:, :-1].ravel()
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    return np.stack([lower, upper], axis=1).reshape(-1, 3)


def _check_positive(**kwargs):
    for name, value in kwargs.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")


def generate_plate(width_wavelengths, height_wavelengths, elements_per_wavelength, frequency):
    """
    Uniform structured triangulation of a rectangular plate in the z = 0 plane.

    The plate is centred on the origin. Cells are split along the same diagonal
    so that ``n`` cells per side give ``3 n^2 - 2 n`` RWG unknowns on a square;
    a 5 x 5 wavelength plate at 9 cells per wavelength has exactly 5985.
    """
    _check_positive(
        width_wavelengths=width_wavelengths,
        height_wavelengths=height_wavelengths,
        frequency=frequency,
    )
    if elements_per_wavelength < 5:
        raise ValueError("elements_per_wavelength must be at least 5")
    lam = wavelength(frequency)
    nx = max(1, int(round(width_wavelengths * elements_per_wavelength)))
    ny = max(1, int(round(height_wavelengths * elements_per_wavelength)))
    w, h = width_wavelengths * lam, height_wavelengths * lam
    x = np.linspace(-w / 2, w / 2, nx + 1)
    y = np.linspace(-h / 2, h / 2, ny + 1)
    xx, yy = np.meshgrid(x, y)
    vertices = np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])
    index = np.arange(xx.size).reshape(ny + 1, nx + 1)
    return TriangleMesh(vertices, _grid_triangles(index), frequency)


def generate_cube(side_wavelengths, elements_per_wavelength, frequency):
    """Closed, outward-oriented structured triangulation of a cube centred on the origin."""
    _check_positive(side_wavelengths=side_wavelengths, frequency=frequency)
    if elements_per_wavelength < 5:
        raise ValueError("elements_per_wavelength must be at least 5")
    lam = wavelength(frequency)
    n = max(1, int(round(side_wavelengths * elements_per_wavelength)))
    side = side_wavelengths * lam

    # lattice points on the cube surface, indexed by integer coordinates
    g = np.arange(n + 1)
    ii, jj, kk = np.meshgrid(g, g, g, indexing="ij")
    on_surface = (ii == 0) | (ii == n) | (jj == 0) | (jj == n) | (kk == 0) | (kk == n)
    index = np.full((n + 1,) * 3, -1, dtype=np.int64)
    index[on_surface] = np.arange(on_surface.sum())
    pts = np.column_stack([ii[on_surface], jj[on_surface], kk[on_surface]])
    vertices = (pts / n - 0.5) * side

    faces = [index[0], index[n], index[:, 0], index[:, n], index[:, :, 0], index[:, :, n]]
    tri = np.concatenate([_grid_triangles(f) for f in faces])
    return _orient_outward(TriangleMesh(vertices, tri, frequency))


def _orient_outward(mesh):
    c = mesh.centroids
    flip = np.einsum("ij,ij->i", mesh.normals, c - mesh.vertices.mean(axis=0)) < 0
    tri = mesh.triangles.copy()
    tri[flip] = tri[flip][:, ::-1]
    return TriangleMesh(mesh.vertices, tri, mesh.frequency)


def generate_sphere(radius_wavelengths, refinement_level, frequency):
    """Icosphere: an icosahedron subdivided ``refinement_level`` times, projected to the radius."""
    _check_positive(radius_wavelengths=radius_wavelengths, frequency=frequency)
    if refinement_level < 0:
        raise ValueError("refinement_level must be non-negative")
    radius = radius_wavelengths * wavelength(frequency)
    phi = (1.0 + 5.0**0.5) / 2.0
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.asarray(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(refinement_level):
        cache = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    vertices = np.array(verts) * radius
    return _orient_outward(TriangleMesh(vertices, np.array(faces), frequency))


def save_mesh(mesh, path):
    path = Path(path)
    lines = [f"{mesh.n_triangles} {mesh.n_vertices}"]
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += [" ".join(str(int(i)) for i in t) for t in mesh.triangles]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def load_mesh(path, frequency=None):
    """Read the text mesh format; raises :class:`MeshFormatError` with the line number."""
    try:
        text = Path(path).read_text().splitlines()
    except OSError as exc:
        raise MeshError(f"cannot read mesh file {path}: {exc.strerror}") from None
    rows = [(i + 1, line.split()) for i, line in enumerate(text)]
    rows = [(n, tok) for n, tok in rows if tok]
    if not rows:
        raise MeshFormatError("empty mesh file", 1)
    lineno, header = rows[0]
    if len(header) != 2:
        raise MeshFormatError("header must be 'ntri nvert'", lineno)
    try:
        ntri, nvert = int(header[0]), int(header[1])
    except ValueError:
        raise MeshFormatError("header must contain two integers", lineno) from None
    if ntri < 0 or nvert < 0:
        raise MeshFormatError("negative counts in header", lineno)
    if len(rows) - 1 != ntri + nvert:
        last = rows[-1][0]
        raise MeshFormatError(
            f"expected {nvert} vertex and {ntri} triangle lines, found {len(rows) - 1}", last
        )
    vertices = np.empty((nvert, 3))
    triangles = np.empty((ntri, 3), dtype=np.int64)
    for k, (lineno, tok) in enumerate(rows[1:]):
        if len(tok) != 3:
            raise MeshFormatError(f"expected 3 values, found {len(tok)}", lineno)
        try:
            if k < nvert:
                vertices[k] = [float(x) for x in tok]
            else:
                triangles[k - nvert] = [int(x) for x in tok]
        except ValueError:
            raise MeshFormatError(f"cannot parse {' '.join(tok)!r}", lineno) from None
    bad = np.flatnonzero((triangles < 0).any(axis=1) | (triangles >= nvert).any(axis=1))
    if bad.size:
        raise MeshFormatError(
            f"triangle index out of range 0..{nvert - 1}", rows[1 + nvert + bad[0]][0]
        )
    return TriangleMesh(vertices, triangles, frequency)
