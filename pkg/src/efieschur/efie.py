"""
EFIE Galerkin matrix entries, plane-wave excitation and far-field RCS for RWG
bases in vacuum.

Time convention is ``exp(+j w t)``; the Green's function is ``exp(-jkR)/R``
and the system solved is ``Z I = b`` with ``b_i = <f_i, E_inc>``.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
from scipy.constants import epsilon_0, mu_0

from . import _kernels

__all__ = [
    "DenseCapError",
    "Medium",
    "PlaneWave",
    "QuadratureRule",
    "triangle_rule",
    "subdivided_rule",
    "matrix_entry",
    "assemble_block",
    "assemble_dense",
    "excitation_vector",
    "radiation_vectors",
    "far_field",
    "bistatic_rcs",
    "monostatic_rcs",
    "RCS_FLOOR_DBSM",
    "DENSE_CAP",
]

DENSE_CAP = 6000
RCS_FLOOR_DBSM = -300.0
# triangle pairs closer than this many diameters get singularity extraction
NEAR_FACTOR = 2.0


class DenseCapError(MemoryError):
    """Dense assembly refused because N exceeds the configured cap."""


@dataclass(frozen=True)
class Medium:
    frequency: float
    mu: float = mu_0
    eps: float = epsilon_0

    def __post_init__(self):
        if not (self.frequency > 0 and self.mu > 0 and self.eps > 0):
            raise ValueError("frequency, mu and eps must be positive")

    @property
    def omega(self):
        return 2.0 * np.pi * self.frequency

    @property
    def k(self):
        return self.omega * np.sqrt(self.mu * self.eps)

    @property
    def eta(self):
        return np.sqrt(self.mu / self.eps)

    @property
    def wavelength(self):
        return 2.0 * np.pi / self.k

    def coefficients(self):
        """Prefactors of the vector- and scalar-potential terms."""
        ca = 1j * self.omega * self.mu / (4.0 * np.pi)
        cp = 1.0 / (1j * self.omega * 4.0 * np.pi * self.eps)
        return ca, cp


@dataclass(frozen=True)
class PlaneWave:
    direction: np.ndarray
    polarization: np.ndarray
    amplitude: complex = 1.0

    def __post_init__(self):
        d = np.asarray(self.direction, float)
        p = np.asarray(self.polarization, float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12 or abs(np.linalg.norm(p) - 1.0) > 1e-12:
            raise ValueError("direction and polarization must be unit vectors")
        if abs(d @ p) > 1e-12:
            raise ValueError("polarization must be orthogonal to the propagation direction")
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "polarization", p)

    def field(self, points, k):
        phase = np.exp(-1j * k * (points @ self.direction))
        return self.amplitude * phase[..., None] * self.polarization

    @classmethod
    def from_angles(cls, theta, phi, polarization="theta", amplitude=1.0):
        """Wave arriving *from* spherical direction (theta, phi), i.e. propagating along -r_hat."""
        st, ct, sp, cph = np.sin(theta), np.cos(theta), np.sin(phi), np.cos(phi)
        r_hat = np.array([st * cph, st * sp, ct])
        theta_hat = np.array([ct * cph, ct * sp, -st])
        phi_hat = np.array([-sp, cph, 0.0])
        pol = theta_hat if polarization == "theta" else phi_hat
        return cls(-r_hat, pol, amplitude)


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points (Q, 3) and weights summing to one on the reference triangle."""

    points: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self):
        p = np.ascontiguousarray(self.points, float)
        w = np.ascontiguousarray(self.weights, float)
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("quadrature weights must sum to 1")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "weights", w)

    def map(self, mesh):
        """Physical quadrature points, shape (T, Q, 3)."""
        p = mesh.vertices[mesh.triangles]
        return np.einsum("qa,tac->tqc", self.points, p)


def _perm3(a, b):
    return [(a, b, b), (b, a, b), (b, b, a)]


def triangle_rule(order):
    """Symmetric rules exact to polynomial ``order`` (1, 2 or 5 points: 1, 3, 7)."""
    if order <= 1:
        return QuadratureRule(np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0]), 1)
    if order == 2:
        return QuadratureRule(np.array(_perm3(2 / 3, 1 / 6)), np.full(3, 1 / 3), 2)
    if order <= 5:
        a1, b1 = 0.059715871789770, 0.470142064105115
        a2, b2 = 0.797426985353087, 0.101286507323456
        pts = [(1 / 3, 1 / 3, 1 / 3)] + _perm3(a1, b1) + _perm3(a2, b2)
        w = [0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3
        return QuadratureRule(np.array(pts), np.array(w), 5)
    raise ValueError(f"no rule of order {order}; use subdivided_rule for refinement")


def subdivided_rule(base, levels):
    """Composite rule: split the triangle into 4**levels congruent pieces, apply ``base`` on each."""
    tris = [np.eye(3)]
    for _ in range(levels):
        nxt = []
        for t in tris:
            a, b, c = t
            ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
            nxt += [np.array([a, ab, ca]), np.array([ab, b, bc]), np.array([ca, bc, c]),
                    np.array([ab, bc, ca])]
        tris = nxt
    pts = np.concatenate([base.points @ t for t in tris])
    w = np.concatenate([base.weights / len(tris)] * len(tris))
    return QuadratureRule(pts, w, base.order)


_RULE3 = triangle_rule(2)
_RULE7 = triangle_rule(5)
_geometry_cache = weakref.WeakKeyDictionary()


def _geometry(mesh):
    try:
        return _geometry_cache[mesh]
    except KeyError:
        pass
    p = mesh.vertices[mesh.triangles]
    edges = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
    diam = np.linalg.norm(edges, axis=2).max(axis=1)
    geom = (
        np.ascontiguousarray(mesh.vertices),
        np.ascontiguousarray(mesh.triangles),
        np.ascontiguousarray(mesh.normals),
        np.ascontiguousarray(mesh.areas),
        np.ascontiguousarray(mesh.centroids),
        diam,
        NEAR_FACTOR,
    )
    rules = (
        np.ascontiguousarray(_RULE3.map(mesh)),
        _RULE3.weights,
        np.ascontiguousarray(_RULE7.map(mesh)),
        _RULE7.weights,
    )
    _geometry_cache[mesh] = (geom, rules)
    return geom, rules


def _basis_arrays(basis):
    return (basis.tri_plus, basis.tri_minus, basis.local_plus, basis.local_minus, basis.lengths)


def assemble_block(basis, medium, rows, cols):
    """Dense sub-block ``Z[rows][:, cols]`` with the standard near/far quadrature scheme."""
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    out = np.zeros((rows.size, cols.size), dtype=np.complex128)
    if rows.size == 0 or cols.size == 0:
        return out
    geom, rules = _geometry(basis.mesh)
    ca, cp = medium.coefficients()
    _kernels.assemble_block(rows, cols, _basis_arrays(basis), medium.k, ca, cp, geom, rules, out)
    return out


def matrix_entry(i, j, basis, medium, rule=None):
    """
    Single Galerkin entry Z(i, j).

    With ``rule=None`` the production scheme is used (singularity extraction and
    7-point rules for close triangle pairs, 3 x 3 points otherwise). Passing a
    :class:`QuadratureRule` applies that rule to both integrals of every triangle
    pair without extraction, which is only meaningful for well-separated bases.
    """
    n = basis.n
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"basis index out of range 0..{n - 1}")
    rows = np.array([i], dtype=np.int64)
    cols = np.array([j], dtype=np.int64)
    if rule is None:
        return assemble_block(basis, medium, rows, cols)[0, 0]
    out = np.zeros((1, 1), dtype=np.complex128)
    ca, cp = medium.coefficients()
    mesh = basis.mesh
    _kernels.assemble_block_rule(
        rows, cols, _basis_arrays(basis), medium.k, ca, cp,
        np.ascontiguousarray(mesh.vertices), np.ascontiguousarray(mesh.triangles),
        np.ascontiguousarray(rule.map(mesh)), rule.weights, out,
    )
    return out[0, 0]


def assemble_dense(basis, medium, cap=DENSE_CAP, chunk=512):
    """Full N x N matrix; complex symmetric by construction (upper chunks mirrored)."""
    n = basis.n
    if n > cap:
        raise DenseCapError(f"dense assembly of N={n} exceeds cap {cap}")
    z = np.empty((n, n), dtype=np.complex128)
    starts = list(range(0, n, chunk))
    for a in starts:
        ra = np.arange(a, min(a + chunk, n))
        for b in starts:
            if b < a:
                continue
            rb = np.arange(b, min(b + chunk, n))
            blk = assemble_block(basis, medium, ra, rb)
            z[a:a + ra.size, b:b + rb.size] = blk
            if b != a:
                z[b:b + rb.size, a:a + ra.size] = blk.T
    return z


def _edge_moments(basis, rule, fn):
    """
    For every triangle and local edge, int (r - p_a) fn(r) dS / A with the
    normalized rule; ``fn(points)`` returns (T, Q, ...) weights.
    """
    mesh = basis.mesh
    pts = rule.map(mesh)  # (T, Q, 3)
    vals = fn(pts)
    free = mesh.vertices[mesh.triangles]
    rel = pts[:, None, :, :] - free[:, :, None, :]  # (T, 3 local, Q, 3)
    return rel, vals


def _scatter_to_basis(basis, per_edge):
    """Sum per-(triangle, local edge) terms times s l / 2 into basis order."""
    out = np.zeros((basis.n,) + per_edge.shape[2:], dtype=np.complex128)
    for a in range(3):
        sign = basis.tri_sign[:, a]
        has = sign != 0
        idx = basis.tri_basis[has, a]
        coef = 0.5 * sign[has] * basis.lengths[idx]
        np.add.at(out, idx, coef.reshape((-1,) + (1,) * (per_edge.ndim - 2)) * per_edge[has, a])
    return out


def excitation_vector(basis, wave, medium, rule=None):
    """Right-hand side b_i = int f_i . E_inc dS."""
    rule = _RULE7 if rule is None else rule
    rel, e = _edge_moments(basis, rule, lambda pts: wave.field(pts, medium.k))
    per_edge = np.einsum("q,taqc,tqc->ta", rule.weights, rel, e)
    return _scatter_to_basis(basis, per_edge)


def radiation_vectors(basis, medium, directions, rule=None):
    """int f_i(r') exp(jk r_hat . r') dS' for each basis and direction, shape (N, D, 3)."""
    rule = _RULE7 if rule is None else rule
    dirs = np.atleast_2d(np.asarray(directions, float))
    rel, ph = _edge_moments(
        basis, rule, lambda pts: np.exp(1j * medium.k * np.einsum("tqc,dc->tqd", pts, dirs))
    )
    per_edge = np.einsum("q,taqc,tqd->tadc", rule.weights, rel, ph)
    return _scatter_to_basis(basis, per_edge)


def far_field(currents, basis, medium, directions, rule=None):
    """
    Far-zone scattered field ``E(r_hat) * r * exp(jkr)`` for each direction,
    shape (D, 3). ``currents`` is (N,) or (N, D) with one column per direction.
    """
    dirs = np.atleast_2d(np.asarray(directions, float))
    rad = radiation_vectors(basis, medium, dirs, rule)
    cur = np.asarray(currents)
    if cur.ndim == 1:
        vec = np.einsum("n,ndc->dc", cur, rad)
    else:
        vec = np.einsum("nd,ndc->dc", cur, rad)
    proj = vec - np.einsum("dc,dc->d", vec, dirs)[:, None] * dirs
    return -1j * medium.omega * medium.mu / (4.0 * np.pi) * proj


def _to_dbsm(sigma):
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(sigma)
    return np.where(sigma > 0, db, RCS_FLOOR_DBSM)


def bistatic_rcs(currents, basis, medium, directions, amplitude=1.0, component=None):
    """RCS 4 pi |E_far|^2 / |E_inc|^2 in dBsm; ``component`` selects one polarization vector."""
    e = far_field(currents, basis, medium, directions)
    if component is not None:
        e = (e @ np.asarray(component, float))[:, None]
    sigma = 4.0 * np.pi * np.sum(np.abs(e) ** 2, axis=1) / abs(amplitude) ** 2
    return _to_dbsm(sigma)


def monostatic_rcs(currents, basis, medium, directions, amplitude=1.0):
    """
    Backscatter RCS (dBsm). ``directions`` are the incident propagation
    directions and ``currents`` holds the matching solution in each column.
    """
    dirs = -np.atleast_2d(np.asarray(directions, float))
    return bistatic_rcs(currents, basis, medium, dirs, amplitude)
