"""
Hierarchical EFIE operator: dense near-field leaf blocks plus low-rank far
blocks over a :class:`~efieschur.cluster.BlockPartition`.

Everything is stored in tree order. ``H.perm[p]`` is the basis index at tree
position ``p``; ``matvec`` takes and returns vectors in basis order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import efie
from .lowrank import AcaConvergenceError, aca, recompress

__all__ = ["HOperator", "assemble", "assemble_near", "storage_report"]

COMPLEX_BYTES = 16
# ACA runs at this fraction of tol_aca; its stopping test only estimates the
# error, and recompression brings the rank back down afterwards
ACA_MARGIN = 0.3


@dataclass
class HOperator:
    """
    ``near[(t, s)]`` for leaf numbers t <= s (the (s, t) block is its transpose);
    ``far`` is a list of ``(row_slice, col_slice, LowRankBlock)`` with both
    orientations present.
    """

    n: int
    perm: np.ndarray
    leaf_slices: list
    near: dict
    far: list = field(default_factory=list)
    tol_aca: float = 0.0
    timings: dict = field(default_factory=dict)

    @property
    def n_leaves(self):
        return len(self.leaf_slices)

    def near_block(self, t, s):
        if t <= s:
            return self.near[(t, s)]
        return self.near[(s, t)].T

    def near_pairs(self):
        """All ordered near pairs (t, s), both orientations."""
        out = []
        for t, s in self.near:
            out.append((t, s))
            if t != s:
                out.append((s, t))
        return sorted(out)

    def _check(self, x):
        x = np.asarray(x)
        if x.shape[0] != self.n:
            raise ValueError(f"expected a vector of length {self.n}, got {x.shape[0]}")
        return x

    def to_tree(self, x):
        return np.asarray(x)[self.perm]

    def from_tree(self, xt):
        y = np.empty_like(xt)
        y[self.perm] = xt
        return y

    def near_matvec_tree(self, xt):
        y = np.zeros(xt.shape, dtype=np.result_type(xt, np.complex128))
        sl = self.leaf_slices
        for (t, s), blk in self.near.items():
            y[sl[t]] += blk @ xt[sl[s]]
            if t != s:
                y[sl[s]] += blk.T @ xt[sl[t]]
        return y

    def far_matvec_tree(self, xt):
        y = np.zeros(xt.shape, dtype=np.result_type(xt, np.complex128))
        for rs, cs, blk in self.far:
            if blk.rank:
                y[rs] += blk.U @ (blk.V @ xt[cs])
        return y

    def far_matvec(self, x):
        """Far-field part only, basis order."""
        x = self._check(x)
        return self.from_tree(self.far_matvec_tree(self.to_tree(x)))

    def matvec(self, x):
        x = self._check(x)
        xt = self.to_tree(x)
        return self.from_tree(self.near_matvec_tree(xt) + self.far_matvec_tree(xt))

    __matmul__ = matvec

    def to_dense(self):
        """Materialize (basis order); for tests on small problems."""
        z = np.zeros((self.n, self.n), dtype=np.complex128)
        sl = self.leaf_slices
        for t, s in self.near_pairs():
            z[sl[t], sl[s]] = self.near_block(t, s)
        for rs, cs, blk in self.far:
            z[rs, cs] = blk.to_dense()
        out = np.empty_like(z)
        out[np.ix_(self.perm, self.perm)] = z
        return out


def _leaf_slices(tree):
    return [slice(tree.nodes[i].start, tree.nodes[i].stop) for i in tree.leaves]


def assemble_near(basis, medium, partition):
    """Dense near blocks for t <= s, keyed by leaf number, assembled in sorted (t, s) order."""
    tree = partition.tree
    idx = tree.leaf_indices()
    near = {}
    for t, s in sorted(p for p in partition.near if p[0] <= p[1]):
        blk = efie.assemble_block(basis, medium, idx[t], idx[s])
        if t == s:
            blk = 0.5 * (blk + blk.T)
        near[(t, s)] = blk
    return near


def assemble(basis, medium, partition, tol_aca=1e-4, max_rank=None, near=None):
    """
    Near blocks densely, far blocks by ACA (at ``ACA_MARGIN * tol_aca``) followed
    by recompression at ``tol_aca``.

    Far blocks are computed for node pairs t < s and mirrored. Raises
    :class:`AcaConvergenceError` when ACA hits its rank cap on a far block.
    """
    tree = partition.tree
    t0 = time.perf_counter()
    if near is None:
        near = assemble_near(basis, medium, partition)
    t1 = time.perf_counter()
    far = []
    for t, s, level in partition.far:
        if t > s:
            continue
        rt, cs = tree.indices(t), tree.indices(s)

        def gen(r, c, rt=rt, cs=cs):
            return efie.assemble_block(basis, medium, rt[r], cs[c])

        blk = aca(gen, rt.size, cs.size, ACA_MARGIN * tol_aca, max_rank)
        if not blk.converged:
            raise AcaConvergenceError(
                f"ACA did not converge on far block ({t}, {s}) at level {level}, "
                f"shape {rt.size}x{cs.size}"
            )
        blk = recompress(blk, tol_aca)
        nt, ns = tree.nodes[t], tree.nodes[s]
        rsl, csl = slice(nt.start, nt.stop), slice(ns.start, ns.stop)
        far.append((rsl, csl, blk))
        far.append((csl, rsl, blk.T))
    t2 = time.perf_counter()
    return HOperator(
        n=tree.n,
        perm=tree.perm,
        leaf_slices=_leaf_slices(tree),
        near=near,
        far=far,
        tol_aca=tol_aca,
        timings={"near_seconds": t1 - t0, "far_seconds": t2 - t1},
    )


def storage_report(H):
    """Stored complex values: near counts both orientations, far counts r (m + n) per block."""
    near_values = 0
    for (t, s), blk in H.near.items():
        near_values += blk.size * (1 if t == s else 2)
    far_values = sum(blk.storage for _, _, blk in H.far)
    return {
        "near_values": int(near_values),
        "far_values": int(far_values),
        "total_bytes": int((near_values + far_values) * COMPLEX_BYTES),
    }

