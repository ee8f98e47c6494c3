"""
Symmetric block elimination of the near field (scaling preconditioner).

The near-field matrix Z_N is eliminated leaf by leaf in a chosen order. Step k
stores the right scaling row ``alpha_kj = -Z_kk^{-1} Z_kj`` (current, partially
eliminated blocks) for every live j after k, and updates the trailing blocks
``Z_ij += Z_ik alpha_kj``. With A = alpha_1 ... alpha_K the product
``A^T Z_N A`` is block diagonal; its blocks are the final pivots, kept as LU
factors. Because Z_N is complex symmetric the left scaling rows are the
transposes of the right ones and are never stored.

Blocks at positions outside the original near pattern (fill-in) may be
compressed at ``fill_tol`` when their scaling row is formed.

Vectors handled here are in tree order (see :class:`efieschur.hmatrix.HOperator`).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import _blockops
from .lowrank import LowRankBlock, compress_dense, recompress

__all__ = [
    "SingularPivotError",
    "ScalingStep",
    "SchurPreconditioner",
    "build",
    "null_field_build",
    "block_jacobi_build",
    "identity_preconditioner",
    "scaling_matrix_dense",
    "near_matrix_dense",
    "write_stats",
]


class SingularPivotError(np.linalg.LinAlgError):
    def __init__(self, leaf, detail=""):
        super().__init__(f"singular pivot block at leaf {leaf}{': ' + detail if detail else ''}")
        self.leaf = leaf


@dataclass
class ScalingStep:
    """Block row of one elimination step: ``blocks[i]`` is alpha_{pivot, cols[i]}."""

    pivot: int
    cols: list
    blocks: list
    left: list | None = None  # only for the non-symmetric reference build

    def nnz(self):
        return sum(_values(b) for b in self.blocks)


def _values(b):
    return b.storage if isinstance(b, LowRankBlock) else b.size


@dataclass
class SchurPreconditioner:
    """
    ``kind`` is one of ``schur``, ``nullfield``, ``jacobi``, ``none``.
    ``left_scaling`` says whether apply_left is part of the scheme.
    """

    leaf_slices: list
    order: np.ndarray
    steps: list
    diag: dict
    fill_tol: float = 0.0
    kind: str = "schur"
    symmetric: bool = True
    left_scaling: bool = True
    stats: dict = field(default_factory=dict)

    @property
    def n(self):
        return sum(s.stop - s.start for s in self.leaf_slices)

    def _packs(self):
        if getattr(self, "_pack", None) is None:
            self._pack = _blockops.pack_steps(self.steps, self.leaf_slices)
            self._lpack = None
            if not self.symmetric and self.left_scaling:
                self._lpack = _blockops.pack_steps(self.steps, self.leaf_slices, use_left=True)
            ranks = self._pack.rk
            self._tmp = np.zeros(max(1, int(ranks.max()) if ranks.size else 1), dtype=np.complex128)
        return self._pack, self._lpack

    def _apply(self, x, kernel, pack):
        y = np.array(x, dtype=np.complex128, copy=True)
        if y.ndim == 2:
            for c in range(y.shape[1]):
                col = np.ascontiguousarray(y[:, c])
                kernel(*pack.args, col, self._tmp)
                y[:, c] = col
        else:
            kernel(*pack.args, y, self._tmp)
        return y

    def apply_right(self, x):
        """x = alpha_1 alpha_2 ... alpha_K x_tilde (last step first)."""
        if not self.steps:
            return np.array(x, dtype=np.complex128, copy=True)
        pack, _ = self._packs()
        return self._apply(x, _blockops.apply_right, pack)

    def apply_left(self, x):
        """b_tilde = alpha_K^T ... alpha_1^T b (first step first)."""
        if not self.left_scaling or not self.steps:
            return np.array(x, dtype=np.complex128, copy=True)
        pack, lpack = self._packs()
        if lpack is None:
            return self._apply(x, _blockops.apply_left_transposed, pack)
        return self._apply(x, _blockops.apply_left_stored, lpack)

    def solve_diag(self, y):
        """Per-leaf LU solves with the scaled diagonal blocks."""
        out = np.array(y, dtype=np.complex128, copy=True)
        if self.kind == "none":
            return out
        for leaf, lu in self.diag.items():
            s = self.leaf_slices[leaf]
            out[s] = sla.lu_solve(lu, out[s], check_finite=False)
        return out

    def diag_matvec(self, x):
        """Z_tilde_N x from the stored LU factors (used for checks)."""
        out = np.zeros_like(np.asarray(x, dtype=np.complex128))
        for leaf, (lu, piv) in self.diag.items():
            s = self.leaf_slices[leaf]
            L = np.tril(lu, -1) + np.eye(lu.shape[0])
            U = np.triu(lu)
            v = L @ (U @ x[s])
            # undo the row interchanges of getrf
            for i in range(len(piv) - 1, -1, -1):
                p = piv[i]
                if p != i:
                    v[[i, p]] = v[[p, i]]
            out[s] = v
        return out

    def scaling_nnz(self):
        return int(sum(st.nnz() for st in self.steps))


def _factor(block, leaf):
    if block.size == 0:
        raise SingularPivotError(leaf, "empty block")
    lu, piv = sla.lu_factor(block, check_finite=False)
    d = np.abs(np.diag(lu))
    if not np.all(np.isfinite(lu)) or d.min() <= np.finfo(float).eps * max(d.max(), 1e-300) * block.shape[0]:
        raise SingularPivotError(leaf)
    return lu, piv


def _normalize_order(order, n_leaves):
    if order is None:
        return np.arange(n_leaves)
    perm = getattr(order, "perm", order)
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(n_leaves)):
        raise ValueError("elimination order must be a permutation of the leaves")
    return perm


def _near_pairs(near):
    pairs = set()
    for t, s in near:
        pairs.add((t, s))
        pairs.add((s, t))
    return pairs


def build(near, leaf_slices, order=None, fill_tol=1e-2, symmetric=True, restrict_to_pattern=False):
    """
    Eliminate the near field in ``order`` and return the preconditioner.

    Parameters
    ----------
    near : dict
        ``near[(t, s)]`` dense blocks for t <= s (leaf numbers), the lower
        blocks being their transposes.
    leaf_slices : list of slice
        Tree-order range of each leaf.
    order : LeafOrdering or sequence, optional
        Elimination order; identity when omitted.
    fill_tol : float
        Truncation tolerance for fill-in blocks; 0 keeps them dense.
    symmetric : bool
        If False, run the two-sided reference build that forms and stores the
        left scaling rows by separate solves and updates both triangles.
    restrict_to_pattern : bool
        Drop every update landing outside the original pattern (null-field
        style). Used by :func:`null_field_build`.
    """
    t0 = time.perf_counter()
    n_leaves = len(leaf_slices)
    order = _normalize_order(order, n_leaves)
    pos = np.empty(n_leaves, dtype=np.int64)
    pos[order] = np.arange(n_leaves)
    pattern = _near_pairs(near)

    # working blocks keyed by (leaf_i, leaf_j); symmetric mode keeps pos[i] <= pos[j] only
    work = {}
    rows = [set() for _ in range(n_leaves)]  # rows[i]: leaves j with a live block (i, j), j after i
    for (t, s), blk in near.items():
        a, b = (t, s) if pos[t] <= pos[s] else (s, t)
        blk = blk if (a, b) == (t, s) else blk.T
        work[(a, b)] = np.array(blk, dtype=np.complex128, copy=True)
        if a != b:
            rows[a].add(b)
            if not symmetric:
                work[(b, a)] = work[(a, b)].T.copy()

    steps, diag = [], {}
    solves = updates = fill_blocks = fallbacks = 0
    acc_tol = 0.1 * fill_tol  # truncation while low-rank fill accumulates
    live = sum(_values(v) for v in work.values())
    peak_work = live

    for k in order:
        zkk = work.pop((k, k))
        live -= _values(zkk)
        if isinstance(zkk, LowRankBlock):  # cannot happen for a pattern position, kept for safety
            zkk = zkk.to_dense()
        if symmetric:
            zkk = 0.5 * (zkk + zkk.T)
        lu = _factor(zkk, int(k))
        diag[int(k)] = lu
        cols = sorted(rows[k], key=lambda j: pos[j])
        rows[k] = set()
        right, left, trans = [], [], []
        for j in cols:
            b = work.pop((k, j))
            live -= _values(b)
            if (k, j) not in pattern:
                fill_blocks += 1
                if fill_tol > 0:
                    b, dense = _compress_fill(b, fill_tol)
                    fallbacks += dense
            if isinstance(b, LowRankBlock):
                a = LowRankBlock(-sla.lu_solve(lu, b.U, check_finite=False), b.V, fill_tol)
            else:
                a = -sla.lu_solve(lu, b, check_finite=False)
            solves += 1
            right.append(a)
            if symmetric:
                trans.append(b.T)
            else:
                bl = work.pop((j, k))
                live -= _values(bl)
                if isinstance(b, LowRankBlock):
                    bl = b.T  # compressed fill: keep the left row consistent with the right one
                if isinstance(bl, LowRankBlock):
                    al = LowRankBlock(bl.U, -sla.lu_solve(lu, bl.V.T, trans=1, check_finite=False).T, fill_tol)
                else:
                    al = -sla.lu_solve(lu, bl.T, trans=1, check_finite=False).T
                solves += 1
                left.append(al)
                trans.append(bl)
        # trailing update Z_ij += Z_ik alpha_kj
        for ai, i in enumerate(cols):
            zik = trans[ai]
            for aj in range(ai if symmetric else 0, len(cols)):
                j = cols[aj]
                if restrict_to_pattern and (i, j) not in pattern:
                    continue
                upd = _product(zik, right[aj])
                cur = work.get((i, j))
                if cur is None:
                    if isinstance(upd, LowRankBlock) and (i, j) in pattern:
                        upd = upd.to_dense()
                    work[(i, j)] = upd
                    live += _values(upd)
                    if pos[i] < pos[j]:
                        rows[i].add(j)
                else:
                    new = _accumulate(cur, upd, acc_tol)
                    live += _values(new) - _values(cur)
                    work[(i, j)] = new
                updates += 1
        steps.append(ScalingStep(int(k), [int(j) for j in cols], right, left if not symmetric else None))
        peak_work = max(peak_work, live)

    pre = SchurPreconditioner(list(leaf_slices), order, steps, diag, fill_tol,
                              kind="nullfield" if restrict_to_pattern else "schur",
                              symmetric=symmetric, left_scaling=not restrict_to_pattern)
    pre._packs()
    pre.stats = {
        "fill_blocks": fill_blocks,
        "scaling_blocks": sum(len(s.cols) for s in steps),
        "nnz": pre.scaling_nnz(),
        "dense_fallbacks": fallbacks,
        "block_solves": solves,
        "block_updates": updates,
        "peak_work_values": int(peak_work),
        "setup_seconds": time.perf_counter() - t0,
    }
    return pre


def _product(zik, a):
    """Z_ik @ alpha_kj; low-rank whenever either factor is."""
    if isinstance(a, LowRankBlock):
        if isinstance(zik, LowRankBlock):
            return LowRankBlock(zik.U, (zik.V @ a.U) @ a.V, a.tol)
        return LowRankBlock(zik @ a.U, a.V, a.tol)
    if isinstance(zik, LowRankBlock):
        return LowRankBlock(zik.U, zik.V @ a, zik.tol)
    return zik @ a


def _accumulate(cur, upd, tol):
    """
    cur + upd. Low-rank sums just concatenate their factors (truncation waits
    for the pivot step) until they would outgrow the dense block; anything
    touching a dense block is dense.
    """
    if isinstance(cur, LowRankBlock):
        if isinstance(upd, LowRankBlock):
            m, n = cur.shape
            if (cur.rank + upd.rank) * (m + n) < m * n:
                return LowRankBlock(np.hstack([cur.U, upd.U]), np.vstack([cur.V, upd.V]), tol)
            return cur.U @ cur.V + upd.U @ upd.V
        return cur.to_dense() + upd
    if isinstance(upd, LowRankBlock):
        cur += upd.U @ upd.V
    else:
        cur += upd
    return cur


def _compress_fill(b, tol):
    """Final truncation of a fill block at pivot time. Returns (block, 1 if kept dense else 0)."""
    if isinstance(b, LowRankBlock):
        c = recompress(b, tol)
        m, n = c.shape
        if c.storage >= m * n:
            return c.to_dense(), 1
        return c, 0
    c = compress_dense(b, tol)
    return c, int(not isinstance(c, LowRankBlock))


def null_field_build(near, leaf_slices, order=None):
    """
    Baseline: the same elimination loop with every update outside the original
    near pattern dropped, right scaling only, and the approximate pivots kept.
    """
    return build(near, leaf_slices, order, fill_tol=0.0, restrict_to_pattern=True)


def block_jacobi_build(near, leaf_slices):
    """Baseline: LU of the raw diagonal blocks, no scaling."""
    t0 = time.perf_counter()
    diag = {}
    for (t, s), blk in near.items():
        if t == s:
            diag[t] = _factor(np.asarray(blk, dtype=np.complex128), t)
    pre = SchurPreconditioner(list(leaf_slices), np.arange(len(leaf_slices)), [], diag, 0.0,
                              kind="jacobi", left_scaling=False)
    pre.stats = {"fill_blocks": 0, "scaling_blocks": 0, "nnz": 0, "dense_fallbacks": 0,
                 "block_solves": 0, "block_updates": 0, "peak_work_values": 0,
                 "setup_seconds": time.perf_counter() - t0}
    return pre


def identity_preconditioner(leaf_slices):
    pre = SchurPreconditioner(list(leaf_slices), np.arange(len(leaf_slices)), [], {}, 0.0,
                              kind="none", left_scaling=False)
    pre.stats = {"fill_blocks": 0, "scaling_blocks": 0, "nnz": 0, "dense_fallbacks": 0,
                 "block_solves": 0, "block_updates": 0, "peak_work_values": 0, "setup_seconds": 0.0}
    return pre


# --- dense reconstructions for small-problem checks (tree order) ---


def scaling_matrix_dense(pre):
    """A = alpha_1 ... alpha_K as a dense matrix (tree order)."""
    n = pre.n
    return np.column_stack([pre.apply_right(e) for e in np.eye(n, dtype=np.complex128)])


def left_matrix_dense(pre):
    n = pre.n
    return np.column_stack([pre.apply_left(e) for e in np.eye(n, dtype=np.complex128)])


def near_matrix_dense(near, leaf_slices):
    n = sum(s.stop - s.start for s in leaf_slices)
    z = np.zeros((n, n), dtype=np.complex128)
    for (t, s), blk in near.items():
        z[leaf_slices[t], leaf_slices[s]] = blk
        z[leaf_slices[s], leaf_slices[t]] = blk.T
    return z


def block_off_diagonal_mass(m, leaf_slices):
    """Frobenius norm of ``m`` outside the leaf diagonal blocks."""
    mask = np.ones(m.shape, dtype=bool)
    for s in leaf_slices:
        mask[s, s] = False
    return float(np.linalg.norm(m[mask]))


def write_stats(path, rows):
    """Atomic CSV of stats dicts (one row each, union of keys, sorted header)."""
    rows = list(rows)
    keys = sorted({k for r in rows for k in r})
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)
    tmp.replace(path)
