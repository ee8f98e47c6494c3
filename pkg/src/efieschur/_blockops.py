"""
Packed storage and numba kernels for applying the scaling rows.

Every scaling block is flattened into one complex buffer. Block ``b`` of the
pack has a row segment ``[rs[b], rs[b] + rm[b])`` (the pivot leaf), a column
segment ``[cs[b], cs[b] + cn[b])``, a rank ``rk[b]`` (-1 for dense) and an
offset ``off[b]``. Dense blocks are stored row-major; low-rank blocks store U
(m x r) followed by V (r x n), both row-major. Blocks of one step are
contiguous and steps appear in elimination order (``step_ptr``).
"""

import numpy as np
from numba import njit

from .lowrank import LowRankBlock


class Pack:
    __slots__ = ("data", "rs", "rm", "cs", "cn", "rk", "off", "step_ptr")

    def __init__(self, data, rs, rm, cs, cn, rk, off, step_ptr):
        self.data = data
        self.rs = rs
        self.rm = rm
        self.cs = cs
        self.cn = cn
        self.rk = rk
        self.off = off
        self.step_ptr = step_ptr

    @property
    def args(self):
        return (self.data, self.rs, self.rm, self.cs, self.cn, self.rk, self.off, self.step_ptr)


def pack_steps(steps, leaf_slices, use_left=False):
    """
    Flatten ``steps`` (their ``blocks``, or ``left`` when ``use_left``). The
    step blocks are rebound to views of the packed buffer, so nothing is held
    twice.
    """
    sizes, meta = 0, []
    step_ptr = [0]
    for st in steps:
        blocks = st.left if use_left else st.blocks
        k = leaf_slices[st.pivot]
        for j, b in zip(st.cols, blocks):
            c = leaf_slices[j]
            if use_left:
                # left blocks map pivot -> column leaf: rows are the column leaf
                r0, r1, c0, c1 = c.start, c.stop, k.start, k.stop
            else:
                r0, r1, c0, c1 = k.start, k.stop, c.start, c.stop
            if isinstance(b, LowRankBlock):
                rank = b.rank
                size = b.U.size + b.V.size
            else:
                rank = -1
                size = b.size
            meta.append((r0, r1 - r0, c0, c1 - c0, rank, sizes, b))
            sizes += size
        step_ptr.append(len(meta))
    data = np.empty(sizes, dtype=np.complex128)
    nb = len(meta)
    rs = np.empty(nb, np.int64)
    rm = np.empty(nb, np.int64)
    cs = np.empty(nb, np.int64)
    cn = np.empty(nb, np.int64)
    rk = np.empty(nb, np.int64)
    off = np.empty(nb, np.int64)
    views = []
    for i, (r0, m, c0, n, rank, o, b) in enumerate(meta):
        rs[i], rm[i], cs[i], cn[i], rk[i], off[i] = r0, m, c0, n, rank, o
        if rank < 0:
            v = data[o:o + b.size].reshape(b.shape)
            v[...] = b
        else:
            u = b.U.size
            U = data[o:o + u].reshape(b.U.shape)
            V = data[o + u:o + u + b.V.size].reshape(b.V.shape)
            U[...] = b.U
            V[...] = b.V
            v = LowRankBlock(U, V, b.tol, b.residual_estimate, b.norm_estimate, b.converged)
        views.append(v)
    at = 0
    for st in steps:
        blocks = st.left if use_left else st.blocks
        for q in range(len(blocks)):
            blocks[q] = views[at]
            at += 1
    return Pack(data, rs, rm, cs, cn, rk, off, np.array(step_ptr, dtype=np.int64))


@njit(cache=True)
def _gemv_add(data, o, m, n, x, x0, y, y0):
    # y[y0:y0+m] += A x[x0:x0+n], A row-major at data[o:]
    for i in range(m):
        acc = 0j
        base = o + i * n
        for j in range(n):
            acc += data[base + j] * x[x0 + j]
        y[y0 + i] += acc


@njit(cache=True)
def _gemv_t_add(data, o, m, n, x, x0, y, y0):
    # y[y0:y0+n] += A^T x[x0:x0+m]
    for i in range(m):
        xi = x[x0 + i]
        base = o + i * n
        for j in range(n):
            y[y0 + j] += data[base + j] * xi


@njit(cache=True)
def _block_add(data, rs, rm, cs, cn, rk, off, b, x, y, tmp):
    # y[row seg] += B x[col seg]
    m, n, r, o = rm[b], cn[b], rk[b], off[b]
    if r < 0:
        _gemv_add(data, o, m, n, x, cs[b], y, rs[b])
    elif r > 0:
        for q in range(r):
            tmp[q] = 0j
        _gemv_add(data, o + m * r, r, n, x, cs[b], tmp, 0)
        _gemv_add(data, o, m, r, tmp, 0, y, rs[b])


@njit(cache=True)
def _block_add_t(data, rs, rm, cs, cn, rk, off, b, x, y, tmp):
    # y[col seg] += B^T x[row seg]
    m, n, r, o = rm[b], cn[b], rk[b], off[b]
    if r < 0:
        _gemv_t_add(data, o, m, n, x, rs[b], y, cs[b])
    elif r > 0:
        for q in range(r):
            tmp[q] = 0j
        _gemv_t_add(data, o, m, r, x, rs[b], tmp, 0)
        _gemv_t_add(data, o + m * r, r, n, tmp, 0, y, cs[b])


@njit(cache=True)
def apply_right(data, rs, rm, cs, cn, rk, off, step_ptr, y, tmp):
    """In place: steps last to first, y[pivot] += sum_j alpha_kj y[j]."""
    for s in range(step_ptr.size - 2, -1, -1):
        for b in range(step_ptr[s], step_ptr[s + 1]):
            _block_add(data, rs, rm, cs, cn, rk, off, b, y, y, tmp)


@njit(cache=True)
def apply_left_transposed(data, rs, rm, cs, cn, rk, off, step_ptr, y, tmp):
    """In place: steps first to last, y[j] += alpha_kj^T y[pivot]."""
    for s in range(step_ptr.size - 1):
        for b in range(step_ptr[s], step_ptr[s + 1]):
            _block_add_t(data, rs, rm, cs, cn, rk, off, b, y, y, tmp)


@njit(cache=True)
def apply_left_stored(data, rs, rm, cs, cn, rk, off, step_ptr, y, tmp):
    """In place, reference build: y[j] += left_jk y[pivot] with explicit left blocks."""
    for s in range(step_ptr.size - 1):
        for b in range(step_ptr[s], step_ptr[s + 1]):
            _block_add(data, rs, rm, cs, cn, rk, off, b, y, y, tmp)
