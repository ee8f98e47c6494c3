"""
Low-rank blocks: partially pivoted ACA, QR/SVD recompression and truncated
SVD compression of materialized blocks.

All tolerances are relative Frobenius tolerances: a block A approximating Z
aims at ||Z - A||_F <= tol * ||Z||_F.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

__all__ = [
    "LowRankBlock",
    "AcaConvergenceError",
    "aca",
    "recompress",
    "compress_dense",
    "truncation_rank",
]


class AcaConvergenceError(RuntimeError):
    """ACA reached its rank cap before meeting the tolerance on a far-field block."""


@dataclass
class LowRankBlock:
    """``U @ V`` with U (m, r) and V (r, n)."""

    U: np.ndarray
    V: np.ndarray
    tol: float = 0.0
    residual_estimate: float = 0.0
    norm_estimate: float = 0.0
    converged: bool = True

    @property
    def rank(self):
        return self.U.shape[1]

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[1])

    @property
    def storage(self):
        """Stored values r (m + n)."""
        m, n = self.shape
        return self.rank * (m + n)

    @property
    def T(self):
        return LowRankBlock(self.V.T, self.U.T, self.tol, self.residual_estimate,
                            self.norm_estimate, self.converged)

    def to_dense(self):
        return self.U @ self.V

    def __matmul__(self, x):
        if self.rank == 0:
            return np.zeros((self.shape[0],) + np.shape(x)[1:], dtype=np.result_type(self.U, x))
        return self.U @ (self.V @ x)


def truncation_rank(s, tol):
    """Smallest r with sqrt(sum_{i >= r} s_i^2) <= tol * ||s||_2 (s sorted descending)."""
    if s.size == 0 or s[0] == 0.0:
        return 0
    tail = np.sqrt(np.cumsum((s**2)[::-1]))[::-1]  # tail[r] = ||s[r:]||
    target = tol * tail[0]
    ok = np.flatnonzero(tail <= target)
    return int(ok[0]) if ok.size else s.size


def aca(gen, m, n, tol, max_rank=None):
    """
    Partially pivoted adaptive cross approximation of an implicit m x n block.

    ``gen(rows, cols)`` returns the dense sub-block for index arrays. The loop
    stops when ||u_k|| ||v_k|| <= tol * ||S_k||_F (incrementally estimated), or
    when ``max_rank`` (default min(m, n) // 2) terms have been taken, in which
    case the result is flagged ``converged=False``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_rank is None:
        max_rank = max(1, min(m, n) // 2)
    all_rows = np.arange(m)
    all_cols = np.arange(n)
    us, vs = [], []
    used = np.zeros(m, dtype=bool)
    norm2 = 0.0
    last = 0.0
    converged = False
    i = 0
    scale = 0.0
    while len(us) < max_rank:
        used[i] = True
        row = gen(np.array([i]), all_cols)[0].astype(np.complex128)
        for u, v in zip(us, vs):
            row -= u[i] * v
        j = int(np.argmax(np.abs(row)))
        piv = row[j]
        scale = max(scale, abs(piv))
        if abs(piv) <= 1e-14 * scale or piv == 0:
            # zero residual row: move on to the next unused row
            free = np.flatnonzero(~used)
            if free.size == 0:
                converged = True
                break
            i = int(free[0])
            continue
        v = row / piv
        u = gen(all_rows, np.array([j]))[:, 0].astype(np.complex128)
        for uu, vv in zip(us, vs):
            u -= uu * vv[j]
        cross = 0.0
        for uu, vv in zip(us, vs):
            cross += 2.0 * np.real(np.vdot(uu, u) * np.vdot(v, vv))
        uv = np.linalg.norm(u) * np.linalg.norm(v)
        norm2 = max(norm2 + cross + uv**2, uv**2)
        us.append(u)
        vs.append(v)
        last = uv
        if uv <= tol * np.sqrt(norm2):
            converged = True
            break
        cand = np.abs(u)
        cand[used] = -1.0
        if cand.max() < 0:
            converged = True
            break
        i = int(np.argmax(cand))
    if not us:
        return LowRankBlock(np.zeros((m, 0), complex), np.zeros((0, n), complex), tol, 0.0, 0.0,
                            converged or len(us) < max_rank)
    return LowRankBlock(np.column_stack(us), np.vstack(vs), tol, last, float(np.sqrt(norm2)),
                        converged)


def recompress(block, tol):
    """
    QR both factors, SVD the r x r core and drop the Frobenius tail below
    ``tol * ||core||_F``. Never increases rank.
    """
    r = block.rank
    if r == 0:
        return block
    qu, ru = np.linalg.qr(block.U)
    qv, rv = np.linalg.qr(block.V.T)
    w, s, xh = np.linalg.svd(ru @ rv.T)
    k = truncation_rank(s, tol)
    if k > r:
        k = r
    U = qu @ (w[:, :k] * s[:k])
    V = xh[:k] @ qv.T
    tail = float(np.sqrt(np.sum(s[k:] ** 2)))
    return LowRankBlock(U, V, tol, block.residual_estimate + tail, float(np.linalg.norm(s)),
                        block.converged)


def compress_dense(M, tol, atol=None):
    """
    Truncated SVD of a materialized block. Returns a :class:`LowRankBlock` when
    r (m + n) < m n, otherwise ``M`` itself (dense passthrough).

    The dropped Frobenius tail is at most ``tol * ||M||_F``, or at most
    ``atol`` when an absolute threshold is given; in that case a block whose
    whole norm is below ``atol`` comes back with rank 0.
    """
    m, n = M.shape
    if m == 0 or n == 0 or (tol <= 0 and atol is None):
        return M
    if atol is not None and np.linalg.norm(M) <= atol:
        return LowRankBlock(np.zeros((m, 0), M.dtype), np.zeros((0, n), M.dtype), tol,
                            float(np.linalg.norm(M)), float(np.linalg.norm(M)))
    try:
        w, s, vh = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError:
        w, s, vh = sla.svd(M, full_matrices=False, lapack_driver="gesvd")
    if atol is None:
        k = truncation_rank(s, tol)
    else:
        tail = np.sqrt(np.cumsum((s**2)[::-1]))[::-1]
        ok = np.flatnonzero(tail <= atol)
        k = int(ok[0]) if ok.size else s.size
    if k * (m + n) >= m * n:
        return M
    tail = float(np.sqrt(np.sum(s[k:] ** 2)))
    return LowRankBlock(w[:, :k] * s[:k], vh[:k].copy(), tol, tail, float(np.linalg.norm(s)))
