"""
GMRES on the scaled near-field system, a dense LU oracle and eigenvalue
diagnostics.

Two operator forms are supported:

``schur-scaled``
    Unknown x~ with x = A x~. The near field is replaced by the block diagonal
    Z~_N, so the operator is ``Z~^{-1} (Z~ x~ + A^T Z_F A x~)`` which simplifies
    to ``x~ + Z~^{-1} A^T Z_F A x~``; the right-hand side is ``Z~^{-1} A^T b``.
``plain-left``
    ``D^{-1} H A x~ = D^{-1} b`` with the full operator H; used by the
    null-field, block-Jacobi and unpreconditioned baselines (A = I for the
    latter two).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import efie

__all__ = [
    "PreconditionedSystem",
    "SolveReport",
    "gmres",
    "solve",
    "dense_solve",
    "eigen_diagnostic",
    "write_residuals",
    "write_eigenvalues",
]

MODES = ("schur-scaled", "plain-left")


@dataclass
class SolveReport:
    iterations: int
    residuals: list
    converged: bool
    times: dict = field(default_factory=dict)
    original_residual: float = float("nan")
    passes: int = 1
    pass_residuals: list = field(default_factory=list)

    @property
    def final_residual(self):
        return self.residuals[-1] if self.residuals else float("nan")


class PreconditionedSystem:
    """Operator and right-hand-side transforms for one H and one preconditioner."""

    def __init__(self, H, pre, mode=None):
        if mode is None:
            mode = "schur-scaled" if pre.kind == "schur" else "plain-left"
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if pre.n != H.n:
            raise ValueError("preconditioner and operator sizes differ")
        self.H = H
        self.pre = pre
        self.mode = mode
        self.n = H.n
        self.reset_timers()

    def reset_timers(self):
        self.t_far = 0.0  # operator mat-vec (far only, or full H in plain-left)
        self.t_diag = 0.0  # block diagonal solves
        self.t_scale = 0.0  # left + right scaling
        self.calls = 0
        self.per_call = []  # (far, diag, scale) seconds of each operator application

    def _right(self, x):
        t = time.perf_counter()
        y = self.pre.apply_right(x)
        self.t_scale += time.perf_counter() - t
        return y

    def _left(self, x):
        t = time.perf_counter()
        y = self.pre.apply_left(x)
        self.t_scale += time.perf_counter() - t
        return y

    def _diag(self, x):
        t = time.perf_counter()
        y = self.pre.solve_diag(x)
        self.t_diag += time.perf_counter() - t
        return y

    def apply_operator(self, xt):
        """One application of the preconditioned operator (tree order)."""
        xt = np.asarray(xt)
        if xt.shape[0] != self.n:
            raise ValueError(f"expected length {self.n}, got {xt.shape[0]}")
        self.calls += 1
        before = (self.t_far, self.t_diag, self.t_scale)
        w = self._right(xt)
        t = time.perf_counter()
        if self.mode == "schur-scaled":
            f = self.H.far_matvec_tree(w)
        else:
            f = self.H.near_matvec_tree(w) + self.H.far_matvec_tree(w)
        self.t_far += time.perf_counter() - t
        if self.mode == "schur-scaled":
            y = xt + self._diag(self._left(f))
        else:
            y = self._diag(f)
        self.per_call.append((self.t_far - before[0], self.t_diag - before[1], self.t_scale - before[2]))
        return y

    def iteration_times(self, skip=2):
        """Mean per-application (t_mm, t_mpp, t_mps), ignoring the first ``skip`` calls when possible."""
        rows = self.per_call[skip:] if len(self.per_call) > skip else self.per_call
        if not rows:
            return 0.0, 0.0, 0.0
        return tuple(float(v) for v in np.mean(rows, axis=0))

    def transform_rhs(self, b_tree):
        if self.mode == "schur-scaled":
            return self._diag(self._left(b_tree))
        return self._diag(b_tree)

    def recover(self, xt):
        return self._right(xt)

    @property
    def approximate(self):
        """True when the scaled system differs from Z (compressed fill-in)."""
        return self.mode == "schur-scaled" and self.pre.fill_tol > 0 and bool(self.pre.stats.get("fill_blocks"))

    def original_residual(self, x_tree, b_tree):
        r = b_tree - (self.H.near_matvec_tree(x_tree) + self.H.far_matvec_tree(x_tree))
        return float(np.linalg.norm(r) / np.linalg.norm(b_tree))


def gmres(matvec, b, tol=1e-6, restart=None, max_iter=2000, x0=None):
    """
    GMRES with modified Gram-Schmidt plus one reorthogonalization pass and
    Givens rotations. ``restart=None`` runs full GMRES up to ``max_iter``.

    Returns ``(x, residuals, converged)`` with residuals relative to ||b||.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    b = np.asarray(b, dtype=np.complex128)
    n = b.size
    bnorm = np.linalg.norm(b)
    x = np.zeros(n, dtype=np.complex128) if x0 is None else np.array(x0, dtype=np.complex128)
    if bnorm == 0:
        return np.zeros(n, dtype=np.complex128), [0.0], True
    m = max_iter if restart is None else min(restart, max_iter)
    residuals = []
    total = 0
    r = b - matvec(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    residuals.append(beta / bnorm)
    if beta / bnorm <= tol:
        return x, residuals, True
    while total < max_iter:
        V = np.zeros((m + 1, n), dtype=np.complex128)
        Hs = np.zeros((m + 1, m), dtype=np.complex128)
        cs = np.zeros(m, dtype=np.complex128)
        sn = np.zeros(m, dtype=np.complex128)
        g = np.zeros(m + 1, dtype=np.complex128)
        g[0] = beta
        V[0] = r / beta
        j = 0
        done = False
        while j < m and total < max_iter:
            w = np.array(matvec(V[j]), dtype=np.complex128)  # copy: matvec may return its input
            for _ in range(2):
                for i in range(j + 1):
                    h = np.vdot(V[i], w)
                    Hs[i, j] += h
                    w -= h * V[i]
            hn = np.linalg.norm(w)
            Hs[j + 1, j] = hn
            if hn > 0:
                V[j + 1] = w / hn
            for i in range(j):
                a, c = Hs[i, j], Hs[i + 1, j]
                Hs[i, j] = np.conj(cs[i]) * a + np.conj(sn[i]) * c
                Hs[i + 1, j] = -sn[i] * a + cs[i] * c
            a, c = Hs[j, j], Hs[j + 1, j]
            den = np.hypot(abs(a), abs(c))
            if den == 0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j] = a / den
                sn[j] = c / den
            Hs[j, j] = np.conj(cs[j]) * a + np.conj(sn[j]) * c
            Hs[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = np.conj(cs[j]) * g[j]
            j += 1
            total += 1
            res = abs(g[j]) / bnorm
            residuals.append(res)
            if res <= tol or hn == 0:
                done = True
                break
        y = sla.solve_triangular(Hs[:j, :j], g[:j], check_finite=False)
        x = x + V[:j].T @ y
        if done:
            return x, residuals, True
        r = b - matvec(x)
        beta = np.linalg.norm(r)
        if beta / bnorm <= tol:
            residuals[-1] = beta / bnorm
            return x, residuals, True
    return x, residuals, False


def solve(system, b, tol=1e-6, restart=None, max_iter=2000, max_passes=8, inner_tol=None):
    """
    Solve ``Z x = b`` (basis order) through ``system``.

    When the scaled system is exact this is a single GMRES run at ``tol`` on the
    scaled residual. With compressed fill-in the scaled system only
    approximates ``Z`` (to roughly ``fill_tol``), so the solve becomes a
    defect correction: each pass solves the scaled system for the current
    residual of the full operator ``b - H x`` to ``inner_tol`` (default
    ``0.1 * fill_tol``, never below ``tol``) and stops once the original
    residual is at most ``tol``. The reported iteration count is the sum over
    passes. Returns ``(x, SolveReport)``.
    """
    H = system.H
    b_tree = H.to_tree(np.asarray(b, dtype=np.complex128))
    system.reset_timers()
    t0 = time.perf_counter()
    rhs = system.transform_rhs(b_tree)
    t1 = time.perf_counter()
    if not system.approximate:
        xt, res, conv = gmres(system.apply_operator, rhs, tol, restart, max_iter)
        x_tree = system.recover(xt)
        orig = system.original_residual(x_tree, b_tree)
        iters, passes = len(res) - 1, 1
    else:
        if inner_tol is None:
            inner_tol = 0.1 * system.pre.fill_tol
        inner_tol = max(inner_tol, tol)
        bnorm = np.linalg.norm(b_tree)
        x_tree = np.zeros_like(b_tree)
        r_tree = b_tree
        res, hist, iters, passes = [1.0], [], 0, 0
        orig = 1.0
        conv = False
        while passes < max_passes and iters < max_iter:
            # the scaled residual is measured against this pass's own rhs
            step_tol = max(inner_tol, 0.5 * tol / orig)
            t_rhs = system.transform_rhs(r_tree) if passes else rhs
            dxt, r2, _ = gmres(system.apply_operator, t_rhs, step_tol, restart, max_iter - iters)
            x_tree = x_tree + system.recover(dxt)
            iters += len(r2) - 1
            passes += 1
            hist.extend(v * res[-1] for v in r2[1:])  # rescaled to the original rhs
            r_tree = b_tree - (H.near_matvec_tree(x_tree) + H.far_matvec_tree(x_tree))
            orig = float(np.linalg.norm(r_tree) / bnorm)
            res.append(orig)
            if orig <= tol:
                conv = True
                break
    t2 = time.perf_counter()
    t_mm, t_mpp, t_mps = system.iteration_times()
    times = {"t_rhs": t1 - t0, "t_solve": t2 - t1, "t_mm": t_mm, "t_mpp": t_mpp, "t_mps": t_mps}
    if system.approximate:
        report = SolveReport(iters, [1.0] + hist, bool(conv), times, orig, passes, res)
    else:
        report = SolveReport(iters, res, bool(conv), times, orig, passes, [res[0], orig])
    return H.from_tree(x_tree), report


def dense_solve(basis, medium, b, z=None):
    """Pivoted LU solve of the dense Galerkin matrix (oracle)."""
    if z is None:
        z = efie.assemble_dense(basis, medium)
    return sla.lu_solve(sla.lu_factor(z, check_finite=False), np.asarray(b, dtype=np.complex128))


def preconditioned_dense(system):
    """Dense matrix of the preconditioned operator (tree order, small N only)."""
    n = system.n
    eye = np.eye(n, dtype=np.complex128)
    return np.column_stack([system.apply_operator(e) for e in eye])


def eigen_diagnostic(basis, medium, system, z=None):
    """Eigenvalues of Z and of the preconditioned operator (dense, small N)."""
    if z is None:
        z = efie.assemble_dense(basis, medium)
    before = np.linalg.eigvals(z)
    after = np.linalg.eigvals(preconditioned_dense(system))
    return {"eigs_before": before, "eigs_after": after}


def spread_ratio(eigs):
    a = np.abs(eigs)
    return float(a.max() / a.min())


def _atomic_csv(path, header, rows):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    tmp.replace(path)


def write_residuals(path, report):
    _atomic_csv(path, ["iteration", "relative_residual"], list(enumerate(report.residuals)))


def write_eigenvalues(path, diag):
    rows = [(e.real, e.imag, "before") for e in diag["eigs_before"]]
    rows += [(e.real, e.imag, "after") for e in diag["eigs_after"]]
    _atomic_csv(path, ["re", "im", "tag"], rows)
