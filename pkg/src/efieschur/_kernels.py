"""
Numba kernels for the EFIE Galerkin integrals on triangle pairs.

A triangle-pair interaction is a 3 x 3 complex matrix indexed by the local
edges of the test and source triangle. For local edges ``a`` (test) and ``b``
(source) it holds, with the RWG prefactors ``s l / (2A)`` stripped,

    cA/4 * <(r - p_a) . (r' - p_b) G>  +  cP * <G>

where ``<.>`` is the area-normalized double integral, ``p`` the free vertices
and ``G = exp(-jkR)/R``. Multiplying by ``s_a l_a s_b l_b`` gives the
contribution to Z(i, j).
"""

import numpy as np
from numba import njit

# static-term guard: skip edge terms when the observation point sits on the edge line
_EDGE_EPS = 1.0e-10


@njit(cache=True)
def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(cache=True)
def _log_ratio_term(lp, lm, rp, rm, r0sq):
    # ln((R+ + l+) / (R- + l-)) without cancellation when l ~ -R
    if lp >= 0.0:
        ap = rp + lp
    else:
        ap = r0sq / (rp - lp)
    if lm >= 0.0:
        am = rm + lm
    else:
        am = r0sq / (rm - lm)
    return np.log(ap / am)


@njit(cache=True)
def static_potentials(r, p, normal, out_vec):
    """
    Closed-form integrals over the flat triangle with vertices ``p`` (3 x 3,
    counter-clockwise about ``normal``) seen from the point ``r``:

        returns  S0 = int 1/R dS'      and writes  S1 = int (r' - r)/R dS'
    into ``out_vec``.
    """
    d = _dot(normal, r - p[0])
    absd = abs(d)
    rho = r - d * normal
    s0 = 0.0
    s1x = 0.0
    s1y = 0.0
    s1z = 0.0
    for i in range(3):
        pa = p[i]
        pb = p[(i + 1) % 3]
        e = pb - pa
        elen = np.sqrt(_dot(e, e))
        lhat = e / elen
        u = np.empty(3)
        u[0] = lhat[1] * normal[2] - lhat[2] * normal[1]
        u[1] = lhat[2] * normal[0] - lhat[0] * normal[2]
        u[2] = lhat[0] * normal[1] - lhat[1] * normal[0]
        lp = _dot(pb - rho, lhat)
        lm = _dot(pa - rho, lhat)
        p0 = _dot(pa - rho, u)
        r0sq = p0 * p0 + d * d
        dp = r - pb
        dm = r - pa
        rp = np.sqrt(_dot(dp, dp))
        rm = np.sqrt(_dot(dm, dm))
        inplane = lp * rp - lm * rm
        if r0sq > (_EDGE_EPS * elen) ** 2:
            f = _log_ratio_term(lp, lm, rp, rm, r0sq)
            s0 += p0 * f
            inplane += r0sq * f
            if absd > 0.0:
                s0 -= absd * (
                    np.arctan(p0 * lp / (r0sq + absd * rp))
                    - np.arctan(p0 * lm / (r0sq + absd * rm))
                )
        s1x += 0.5 * u[0] * inplane
        s1y += 0.5 * u[1] * inplane
        s1z += 0.5 * u[2] * inplane
    out_vec[0] = s1x - d * normal[0] * s0
    out_vec[1] = s1y - d * normal[1] * s0
    out_vec[2] = s1z - d * normal[2] * s0
    return s0


@njit(cache=True)
def _pair_regular(m, n, k, ca, cp, verts, tris, qpts_o, w_o, qpts_i, w_i, out):
    i0 = 0j
    ir = np.zeros(3, dtype=np.complex128)
    irp = np.zeros(3, dtype=np.complex128)
    irr = 0j
    for q in range(w_o.size):
        r = qpts_o[m, q]
        for qq in range(w_i.size):
            rp = qpts_i[n, qq]
            dx = r[0] - rp[0]
            dy = r[1] - rp[1]
            dz = r[2] - rp[2]
            big_r = np.sqrt(dx * dx + dy * dy + dz * dz)
            g = w_o[q] * w_i[qq] * np.exp(-1j * k * big_r) / big_r
            i0 += g
            irr += g * _dot(r, rp)
            for c in range(3):
                ir[c] += g * r[c]
                irp[c] += g * rp[c]
    for a in range(3):
        pa = verts[tris[m, a]]
        for b in range(3):
            pb = verts[tris[n, b]]
            t = irr
            for c in range(3):
                t += -pb[c] * ir[c] - pa[c] * irp[c]
            t += _dot(pa, pb) * i0
            out[a, b] = 0.25 * ca * t + cp * i0


@njit(cache=True)
def _pair_singular(m, n, k, ca, cp, verts, tris, normals, areas, qpts_o, w_o, qpts_i, w_i, out):
    p = np.empty((3, 3))
    for c in range(3):
        p[c] = verts[tris[n, c]]
    s1 = np.empty(3)
    k1 = np.empty(3, dtype=np.complex128)
    for a in range(3):
        for b in range(3):
            out[a, b] = 0j
    inv_area = 1.0 / areas[n]
    for q in range(w_o.size):
        r = qpts_o[m, q]
        s0 = static_potentials(r, p, normals[n], s1)
        k0 = s0 * inv_area + 0j
        for c in range(3):
            k1[c] = s1[c] * inv_area
        for qq in range(w_i.size):
            rp = qpts_i[n, qq]
            dx = rp[0] - r[0]
            dy = rp[1] - r[1]
            dz = rp[2] - r[2]
            big_r = np.sqrt(dx * dx + dy * dy + dz * dz)
            if big_r > 0.0:
                gs = (np.exp(-1j * k * big_r) - 1.0) / big_r
            else:
                gs = -1j * k
            gs *= w_i[qq]
            k0 += gs
            k1[0] += gs * dx
            k1[1] += gs * dy
            k1[2] += gs * dz
        for a in range(3):
            pa = verts[tris[m, a]]
            for b in range(3):
                pb = verts[tris[n, b]]
                t = 0j
                for c in range(3):
                    t += (r[c] - pa[c]) * (k1[c] + (r[c] - pb[c]) * k0)
                out[a, b] += w_o[q] * (0.25 * ca * t + cp * k0)


@njit(cache=True)
def pair_interaction(m, n, k, ca, cp, geom, rules, out):
    """Fill ``out`` (3 x 3) with the interaction of test triangle m and source triangle n."""
    verts, tris, normals, areas, centroids, diam, near_factor = geom
    q3, w3, q7, w7 = rules
    lo = min(m, n)
    hi = max(m, n)
    c = centroids[lo] - centroids[hi]
    dist = np.sqrt(_dot(c, c))
    if dist < near_factor * max(diam[lo], diam[hi]):
        _pair_singular(lo, hi, k, ca, cp, verts, tris, normals, areas, q7, w7, q7, w7, out)
        if lo == hi:
            for a in range(3):
                for b in range(a + 1, 3):
                    s = 0.5 * (out[a, b] + out[b, a])
                    out[a, b] = s
                    out[b, a] = s
    else:
        _pair_regular(lo, hi, k, ca, cp, verts, tris, q3, w3, q3, w3, out)
    if m > n:
        for a in range(3):
            for b in range(a + 1, 3):
                s = out[a, b]
                out[a, b] = out[b, a]
                out[b, a] = s


@njit(cache=True)
def pair_interaction_rule(m, n, k, ca, cp, verts, tris, qpts, w, out):
    """Regular-quadrature pair with a caller-chosen rule on both triangles (no extraction)."""
    _pair_regular(m, n, k, ca, cp, verts, tris, qpts, w, qpts, w, out)


@njit(cache=True)
def _gather_support(idx, tri_plus, tri_minus, local_plus, local_minus, lengths):
    # two (triangle, slot, local edge, coefficient) records per basis, grouped by triangle
    n2 = 2 * idx.size
    tri = np.empty(n2, dtype=np.int64)
    slot = np.empty(n2, dtype=np.int64)
    loc = np.empty(n2, dtype=np.int64)
    coef = np.empty(n2)
    for s in range(idx.size):
        i = idx[s]
        tri[2 * s] = tri_plus[i]
        slot[2 * s] = s
        loc[2 * s] = local_plus[i]
        coef[2 * s] = lengths[i]
        tri[2 * s + 1] = tri_minus[i]
        slot[2 * s + 1] = s
        loc[2 * s + 1] = local_minus[i]
        coef[2 * s + 1] = -lengths[i]
    order = np.argsort(tri, kind="mergesort")
    tri = tri[order]
    slot = slot[order]
    loc = loc[order]
    coef = coef[order]
    starts = [0]
    for e in range(1, n2):
        if tri[e] != tri[e - 1]:
            starts.append(e)
    starts.append(n2)
    return tri, slot, loc, coef, np.array(starts, dtype=np.int64)


@njit(cache=True)
def assemble_block(rows, cols, basis_arrays, k, ca, cp, geom, rules, out):
    """Accumulate Z[rows][:, cols] into ``out`` (zeroed by the caller)."""
    tri_plus, tri_minus, local_plus, local_minus, lengths = basis_arrays
    rt, rs, rl, rc, rstart = _gather_support(rows, tri_plus, tri_minus, local_plus, local_minus, lengths)
    ct, cs, cl, cc, cstart = _gather_support(cols, tri_plus, tri_minus, local_plus, local_minus, lengths)
    buf = np.empty((3, 3), dtype=np.complex128)
    for gi in range(rstart.size - 1):
        a0 = rstart[gi]
        a1 = rstart[gi + 1]
        m = rt[a0]
        for gj in range(cstart.size - 1):
            b0 = cstart[gj]
            b1 = cstart[gj + 1]
            n = ct[b0]
            pair_interaction(m, n, k, ca, cp, geom, rules, buf)
            for ea in range(a0, a1):
                for eb in range(b0, b1):
                    out[rs[ea], cs[eb]] += rc[ea] * cc[eb] * buf[rl[ea], cl[eb]]


@njit(cache=True)
def assemble_block_rule(rows, cols, basis_arrays, k, ca, cp, verts, tris, qpts, w, out):
    """Same scatter as :func:`assemble_block` but every pair uses the given regular rule."""
    tri_plus, tri_minus, local_plus, local_minus, lengths = basis_arrays
    rt, rs, rl, rc, rstart = _gather_support(rows, tri_plus, tri_minus, local_plus, local_minus, lengths)
    ct, cs, cl, cc, cstart = _gather_support(cols, tri_plus, tri_minus, local_plus, local_minus, lengths)
    buf = np.empty((3, 3), dtype=np.complex128)
    for gi in range(rstart.size - 1):
        a0 = rstart[gi]
        a1 = rstart[gi + 1]
        m = rt[a0]
        for gj in range(cstart.size - 1):
            b0 = cstart[gj]
            b1 = cstart[gj + 1]
            n = ct[b0]
            _pair_regular(m, n, k, ca, cp, verts, tris, qpts, w, qpts, w, buf)
            for ea in range(a0, a1):
                for eb in range(b0, b1):
                    out[rs[ea], cs[eb]] += rc[ea] * cc[eb] * buf[rl[ea], cl[eb]]
