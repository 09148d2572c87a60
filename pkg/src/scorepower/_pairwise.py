"""Compiled O(m^2) and O(d^2 m) pair-sum kernels for the sample-based scores.

All kernels run serially with compensated (Kahan) accumulation so that the
exact and cache-blocked traversals agree to within rounding of the compensated
sums.  fastmath stays off: it would license the compiler to drop the
compensation terms.
"""
from __future__ import annotations

import numba as nb
import numpy as np

BLOCK = 128


@nb.njit(cache=True)
def crps_pair_sums_exact(xt):
    """Per-column sum over i<j of |x_i - x_j|; xt has shape (d, m)."""
    d, m = xt.shape
    out = np.empty(d)
    for a in range(d):
        row = xt[a]
        s = 0.0
        c = 0.0
        for i in range(m - 1):
            xi = row[i]
            for j in range(i + 1, m):
                v = abs(xi - row[j])
                y = v - c
                t = s + y
                c = (t - s) - y
                s = t
        out[a] = s
    return out


@nb.njit(cache=True)
def crps_pair_sums_blocked(xt, block):
    d, m = xt.shape
    out = np.empty(d)
    for a in range(d):
        row = xt[a]
        s = 0.0
        c = 0.0
        for i0 in range(0, m, block):
            i1 = min(i0 + block, m)
            for j0 in range(i0, m, block):
                j1 = min(j0 + block, m)
                bs = 0.0
                bc = 0.0
                for i in range(i0, i1):
                    xi = row[i]
                    lo = i + 1 if j0 <= i else j0
                    for j in range(lo, j1):
                        v = abs(xi - row[j])
                        y = v - bc
                        t = bs + y
                        bc = (t - bs) - y
                        bs = t
                y = bs - c
                t = s + y
                c = (t - s) - y
                s = t
        out[a] = s
    return out


@nb.njit(cache=True)
def crps_cross_sums(xt, y):
    """Per-column sum over i of |y_a - x_ia|; same accumulation as the pairs."""
    d, m = xt.shape
    out = np.empty(d)
    for a in range(d):
        row = xt[a]
        ya = y[a]
        s = 0.0
        c = 0.0
        for i in range(m):
            v = abs(ya - row[i])
            w = v - c
            t = s + w
            c = (t - s) - w
            s = t
        out[a] = s
    return out


@nb.njit(cache=True)
def _pair_norm(x, i, j, d, p):
    # d == 1 short-circuits to |diff| so the 1-d energy path is bit-identical
    # to the CRPS pair kernel
    if d == 1:
        v = abs(x[i, 0] - x[j, 0])
        if p != 1.0:
            v = v ** p
        return v
    q = 0.0
    for a in range(d):
        dif = x[i, a] - x[j, a]
        q += dif * dif
    if p == 1.0:
        return np.sqrt(q)
    return q ** (0.5 * p)


@nb.njit(cache=True)
def energy_pair_sum_exact(x, p):
    """Sum over i<j of ||x_i - x_j||_2^p; x has shape (m, d)."""
    m, d = x.shape
    s = 0.0
    c = 0.0
    for i in range(m - 1):
        for j in range(i + 1, m):
            v = _pair_norm(x, i, j, d, p)
            y = v - c
            t = s + y
            c = (t - s) - y
            s = t
    return s


@nb.njit(cache=True)
def energy_pair_sum_blocked(x, p, block):
    m, d = x.shape
    s = 0.0
    c = 0.0
    for i0 in range(0, m, block):
        i1 = min(i0 + block, m)
        for j0 in range(i0, m, block):
            j1 = min(j0 + block, m)
            bs = 0.0
            bc = 0.0
            for i in range(i0, i1):
                lo = i + 1 if j0 <= i else j0
                for j in range(lo, j1):
                    v = _pair_norm(x, i, j, d, p)
                    y = v - bc
                    t = bs + y
                    bc = (t - bs) - y
                    bs = t
            y = bs - c
            t = s + y
            c = (t - s) - y
            s = t
    return s


@nb.njit(cache=True)
def energy_cross_sum(y, x, p):
    """Sum over i of ||y - x_i||_2^p with the same d == 1 branch as the pairs."""
    m, d = x.shape
    s = 0.0
    c = 0.0
    for i in range(m):
        if d == 1:
            v = abs(y[0] - x[i, 0])
            if p != 1.0:
                v = v ** p
        else:
            q = 0.0
            for a in range(d):
                dif = y[a] - x[i, a]
                q += dif * dif
            if p == 1.0:
                v = np.sqrt(q)
            else:
                v = q ** (0.5 * p)
        w = v - c
        t = s + w
        c = (t - s) - w
        s = t
    return s


@nb.njit(cache=True)
def variogram_score_exact(xt, y, p):
    """2 * sum over a<b of (|y_a-y_b|^p - mean_i |x_ia-x_ib|^p)^2; xt (d, m)."""
    d, m = xt.shape
    inv_m = 1.0 / m
    total = 0.0
    tc = 0.0
    for a in range(d - 1):
        rowa = xt[a]
        ya = y[a]
        for b in range(a + 1, d):
            rowb = xt[b]
            g = 0.0
            gc = 0.0
            for i in range(m):
                v = abs(rowa[i] - rowb[i])
                if p != 1.0:
                    v = v ** p
                w = v - gc
                t = g + w
                gc = (t - g) - w
                g = t
            dy = abs(ya - y[b])
            if p != 1.0:
                dy = dy ** p
            term = dy - g * inv_m
            term = term * term
            w = term - tc
            t = total + w
            tc = (t - total) - w
            total = t
    return 2.0 * total


@nb.njit(cache=True)
def variogram_score_blocked(xt, y, p, block):
    d, m = xt.shape
    inv_m = 1.0 / m
    total = 0.0
    tc = 0.0
    for a in range(d - 1):
        rowa = xt[a]
        ya = y[a]
        for b in range(a + 1, d):
            rowb = xt[b]
            g = 0.0
            gc = 0.0
            for i0 in range(0, m, block):
                i1 = min(i0 + block, m)
                bs = 0.0
                bc = 0.0
                for i in range(i0, i1):
                    v = abs(rowa[i] - rowb[i])
                    if p != 1.0:
                        v = v ** p
                    w = v - bc
                    t = bs + w
                    bc = (t - bs) - w
                    bs = t
                w = bs - gc
                t = g + w
                gc = (t - g) - w
                g = t
            dy = abs(ya - y[b])
            if p != 1.0:
                dy = dy ** p
            term = dy - g * inv_m
            term = term * term
            w = term - tc
            t = total + w
            tc = (t - total) - w
            total = t
    return 2.0 * total
