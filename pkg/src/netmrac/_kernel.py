"""Compiled closed-loop derivative and fixed-step RK4 driver.

The flat state is ``[x (n), x_m (n), K row-major (m*n), z (m, sliding only)]``.
Piecewise-constant inputs (adjacency segment, held disturbance) are fixed at
the start of each step; smooth ones (weight overrides, reference) are
evaluated at every stage time.
"""

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi


@njit(cache=True)
def waveform(code, amp, period, phase, offset, t):
    if code == 0:
        c = math.cos(TWO_PI * t / period + phase)
        return offset + amp * c * c
    if code == 1:
        return offset + amp * math.sin(TWO_PI * t / period + phase)
    return offset + amp


@njit(cache=True)
def reference(kind, par, onset, knots, table, t, out):
    m = out.shape[0]
    if kind == 0:
        for i in range(m):
            out[i] = par[i, 0] * math.sin(par[i, 1] * t + par[i, 2])
    elif kind == 1:
        for i in range(m):
            out[i] = par[i, 0] if t >= onset else 0.0
    else:
        k = knots.shape[0]
        if t <= knots[0]:
            for i in range(m):
                out[i] = table[0, i]
        elif t >= knots[k - 1]:
            for i in range(m):
                out[i] = table[k - 1, i]
        else:
            j = np.searchsorted(knots, t, side="right") - 1
            w = (t - knots[j]) / (knots[j + 1] - knots[j])
            for i in range(m):
                out[i] = (1.0 - w) * table[j, i] + w * table[j + 1, i]


@njit(cache=True)
def adjacency(seg_a, ov_idx, ov_par, t, out):
    n = out.shape[0]
    for i in range(n):
        for j in range(n):
            out[i, j] = seg_a[i, j]
    for k in range(ov_idx.shape[0]):
        out[ov_idx[k, 0], ov_idx[k, 1]] = waveform(
            int(ov_par[k, 0]), ov_par[k, 1], ov_par[k, 2], ov_par[k, 3], ov_par[k, 4], t
        )


@njit(cache=True)
def sat(s, delta, out):
    """Boundary-layer unit vector: s/|s| outside the layer, s/delta inside."""
    ns = 0.0
    for i in range(s.shape[0]):
        ns += s[i] * s[i]
    ns = math.sqrt(ns)
    scale = 1.0 / ns if ns > delta else 1.0 / delta
    for i in range(s.shape[0]):
        out[i] = s[i] * scale
    return ns


@njit(cache=True)
def deriv(y, a, r, d, b, a_m, l_star, g_plain, sliding, gamma, gamma_acl, g_slide, rho_m, delta, dy, u, s):
    """Closed-loop derivative written into ``dy``; also fills ``u`` and ``s``.

    g_plain = W^-1 B^T P, g_slide = W^-1 B^T Gamma^T P_s, rho_m = rho M,
    gamma_acl = Gamma (A_m + B L*).
    """
    n = a.shape[0]
    m = b.shape[1]
    ko = 2 * n
    e = np.empty(n)
    for i in range(n):
        e[i] = y[i] - y[n + i]
    for p in range(m):
        acc = r[p]
        for j in range(n):
            acc += y[ko + p * n + j] * y[j] + l_star[p, j] * e[j]
        u[p] = acc
    if sliding:
        zo = ko + m * n
        for p in range(m):
            acc = -y[zo + p]
            for j in range(n):
                acc += gamma[p, j] * e[j]
            s[p] = acc
        w = np.empty(m)
        sat(s, delta, w)
        for p in range(m):
            acc = 0.0
            for q in range(m):
                acc += rho_m[p, q] * w[q]
            u[p] -= acc
        for p in range(m):
            acc = 0.0
            for j in range(n):
                acc += gamma_acl[p, j] * e[j]
            dy[zo + p] = acc
    else:
        for p in range(m):
            s[p] = 0.0
    for i in range(n):
        acc = 0.0
        accm = 0.0
        for j in range(n):
            acc += a[i, j] * y[j]
            accm += a_m[i, j] * y[n + j]
        for p in range(m):
            acc += b[i, p] * (u[p] + d[p])
            accm += b[i, p] * r[p]
        dy[i] = acc
        dy[n + i] = accm
    # K' = -(G v) x^T with v = e (plain) or s (sliding)
    for p in range(m):
        acc = 0.0
        if sliding:
            for q in range(m):
                acc += g_slide[p, q] * s[q]
        else:
            for j in range(n):
                acc += g_plain[p, j] * e[j]
        for j in range(n):
            dy[ko + p * n + j] = -acc * y[j]


@njit(cache=True)
def _stage(y, t, seg_a, ov_idx, ov_par, ref_kind, ref_par, onset, knots, table, d,
           b, a_m, l_star, g_plain, sliding, gamma, gamma_acl, g_slide, rho_m, delta,
           a, r, dy, u, s):
    adjacency(seg_a, ov_idx, ov_par, t, a)
    reference(ref_kind, ref_par, onset, knots, table, t, r)
    deriv(y, a, r, d, b, a_m, l_star, g_plain, sliding, gamma, gamma_acl, g_slide, rho_m, delta, dy, u, s)


@njit(cache=True)
def integrate(y0, grid, log_every, seg_start, seg_a, ov_idx, ov_par,
              ref_kind, ref_par, onset, knots, table, dist_h, dist_v,
              b, a_m, l_star, g_plain, sliding, gamma, gamma_acl, g_slide, rho_m, delta):
    """RK4 over ``grid``; logs every ``log_every`` steps and the final point.

    Returns (log_idx, y_log, u_log, d_log, s_log, n_logged, diverged_at) where
    ``diverged_at`` is NaN for a clean run.
    """
    n = a_m.shape[0]
    m = b.shape[1]
    dim = y0.shape[0]
    n_steps = grid.shape[0] - 1
    n_log = n_steps // log_every + 2
    log_idx = np.empty(n_log, dtype=np.int64)
    y_log = np.empty((n_log, dim))
    u_log = np.empty((n_log, m))
    d_log = np.empty((n_log, m))
    s_log = np.empty((n_log, m))

    a = np.empty((n, n))
    r = np.empty(m)
    u = np.empty(m)
    s = np.empty(m)
    k1 = np.empty(dim)
    k2 = np.empty(dim)
    k3 = np.empty(dim)
    k4 = np.empty(dim)
    tmp = np.empty(dim)
    y = y0.copy()
    d = np.empty(m)
    seg = 0
    n_seg = seg_start.shape[0]
    n_dist = dist_v.shape[0]
    count = 0
    diverged_at = np.nan

    for i in range(n_steps + 1):
        t = grid[i]
        while seg + 1 < n_seg and t >= seg_start[seg + 1]:
            seg += 1
        kd = int(math.floor(t / dist_h + 1e-9))
        if kd < 0:
            kd = 0
        if kd >= n_dist:
            kd = n_dist - 1
        for p in range(m):
            d[p] = dist_v[kd, p]
        sa = seg_a[seg]

        _stage(y, t, sa, ov_idx, ov_par, ref_kind, ref_par, onset, knots, table, d,
               b, a_m, l_star, g_plain, sliding, gamma, gamma_acl, g_slide, rho_m, delta,
               a, r, k1, u, s)
        if i % log_every == 0 or i == n_steps:
            log_idx[count] = i
            y_log[count] = y
            u_log[count] = u
            d_log[count] = d
            s_log[count] = s
            count += 1
        if i == n_steps:
            break

        h = grid[i + 1] - t
        for j in range(dim):
            tmp[j] = y[j] + 0.5 * h * k1[j]
        _stage(tmp, t + 0.5 * h, sa, ov_idx, ov_par, ref_kind, ref_par, onset, knots, table, d,
               b, a_m, l_star, g_plain, sliding, gamma, gamma_acl, g_slide, rho_m, delta,
               a, r, k2, u, s)
        for j in range(dim):
            tmp[j] = y[j] + 0.5 * h * k2[j]
        _stage(tmp, t + 0.5 * h, sa, ov_idx, ov_par, ref_kind, ref_par, onset, knots, table, d,
               b, a_m, l_star, g_plain, sliding, gamma, gamma_acl, g_slide, rho_m, delta,
               a, r, k3, u, s)
        for j in range(dim):
            tmp[j] = y[j] + h * k3[j]
        _stage(tmp, t + h, sa, ov_idx, ov_par, ref_kind, ref_par, onset, knots, table, d,
               b, a_m, l_star, g_plain, sliding, gamma, gamma_acl, g_slide, rho_m, delta,
               a, r, k4, u, s)
        finite = True
        for j in range(dim):
            y[j] = y[j] + (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            if not math.isfinite(y[j]):
                finite = False
        if not finite:
            diverged_at = grid[i + 1]
            break

    return log_idx, y_log, u_log, d_log, s_log, count, diverged_at
