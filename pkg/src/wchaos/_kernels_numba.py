"""Numba-compiled propagator kernels (default path).

Explicit-loop twins of `_kernels_numpy`: one full time loop per solve,
levels stepped in order inside each time step, indices of a level updated
in parallel (their sources only read the already-finished lower level).
Reduction order inside each index is fixed, so results do not depend on
the thread count.
"""

import numpy as np
from numba import njit, prange

BACKEND_NAME = "numba"


@njit(cache=True)
def _penta_solve_c(lo2, mu, al, be, ga, rhs, out):
    n = rhs.shape[0]
    z = np.empty(n, dtype=rhs.dtype)
    z[0] = rhs[0] / mu[0]
    z[1] = (rhs[1] - ga[1] * z[0]) / mu[1]
    for j in range(2, n):
        z[j] = (rhs[j] - lo2[j] * z[j - 2] - ga[j] * z[j - 1]) / mu[j]
    out[n - 1] = z[n - 1]
    out[n - 2] = z[n - 2] - al[n - 2] * out[n - 1]
    for j in range(n - 3, -1, -1):
        out[j] = z[j] - al[j] * out[j + 1] - be[j] * out[j + 2]


@njit(cache=True)
def _band_apply_c(lo2, lo1, d, up1, up2, u, out):
    n = u.shape[0]
    for j in range(n):
        acc = d[j] * u[j]
        if j >= 2:
            acc += lo2[j] * u[j - 2]
        if j >= 1:
            acc += lo1[j] * u[j - 1]
        if j + 1 < n:
            acc += up1[j] * u[j + 1]
        if j + 2 < n:
            acc += up2[j] * u[j + 2]
        out[j] = acc


@njit(cache=True, parallel=True)
def propagate_spectral(u0, E, symM, WL, WR, level_ptr,
                       edge_ptr, edge_par, edge_i, edge_k, edge_w,
                       gedge_ptr, gedge_gi, gedge_i, gedge_w, gtab,
                       f_idx, ftab, dt, steps, save_steps, out):
    na, nx = u0.shape
    r = symM.shape[0]
    n_levels = level_ptr.shape[0] - 1
    u_cur = u0.copy()
    u_next = np.empty_like(u_cur)
    MUc = np.zeros((r, na, nx), dtype=np.complex128)
    MUn = np.zeros((r, na, nx), dtype=np.complex128)
    bad = np.zeros(na, dtype=np.uint8)
    for lev in range(n_levels - 1):
        lo, hi = level_ptr[lev], level_ptr[lev + 1]
        for a in prange(lo, hi):
            for k in range(r):
                for x in range(nx):
                    MUc[k, a, x] = symM[k, x] * u_cur[a, x]
    sidx = 0
    if sidx < save_steps.shape[0] and save_steps[sidx] == 0:
        out[sidx] = u_cur
        sidx += 1
    half_dt = 0.5 * dt
    for j in range(steps):
        for lev in range(n_levels):
            lo, hi = level_ptr[lev], level_ptr[lev + 1]
            last_level = lev == n_levels - 1
            for a in prange(lo, hi):
                acc = np.zeros(nx, dtype=np.complex128)
                for e in range(edge_ptr[a], edge_ptr[a + 1]):
                    p = edge_par[e]
                    k = edge_k[e]
                    wl = edge_w[e] * WL[edge_i[e], j]
                    wr = edge_w[e] * WR[edge_i[e], j]
                    for x in range(nx):
                        acc[x] += E[x] * (wl * MUc[k, p, x]) + wr * MUn[k, p, x]
                for e in range(gedge_ptr[a], gedge_ptr[a + 1]):
                    gi = gedge_gi[e]
                    wl = gedge_w[e] * WL[gedge_i[e], j]
                    wr = gedge_w[e] * WR[gedge_i[e], j]
                    for x in range(nx):
                        acc[x] += E[x] * (wl * gtab[gi, j, x]) + wr * gtab[gi, j + 1, x]
                fi = f_idx[a]
                if fi >= 0:
                    for x in range(nx):
                        acc[x] += half_dt * (E[x] * ftab[fi, j, x] + ftab[fi, j + 1, x])
                ok = True
                for x in range(nx):
                    v = E[x] * u_cur[a, x] + acc[x]
                    u_next[a, x] = v
                    if not (np.isfinite(v.real) and np.isfinite(v.imag)):
                        ok = False
                if not ok:
                    bad[a] = 1
                if not last_level:
                    for k in range(r):
                        for x in range(nx):
                            MUn[k, a, x] = symM[k, x] * u_next[a, x]
        for a in range(na):
            if bad[a]:
                return a, j + 1
        tmp = u_cur
        u_cur = u_next
        u_next = tmp
        tmpM = MUc
        MUc = MUn
        MUn = tmpM
        if sidx < save_steps.shape[0] and save_steps[sidx] == j + 1:
            out[sidx] = u_cur
            sidx += 1
    return -1, -1


@njit(cache=True, parallel=True)
def propagate_fd(u0, plus_bands, fac, m_bands, WL, WR, level_ptr,
                 edge_ptr, edge_par, edge_i, edge_k, edge_w,
                 gedge_ptr, gedge_gi, gedge_i, gedge_w, gtab,
                 f_idx, ftab, dt, steps, save_steps, out):
    na, nx = u0.shape
    r = m_bands.shape[0]
    n_levels = level_ptr.shape[0] - 1
    u_cur = u0.copy()
    u_next = np.empty_like(u_cur)
    MUc = np.zeros((r, na, nx))
    MUn = np.zeros((r, na, nx))
    bad = np.zeros(na, dtype=np.uint8)
    fac_lo2 = fac[0]
    fac_mu = fac[1]
    fac_al = fac[2]
    fac_be = fac[3]
    fac_ga = fac[4]
    for lev in range(n_levels - 1):
        lo, hi = level_ptr[lev], level_ptr[lev + 1]
        for a in prange(lo, hi):
            for k in range(r):
                _band_apply_c(m_bands[k, 0], m_bands[k, 1], m_bands[k, 2],
                              m_bands[k, 3], m_bands[k, 4], u_cur[a], MUc[k, a])
    sidx = 0
    if sidx < save_steps.shape[0] and save_steps[sidx] == 0:
        out[sidx] = u_cur
        sidx += 1
    half_dt = 0.5 * dt
    for j in range(steps):
        for lev in range(n_levels):
            lo, hi = level_ptr[lev], level_ptr[lev + 1]
            last_level = lev == n_levels - 1
            for a in prange(lo, hi):
                rhs = np.empty(nx)
                _band_apply_c(plus_bands[0], plus_bands[1], plus_bands[2],
                              plus_bands[3], plus_bands[4], u_cur[a], rhs)
                for e in range(edge_ptr[a], edge_ptr[a + 1]):
                    p = edge_par[e]
                    k = edge_k[e]
                    wl = edge_w[e] * WL[edge_i[e], j]
                    wr = edge_w[e] * WR[edge_i[e], j]
                    for x in range(nx):
                        rhs[x] += wl * MUc[k, p, x] + wr * MUn[k, p, x]
                for e in range(gedge_ptr[a], gedge_ptr[a + 1]):
                    gi = gedge_gi[e]
                    wl = gedge_w[e] * WL[gedge_i[e], j]
                    wr = gedge_w[e] * WR[gedge_i[e], j]
                    for x in range(nx):
                        rhs[x] += wl * gtab[gi, j, x] + wr * gtab[gi, j + 1, x]
                fi = f_idx[a]
                if fi >= 0:
                    for x in range(nx):
                        rhs[x] += half_dt * (ftab[fi, j, x] + ftab[fi, j + 1, x])
                _penta_solve_c(fac_lo2, fac_mu, fac_al, fac_be, fac_ga, rhs, u_next[a])
                ok = True
                for x in range(nx):
                    if not np.isfinite(u_next[a, x]):
                        ok = False
                if not ok:
                    bad[a] = 1
                if not last_level:
                    for k in range(r):
                        _band_apply_c(m_bands[k, 0], m_bands[k, 1], m_bands[k, 2],
                                      m_bands[k, 3], m_bands[k, 4], u_next[a], MUn[k, a])
        for a in range(na):
            if bad[a]:
                return a, j + 1
        tmp = u_cur
        u_cur = u_next
        u_next = tmp
        tmpM = MUc
        MUc = MUn
        MUn = tmpM
        if sidx < save_steps.shape[0] and save_steps[sidx] == j + 1:
            out[sidx] = u_cur
            sidx += 1
    return -1, -1
