"""Pure-numpy propagator kernels (fallback path).

Same signatures and results as `_kernels_numba`; vectorized over the
multi-indices of a chaos level via gather/scatter on the flattened edge
arrays.  Selected by setting WCHAOS_DISABLE_NUMBA=1.
"""

import numpy as np

BACKEND_NAME = "numpy"


def _edge_targets(edge_ptr, lo, hi):
    counts = np.diff(edge_ptr[lo:hi + 1])
    return np.repeat(np.arange(lo, hi, dtype=np.int64), counts)


def _apply_m_bands_rows(bands, u):
    """Apply one banded operator (5, nx) to each row of u (cnt, nx)."""
    lo2, lo1, d, up1, up2 = bands
    out = u * d
    out[:, 1:] += u[:, :-1] * lo1[1:]
    out[:, 2:] += u[:, :-2] * lo2[2:]
    out[:, :-1] += u[:, 1:] * up1[:-1]
    out[:, :-2] += u[:, 2:] * up2[:-2]
    return out


def _penta_solve_rows(lo2, mu, al, be, ga, rhs):
    """Row-wise pentadiagonal solve; the recurrence runs along the last axis."""
    cnt, nx = rhs.shape
    z = np.empty_like(rhs)
    z[:, 0] = rhs[:, 0] / mu[0]
    z[:, 1] = (rhs[:, 1] - ga[1] * z[:, 0]) / mu[1]
    for j in range(2, nx):
        z[:, j] = (rhs[:, j] - lo2[j] * z[:, j - 2] - ga[j] * z[:, j - 1]) / mu[j]
    x = np.empty_like(rhs)
    x[:, nx - 1] = z[:, nx - 1]
    x[:, nx - 2] = z[:, nx - 2] - al[nx - 2] * x[:, nx - 1]
    for j in range(nx - 3, -1, -1):
        x[:, j] = z[:, j] - al[j] * x[:, j + 1] - be[j] * x[:, j + 2]
    return x


def _scatter_sources(j, lo, hi, MUc, MUn,
                     edge_ptr, edge_par, edge_i, edge_k, edge_w,
                     gedge_ptr, gedge_gi, gedge_i, gedge_w, gtab, WL, WR, nx, dtype):
    cnt = hi - lo
    SL = np.zeros((cnt, nx), dtype=dtype)
    SR = np.zeros((cnt, nx), dtype=dtype)
    elo, ehi = edge_ptr[lo], edge_ptr[hi]
    if ehi > elo:
        tgt = _edge_targets(edge_ptr, lo, hi) - lo
        par = edge_par[elo:ehi]
        ii = edge_i[elo:ehi]
        kk = edge_k[elo:ehi]
        ww = edge_w[elo:ehi]
        np.add.at(SL, tgt, (ww * WL[ii, j])[:, None] * MUc[kk, par])
        np.add.at(SR, tgt, (ww * WR[ii, j])[:, None] * MUn[kk, par])
    glo, ghi = gedge_ptr[lo], gedge_ptr[hi]
    if ghi > glo:
        gtgt = _edge_targets(gedge_ptr, lo, hi) - lo
        gi = gedge_gi[glo:ghi]
        gii = gedge_i[glo:ghi]
        gww = gedge_w[glo:ghi]
        np.add.at(SL, gtgt, (gww * WL[gii, j])[:, None] * gtab[gi, j])
        np.add.at(SR, gtgt, (gww * WR[gii, j])[:, None] * gtab[gi, j + 1])
    return SL, SR


def _forcing(j, lo, hi, f_idx, ftab):
    rows = f_idx[lo:hi]
    mask = rows >= 0
    if not np.any(mask):
        return None
    out0 = np.zeros((hi - lo, ftab.shape[2]), dtype=ftab.dtype)
    out1 = np.zeros_like(out0)
    out0[mask] = ftab[rows[mask], j]
    out1[mask] = ftab[rows[mask], j + 1]
    return out0, out1


def propagate_spectral(u0, E, symM, WL, WR, level_ptr,
                       edge_ptr, edge_par, edge_i, edge_k, edge_w,
                       gedge_ptr, gedge_gi, gedge_i, gedge_w, gtab,
                       f_idx, ftab, dt, steps, save_steps, out):
    na, nx = u0.shape
    r = symM.shape[0]
    n_levels = len(level_ptr) - 1
    u_cur = u0.astype(np.complex128).copy()
    u_next = np.empty_like(u_cur)
    MUc = np.zeros((r, na, nx), dtype=np.complex128)
    MUn = np.zeros_like(MUc)
    for lev in range(n_levels - 1):
        lo, hi = level_ptr[lev], level_ptr[lev + 1]
        for k in range(r):
            MUc[k, lo:hi] = symM[k] * u_cur[lo:hi]
    sidx = 0
    if sidx < len(save_steps) and save_steps[sidx] == 0:
        out[sidx] = u_cur
        sidx += 1
    for j in range(steps):
        for lev in range(n_levels):
            lo, hi = level_ptr[lev], level_ptr[lev + 1]
            SL, SR = _scatter_sources(j, lo, hi, MUc, MUn,
                                      edge_ptr, edge_par, edge_i, edge_k, edge_w,
                                      gedge_ptr, gedge_gi, gedge_i, gedge_w, gtab,
                                      WL, WR, nx, np.complex128)
            acc = E * (u_cur[lo:hi] + SL) + SR
            f = _forcing(j, lo, hi, f_idx, ftab)
            if f is not None:
                acc += 0.5 * dt * (E * f[0] + f[1])
            u_next[lo:hi] = acc
            if lev < n_levels - 1:
                for k in range(r):
                    MUn[k, lo:hi] = symM[k] * u_next[lo:hi]
        if not np.all(np.isfinite(u_next)):
            bad = int(np.where(~np.all(np.isfinite(u_next), axis=1))[0][0])
            return bad, j + 1
        u_cur, u_next = u_next, u_cur
        MUc, MUn = MUn, MUc
        if sidx < len(save_steps) and save_steps[sidx] == j + 1:
            out[sidx] = u_cur
            sidx += 1
    return -1, -1


def propagate_fd(u0, plus_bands, fac, m_bands, WL, WR, level_ptr,
                 edge_ptr, edge_par, edge_i, edge_k, edge_w,
                 gedge_ptr, gedge_gi, gedge_i, gedge_w, gtab,
                 f_idx, ftab, dt, steps, save_steps, out):
    na, nx = u0.shape
    r = m_bands.shape[0]
    n_levels = len(level_ptr) - 1
    u_cur = u0.astype(np.float64).copy()
    u_next = np.empty_like(u_cur)
    MUc = np.zeros((r, na, nx))
    MUn = np.zeros_like(MUc)
    for lev in range(n_levels - 1):
        lo, hi = level_ptr[lev], level_ptr[lev + 1]
        for k in range(r):
            MUc[k, lo:hi] = _apply_m_bands_rows(m_bands[k], u_cur[lo:hi])
    fac_lo2, fac_mu, fac_al, fac_be, fac_ga = fac
    sidx = 0
    if sidx < len(save_steps) and save_steps[sidx] == 0:
        out[sidx] = u_cur
        sidx += 1
    for j in range(steps):
        for lev in range(n_levels):
            lo, hi = level_ptr[lev], level_ptr[lev + 1]
            SL, SR = _scatter_sources(j, lo, hi, MUc, MUn,
                                      edge_ptr, edge_par, edge_i, edge_k, edge_w,
                                      gedge_ptr, gedge_gi, gedge_i, gedge_w, gtab,
                                      WL, WR, nx, np.float64)
            rhs = _apply_m_bands_rows(plus_bands, u_cur[lo:hi]) + SL + SR
            f = _forcing(j, lo, hi, f_idx, ftab)
            if f is not None:
                rhs += 0.5 * dt * (f[0] + f[1])
            u_next[lo:hi] = _penta_solve_rows(fac_lo2, fac_mu, fac_al, fac_be, fac_ga, rhs)
            if lev < n_levels - 1:
                for k in range(r):
                    MUn[k, lo:hi] = _apply_m_bands_rows(m_bands[k], u_next[lo:hi])
        if not np.all(np.isfinite(u_next)):
            bad = int(np.where(~np.all(np.isfinite(u_next), axis=1))[0][0])
            return bad, j + 1
        u_cur, u_next = u_next, u_cur
        MUc, MUn = MUn, MUc
        if sidx < len(save_steps) and save_steps[sidx] == j + 1:
            out[sidx] = u_cur
            sidx += 1
    return -1, -1
