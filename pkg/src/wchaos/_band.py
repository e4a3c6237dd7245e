"""Pentadiagonal matrix helpers shared by the reference steppers and kernels.

Matrices are stored as five length-n diagonals (lo2, lo1, d, up1, up2);
row j holds columns j-2 .. j+2.  The FD operators only populate the outer
diagonals on the first and last rows (one-sided boundary stencils), but the
LU below handles any pentadiagonal system without pivoting, which is fine
for the diagonally-dominant Crank-Nicolson systems used here.

Plain-loop implementations on purpose: the numba kernel module njit-compiles
these same functions.
"""

import numpy as np


def band_apply(lo2, lo1, d, up1, up2, u, out):
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
    return out


def penta_factor(lo2, lo1, d, up1, up2):
    """LU-style factorization; returns (mu, al, be, ga) work arrays."""
    n = d.shape[0]
    mu = np.empty(n)
    al = np.zeros(n)
    be = np.zeros(n)
    ga = np.zeros(n)
    mu[0] = d[0]
    al[0] = up1[0] / mu[0]
    be[0] = up2[0] / mu[0]
    ga[1] = lo1[1]
    mu[1] = d[1] - ga[1] * al[0]
    al[1] = (up1[1] - ga[1] * be[0]) / mu[1]
    if n > 3:
        be[1] = up2[1] / mu[1]
    for j in range(2, n):
        ga[j] = lo1[j] - lo2[j] * al[j - 2]
        mu[j] = d[j] - lo2[j] * be[j - 2] - ga[j] * al[j - 1]
        if j < n - 1:
            al[j] = (up1[j] - ga[j] * be[j - 1]) / mu[j]
        if j < n - 2:
            be[j] = up2[j] / mu[j]
    return mu, al, be, ga


def penta_solve(lo2, mu, al, be, ga, rhs, out):
    """Solve with the factors from penta_factor; O(n) per right-hand side."""
    n = rhs.shape[0]
    z = np.empty_like(rhs)
    z[0] = rhs[0] / mu[0]
    z[1] = (rhs[1] - ga[1] * z[0]) / mu[1]
    for j in range(2, n):
        z[j] = (rhs[j] - lo2[j] * z[j - 2] - ga[j] * z[j - 1]) / mu[j]
    out[n - 1] = z[n - 1]
    out[n - 2] = z[n - 2] - al[n - 2] * out[n - 1]
    for j in range(n - 3, -1, -1):
        out[j] = z[j] - al[j] * out[j + 1] - be[j] * out[j + 2]
    return out
