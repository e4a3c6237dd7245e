"""Independent references the solver modules are tested against:
tensor Gauss-Hermite quadrature for Gaussian-polynomial expectations,
Euler-Maruyama simulation of the SPDE, exact constant-coefficient mode
solutions, the Kalman-Bucy filter, and the Krylov-Veretennikov
transport check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .basis import GaussianCoordinates, TimeBasis, path_from_coords
from .multiindex import MultiIndex, TruncationSpec
from .propagator import (PropagatorSolution, SpdeProblem, TimeGrid,
                         _as_field, _as_field_table, solve)
from .spatial import InstabilityError, OperatorSpec, PeriodicGrid


@dataclass(frozen=True)
class QuadratureSpec:
    """Tensor Gauss-Hermite rule over the given (i, k) slots; exact for
    polynomials of per-slot degree <= 2 * nodes - 1."""

    slots: tuple           # ordered (i, k) pairs
    nodes: int

    def __post_init__(self):
        if self.nodes < 1:
            raise ValueError("nodes >= 1")


def gh_expectation(f, spec: QuadratureSpec) -> float:
    """E f(values) for iid standard normals on the active slots.

    `f` receives a dict {(i, k): value}.  Uses probabilists' Hermite nodes
    (weight e^{-x^2/2}).
    """
    x, w = hermegauss(spec.nodes)
    w = w / math.sqrt(2.0 * math.pi)
    nslots = len(spec.slots)
    total = 0.0
    idx = [0] * nslots

    def rec(d, weight, vals):
        nonlocal total
        if d == nslots:
            total += weight * f(vals)
            return
        for j in range(spec.nodes):
            vals[spec.slots[d]] = x[j]
            rec(d + 1, weight * w[j], vals)
        del vals[spec.slots[d]]

    if nslots == 0:
        return float(f({}))
    rec(0, 1.0, {})
    return float(total)


def euler_maruyama(problem: SpdeProblem, coords: GaussianCoordinates,
                   steps: int, path_basis: TimeBasis = None,
                   n_fine: int = None) -> dict:
    """Pathwise semi-implicit Euler for the adapted problem: implicit
    (exact-exponential / Crank-Nicolson) in A, explicit Ito increments
    (M_k u + g_k) dW_k, with dW from the cosine reconstruction of the
    same coordinate streams (common random numbers with the chaos sampler).

    The reconstruction resolution defaults to n_fine = 8 * steps so the
    increments carry nearly the full Brownian quadratic variation; a
    coarser driver is smooth on the step scale and converges to the
    Stratonovich solution instead (missing the Ito correction).  The first
    coords.n coordinates of the refined path are exactly the given ones,
    because each (i, k) slot has its own counter-based stream.  Returns
    {t: nodes} at t = 0, T/2, T.
    """
    from .spatial import imex_step

    if isinstance(problem.u0, dict) or isinstance(problem.f, dict) or any(
            isinstance(g, dict) for g in problem.g):
        raise ValueError("euler_maruyama needs adapted (deterministic) data")
    op = problem.op.build()
    grid = op.grid
    T = problem.tgrid.horizon
    dt = T / steps
    t_nodes = np.linspace(0.0, T, steps + 1)
    r = problem.trunc.n_channels

    if path_basis is None:
        count = max(n_fine or 8 * steps, coords.n)
        path_basis = TimeBasis(T, count)
    if path_basis.count > coords.n:
        ext = GaussianCoordinates.sample(coords.seed, path_basis.count, coords.r)
        if not np.allclose(ext.xi[:coords.n, :coords.r], coords.xi):
            raise ValueError("coords are not reproducible from their seed; "
                             "pass path_basis with count <= coords.n instead")
        coords = ext
    paths = np.stack([path_from_coords(coords, path_basis, k, t_nodes)
                      for k in range(1, r + 1)])
    dW = np.diff(paths, axis=1)  # (r, steps)

    u = _as_field(problem.u0, grid) if problem.u0 is not None else np.zeros(grid.nx)
    ftab = (_as_field_table(problem.f, grid, t_nodes) if problem.f is not None else None)
    gtabs = [None] * r
    for k in range(min(r, len(problem.g))):
        if problem.g[k] is not None:
            gtabs[k] = _as_field_table(problem.g[k], grid, t_nodes)

    if op.is_spectral:
        state = grid.to_modes(u)
    else:
        state = u.copy()
    out = {}
    save = {0, steps // 2, steps}
    if 0 in save:
        out[0.0] = u.copy()
    n_op = op.n_channels
    for j in range(steps):
        noise = np.zeros(grid.nx)
        un = u if not op.is_spectral else grid.to_nodes(state)
        for k in range(r):
            incr = op.apply_Mk(k + 1, un) if k < n_op else np.zeros(grid.nx)
            if gtabs[k] is not None:
                incr = incr + gtabs[k][j]
            noise += incr * dW[k, j]
        drift = ftab[j] if ftab is not None else None
        if op.is_spectral:
            rhs = state + grid.to_modes(noise)
            src = grid.to_modes(drift) if drift is not None else None
            state = imex_step(op, rhs, dt, src, src)
            u = grid.to_nodes(state)
        else:
            rhs = state + noise
            state = imex_step(op, rhs, dt, drift, drift)
            u = state
        if not np.all(np.isfinite(u)):
            raise InstabilityError("non-finite field in Euler-Maruyama", step=j + 1)
        if j + 1 in save:
            out[(j + 1) * dt] = u.copy()
    return out


def exact_mode_solution(a: float, b: float, sigma: float, u0_hat, y, t: float, w_t: float):
    """Per-mode Fourier solution of du = (a u_xx + b u_x) dt + sigma u_x dw:

        u_hat(t, y) = u0_hat(y) exp((i b y - a y^2) t + i y sigma w(t) + sigma^2 y^2 t / 2).

    At a = b = 0, sigma = 1 this is the first-order equation's transform.
    """
    y = np.asarray(y, dtype=float)
    u0v = u0_hat(y) if callable(u0_hat) else np.asarray(u0_hat)
    expo = (1j * b * y - a * y**2) * t + 1j * y * sigma * w_t + 0.5 * sigma**2 * y**2 * t
    return u0v * np.exp(expo)


@dataclass
class KalmanBucyResult:
    t: np.ndarray
    mean: np.ndarray
    var: np.ndarray


def kalman_bucy(a_lin: float, sig: float, H: float, m0: float, P0: float,
                t_grid: np.ndarray, Y: np.ndarray) -> KalmanBucyResult:
    """Continuous-time Kalman-Bucy filter for
        dX = a_lin X dt + sig dW,   dY = H X dt + dV
    driven by the given observation path (values of Y on t_grid).

        dm = a_lin m dt + P H (dY - H m dt),   dP/dt = 2 a_lin P + sig^2 - P^2 H^2.

    Heun step for P (deterministic Riccati), Euler-exact mix for m.
    """
    n = len(t_grid)
    m = np.empty(n)
    P = np.empty(n)
    m[0], P[0] = m0, P0
    for j in range(n - 1):
        dt = t_grid[j + 1] - t_grid[j]
        dY = Y[j + 1] - Y[j]

        def ric(p):
            return 2 * a_lin * p + sig**2 - p * p * H * H

        p_pred = P[j] + dt * ric(P[j])
        P[j + 1] = P[j] + 0.5 * dt * (ric(P[j]) + ric(p_pred))
        m[j + 1] = m[j] + a_lin * m[j] * dt + P[j] * H * (dY - H * m[j] * dt)
    return KalmanBucyResult(np.asarray(t_grid), m, P)


def kv_check(b: float, sigma: float, a: float, u0, T: float, coords: GaussianCoordinates,
             grid: PeriodicGrid, max_order: int, n_modes: int, steps: int = 500) -> float:
    """Krylov-Veretennikov check: for a = sigma^2 / 2 the chaos solution of
    du = (a u_xx + b u_x) dt + sigma u_x dw sampled at the coordinates
    equals the transported initial condition u0(x + bT + sigma w(T)).

    Solves with the index support restricted to the first time mode, which
    is exact at t = T (the off-m_1 coefficients vanish there; verified on
    small full enumerations in the tests).  The transported field is
    evaluated by exact spectral phase shift, so the returned L2 discrepancy
    is the chaos truncation tail.
    """
    if abs(a - 0.5 * sigma**2) > 1e-12:
        raise ValueError("Krylov-Veretennikov regime needs a = sigma^2 / 2")
    from .chaos_field import sample_field

    op = OperatorSpec.constant(grid, a=a, b=b, sigma=[sigma])
    trunc = TruncationSpec(max_order, n_modes, 1)
    prob = SpdeProblem(op=op, trunc=trunc, tgrid=TimeGrid(T, steps), u0=u0,
                       support_modes=(1,))
    sol = solve(prob, save=[T])
    field = sample_field(sol, coords, T)

    basis = prob.basis
    shift = b * T + sigma * path_from_coords(coords, basis, 1, T)
    u0n = _as_field(u0, grid)
    shifted = grid.to_nodes(grid.to_modes(u0n) * np.exp(1j * grid.y * shift))
    return grid.norm(field - shifted)
