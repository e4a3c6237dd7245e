"""Lower-triangular propagator solver for the chaos coefficients.

Each coefficient u_alpha of the expansion solves

    du_alpha/dt = A u_alpha + f_alpha(t)
                  + sum_{(i,k)} sqrt(alpha_i^k) m_i(t) [M_k u_{alpha-(i,k)}(t) + g_{k,alpha-(i,k)}(t)],

so a chaos level only reads the one below it.  The solver steps the whole
truncated system through time in lockstep, levels in order within each
step, which keeps memory at two time slices of all coefficients.  For
deterministic (adapted) input data f enters only at |alpha| = 0 and g_k
at |alpha| = 1; anticipating data are explicit maps alpha -> value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .basis import TimeBasis
from .multiindex import EMPTY, MultiIndex, TruncationSpec, enumerate_indices
from .spatial import (FDBackend, InstabilityError, IntervalGrid, OperatorSpec,
                      PeriodicGrid, SpectralOperator, parabolicity_report)


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if self.horizon <= 0 or self.steps < 1:
            raise ValueError("need horizon > 0 and steps >= 1")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)

    def step_of(self, t: float) -> int:
        j = round(t / self.dt)
        if not math.isclose(j * self.dt, t, rel_tol=0, abs_tol=1e-9 * max(1.0, self.horizon)):
            raise ValueError(f"time {t} is not on the grid (dt={self.dt})")
        if not 0 <= j <= self.steps:
            raise ValueError(f"time {t} outside [0, T]")
        return int(j)


@dataclass
class SpdeProblem:
    """Evolution problem du = (A u + f) dt + (M_k u + g_k) dw_k.

    u0, f and per-channel g entries are either plain (deterministic,
    adapted) or dicts keyed by MultiIndex (anticipating chaos data).
    Fields may be node arrays, scalars, or callables t -> array / (t, x) -> array.
    """

    op: OperatorSpec
    trunc: TruncationSpec
    tgrid: TimeGrid
    u0: object = None
    f: object = None
    g: tuple = ()
    basis: TimeBasis = None
    support_modes: tuple = None

    def __post_init__(self):
        if self.basis is None:
            self.basis = TimeBasis(self.tgrid.horizon, self.trunc.n_time_modes)
        if self.basis.count != self.trunc.n_time_modes:
            raise ValueError("basis count must equal trunc.n_time_modes")
        if abs(self.basis.horizon - self.tgrid.horizon) > 1e-12 * self.tgrid.horizon:
            raise ValueError("basis horizon must equal the time-grid horizon")
        # truncation channels beyond the operator's act as zero operators
        # (noise channels that only the free terms g_k can drive)


class PropagatorSolution:
    """Chaos coefficients on the save-time grid.

    `data[s, a]` is coefficient a at save time s, stored in the backend's
    natural representation (Fourier modes for spectral, node values for FD).
    """

    def __init__(self, problem, backend, indices, level_ptr, save_times, data,
                 boundary_mass=0.0):
        self.problem = problem
        self.backend = backend
        self.indices = list(indices)
        self.position = {a: j for j, a in enumerate(self.indices)}
        self.level_ptr = np.asarray(level_ptr)
        self.save_times = np.asarray(save_times)
        self.data = data
        self.boundary_mass = boundary_mass

    @property
    def grid(self):
        return self.backend.grid

    @property
    def trunc(self):
        return self.problem.trunc

    @property
    def n_levels(self) -> int:
        return len(self.level_ptr) - 1

    def level_slice(self, n: int) -> slice:
        if not 0 <= n < self.n_levels:
            raise ValueError(f"level {n} outside 0..{self.n_levels - 1}")
        return slice(self.level_ptr[n], self.level_ptr[n + 1])

    def _save_index(self, t: float) -> int:
        hits = np.where(np.isclose(self.save_times, t, rtol=0, atol=1e-9))[0]
        if len(hits) == 0:
            raise ValueError(f"time {t} not among save times {self.save_times}")
        return int(hits[0])

    def raw_at(self, alpha: MultiIndex, t: float) -> np.ndarray:
        """Backend-representation row (modes or nodes)."""
        return self.data[self._save_index(t), self.position[alpha]]

    def values_at(self, alpha: MultiIndex, t: float) -> np.ndarray:
        """Node values of u_alpha(t, .)."""
        row = self.raw_at(alpha, t)
        if self.backend.is_spectral:
            return self.grid.to_nodes(row)
        return row

    def coeff_norm(self, alpha: MultiIndex, t: float) -> float:
        return self._row_norm(self.raw_at(alpha, t))

    def _row_norm(self, row: np.ndarray) -> float:
        if self.backend.is_spectral:
            return self.grid.mode_norm(row)
        return self.grid.norm(row)

    def scaled(self, weights: np.ndarray) -> "PropagatorSolution":
        """New solution with coefficient a multiplied by weights[a]."""
        data = self.data * np.asarray(weights)[None, :, None]
        return PropagatorSolution(self.problem, self.backend, self.indices,
                                  self.level_ptr, self.save_times, data,
                                  self.boundary_mass)


def _as_field_table(value, grid, t_nodes):
    """Evaluate a field-valued input on all time nodes: (steps+1, nx)."""
    nx = grid.nx
    x = grid.x
    out = np.empty((len(t_nodes), nx))
    if callable(value):
        try:
            probe = value(float(t_nodes[0]), x)
        except TypeError:
            probe = None
        if probe is not None:
            for j, t in enumerate(t_nodes):
                out[j] = value(float(t), x)
        else:
            for j, t in enumerate(t_nodes):
                out[j] = np.asarray(value(float(t)), dtype=float) * np.ones(nx)
    else:
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            out[:] = float(arr)
        elif arr.shape == (nx,):
            out[:] = arr[None, :]
        elif arr.shape == (len(t_nodes), nx):
            out[:] = arr
        else:
            raise ValueError(f"cannot interpret field input of shape {arr.shape}")
    return out


def _as_field(value, grid):
    x = grid.x
    if callable(value):
        return np.asarray(value(x), dtype=float) * np.ones(grid.nx)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.nx, float(arr))
    if arr.shape == (grid.nx,):
        return arr.astype(float)
    raise ValueError(f"cannot interpret field input of shape {arr.shape}")


def _to_rep(arr, backend):
    """Convert node-space rows to the backend representation."""
    if backend.is_spectral:
        return np.fft.fft(arr, axis=-1).astype(np.complex128)
    return np.asarray(arr, dtype=np.float64)


def _save_steps(tgrid: TimeGrid, save) -> np.ndarray:
    if save == "all":
        return np.arange(tgrid.steps + 1, dtype=np.int64)
    if save == "ends":
        return np.array(sorted({0, tgrid.steps}), dtype=np.int64)
    steps = sorted({tgrid.step_of(t) for t in save})
    return np.array(steps, dtype=np.int64)


def solve(problem: SpdeProblem, save="all", backend_name: str = None) -> PropagatorSolution:
    """Integrate the propagator level by level; see the module docstring.

    `save` is "all", "ends", or an explicit list of grid times.  The kernel
    backend (numba / numpy) follows the environment unless overridden.
    """
    op = problem.op.build()
    grid = op.grid
    tgrid = problem.tgrid
    trunc = problem.trunc
    basis = problem.basis
    t_nodes = tgrid.t
    nx = grid.nx
    r = trunc.n_channels

    indices = enumerate_indices(trunc, problem.support_modes)
    pos = {a: j for j, a in enumerate(indices)}
    na = len(indices)

    orders = np.array([a.order for a in indices])
    level_ptr = np.searchsorted(orders, np.arange(trunc.max_order + 2), side="left").astype(np.int64)

    # initial data
    if isinstance(problem.u0, dict):
        u0_map = problem.u0
    elif problem.u0 is None:
        u0_map = {}
    else:
        u0_map = {EMPTY: problem.u0}
    u0_nodes = np.zeros((na, nx))
    for a_mi, val in u0_map.items():
        j = pos.get(a_mi)
        if j is None:
            raise ValueError(f"initial datum at {a_mi} outside the truncation")
        u0_nodes[j] = _as_field(val, grid)
    u0_rep = _to_rep(u0_nodes, op)

    # drift forcing tables
    f_map = problem.f if isinstance(problem.f, dict) else ({} if problem.f is None else {EMPTY: problem.f})
    f_idx = np.full(na, -1, dtype=np.int64)
    f_rows = []
    for a_mi, val in f_map.items():
        j = pos.get(a_mi)
        if j is None:
            raise ValueError(f"forcing at {a_mi} outside the truncation")
        f_idx[j] = len(f_rows)
        f_rows.append(_to_rep(_as_field_table(val, grid, t_nodes), op))
    cdtype = np.complex128 if op.is_spectral else np.float64
    ftab = (np.stack(f_rows) if f_rows
            else np.zeros((1, len(t_nodes), nx), dtype=cdtype))

    # noise forcing tables, keyed by (channel k, lowered index beta)
    g_map = {}
    for k_ch, gk in enumerate(problem.g, start=1):
        if gk is None:
            continue
        if isinstance(gk, dict):
            for b_mi, val in gk.items():
                g_map[(k_ch, b_mi)] = val
        else:
            g_map[(k_ch, EMPTY)] = gk
    g_rows = {}
    for key, val in g_map.items():
        g_rows[key] = len(g_rows)
    gtab = (np.stack([_to_rep(_as_field_table(g_map[key], grid, t_nodes), op)
                      for key in g_rows])
            if g_rows else np.zeros((1, len(t_nodes), nx), dtype=cdtype))

    # dependency edges
    edge_ptr = np.zeros(na + 1, dtype=np.int64)
    e_par, e_i, e_k, e_w = [], [], [], []
    ge_ptr = np.zeros(na + 1, dtype=np.int64)
    ge_gi, ge_i, ge_w = [], [], []
    for j, a_mi in enumerate(indices):
        for (i, k), e in a_mi.entries:
            if k > r:
                raise ValueError("index touches a channel beyond the truncation")
            parent = a_mi.lowered(i, k)
            e_par.append(pos[parent])
            e_i.append(i - 1)
            e_k.append(k - 1)
            e_w.append(math.sqrt(e))
            gk = g_rows.get((k, parent))
            if gk is not None:
                ge_gi.append(gk)
                ge_i.append(i - 1)
                ge_w.append(math.sqrt(e))
        edge_ptr[j + 1] = len(e_par)
        ge_ptr[j + 1] = len(ge_gi)

    edge_par = np.array(e_par, dtype=np.int64)
    edge_i = np.array(e_i, dtype=np.int64)
    edge_k = np.array(e_k, dtype=np.int64)
    edge_w = np.array(e_w, dtype=np.float64)
    gedge_gi = np.array(ge_gi, dtype=np.int64)
    gedge_i = np.array(ge_i, dtype=np.int64)
    gedge_w = np.array(ge_w, dtype=np.float64)

    WL, WR = basis.step_weights(t_nodes)
    save_steps = _save_steps(tgrid, save)
    out = np.empty((len(save_steps), na, nx), dtype=cdtype)

    impl = kernels.get_impl(backend_name)
    if op.is_spectral:
        E = np.exp(op.symbol_A * tgrid.dt).astype(np.complex128)
        zero_sym = np.zeros(nx, dtype=np.complex128)
        symM = (np.stack([op.symbols_M[k] if k < len(op.symbols_M) else zero_sym
                          for k in range(r)]).astype(np.complex128)
                if r else np.zeros((0, nx), dtype=np.complex128))
        bad_a, bad_step = impl.propagate_spectral(
            u0_rep, E, symM, WL, WR, level_ptr,
            edge_ptr, edge_par, edge_i, edge_k, edge_w,
            ge_ptr, gedge_gi, gedge_i, gedge_w, gtab,
            f_idx, ftab, tgrid.dt, tgrid.steps, save_steps, out)
    else:
        plus, fac = op.cn_matrices(tgrid.dt)
        plus_bands = np.stack(plus)
        fac_arr = np.stack(fac)
        m_bands = (np.stack([np.stack(op.Ms[k].bands) if k < len(op.Ms)
                             else np.zeros((5, nx)) for k in range(r)])
                   if r else np.zeros((0, 5, nx)))
        bad_a, bad_step = impl.propagate_fd(
            u0_rep, plus_bands, fac_arr, m_bands, WL, WR, level_ptr,
            edge_ptr, edge_par, edge_i, edge_k, edge_w,
            ge_ptr, gedge_gi, gedge_i, gedge_w, gtab,
            f_idx, ftab, tgrid.dt, tgrid.steps, save_steps, out)
    if bad_a >= 0:
        raise InstabilityError(
            f"non-finite coefficient during time stepping: alpha={indices[bad_a]} "
            f"at step {bad_step} (t={bad_step * tgrid.dt:.6g})",
            alpha=indices[bad_a], step=bad_step)

    save_times = save_steps * tgrid.dt
    sol = PropagatorSolution(problem, op, indices, level_ptr, save_times, out)
    sol.boundary_mass = _boundary_mass(sol)
    return sol


def _boundary_mass(sol: PropagatorSolution) -> float:
    """Boundary fraction of the root-sum-square field at the final save time."""
    last = sol.data[-1]
    if sol.backend.is_spectral:
        nodes = np.fft.ifft(last, axis=-1).real
    else:
        nodes = last
    rss = np.sqrt(np.sum(np.abs(nodes) ** 2, axis=0))
    return sol.grid.boundary_mass(rss)


def level_energy(sol: PropagatorSolution, n: int, t: float) -> float:
    """F_n(t) = sum over |alpha| = n of ||u_alpha(t)||^2 in L2."""
    s = sol._save_index(t)
    block = sol.data[s, sol.level_slice(n)]
    if sol.backend.is_spectral:
        g = sol.grid
        return float(np.sum(np.abs(block) ** 2)) * g.length / g.nx**2
    w = sol.grid.trapz_weights()
    return float(np.sum((np.abs(block) ** 2) @ w))


def total_energy(sol: PropagatorSolution, t: float) -> float:
    return sum(level_energy(sol, n, t) for n in range(sol.n_levels))


@dataclass
class ConvergenceReport:
    t: float
    levels: list          # rows: (n, F_n, ratio to next, geometric ratio bound)
    epsilon: float
    Cstar: float
    b: float
    C1: float
    C3: float
    factorial_bounds: list
    classification: str

    def rows(self):
        out = []
        for (n, fn, ratio), fb in zip(self.levels, self.factorial_bounds):
            geo = 1.0 / (1.0 + self.b) if self.b not in (None, math.inf) else 0.0
            out.append({"n": n, "F_n": fn, "ratio": ratio,
                        "geometric_ratio_bound": geo, "factorial_bound": fb})
        return out


def convergence_report(sol: PropagatorSolution, t: float = None, q=None) -> ConvergenceReport:
    """Measured per-level energies and ratios against the theoretical decay:
    geometric ratio 1/(1+b) with b = epsilon/C* for strongly parabolic
    operators, and the factorial bound (C3 t)^n / n! e^{C1 t} ||u0||^2 when
    the noise operators are bounded (sigma = 0).

    Conventions recorded here: C* = max(sum sigma^2, sum nu^2) for the
    V-norm ||v'||^2 + ||v||^2, C1 = c + a/2, C3 = sum nu^2.
    """
    if t is None:
        t = float(sol.save_times[-1])
    spec = sol.problem.op
    rep = parabolicity_report(spec, q)
    fns = [level_energy(sol, n, t) for n in range(sol.n_levels)]
    rows = []
    for n, fn in enumerate(fns):
        ratio = fns[n + 1] / fn if n + 1 < len(fns) and fn > 0 else math.nan
        rows.append((n, fn, ratio))
    if spec.kind == "constant":
        C1 = float(spec.c) + 0.5 * float(spec.a)
        C3 = float(sum(v**2 for v in spec.nu))
    else:
        C1 = math.nan
        C3 = math.nan
    u0_norm_sq = level_energy(sol, 0, 0.0)
    fbounds = [(C3 * t) ** n / math.factorial(n) * math.exp(C1 * t) * u0_norm_sq
               if not math.isnan(C3) else math.nan
               for n in range(sol.n_levels)]
    return ConvergenceReport(t, rows, rep.epsilon, rep.Cstar, rep.b, C1, C3,
                             fbounds, rep.classification)


def first_level_quadrature_check(sol: PropagatorSolution) -> float:
    """Deterministic identity u_(ik)(T) = int Phi_{T,s} M_k u_(0)(s) m_i(s) ds.

    The right side is evaluated from the stored level-0 trajectory by
    Simpson quadrature with the exact per-mode semigroup; spectral,
    constant-coefficient problems only.  Returns the worst L2 mismatch.
    """
    if not sol.backend.is_spectral:
        raise ValueError("spectral backend required")
    t_nodes = sol.save_times
    if len(t_nodes) != sol.problem.tgrid.steps + 1:
        raise ValueError("needs save='all'")
    T = float(t_nodes[-1])
    op = sol.backend
    basis = sol.problem.basis
    u0_traj = sol.data[:, sol.position[EMPTY]]  # (steps+1, nx) modes
    worst = 0.0
    nsteps = len(t_nodes) - 1
    if nsteps % 2:
        raise ValueError("needs an even number of steps for Simpson")
    w = np.ones(nsteps + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w *= (t_nodes[1] - t_nodes[0]) / 3.0
    for a_mi in sol.indices:
        if a_mi.order != 1:
            continue
        ((i, k), _e), = a_mi.entries
        integrand = (np.exp(np.outer(T - t_nodes, op.symbol_A))
                     * (op.symbols_M[k - 1][None, :] * u0_traj)
                     * basis.eval_m(i, t_nodes)[:, None])
        rhs = w @ integrand
        diff = rhs - sol.raw_at(a_mi, T)
        worst = max(worst, sol.grid.mode_norm(diff))
    return worst


def iterated_integral_check(sol: PropagatorSolution, n: int, n_samples: int,
                            seed: int = 0) -> float:
    """Compare sum_{|alpha|=n} u_alpha(T) xi_alpha with the n-fold iterated
    Ito integral evaluated by Euler quadrature along sampled Brownian paths
    (constant-coefficient spectral backend, n <= 2).

    The basis coordinates are computed from the same increments by
    Riemann-Stieltjes sums, so the discrepancy combines the Euler time
    discretization with the finite-basis tail of the level-n kernel and
    vanishes only as both are refined.  Returns the L2-over-samples
    discrepancy at t = T.
    """
    if n not in (0, 1, 2):
        raise ValueError("n <= 2")
    if not sol.backend.is_spectral:
        raise ValueError("spectral backend required")
    from .basis import subseed, xi_alpha_batch

    op = sol.backend
    problem = sol.problem
    tgrid = problem.tgrid
    T = tgrid.horizon
    t_nodes = tgrid.t
    dt = tgrid.dt
    basis = problem.basis
    r = problem.trunc.n_channels
    g = sol.grid

    if n == 0:
        return 0.0

    rng = np.random.Generator(np.random.Philox(key=np.uint64(subseed(seed, "iter") & 0xFFFFFFFFFFFFFFFF)))
    dW = math.sqrt(dt) * rng.standard_normal((n_samples, r, tgrid.steps))
    m_tab = basis.m_table(t_nodes)  # (n_basis, steps+1)
    # xi_ik = int m_i dw_k by left-point Riemann-Stieltjes on the same grid
    coords_batch = np.einsum("ij,skj->sik", m_tab[:, :-1], dW)
    nsamp = n_samples

    u0_traj = sol.data[:, sol.position[EMPTY]] if EMPTY in sol.position else None
    if len(sol.save_times) != tgrid.steps + 1:
        raise ValueError("needs save='all'")

    EA = np.exp(op.symbol_A * dt)

    # inner integrand M_k u_(0)(s) + g_k(s) on the full grid, in modes
    gmodes = np.zeros((r, len(t_nodes), g.nx), dtype=np.complex128)
    for k_ch in range(1, r + 1):
        if len(problem.g) >= k_ch and problem.g[k_ch - 1] is not None and not isinstance(problem.g[k_ch - 1], dict):
            tab = _as_field_table(problem.g[k_ch - 1], g, t_nodes)
            gmodes[k_ch - 1] = np.fft.fft(tab, axis=-1)
    integrand = np.stack([op.symbols_M[k][None, :] * u0_traj + gmodes[k]
                          for k in range(r)])  # (r, steps+1, nx)

    # J1(t_j): Euler sum with semigroup transport, cumulative over steps
    J1 = np.zeros((nsamp, len(t_nodes), g.nx), dtype=np.complex128)
    for j in range(tgrid.steps):
        inc = np.einsum("sk,kx->sx", dW[:, :, j], integrand[:, j])
        J1[:, j + 1] = EA[None, :] * (J1[:, j] + inc)
    if n == 1:
        approx = J1[:, -1]
    else:
        J2 = np.zeros((nsamp, g.nx), dtype=np.complex128)
        for j in range(tgrid.steps):
            inner = np.einsum("kx,sx->skx", np.stack(op.symbols_M), J1[:, j])
            inc = np.einsum("sk,skx->sx", dW[:, :, j], inner)
            J2 = EA[None, :] * (J2 + inc)
        approx = J2

    lvl = sol.level_slice(n)
    xi = xi_alpha_batch(sol.indices[lvl], coords_batch)  # (nsamp, cnt)
    exact = np.einsum("sa,ax->sx", xi, sol.data[sol._save_index(T), lvl])
    diff = exact - approx
    sq = np.sum(np.abs(diff) ** 2, axis=1) * g.length / g.nx**2
    return math.sqrt(float(np.mean(sq)))
