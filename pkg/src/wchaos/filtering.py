"""Diffusion filtering by chaos expansion of the unnormalized filtering
density (UFD).

State/observation model (d = 1 mandatory, interfaces dimension-ready):

    dX = b(X) dt + sigma(X) dW + rho(X) dV,
    dY = h(X) dt + dV,                     Y(0) = 0.

The UFD solves the Zakai equation du = L* u dt + sum_l M_l* u dY_l with
L* u = 1/2 D^2((sigma sigma* + rho rho*) u) - D(b u) and
M_l* u = h_l u - D(rho_l u).  Its chaos coefficients solve the same
propagator as any other equation here (zakai_solve reuses propagator.solve);
the basis variables are observation-driven, xi_ik = int m_i dY_k, which is
what separates the offline coefficient solve from the per-observation
assembly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .basis import GaussianCoordinates, TimeBasis, subseed
from .multiindex import TruncationSpec
from .oracle import kalman_bucy
from .propagator import PropagatorSolution, SpdeProblem, TimeGrid, _as_field, solve
from .spatial import IntervalGrid, OperatorSpec


class NormalizerError(RuntimeError):
    """The unnormalized mass phi_t[1] is numerically zero."""


@dataclass
class FilterModel:
    """Coefficient functions of the filtering model; scalars allowed."""

    b: object
    sigma: object
    h: object
    u0: object
    rho: object = None          # correlation with the observation noise
    d: int = 1
    d1: int = 1
    r: int = 1

    def __post_init__(self):
        if self.d != 1:
            raise NotImplementedError("only d = 1 states are implemented")
        if self.r != 1:
            raise NotImplementedError("only r = 1 observations are implemented")

    def b_at(self, x):
        return self.b(x) if callable(self.b) else self.b * np.ones_like(x)

    def sigma_at(self, x):
        return self.sigma(x) if callable(self.sigma) else self.sigma * np.ones_like(x)

    def h_at(self, x):
        return self.h(x) if callable(self.h) else self.h * np.ones_like(x)

    def rho_at(self, x):
        if self.rho is None:
            return np.zeros_like(x)
        return self.rho(x) if callable(self.rho) else self.rho * np.ones_like(x)


def simulate(model: FilterModel, T: float, steps: int, seed: int):
    """Euler-Maruyama path of (X, Y); reproducible by seed.

    Returns (t_grid, X, Y) with Y(0) = 0.  X0 is drawn from the prior
    density by inverse-cdf sampling on a fine grid.
    """
    dt = T / steps
    if dt > 1e-2 * T:
        raise ValueError("need dt <= 1e-2 T")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))
    xs = np.linspace(-20, 20, 20001)
    pdf = np.maximum(np.asarray(model.u0(xs) if callable(model.u0) else model.u0), 0.0)
    cdf = np.cumsum(pdf)
    cdf /= cdf[-1]
    x0 = float(np.interp(rng.uniform(), cdf, xs))
    t = np.linspace(0.0, T, steps + 1)
    X = np.empty(steps + 1)
    Y = np.empty(steps + 1)
    X[0], Y[0] = x0, 0.0
    dW = math.sqrt(dt) * rng.standard_normal(steps)
    dV = math.sqrt(dt) * rng.standard_normal(steps)
    for j in range(steps):
        xj = X[j]
        bj = model.b(xj) if callable(model.b) else model.b
        sj = model.sigma(xj) if callable(model.sigma) else model.sigma
        rj = 0.0 if model.rho is None else (model.rho(xj) if callable(model.rho) else model.rho)
        hj = model.h(xj) if callable(model.h) else model.h
        X[j + 1] = xj + bj * dt + sj * dW[j] + rj * dV[j]
        Y[j + 1] = Y[j] + hj * dt + dV[j]
        if not (np.isfinite(X[j + 1]) and np.isfinite(Y[j + 1])):
            raise RuntimeError(f"simulation diverged at step {j + 1}")
    return t, X, Y


def simulate_reference_observation(T: float, steps: int, seed: int):
    """Observation path under the reference measure: a pure Wiener process."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))
    dV = math.sqrt(T / steps) * rng.standard_normal(steps)
    Y = np.concatenate([[0.0], np.cumsum(dV)])
    return np.linspace(0.0, T, steps + 1), Y


@dataclass
class ObservationRecord:
    """Observation path with its derived basis coordinates
    xi_ik = int_0^T m_i dY_k, computed by integration by parts."""

    t: np.ndarray
    Y: np.ndarray               # (steps+1,) single channel
    basis: TimeBasis
    xi: np.ndarray = field(init=False)

    def __post_init__(self):
        if abs(self.Y[0]) > 0:
            raise ValueError("Y(0) must be 0")
        self.xi = np.array([[observation_coordinate(self.basis, i, self.t, self.Y)]
                            for i in range(1, self.basis.count + 1)])

    def coords(self) -> GaussianCoordinates:
        return GaussianCoordinates(self.xi, seed=-1)


def observation_coordinate(basis: TimeBasis, i: int, t: np.ndarray, Y: np.ndarray) -> float:
    """int m_i dY = m_i(T) Y(T) - int m_i'(t) Y(t) dt (m_i smooth, Y(0)=0)."""
    T = basis.horizon
    if i == 1:
        return float(Y[-1]) / math.sqrt(T)
    w = math.pi * (i - 1) / T
    mprime = -math.sqrt(2.0 / T) * w * np.sin(w * t)
    return float(basis.eval_m(i, T) * Y[-1] - np.trapezoid(mprime * Y, t))


def observation_coordinate_riemann(basis: TimeBasis, i: int, t: np.ndarray, Y: np.ndarray) -> float:
    """Left-point Riemann-Stieltjes sum int m_i dY on the simulation grid."""
    m = basis.eval_m(i, t[:-1])
    return float(np.sum(m * np.diff(Y)))


def zakai_problem(model: FilterModel, grid: IntervalGrid, trunc: TruncationSpec,
                  tgrid: TimeGrid) -> SpdeProblem:
    """Propagator problem for the UFD coefficients."""
    x = grid.x
    diff = 0.5 * (model.sigma_at(x) ** 2 + model.rho_at(x) ** 2)
    a_terms = [("lap_div", diff), ("grad_div", -model.b_at(x))]
    m_terms = [[("mult", model.h_at(x))]]
    rho_vals = model.rho_at(x)
    if np.any(rho_vals != 0.0):
        m_terms[0].append(("grad_div", -rho_vals))
    op = OperatorSpec.from_terms(grid, a_terms, m_terms, boundary="dirichlet")
    u0 = _as_field(model.u0, grid)
    return SpdeProblem(op=op, trunc=trunc, tgrid=tgrid, u0=u0)


def zakai_solve(model: FilterModel, grid: IntervalGrid, trunc: TruncationSpec,
                tgrid: TimeGrid, save="ends") -> PropagatorSolution:
    return solve(zakai_problem(model, grid, trunc, tgrid), save=save)


def ufd(sol: PropagatorSolution, obs: ObservationRecord, t: float) -> np.ndarray:
    """Unnormalized filtering density at t from observation coordinates."""
    from .chaos_field import sample_field

    return sample_field(sol, obs.coords(), t)


def estimate(sol: PropagatorSolution, obs: ObservationRecord, f, t: float) -> dict:
    """Unnormalized and normalized chaos filter estimates of f(X(t)).

    phi_t[f] = sum_alpha (int f u_alpha dx) xi_alpha(obs); the normalized
    estimate divides by phi_t[1].
    """
    from .basis import xi_alpha_batch

    grid = sol.grid
    w = grid.trapz_weights()
    fv = f(grid.x) if callable(f) else np.asarray(f, dtype=float) * np.ones(grid.nx)
    s = sol._save_index(t)
    f_alpha = sol.data[s] @ (w * fv)
    one_alpha = sol.data[s] @ w
    xi = xi_alpha_batch(sol.indices, obs.coords().xi[None, :, :])[0]
    unnorm = float(f_alpha @ xi)
    mass = float(one_alpha @ xi)
    prior_mass = float(sol.data[s, sol.position[sol.indices[0]]] @ w)
    scale = max(abs(prior_mass), 1.0)
    if abs(mass) < 1e-8 * scale:
        raise NormalizerError(f"phi_t[1] = {mass:.3e} is numerically zero")
    return {"unnormalized": unnorm, "normalized": unnorm / mass, "mass": mass}


def splitting_zakai(model: FilterModel, grid: IntervalGrid, t_grid: np.ndarray,
                    Y: np.ndarray, substeps: int = 1) -> np.ndarray:
    """Per-path splitting-up reference for the Zakai equation (rho = 0):
    Crank-Nicolson Fokker-Planck step, then the multiplicative observation
    update exp(h dY - h^2 dt / 2).  Used as the finite-n reference in the
    truncation studies; refine with `substeps` for the deterministic part.
    """
    from ._band import band_apply, penta_factor, penta_solve

    if np.any(model.rho_at(grid.x) != 0.0):
        raise NotImplementedError("splitting reference assumes rho = 0")
    x = grid.x
    diff = 0.5 * model.sigma_at(x) ** 2
    from .spatial import FDOperator

    A = FDOperator(grid, [("lap_div", diff), ("grad_div", -model.b_at(x))]).zero_boundary_rows()
    hval = model.h_at(x)
    u = _as_field(model.u0, grid)
    dt_obs = t_grid[1] - t_grid[0]
    dt = dt_obs / substeps
    lo2, lo1, d, up1, up2 = A.bands
    eye = np.ones(grid.nx)
    plus = (0.5 * dt * lo2, 0.5 * dt * lo1, eye + 0.5 * dt * d,
            0.5 * dt * up1, 0.5 * dt * up2)
    m_lo2, m_lo1 = -0.5 * dt * lo2, -0.5 * dt * lo1
    m_d, m_up1, m_up2 = eye - 0.5 * dt * d, -0.5 * dt * up1, -0.5 * dt * up2
    mu, al, be, ga = penta_factor(m_lo2, m_lo1, m_d, m_up1, m_up2)
    rhs = np.empty(grid.nx)
    for j in range(len(t_grid) - 1):
        for _ in range(substeps):
            band_apply(*plus, u, rhs)
            penta_solve(m_lo2, mu, al, be, ga, rhs, u)
        dY = Y[j + 1] - Y[j]
        u = u * np.exp(hval * dY - 0.5 * hval**2 * dt_obs)
    return u


@dataclass
class StudyRow:
    kind: str       # "N" or "n"
    value: int
    error: float
    ratio: float
    bound: float


def truncation_error_study(model: FilterModel, grid: IntervalGrid, T: float,
                           solver_steps: int, N_ladder, n_ladder, N_fixed: int,
                           n_fixed: int, N_ref: int, replications: int, seed: int,
                           h_inf: float, ref_substeps: int = 8) -> dict:
    """Reference-measure truncation errors of the chaos filter.

    Part N: solve once at (N_ref, n_fixed); for each replication simulate Y
    as a Wiener process, assemble u_N^n for every N in the ladder and
    measure ||u_ref - u_N||^2; exact identity sum_{N<|alpha|<=N_ref}
    ||u_alpha(T)||^2 is reported alongside.  Ratios are compared with the
    factorial-decay bound 4 h_inf T / (N + 2) (times the slack used by the
    caller).

    Part n: at fixed N, solve per n in the ladder and measure the distance
    to the per-path splitting-up reference at dt/ref_substeps (common Y
    paths across the ladder).
    """
    from .basis import xi_alpha_batch

    tgrid = TimeGrid(T, solver_steps)
    t_nodes = tgrid.t
    w = grid.trapz_weights()

    # --- N part: one solve at (N_ref, n_fixed)
    trunc_ref = TruncationSpec(N_ref, n_fixed, 1)
    sol_ref = zakai_solve(model, grid, trunc_ref, tgrid, save=[T])
    basis = sol_ref.problem.basis
    orders = np.array([a.order for a in sol_ref.indices])
    data_T = sol_ref.data[-1]

    exact_tail = {}
    for N in N_ladder:
        mask = orders > N
        exact_tail[N] = float(np.sum((np.abs(data_T[mask]) ** 2) @ w))

    err_N = {N: 0.0 for N in N_ladder}
    for rep in range(replications):
        _t, Y = simulate_reference_observation(T, solver_steps, subseed(seed, f"N-rep{rep}"))
        xi = np.array([[observation_coordinate(basis, i, t_nodes, Y)]
                       for i in range(1, basis.count + 1)])
        xiv = xi_alpha_batch(sol_ref.indices, xi[None, :, :])[0]
        for N in N_ladder:
            mask = orders > N
            diff = xiv[mask] @ data_T[mask]
            err_N[N] += float((diff**2) @ w)
    rows = []
    prev = None
    for N in sorted(N_ladder):
        err = err_N[N] / replications
        ratio = err / prev if prev else math.nan
        bound = 4.0 * h_inf * T / (N + 1)  # ratio bound from level N-1 to N
        rows.append(StudyRow("N", N, err, ratio, bound))
        prev = err

    # --- n part: common Y paths, reference by splitting at finer dt
    err_n = {}
    Ys = [simulate_reference_observation(T, solver_steps, subseed(seed, f"n-rep{rep}"))[1]
          for rep in range(replications)]
    refs = [splitting_zakai(model, grid, t_nodes, Y, substeps=ref_substeps) for Y in Ys]
    for n in sorted(n_ladder):
        trunc = TruncationSpec(N_fixed, n, 1)
        sol_n = zakai_solve(model, grid, trunc, tgrid, save=[T])
        bas = sol_n.problem.basis
        acc = 0.0
        for Y, uref in zip(Ys, refs):
            xi = np.array([[observation_coordinate(bas, i, t_nodes, Y)]
                           for i in range(1, n + 1)])
            xiv = xi_alpha_batch(sol_n.indices, xi[None, :, :])[0]
            u_apx = xiv @ sol_n.data[-1]
            acc += float(((u_apx - uref) ** 2) @ w)
        err_n[n] = acc / replications
    ns = sorted(n_ladder)
    inv = np.array([1.0 / n for n in ns])
    errs = np.array([err_n[n] for n in ns])
    A = np.vstack([inv, np.ones_like(inv)]).T
    coef, res, *_ = np.linalg.lstsq(A, errs, rcond=None)
    ss_tot = float(np.sum((errs - errs.mean()) ** 2))
    ss_res = float(np.sum((errs - A @ coef) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    n_rows = []
    prev = None
    for n in ns:
        ratio = err_n[n] / prev if prev else math.nan
        n_rows.append(StudyRow("n", n, err_n[n], ratio, math.nan))
        prev = err_n[n]

    return {"N_rows": rows, "exact_tail": exact_tail, "n_rows": n_rows,
            "n_fit": {"c": float(coef[0]), "intercept": float(coef[1]), "r2": r2}}


def posterior_mean_vs_kalman(model: FilterModel, grid: IntervalGrid, T: float,
                             solver_steps: int, N: int, n: int, a_lin: float,
                             sig: float, H: float, m0: float, P0: float,
                             replications: int, seed: int, save_times=None) -> dict:
    """Chaos-filter posterior mean against Kalman-Bucy on a linear model
    h(x) = H x, dX = a_lin X dt + sig dW.  RMSE over save times and
    replications, scaled by the mean posterior standard deviation.
    """
    tgrid = TimeGrid(T, solver_steps)
    t_nodes = tgrid.t
    if save_times is None:
        save_times = [round(solver_steps * j / 8) * tgrid.dt for j in range(1, 9)]
    sol = zakai_solve(model, grid, TruncationSpec(N, n, 1), tgrid,
                      save=[0.0] + list(save_times))
    basis = sol.problem.basis
    sq_err = 0.0
    count = 0
    std_acc = 0.0
    for rep in range(replications):
        _t, X, Y = simulate(model, T, solver_steps, subseed(seed, f"c-rep{rep}"))
        kb = kalman_bucy(a_lin, sig, H, m0, P0, t_nodes, Y)
        # coefficients are defined against the basis on the whole window,
        # so one observation record serves every evaluation time
        obs = ObservationRecord(t_nodes, Y, basis)
        for ts in save_times:
            j = tgrid.step_of(ts)
            est = estimate(sol, obs, lambda x: x, ts)["normalized"]
            sq_err += (est - kb.mean[j]) ** 2
            std_acc += math.sqrt(max(kb.var[j], 0.0))
            count += 1
    rmse = math.sqrt(sq_err / count)
    mean_std = std_acc / count
    return {"rmse": rmse, "mean_posterior_std": mean_std,
            "relative": rmse / mean_std}
