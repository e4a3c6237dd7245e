"""Random-field observables of a PropagatorSolution: pathwise samples,
mean/covariance, third and fourth moments through the complete-triple
kernels, weighted chaos norms, and the field-level S-transform with its
round-trip check against the directly solved shifted PDE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._band import band_apply, penta_factor, penta_solve
from .basis import GaussianCoordinates, TestDirection, xi_alpha, xi_alpha_batch
from .multiindex import EMPTY, MultiIndex, product_expand
from .propagator import PropagatorSolution, SpdeProblem, _as_field, _as_field_table


@dataclass(frozen=True)
class WeightSequence:
    """Per-index weights r_alpha.

    kind "Q": r_alpha = q^alpha = prod q_k^{alpha_i^k} for a per-channel
    sequence q (the only weights that commute with the propagator).
    kind "rho-gamma": r_alpha^2 = (alpha!)^rho prod (2ik)^{gamma alpha_i^k}.
    """

    kind: str
    q: tuple = ()
    rho: float = 0.0
    gamma: float = 0.0

    @staticmethod
    def from_q(q) -> "WeightSequence":
        q = tuple(float(v) for v in q)
        if any(v <= 0 for v in q):
            raise ValueError("q_k must be positive")
        return WeightSequence("Q", q=q)

    @staticmethod
    def from_rho_gamma(rho: float, gamma: float) -> "WeightSequence":
        if not -1.0 <= rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")
        return WeightSequence("rho-gamma", rho=float(rho), gamma=float(gamma))

    def weight(self, alpha: MultiIndex) -> float:
        if self.kind == "Q":
            out = 1.0
            for (_i, k), e in alpha.entries:
                if k > len(self.q):
                    raise ValueError(f"channel {k} beyond the Q sequence")
                out *= self.q[k - 1] ** e
            return out
        log_sq = self.rho * alpha.log_factorial()
        for (i, k), e in alpha.entries:
            log_sq += self.gamma * e * math.log(2 * i * k)
        return math.exp(0.5 * log_sq)


def apply_weights(sol: PropagatorSolution, w: WeightSequence) -> PropagatorSolution:
    """The operator R: coefficient alpha multiplied by r_alpha."""
    return sol.scaled(np.array([w.weight(a) for a in sol.indices]))


@dataclass(frozen=True)
class WeightedNormResult:
    value: float
    tail_ratio: float
    divergent: bool


def weighted_norm(sol: PropagatorSolution, w: WeightSequence, t: float) -> WeightedNormResult:
    """sum_alpha r_alpha^2 ||u_alpha(t)||^2, with a Cauchy-tail diagnostic:
    the norm is flagged divergent (not fatal) when the last two level sums
    have ratio > 0.5.
    """
    s = sol._save_index(t)
    level_sums = []
    for n in range(sol.n_levels):
        blk = sol.level_slice(n)
        acc = 0.0
        for j in range(blk.start, blk.stop):
            r = w.weight(sol.indices[j])
            acc += r * r * sol._row_norm(sol.data[s, j]) ** 2
        level_sums.append(acc)
    total = float(sum(level_sums))
    if len(level_sums) >= 2 and level_sums[-2] > 0:
        tail_ratio = level_sums[-1] / level_sums[-2]
    else:
        tail_ratio = 0.0
    return WeightedNormResult(total, tail_ratio, tail_ratio > 0.5)


def sample_field(sol: PropagatorSolution, coords: GaussianCoordinates, t: float) -> np.ndarray:
    """Node values of sum_alpha u_alpha(t, .) xi_alpha(coords), summed in
    the canonical enumeration order."""
    s = sol._save_index(t)
    acc = np.zeros(sol.grid.nx, dtype=sol.data.dtype)
    for j, a in enumerate(sol.indices):
        acc = acc + xi_alpha(a, coords) * sol.data[s, j]
    if sol.backend.is_spectral:
        return sol.grid.to_nodes(acc)
    return acc


def sample_fields_batch(sol: PropagatorSolution, coords_batch: np.ndarray, t: float) -> np.ndarray:
    """(count, nx) node values for a batch of coordinate matrices."""
    s = sol._save_index(t)
    xi = xi_alpha_batch(sol.indices, coords_batch)
    acc = xi @ sol.data[s]
    if sol.backend.is_spectral:
        return np.fft.ifft(acc, axis=-1).real
    return acc


def nearest_node(sol: PropagatorSolution, x: float) -> int:
    return int(np.argmin(np.abs(sol.grid.x - x)))


def point_value(sol: PropagatorSolution, alpha: MultiIndex, t: float, x: float) -> float:
    return float(sol.values_at(alpha, t)[nearest_node(sol, x)])


def mean_field(sol: PropagatorSolution, t: float) -> np.ndarray:
    """E u(t, .) = u_empty for deterministic initial data (the |alpha|=0 block)."""
    return sol.values_at(EMPTY, t)


def covariance(sol: PropagatorSolution, p1, p2) -> float:
    """Centered covariance sum_{|alpha|>=1} u_alpha(t,x) u_alpha(s,y)."""
    (t1, x1), (t2, x2) = p1, p2
    j1, j2 = nearest_node(sol, x1), nearest_node(sol, x2)
    s1, s2 = sol._save_index(t1), sol._save_index(t2)
    acc = 0.0
    for j, a in enumerate(sol.indices):
        if a.order == 0:
            continue
        v1 = sol.data[s1, j] if not sol.backend.is_spectral else None
        if sol.backend.is_spectral:
            acc += float(sol.grid.to_nodes(sol.data[s1, j])[j1]
                         * sol.grid.to_nodes(sol.data[s2, j])[j2])
        else:
            acc += float(sol.data[s1, j][j1] * sol.data[s2, j][j2])
    return acc


def second_moment(sol: PropagatorSolution, p1, p2) -> float:
    """Uncentered E u(t,x) u(s,y) = sum over all alpha."""
    (t1, x1), (t2, x2) = p1, p2
    v1 = _point_values_all(sol, t1, x1)
    v2 = _point_values_all(sol, t2, x2)
    return float(v1 @ v2)


def _point_values_all(sol: PropagatorSolution, t: float, x: float) -> np.ndarray:
    s = sol._save_index(t)
    jx = nearest_node(sol, x)
    if sol.backend.is_spectral:
        return np.fft.ifft(sol.data[s], axis=-1).real[:, jx]
    return sol.data[s][:, jx]


def _pair_expansions(indices):
    """For every ordered index pair (a, b), the product expansion entries
    (a, b, mu_prime, Psi).  Psi(alpha, beta, alpha+beta-2mu) equals the
    product coefficient C(alpha, beta, mu)."""
    out = []
    for a in indices:
        for b in indices:
            for mu_p, coeff in product_expand(a, b):
                out.append((a, b, mu_p, coeff))
    return out


def third_moment(sol: PropagatorSolution, p1, p2, p3) -> float:
    """E u(p1) u(p2) u(p3) = sum over complete triples of
    Psi(alpha,beta,gamma) u_alpha(p1) u_beta(p2) u_gamma(p3), truncation-
    consistent (all three indices within the enumerated set)."""
    v1 = _point_values_all(sol, *p1)
    v2 = _point_values_all(sol, *p2)
    v3 = _point_values_all(sol, *p3)
    pos = sol.position
    acc = 0.0
    for a, b, c, psi_val in _triple_table(sol):
        jc = pos.get(c)
        if jc is None:
            continue
        acc += psi_val * v1[pos[a]] * v2[pos[b]] * v3[jc]
    return float(acc)


_TRIPLE_CACHE = {}


def _triple_table(sol: PropagatorSolution):
    key = tuple(sol.indices)
    if key not in _TRIPLE_CACHE:
        _TRIPLE_CACHE[key] = _pair_expansions(sol.indices)
    return _TRIPLE_CACHE[key]


def fourth_moment(sol: PropagatorSolution, p1, p2, p3, p4) -> float:
    """E u(p1) u(p2) u(p3) u(p4) via the rho-contraction
    sum_rho [sum_{a,b} Psi(a,b,rho) u_a(p1) u_b(p2)] [sum_{c,d} Psi(rho,c,d) u_c(p3) u_d(p4)];
    rho ranges over every index produced by the product expansions, which
    makes the value exactly the fourth moment of the truncated field."""
    v1 = _point_values_all(sol, *p1)
    v2 = _point_values_all(sol, *p2)
    v3 = _point_values_all(sol, *p3)
    v4 = _point_values_all(sol, *p4)
    pos = sol.position
    left = {}
    right = {}
    for a, b, rho, psi_val in _triple_table(sol):
        left[rho] = left.get(rho, 0.0) + psi_val * v1[pos[a]] * v2[pos[b]]
        right[rho] = right.get(rho, 0.0) + psi_val * v3[pos[a]] * v4[pos[b]]
    acc = 0.0
    for rho, lv in left.items():
        rv = right.get(rho)
        if rv is not None:
            acc += lv * rv
    return float(acc)


def s_transform_field(sol: PropagatorSolution, h: TestDirection, t: float) -> np.ndarray:
    """S u(h)(t, .) = sum_alpha u_alpha(t, .) h^alpha / sqrt(alpha!), nodes."""
    s = sol._save_index(t)
    weights = np.array([h.h_power(a) / math.sqrt(a.factorial()) for a in sol.indices])
    acc = weights @ sol.data[s]
    if sol.backend.is_spectral:
        return sol.grid.to_nodes(acc)
    return acc


def shifted_solution(problem: SpdeProblem, h: TestDirection, save="ends") -> dict:
    """Directly solve the S-transformed deterministic equation

        v' = A v + Sf(h) + sum_k h_k(t) (M_k v + Sg_k(h)),   v(0) = Su0(h),

    with the same IMEX and source-quadrature family as the propagator.
    Returns {t: node values}.
    """
    op = problem.op.build()
    grid = op.grid
    tgrid = problem.tgrid
    basis = problem.basis
    t_nodes = tgrid.t
    dt = tgrid.dt
    r = problem.trunc.n_channels
    WL, WR = basis.step_weights(t_nodes)

    # S-transformed input data
    u0_map = problem.u0 if isinstance(problem.u0, dict) else (
        {} if problem.u0 is None else {EMPTY: problem.u0})
    v = np.zeros(grid.nx)
    for a, val in u0_map.items():
        v = v + (h.h_power(a) / math.sqrt(a.factorial())) * _as_field(val, grid)

    f_map = problem.f if isinstance(problem.f, dict) else (
        {} if problem.f is None else {EMPTY: problem.f})
    ftab = np.zeros((len(t_nodes), grid.nx))
    for a, val in f_map.items():
        ftab += (h.h_power(a) / math.sqrt(a.factorial())) * _as_field_table(val, grid, t_nodes)

    gtabs = np.zeros((r, len(t_nodes), grid.nx))
    for k_ch in range(1, min(r, len(problem.g)) + 1):
        gk = problem.g[k_ch - 1]
        if gk is None:
            continue
        gmap = gk if isinstance(gk, dict) else {EMPTY: gk}
        for a, val in gmap.items():
            gtabs[k_ch - 1] += (h.h_power(a) / math.sqrt(a.factorial())) * _as_field_table(val, grid, t_nodes)

    from .propagator import _save_steps
    save_steps = set(_save_steps(tgrid, save).tolist())
    out = {}

    if op.is_spectral:
        vm = grid.to_modes(v)
        E = np.exp(op.symbol_A * dt)
        symM = [op.symbols_M[k] for k in range(r)]
        fmodes = np.fft.fft(ftab, axis=-1)
        gmodes = np.fft.fft(gtabs, axis=-1)
        if 0 in save_steps:
            out[0.0] = grid.to_nodes(vm)
        for j in range(tgrid.steps):
            cL = np.zeros(grid.nx, dtype=np.complex128)
            cR = np.zeros(grid.nx, dtype=np.complex128)
            force = 0.5 * dt * (E * fmodes[j] + fmodes[j + 1])
            for i in range(1, basis.count + 1):
                for k in range(1, r + 1):
                    hv = h.h[i - 1, k - 1] if (i <= h.n and k <= h.r) else 0.0
                    if hv == 0.0:
                        continue
                    cL += hv * WL[i - 1, j] * symM[k - 1]
                    cR += hv * WR[i - 1, j] * symM[k - 1]
                    force += hv * (WL[i - 1, j] * E * gmodes[k - 1, j]
                                   + WR[i - 1, j] * gmodes[k - 1, j + 1])
            vm = (E * (vm + cL * vm) + force) / (1.0 - cR)
            if j + 1 in save_steps:
                out[(j + 1) * dt] = grid.to_nodes(vm)
        return out

    # FD backend: banded implicit system rebuilt per step
    lo2A, lo1A, dA, up1A, up2A = op.A.bands
    m_bands = [op.Ms[k].bands for k in range(r)]
    eye = np.ones(grid.nx)
    if 0 in save_steps:
        out[0.0] = v.copy()
    for j in range(tgrid.steps):
        cl = np.zeros((r,))
        lo2L = 0.5 * dt * lo2A.copy(); lo1L = 0.5 * dt * lo1A.copy()
        dL = eye + 0.5 * dt * dA; up1L = 0.5 * dt * up1A.copy(); up2L = 0.5 * dt * up2A.copy()
        lo2R = -0.5 * dt * lo2A.copy(); lo1R = -0.5 * dt * lo1A.copy()
        dR = eye - 0.5 * dt * dA; up1R = -0.5 * dt * up1A.copy(); up2R = -0.5 * dt * up2A.copy()
        force = 0.5 * dt * (ftab[j] + ftab[j + 1])
        for i in range(1, basis.count + 1):
            for k in range(1, r + 1):
                hv = h.h[i - 1, k - 1] if (i <= h.n and k <= h.r) else 0.0
                if hv == 0.0:
                    continue
                wl = hv * WL[i - 1, j]
                wr = hv * WR[i - 1, j]
                mb = m_bands[k - 1]
                lo2L += wl * mb[0]; lo1L += wl * mb[1]; dL += wl * mb[2]
                up1L += wl * mb[3]; up2L += wl * mb[4]
                lo2R -= wr * mb[0]; lo1R -= wr * mb[1]; dR -= wr * mb[2]
                up1R -= wr * mb[3]; up2R -= wr * mb[4]
                force += wl * gtabs[k - 1, j] + wr * gtabs[k - 1, j + 1]
        rhs = np.empty(grid.nx)
        band_apply(lo2L, lo1L, dL, up1L, up2L, v, rhs)
        rhs += force
        mu, al, be, ga = penta_factor(lo2R, lo1R, dR, up1R, up2R)
        vn = np.empty(grid.nx)
        penta_solve(lo2R, mu, al, be, ga, rhs, vn)
        v = vn
        if j + 1 in save_steps:
            out[(j + 1) * dt] = v.copy()
    return out


def s_check(sol: PropagatorSolution, h: TestDirection, t: float = None) -> float:
    """Round trip of the S-transform theorems: L2 distance at time t between
    the S-transform of the chaos solution and the directly solved shifted
    deterministic PDE.  The distance isolates the chaos truncation tail.
    """
    if t is None:
        t = float(sol.save_times[-1])
    v = shifted_solution(sol.problem, h, save=[t])[t]
    w = s_transform_field(sol, h, t)
    diff = v - w
    if sol.backend.is_spectral:
        return sol.grid.norm(diff)
    return sol.grid.norm(diff)


def positivity_probe(sol: PropagatorSolution, hs, t: float) -> float:
    """Minimum of S u(h)(t, x) over the probe directions and nodes.

    Necessary-only evidence for nonnegativity (a finite probe set cannot
    certify it); diagnostic per the S-transform positivity definition.
    """
    worst = math.inf
    for h in hs:
        worst = min(worst, float(np.min(s_transform_field(sol, h, t))))
    return worst


def scale_noise(problem: SpdeProblem, q) -> SpdeProblem:
    """The Q-scaled problem: sigma_k, nu_k, g_k multiplied by q_k."""
    spec = problem.op
    q = list(q)
    if len(q) < spec.n_channels:
        raise ValueError("need one q_k per channel")
    if spec.kind == "constant":
        new_spec = spec.__class__.constant(
            spec.grid, a=spec.a, b=spec.b, c=spec.c,
            sigma=tuple(qk * s for qk, s in zip(q, spec.sigma)),
            nu=tuple(qk * v for qk, v in zip(q, spec.nu)))
    elif spec.a_terms is None:
        def scaled(coeff, qk):
            if callable(coeff):
                return lambda x, c=coeff, w=qk: w * np.asarray(c(x))
            return qk * coeff
        new_spec = spec.__class__.variable(
            spec.grid, a=spec.a, b=spec.b, c=spec.c,
            sigma=tuple(scaled(s, qk) for qk, s in zip(q, spec.sigma)),
            nu=tuple(scaled(v, qk) for qk, v in zip(q, spec.nu)),
            boundary=spec.boundary)
    else:
        raise ValueError("scale_noise needs explicit sigma/nu coefficients")
    new_g = []
    for k_ch, gk in enumerate(problem.g, start=1):
        qk = q[k_ch - 1]
        if gk is None:
            new_g.append(None)
        elif isinstance(gk, dict):
            new_g.append({a: _scale_value(v, qk) for a, v in gk.items()})
        else:
            new_g.append(_scale_value(gk, qk))
    return SpdeProblem(op=new_spec, trunc=problem.trunc, tgrid=problem.tgrid,
                       u0=problem.u0, f=problem.f, g=tuple(new_g),
                       basis=problem.basis, support_modes=problem.support_modes)


def _scale_value(val, qk):
    if callable(val):
        def wrapped(*args, v=val, w=qk):
            return w * np.asarray(v(*args))
        return wrapped
    return qk * np.asarray(val, dtype=float) if np.ndim(val) else qk * float(val)
