"""Spatial discretization on 1-D domains.

Two backends:

* spectral: constant-coefficient operators on a periodic box, applied as
  exact per-mode symbols (A = a D^2 + b D + c -> -a y^2 + i b y + c,
  M_k = sigma_k D + nu_k -> i sigma_k y + nu_k);
* finite differences: variable-coefficient operators on a truncated
  interval, second-order central stencils inside and second-order
  one-sided stencils on the two boundary rows.  With the "dirichlet"
  boundary the A rows at the ends are zeroed (boundary nodes evolve by
  source only), which leaves support-localized fields untouched; "open"
  keeps one-sided A rows, exact on low-degree polynomials.

Whole-line problems are approximated on a box large enough that the
boundary mass is negligible; solvers report the boundary-mass diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._band import band_apply, penta_factor, penta_solve


class DimensionMismatchError(ValueError):
    pass


class InstabilityError(RuntimeError):
    """A non-finite field value appeared during time stepping."""

    def __init__(self, message, alpha=None, step=None):
        super().__init__(message)
        self.alpha = alpha
        self.step = step


@dataclass(frozen=True)
class PeriodicGrid:
    """Nodes x_j = -L/2 + j L / nx, wavenumbers y_m = 2 pi m / L (fft order)."""

    length: float
    nx: int

    def __post_init__(self):
        if self.nx < 8 or (self.nx & (self.nx - 1)) != 0:
            raise ValueError("nx must be a power of two, >= 8")

    @property
    def x(self) -> np.ndarray:
        L, n = self.length, self.nx
        return -L / 2 + L * np.arange(n) / n

    @property
    def y(self) -> np.ndarray:
        return 2.0 * math.pi * np.fft.fftfreq(self.nx, d=self.length / self.nx)

    @property
    def h(self) -> float:
        return self.length / self.nx

    def to_modes(self, u_nodes: np.ndarray) -> np.ndarray:
        return np.fft.fft(u_nodes)

    def to_nodes(self, u_modes: np.ndarray) -> np.ndarray:
        return np.fft.ifft(u_modes).real

    def norm(self, u_nodes: np.ndarray) -> float:
        """L2 norm by the periodic rectangle rule (= trapezoid here)."""
        return math.sqrt(self.h * float(np.sum(np.abs(u_nodes) ** 2)))

    def mode_norm(self, u_modes: np.ndarray) -> float:
        """Same L2 norm via Parseval."""
        return math.sqrt(self.length * float(np.sum(np.abs(u_modes) ** 2)) / self.nx**2)

    def boundary_mass(self, u_nodes: np.ndarray, cells: int = 3) -> float:
        total = float(np.sum(np.abs(u_nodes) ** 2))
        if total == 0.0:
            return 0.0
        edge = float(np.sum(np.abs(u_nodes[:cells]) ** 2) + np.sum(np.abs(u_nodes[-cells:]) ** 2))
        return edge / total


@dataclass(frozen=True)
class IntervalGrid:
    """Uniform nodes on [x0, x1], both ends included."""

    x0: float
    x1: float
    nx: int

    def __post_init__(self):
        if self.nx < 8 or self.x1 <= self.x0:
            raise ValueError("need nx >= 8 and x1 > x0")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x0, self.x1, self.nx)

    @property
    def h(self) -> float:
        return (self.x1 - self.x0) / (self.nx - 1)

    def trapz_weights(self) -> np.ndarray:
        w = np.full(self.nx, self.h)
        w[0] = w[-1] = self.h / 2
        return w

    def norm(self, u: np.ndarray) -> float:
        return math.sqrt(float(self.trapz_weights() @ (np.abs(u) ** 2)))

    def boundary_mass(self, u: np.ndarray, cells: int = 3) -> float:
        """Fraction of the squared mass within `cells` nodes of either end."""
        total = float(np.sum(np.abs(u) ** 2))
        if total == 0.0:
            return 0.0
        edge = float(np.sum(np.abs(u[:cells]) ** 2) + np.sum(np.abs(u[-cells:]) ** 2))
        return edge / total


class FDOperator:
    """Variable-coefficient operator on an IntervalGrid, stored as five
    diagonals (only the first/last rows use the outer two).

    Term kinds (c is a coefficient array over nodes):
      ("lap", c)       c(x) D^2 u
      ("grad", c)      c(x) D u
      ("mult", c)      c(x) u
      ("lap_div", c)   D^2 (c u)      (divergence form)
      ("grad_div", c)  D (c u)
    """

    def __init__(self, grid: IntervalGrid, terms):
        self.grid = grid
        n, h = grid.nx, grid.h
        lo2 = np.zeros(n)
        lo1 = np.zeros(n)
        d = np.zeros(n)
        up1 = np.zeros(n)
        up2 = np.zeros(n)
        one = np.ones(n)

        def add_row0(r):
            d[0] += r[0]
            up1[0] += r[1]
            up2[0] += r[2]

        def add_rowN(r):
            lo2[n - 1] += r[0]
            lo1[n - 1] += r[1]
            d[n - 1] += r[2]

        for kind, c in terms:
            c = np.asarray(c, dtype=float) * one
            if kind == "lap":
                lo1[1:-1] += c[1:-1] / h**2
                d[1:-1] += -2 * c[1:-1] / h**2
                up1[1:-1] += c[1:-1] / h**2
                add_row0(c[0] * np.array([1.0, -2.0, 1.0]) / h**2)
                add_rowN(c[-1] * np.array([1.0, -2.0, 1.0]) / h**2)
            elif kind == "grad":
                lo1[1:-1] += -c[1:-1] / (2 * h)
                up1[1:-1] += c[1:-1] / (2 * h)
                add_row0(c[0] * np.array([-3.0, 4.0, -1.0]) / (2 * h))
                add_rowN(c[-1] * np.array([1.0, -4.0, 3.0]) / (2 * h))
            elif kind == "mult":
                d += c
            elif kind == "lap_div":
                lo1[1:-1] += c[:-2] / h**2
                d[1:-1] += -2 * c[1:-1] / h**2
                up1[1:-1] += c[2:] / h**2
                add_row0(np.array([c[0], -2 * c[1], c[2]]) / h**2)
                add_rowN(np.array([c[-3], -2 * c[-2], c[-1]]) / h**2)
            elif kind == "grad_div":
                lo1[1:-1] += -c[:-2] / (2 * h)
                up1[1:-1] += c[2:] / (2 * h)
                add_row0(np.array([-3 * c[0], 4 * c[1], -c[2]]) / (2 * h))
                add_rowN(np.array([c[-3], -4 * c[-2], 3 * c[-1]]) / (2 * h))
            else:
                raise ValueError(f"unknown term kind {kind!r}")
        self.bands = (lo2, lo1, d, up1, up2)

    def zero_boundary_rows(self) -> "FDOperator":
        op = FDOperator.__new__(FDOperator)
        op.grid = self.grid
        lo2, lo1, d, up1, up2 = (b.copy() for b in self.bands)
        for b in (lo2, lo1, d, up1, up2):
            b[0] = 0.0
            b[-1] = 0.0
        op.bands = (lo2, lo1, d, up1, up2)
        return op

    def apply(self, u: np.ndarray) -> np.ndarray:
        if u.shape[-1] != self.grid.nx:
            raise DimensionMismatchError("field length does not match grid")
        out = np.empty_like(np.asarray(u, dtype=float))
        band_apply(*self.bands, np.asarray(u, dtype=float), out)
        return out


@dataclass(frozen=True)
class OperatorSpec:
    """User-facing operator description.

    kind = "constant": A = a D^2 + b D + c, M_k = sigma_k D + nu_k on a
    periodic grid (spectral backend).  kind = "variable": coefficients as
    scalars or callables of x on an interval grid (FD backend).  `a_terms`
    and `m_terms` allow divergence-form assembly directly (used by the
    Zakai operators).
    """

    kind: str
    grid: object
    a: object = 0.0
    b: object = 0.0
    c: object = 0.0
    sigma: tuple = ()
    nu: tuple = ()
    boundary: str = "periodic"
    a_terms: tuple = None
    m_terms: tuple = None  # one term-list per channel

    @staticmethod
    def constant(grid: PeriodicGrid, a=0.0, b=0.0, c=0.0, sigma=(), nu=()):
        r = max(len(sigma), len(nu))
        sigma = tuple(sigma) + (0.0,) * (r - len(sigma))
        nu = tuple(nu) + (0.0,) * (r - len(nu))
        return OperatorSpec("constant", grid, a, b, c, sigma, nu, "periodic")

    @staticmethod
    def variable(grid: IntervalGrid, a=0.0, b=0.0, c=0.0, sigma=(), nu=(),
                 boundary="dirichlet"):
        if boundary not in ("dirichlet", "open"):
            raise ValueError("boundary must be 'dirichlet' or 'open'")
        r = max(len(sigma), len(nu))
        sigma = tuple(sigma) + (0.0,) * (r - len(sigma))
        nu = tuple(nu) + (0.0,) * (r - len(nu))
        return OperatorSpec("variable", grid, a, b, c, sigma, nu, boundary)

    @staticmethod
    def from_terms(grid: IntervalGrid, a_terms, m_terms, boundary="dirichlet"):
        return OperatorSpec("variable", grid, boundary=boundary,
                            a_terms=tuple(a_terms),
                            m_terms=tuple(tuple(t) for t in m_terms))

    @property
    def n_channels(self) -> int:
        if self.m_terms is not None:
            return len(self.m_terms)
        return max(len(self.sigma), len(self.nu), 1)

    def _as_values(self, coeff) -> np.ndarray:
        x = self.grid.x
        if callable(coeff):
            return np.asarray(coeff(x), dtype=float) * np.ones_like(x)
        arr = np.asarray(coeff, dtype=float)
        if arr.ndim == 0:
            return float(arr) * np.ones_like(x)
        if arr.shape != x.shape:
            raise DimensionMismatchError("coefficient array does not match the grid")
        return arr

    def build(self):
        if self.kind == "constant":
            return SpectralOperator(self)
        if self.kind == "variable":
            return FDBackend(self)
        raise ValueError(f"unknown operator kind {self.kind!r}")


class SpectralOperator:
    """Constant-coefficient backend: everything is diagonal per Fourier mode."""

    is_spectral = True

    def __init__(self, spec: OperatorSpec):
        if not isinstance(spec.grid, PeriodicGrid):
            raise DimensionMismatchError("constant-coefficient operators need a PeriodicGrid")
        self.spec = spec
        self.grid = spec.grid
        y = self.grid.y
        self.symbol_A = -float(spec.a) * y**2 + 1j * float(spec.b) * y + float(spec.c)
        self.symbols_M = [1j * float(s) * y + float(v) for s, v in zip(spec.sigma, spec.nu)]

    @property
    def n_channels(self):
        return len(self.symbols_M)

    def apply_A(self, u_nodes: np.ndarray) -> np.ndarray:
        g = self.grid
        return g.to_nodes(self.symbol_A * g.to_modes(u_nodes))

    def apply_Mk(self, k: int, u_nodes: np.ndarray) -> np.ndarray:
        g = self.grid
        return g.to_nodes(self.symbols_M[k - 1] * g.to_modes(u_nodes))


class FDBackend:
    """Finite-difference backend; assembles A and M_k band operators."""

    is_spectral = False

    def __init__(self, spec: OperatorSpec):
        if not isinstance(spec.grid, IntervalGrid):
            raise DimensionMismatchError("variable-coefficient operators need an IntervalGrid")
        self.spec = spec
        self.grid = spec.grid
        if spec.a_terms is not None:
            a_terms = [(kind, spec._as_values(c)) for kind, c in spec.a_terms]
            m_term_lists = [[(kind, spec._as_values(c)) for kind, c in terms]
                            for terms in spec.m_terms]
        else:
            a_terms = [("lap", spec._as_values(spec.a)),
                       ("grad", spec._as_values(spec.b)),
                       ("mult", spec._as_values(spec.c))]
            m_term_lists = [[("grad", spec._as_values(s)), ("mult", spec._as_values(v))]
                            for s, v in zip(spec.sigma, spec.nu)]
        self.A = FDOperator(self.grid, a_terms)
        if spec.boundary == "dirichlet":
            self.A = self.A.zero_boundary_rows()
        self.Ms = [FDOperator(self.grid, terms) for terms in m_term_lists]

    @property
    def n_channels(self):
        return len(self.Ms)

    def apply_A(self, u: np.ndarray) -> np.ndarray:
        return self.A.apply(u)

    def apply_Mk(self, k: int, u: np.ndarray) -> np.ndarray:
        return self.Ms[k - 1].apply(u)

    def cn_matrices(self, dt: float):
        """Bands of (I + dt/2 A) and the factorization of (I - dt/2 A)."""
        lo2, lo1, d, up1, up2 = self.A.bands
        n = self.grid.nx
        eye = np.zeros(n)
        eye[:] = 1.0
        plus = (0.5 * dt * lo2, 0.5 * dt * lo1, eye + 0.5 * dt * d,
                0.5 * dt * up1, 0.5 * dt * up2)
        m_lo2 = -0.5 * dt * lo2
        m_lo1 = -0.5 * dt * lo1
        m_d = eye - 0.5 * dt * d
        m_up1 = -0.5 * dt * up1
        m_up2 = -0.5 * dt * up2
        mu, al, be, ga = penta_factor(m_lo2, m_lo1, m_d, m_up1, m_up2)
        return plus, (m_lo2, mu, al, be, ga)


@dataclass(frozen=True)
class ParabolicityReport:
    epsilon: float
    classification: str  # strong | weak | non-parabolic
    C0: float
    Cstar: float
    b: float  # epsilon / Cstar when Cstar > 0

    def __str__(self):
        return (f"{self.classification} (epsilon={self.epsilon:.6g}, "
                f"C*={self.Cstar:.6g}, b={self.b:.6g})")


def parabolicity_report(spec: OperatorSpec, q=None) -> ParabolicityReport:
    """epsilon = 2a - sum q_k^2 sigma_k^2 and the induced classification:
    strong if epsilon > 0, weak if = 0 (within 1e-12), else non-parabolic.

    For variable coefficients the same quantity is evaluated per node and
    the pointwise minimum classifies.  C* bounds sum ||M_k v||^2 by the
    V-norm ||v'||^2 + ||v||^2, so C* = max(sum sigma^2, sum nu^2).
    """
    r = spec.n_channels
    if q is None:
        q = np.ones(r)
    q = np.asarray(q, dtype=float)
    if spec.kind == "constant":
        ssum = sum(qk**2 * s**2 for qk, s in zip(q, spec.sigma))
        nsum = sum(qk**2 * v**2 for qk, v in zip(q, spec.nu))
        eps = 2.0 * float(spec.a) - ssum
        C0 = 2.0 * float(spec.c) + nsum
        Cstar = max(sum(s**2 for s in spec.sigma), sum(v**2 for v in spec.nu))
    else:
        if spec.a_terms is not None:
            raise ValueError("parabolicity report needs explicit a/sigma coefficients")
        a = spec._as_values(spec.a)
        zeros = np.zeros_like(a)
        ssum = sum((qk**2 * spec._as_values(s) ** 2 for qk, s in zip(q, spec.sigma)), zeros)
        nsum = sum((qk**2 * spec._as_values(v) ** 2 for qk, v in zip(q, spec.nu)), zeros)
        eps = float(np.min(2.0 * a - ssum))
        C0 = float(np.max(2.0 * spec._as_values(spec.c) + nsum))
        s_unw = sum((spec._as_values(s) ** 2 for s in spec.sigma), zeros)
        n_unw = sum((spec._as_values(v) ** 2 for v in spec.nu), zeros)
        Cstar = max(float(np.max(s_unw)), float(np.max(n_unw)))
    if eps > 1e-12:
        cls = "strong"
    elif abs(eps) <= 1e-12:
        cls = "weak"
    else:
        cls = "non-parabolic"
    b = eps / Cstar if Cstar > 0 else math.inf
    return ParabolicityReport(eps, cls, C0, Cstar, b)


def imex_step(op, u, dt: float, source_start=None, source_end=None):
    """One IMEX step of du/dt = A u + S(t): exact exponential integrator per
    mode (spectral; `u` in modes) or Crank-Nicolson in A (FD; `u` in nodes),
    trapezoidal in the source.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if getattr(op, "is_spectral", False):
        s0 = np.zeros_like(u) if source_start is None else source_start
        s1 = np.zeros_like(u) if source_end is None else source_end
        E = np.exp(op.symbol_A * dt)
        out = E * u + 0.5 * dt * (E * s0 + s1)
    else:
        s0 = np.zeros_like(u) if source_start is None else source_start
        s1 = np.zeros_like(u) if source_end is None else source_end
        plus, factors = op.cn_matrices(dt)
        rhs = np.empty_like(u)
        band_apply(*plus, u, rhs)
        rhs += 0.5 * dt * (s0 + s1)
        out = np.empty_like(u)
        penta_solve(factors[0], factors[1], factors[2], factors[3], factors[4], rhs, out)
    if not np.all(np.isfinite(out)):
        raise InstabilityError("non-finite field after IMEX step")
    return out
