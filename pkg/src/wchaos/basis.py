"""Hermite polynomials, the cosine time basis on [0, T], Gaussian coordinate
sampling, Cameron-Martin basis evaluation and Wiener-path reconstruction.

Conventions: probabilists' Hermite polynomials (weight e^{-t^2/2}),
H_0 = 1, H_1 = t, H_{n+1} = t H_n - n H_{n-1}.  The time basis is the
Fourier cosine basis m_1 = 1/sqrt(T), m_i(t) = sqrt(2/T) cos(pi (i-1) t / T).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .multiindex import EMPTY, MultiIndex, SupportError

MAX_HERMITE_DEGREE = 200


def hermite(n: int, x):
    """Probabilists' Hermite H_n(x) by the three-term recurrence.

    Works on scalars and numpy arrays alike.
    """
    if n < 0 or n > MAX_HERMITE_DEGREE:
        raise ValueError(f"degree {n} outside 0..{MAX_HERMITE_DEGREE}")
    h_prev = np.ones_like(np.asarray(x, dtype=float))
    if n == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = np.asarray(x, dtype=float).copy()
    for m in range(1, n):
        h, h_prev = np.asarray(x) * h - m * h_prev, h
    return h if h.ndim else float(h)


def hermite_table(max_degree: int, x: np.ndarray) -> np.ndarray:
    """H_d(x) for d = 0..max_degree, stacked on the first axis."""
    x = np.asarray(x, dtype=float)
    out = np.empty((max_degree + 1,) + x.shape)
    out[0] = 1.0
    if max_degree >= 1:
        out[1] = x
    for d in range(1, max_degree):
        out[d + 1] = x * out[d] - d * out[d - 1]
    return out


def subseed(master: int, purpose: str) -> int:
    """Stable 64-bit sub-seed derived from (master seed, purpose string)."""
    digest = hashlib.sha256(f"{master}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _slot_generator(seed: int, i: int, k: int) -> np.random.Generator:
    # one counter-based stream per slot, so matrices extend in (n, r)
    # without reshuffling earlier entries
    key = (np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64((i << 24) ^ k))
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class TimeBasis:
    """Fourier cosine basis on [0, T]: m_1 = 1/sqrt(T),
    m_i(t) = sqrt(2/T) cos(pi (i-1) t / T) for i > 1.
    """

    horizon: float
    count: int
    kind: str = "fourier-cosine"

    def __post_init__(self):
        if self.horizon <= 0 or self.count < 1:
            raise ValueError("need horizon > 0 and count >= 1")
        if self.kind != "fourier-cosine":
            raise ValueError(f"unsupported time basis kind {self.kind!r}")

    def _check(self, i, t):
        if not 1 <= i <= self.count:
            raise ValueError(f"mode index {i} outside 1..{self.count}")
        if np.any(np.asarray(t) < -1e-12) or np.any(np.asarray(t) > self.horizon * (1 + 1e-12)):
            raise ValueError("time outside [0, T]")

    def eval_m(self, i: int, t):
        self._check(i, t)
        T = self.horizon
        if i == 1:
            return np.full_like(np.asarray(t, dtype=float), 1.0 / math.sqrt(T)) if np.ndim(t) else 1.0 / math.sqrt(T)
        w = math.pi * (i - 1) / T
        return math.sqrt(2.0 / T) * np.cos(w * np.asarray(t, dtype=float)) if np.ndim(t) else math.sqrt(2.0 / T) * math.cos(w * t)

    def antiderivative_M(self, i: int, t):
        """M_i(t) = integral of m_i from 0 to t, in closed form."""
        self._check(i, t)
        T = self.horizon
        if i == 1:
            return np.asarray(t, dtype=float) / math.sqrt(T) if np.ndim(t) else t / math.sqrt(T)
        w = math.pi * (i - 1) / T
        if np.ndim(t):
            return math.sqrt(2.0 / T) * np.sin(w * np.asarray(t, dtype=float)) / w
        return math.sqrt(2.0 / T) * math.sin(w * t) / w

    def integral_M(self, i: int, t0: float, t1: float) -> float:
        if t0 > t1:
            raise ValueError("need t0 <= t1")
        return self.antiderivative_M(i, t1) - self.antiderivative_M(i, t0)

    def _integral_s_m(self, i: int, t0: float, t1: float) -> float:
        # integral of s * m_i(s) over [t0, t1], closed form
        T = self.horizon
        if i == 1:
            return (t1 * t1 - t0 * t0) / (2.0 * math.sqrt(T))
        w = math.pi * (i - 1) / T
        c = math.sqrt(2.0 / T)

        def F(s):
            return c * (math.cos(w * s) / (w * w) + s * math.sin(w * s) / w)

        return F(t1) - F(t0)

    def step_weights(self, t_grid: np.ndarray):
        """Product-quadrature weights for integrating m_i(s) * P(s) over each
        step, with P replaced by its linear interpolant:

            int_{t_j}^{t_{j+1}} m_i P ds  ~=  WL[i-1, j] P(t_j) + WR[i-1, j] P(t_{j+1}).

        The m_i factor is integrated exactly, so only P''s smoothness limits
        the accuracy.
        """
        steps = len(t_grid) - 1
        WL = np.empty((self.count, steps))
        WR = np.empty((self.count, steps))
        for i in range(1, self.count + 1):
            for j in range(steps):
                a, b = t_grid[j], t_grid[j + 1]
                dt = b - a
                i0 = self.integral_M(i, a, b)
                i1 = self._integral_s_m(i, a, b)
                WR[i - 1, j] = (i1 - a * i0) / dt
                WL[i - 1, j] = i0 - WR[i - 1, j]
        return WL, WR

    def m_table(self, t_grid: np.ndarray) -> np.ndarray:
        """m_i(t_j) for i = 1..count on the given grid."""
        return np.stack([self.eval_m(i, t_grid) for i in range(1, self.count + 1)])


@dataclass(frozen=True)
class GaussianCoordinates:
    """Matrix of iid standard normals xi_{ik}, i <= n (time), k <= r (channel)."""

    xi: np.ndarray
    seed: int = 0

    @property
    def n(self) -> int:
        return self.xi.shape[0]

    @property
    def r(self) -> int:
        return self.xi.shape[1]

    @staticmethod
    def sample(seed: int, n: int, r: int) -> "GaussianCoordinates":
        xi = np.empty((n, r))
        for i in range(1, n + 1):
            for k in range(1, r + 1):
                xi[i - 1, k - 1] = _slot_generator(seed, i, k).standard_normal()
        return GaussianCoordinates(xi, seed)

    @staticmethod
    def sample_batch(seed: int, n: int, r: int, count: int) -> np.ndarray:
        """(count, n, r) array; slot (i, k) draws `count` values from its own
        stream, so batches are prefixes of longer batches.
        """
        out = np.empty((count, n, r))
        for i in range(1, n + 1):
            for k in range(1, r + 1):
                out[:, i - 1, k - 1] = _slot_generator(seed, i, k).standard_normal(count)
        return out


def xi_alpha(alpha: MultiIndex, coords: GaussianCoordinates) -> float:
    """xi_alpha = (alpha!)^{-1/2} prod H_{alpha_i^k}(xi_{ik});  xi_empty = 1."""
    out = 1.0
    for (i, k), e in alpha.entries:
        if i > coords.n or k > coords.r:
            raise SupportError(f"slot ({i},{k}) outside coords {coords.n}x{coords.r}")
        out *= hermite(e, coords.xi[i - 1, k - 1]) / math.sqrt(math.factorial(e))
    return out


def xi_alpha_batch(indices, xi_batch: np.ndarray, max_degree: int = None) -> np.ndarray:
    """Evaluate xi_alpha for every alpha in `indices` at every coordinate
    matrix in `xi_batch` (shape (count, n, r)).  Returns (count, len(indices)).
    """
    count, n, r = xi_batch.shape
    if max_degree is None:
        max_degree = max((a.order for a in indices), default=0)
    tab = hermite_table(max_degree, xi_batch)  # (deg+1, count, n, r)
    out = np.ones((count, len(indices)))
    for j, alpha in enumerate(indices):
        for (i, k), e in alpha.entries:
            if i > n or k > r:
                raise SupportError(f"slot ({i},{k}) outside coords {n}x{r}")
            out[:, j] *= tab[e, :, i - 1, k - 1] / math.sqrt(math.factorial(e))
    return out


def path_from_coords(coords: GaussianCoordinates, basis: TimeBasis, k: int, t):
    """Reconstructed Brownian path w_k(t) = sum_i xi_{ik} M_i(t).

    For the cosine basis only M_1(T) is nonzero, so w_k(T) = sqrt(T) xi_{1k}
    exactly at any truncation.
    """
    if not 1 <= k <= coords.r:
        raise SupportError(f"channel {k} outside 1..{coords.r}")
    tarr = np.asarray(t, dtype=float)
    out = np.zeros_like(tarr)
    for i in range(1, coords.n + 1):
        out = out + coords.xi[i - 1, k - 1] * basis.antiderivative_M(i, tarr)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class TestDirection:
    """Finitely supported test direction h(t) = sum_{i,k} h[i-1,k-1] m_i(t) y_k."""

    __test__ = False  # not a pytest class, despite the name

    h: np.ndarray

    @property
    def n(self) -> int:
        return self.h.shape[0]

    @property
    def r(self) -> int:
        return self.h.shape[1]

    @staticmethod
    def from_entries(n: int, r: int, entries) -> "TestDirection":
        h = np.zeros((n, r))
        for (i, k), v in (entries.items() if hasattr(entries, "items") else entries):
            h[i - 1, k - 1] = v
        return TestDirection(h)

    def norm_sq(self) -> float:
        return float(np.sum(self.h**2))

    def h_power(self, alpha: MultiIndex) -> float:
        """h^alpha = prod h_{k,i}^{alpha_i^k}."""
        out = 1.0
        for (i, k), e in alpha.entries:
            if i > self.n or k > self.r:
                return 0.0
            out *= self.h[i - 1, k - 1] ** e
        return out

    def channel_values(self, k: int, basis: TimeBasis, t_grid: np.ndarray) -> np.ndarray:
        """h_k(t) = sum_i h[i-1,k-1] m_i(t) on a time grid."""
        out = np.zeros_like(np.asarray(t_grid, dtype=float))
        for i in range(1, self.n + 1):
            if self.h[i - 1, k - 1] != 0.0:
                out += self.h[i - 1, k - 1] * basis.eval_m(i, t_grid)
        return out


def stoch_exp_coeff(h: TestDirection, alpha: MultiIndex) -> float:
    """Chaos coefficient of the stochastic exponential: h^alpha / sqrt(alpha!)."""
    return h.h_power(alpha) / math.sqrt(alpha.factorial())


def s_transform_scalar(coeffs: dict, h: TestDirection) -> float:
    """S-transform of a finitely supported coefficient map:
    sum_alpha coeffs[alpha] h^alpha / sqrt(alpha!).
    """
    return sum(c * stoch_exp_coeff(h, a) for a, c in coeffs.items())


def s_coefficient_recovery(s_func, alpha: MultiIndex, n: int, r: int, step: float = 1e-3) -> float:
    """Recover a chaos coefficient from an S-transform by central finite
    differences at h = 0 (supports |alpha| <= 2: first and mixed second
    derivatives, and the pure second derivative).
    """
    if alpha == EMPTY:
        return s_func(TestDirection(np.zeros((n, r))))

    def ev(deltas):
        h = np.zeros((n, r))
        for (i, k), v in deltas:
            h[i - 1, k - 1] += v
        return s_func(TestDirection(h))

    ent = alpha.entries
    if alpha.order == 1:
        (p, _e), = ent
        d = (ev([(p, step)]) - ev([(p, -step)])) / (2 * step)
        return d
    if alpha.order == 2:
        if len(ent) == 1:
            (p, _e), = ent
            d2 = (ev([(p, step)]) - 2 * ev([]) + ev([(p, -step)])) / step**2
            return d2 / math.sqrt(2.0)
        (p1, _), (p2, _) = ent
        d2 = (ev([(p1, step), (p2, step)]) - ev([(p1, step), (p2, -step)])
              - ev([(p1, -step), (p2, step)]) + ev([(p1, -step), (p2, -step)])) / (4 * step**2)
        return d2
    raise ValueError("finite-difference recovery implemented for |alpha| <= 2")
