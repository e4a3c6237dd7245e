"""Multi-indices over the double array (time-mode i, noise-channel k).

A multi-index alpha assigns a nonnegative exponent alpha_i^k to each pair
(i, k), with only finitely many nonzero.  This module holds the exact
combinatorics: ordering and enumeration, factorials, raising/lowering,
characteristic sets, complete triples, and the coefficients of the
normalized-Hermite product formula

    xi_gamma * xi_beta = sum_{mu <= gamma ^ beta} C(gamma, beta, mu) * xi_{gamma+beta-2mu}.

Everything here is exact integer arithmetic (arbitrary precision), with
log-space variants for the large-order norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache


class IncompleteTripleError(ValueError):
    """psi() was called on a triple that is not complete."""


class InvalidMuError(ValueError):
    """c_coeff() was called with mu not entrywise <= gamma ^ beta."""


class SupportError(ValueError):
    """A multi-index touches slots outside the available (i, k) range."""


@dataclass(frozen=True)
class MultiIndex:
    """Sparse canonical multi-index: sorted tuple of ((i, k), exponent).

    Indices i, k are 1-based.  No stored exponent is zero, so equality and
    hashing work on the canonical entry tuple directly.
    """

    entries: tuple = ()

    @staticmethod
    def make(pairs) -> "MultiIndex":
        """Build from any {(i, k): exponent} mapping or iterable of items."""
        if hasattr(pairs, "items"):
            pairs = pairs.items()
        acc = {}
        for (i, k), e in pairs:
            if i < 1 or k < 1:
                raise ValueError(f"slot indices are 1-based, got ({i},{k})")
            if e < 0:
                raise ValueError(f"negative exponent at ({i},{k})")
            if e:
                acc[(i, k)] = acc.get((i, k), 0) + e
        return MultiIndex(tuple(sorted(acc.items())))

    def exponent(self, i: int, k: int) -> int:
        for (ii, kk), e in self.entries:
            if ii == i and kk == k:
                return e
        return 0

    @property
    def order(self) -> int:
        """|alpha| = sum of all exponents."""
        return sum(e for _, e in self.entries)

    def factorial(self) -> int:
        """alpha! = prod over entries of alpha_i^k!, exact."""
        out = 1
        for _, e in self.entries:
            out *= math.factorial(e)
        return out

    def log_factorial(self) -> float:
        """log(alpha!) = sum of lgamma(alpha_i^k + 1)."""
        return sum(math.lgamma(e + 1) for _, e in self.entries)

    def raised(self, i: int, k: int) -> "MultiIndex":
        """alpha with the (i, k) entry incremented; order grows by 1."""
        d = dict(self.entries)
        d[(i, k)] = d.get((i, k), 0) + 1
        return MultiIndex(tuple(sorted(d.items())))

    def lowered(self, i: int, k: int) -> "MultiIndex":
        """alpha with the (i, k) entry decremented, floored at zero."""
        d = dict(self.entries)
        if (i, k) not in d:
            return self
        d[(i, k)] -= 1
        if d[(i, k)] == 0:
            del d[(i, k)]
        return MultiIndex(tuple(sorted(d.items())))

    def characteristic_set(self) -> tuple:
        """Ordered multiset of (i, k) pairs, each repeated alpha_i^k times.

        Sorted by i then k; length equals |alpha|.
        """
        out = []
        for (i, k), e in sorted(self.entries):
            out.extend([(i, k)] * e)
        return tuple(out)

    @staticmethod
    def from_characteristic_set(pairs) -> "MultiIndex":
        return MultiIndex.make([(p, 1) for p in pairs])

    def support(self) -> tuple:
        return tuple(p for p, _ in self.entries)

    def max_i(self) -> int:
        return max((i for (i, _k), _ in self.entries), default=0)

    def max_k(self) -> int:
        return max((k for (_i, k), _ in self.entries), default=0)

    # entrywise arithmetic over the union of supports (absent entries read 0)

    def __add__(self, other: "MultiIndex") -> "MultiIndex":
        d = dict(self.entries)
        for p, e in other.entries:
            d[p] = d.get(p, 0) + e
        return MultiIndex(tuple(sorted(d.items())))

    def sub_clip(self, other: "MultiIndex") -> "MultiIndex":
        """Entrywise alpha - beta, requiring beta <= alpha."""
        d = dict(self.entries)
        for p, e in other.entries:
            v = d.get(p, 0) - e
            if v < 0:
                raise ValueError("subtraction would go negative")
            if v == 0:
                d.pop(p, None)
            else:
                d[p] = v
        return MultiIndex(tuple(sorted(d.items())))

    def abs_diff(self, other: "MultiIndex") -> "MultiIndex":
        """Entrywise |alpha - beta|."""
        d = {}
        for p in set(dict(self.entries)) | set(dict(other.entries)):
            v = abs(self.exponent(*p) - other.exponent(*p))
            if v:
                d[p] = v
        return MultiIndex(tuple(sorted(d.items())))

    def min_with(self, other: "MultiIndex") -> "MultiIndex":
        """Entrywise min (gamma ^ beta)."""
        d = {}
        for p, e in self.entries:
            v = min(e, other.exponent(*p))
            if v:
                d[p] = v
        return MultiIndex(tuple(sorted(d.items())))

    def leq(self, other: "MultiIndex") -> bool:
        return all(e <= other.exponent(*p) for p, e in self.entries)

    def scale(self, m: int) -> "MultiIndex":
        if m == 0:
            return MultiIndex()
        return MultiIndex(tuple((p, m * e) for p, e in self.entries))

    def half(self) -> "MultiIndex":
        if any(e % 2 for _, e in self.entries):
            raise ValueError("not entrywise even")
        return MultiIndex(tuple((p, e // 2) for p, e in self.entries))

    def q_power(self, q) -> float:
        """q^alpha = prod_k q_k^{alpha_i^k}; q is a per-channel sequence."""
        out = 1.0
        for (_i, k), e in self.entries:
            out *= float(q[k - 1]) ** e
        return out

    def __repr__(self):
        if not self.entries:
            return "MultiIndex()"
        body = ", ".join(f"({i},{k}):{e}" for (i, k), e in self.entries)
        return f"MultiIndex({{{body}}})"


EMPTY = MultiIndex()


def order(alpha: MultiIndex) -> int:
    return alpha.order


def factorial(alpha: MultiIndex) -> int:
    return alpha.factorial()


def log_factorial(alpha: MultiIndex) -> float:
    return alpha.log_factorial()


def raise_index(alpha: MultiIndex, i: int, k: int) -> MultiIndex:
    return alpha.raised(i, k)


def lower_index(alpha: MultiIndex, i: int, k: int) -> MultiIndex:
    return alpha.lowered(i, k)


def characteristic_set(alpha: MultiIndex) -> tuple:
    return alpha.characteristic_set()


@dataclass(frozen=True)
class TruncationSpec:
    """Finite index set: all alpha with |alpha| <= max_order supported on
    i <= n_time_modes, k <= n_channels.  Cardinality is binom(n*r + N, N).
    """

    max_order: int
    n_time_modes: int
    n_channels: int = 1

    def __post_init__(self):
        if self.max_order < 0 or self.n_time_modes < 1 or self.n_channels < 1:
            raise ValueError("need max_order >= 0, n_time_modes >= 1, n_channels >= 1")

    @property
    def n_slots(self) -> int:
        return self.n_time_modes * self.n_channels

    def cardinality(self) -> int:
        return math.comb(self.n_slots + self.max_order, self.max_order)


def _dense_vector(alpha: MultiIndex, n: int, r: int) -> tuple:
    # i-major, k-minor layout; used only for the canonical ordering
    v = [0] * (n * r)
    for (i, k), e in alpha.entries:
        v[(i - 1) * r + (k - 1)] = e
    return tuple(v)


def sort_key(alpha: MultiIndex, spec: TruncationSpec):
    return (alpha.order, _dense_vector(alpha, spec.n_time_modes, spec.n_channels))


def enumerate_indices(spec: TruncationSpec, support_modes=None) -> list:
    """All multi-indices of the truncation, in the canonical order:
    by |alpha| ascending, then lexicographic on the dense exponent vector
    (i-major, k-minor).  Optionally restrict the support to the given list
    of time-mode indices i.
    """
    n, r = spec.n_time_modes, spec.n_channels
    if support_modes is None:
        modes = range(1, n + 1)
    else:
        modes = sorted(set(support_modes))
        if any(i < 1 or i > n for i in modes):
            raise SupportError("support_modes outside 1..n_time_modes")
    slots = [(i, k) for i in modes for k in range(1, r + 1)]

    out = []

    def compositions(total, nslots):
        # weak compositions of `total` into `nslots` parts
        if nslots == 1:
            yield (total,)
            return
        for first in range(total + 1):
            for rest in compositions(total - first, nslots - 1):
                yield (first,) + rest

    for n_ord in range(spec.max_order + 1):
        level = []
        for comp in compositions(n_ord, len(slots)):
            mi = MultiIndex.make([(slots[j], comp[j]) for j in range(len(slots)) if comp[j]])
            level.append(mi)
        level.sort(key=lambda a: _dense_vector(a, n, r))
        out.extend(level)
    return out


def is_complete(alpha: MultiIndex, beta: MultiIndex, gamma: MultiIndex) -> bool:
    """Complete triple: alpha+beta+gamma entrywise even and
    |alpha-beta| <= gamma <= alpha+beta entrywise.
    """
    s = alpha + beta + gamma
    if any(e % 2 for _, e in s.entries):
        return False
    lo = alpha.abs_diff(beta)
    hi = alpha + beta
    return lo.leq(gamma) and gamma.leq(hi)


def psi_log(alpha: MultiIndex, beta: MultiIndex, gamma: MultiIndex) -> float:
    """log Psi(alpha, beta, gamma) for a complete triple."""
    if not is_complete(alpha, beta, gamma):
        raise IncompleteTripleError(f"triple not complete: {alpha}, {beta}, {gamma}")
    top = 0.5 * (alpha.log_factorial() + beta.log_factorial() + gamma.log_factorial())
    bot = 0.0
    for trio in (_signed_half(alpha, beta, gamma), _signed_half(beta, alpha, gamma),
                 _signed_half(alpha, gamma, beta)):
        bot += trio.log_factorial()
    return top - bot


def _signed_half(a: MultiIndex, b: MultiIndex, c: MultiIndex) -> MultiIndex:
    # (a - b + c)/2 entrywise; completeness guarantees nonnegative even entries
    d = {}
    for pt in set(a.support()) | set(b.support()) | set(c.support()):
        v = a.exponent(*pt) - b.exponent(*pt) + c.exponent(*pt)
        if v < 0 or v % 2:
            raise IncompleteTripleError("signed half is not a nonnegative even integer")
        if v:
            d[pt] = v // 2
    return MultiIndex(tuple(sorted(d.items())))


def psi(alpha: MultiIndex, beta: MultiIndex, gamma: MultiIndex) -> float:
    """Psi(alpha,beta,gamma) = sqrt(alpha! beta! gamma!) /
    [((alpha-beta+gamma)/2)! ((beta-alpha+gamma)/2)! ((alpha+beta-gamma)/2)!].

    Equals E[xi_alpha xi_beta xi_gamma] on complete triples; invariant under
    permutation of the arguments.  Computed in log space.
    """
    return math.exp(psi_log(alpha, beta, gamma))


def psi_exact_sq(alpha: MultiIndex, beta: MultiIndex, gamma: MultiIndex):
    """Psi^2 as an exact Fraction; oracle for the log-space path."""
    from fractions import Fraction

    if not is_complete(alpha, beta, gamma):
        raise IncompleteTripleError("triple not complete")
    num = alpha.factorial() * beta.factorial() * gamma.factorial()
    den = (_signed_half(alpha, beta, gamma).factorial()
           * _signed_half(beta, alpha, gamma).factorial()
           * _signed_half(alpha, gamma, beta).factorial())
    return Fraction(num, den * den)


def _binom_mi(top: MultiIndex, bot: MultiIndex) -> int:
    out = 1
    for p, e in bot.entries:
        out *= math.comb(top.exponent(*p), e)
    return out


def c_coeff(gamma: MultiIndex, beta: MultiIndex, mu: MultiIndex) -> float:
    """C(gamma,beta,mu) = [binom(gamma+beta-2mu, gamma-mu) binom(gamma,mu)
    binom(beta,mu)]^(1/2), for mu <= gamma ^ beta entrywise.
    """
    if not mu.leq(gamma.min_with(beta)):
        raise InvalidMuError(f"mu={mu} exceeds gamma^beta")
    top = (gamma + beta).sub_clip(mu.scale(2))
    val = _binom_mi(top, gamma.sub_clip(mu)) * _binom_mi(gamma, mu) * _binom_mi(beta, mu)
    return math.sqrt(val)


def _sub_indices(alpha: MultiIndex):
    """All mu with mu <= alpha entrywise."""
    items = list(alpha.entries)

    def rec(j):
        if j == len(items):
            yield []
            return
        p, e = items[j]
        for tail in rec(j + 1):
            for v in range(e + 1):
                yield ([(p, v)] if v else []) + tail

    for lst in rec(0):
        yield MultiIndex(tuple(sorted(lst)))


def product_expand(gamma: MultiIndex, beta: MultiIndex) -> list:
    """Expansion of xi_gamma * xi_beta in the basis: list of
    (MultiIndex gamma+beta-2mu, coefficient C(gamma,beta,mu)) over mu <= gamma^beta.
    """
    out = []
    for mu in _sub_indices(gamma.min_with(beta)):
        out.append(((gamma + beta).sub_clip(mu.scale(2)), c_coeff(gamma, beta, mu)))
    return out


@lru_cache(maxsize=None)
def complete_triples(spec: TruncationSpec) -> tuple:
    """All complete triples (a, b, c) of enumerated indices, with Psi values.

    Built through the product expansion (xi_a xi_b = sum C xi_mu'), which
    visits exactly the complete triples; cached per truncation because the
    moment sums reuse it heavily.
    """
    idx = enumerate_indices(spec)
    pos = {a: j for j, a in enumerate(idx)}
    out = []
    for a in idx:
        for b in idx:
            for mu_p, coeff in product_expand(a, b):
                j = pos.get(mu_p)
                if j is not None:
                    out.append((a, b, idx[j], coeff))
    return tuple(out)
