"""Sparse multivariate polynomials keyed by multi-indices."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


def multi_factorial(ell: Sequence[int]) -> int:
    return math.prod(math.factorial(k) for k in ell)


def multi_indices(n: int, total: int) -> Iterable[tuple[int, ...]]:
    """All ``ell`` in ``N_0^n`` with ``|ell| == total``."""
    if n == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in multi_indices(n - 1, total - first):
            yield (first,) + rest


@dataclass(frozen=True)
class ReactionPolynomial:
    """``F(u) = sum_ell c_ell u^ell`` over ``n`` species."""

    n: int
    coeffs: Mapping[tuple[int, ...], float] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for powers, c in dict(self.coeffs).items():
            powers = tuple(int(p) for p in powers)
            if len(powers) != self.n or any(p < 0 for p in powers):
                raise ValueError(f"bad multi-index {powers} for n={self.n}")
            if c != 0.0:
                clean[powers] = clean.get(powers, 0.0) + float(c)
        object.__setattr__(self, "coeffs", {k: v for k, v in sorted(clean.items()) if v != 0.0})

    @classmethod
    def from_terms(cls, n: int, terms: Iterable[dict]) -> "ReactionPolynomial":
        acc: dict[tuple[int, ...], float] = {}
        for t in terms:
            key = tuple(t["powers"])
            acc[key] = acc.get(key, 0.0) + float(t["coeff"])
        return cls(n, acc)

    def to_terms(self) -> list[dict]:
        return [{"powers": list(k), "coeff": v} for k, v in self.coeffs.items()]

    @property
    def degree(self) -> int:
        return max((sum(k) for k in self.coeffs), default=0)

    def coefficient(self, powers: Sequence[int]) -> float:
        return self.coeffs.get(tuple(powers), 0.0)

    def derivative(self, ell: Sequence[int]) -> "ReactionPolynomial":
        """Exact ``D^ell F``."""
        ell = tuple(ell)
        if len(ell) != self.n:
            raise ValueError("multi-index length mismatch")
        out: dict[tuple[int, ...], float] = {}
        for powers, c in self.coeffs.items():
            if any(p < l for p, l in zip(powers, ell)):
                continue
            factor = math.prod(math.perm(p, l) for p, l in zip(powers, ell))
            key = tuple(p - l for p, l in zip(powers, ell))
            out[key] = out.get(key, 0.0) + c * factor
        return ReactionPolynomial(self.n, out)

    def __add__(self, other: "ReactionPolynomial") -> "ReactionPolynomial":
        acc = dict(self.coeffs)
        for k, v in other.coeffs.items():
            acc[k] = acc.get(k, 0.0) + v
        return ReactionPolynomial(self.n, acc)

    def scale(self, s: float) -> "ReactionPolynomial":
        return ReactionPolynomial(self.n, {k: s * v for k, v in self.coeffs.items()})

    def __call__(self, *u):
        """Evaluate on ``n`` broadcastable arrays (one per species)."""
        if len(u) == 1 and self.n > 1:
            u = tuple(np.asarray(u[0])[..., i] for i in range(self.n))
        if len(u) != self.n:
            raise ValueError(f"expected {self.n} species values")
        shape = np.broadcast(*u).shape if self.n > 1 else np.shape(u[0])
        cache: dict[tuple[int, int], np.ndarray] = {}

        def power(i: int, p: int):
            # repeated products; np.power with integer exponents is much slower
            if p == 1:
                return u[i]
            if (i, p) not in cache:
                half = power(i, p // 2)
                sq = half * half
                cache[(i, p)] = sq * u[i] if p % 2 else sq
            return cache[(i, p)]

        total = np.zeros(shape)
        for powers, c in self.coeffs.items():
            term = c
            for i, p in enumerate(powers):
                if p:
                    term = term * power(i, p)
            total = total + term
        return total if total.ndim else float(total)

    def lipschitz_bound(self, radius: float) -> float:
        """Bound on ``sum_i |dF/du_i|`` over the box ``|u_i| <= radius``."""
        bound = 0.0
        for powers, c in self.coeffs.items():
            deg = sum(powers)
            if deg:
                bound += abs(c) * deg * radius ** (deg - 1)
        return bound


def even_multi_indices(n: int, max_total: int) -> list[tuple[int, ...]]:
    """Multi-indices with every component even and ``2 <= |ell| <= max_total``."""
    out = []
    for total in range(2, max_total + 1, 2):
        for ell in multi_indices(n, total):
            if all(k % 2 == 0 for k in ell):
                out.append(ell)
    return out


def all_multi_indices(n: int, max_total: int) -> list[tuple[int, ...]]:
    return [ell for t in range(max_total + 1) for ell in multi_indices(n, t)]
