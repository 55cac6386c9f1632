"""Neumann Laplacian eigenbasis on the unit square.

Modes are indexed by ``(k1, k2)`` with ``g_k(x, y) = f_{k1}(x) f_{k2}(y)``,
``f_0 = 1`` and ``f_l(z) = sqrt(2) cos(pi l z)`` for ``l > 0``. Coefficient
arrays have shape ``(..., K + 1, K + 1)`` with axis ``-2`` the x-index ``k1``
and axis ``-1`` the y-index ``k2``. Physical grids are uniform midpoint grids
``x_i = (i + 1/2) / n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterable, NamedTuple

import numpy as np

SQRT2 = math.sqrt(2.0)


class ModeIndex(NamedTuple):
    k1: int
    k2: int

    @property
    def eigenvalue(self) -> float:
        return eigenvalue(self)


def eigenvalue(k) -> float:
    """Eigenvalue ``pi^2 (k1^2 + k2^2)`` of ``-Laplacian`` for mode ``k``."""
    k1, k2 = k
    if k1 < 0 or k2 < 0:
        raise ValueError(f"mode indices must be nonnegative, got {k!r}")
    return math.pi**2 * (k1 * k1 + k2 * k2)


def edge_basis_eval(l: int, z):
    """One-dimensional Neumann cosine ``f_l`` at ``z`` in ``[0, 1]``."""
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr < 0.0) or np.any(z_arr > 1.0):
        raise ValueError("z must lie in [0, 1]")
    if l < 0:
        raise ValueError("l must be nonnegative")
    if l == 0:
        out = np.ones_like(z_arr)
    else:
        out = SQRT2 * np.cos(math.pi * l * z_arr)
    return float(out) if out.ndim == 0 else out


def basis_eval(k, x, y):
    return edge_basis_eval(k[0], x) * edge_basis_eval(k[1], y)


def mode_order(K: int) -> list[ModeIndex]:
    """All retained modes sorted by eigenvalue, ties broken lexicographically."""
    modes = [ModeIndex(a, b) for a in range(K + 1) for b in range(K + 1)]
    return sorted(modes, key=lambda m: (m.k1**2 + m.k2**2, m.k1, m.k2))


def _axis_integral(ls: tuple[int, ...]) -> float:
    # int_0^1 prod f_l dz = 2^{-p/2} * #{s in {+-1}^p : sum s_i l_i = 0}
    pos = [l for l in ls if l > 0]
    if not pos:
        return 1.0
    total = sum(pos)
    counts = {0: 1}
    for l in pos:
        nxt: dict[int, int] = {}
        for s, c in counts.items():
            nxt[s + l] = nxt.get(s + l, 0) + c
            nxt[s - l] = nxt.get(s - l, 0) + c
        counts = nxt
    if total % 2:
        return 0.0
    return counts.get(0, 0) * 2.0 ** (-len(pos) / 2)


@lru_cache(maxsize=1 << 20)
def _mean_of_product_sorted(modes: tuple[tuple[int, int], ...]) -> float:
    xs = tuple(m[0] for m in modes)
    ys = tuple(m[1] for m in modes)
    ix = _axis_integral(xs)
    if ix == 0.0:
        return 0.0
    return ix * _axis_integral(ys)


def mean_of_product(modes: Iterable) -> float:
    """Exact spatial mean ``int prod_i g_{k_i}`` over the unit square."""
    key = tuple(sorted((int(a), int(b)) for a, b in modes))
    if not key:
        raise ValueError("need at least one mode")
    return _mean_of_product_sorted(key)


@dataclass(frozen=True)
class Truncation:
    """Square band ``0 <= k1, k2 <= K`` evaluated on an ``grid_n``-point grid."""

    K: int
    grid_n: int | None = None

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("K must be nonnegative")
        if self.grid_n is None:
            object.__setattr__(self, "grid_n", 2 * self.K + 1)
        if self.grid_n < 2 * self.K + 1:
            raise ValueError(f"grid_n={self.grid_n} must be >= 2K+1={2 * self.K + 1}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.K + 1, self.K + 1)

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        k = np.arange(self.K + 1)
        return math.pi**2 * (k[:, None] ** 2 + k[None, :] ** 2)

    @cached_property
    def fluctuation_modes(self) -> list[ModeIndex]:
        """Retained modes other than ``(0, 0)``, in row-major order."""
        return [ModeIndex(a, b) for a in range(self.K + 1) for b in range(self.K + 1)][1:]

    def grid(self, n: int | None = None) -> np.ndarray:
        n = self.grid_n if n is None else n
        return (np.arange(n) + 0.5) / n

    def transform(self, n: int | None = None) -> "GridTransform":
        return GridTransform(self.K, self.grid_n if n is None else n)


class GridTransform:
    """Matrix cosine transform between band coefficients and midpoint-grid values.

    The forward direction is the midpoint quadrature of ``<u, g_k>``, which is
    exact for fields whose cosine degree per axis is below ``2n - K``.
    """

    def __init__(self, K: int, n: int):
        if n < K + 1:
            raise ValueError(f"grid size {n} cannot resolve K={K}")
        self.K = K
        self.n = n
        z = (np.arange(n) + 0.5) / n
        l = np.arange(K + 1)
        B = np.cos(math.pi * z[:, None] * l[None, :]) * SQRT2
        B[:, 0] = 1.0
        self.B = B
        self.Bt_w = B.T / n

    def inverse(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[-2:] != (self.K + 1, self.K + 1):
            raise ValueError(f"coefficient shape {coeffs.shape} does not match K={self.K}")
        return self.B @ coeffs @ self.B.T

    def forward(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape[-2:] != (self.n, self.n):
            raise ValueError(f"grid shape {values.shape} does not match n={self.n}")
        return self.Bt_w @ values @ self.Bt_w.T

    def lp_norm(self, values: np.ndarray, p: float) -> np.ndarray:
        """Discrete ``L^p`` norm over the last two axes of grid values."""
        if p < 1:
            raise ValueError("p must be >= 1")
        if p == 2:
            return np.sqrt(np.mean(values * values, axis=(-2, -1)))
        if float(p).is_integer() and int(p) % 2 == 0:
            return np.mean(values ** int(p), axis=(-2, -1)) ** (1.0 / p)
        return np.mean(np.abs(values) ** p, axis=(-2, -1)) ** (1.0 / p)


def project_mean(coeffs: np.ndarray):
    return np.asarray(coeffs)[..., 0, 0]


def project_fluctuation(coeffs: np.ndarray) -> np.ndarray:
    out = np.array(coeffs, dtype=float, copy=True)
    out[..., 0, 0] = 0.0
    return out


def mode_coefficients(K: int, entries: dict) -> np.ndarray:
    """Build a coefficient array from ``{(k1, k2): value}``."""
    c = np.zeros((K + 1, K + 1))
    for (a, b), v in entries.items():
        c[a, b] = v
    return c
