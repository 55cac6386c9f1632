"""Boundary Wiener noise on the four edges of the unit square.

Each species carries four independent edge processes
``W_e(t) = sum_l alpha_{e,l} beta_{e,l}(t) f_l`` with edges ordered
``("y0", "y1", "x0", "x1")``. The edges ``y = 0`` and ``y = 1`` are
parameterised by ``x`` and therefore couple to the ``k1`` index of interior
modes; the edges ``x = 0`` and ``x = 1`` couple to ``k2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .basis import Truncation, edge_basis_eval

EDGES = ("y0", "y1", "x0", "x1")


class Regime(str, Enum):
    CASE1 = "case1"
    CASE2 = "case2"

    @classmethod
    def parse(cls, value) -> "Regime":
        if isinstance(value, cls):
            return value
        v = str(value).lower().replace("-", "").replace("_", "")
        for member in cls:
            if member.value == v:
                return member
        raise ValueError(f"unknown regime {value!r}")


class ConfigurationError(ValueError):
    """Invalid noise, system or numerics configuration."""


@dataclass(frozen=True)
class EdgeNoise:
    """Amplitudes of one edge process.

    ``law="power"`` gives ``alpha_l = c * l**-mu`` for ``l >= 1``;
    ``law="list"`` takes ``alpha_1, alpha_2, ...`` from ``values`` (zero beyond).
    ``alpha0`` is the amplitude of the constant edge mode.
    """

    alpha0: float = 0.0
    law: str = "power"
    c: float = 0.0
    mu: float = 2.0
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.law not in ("power", "list"):
            raise ConfigurationError(f"unknown decay law {self.law!r}")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.alpha0 < 0 or self.c < 0 or any(v < 0 for v in self.values):
            raise ConfigurationError("noise amplitudes must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "EdgeNoise":
        return cls(
            alpha0=float(d.get("alpha0", 0.0)),
            law=d.get("law", "power"),
            c=float(d.get("c", 0.0)),
            mu=float(d.get("mu", 2.0)),
            values=tuple(d.get("values", ())),
        )

    def to_dict(self) -> dict:
        return {"alpha0": self.alpha0, "law": self.law, "c": self.c, "mu": self.mu,
                "values": list(self.values)}

    def amplitudes(self, K_b: int) -> np.ndarray:
        a = np.zeros(K_b + 1)
        a[0] = self.alpha0
        if self.law == "power":
            if self.c:
                l = np.arange(1, K_b + 1, dtype=float)
                a[1:] = self.c * l ** (-self.mu)
        else:
            n = min(len(self.values), K_b)
            a[1 : n + 1] = self.values[:n]
        return a

    def amplitude_sq(self, l: int) -> float:
        """``alpha_l^2`` for any ``l``, without truncation."""
        if l == 0:
            return self.alpha0**2
        if self.law == "power":
            return (self.c * l ** (-self.mu)) ** 2
        return self.values[l - 1] ** 2 if l <= len(self.values) else 0.0

    @property
    def active(self) -> bool:
        return self.c > 0 if self.law == "power" else any(v > 0 for v in self.values)


@dataclass(frozen=True)
class BoundaryNoiseSpec:
    edges: tuple[tuple[EdgeNoise, ...], ...]
    regime: Regime = Regime.CASE1
    m: int = 3
    K_b: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime.parse(self.regime))
        edges = tuple(tuple(e) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        for i, per in enumerate(edges):
            if len(per) != 4:
                raise ConfigurationError(f"species {i}: expected 4 edge records, got {len(per)}")
        self.validate()

    @property
    def n(self) -> int:
        return len(self.edges)

    def validate(self):
        for i, per in enumerate(self.edges):
            for e, edge in zip(EDGES, per):
                if self.regime is Regime.CASE1 and edge.alpha0 != 0.0:
                    raise ConfigurationError(
                        f"species {i} edge {e}: case1 noise must be mass-conserving (alpha0 = 0)"
                    )
                if edge.law == "power" and edge.c > 0:
                    if 2 * edge.mu - 0.5 - 1.0 / (2 * self.m) <= 1.0:
                        raise ConfigurationError(
                            f"species {i} edge {e}: decay mu={edge.mu} too slow for "
                            f"summability (need 2mu - 1/2 - 1/(2m) > 1)"
                        )

    @classmethod
    def uniform(cls, n: int, edge: EdgeNoise, regime=Regime.CASE1, m: int = 3):
        return cls(edges=tuple((edge,) * 4 for _ in range(n)), regime=regime, m=m)

    @classmethod
    def zero(cls, n: int, regime=Regime.CASE1, m: int = 3):
        return cls.uniform(n, EdgeNoise(), regime=regime, m=m)

    def alphas(self, K_b: int | None = None) -> np.ndarray:
        """Amplitude array of shape ``(n, 4, K_b + 1)``."""
        K_b = self.K_b if K_b is None else K_b
        if K_b is None:
            raise ValueError("boundary cutoff K_b not set")
        return np.array([[edge.amplitudes(K_b) for edge in per] for per in self.edges])


def trace_coupling(edge: str, l: int, j) -> float:
    """Coefficient of edge mode ``(edge, l)`` in the driver of interior mode ``j``."""
    j1, j2 = j
    if edge == "y0":
        return edge_basis_eval(j2, 0.0) if l == j1 else 0.0
    if edge == "y1":
        return edge_basis_eval(j2, 1.0) if l == j1 else 0.0
    if edge == "x0":
        return edge_basis_eval(j1, 0.0) if l == j2 else 0.0
    if edge == "x1":
        return edge_basis_eval(j1, 1.0) if l == j2 else 0.0
    raise ValueError(f"unknown edge {edge!r}")


def _edge_values(K: int) -> tuple[np.ndarray, np.ndarray]:
    l = np.arange(K + 1)
    at0 = np.where(l == 0, 1.0, math.sqrt(2.0))
    at1 = at0 * (-1.0) ** l
    return at0, at1


def trace_matrix(K: int, K_b: int | None = None) -> sp.csr_matrix:
    """Sparse ``((K+1)^2, 4 (K_b+1))`` map from edge drivers to interior modes.

    Rows are row-major mode indices ``j1 * (K+1) + j2``; columns are
    ``edge * (K_b+1) + l``.
    """
    K_b = K if K_b is None else K_b
    at0, at1 = _edge_values(K)
    L = min(K, K_b)
    rows, cols, vals = [], [], []
    nb = K_b + 1
    for l in range(L + 1):
        for m in range(K + 1):
            # y edges: interior (l, m)
            rows += [l * (K + 1) + m] * 2
            cols += [0 * nb + l, 1 * nb + l]
            vals += [at0[m], at1[m]]
            # x edges: interior (m, l)
            rows += [m * (K + 1) + l] * 2
            cols += [2 * nb + l, 3 * nb + l]
            vals += [at0[m], at1[m]]
    return sp.csr_matrix((vals, (rows, cols)), shape=((K + 1) ** 2, 4 * nb))


@dataclass
class InteriorCovariance:
    """Per-species interior covariance ``q^i = T diag(alpha_i^2) T^T``.

    Matrices are indexed by row-major mode index and include the ``(0, 0)``
    mode. Cross-species covariance is zero and not stored.
    """

    K: int
    K_b: int
    trace: sp.csr_matrix
    alpha_sq: np.ndarray  # (n, 4 * (K_b + 1))
    q: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.alpha_sq.shape[0]

    def dense(self, i: int) -> np.ndarray:
        return self.q[i].toarray()

    def entry(self, i: int, j, k) -> float:
        K1 = self.K + 1
        return float(self.q[i][j[0] * K1 + j[1], k[0] * K1 + k[1]])

    def driver_factor(self, i: int) -> sp.csr_matrix:
        """``T diag(alpha_i)``: interior drivers as a linear map of unit edge Brownians."""
        return self.trace @ sp.diags(np.sqrt(self.alpha_sq[i]))


def assemble_covariance(spec: BoundaryNoiseSpec, trunc: Truncation | int) -> InteriorCovariance:
    K = trunc.K if isinstance(trunc, Truncation) else int(trunc)
    K_b = K if spec.K_b is None else spec.K_b
    alphas = spec.alphas(K_b)
    # edge modes above K never reach an interior mode
    has_noise = alphas.any()
    reachable = alphas[:, :, : min(K, K_b) + 1].any()
    if has_noise and not reachable:
        raise ConfigurationError(f"truncation K={K} holds no active edge mode")
    T = trace_matrix(K, K_b)
    a2 = (alphas**2).reshape(spec.n, -1)
    q = [(T @ sp.diags(a2[i]) @ T.T).tocsr() for i in range(spec.n)]
    return InteriorCovariance(K=K, K_b=K_b, trace=T, alpha_sq=a2, q=q)


def mean_noise_amplitude(spec: BoundaryNoiseSpec, i: int) -> float:
    """Standard deviation per unit sqrt(time) of the mean-mode driver of species ``i``."""
    if spec.regime is Regime.CASE1:
        return 0.0
    return math.sqrt(sum(e.alpha0**2 for e in spec.edges[i]))


def sample_edge_increments(spec: BoundaryNoiseSpec, dt: float, rng: np.random.Generator,
                           K_b: int | None = None, size=None):
    """Unit-variance-per-time edge increments ``N(0, dt)``.

    Returns ``(increments, mean_draws)`` where ``increments`` has shape
    ``size + (n, 4, K_b + 1)`` (unscaled by alpha) and ``mean_draws`` is the
    ``l = 0`` slice ``size + (n, 4)`` that drives the case-2 mean mode.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    K_b = (spec.K_b if spec.K_b is not None else 0) if K_b is None else K_b
    shape = (() if size is None else tuple(np.atleast_1d(size))) + (spec.n, 4, K_b + 1)
    inc = rng.standard_normal(shape) * math.sqrt(dt)
    return inc, inc[..., 0]
