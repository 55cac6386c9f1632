"""Spectral exponential-Euler integration of the fast-diffusion SPDE.

Coefficients advance as

    c <- E c + phi1 * F^(u) + G,

where ``E = exp(-eps^-2 d lambda h)``, ``phi1 = (1 - E) / (eps^-2 d lambda)``
(``h`` on the kernel mode), ``F^`` is the reaction projected on the band by
a dealiased midpoint-grid quadrature, and ``G`` is the exact OU increment
of the boundary-driven stochastic convolution. Paths are simulated in
batches; each path owns its random stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basis import GridTransform, Truncation
from .noise import BoundaryNoiseSpec, ConfigurationError, Regime, assemble_covariance
from .ou import OUStepper
from .polynomial import ReactionPolynomial

DRAW_CHUNK = 256


class BlowUpError(FloatingPointError):
    def __init__(self, t: float, msg: str = "non-finite state"):
        super().__init__(f"{msg} at t={t:.6g}")
        self.t = t


@dataclass(frozen=True)
class SystemSpec:
    d: tuple[float, ...]
    F: tuple[ReactionPolynomial, ...]
    eps: float
    regime: Regime = Regime.CASE1
    kappa: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "d", tuple(float(x) for x in self.d))
        object.__setattr__(self, "F", tuple(self.F))
        object.__setattr__(self, "regime", Regime.parse(self.regime))
        if len(self.d) != len(self.F):
            raise ConfigurationError("need one diffusion constant per reaction polynomial")
        if any(x <= 0 for x in self.d):
            raise ConfigurationError("diffusion constants must be positive")
        if not 0 < self.eps < 1:
            raise ConfigurationError("eps must lie in (0, 1)")
        if any(f.n != self.n for f in self.F):
            raise ConfigurationError("reaction polynomials must all have n species")

    @property
    def n(self) -> int:
        return len(self.d)

    @property
    def m(self) -> int:
        return max(f.degree for f in self.F)

    def with_eps(self, eps: float) -> "SystemSpec":
        return SystemSpec(self.d, self.F, eps, self.regime, self.kappa)

    def step_bound(self) -> float:
        """Largest stable step for the reaction inside the cutoff ball."""
        radius = 2.0 * self.eps ** (-self.kappa)
        lip = max(f.lipschitz_bound(radius) for f in self.F)
        return 0.5 / (1.0 + lip)


def dealias_grid(K: int, m: int, grid_n: int) -> int:
    # midpoint quadrature of u^m g_k is exact once (m + 1) K < 2 n
    return max(grid_n, (max(m, 1) + 1) * K // 2 + 1)


def phi1(rates: np.ndarray, h: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -np.expm1(-rates * h) / rates
    return np.where(rates == 0.0, h, out)


@dataclass
class BatchResult:
    """Output of a batch of paths.

    Arrays are indexed ``[path, save, species, k1, k2]`` for fields and
    ``[path, step, species]`` for mean-driver increments.
    """

    times: np.ndarray
    coeffs: np.ndarray
    Z: np.ndarray
    stopped: np.ndarray
    tau: np.ndarray
    dB: np.ndarray | None
    h: float
    psi0: np.ndarray
    norms: np.ndarray = field(default=None)


class SpectralSolver:
    def __init__(self, system: SystemSpec, noise: BoundaryNoiseSpec, trunc: Truncation,
                 h: float, substeps: int = 1, cutoff: bool = True, guard: bool = True,
                 noise_on: bool = True):
        if h <= 0:
            raise ValueError("h must be positive")
        if noise.n != system.n:
            raise ConfigurationError("noise spec and system disagree on species count")
        if noise.regime is not system.regime:
            raise ConfigurationError("noise regime differs from system regime")
        if guard and h > system.step_bound():
            raise ConfigurationError(
                f"h={h:g} exceeds reaction stability bound {system.step_bound():.3g}")
        self.system = system
        self.noise = noise
        self.trunc = trunc
        self.h = h
        self.substeps = int(substeps)
        self.cutoff = cutoff
        self.noise_on = noise_on
        K = trunc.K
        self.K1 = K + 1
        self.transform = GridTransform(K, dealias_grid(K, system.m, trunc.grid_n))
        lam = trunc.eigenvalues
        d = np.asarray(system.d)[:, None, None]
        self.rates = d * lam / system.eps**2
        self.E = np.exp(-self.rates * h)
        self.phi = phi1(self.rates, h)
        self.threshold = system.eps ** (-system.kappa)
        self.p_cut = 2 * max(system.m, 1)
        self.cov = assemble_covariance(noise, trunc)
        self.ou = OUStepper.build(self.cov, system.d, system.eps, h / self.substeps, system.regime)
        self.E_fine = self.ou.decay_array()

    @property
    def draw_shape(self) -> tuple[int, int]:
        return (self.substeps, self.ou.draw_size)

    def reaction(self, U: np.ndarray) -> np.ndarray:
        """Band projection of ``F(u)`` for grid values ``U[..., species, x, y]``."""
        fields = [U[..., i, :, :] for i in range(self.system.n)]
        vals = np.stack([np.broadcast_to(f(*fields), U.shape[:-3] + U.shape[-2:])
                         for f in self.system.F], axis=-3)
        return self.transform.forward(vals)

    def cutoff_norm(self, U: np.ndarray) -> np.ndarray:
        p = self.p_cut
        U2 = U * U
        Up = U2
        for _ in range(p // 2 - 1):
            Up = Up * U2
        return np.sum(np.mean(Up, axis=(-2, -1)), axis=-1) ** (1.0 / p)

    def increment(self, xi: np.ndarray) -> np.ndarray:
        """Combine ``substeps`` fine OU increments into one step increment."""
        G = self.ou.increments(xi[..., 0, :])
        for s in range(1, self.substeps):
            G = self.E_fine * G + self.ou.increments(xi[..., s, :])
        return G

    def simulate(self, u0: np.ndarray, T: float, save_every: int, rngs: Sequence[np.random.Generator]
                 ) -> BatchResult:
        """Simulate ``len(rngs)`` paths from coefficient array ``u0`` of shape ``(n, K+1, K+1)``.

        Saves every ``save_every`` steps, including ``t = 0`` and ``t = T``.
        """
        # overflow surfaces as BlowUpError below
        with np.errstate(over="ignore", invalid="ignore"):
            return self._simulate(u0, T, save_every, rngs)

    def _simulate(self, u0, T, save_every, rngs) -> BatchResult:
        n_steps = int(round(T / self.h))
        if abs(n_steps * self.h - T) > 1e-9 * max(T, 1.0):
            raise ConfigurationError("T must be a multiple of h")
        if n_steps % save_every:
            raise ConfigurationError("save interval must divide the number of steps")
        M = len(rngs)
        n = self.system.n
        u0 = np.asarray(u0, dtype=float).reshape(n, self.K1, self.K1)
        C = np.broadcast_to(u0, (M,) + u0.shape).copy()
        psi0 = u0.copy()
        psi0[:, 0, 0] = 0.0
        Z = np.zeros_like(C)
        n_save = n_steps // save_every + 1
        coeffs = np.empty((M, n_save) + u0.shape)
        Zs = np.empty_like(coeffs)
        norms = np.empty((M, n_save))
        coeffs[:, 0] = C
        Zs[:, 0] = Z
        stopped = np.zeros(M, dtype=bool)
        tau = np.full(M, np.inf)
        case2 = self.system.regime is Regime.CASE2
        dB = np.zeros((M, n_steps, n)) if case2 else None
        sigma = self.ou.sigma
        U = self.transform.inverse(C)
        norms[:, 0] = self.cutoff_norm(U)
        if self.cutoff:
            hit = norms[:, 0] > self.threshold
            stopped |= hit
            tau[hit] = 0.0
        xi = None
        for k in range(n_steps):
            if k % DRAW_CHUNK == 0:
                chunk = min(DRAW_CHUNK, n_steps - k)
                xi = np.stack([g.standard_normal((chunk,) + self.draw_shape) for g in rngs], axis=1)
            x = xi[k % DRAW_CHUNK]
            G = self.increment(x) if self.noise_on else np.zeros_like(C)
            if not case2:
                G[..., 0, 0] = 0.0
            Fh = self.reaction(U)
            C_new = self.E * C + self.phi * Fh + G
            Z_new = self.E * Z + G
            Z_new[..., 0, 0] = 0.0
            if case2:
                dB[:, k, :] = G[..., 0, 0] / sigma
            live = ~stopped
            C[live] = C_new[live]
            Z[live] = Z_new[live]
            t = (k + 1) * self.h
            if not np.all(np.isfinite(C)):
                raise BlowUpError(t)
            U = self.transform.inverse(C)
            nrm = self.cutoff_norm(U)
            if self.cutoff:
                hit = live & (nrm > self.threshold)
                stopped |= hit
                tau[hit] = t
            if (k + 1) % save_every == 0:
                s = (k + 1) // save_every
                coeffs[:, s] = C
                Zs[:, s] = Z
                norms[:, s] = nrm
        times = np.arange(n_save) * save_every * self.h
        return BatchResult(times, coeffs, Zs, stopped, tau, dB, self.h, psi0, norms)


def simulate_path(system: SystemSpec, noise: BoundaryNoiseSpec, u0: np.ndarray, T: float,
                  h: float, save_every: int, rng: np.random.Generator, trunc: Truncation,
                  **kw) -> BatchResult:
    """Single-path convenience wrapper around :class:`SpectralSolver`."""
    solver = SpectralSolver(system, noise, trunc, h, **kw)
    return solver.simulate(u0, T, save_every, [rng])


def lp_norm(coeffs: np.ndarray, p: float, transform: GridTransform | None = None) -> np.ndarray:
    """``L^p`` norm of one or more band fields over the unit square.

    For multi-species arrays ``(..., n, K+1, K+1)`` pass them species by
    species, or combine with :func:`vector_lp_norm`.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    K = coeffs.shape[-1] - 1
    if transform is None:
        n = max(2 * K + 1, int(math.ceil(p * K / 2)) + 1)
        if not (float(p).is_integer() and int(p) % 2 == 0):
            n = max(n, 8 * K + 64)
        transform = GridTransform(K, n)
    return transform.lp_norm(transform.inverse(coeffs), p)


def vector_lp_norm(coeffs: np.ndarray, p: float, transform: GridTransform | None = None) -> np.ndarray:
    """``(sum_i ||u_i||_p^p)^(1/p)`` for arrays ``(..., n, K+1, K+1)``."""
    per = lp_norm(coeffs, p, transform)
    return np.sum(per**p, axis=-1) ** (1.0 / p)
