"""Effective limit equations of the fast-diffusion system.

Case 1 (mass-conserving large noise) averages the fast OU modes into a
deterministic drift correction

    G_i = sum_{|ell| = 2, 4, ...} C_ell / ell! * D^ell F_i,

with the noise constants ``C_ell`` from pairings of the interior covariance.
Case 2 keeps ``F`` and adds the boundary-mean Brownian motion.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basis import Truncation, mean_of_product
from .noise import (BoundaryNoiseSpec, ConfigurationError, EdgeNoise, InteriorCovariance,
                    Regime, mean_noise_amplitude)
from .polynomial import ReactionPolynomial, even_multi_indices, multi_factorial
from .solver import BlowUpError

PI2 = math.pi**2


class TruncationError(RuntimeError):
    def __init__(self, msg: str, suggested_K: int):
        super().__init__(f"{msg}; try K >= {suggested_K}")
        self.suggested_K = suggested_K


@dataclass(frozen=True)
class CEll:
    """A noise constant with its provenance."""

    ell: tuple[int, ...]
    value: float
    tail_bound: float
    K: int
    band_sum: float
    interior_tail: float = 0.0
    reason: str = ""

    def to_dict(self) -> dict:
        return {"ell": list(self.ell), "C": self.value, "K": self.K, "tail_bound": self.tail_bound,
                "band_sum": self.band_sum, "interior_tail": self.interior_tail,
                "reason": self.reason}


def _row_sum_tail(l: int, K: int) -> float:
    # sum_{m > K} 1 / (l^2 + m^2)
    if l == 0:
        full = PI2 / 6.0
    else:
        x = math.pi * l
        full = (x / math.tanh(x) - 1.0) / (2.0 * l * l)
    m = np.arange(1, K + 1, dtype=float)
    return max(full - float(np.sum(1.0 / (l * l + m * m))), 0.0)


def _full_row_sum(l: int) -> float:
    # sum over m in Z, (l, m) != (0, 0), of 1 / (l^2 + m^2)
    if l == 0:
        return PI2 / 3.0
    x = math.pi * l
    return math.pi / (l * math.tanh(x))


def _edge_tail(edge: EdgeNoise, L: int, d: float) -> float:
    """Bound on contributions of edge modes ``l > L`` to a species' ``|ell| = 2`` sum."""
    if edge.law == "list":
        return sum(edge.amplitude_sq(l) * _full_row_sum(l)
                   for l in range(L + 1, len(edge.values) + 1)) / (2 * d * PI2)
    if edge.c == 0.0:
        return 0.0
    # S(l) <= pi coth(pi) / l and sum_{l > L} l^{-2mu-1} <= L^{-2mu} / (2mu)
    s = edge.c**2 * (1.0 / math.tanh(math.pi)) / (2 * d * math.pi)
    return s * max(L, 1) ** (-2 * edge.mu) / (2 * edge.mu)


def _species_pair_sum(cov: InteriorCovariance, i: int, d: float) -> float:
    q = cov.q[i].diagonal()
    lam = Truncation(cov.K).eigenvalues.ravel()
    return float(np.sum(q[1:] / (2.0 * d * lam[1:])))


def _pair_entries(cov: InteriorCovariance, i: int, d_i: float):
    # nonzero q entries on fluctuation modes, weighted by 1 / (d (lambda_j + lambda_k))
    K1 = cov.K + 1
    lam = Truncation(cov.K).eigenvalues.ravel()
    coo = cov.q[i].tocoo()
    out = []
    for r, c, v in zip(coo.row, coo.col, coo.data):
        if r == 0 or c == 0 or v == 0.0:
            continue
        out.append(((divmod(int(r), K1), divmod(int(c), K1)), v / (d_i * (lam[r] + lam[c]))))
    return out


def pairing_factor(N: int, normalization: str = "paper") -> float:
    """Multiplier turning a single fixed pairing into the full pairing sum.

    ``"paper"`` reproduces ``2^{-N/2} sum_{Per(N)}`` (``N! / 2^{N/2}``);
    ``"wick"`` counts each perfect matching once (``(N - 1)!!``).
    """
    if normalization == "paper":
        return math.factorial(N) / 2 ** (N // 2)
    if normalization == "wick":
        return float(math.prod(range(N - 1, 0, -2)))
    raise ValueError(f"unknown normalization {normalization!r}")


def generic_species_sum(cov: InteriorCovariance, i: int, d_i: float, N: int,
                        normalization: str = "paper") -> float:
    """Band pairing sum for one species by enumeration over nonzero ``q`` entries.

    Cost grows like ``nnz(q)^(N/2)``; meant for small bands and ``N >= 4``.
    """
    entries = _pair_entries(cov, i, d_i)
    total = 0.0
    for combo in itertools.product(entries, repeat=N // 2):
        modes = [m for (pair, _) in combo for m in pair]
        pc = mean_of_product(modes)
        if pc == 0.0:
            continue
        w = 1.0
        for _, v in combo:
            w *= v
        total += w * pc
    return pairing_factor(N, normalization) * total


def c_ell(ell: Sequence[int], cov: InteriorCovariance, d: Sequence[float],
          noise: BoundaryNoiseSpec | None = None, tail_tol: float | None = None,
          extrapolate: bool = True, normalization: str = "paper") -> CEll:
    """Noise constant ``C_ell`` for a multi-index over species.

    For ``ell_i = 2`` the band sum ``sum_j q_jj / (2 d lambda_j)`` is used
    (the pairing sum collapses to the diagonal by orthonormality) and, when
    ``extrapolate`` is set, the interior modes outside the band that are
    driven by retained edge modes are added in closed form. Modes of the
    edge processes above ``K`` enter only the reported ``tail_bound``.
    """
    ell = tuple(int(x) for x in ell)
    if len(ell) != cov.n:
        raise ValueError("multi-index length must equal species count")
    if any(x % 2 for x in ell):
        return CEll(ell, 0.0, 0.0, cov.K, 0.0, 0.0, "odd component")
    value, bound, band_total, itail_total = 1.0, 0.0, 1.0, 0.0
    L = min(cov.K, cov.K_b)
    for i, li in enumerate(ell):
        if li == 0:
            continue
        if li == 2:
            band = _species_pair_sum(cov, i, d[i])
            missing = interior_tail(cov, i, d[i])
            itail = missing if extrapolate else 0.0
            s = band + itail
            b = 0.0 if extrapolate else missing
            if noise is not None:
                b += sum(_edge_tail(edge, L, d[i]) for edge in noise.edges[i])
        else:
            band = generic_species_sum(cov, i, d[i], li, normalization)
            itail = 0.0
            s = band
            b = float("nan")
        # (|A| + a)(|B| + b) - |A||B|
        bound = (abs(value) + bound) * (abs(s) + b) - abs(value) * abs(s)
        value *= s
        band_total *= band
        itail_total += itail
    if tail_tol is not None and bound > tail_tol:
        raise TruncationError(f"tail bound {bound:.3e} exceeds tolerance {tail_tol:.3e}",
                              suggest_K(noise, cov.K, tail_tol, d) if noise else 2 * cov.K)
    return CEll(ell, float(value), float(bound), cov.K, float(band_total), float(itail_total))


def interior_tail(cov: InteriorCovariance, i: int, d: float) -> float:
    """Contribution of out-of-band interior modes driven by retained edge modes."""
    L = min(cov.K, cov.K_b)
    a2 = cov.alpha_sq[i].reshape(4, cov.K_b + 1)
    return sum(a2[e, l] * 2.0 * _row_sum_tail(l, cov.K) / (2 * d * PI2)
               for e in range(4) for l in range(L + 1) if a2[e, l])


def suggest_K(noise: BoundaryNoiseSpec, K: int, tol: float, d) -> int:
    K_new = max(K, 1)
    for _ in range(20):
        K_new *= 2
        b = sum(_edge_tail(e, K_new, d[i]) for i, per in enumerate(noise.edges) for e in per)
        if b <= tol:
            break
    return K_new


def closed_form_c2_heat(edges: Sequence[EdgeNoise], weights=(1, 2, 1, 2), L: int = 4096) -> float:
    """Double-series display for the single-species heat example.

    Evaluates ``(1/(2 pi^2)) sum_{k1, k2 >= 1} (w1 a1_k1^2 + w2 a2_k1^2 + w3 a3_k2^2
    + w4 a4_k2^2) / (k1^2 + k2^2)`` with the inner sum in closed form and an
    integral tail for power-law amplitudes beyond ``L``.
    """
    if len(edges) != 4:
        raise ValueError("need four edge records")
    total = 0.0
    for w, edge in zip(weights, edges):
        if edge.law == "power" and edge.c > 0 and edge.mu <= 0:
            raise ConfigurationError("amplitude decay diverges (mu <= 0)")
        top = L if edge.law == "power" else len(edge.values)
        for l in range(1, top + 1):
            a2 = edge.amplitude_sq(l)
            if a2:
                x = math.pi * l
                total += w * a2 * (x / math.tanh(x) - 1.0) / (2.0 * l * l)
        if edge.law == "power" and edge.c > 0:
            # H(l) ~ pi/(2l) - 1/(2l^2): integrate from L + 1/2
            a = L + 0.5
            p = 2 * edge.mu
            total += w * edge.c**2 * (math.pi / 2 * a ** (-p) / p - 0.5 * a ** (-p - 1) / (p + 1))
    return total / (2 * PI2)


@dataclass
class LimitSystem:
    drift: tuple[ReactionPolynomial, ...]
    amplitude: tuple[float, ...]
    regime: Regime
    constants: dict = field(default_factory=dict)
    correction: tuple[ReactionPolynomial, ...] = ()

    @property
    def n(self) -> int:
        return len(self.drift)

    def evaluate(self, b: np.ndarray) -> np.ndarray:
        """Drift at states ``b[..., n]``."""
        b = np.asarray(b, dtype=float)
        cols = [b[..., i] for i in range(self.n)]
        return np.stack([np.broadcast_to(f(*cols), b.shape[:-1]) for f in self.drift], axis=-1)


def build_limit_system(F: Sequence[ReactionPolynomial], d: Sequence[float], noise: BoundaryNoiseSpec,
                       cov: InteriorCovariance | None = None, extrapolate: bool = True,
                       normalization: str = "paper") -> LimitSystem:
    F = tuple(F)
    n = len(F)
    if noise.regime is Regime.CASE2:
        amps = tuple(mean_noise_amplitude(noise, i) for i in range(n))
        zero = tuple(ReactionPolynomial(n) for _ in range(n))
        return LimitSystem(F, amps, Regime.CASE2, {}, zero)
    if cov is None:
        raise ValueError("case 1 needs the interior covariance")
    m = max(f.degree for f in F)
    constants = {}
    G = [ReactionPolynomial(n) for _ in range(n)]
    for ell in even_multi_indices(n, m):
        derivs = [f.derivative(ell) for f in F]
        if all(not dv.coeffs for dv in derivs):
            continue
        C = c_ell(ell, cov, d, noise, extrapolate=extrapolate, normalization=normalization)
        constants[ell] = C
        if C.value == 0.0:
            continue
        for i in range(n):
            G[i] = G[i] + derivs[i].scale(C.value / multi_factorial(ell))
    drift = tuple(f + g for f, g in zip(F, G))
    return LimitSystem(drift, (0.0,) * n, Regime.CASE1, constants, tuple(G))


@dataclass
class LimitPath:
    times: np.ndarray
    b: np.ndarray  # (paths, saves, n)
    T1: np.ndarray  # (paths,), inf when positivity never failed


def integrate_limit(system: LimitSystem, b0, T: float, h: float, save_every: int = 1,
                    dB: np.ndarray | None = None, rng: np.random.Generator | None = None,
                    paths: int | None = None, positivity: bool = False) -> LimitPath:
    """Integrate the limit equation with RK4 (case 1) or Euler-Maruyama (case 2).

    ``dB`` holds the mean-driver increments ``(paths, steps, n)`` recorded by
    the SPDE run, already scaled by the edge amplitudes. Without ``dB`` fresh
    increments ``amplitude * N(0, h)`` are drawn from ``rng``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    n_steps = int(round(T / h))
    if n_steps % save_every:
        raise ValueError("save interval must divide the number of steps")
    b0 = np.asarray(b0, dtype=float)
    if dB is not None:
        M = dB.shape[0]
    else:
        M = paths if paths is not None else (1 if b0.ndim == 1 else b0.shape[0])
    b = np.broadcast_to(b0.reshape(-1, system.n) if b0.ndim > 1 else b0, (M, system.n)).copy()
    n_save = n_steps // save_every + 1
    out = np.empty((M, n_save, system.n))
    out[:, 0] = b
    T1 = np.full(M, np.inf)
    alive = np.ones(M, dtype=bool)
    if positivity:
        neg = np.any(b < 0, axis=1)
        T1[neg] = 0.0
        alive &= ~neg
    amp = np.asarray(system.amplitude)
    stochastic = system.regime is Regime.CASE2
    if stochastic and dB is None and rng is None and np.any(amp):
        raise ValueError("case 2 integration needs dB or rng")
    f = system.evaluate
    for k in range(n_steps):
        if stochastic:
            if dB is not None:
                inc = dB[:, k, :]
            elif np.any(amp):
                inc = amp * rng.standard_normal((M, system.n)) * math.sqrt(h)
            else:
                inc = 0.0
            new = b + h * f(b) + inc
        else:
            k1 = f(b)
            k2 = f(b + 0.5 * h * k1)
            k3 = f(b + 0.5 * h * k2)
            k4 = f(b + h * k3)
            new = b + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(new[alive])):
            raise BlowUpError((k + 1) * h, "non-finite limit drift")
        b[alive] = new[alive]
        if positivity:
            neg = alive & np.any(b < 0, axis=1)
            T1[neg] = (k + 1) * h
            alive &= ~neg
        if (k + 1) % save_every == 0:
            out[:, (k + 1) // save_every] = b
    times = np.arange(n_save) * save_every * h
    return LimitPath(times, out, T1)


def c2_series_oracle(edges: Sequence[EdgeNoise], d: float = 1.0,
                     levels: Sequence[int] = (200, 160, 128, 100)) -> float:
    """Brute-force ``|ell| = 2`` constant for one species.

    Builds the diagonal ``q_jj`` of the square's covariance display term by
    term on each band in ``levels``, sums ``q_jj / (2 d lambda_j)`` and
    Richardson-extrapolates in ``1/K``. Independent of the trace-matrix
    assembly and of the closed-form tail used by :func:`c_ell`.
    """
    sums = []
    for K in levels:
        k = np.arange(K + 1)
        f0 = np.where(k == 0, 1.0, math.sqrt(2.0))
        f1 = f0 * np.cos(math.pi * k)
        a = [np.array([e.amplitude_sq(int(l)) for l in k]) for e in edges]
        j1, j2 = k[:, None], k[None, :]
        q = (a[0][:, None] * f0[None, :] ** 2 + a[1][:, None] * f1[None, :] ** 2
             + a[2][None, :] * f0[:, None] ** 2 + a[3][None, :] * f1[:, None] ** 2)
        lam = PI2 * (j1**2 + j2**2).astype(float)
        lam[0, 0] = np.inf
        sums.append(float(np.sum(q / (2 * d * lam))))
    A = np.array([[1.0] + [K ** -p for p in range(1, len(levels))] for K in levels])
    return float(np.linalg.solve(A, np.array(sums))[0])
