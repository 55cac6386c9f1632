"""Exact-in-law stepping of the fast Ornstein-Uhlenbeck modes.

For species ``i`` every retained mode ``j`` obeys

    dZ_j = -r_j Z_j dt + sigma dW~_j,    r_j = eps^-2 d_i lambda_j,

with ``sigma = 1/eps`` in case 1 and ``sigma = 1`` in case 2. The drivers
``W~_j`` are correlated through the interior covariance ``q``. One step of
length ``h`` is ``Z <- exp(-r h) Z + G`` with ``G ~ N(0, C_h)``,

    C_h[j, k] = sigma^2 q[j, k] (1 - exp(-(r_j + r_k) h)) / (r_j + r_k).

The ``(0, 0)`` row has ``r = 0`` and carries the mean-mode Brownian
increment, which is nonzero only in case 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import Truncation
from .noise import InteriorCovariance, Regime

RELAXED = 36.0


class FactorizationError(RuntimeError):
    pass


def noise_scale(regime: Regime, eps: float) -> float:
    return 1.0 / eps if Regime.parse(regime) is Regime.CASE1 else 1.0


def _decay(rates: np.ndarray, h: float) -> np.ndarray:
    x = rates * h
    return np.where(x > RELAXED, 0.0, np.exp(-np.minimum(x, RELAXED)))


def _kernel(rates: np.ndarray, h: float) -> np.ndarray:
    # (1 - exp(-(r_j + r_k) h)) / (r_j + r_k), equal to h when r_j + r_k = 0
    s = rates[:, None] + rates[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -np.expm1(-s * h) / s
    return np.where(s == 0.0, h, out)


def psd_factor(C: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Symmetric PSD square-root factor ``L`` with ``L L^T = C`` after clipping."""
    C = 0.5 * (C + C.T)
    if not np.all(np.isfinite(C)):
        raise FactorizationError("covariance has non-finite entries")
    scale = np.abs(C).max() if C.size else 0.0
    if scale == 0.0:
        return np.zeros_like(C)
    w, V = np.linalg.eigh(C)
    if w.min() < -rtol * scale * C.shape[0]:
        raise FactorizationError(f"covariance not PSD (min eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    keep = w > 1e-15 * w.max()
    return V[:, keep] * np.sqrt(w[keep])


@dataclass
class OUStepper:
    """Precomputed one-step decay and increment factor for every species.

    ``decay[i]`` and the rows of ``factor[i]`` are over row-major modes
    including ``(0, 0)``.
    """

    K: int
    eps: float
    h: float
    sigma: float
    rates: list
    decay: list
    factor: list
    include_mean: bool

    @classmethod
    def build(cls, cov: InteriorCovariance, d, eps: float, h: float, regime: Regime) -> "OUStepper":
        if h <= 0:
            raise ValueError("step size must be positive")
        regime = Regime.parse(regime)
        sigma = noise_scale(regime, eps)
        lam = Truncation(cov.K).eigenvalues.ravel()
        rates, decay, factor = [], [], []
        for i in range(cov.n):
            r = lam * d[i] / eps**2
            q = cov.dense(i)
            if regime is Regime.CASE1:
                q[0, :] = 0.0
                q[:, 0] = 0.0
            C = sigma**2 * q * _kernel(r, h)
            rates.append(r)
            decay.append(_decay(r, h))
            factor.append(psd_factor(C))
        return cls(cov.K, eps, h, sigma, rates, decay, factor, regime is Regime.CASE2)

    @property
    def n(self) -> int:
        return len(self.factor)

    @property
    def draw_dims(self) -> list[int]:
        return [f.shape[1] for f in self.factor]

    @property
    def draw_size(self) -> int:
        return sum(self.draw_dims)

    def increments(self, xi: np.ndarray) -> np.ndarray:
        """Map standard normals ``(..., draw_size)`` to increments ``(..., n, K+1, K+1)``."""
        K1 = self.K + 1
        out = np.empty(xi.shape[:-1] + (self.n, K1 * K1))
        pos = 0
        for i, f in enumerate(self.factor):
            k = f.shape[1]
            out[..., i, :] = xi[..., pos : pos + k] @ f.T
            pos += k
        return out.reshape(xi.shape[:-1] + (self.n, K1, K1))

    def decay_array(self) -> np.ndarray:
        K1 = self.K + 1
        return np.stack(self.decay).reshape(self.n, K1, K1)

    def step(self, Z: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Advance ``Z`` of shape ``(..., n, K+1, K+1)`` by one step."""
        return self.decay_array() * Z + self.increments(xi)


def stationary_variance(q_jj: float, d: float, lam: float, regime: Regime = Regime.CASE1,
                        eps: float = 1.0) -> float:
    """Stationary variance of one mode: ``q/(2 d lambda)``, times ``eps^2`` in case 2."""
    if lam <= 0:
        raise ValueError("stationary variance is undefined for the kernel mode")
    v = q_jj / (2.0 * d * lam)
    return v if Regime.parse(regime) is Regime.CASE1 else eps**2 * v


def transient_variance(q_jj: float, d: float, lam: float, eps: float, T: float,
                       regime: Regime = Regime.CASE1) -> float:
    """Variance of ``Z_j(T)`` started from zero."""
    sigma = noise_scale(regime, eps)
    r = d * lam / eps**2
    return sigma**2 * q_jj * -math.expm1(-2 * r * T) / (2 * r)


def correction_process(psi0: np.ndarray, Z: np.ndarray, t, d, eps: float, K: int) -> np.ndarray:
    """``Q(t) = exp(-eps^-2 d lambda t) psi0 + Z(t)`` on fluctuation modes.

    ``psi0`` has shape ``(n, K+1, K+1)``; ``Z`` has shape ``(..., n, K+1, K+1)``
    with the leading axis aligned with ``t`` when ``t`` is an array.
    """
    lam = Truncation(K).eigenvalues
    t = np.asarray(t, dtype=float)
    d = np.asarray(d, dtype=float)
    rates = d[:, None, None] * lam / eps**2
    det = np.exp(-rates * t[..., None, None, None]) * psi0
    Q = det + Z
    Q[..., 0, 0] = 0.0
    return Q
