import math

import numpy as np
import pytest

from fastdiff.noise import (BoundaryNoiseSpec, ConfigurationError, EdgeNoise, Regime,
                            assemble_covariance, mean_noise_amplitude, sample_edge_increments,
                            trace_coupling, trace_matrix)
from fastdiff.rng import stream

SQ2 = math.sqrt(2.0)


def single_y0():
    edges = (EdgeNoise(law="list", values=(1.0,)), EdgeNoise(), EdgeNoise(), EdgeNoise())
    return BoundaryNoiseSpec((edges,))


def test_trace_coupling_examples():
    assert trace_coupling("y0", 3, (3, 2)) == pytest.approx(SQ2)
    assert trace_coupling("y0", 3, (4, 2)) == 0.0
    assert trace_coupling("x1", 2, (1, 2)) == pytest.approx(-SQ2)
    with pytest.raises(ValueError):
        trace_coupling("z0", 0, (0, 0))


def test_trace_matrix_matches_coupling():
    K = 4
    T = trace_matrix(K).toarray()
    for e, edge in enumerate(("y0", "y1", "x0", "x1")):
        for l in range(K + 1):
            for j1 in range(K + 1):
                for j2 in range(K + 1):
                    assert T[j1 * (K + 1) + j2, e * (K + 1) + l] == pytest.approx(
                        trace_coupling(edge, l, (j1, j2)))


def test_covariance_examples():
    cov = assemble_covariance(single_y0(), 6)
    assert cov.entry(0, (1, 2), (1, 2)) == pytest.approx(2.0)
    assert cov.entry(0, (1, 2), (1, 4)) == pytest.approx(2.0)
    assert cov.entry(0, (1, 2), (2, 2)) == 0.0
    zero = assemble_covariance(BoundaryNoiseSpec.zero(1), 5)
    assert zero.q[0].nnz == 0 or not zero.dense(0).any()


def test_covariance_symmetric_psd():
    spec = BoundaryNoiseSpec.uniform(2, EdgeNoise(c=0.7, mu=1.5))
    cov = assemble_covariance(spec, 8)
    for i in range(2):
        q = cov.dense(i)
        assert np.allclose(q, q.T)
        assert np.linalg.eigvalsh(q).min() > -1e-10 * np.abs(q).max()


def test_covariance_monte_carlo():
    # empirical covariance of the interior drivers at t = 1
    spec = BoundaryNoiseSpec.uniform(2, EdgeNoise(c=1.0, mu=1.5))
    K = 2
    cov = assemble_covariance(spec, K)
    N = 100_000
    g = stream(7, 9)
    inc, _ = sample_edge_increments(spec, 1.0, g, K_b=K, size=N)
    W = np.stack([inc[:, i].reshape(N, -1) @ cov.driver_factor(i).T.toarray() for i in range(2)], 1)
    for i in range(2):
        emp = W[:, i].T @ W[:, i] / N
        q = cov.dense(i)
        # standard error of a product moment: sqrt((q_jj q_kk + q_jk^2) / N)
        se = np.sqrt((np.outer(np.diag(q), np.diag(q)) + q**2) / N)
        z = np.abs(emp - q) / np.where(se > 0, se, 1.0)
        # 81 entries per species: allow the expected handful beyond 3 sigma, none beyond 4.5
        assert np.mean(z > 3) < 0.02 and z.max() < 4.5
    cross = W[:, 0].T @ W[:, 1] / N
    q0, q1 = np.diag(cov.dense(0)), np.diag(cov.dense(1))
    se = np.sqrt(np.outer(q0, q1) / N)
    assert np.mean(np.abs(cross) > 3 * se) < 0.02


def test_case1_requires_mass_conservation():
    with pytest.raises(ConfigurationError):
        BoundaryNoiseSpec.uniform(1, EdgeNoise(alpha0=1.0))
    BoundaryNoiseSpec.uniform(1, EdgeNoise(alpha0=1.0), regime=Regime.CASE2)


def test_decay_summability():
    with pytest.raises(ConfigurationError):
        BoundaryNoiseSpec.uniform(1, EdgeNoise(c=1.0, mu=0.7))
    BoundaryNoiseSpec.uniform(1, EdgeNoise(c=1.0, mu=1.0))
    # inactive edges are not checked
    BoundaryNoiseSpec.uniform(1, EdgeNoise(c=0.0, mu=0.1))


def test_bad_edge_records():
    with pytest.raises(ConfigurationError):
        EdgeNoise(c=-1.0)
    with pytest.raises(ConfigurationError):
        EdgeNoise(law="exp")
    with pytest.raises(ConfigurationError):
        BoundaryNoiseSpec(((EdgeNoise(),) * 3,))
    rec = {"alpha0": 0.0, "law": "list", "c": 0.0, "mu": 2.0, "values": [0.5, 0.25]}
    assert EdgeNoise.from_dict(rec).to_dict() == rec


def test_mean_noise_amplitude():
    spec = BoundaryNoiseSpec.uniform(1, EdgeNoise(alpha0=1.0), regime="case2")
    assert mean_noise_amplitude(spec, 0) == pytest.approx(2.0)
    assert mean_noise_amplitude(BoundaryNoiseSpec.zero(1), 0) == 0.0
    one = (EdgeNoise(alpha0=3.0), EdgeNoise(), EdgeNoise(), EdgeNoise())
    assert mean_noise_amplitude(BoundaryNoiseSpec((one,), regime="case2"), 0) == 3.0


def test_sample_edge_increments_moments():
    spec = BoundaryNoiseSpec.zero(1)
    inc, mean = sample_edge_increments(spec, 0.0, stream(1), K_b=2)
    assert not inc.any() and mean.shape == (1, 4)
    dt = 0.01
    N = 250_000
    inc, _ = sample_edge_increments(spec, dt, stream(2), K_b=0, size=N)
    x = inc.ravel()  # 10^6 draws
    assert abs(x.mean()) < 4 * math.sqrt(dt / x.size)
    se_var = dt * math.sqrt(2.0 / x.size)
    assert abs(x.var() - dt) < max(3 * se_var, 0.01 * dt)


def test_unreachable_noise():
    edge = EdgeNoise(law="list", values=(0.0, 0.0, 0.0, 1.0))
    spec = BoundaryNoiseSpec(((edge,) * 4,), K_b=6)
    with pytest.raises(ConfigurationError):
        assemble_covariance(spec, 2)
