import math
import os

import numpy as np
import pytest
from scipy import stats

from fastdiff import config as cfgmod
from fastdiff import harness
from fastdiff.noise import ConfigurationError, Regime


def plan_of(cfg):
    return harness.ExperimentPlan.from_config(cfg)


def test_regression_recovers_power_law():
    eps = [0.2, 0.1, 0.05, 0.025]
    reg = harness.regression(eps, [3.0 * e**1.5 for e in eps])
    assert reg["slope"] == pytest.approx(1.5, abs=1e-12)
    assert reg["intercept"] == pytest.approx(math.log(3.0), abs=1e-12)
    assert reg["r2"] == pytest.approx(1.0)
    assert harness.regression(eps, [0.0, 1.0, 1.0, 1.0])["slope"] is None
    assert harness.regression(eps[:2], [1.0, 0.5])["slope"] is None


def test_exceedance_wilson_interval():
    errs = np.r_[np.zeros(30), np.ones(10)]
    ex = harness.exceedance(errs, 0.5)
    assert ex["frequency"] == 0.25 and ex["underpowered"]
    # Wilson score interval written out
    n, p, z = 40, 0.25, stats.norm.ppf(0.975)
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z / (1 + z * z / n) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    assert ex["ci_low"] == pytest.approx(centre - half, rel=1e-6)
    assert ex["ci_high"] == pytest.approx(centre + half, rel=1e-6)
    assert not harness.exceedance(np.zeros(200), 1.0)["underpowered"]


def test_theorem_exponents():
    assert harness.theorem_exponent(Regime.CASE1, 3, 0.02) == pytest.approx(1 - 6 * 0.02 - 0.02)
    assert harness.theorem_exponent("case2", 3, 0.02) == pytest.approx(1 - 5 * 0.02)


def test_resolve_workers(monkeypatch):
    monkeypatch.delenv("FASTDIFF_WORKERS", raising=False)
    assert harness.resolve_workers(None) == 1
    assert harness.resolve_workers(None, {"experiment": {"workers": 3}}) == 3
    monkeypatch.setenv("FASTDIFF_WORKERS", "2")
    assert harness.resolve_workers(None, {"experiment": {"workers": 3}}) == 2
    assert harness.resolve_workers(5, {"experiment": {"workers": 3}}) == 5
    monkeypatch.setenv("FASTDIFF_WORKERS", "many")
    with pytest.raises(ConfigurationError):
        harness.resolve_workers(None)


def test_atomic_write(tmp_path):
    target = tmp_path / "sub" / "f.txt"
    harness.atomic_write(str(target), "one\n")
    harness.atomic_write(str(target), "two\n")
    assert target.read_text() == "two\n"

    with pytest.raises(TypeError):
        harness.atomic_write(str(target), 12345)
    assert target.read_text() == "two\n"
    assert os.listdir(tmp_path / "sub") == ["f.txt"]


def test_fmt_round_trips():
    x = 0.1 + 0.2
    assert float(harness.fmt(x)) == x
    assert harness.fmt(None) == "" and harness.fmt(True) == "true" and harness.fmt(np.int64(3)) == "3"


def test_degenerate_sweep_round_off(small):
    # no noise and a constant fixed point of the reaction: solver and limit agree exactly
    cfg = small(c=0.0, b0=1.0, psi=0.0)
    cfg["experiment"]["noise_off"] = True
    result = harness.run_sweep(plan_of(cfg))
    for rec in result.records:
        assert np.max(rec.sup_err) < 1e-12
        assert not rec.stopped.any()
    assert result.regression["slope"] is None or result.regression["r2"] is not None


def test_sweep_deterministic_across_workers(small):
    cfg = small(paths=6)
    plan = plan_of(cfg)
    a = harness.results_csv(harness.run_sweep(plan, 1))
    b = harness.results_csv(harness.run_sweep(plan, 2))
    c = harness.results_csv(harness.run_sweep(plan, 3))
    assert a == b == c


def test_probability_limits(small):
    cfg = small(paths=4)
    cfg["experiment"]["self_convergence"] = False
    result = harness.run_sweep(plan_of(cfg))
    none = harness.probability_estimate(result, threshold_exponent=-math.inf)
    # eps^-inf is +inf: nothing exceeds it
    assert all(r["frequency"] == 0.0 for r in none["rows"]) and none["non_increasing"]
    allp = harness.probability_estimate(result, threshold_exponent=math.inf)
    assert all(r["frequency"] == 1.0 for r in allp["rows"]) and allp["non_increasing"]
    default = harness.probability_estimate(result)
    assert default["exponent"] == pytest.approx(1 - 7 * 0.02)


def test_probability_trend_rule():
    class R:
        def __init__(self, eps, errs):
            self.eps, self.sup_err = eps, np.asarray(errs, dtype=float)

    class Res:
        plan = None

    def trend(freqs, M=50):
        res = Res()
        res.records = [R(0.1, np.r_[np.ones(int(f * M)), np.zeros(M - int(f * M))]) for f in freqs]
        return harness.probability_estimate(res, threshold_exponent=0.0)

    # threshold eps^0 = 1: an error of exactly 1 does not exceed it
    assert trend([0.5, 0.4, 0.2])["rows"][0]["frequency"] == 0.0

    def trend2(freqs, M=50):
        res = Res()
        res.records = [R(0.1, np.r_[np.full(int(f * M), 2.0), np.zeros(M - int(f * M))]) for f in freqs]
        return harness.probability_estimate(res, threshold_exponent=0.0)

    assert trend2([0.5, 0.4, 0.2])["non_increasing"]
    assert trend2([0.3, 0.34, 0.2])["non_increasing"]
    assert not trend2([0.3, 0.34, 0.36])["non_increasing"]
    assert not trend2([0.0, 0.9, 0.8])["non_increasing"]


def test_self_convergence_reported(small):
    result = harness.run_sweep(plan_of(small(paths=4)))
    sc = result.self_convergence
    assert sc["eps"] == 0.05 and sc["tolerance"] == harness.SELF_CONVERGENCE_TOL
    assert sc["passed"] == (sc["ratio"] <= 0.2)
    assert result.status in ("ok", "h-biased")


def test_averaging_zero_noise_and_target():
    rep = harness.averaging_check([0.2, 0.1, 0.05], [[0.0]], paths=10, seed=1)
    for row in rep["rows"]:
        assert row["mean_abs_avg_Z"] == [0.0] and row["avg_Z2"] == [0.0]
    with pytest.raises(ConfigurationError):
        harness.averaging_check([0.2], [[1.0]], modes=[(0, 0)])
    with pytest.raises(ConfigurationError):
        harness.averaging_check([0.2], [[1.0, 0.0]])
    # two jointly driven modes: cross target q_12 / (d (lam_1 + lam_2))
    q = [[2.0, 1.0], [1.0, 2.0]]
    rep = harness.averaging_check([0.05], q, modes=[(1, 0), (0, 1)], paths=2000, seed=2)
    row = rep["rows"][0]
    assert row["cross_target"][0][1] == pytest.approx(1.0 / (2 * math.pi**2))
    assert abs(row["cross_avg"][0][1] - row["cross_target"][0][1]) < 0.01


def test_plan_properties(small):
    plan = plan_of(small())
    assert plan.epsilons == [0.2, 0.1, 0.05] and plan.regime is Regime.CASE1
    assert plan.hash == cfgmod.config_hash(plan.cfg)
    cfg = small("heat-case2")
    cfg["numerics"]["kappa"] = 0.21
    with pytest.raises(cfgmod.ValidationError):
        plan_of(cfg)
    cfg["numerics"]["kappa"] = 0.1
    cfg["numerics"]["T0"] = 0.0505
    with pytest.raises(cfgmod.ValidationError):
        plan_of(cfg)
