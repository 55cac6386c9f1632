"""Monte-Carlo sweeps over eps, averaging statistics and result persistence.

Work is split into fixed blocks of paths per eps. Blocks never depend on
the number of workers, every path draws from its own keyed stream, and
results are reduced in (eps, path) order, so outputs are identical for any
worker count.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy
from scipy import stats

from . import config as cfgmod
from . import rng as rngmod
from .basis import GridTransform
from .limit import build_limit_system, integrate_limit
from .noise import ConfigurationError, Regime
from .ou import _kernel, psd_factor
from .solver import SpectralSolver, dealias_grid

SELF_CONVERGENCE_TOL = 0.2
MIN_PROBABILITY_PATHS = 100


class SweepAborted(RuntimeError):
    """Every path of some eps stopped at the cutoff time."""


@dataclass
class ExperimentPlan:
    """A validated configuration plus the derived run parameters."""

    cfg: dict

    @classmethod
    def from_config(cls, cfg: dict) -> "ExperimentPlan":
        cfg = cfgmod.validate(cfg)
        plan = cls(cfg)
        plan.check()
        return plan

    def check(self):
        eps = self.epsilons
        if len(eps) < 3:
            raise cfgmod.ValidationError("/experiment/epsilons", "need at least 3 values for regression")
        m = max(f.degree for f in cfgmod.reactions(self.cfg))
        k = self.kappa
        upper = 1.0 / (2 * m + 1) if self.regime is Regime.CASE1 else 1.0 / (m + 2)
        if not 0 < k < upper:
            raise cfgmod.ValidationError("/numerics/kappa", f"kappa must lie in (0, {upper:.4g})")
        n_steps = self.T0 / self.h
        if abs(n_steps - round(n_steps)) > 1e-9 * n_steps:
            raise cfgmod.ValidationError("/numerics/h", "T0 must be a multiple of h")
        if round(n_steps) % self.save_every:
            raise cfgmod.ValidationError("/numerics/save_every", "must divide T0/h")

    @property
    def epsilons(self) -> list[float]:
        return list(self.cfg["experiment"]["epsilons"])

    @property
    def paths(self) -> int:
        return self.cfg["experiment"]["paths"]

    @property
    def seed(self) -> int:
        return self.cfg["experiment"]["seed"]

    @property
    def regime(self) -> Regime:
        return Regime.parse(self.cfg["system"]["regime"])

    @property
    def kappa(self) -> float:
        return self.cfg["numerics"]["kappa"]

    @property
    def h(self) -> float:
        return self.cfg["numerics"]["h"]

    @property
    def T0(self) -> float:
        return self.cfg["numerics"]["T0"]

    @property
    def p(self) -> float:
        return self.cfg["numerics"]["p"]

    @property
    def save_every(self) -> int:
        return self.cfg["numerics"]["save_every"]

    @property
    def batch(self) -> int:
        return self.cfg["numerics"]["batch"]

    @property
    def hash(self) -> str:
        return cfgmod.config_hash(self.cfg)


@dataclass
class EpsRecord:
    eps: float
    h: float
    sup_err: np.ndarray
    tau: np.ndarray
    stopped: np.ndarray
    T1: np.ndarray
    seeds: list
    sup_mean_err: np.ndarray | None = None

    @property
    def tau_stop_fraction(self) -> float:
        return float(np.mean(self.stopped))

    @property
    def T1_stop_fraction(self) -> float:
        return float(np.mean(np.isfinite(self.T1)))

    def summary(self) -> dict:
        e = self.sup_err
        out = {"median": float(np.median(e)), "mean": float(np.mean(e)),
               "q90": float(np.quantile(e, 0.9))}
        if self.sup_mean_err is not None:
            out["median_mean_mode"] = float(np.median(self.sup_mean_err))
        return out


@dataclass
class SweepResult:
    plan: ExperimentPlan
    records: list
    regression: dict
    self_convergence: dict | None
    status: str
    extra: dict = field(default_factory=dict)

    @property
    def h_biased(self) -> bool:
        return self.status == "h-biased"


# per-path work -------------------------------------------------------------

@lru_cache(maxsize=8)
def _setup(cfg_json: str, eps_index: int, kind: str):
    cfg = json.loads(cfg_json)
    eps = cfg["experiment"]["epsilons"][eps_index]
    system = cfgmod.system_spec(cfg, eps)
    noise = cfgmod.noise_spec(cfg)
    trunc = cfgmod.truncation(cfg)
    h = cfg["numerics"]["h"] / (2 if kind == "half" else 1)
    # the coarse check run combines two fine increments so both runs share draws
    substeps = 2 if kind == "coarse" else 1
    solver = SpectralSolver(system, noise, trunc, h, substeps=substeps,
                            noise_on=not cfg["experiment"]["noise_off"])
    cov = solver.cov
    limit = build_limit_system(system.F, system.d, noise, cov, extrapolate=False)
    p = cfg["numerics"]["p"]
    transform = None
    if p != 2:
        K = trunc.K
        transform = GridTransform(K, max(dealias_grid(K, int(math.ceil(p)), trunc.grid_n), 4 * K + 8))
    return cfg, solver, limit, transform


def _field_norm(err: np.ndarray, p: float, transform) -> np.ndarray:
    """``L^p`` norm over species and space of coefficient arrays ``(..., n, K+1, K+1)``."""
    if transform is None:
        # orthonormal basis: Parseval
        return np.sqrt(np.sum(err**2, axis=(-3, -2, -1)))
    vals = transform.inverse(err)
    per = np.mean(np.abs(vals) ** p, axis=(-2, -1))
    return np.sum(per, axis=-1) ** (1.0 / p)


def path_errors(res, limit_path, regime: Regime, eps: float, d, p: float, transform=None):
    """Error trajectories ``(paths, saves)``: ``u - b - Q`` in case 1, ``u - b`` in case 2."""
    err = res.coeffs.copy()
    K = err.shape[-1] - 1
    if regime is Regime.CASE1:
        lam = np.add.outer(np.arange(K + 1) ** 2, np.arange(K + 1) ** 2) * math.pi**2
        rates = np.asarray(d)[:, None, None] * lam / eps**2
        det = np.exp(-rates * res.times[:, None, None, None]) * res.psi0
        err -= det + res.Z
    err[..., 0, 0] -= limit_path.b
    return _field_norm(err, p, transform)


def _run_block(cfg_json: str, eps_index: int, start: int, count: int, kind: str = "main"):
    cfg, solver, limit, transform = _setup(cfg_json, eps_index, kind)
    seed = cfg["experiment"]["seed"]
    paths = range(start, start + count)
    rngs = [rngmod.path_stream(seed, eps_index, j) for j in paths]
    T = cfg["numerics"]["T0"]
    save = cfg["numerics"]["save_every"] * (2 if kind == "half" else 1)
    u0 = cfgmod.initial_coefficients(cfg)
    res = solver.simulate(u0, T, save, rngs)
    positivity = cfg["system"]["positivity"]
    if solver.system.regime is Regime.CASE2:
        lp = integrate_limit(limit, u0[:, 0, 0], T, solver.h, save, dB=res.dB, positivity=positivity)
    else:
        lp = integrate_limit(limit, u0[:, 0, 0], T, solver.h, save, paths=count, positivity=positivity)
    err = path_errors(res, lp, solver.system.regime, solver.system.eps, solver.system.d,
                      cfg["numerics"]["p"], transform)
    window = res.times[None, :] <= np.minimum(lp.T1, res.tau)[:, None]
    sup = np.max(np.where(window, err, 0.0), axis=1)
    mean_err = np.sqrt(np.sum((res.coeffs[..., 0, 0] - lp.b) ** 2, axis=-1))
    sup_mean = np.max(np.where(window, mean_err, 0.0), axis=1)
    return {"sup": sup, "sup_mean": sup_mean, "tau": res.tau, "stopped": res.stopped,
            "T1": lp.T1, "err": err, "window": window}


def _blocks(M: int, batch: int):
    return [(s, min(batch, M - s)) for s in range(0, M, batch)]


def _execute(items, workers: int):
    if workers <= 1:
        return [_run_block(*it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_block, *it) for it in items]
        return [f.result() for f in futures]


def resolve_workers(workers: int | None, cfg: dict | None = None) -> int:
    """Flag, then ``FASTDIFF_WORKERS``, then the config, then 1."""
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("FASTDIFF_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"FASTDIFF_WORKERS={env!r} is not an integer") from None
    if cfg is not None and "workers" in cfg.get("experiment", {}):
        return cfg["experiment"]["workers"]
    return 1


def regression(eps, values) -> dict:
    """Least-squares fit of ``log(value)`` against ``log(eps)``."""
    x = np.log(np.asarray(eps, dtype=float))
    y = np.asarray(values, dtype=float)
    if len(x) < 3 or np.any(y <= 0) or not np.all(np.isfinite(y)):
        return {"slope": None, "intercept": None, "r2": None}
    fit = stats.linregress(x, np.log(y))
    return {"slope": float(fit.slope), "intercept": float(fit.intercept), "r2": float(fit.rvalue**2)}


def run_sweep(plan: ExperimentPlan, workers: int = 1) -> SweepResult:
    cfg = plan.cfg
    cfg_json = json.dumps(cfg, sort_keys=True)
    M = plan.paths
    blocks = _blocks(M, plan.batch)
    items = [(cfg_json, ie, s, c, "main") for ie in range(len(plan.epsilons)) for s, c in blocks]
    check = cfg["experiment"]["self_convergence"]
    last = len(plan.epsilons) - 1
    if check:
        items += [(cfg_json, last, s, c, kind) for kind in ("coarse", "half") for s, c in blocks]
    out = _execute(items, workers)
    nb = len(blocks)
    records = []
    for ie, eps in enumerate(plan.epsilons):
        parts = out[ie * nb:(ie + 1) * nb]
        rec = EpsRecord(eps, plan.h,
                        np.concatenate([r["sup"] for r in parts]),
                        np.concatenate([r["tau"] for r in parts]),
                        np.concatenate([r["stopped"] for r in parts]),
                        np.concatenate([r["T1"] for r in parts]),
                        [[plan.seed, rngmod.SPDE, ie, j] for j in range(M)],
                        np.concatenate([r["sup_mean"] for r in parts]))
        if rec.stopped.all():
            raise SweepAborted(
                f"all {M} paths stopped at the cutoff time for eps={eps:g} "
                f"(threshold eps^-kappa={eps ** -plan.kappa:.4g}); reduce the noise or "
                f"initial fluctuation, or raise kappa")
        records.append(rec)
    medians = [r.summary()["median"] for r in records]
    reg = regression(plan.epsilons, medians)
    sc = None
    status = "ok"
    if check:
        base = len(plan.epsilons) * nb
        coarse = out[base:base + nb]
        half = out[base + nb:base + 2 * nb]
        e_c = np.concatenate([r["sup"] for r in coarse])
        e_f = np.concatenate([r["sup"] for r in half])
        med_c, med_f = float(np.median(e_c)), float(np.median(e_f))
        ratio = abs(med_c - med_f) / med_c if med_c > 0 else 0.0
        # pathwise difference of the error trajectories on the shared save times
        diff = []
        for rc, rf in zip(coarse, half):
            w = rc["window"] & rf["window"]
            diff.append(np.max(np.where(w, np.abs(rc["err"] - rf["err"]), 0.0), axis=1))
        pathwise = float(np.median(np.concatenate(diff)))
        sc = {"eps": plan.epsilons[-1], "h": plan.h, "median_err_h": med_c,
              "median_err_h2": med_f, "ratio": ratio, "tolerance": SELF_CONVERGENCE_TOL,
              "pathwise_median": pathwise,
              "pathwise_ratio": pathwise / med_c if med_c > 0 else 0.0,
              "passed": bool(ratio <= SELF_CONVERGENCE_TOL)}
        if not sc["passed"]:
            status = "h-biased"
    return SweepResult(plan, records, reg, sc, status)


# probability of exceeding the theorem threshold -------------------------------

def theorem_exponent(regime: Regime, m: int, kappa: float) -> float:
    if Regime.parse(regime) is Regime.CASE1:
        return 1.0 - 2 * m * kappa - kappa
    return 1.0 - (m + 2) * kappa


def exceedance(errors: np.ndarray, threshold: float) -> dict:
    """Frequency of ``error > threshold`` with a 95% Wilson interval."""
    errors = np.asarray(errors)
    M = errors.size
    k = int(np.sum(errors > threshold))
    ci = stats.binomtest(k, M).proportion_ci(0.95, method="wilson")
    return {"threshold": float(threshold), "count": k, "paths": M, "frequency": k / M,
            "ci_low": float(ci.low), "ci_high": float(ci.high),
            "underpowered": M < MIN_PROBABILITY_PATHS}


def probability_estimate(result: SweepResult, kappa: float | None = None,
                         threshold_exponent: float | None = None) -> dict:
    """Exceedance frequency of ``eps^exponent`` per eps, and the trend across eps.

    The trend passes when frequencies do not increase as eps decreases, with
    at most one increase whose Wilson intervals overlap.
    """
    plan = result.plan
    if threshold_exponent is None:
        kappa = plan.cfg["experiment"]["threshold_kappa"] if kappa is None else kappa
        m = max(f.degree for f in cfgmod.reactions(plan.cfg))
        threshold_exponent = theorem_exponent(plan.regime, m, kappa)
    rows = [exceedance(r.sup_err, r.eps**threshold_exponent) for r in result.records]
    violations = 0
    ok = True
    for a, b in zip(rows, rows[1:]):
        if b["frequency"] > a["frequency"]:
            violations += 1
            if b["ci_low"] > a["ci_high"]:
                ok = False
    ok = ok and violations <= 1
    return {"exponent": threshold_exponent, "kappa": kappa, "rows": rows,
            "violations": violations, "non_increasing": ok}


# averaging statistics ------------------------------------------------------

def _averaging_one(eps: float, q: np.ndarray, lam: np.ndarray, d: float, T: float,
                   paths: int, steps_per_relax: int, seed: int, eps_index: int):
    r = d * lam / eps**2
    h_target = 0.2 / (steps_per_relax / 5.0) / r.max() if r.max() > 0 else T
    n_steps = max(1, int(math.ceil(T / h_target)))
    h = T / n_steps
    sigma = 1.0 / eps
    C = sigma**2 * q * _kernel(r, h)
    L = psd_factor(C) if np.any(q) else np.zeros((len(lam), 0))
    decay = np.exp(-r * h)
    g = rngmod.stream(seed, rngmod.OU_ONLY, eps_index)
    J = len(lam)
    Z = np.zeros((paths, J))
    I1 = np.zeros((paths, J))
    I2 = np.zeros((paths, J, J))
    prev = Z.copy()
    chunk = 256
    for k in range(n_steps):
        if k % chunk == 0 and L.shape[1]:
            xi = g.standard_normal((min(chunk, n_steps - k), paths, L.shape[1]))
        Z = decay * Z + (xi[k % chunk] @ L.T if L.shape[1] else 0.0)
        # trapezoid rule
        I1 += 0.5 * h * (prev + Z)
        I2 += 0.5 * h * (prev[:, :, None] * prev[:, None, :] + Z[:, :, None] * Z[:, None, :])
        prev = Z
    A1 = I1 / T
    A2 = I2 / T
    with np.errstate(divide="ignore", invalid="ignore"):
        target = np.where(np.add.outer(lam, lam) > 0, q / (d * np.add.outer(lam, lam)), 0.0)
    dev = A2 - target
    diag = np.arange(J)
    return {
        "eps": eps, "h": h, "steps": n_steps, "paths": paths,
        "mean_abs_avg_Z": np.mean(np.abs(A1), axis=0).tolist(),
        "mean_abs_avg_Z2_dev": np.mean(np.abs(dev[:, diag, diag]), axis=0).tolist(),
        "bias_avg_Z2": np.mean(dev[:, diag, diag], axis=0).tolist(),
        "avg_Z2": np.mean(A2[:, diag, diag], axis=0).tolist(),
        "target_Z2": target[diag, diag].tolist(),
        "cross_avg": np.mean(A2, axis=0).tolist(),
        "cross_target": target.tolist(),
        "stderr_avg_Z2": (np.std(A2[:, diag, diag], axis=0, ddof=1) / math.sqrt(paths)).tolist()
        if paths > 1 else [0.0] * J,
    }


def averaging_check(epsilons, q, d: float = 1.0, modes=((1, 0),), T: float = 1.0,
                    paths: int = 10_000, seed: int = 0, steps_per_relaxation: int = 5,
                    workers: int = 1) -> dict:
    """Time averages of case-1 fast OU modes against their stationary values.

    Estimates ``E|(1/T) int Z dt|`` and ``E|(1/T) int Z^2 dt - q/(2 d lambda)|``
    for every mode in ``modes`` (jointly driven with covariance ``q``) and
    fits log-log slopes in eps. The exact OU transition is sampled with
    ``rate * h`` close to ``1 / steps_per_relaxation``.
    """
    lam = np.array([math.pi**2 * (k1 * k1 + k2 * k2) for k1, k2 in modes], dtype=float)
    if np.any(lam == 0):
        raise ConfigurationError("averaging needs fluctuation modes (k != (0, 0))")
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if q.shape != (len(lam), len(lam)):
        raise ConfigurationError(f"q must be {len(lam)}x{len(lam)}")
    eps = list(epsilons)
    args = [(e, q, lam, d, T, paths, steps_per_relaxation, seed, i) for i, e in enumerate(eps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_averaging_one, *zip(*args)))
    else:
        rows = [_averaging_one(*a) for a in args]
    slopes = {}
    for key in ("mean_abs_avg_Z", "mean_abs_avg_Z2_dev"):
        slopes[key] = [regression(eps, [r[key][j] for r in rows])["slope"] for j in range(len(lam))]
    return {"modes": [list(m) for m in modes], "q": q.tolist(), "d": d, "T": T,
            "rows": rows, "slopes": slopes}


# persistence ---------------------------------------------------------------

def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def atomic_write(path: str, data: str | bytes):
    """Write through a temporary file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


RESULTS_HEADER = ["epsilon", "h", "paths", "median_err", "mean_err", "q90_err",
                  "tau_stop_frac", "T1_stop_frac", "threshold", "exceed_freq",
                  "exceed_ci_low", "exceed_ci_high", "slope", "intercept", "r2", "status"]
PATHS_HEADER = ["eps_index", "epsilon", "path", "seed", "namespace", "sup_err",
                "sup_mean_mode_err", "stopped", "tau", "T1"]


def results_csv(result: SweepResult, prob: dict | None = None) -> str:
    prob = prob or probability_estimate(result)
    reg = result.regression
    rows = []
    for rec, pr in zip(result.records, prob["rows"]):
        s = rec.summary()
        rows.append([rec.eps, rec.h, rec.sup_err.size, s["median"], s["mean"], s["q90"],
                     rec.tau_stop_fraction, rec.T1_stop_fraction, pr["threshold"],
                     pr["frequency"], pr["ci_low"], pr["ci_high"], reg["slope"],
                     reg["intercept"], reg["r2"]])
    text = _csv(RESULTS_HEADER, [r + [None] for r in rows])
    # status is a word, not a number
    lines = text.splitlines()
    lines = [lines[0]] + [ln + result.status for ln in lines[1:]]
    return "\n".join(lines) + "\n"


def paths_csv(result: SweepResult) -> str:
    rows = []
    for ie, rec in enumerate(result.records):
        for j in range(rec.sup_err.size):
            seed, ns, _, _ = rec.seeds[j]
            rows.append([ie, rec.eps, j, seed, ns, rec.sup_err[j], rec.sup_mean_err[j],
                         bool(rec.stopped[j]),
                         rec.tau[j] if np.isfinite(rec.tau[j]) else None,
                         rec.T1[j] if np.isfinite(rec.T1[j]) else None])
    return _csv(PATHS_HEADER, rows)


def versions() -> dict:
    from . import __version__
    return {"fastdiff": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def sweep_report(result: SweepResult, prob: dict | None = None) -> dict:
    plan = result.plan
    prob = prob or probability_estimate(result)
    return {
        "kind": "sweep",
        "config": plan.cfg,
        "config_hash": plan.hash,
        "seeds": {"base": plan.seed, "key": ["seed", "namespace", "eps_index", "path"],
                  "namespace": rngmod.SPDE, "generator": "Philox"},
        "versions": versions(),
        "status": result.status,
        "regression": result.regression,
        "self_convergence": result.self_convergence,
        "probability": prob,
        "per_eps": [dict(eps=r.eps, h=r.h, tau_stop_fraction=r.tau_stop_fraction,
                         T1_stop_fraction=r.T1_stop_fraction, **r.summary())
                    for r in result.records],
    }


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_sweep(result: SweepResult, directory: str) -> dict:
    prob = probability_estimate(result)
    files = {
        "results.csv": results_csv(result, prob),
        "paths.csv": paths_csv(result),
        "report.json": dumps(sweep_report(result, prob)),
    }
    for name, text in files.items():
        atomic_write(os.path.join(directory, name), text)
    return {name: os.path.join(directory, name) for name in files}
