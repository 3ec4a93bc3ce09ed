"""Desk-scale checks of consistency and asymptotic normality.

All experiments need an identifiable model: with a free linear factor the
drift only depends on products of parameters and the information matrix is
singular.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _seeding
from .bayes import PriorSpec, gibbs_sampler
from .errors import NotIdentifiableError, ParameterError
from .estimation import block_relaxation_mle
from .likelihood import observed_information
from .model import ModelSpec, ThetaVector
from .presets import experiment_shape
from .simulate import Panel, simulate_panel

__all__ = [
    "ExperimentReport",
    "GibbsConfig",
    "consistency_experiment",
    "normality_experiment",
    "posterior_normality_experiment",
    "mardia",
    "qq_data",
    "simulate_experiment_panel",
]

MIN_KS_SAMPLE = 20
MAX_FALLBACK_RATE = 0.05
FIT_TOL = 1e-9


@dataclass(eq=False)
class ExperimentReport:
    kind: str
    names: tuple
    theta0: np.ndarray
    rows: list = field(default_factory=list)
    samples: np.ndarray | None = None
    ks: list = field(default_factory=list)
    mardia: dict | None = None
    flags: list = field(default_factory=list)
    runtime: float = 0.0
    seed: tuple = ()
    config: dict = field(default_factory=dict)
    estimates: dict = field(default_factory=dict)

    def mae(self) -> np.ndarray:
        return np.array([r["mae"] for r in self.rows])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "names": list(self.names),
            "theta0": self.theta0.tolist(),
            "rows": self.rows,
            "ks": self.ks,
            "mardia": self.mardia,
            "flags": self.flags,
            "runtime_seconds": self.runtime,
            "seed": list(self.seed),
            "config": self.config,
        }


@dataclass(frozen=True)
class GibbsConfig:
    iters: int = 100_000
    thin: int = 10
    prior_sd: float = 10.0
    prior_mean: float = 0.0


def _check(spec: ModelSpec, theta0):
    if not spec.identifiable:
        raise NotIdentifiableError(
            "the drift depends on the parameters only through products "
            f"{spec.coefficient_names()}, so the information matrix is singular; "
            "use a model with a fixed drift factor")
    v = theta0.values if isinstance(theta0, ThetaVector) else np.asarray(theta0, dtype=float)
    spec.theta(v)
    return v


def _setup(spec: ModelSpec, setup):
    if setup is None:
        return "non-iid" if spec.p else "iid"
    if setup == "iid" and spec.p:
        raise ParameterError("the iid setup has no covariates; use a model with p = 0")
    return setup


def simulate_experiment_panel(spec: ModelSpec, theta0, n: int, seed, setup=None,
                              n_steps: int = 100) -> Panel:
    """Panel for replicate ``seed``: layout and paths both derive from it."""
    shape = experiment_shape(spec, n, seed, _setup(spec, setup), n_steps)
    return simulate_panel(spec, theta0, n, list(shape.grids), shape.x0s, list(shape.covariates),
                          seed=seed)


def _fit(spec, theta0, n, seed, setup, n_steps):
    panel = simulate_experiment_panel(spec, theta0, n, seed, setup, n_steps)
    res = block_relaxation_mle(panel, np.zeros(spec.dim), tol=FIT_TOL)
    return panel, res


def _rep_seed(seed, n, r):
    return _seeding.derive(seed, _seeding.EXPERIMENT, n, r)


def _estimate(args):
    return _fit(*args)[1].theta_hat.values


def _standardized(args):
    v0 = args[1]
    panel, res = _fit(*args)
    info = observed_information(panel, res.theta_hat)
    return info.standardize(res.theta_hat.values - v0), info.fallback


def _map(fn, jobs, workers):
    # results come back in job order, so the report does not depend on workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [fn(j) for j in jobs]


def consistency_experiment(spec: ModelSpec, theta0, n_list=(10, 40, 160), reps: int = 500,
                           seed=0, setup=None, n_steps: int = 100,
                           workers: int = 1) -> ExperimentReport:
    """Error of the MLE over ``reps`` simulated panels for each ``n``.

    Replicate ``r`` at size ``n`` uses the seed ``(seed, n, r)``, so adding
    replicates leaves the earlier ones unchanged.
    """
    t0 = time.perf_counter()
    v0 = _check(spec, theta0)
    if reps < 1:
        raise ParameterError("reps must be >= 1")
    key = _seeding.seed_key(seed)
    report = ExperimentReport("consistency", spec.names, v0, seed=key,
                              config={"n_list": list(n_list), "reps": reps,
                                      "setup": _setup(spec, setup), "n_steps": n_steps})
    for n in sorted(n_list):
        jobs = [(spec, v0, n, _rep_seed(key, n, r), setup, n_steps) for r in range(reps)]
        est = np.array(_map(_estimate, jobs, workers))
        err = est - v0
        report.estimates[n] = est
        report.rows.append({
            "n": int(n),
            "mae": float(np.mean(np.abs(err))),
            "mae_per_coordinate": np.mean(np.abs(err), axis=0).tolist(),
            "rmse_per_coordinate": np.sqrt(np.mean(err**2, axis=0)).tolist(),
        })
    report.runtime = time.perf_counter() - t0
    return report


def mardia(z) -> dict:
    """Mardia's multivariate skewness and kurtosis tests."""
    z = np.asarray(z, dtype=float)
    n, d = z.shape
    c = z - z.mean(axis=0)
    S = c.T @ c / n
    D = c @ np.linalg.pinv(S) @ c.T
    b1 = np.sum(D**3) / n**2
    b2 = np.mean(np.diag(D) ** 2)
    skew_stat = n * b1 / 6
    skew_df = d * (d + 1) * (d + 2) / 6
    kurt_z = (b2 - d * (d + 2)) / np.sqrt(8 * d * (d + 2) / n)
    return {
        "skewness": float(b1),
        "skewness_p": float(stats.chi2.sf(skew_stat, skew_df)),
        "kurtosis": float(b2),
        "kurtosis_p": float(2 * stats.norm.sf(abs(kurt_z))),
    }


def _ks_rows(z, names):
    out = []
    for j, name in enumerate(names):
        r = stats.kstest(z[:, j], "norm")
        out.append({"name": name, "statistic": float(r.statistic), "p_value": float(r.pvalue),
                    "mean": float(np.mean(z[:, j])), "variance": float(np.var(z[:, j], ddof=1))
                    if len(z) > 1 else float("nan")})
    return out


def normality_experiment(spec: ModelSpec, theta0, n: int = 160, reps: int = 500, seed=0,
                         setup=None, n_steps: int = 100, workers: int = 1) -> ExperimentReport:
    """Standardized MLE errors ``I_n^{1/2} (theta_hat - theta0)`` against N(0, I).

    ``I_n`` is the observed information at the estimate.  Reports per
    coordinate Kolmogorov-Smirnov tests and Mardia's joint moment tests.
    """
    t0 = time.perf_counter()
    v0 = _check(spec, theta0)
    if reps < 1:
        raise ParameterError("reps must be >= 1")
    key = _seeding.seed_key(seed)
    jobs = [(spec, v0, n, _rep_seed(key, n, r), setup, n_steps) for r in range(reps)]
    out = _map(_standardized, jobs, workers)
    z = np.array([o[0] for o in out]).reshape(reps, spec.dim)
    fallbacks = int(sum(o[1] for o in out))
    report = ExperimentReport("mle-normality", spec.names, v0, samples=z, seed=key,
                              config={"n": n, "reps": reps, "setup": _setup(spec, setup),
                                      "n_steps": n_steps})
    report.ks = _ks_rows(z, spec.names)
    if reps > spec.dim + 1:
        report.mardia = mardia(z)
    if reps < MIN_KS_SAMPLE:
        report.flags.append("underpowered")
    if fallbacks > MAX_FALLBACK_RATE * reps:
        report.flags.append(f"information fallback in {fallbacks} of {reps} replicates")
    report.rows.append({"n": int(n), "fallbacks": int(fallbacks)})
    report.runtime = time.perf_counter() - t0
    return report


def posterior_normality_experiment(spec: ModelSpec, theta0, n: int = 160,
                                   gibbs: GibbsConfig = GibbsConfig(), seed=0, setup=None,
                                   n_steps: int = 100, panel: Panel | None = None
                                   ) -> ExperimentReport:
    """Gibbs draws standardized as ``I_n^{1/2} (theta - theta_hat)`` against N(0, I).

    The recorded (thinned) draws are tested coordinate-wise with
    Kolmogorov-Smirnov.  A fallback information matrix flags the report as
    not expected to be normal.
    """
    t0 = time.perf_counter()
    v0 = _check(spec, theta0)
    key = _seeding.seed_key(seed)
    if panel is None:
        panel, res = _fit(spec, v0, n, _rep_seed(key, n, 0), setup, n_steps)
    else:
        res = block_relaxation_mle(panel, np.zeros(spec.dim), tol=FIT_TOL)
    info = observed_information(panel, res.theta_hat)
    prior = PriorSpec(np.full(spec.dim, gibbs.prior_mean), np.full(spec.dim, gibbs.prior_sd))
    chain = gibbs_sampler(panel, prior, gibbs.iters, gibbs.thin, init=res.theta_hat,
                          seed=_seeding.derive(key, _seeding.GIBBS, n))
    psi = info.standardize(chain.draws - res.theta_hat.values)
    report = ExperimentReport("posterior-normality", spec.names, v0, samples=psi, seed=key,
                              config={"n": panel.n, "iters": gibbs.iters, "thin": gibbs.thin,
                                      "prior_sd": gibbs.prior_sd, "n_steps": n_steps})
    report.ks = _ks_rows(psi, spec.names)
    if info.fallback:
        report.flags.append("information fallback: no normal limit expected")
    report.rows.append({"n": int(panel.n), "theta_hat": res.theta_hat.values.tolist()})
    report.runtime = time.perf_counter() - t0
    return report


def qq_data(sample) -> tuple[np.ndarray, np.ndarray]:
    """Normal quantiles at plotting positions ``(k - 0.5) / N`` and the sorted sample."""
    x = np.sort(np.asarray(sample, dtype=float))
    q = stats.norm.ppf((np.arange(1, len(x) + 1) - 0.5) / len(x))
    return q, x
