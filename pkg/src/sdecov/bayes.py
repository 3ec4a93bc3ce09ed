"""Empirical-Bayes priors, rejection ABC and a Gibbs sampler with normal full conditionals."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _seeding
from .bootstrap import BootstrapDist, percentile_ci
from .errors import BudgetExhaustedError, NumericalError, ParameterError, RefusalError
from .likelihood import get_likelihood
from .model import ModelSpec
from .simulate import Panel, euler_block

log = logging.getLogger(__name__)

__all__ = [
    "PriorSpec",
    "ChainResult",
    "ChainDiagnostics",
    "empirical_bayes_prior",
    "abc_trials",
    "abc_rejection",
    "gibbs_sampler",
    "full_conditional",
    "chain_diagnostics",
    "autocorrelation",
    "effective_sample_size",
]

Z975 = 1.96
ABC_CHUNK = 1000


@dataclass(frozen=True, eq=False)
class PriorSpec:
    """Independent ``N(mean_j, sd_j^2)`` priors."""

    mean: np.ndarray
    sd: np.ndarray

    def __post_init__(self):
        m = np.array(self.mean, dtype=float).reshape(-1)
        s = np.array(self.sd, dtype=float).reshape(-1)
        if m.shape != s.shape:
            raise ParameterError("prior mean and sd must have the same length")
        if not np.all(s > 0):
            raise ParameterError(f"prior sd must be positive, got {s}")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "sd", s)

    @classmethod
    def iid(cls, dim: int, mean: float = 0.0, variance: float = 100.0) -> "PriorSpec":
        return cls(np.full(dim, mean), np.full(dim, np.sqrt(variance)))

    def __len__(self):
        return len(self.mean)

    def sample(self, g: np.random.Generator, size: int) -> np.ndarray:
        return self.mean + self.sd * g.standard_normal((size, len(self.mean)))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "sd": self.sd.tolist()}


@dataclass(eq=False)
class ChainResult:
    """Posterior draws with their provenance.

    ``draws`` holds the recorded (thinned) states.  For Gibbs, ``samples``
    keeps every iteration; ABC fills ``distances`` instead.
    """

    draws: np.ndarray
    names: tuple
    seed: tuple
    method: str
    meta: dict = field(default_factory=dict)
    distances: np.ndarray | None = None
    samples: np.ndarray | None = None

    def __len__(self):
        return len(self.draws)

    def inference_draws(self) -> np.ndarray:
        return self.samples if self.samples is not None else self.draws

    def credible_intervals(self, level: float = 0.95, spec: ModelSpec | None = None) -> dict:
        d = self.inference_draws()
        out = {n: percentile_ci(d[:, j], level) for j, n in enumerate(self.names)}
        if spec is not None:
            prods = np.array([spec.coefficients(r) for r in d])
            for k, n in enumerate(spec.coefficient_names()):
                out[n] = percentile_ci(prods[:, k], level)
        return out


# ---------------------------------------------------------------------------
# priors


def empirical_bayes_prior(boot: BootstrapDist, level: float = 0.95) -> PriorSpec:
    """Normal prior centred at the MLE with inflated bootstrap spread.

    With ``L_j`` the length of the bootstrap interval of coordinate ``j``,
    ``sd_j = (L_j + 2) / (2 * 1.96)``: the central 95% prior interval is as
    long as the bootstrap interval widened by one unit on each side.
    """
    ok = boot.finite()
    if not ok.any():
        raise ParameterError("bootstrap distribution has no finite replicates")
    lengths = np.array([np.subtract(*percentile_ci(boot.replicates[ok, j], level)[::-1])
                        for j in range(boot.replicates.shape[1])])
    return PriorSpec(boot.theta_hat.values.copy(), (lengths + 2.0) / (2 * Z975))


# ---------------------------------------------------------------------------
# ABC


def _simulate_trials(panel: Panel, thetas: np.ndarray, g: np.random.Generator):
    """Simulate every subject of ``panel`` once per row of ``thetas``.

    Returns one ``(trials, m_i + 1)`` array of states per subject.
    """
    spec = panel.spec
    T = len(thetas)
    groups: dict = {}
    for i, grid in enumerate(panel.grids):
        groups.setdefault(grid.n_steps, []).append(i)
    sims = {}
    for m, idx in groups.items():
        nsub = len(idx)
        steps = np.array([panel.grids[i].step for i in idx])
        dW = g.standard_normal((T, nsub, m)) * np.sqrt(steps)[None, :, None]
        G = np.stack([spec.drift.covariate_features(panel.covariates[i].values) for i in idx])
        rows_G = np.broadcast_to(G, (T,) + G.shape).reshape(T * nsub, m + 1, -1)
        vals = np.repeat(thetas, nsub, axis=0)
        x0 = np.tile(panel.x0s[idx], T)
        diffs = [spec.diffusion_for(i) for i in idx] * T
        labels = [panel.subjects[i] for i in idx] * T
        x, _ = euler_block(spec, vals, rows_G, x0, np.tile(steps, T), dW.reshape(T * nsub, m),
                           diffs, labels, check=False)
        sims.update({i: x.reshape(T, nsub, m + 1)[:, r] for r, i in enumerate(idx)})
    return [sims[i] for i in range(panel.n)]


def _distances(panel: Panel, sims, distance: str) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        if distance == "rms":
            total = 0.0
            count = 0
            for path, x in zip(panel.paths, sims):
                total = total + np.sum((x - path.states) ** 2, axis=1)
                count += len(path.states)
            d = np.sqrt(total / count)
        elif distance == "mean-path":
            if not panel.iid_grid:
                raise RefusalError("mean-path distance needs a common grid")
            xbar = np.mean(np.stack(sims, axis=1), axis=1)
            tbar = np.mean([p.states for p in panel.paths], axis=0)
            d = np.sqrt(np.mean((xbar - tbar) ** 2, axis=1))
        else:
            raise ParameterError(f"unknown distance {distance!r}")
    return np.where(np.isfinite(d), d, np.inf)


def _abc_chunk(args):
    panel, prior, seed, c, size, distance = args
    g = _seeding.rng(seed, _seeding.ABC, c)
    thetas = prior.sample(g, size)
    return thetas, _distances(panel, _simulate_trials(panel, thetas, g), distance)


def abc_trials(x_true: Panel, prior: PriorSpec, n_trials: int, seed=0, distance: str = "rms",
               chunk: int = ABC_CHUNK, first_chunk: int = 0, workers: int = 1):
    """Draw ``n_trials`` prior parameters and their distances to ``x_true``.

    Trials are generated in fixed chunks of ``chunk``, chunk ``c`` from the
    stream ``(seed, ABC, c)``, so trial ``t`` is the same whatever the number
    of workers.  Returns ``(thetas, distances)``.
    """
    if len(prior) != x_true.spec.dim:
        raise ParameterError(f"prior has {len(prior)} coordinates, model {x_true.spec.dim}")
    key = _seeding.seed_key(seed)
    n_chunks = -(-n_trials // chunk)
    jobs = [(x_true, prior, key, first_chunk + c, chunk, distance) for c in range(n_chunks)]
    if workers > 1 and n_chunks > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_abc_chunk, jobs))
    else:
        parts = [_abc_chunk(j) for j in jobs]
    thetas = np.concatenate([p[0] for p in parts])[:n_trials]
    dist = np.concatenate([p[1] for p in parts])[:n_trials]
    return thetas, dist


def abc_rejection(x_true: Panel, prior: PriorSpec, epsilon: float, n_accept: int, seed=0,
                  max_trials: int = 10**8, distance: str = "rms", chunk: int = ABC_CHUNK,
                  workers: int = 1) -> ChainResult:
    """Rejection ABC on raw paths.

    Each trial draws ``theta`` from the prior, simulates every subject on its
    own grid with its own initial value and covariates, and is accepted iff
    the distance to ``x_true`` is below ``epsilon``.  The default distance is
    the root mean square over all subjects and knots; ``"mean-path"``
    compares the cross-subject average paths instead.  Accepted draws are
    kept in trial order.

    Raises
    ------
    BudgetExhaustedError
        Fewer than ``n_accept`` acceptances within ``max_trials`` trials.
    """
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if n_accept < 1:
        raise ParameterError(f"n_accept must be >= 1, got {n_accept}")
    key = _seeding.seed_key(seed)
    acc_t, acc_d = [], []
    n_acc = 0
    trials = 0
    c = 0
    wave = max(1, workers)
    while n_acc < n_accept:
        if trials >= max_trials:
            raise BudgetExhaustedError(trials, n_acc, n_accept)
        size = min(chunk * wave, max_trials - trials)
        thetas, dist = abc_trials(x_true, prior, size, key, distance, chunk, c, workers)
        c += -(-size // chunk)
        ok = np.flatnonzero(dist < epsilon)
        need = n_accept - n_acc
        if len(ok) >= need:
            ok = ok[:need]
            trials += int(ok[-1]) + 1
        else:
            trials += size
        acc_t.append(thetas[ok])
        acc_d.append(dist[ok])
        n_acc += len(ok)
    draws = np.concatenate(acc_t)
    meta = {"trials": trials, "accepted": n_acc, "acceptance_rate": n_acc / trials,
            "epsilon": epsilon, "distance": distance}
    return ChainResult(draws, x_true.spec.names, key, "abc", meta, np.concatenate(acc_d))


# ---------------------------------------------------------------------------
# Gibbs


def full_conditional(lik, values, j: int, prior: PriorSpec) -> tuple[float, float]:
    """Mean and variance of the normal full conditional of coordinate ``j``.

    The log-likelihood restricted to ``theta_j`` is
    ``a t - (c t^2 + d t) / 2``; with the prior ``N(m, s^2)`` the conditional
    precision is ``c + 1/s^2`` and the mean ``(a - d/2 + m/s^2) / precision``.
    """
    quad = lik.coordinate_quadratic(values, j)
    if quad is None:
        raise RefusalError(f"coordinate {j} is not affine in the drift; no normal full conditional")
    a, c, d = quad
    if c < 0:
        raise NumericalError(f"negative curvature {c} for coordinate {j}")
    s2 = prior.sd[j] ** 2
    prec = c + 1.0 / s2
    mean = (a - 0.5 * d + prior.mean[j] / s2) / prec
    return mean, 1.0 / prec


def gibbs_sampler(panel: Panel, prior: PriorSpec, iters: int, thin: int = 1, init=None,
                  seed=0, fixed=()) -> ChainResult:
    """Systematic-scan Gibbs sampler with normal full conditionals.

    Every iteration updates the coordinates in order (skipping ``fixed``).
    The state after iteration ``i`` is recorded in ``draws`` when
    ``(i + 1) % thin == 0``; ``samples`` keeps all iterations.
    """
    spec = panel.spec
    d = spec.dim
    if len(prior) != d:
        raise ParameterError(f"prior has {len(prior)} coordinates, model {d}")
    if iters < 1 or thin < 1:
        raise ParameterError("iters and thin must be >= 1")
    lik = get_likelihood(panel)
    free = [j for j in range(d) if j not in set(fixed)]
    for j in free:
        if not lik.affine(j):
            raise RefusalError(f"coordinate {spec.names[j]} has no normal full conditional")
    v = np.full(d, 0.1) if init is None else np.array(getattr(init, "values", init), dtype=float)
    key = _seeding.seed_key(seed)
    g = _seeding.rng(key, _seeding.GIBBS)
    samples = np.empty((iters, d))
    block = 10_000
    for start in range(0, iters, block):
        z = g.standard_normal((min(block, iters - start), len(free)))
        for r in range(len(z)):
            for k, j in enumerate(free):
                mean, var = full_conditional(lik, v, j, prior)
                v[j] = mean + np.sqrt(var) * z[r, k]
            if not np.all(np.isfinite(v)):
                raise NumericalError(f"non-finite Gibbs state at iteration {start + r}")
            samples[start + r] = v
    draws = samples[thin - 1::thin]
    meta = {"iters": iters, "thin": thin, "fixed": [spec.names[j] for j in fixed]}
    return ChainResult(draws.copy(), spec.names, key, "gibbs", meta, samples=samples)


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(eq=False)
class ChainDiagnostics:
    names: tuple
    running_means: np.ndarray
    acf: np.ndarray  # (dim, max_lag + 1)
    ess: np.ndarray
    degenerate: np.ndarray

    def summary(self) -> dict:
        return {n: {"ess": None if self.degenerate[j] else float(self.ess[j]),
                    "degenerate": bool(self.degenerate[j]),
                    "acf_lag1": float(self.acf[j, 1]) if self.acf.shape[1] > 1 else None}
                for j, n in enumerate(self.names)}


def autocorrelation(x, max_lag: int | None = None) -> np.ndarray:
    """Sample autocorrelation via FFT; NaN for a constant series."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    y = x - x.mean()
    var = np.dot(y, y) / n
    lags = n - 1 if max_lag is None else min(max_lag, n - 1)
    if var == 0:
        out = np.full(lags + 1, np.nan)
        return out
    f = np.fft.rfft(y, 2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:lags + 1] / n
    return acov / var


def effective_sample_size(x) -> float:
    """Initial-positive-sequence ESS; NaN for a constant series."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    rho = autocorrelation(x)
    if np.isnan(rho[0]):
        return float("nan")
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(n / max(tau, 1e-12))


def chain_diagnostics(chain, max_lag: int = 50) -> ChainDiagnostics:
    """Running means, autocorrelations at lags ``0..max_lag`` and ESS per coordinate."""
    draws = chain.draws if isinstance(chain, ChainResult) else np.asarray(chain, dtype=float)
    names = chain.names if isinstance(chain, ChainResult) else tuple(
        f"theta_{j + 1}" for j in range(draws.shape[1]))
    n, d = draws.shape
    running = np.cumsum(draws, axis=0) / np.arange(1, n + 1)[:, None]
    lags = min(max_lag, n - 1)
    acf = np.array([autocorrelation(draws[:, j], lags) for j in range(d)])
    ess = np.array([effective_sample_size(draws[:, j]) for j in range(d)])
    return ChainDiagnostics(tuple(names), running, acf, ess, np.isnan(ess))
