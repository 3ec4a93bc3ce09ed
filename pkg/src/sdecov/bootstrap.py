"""Parametric bootstrap of the block-relaxation MLE and percentile intervals."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _seeding
from .errors import BootstrapFailureError, ParameterError, SdeCovError
from .estimation import block_relaxation_mle
from .model import ModelSpec, ThetaVector
from .simulate import PanelShape, simulate_covariates, simulate_panel, stack_covariates

log = logging.getLogger(__name__)

__all__ = [
    "BootstrapDist",
    "parametric_bootstrap",
    "percentile_ci",
    "histogram",
]


@dataclass(eq=False)
class BootstrapDist:
    """``B`` refitted estimates under the plug-in parameter.

    Rows of ``replicates`` are NaN for replicates whose simulation failed;
    ``converged`` is False for those and for refits that hit the sweep cap.
    """

    spec: ModelSpec
    theta_hat: ThetaVector
    replicates: np.ndarray
    converged: np.ndarray
    seed: tuple
    regenerate_covariates: bool = False

    @property
    def B(self) -> int:
        return len(self.replicates)

    @property
    def names(self) -> tuple:
        return self.spec.names

    @property
    def products(self) -> np.ndarray:
        """Identified coefficients ``kron(xi, beta)`` of every replicate."""
        return np.array([self.spec.coefficients(r) for r in self.replicates])

    @property
    def product_names(self) -> list[str]:
        return self.spec.coefficient_names()

    def finite(self) -> np.ndarray:
        return np.all(np.isfinite(self.replicates), axis=1)

    def intervals(self, level: float = 0.95) -> dict:
        """Percentile intervals for every coordinate and identified product."""
        ok = self.finite()
        out = {}
        for j, name in enumerate(self.names):
            out[name] = percentile_ci(self.replicates[ok, j], level)
        prods = self.products[ok]
        for k, name in enumerate(self.product_names):
            out[name] = percentile_ci(prods[:, k], level)
        return out


def _nearest_rank(n: int, prob: float) -> int:
    # guard against 0.025 * 1000 = 25.000000000000004
    return min(n, max(1, math.ceil(round(prob * n, 9))))


def percentile_ci(values, level: float = 0.95) -> tuple[float, float]:
    """Nearest-rank percentile interval.

    With ``B`` sorted values the bounds are the order statistics of rank
    ``ceil((1 - level) / 2 * B)`` and ``ceil((1 + level) / 2 * B)``.
    """
    x = np.sort(np.asarray(values, dtype=float).ravel())
    if len(x) == 0:
        raise ParameterError("percentile interval of an empty sample")
    if not 0 < level < 1:
        raise ParameterError(f"level must be in (0, 1), got {level}")
    n = len(x)
    lo = x[_nearest_rank(n, (1 - level) / 2) - 1]
    hi = x[_nearest_rank(n, (1 + level) / 2) - 1]
    return float(lo), float(hi)


def histogram(values, bins: int = 40):
    """Equal-width histogram as ``(bin_left, bin_right, count)`` arrays."""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    count, edges = np.histogram(x, bins=bins)
    return edges[:-1], edges[1:], count


def _replicate(args):
    spec, theta_hat, shape, seed, b, regenerate, tol, max_sweeps = args
    rseed = _seeding.derive(seed, _seeding.BOOTSTRAP, b)
    covs = list(shape.covariates)
    if regenerate:
        cm = shape.covariate_model
        if cm is None:
            raise ParameterError("regenerating covariates needs a covariate model")
        ids = [c.subject for c in shape.covariates]
        groups = [simulate_covariates(shape.n, list(shape.grids), cm.xi_mean, cm.xi_sd, cm.z0,
                                      seed=_seeding.derive(rseed, l), bounds=cm.bounds,
                                      subjects=ids)
                  for l in range(cm.count)]
        covs = stack_covariates(*groups)
    try:
        panel = simulate_panel(spec, theta_hat, shape.n, list(shape.grids), shape.x0s, covs,
                               seed=rseed)
        res = block_relaxation_mle(panel, theta_hat, tol=tol, max_sweeps=max_sweeps)
    except SdeCovError as exc:
        log.warning("bootstrap replicate %d failed: %s", b, exc)
        return np.full(spec.dim, np.nan), False
    return res.theta_hat.values.copy(), res.converged


def _run_chunk(args_list):
    return [_replicate(a) for a in args_list]


def parametric_bootstrap(spec: ModelSpec, theta_hat, shape: PanelShape, B: int, seed=0,
                         regenerate_covariates: bool = False, tol: float = 1e-5,
                         max_sweeps: int = 10_000, workers: int = 1,
                         max_failure_rate: float = 0.10) -> BootstrapDist:
    """Simulate ``B`` panels under ``theta_hat`` and refit each one.

    Replicate ``b`` draws all of its noise from ``(seed, b)``.  Covariates
    are held fixed unless ``regenerate_covariates`` is set (then
    ``shape.covariate_model`` is used).  Refits start at ``theta_hat``.

    Raises
    ------
    BootstrapFailureError
        More than ``max_failure_rate`` of the replicates failed to converge.
    """
    if B < 1:
        raise ParameterError(f"B must be >= 1, got {B}")
    if not isinstance(theta_hat, ThetaVector):
        theta_hat = spec.theta(theta_hat)
    key = _seeding.seed_key(seed)
    jobs = [(spec, theta_hat, shape, key, b, regenerate_covariates, tol, max_sweeps)
            for b in range(B)]
    if workers > 1:
        chunks = [jobs[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_run_chunk, chunks))
        results = [None] * B
        for w, part in enumerate(parts):
            for k, r in enumerate(part):
                results[w + k * workers] = r
    else:
        results = [_replicate(j) for j in jobs]
    reps = np.array([r[0] for r in results])
    conv = np.array([r[1] for r in results], dtype=bool)
    failed = int(np.count_nonzero(~conv))
    if failed > max_failure_rate * B:
        raise BootstrapFailureError(f"{failed} of {B} bootstrap replicates failed")
    if failed:
        log.warning("%d of %d bootstrap replicates did not converge", failed, B)
    return BootstrapDist(spec, theta_hat, reps, conv, key, regenerate_covariates)
