"""Ready-made models and panels.

``product``: twenty subjects with drift ``(theta1 + theta2 z)(theta3 + theta4 x)``,
unit diffusion, ``X(0) = 0`` on ``[0, 1]`` with 100 steps, and covariates
``dz = xi_i z dt + dW`` with ``xi_i ~ N(7, 1)``.

``nse_like``: a synthetic stand-in for a 15-company stock panel: 467 daily
observations, three market-wide covariates, drift
``(theta1 + theta2 c1 + theta3 c2 + theta4 c3)(theta5 + theta6 x)`` and
per-company power diffusion ``A_i x^{B_i}``.

``identifiable``: drift ``(xi0 + xi1 z) x`` with a fixed factor, for which the
information matrix is nonsingular; ``identifiable_iid`` drops the covariate.
"""

from __future__ import annotations

import numpy as np

from . import _seeding
from .model import CKLS, Constant, DriftSpec, ModelSpec, TimeGrid, factor_from_name
from .simulate import (CovariateModel, CovariatePath, Panel, PanelShape, simulate_covariates,
                       simulate_panel)

__all__ = [
    "PRODUCT_THETA",
    "PRODUCT_GRID",
    "product_spec",
    "product_shape",
    "product_panel",
    "NSE_THETA",
    "nse_like_spec",
    "nse_like_panel",
    "IDENTIFIABLE_THETA",
    "identifiable_spec",
    "identifiable_iid_spec",
    "experiment_shape",
]

PRODUCT_THETA = (1.0, -1.0, 2.0, -2.0)
PRODUCT_GRID = TimeGrid(1.0, 100)
# keeps 1 - z >= 0 so the true drift is mean reverting; see README
PRODUCT_COVARIATE_BOUND = 1.0


def product_spec(covariate_bound: float = PRODUCT_COVARIATE_BOUND,
                  bounds=((-10.0, 10.0),) * 4) -> ModelSpec:
    drift = DriftSpec(("identity",), factor_from_name("affine"),
                      ((-covariate_bound, covariate_bound),))
    return ModelSpec(drift, Constant(1.0), bounds=bounds,
                     names=("theta1", "theta2", "theta3", "theta4"))


def product_shape(seed, n: int = 20, grid: TimeGrid = PRODUCT_GRID, x0: float = 0.0,
                   covariate_bound: float = PRODUCT_COVARIATE_BOUND, xi_mean: float = 7.0,
                   xi_sd: float = 1.0, z0: float = 0.0) -> PanelShape:
    bounds = (-covariate_bound, covariate_bound)
    covs = simulate_covariates(n, grid, xi_mean, xi_sd, z0, seed=seed, bounds=bounds)
    model = CovariateModel(xi_mean, xi_sd, z0, bounds)
    return PanelShape((grid,) * n, np.full(n, float(x0)), tuple(covs), tuple(range(n)), model)


def product_panel(seed, n: int = 20, theta=PRODUCT_THETA, **kw) -> tuple[Panel, PanelShape]:
    """Simulate covariates and data for the product-drift study."""
    spec = product_spec(kw.pop("covariate_bound", PRODUCT_COVARIATE_BOUND))
    shape = product_shape(seed, n, covariate_bound=spec.drift.covariate_ranges[0][1], **kw)
    panel = simulate_panel(spec, spec.theta(theta), n, list(shape.grids), shape.x0s,
                           list(shape.covariates), seed=seed)
    return panel, shape


# ---------------------------------------------------------------------------

NSE_THETA = (0.6, 0.25, -0.15, 0.05, 8.0, -0.08)
NSE_N = 15
NSE_OBS = 467
NSE_GRID = TimeGrid((NSE_OBS - 1) / 252.0, NSE_OBS - 1)


def nse_like_spec(diffusion_params) -> ModelSpec:
    diffs = tuple(CKLS(a, b) for a, b in diffusion_params)
    drift = DriftSpec(("identity",) * 3, factor_from_name("affine"), ((-4.0, 4.0),) * 3)
    return ModelSpec(drift, diffs, bounds=((-100.0, 100.0),) * 6,
                     names=tuple(f"theta{j}" for j in range(1, 7)))


def _market_covariates(g, grid: TimeGrid) -> np.ndarray:
    """Three standardized mean-reverting series shared by every company."""
    m, dt = grid.n_steps, grid.step
    kappa = np.array([1.5, 0.8, 2.5])
    z = np.zeros((m + 1, 3))
    z[0] = g.normal(0, 0.5, 3)
    for k in range(m):
        z[k + 1] = z[k] - kappa * z[k] * dt + np.sqrt(2 * kappa * dt) * g.standard_normal(3)
    return np.clip(z, -4.0, 4.0)


def nse_like_panel(seed, theta=NSE_THETA, n: int = NSE_N) -> Panel:
    """Synthetic 15-company, 467-observation panel with three covariates."""
    g = _seeding.rng(seed, _seeding.PRESET)
    A = g.uniform(0.2, 0.4, n)
    B = g.uniform(0.8, 1.0, n)
    x0 = g.uniform(60.0, 140.0, n)
    z = _market_covariates(g, NSE_GRID)
    spec = nse_like_spec(list(zip(A, B)))
    covs = [CovariatePath(i, NSE_GRID, z) for i in range(n)]
    return simulate_panel(spec, spec.theta(theta), n, NSE_GRID, x0, covs, seed=seed)


# ---------------------------------------------------------------------------

IDENTIFIABLE_THETA = (-1.0, 0.5)


def identifiable_spec(covariate_bound: float = 1.0) -> ModelSpec:
    """Drift ``(xi0 + xi1 z) x``; both coefficients identified."""
    drift = DriftSpec(("identity",), factor_from_name("identity"),
                      ((-covariate_bound, covariate_bound),))
    return ModelSpec(drift, Constant(1.0), bounds=((-10.0, 10.0),) * 2)


def identifiable_iid_spec() -> ModelSpec:
    """Drift ``xi0 x`` without covariates (common start and horizon)."""
    return ModelSpec(DriftSpec((), factor_from_name("identity")), Constant(1.0),
                     bounds=((-10.0, 10.0),))


def experiment_shape(spec: ModelSpec, n: int, seed, setup: str = "non-iid",
                     n_steps: int = 100) -> PanelShape:
    """Panel layout for the asymptotics experiments.

    ``iid``: common ``x0 = 1`` and ``T = 1``, no covariates.  ``non-iid``:
    subject-specific ``x0 ~ U(0.5, 1.5)``, ``T ~ U(0.75, 1.25)`` and
    covariates from the product-drift covariate model, clamped to the declared
    range.
    """
    if setup == "iid":
        grid = TimeGrid(1.0, n_steps)
        covs = tuple(CovariatePath.empty(i, grid) for i in range(n))
        return PanelShape((grid,) * n, np.ones(n), covs, tuple(range(n)))
    if setup != "non-iid":
        raise ValueError(f"setup must be 'iid' or 'non-iid', got {setup!r}")
    g = _seeding.rng(seed, _seeding.PRESET)
    x0 = g.uniform(0.5, 1.5, n)
    T = g.uniform(0.75, 1.25, n)
    grids = tuple(TimeGrid(float(t), n_steps) for t in T)
    rng_bounds = spec.drift.covariate_ranges[0] if spec.drift.covariate_ranges else None
    covs = simulate_covariates(n, grids, seed=seed, bounds=rng_bounds)
    model = CovariateModel(bounds=rng_bounds)
    return PanelShape(grids, x0, tuple(covs), tuple(range(n)), model)
