"""Paths, panels and Euler-Maruyama simulation.

Covariates are evaluated piecewise-constant from the left: the drift on
``[t_k, t_{k+1})`` uses ``z(t_k)``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _seeding
from .errors import DomainError, ParameterError, SimulationOverflowError
from .model import ModelSpec, ThetaVector, TimeGrid

log = logging.getLogger(__name__)

__all__ = [
    "CovariatePath",
    "SubjectPath",
    "Panel",
    "PanelShape",
    "CovariateModel",
    "wiener_increments",
    "coarsen_increments",
    "simulate_covariates",
    "stack_covariates",
    "simulate_path",
    "simulate_panel",
]


def _frozen_array(a, ndim=None):
    a = np.array(a, dtype=float)
    if ndim is not None and a.ndim != ndim:
        raise ParameterError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CovariatePath:
    """Covariate values ``z_l(t_k)`` on a grid, shape ``(n_steps + 1, p)``."""

    subject: object
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.grid.n_steps + 1:
            raise ParameterError(
                f"covariate values of shape {v.shape} do not match a grid of "
                f"{self.grid.n_steps + 1} knots")
        if not np.all(np.isfinite(v)):
            raise ParameterError(f"non-finite covariate value for subject {self.subject!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @classmethod
    def empty(cls, subject, grid: TimeGrid) -> "CovariatePath":
        return cls(subject, grid, np.zeros((grid.n_steps + 1, 0)))


@dataclass(frozen=True, eq=False)
class SubjectPath:
    """Observed states ``X(t_k)`` of one subject."""

    subject: object
    grid: TimeGrid
    states: np.ndarray
    reflections: int = 0

    def __post_init__(self):
        s = _frozen_array(self.states, ndim=1)
        if len(s) != self.grid.n_steps + 1:
            raise ParameterError(
                f"{len(s)} states for a grid of {self.grid.n_steps + 1} knots")
        if not np.all(np.isfinite(s)):
            raise ParameterError(f"non-finite state for subject {self.subject!r}")
        object.__setattr__(self, "states", s)

    @property
    def x0(self) -> float:
        return float(self.states[0])

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.states)


@dataclass(frozen=True)
class CovariateModel:
    """Settings for regenerating covariates with :func:`simulate_covariates`."""

    xi_mean: float = 7.0
    xi_sd: float = 1.0
    z0: float = 0.0
    bounds: tuple | None = None
    count: int = 1


@dataclass(frozen=True, eq=False)
class PanelShape:
    """Everything about a panel except the states: grids, initial values, covariates."""

    grids: tuple
    x0s: np.ndarray
    covariates: tuple
    subjects: tuple | None = None
    covariate_model: CovariateModel | None = None

    @property
    def n(self) -> int:
        return len(self.grids)


@dataclass(frozen=True, eq=False)
class Panel:
    """``n`` subjects, each a (path, covariates) pair, under a shared model."""

    spec: ModelSpec
    paths: tuple
    covariates: tuple
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        paths = tuple(self.paths)
        covs = tuple(self.covariates)
        object.__setattr__(self, "paths", paths)
        object.__setattr__(self, "covariates", covs)
        if len(paths) < 1:
            raise ParameterError("a panel needs at least one subject")
        if len(paths) != len(covs):
            raise ParameterError(f"{len(paths)} paths but {len(covs)} covariate paths")
        for path, cov in zip(paths, covs):
            if path.grid != cov.grid:
                raise ParameterError(f"subject {path.subject!r}: path and covariates on different grids")
            if cov.p != self.spec.p:
                raise ParameterError(
                    f"subject {path.subject!r} has {cov.p} covariates, model expects {self.spec.p}")
        if isinstance(self.spec.diffusion, tuple) and len(self.spec.diffusion) != len(paths):
            raise ParameterError(
                f"{len(self.spec.diffusion)} per-subject diffusions for {len(paths)} subjects")

    @property
    def n(self) -> int:
        return len(self.paths)

    @property
    def grids(self) -> tuple:
        return tuple(p.grid for p in self.paths)

    @property
    def x0s(self) -> np.ndarray:
        return np.array([p.x0 for p in self.paths])

    @property
    def subjects(self) -> tuple:
        return tuple(p.subject for p in self.paths)

    @property
    def iid_grid(self) -> bool:
        g = self.paths[0].grid
        return all(p.grid == g for p in self.paths)

    def shape(self, covariate_model: CovariateModel | None = None) -> PanelShape:
        return PanelShape(self.grids, self.x0s, self.covariates, self.subjects, covariate_model)

    def with_spec(self, spec: ModelSpec) -> "Panel":
        return Panel(spec, self.paths, self.covariates)

    def __iter__(self):
        return iter(zip(self.paths, self.covariates))


# ---------------------------------------------------------------------------
# noise


def wiener_increments(seed, subject_index: int, grid: TimeGrid) -> np.ndarray:
    """Wiener increments of subject ``subject_index`` on ``grid``.

    The stream is addressed by ``(seed, PATHS, subject_index)``, so it does not
    depend on how many other subjects are simulated or in which order.
    """
    g = _seeding.rng(seed, _seeding.PATHS, subject_index)
    return g.standard_normal(grid.n_steps) * np.sqrt(grid.step)


def coarsen_increments(dW, factor: int = 2) -> np.ndarray:
    """Sum consecutive blocks of ``factor`` increments (fine -> coarse grid)."""
    dW = np.asarray(dW, dtype=float)
    if dW.shape[-1] % factor:
        raise ParameterError("number of increments must be divisible by the factor")
    return dW.reshape(dW.shape[:-1] + (-1, factor)).sum(axis=-1)


def _first_nonfinite(arr):
    bad = ~np.isfinite(arr)
    row, col = np.argwhere(bad)[0]
    return int(row), int(col)


# ---------------------------------------------------------------------------
# covariates


def simulate_covariates(n: int, grid, xi_mean: float = 7.0, xi_sd: float = 1.0,
                        z0: float = 0.0, seed=0, bounds=None,
                        subjects: Sequence | None = None) -> list[CovariatePath]:
    """Simulate ``dz = xi_i z dt + dW`` by Euler-Maruyama, one path per subject.

    Each subject draws its own ``xi_i ~ N(xi_mean, xi_sd^2)`` and Wiener
    increments from the stream ``(seed, COVARIATES, i)``.

    Parameters
    ----------
    grid : TimeGrid or sequence of n TimeGrids
        Per-subject grids must share the number of steps.
    bounds : (lo, hi), optional
        Compact covariate range.  The state is clamped into it after every
        step (with a logged warning), which keeps the explosive dynamics
        bounded.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if xi_sd < 0:
        raise ParameterError(f"xi_sd must be nonnegative, got {xi_sd}")
    grids = list(grid) if isinstance(grid, (list, tuple)) else [grid] * n
    if len(grids) != n or len({g.n_steps for g in grids}) != 1:
        raise ParameterError("need n grids with a common number of steps")
    m = grids[0].n_steps
    dt = np.array([g.step for g in grids])
    xi = np.empty(n)
    dW = np.empty((n, m))
    for i in range(n):
        g = _seeding.rng(seed, _seeding.COVARIATES, i)
        xi[i] = g.normal(xi_mean, xi_sd)
        dW[i] = g.standard_normal(m) * np.sqrt(dt[i])
    z = np.empty((n, m + 1))
    z[:, 0] = z0
    hits = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(m):
            nxt = z[:, k] + xi * z[:, k] * dt + dW[:, k]
            if bounds is not None:
                clipped = np.clip(nxt, bounds[0], bounds[1])
                hits += int(np.count_nonzero(clipped != nxt))
                nxt = clipped
            z[:, k + 1] = nxt
    if not np.all(np.isfinite(z)):
        i, k = _first_nonfinite(z)
        raise SimulationOverflowError(subjects[i] if subjects else i, k, what="covariate")
    if hits:
        log.info("clamped %d simulated covariate values into %s", hits, tuple(bounds))
    ids = list(subjects) if subjects is not None else list(range(n))
    return [CovariatePath(ids[i], grids[i], z[i][:, None]) for i in range(n)]


def stack_covariates(*groups: Sequence[CovariatePath]) -> list[CovariatePath]:
    """Combine per-covariate lists into multi-covariate paths (subject by subject)."""
    out = []
    for parts in zip(*groups):
        vals = np.concatenate([c.values for c in parts], axis=1)
        out.append(CovariatePath(parts[0].subject, parts[0].grid, vals))
    return out


# ---------------------------------------------------------------------------
# subject paths


def _factor_rows(spec: ModelSpec, x, beta_rows):
    """``b_beta(x)`` row by row; ``x`` has shape (rows,), ``beta_rows`` (rows, q)."""
    fac = spec.drift.factor
    if fac.linear:
        if spec.drift.q == 0:
            return fac.basis_values(x)[:, 0]
        return (fac.basis_values(x) * beta_rows).sum(axis=-1)
    if len(beta_rows) and np.all(beta_rows == beta_rows[0]):
        return fac(x, beta_rows[0])
    return np.array([fac(x[r:r + 1], beta_rows[r])[0] for r in range(len(x))])


def _sigma_rows(diffusions, x):
    first = diffusions[0]
    if all(d is first for d in diffusions):
        return first(x)
    return np.array([float(d(x[r:r + 1])[0]) for r, d in enumerate(diffusions)])


def euler_block(spec: ModelSpec, values, G, x0, dt, dW, diffusions, subjects,
                check: bool = True):
    """Vectorized Euler-Maruyama over independent rows with a common step count.

    Parameters
    ----------
    values : (rows, dim) parameter values, one row per path.
    G : (rows, m + 1, p + 1) covariate features ``(1, g_1(z_1), ...)``.
    x0 : (rows,) initial states.
    dt : step size, scalar or (rows,).
    dW : (rows, m) Wiener increments.
    diffusions : sequence of DiffusionSpec, one per row.
    subjects : row labels used in error messages.
    check : raise on non-finite values; with ``check=False`` they are left in
        place for the caller to handle.

    Returns
    -------
    states : (rows, m + 1)
    reflections : (rows,) number of reflections at the positivity floor.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    rows, m = dW.shape
    xi, beta = spec.split(values)
    # explicit products keep each row independent of the batch shape
    phi = (G[:, :m, :] * xi[:, None, :]).sum(axis=-1)
    x = np.empty((rows, m + 1))
    x[:, 0] = x0
    positive = np.array([d.requires_positive_state for d in diffusions])
    floors = np.array([getattr(d, "floor", 0.0) for d in diffusions])
    if np.any(positive & (x[:, 0] <= 0)):
        r = int(np.flatnonzero(positive & (x[:, 0] <= 0))[0])
        raise DomainError(f"subject {subjects[r]!r}: CKLS diffusion needs a positive initial value")
    refl = np.zeros(rows, dtype=int)
    dt = np.asarray(dt, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(m):
            xk = x[:, k]
            if check and not np.all(np.isfinite(xk)):
                x[:, k + 1:] = np.nan
                break
            b = _factor_rows(spec, xk, beta)
            s = _sigma_rows(diffusions, xk)
            nxt = xk + phi[:, k] * b * dt + s * dW[:, k]
            if positive.any():
                low = positive & (nxt < floors)
                if low.any():
                    nxt = np.where(low, 2 * floors - nxt, nxt)
                    refl += low
            x[:, k + 1] = nxt
    if check and not np.all(np.isfinite(x)):
        r, k = _first_nonfinite(x)
        raise SimulationOverflowError(subjects[r], k)
    if refl.any():
        log.warning("reflected %d states at the positivity floor", int(refl.sum()))
    return x, refl


def _theta_values(spec, theta):
    v = theta.values if isinstance(theta, ThetaVector) else np.asarray(theta, dtype=float)
    if v.shape != (spec.dim,):
        raise ParameterError(f"expected {spec.dim} parameters, got shape {v.shape}")
    return v


def simulate_path(spec: ModelSpec, theta, covariates: CovariatePath, x0: float,
                  grid: TimeGrid, seed=0, *, subject_index: int = 0,
                  increments=None, diffusion=None) -> SubjectPath:
    """Simulate one subject by Euler-Maruyama.

    ``X(t_{k+1}) = X(t_k) + phi(t_k) b(X(t_k)) dt + sigma(X(t_k)) dW_k``.
    Increments come from ``wiener_increments(seed, subject_index, grid)``
    unless given explicitly.
    """
    if covariates.grid != grid:
        raise ParameterError("covariates must be defined on the simulation grid")
    v = _theta_values(spec, theta)
    dW = wiener_increments(seed, subject_index, grid) if increments is None else np.asarray(
        increments, dtype=float)
    if dW.shape != (grid.n_steps,):
        raise ParameterError(f"expected {grid.n_steps} increments, got {dW.shape}")
    diff = diffusion if diffusion is not None else spec.diffusion_for(subject_index)
    G = spec.drift.covariate_features(covariates.values)[None]
    x, refl = euler_block(spec, v[None], G, np.array([x0], dtype=float), grid.step,
                          dW[None], [diff], [covariates.subject])
    return SubjectPath(covariates.subject, grid, x[0], int(refl[0]))


def _as_list(value, n, name):
    if isinstance(value, (list, tuple, np.ndarray)):
        if len(value) != n:
            raise ParameterError(f"{name}: expected {n} entries, got {len(value)}")
        return list(value)
    return [value] * n


def simulate_panel(spec: ModelSpec, theta, n: int, grids, x0s, covariates=None, seed=0,
                   workers: int = 1) -> Panel:
    """Simulate ``n`` subjects; subject ``i`` uses the noise stream ``(seed, i)``.

    Subjects with the same number of steps are simulated together.  ``workers > 1`` splits
    the subjects over threads; the output does not depend on it.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    v = _theta_values(spec, theta)
    grids = _as_list(grids, n, "grids")
    x0s = np.array(_as_list(x0s, n, "x0s"), dtype=float)
    if covariates is None:
        if spec.p:
            raise ParameterError("the model has covariates but none were given")
        covariates = [CovariatePath.empty(i, g) for i, g in enumerate(grids)]
    covariates = _as_list(covariates, n, "covariates")
    for i, (c, g) in enumerate(zip(covariates, grids)):
        if c.grid != g:
            raise ParameterError(f"subject {i}: covariates not on the subject's grid")
    diffs = [spec.diffusion_for(i) for i in range(n)]
    dW = [wiener_increments(seed, i, grids[i]) for i in range(n)]
    ids = [c.subject for c in covariates]

    def run(idx):
        G = np.stack([spec.drift.covariate_features(covariates[i].values) for i in idx])
        dt = np.array([grids[i].step for i in idx])
        x, refl = euler_block(spec, np.repeat(v[None], len(idx), axis=0), G, x0s[idx], dt,
                              np.stack([dW[i] for i in idx]), [diffs[i] for i in idx],
                              [ids[i] for i in idx])
        return {i: SubjectPath(ids[i], grids[i], x[r], int(refl[r])) for r, i in enumerate(idx)}

    groups: dict = {}
    for i, g in enumerate(grids):
        groups.setdefault(g.n_steps, []).append(i)
    chunks = []
    for idx in groups.values():
        idx = np.array(idx)
        chunks.extend(np.array_split(idx, min(max(1, workers), len(idx))))
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    paths = {}
    for part in parts:
        paths.update(part)
    return Panel(spec, tuple(paths[i] for i in range(n)), tuple(covariates))
