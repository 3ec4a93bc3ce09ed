"""Block-relaxation (cyclic coordinate ascent) maximum likelihood."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import optimize

from . import _seeding
from .errors import NumericalError, RefusalError
from .likelihood import get_likelihood
from .model import ModelSpec, ThetaVector
from .simulate import Panel

log = logging.getLogger(__name__)

__all__ = [
    "CoordinateUpdate",
    "MLEResult",
    "GridSearchResult",
    "conditional_update",
    "block_relaxation_mle",
    "grid_search_mle",
    "random_init",
    "coordinate_ascent",
]

MAX_SWEEPS = 10_000
ROOT_TOL = 1e-10


class CoordinateUpdate(NamedTuple):
    value: float
    flat: bool = False
    clamped: bool = False
    method: str = "closed-form"


@dataclass(eq=False)
class MLEResult:
    """Outcome of :func:`block_relaxation_mle`.

    ``loglik_trace[0]`` is the log-likelihood at the initial value, followed
    by one entry per completed sweep.
    """

    theta_hat: ThetaVector
    iterations: int
    final_move: float
    loglik_trace: list
    converged: bool
    tol: float
    flat_coordinates: set = field(default_factory=set)
    clamped_coordinates: set = field(default_factory=set)

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]


@dataclass(eq=False)
class GridSearchResult:
    theta: ThetaVector
    loglik: float
    flat: bool
    cell: np.ndarray


def _values(theta):
    return theta.values if isinstance(theta, ThetaVector) else np.asarray(theta, dtype=float)


def _closed_form(lik, v, j, lo, hi) -> CoordinateUpdate:
    a, curv, lin = lik.coordinate_quadratic(v, j)
    if not (np.isfinite(a) and np.isfinite(curv) and np.isfinite(lin)):
        raise NumericalError(f"non-finite score coefficients for coordinate {j}")
    if curv <= 0.0:
        return CoordinateUpdate(float(v[j]), flat=True)
    t = (a - 0.5 * lin) / curv
    if not np.isfinite(t):
        raise NumericalError(f"non-finite update for coordinate {j}")
    c = min(max(t, lo), hi)
    return CoordinateUpdate(float(c), clamped=c != t)


def _newton(lik, v, j, lo, hi) -> CoordinateUpdate:
    """Safeguarded Newton on the coordinate score with bisection fallback."""
    w = np.array(v, dtype=float)

    def f(t):
        w[j] = t
        return lik.loglik(w)

    def g(t):
        w[j] = t
        out = lik.gradient(w)[j]
        if not np.isfinite(out):
            raise NumericalError(f"non-finite score for coordinate {j} at {t}")
        return out

    cur = float(v[j])
    g_lo, g_hi = g(lo), g(hi)
    if g_lo > 0 > g_hi:
        a, b = lo, hi
        t = min(max(cur, lo), hi)
        for _ in range(200):
            gt = g(t)
            if gt == 0:
                break
            if gt > 0:
                a = t
            else:
                b = t
            h = 1e-6 * max(1.0, abs(t))
            slope = (g(t + h) - g(t - h)) / (2 * h)
            nxt = t - gt / slope if slope < 0 else 0.5 * (a + b)
            if not (a < nxt < b):
                nxt = 0.5 * (a + b)
            if abs(nxt - t) <= ROOT_TOL * max(1.0, abs(t)) or b - a <= ROOT_TOL:
                t = nxt
                break
            t = nxt
        cand, clamped = t, False
    elif g_lo <= 0 and g_hi <= 0:
        cand, clamped = lo, True
    elif g_lo >= 0 and g_hi >= 0:
        cand, clamped = hi, True
    else:
        cand, clamped = (lo, True) if f(lo) >= f(hi) else (hi, True)
    if f(cand) < f(cur):
        return CoordinateUpdate(cur, method="newton")
    return CoordinateUpdate(float(cand), clamped=clamped, method="newton")


def conditional_update(panel: Panel, theta, j: int, lik=None) -> CoordinateUpdate:
    """Maximize the log-likelihood over coordinate ``j`` with the others fixed.

    Closed form when the drift is affine in ``theta_j`` (the score is then
    linear in it); a zero curvature leaves the value unchanged and sets
    ``flat``.  Other coordinates use a safeguarded Newton iteration on the
    bounds.  The result is clamped to the coordinate's bounds.
    """
    lik = lik or get_likelihood(panel)
    v = _values(theta)
    lo, hi = panel.spec.bounds[j]
    if lik.affine(j):
        return _closed_form(lik, v, j, lo, hi)
    return _newton(lik, v, j, lo, hi)


def block_relaxation_mle(panel: Panel, init, tol: float = 1e-5,
                         max_sweeps: int = MAX_SWEEPS) -> MLEResult:
    """Cyclic coordinate ascent until a full sweep moves less than ``tol``.

    Coordinates are swept in their declared order.  Hitting ``max_sweeps``
    returns with ``converged=False`` instead of raising.
    """
    spec = panel.spec
    lik = get_likelihood(panel)
    if not isinstance(init, ThetaVector):
        init = spec.theta(init)
    v = init.values.copy()
    trace = [lik.loglik(v)]
    flat, clamped = set(), set()
    move = np.inf
    sweeps = 0
    while sweeps < max_sweeps:
        old = v.copy()
        for j in range(len(v)):
            upd = conditional_update(panel, v, j, lik)
            v[j] = upd.value
            if upd.flat:
                flat.add(j)
            if upd.clamped:
                clamped.add(j)
        sweeps += 1
        trace.append(lik.loglik(v))
        move = float(np.linalg.norm(v - old))
        if move <= tol:
            break
    converged = move <= tol
    if not converged:
        log.warning("block relaxation stopped after %d sweeps (move %.3g > %.3g)",
                    sweeps, move, tol)
    return MLEResult(init.with_values(v), sweeps, move, trace, converged, tol, flat, clamped)


def random_init(spec: ModelSpec, seed) -> ThetaVector:
    """Independent standard normal start, clamped to the bounds."""
    g = _seeding.rng(seed, _seeding.INIT)
    return spec.clamp(g.standard_normal(spec.dim))


def grid_search_mle(panel: Panel, resolution: int, bounds=None,
                    chunk: int = 2_000_000) -> GridSearchResult:
    """Exhaustive maximizer over a regular grid on the parameter box.

    Test oracle only; refuses more than three dimensions.  ``resolution`` is
    the number of points per axis; ``bounds`` defaults to the model bounds.
    A constant surface returns the first grid point with ``flat`` set.
    """
    spec = panel.spec
    d = spec.dim
    if d > 3:
        raise RefusalError(f"grid search is exponential in dimension; refusing d={d} > 3")
    if resolution < 2:
        raise RefusalError("resolution must be at least 2")
    bounds = spec.bounds if bounds is None else tuple(tuple(b) for b in bounds)
    axes = [np.linspace(lo, hi, resolution) for lo, hi in bounds]
    lik = get_likelihood(panel)
    total = resolution ** d
    best, best_idx, worst = -np.inf, 0, np.inf
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        sub = np.unravel_index(idx, (resolution,) * d)
        pts = np.stack([axes[a][sub[a]] for a in range(d)], axis=1)
        if hasattr(lik, "loglik_coefficients"):
            xi, beta = spec.split(pts)
            if spec.drift.q:
                bc = np.stack([spec.drift.factor.coefficients(b) for b in beta])
            else:
                bc = np.ones((len(pts), 1))
            c = (xi[:, :, None] * bc[:, None, :]).reshape(len(pts), -1)
            ll = lik.loglik_coefficients(c)
        else:
            ll = np.array([lik.loglik(p) for p in pts])
        k = int(np.argmax(ll))
        if ll[k] > best:
            best, best_idx = float(ll[k]), int(idx[k])
        worst = min(worst, float(np.min(ll)))
    flat = best - worst <= 1e-12 * max(1.0, abs(best))
    if flat:
        best_idx = 0
    sub = np.unravel_index(best_idx, (resolution,) * d)
    theta = spec.theta([axes[a][sub[a]] for a in range(d)])
    cell = np.array([(hi - lo) / (resolution - 1) for lo, hi in bounds])
    return GridSearchResult(theta, lik.loglik(theta.values), bool(flat), cell)


def coordinate_ascent(objective: Callable[[np.ndarray], float], x0, lower, upper,
                      tol: float = 1e-6, max_sweeps: int = 500):
    """Generic cyclic coordinate ascent with bounded 1-D Brent searches.

    Used where no closed-form coordinate update exists.  Returns
    ``(x, value, sweeps, converged)``.
    """
    x = np.array(x0, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    value = objective(x)
    for sweep in range(1, max_sweeps + 1):
        old = x.copy()
        for j in range(len(x)):
            def neg(t, j=j):
                y = x.copy()
                y[j] = t
                out = objective(y)
                return -out if np.isfinite(out) else np.inf
            res = optimize.minimize_scalar(neg, bounds=(lower[j], upper[j]), method="bounded",
                                           options={"xatol": tol * 1e-2})
            if -res.fun >= value:
                x[j], value = res.x, -res.fun
        if np.linalg.norm(x - old) <= tol:
            return x, value, sweep, True
    return x, value, max_sweeps, False
