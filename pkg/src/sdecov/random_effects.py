"""Gaussian random-effects marginal likelihood.

Each subject carries its own coefficient vector ``xi_i ~ N(mu, Sigma)``.  With
``m(t) = (b(x), g_1(z_1) b(x), ..., g_p(z_p) b(x))`` the subject likelihood is
``exp(xi.A_i - xi.B_i.xi / 2)``, where

    A_i = sum_k m_k / sigma_k^2 * dX_k,    B_i = sum_k m_k m_k^T / sigma_k^2 * dt,

and integrating ``xi_i`` out gives a closed form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ParameterError, SingularDiffusionError
from .estimation import coordinate_ascent
from .model import ModelSpec
from .simulate import CovariatePath, Panel, SubjectPath

log = logging.getLogger(__name__)

__all__ = [
    "RESuffStats",
    "REParams",
    "REFit",
    "re_suff_stats",
    "panel_suff_stats",
    "re_marginal_loglik",
    "re_subject_terms",
    "fixed_effects_loglik",
    "fit_random_effects",
]

JITTER = 1e-12


@dataclass(frozen=True, eq=False)
class RESuffStats:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if B.shape != (len(A), len(A)):
            raise ParameterError(f"B has shape {B.shape}, expected {(len(A), len(A))}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", 0.5 * (B + B.T))


@dataclass(frozen=True, eq=False)
class REParams:
    """``theta = (mu, Sigma, beta)``."""

    mu: np.ndarray
    Sigma: np.ndarray
    beta: np.ndarray = np.zeros(0)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        S = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        if S.shape != (len(mu), len(mu)):
            raise ParameterError(f"Sigma has shape {S.shape}, expected {(len(mu), len(mu))}")
        if not np.allclose(S, S.T, rtol=1e-12, atol=1e-14):
            raise ParameterError("Sigma must be symmetric")
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise ParameterError("Sigma must be positive definite") from None
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "Sigma", 0.5 * (S + S.T))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).reshape(-1))

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "Sigma": self.Sigma.tolist(), "beta": self.beta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "REParams":
        return cls(d["mu"], d["Sigma"], d.get("beta", []))


def re_suff_stats(spec: ModelSpec, path: SubjectPath, cov: CovariatePath, beta=(),
                  subject_index: int = 0) -> RESuffStats:
    """``(A_i, B_i)`` for one subject at factor parameter ``beta``."""
    if path.grid != cov.grid:
        raise ParameterError(f"subject {path.subject!r}: path and covariates on different grids")
    x = path.states[:-1]
    sigma = spec.diffusion_for(subject_index)(x)
    if np.any(sigma == 0):
        k = int(np.flatnonzero(sigma == 0)[0])
        raise SingularDiffusionError(f"subject {path.subject!r}: diffusion vanishes at step {k}")
    w = 1.0 / sigma**2
    b = spec.drift.factor(x, np.asarray(beta, dtype=float))
    m = spec.drift.covariate_features(cov.values[:-1]) * b[:, None]
    A = m.T @ (w * np.diff(path.states))
    B = (m.T * (w * path.grid.step)) @ m
    return RESuffStats(A, B)


def panel_suff_stats(panel: Panel, beta=()) -> list[RESuffStats]:
    return [re_suff_stats(panel.spec, p, c, beta, i) for i, (p, c) in enumerate(panel)]


def _chol(M):
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return np.linalg.cholesky(M + JITTER * np.eye(len(M)))


def _term_stable(st: RESuffStats, mu, L) -> float:
    # I + L^T B L shares its determinant with I + B Sigma and is symmetric PD
    M = np.eye(len(mu)) + L.T @ st.B @ L
    C = _chol(M)
    r = st.A - st.B @ mu
    y = linalg.solve_triangular(C, L.T @ r, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(C)))
    return float(-0.5 * logdet + mu @ st.A - 0.5 * mu @ st.B @ mu + 0.5 * y @ y)


def _term_inverse(st: RESuffStats, mu, Sigma) -> float:
    d = len(mu)
    C = _chol(st.B)
    BinvA = linalg.cho_solve((C, True), st.A)
    M = np.eye(d) + st.B @ Sigma
    sign, logdet = np.linalg.slogdet(M)
    if sign <= 0:
        raise ParameterError("I + B Sigma has a nonpositive determinant")
    delta = mu - BinvA
    quad = delta @ np.linalg.solve(M, st.B @ delta)
    return float(-0.5 * logdet - 0.5 * quad + 0.5 * st.A @ BinvA)


def re_subject_terms(stats, params: REParams, form: str = "stable") -> np.ndarray:
    """Per-subject marginal log-likelihood terms.

    ``form="stable"`` uses
    ``-log det(I + B Sigma)/2 + mu.A - mu.B.mu/2 + r.(I + Sigma B)^{-1} Sigma.r/2``
    with ``r = A - B mu``, which never inverts ``B``.  ``form="inverse"``
    evaluates the textbook expression built on ``B^{-1} A`` and needs every
    ``B_i`` nonsingular.
    """
    mu, Sigma = params.mu, params.Sigma
    if form == "stable":
        L = np.linalg.cholesky(Sigma)
        return np.array([_term_stable(s, mu, L) for s in stats])
    if form == "inverse":
        return np.array([_term_inverse(s, mu, Sigma) for s in stats])
    raise ParameterError(f"unknown form {form!r}")


def re_marginal_loglik(panel: Panel, params: REParams, form: str = "stable",
                       return_terms: bool = False):
    """Marginal log-likelihood with the random effects integrated out.

    Summed in subject order.  With ``return_terms`` the per-subject terms are
    returned as well.
    """
    spec = panel.spec
    if len(params.mu) != spec.drift.n_xi:
        raise ParameterError(f"mu has {len(params.mu)} entries, model has {spec.drift.n_xi}")
    if len(params.beta) != spec.drift.q:
        raise ParameterError(f"beta has {len(params.beta)} entries, model has {spec.drift.q}")
    terms = re_subject_terms(panel_suff_stats(panel, params.beta), params, form)
    total = float(np.sum(terms))
    return (total, terms) if return_terms else total


def fixed_effects_loglik(stats, xi) -> float:
    """``sum_i (xi.A_i - xi.B_i.xi / 2)``: every subject shares ``xi``."""
    xi = np.asarray(xi, dtype=float)
    return float(sum(xi @ s.A - 0.5 * xi @ s.B @ xi for s in stats))


# ---------------------------------------------------------------------------
# experimental fitting


@dataclass(eq=False)
class REFit:
    params: REParams
    loglik: float
    sweeps: int
    converged: bool


def _unpack(x, k, q):
    mu = x[:k]
    L = np.zeros((k, k))
    L[np.tril_indices(k)] = x[k:k + k * (k + 1) // 2]
    L[np.diag_indices(k)] = np.exp(np.diag(L))
    beta = x[k + k * (k + 1) // 2:]
    return mu, L @ L.T, beta


def fit_random_effects(panel: Panel, init: REParams | None = None, tol: float = 1e-6,
                       max_sweeps: int = 200, mu_bound: float = 10.0,
                       log_sd_bounds=(-8.0, 4.0), offdiag_bound: float = 10.0) -> REFit:
    """Maximize the marginal likelihood over ``mu``, ``log-Cholesky(Sigma)`` and ``beta``.

    Experimental.  Uses generic coordinate ascent (bounded 1-D searches)
    because no closed-form coordinate updates are available; expect only a
    local maximum.
    """
    spec = panel.spec
    k, q = spec.drift.n_xi, spec.drift.q
    if init is None:
        init = REParams(np.zeros(k), np.eye(k), np.zeros(q))
    Lc = np.linalg.cholesky(init.Sigma)
    x0 = np.concatenate([init.mu, np.where(np.eye(k, dtype=bool), np.log(np.diag(Lc)), Lc)
                         [np.tril_indices(k)], init.beta])
    lo, hi = [-mu_bound] * k, [mu_bound] * k
    for r, c in zip(*np.tril_indices(k)):
        lo.append(log_sd_bounds[0] if r == c else -offdiag_bound)
        hi.append(log_sd_bounds[1] if r == c else offdiag_bound)
    for j in range(q):
        lo.append(spec.bounds[k + j][0])
        hi.append(spec.bounds[k + j][1])
    fixed_stats = panel_suff_stats(panel) if q == 0 else None

    def objective(x):
        mu, Sigma, beta = _unpack(x, k, q)
        try:
            par = REParams(mu, Sigma, beta)
        except ParameterError:
            return -np.inf
        stats = fixed_stats if fixed_stats is not None else panel_suff_stats(panel, beta)
        return float(np.sum(re_subject_terms(stats, par)))

    x, value, sweeps, ok = coordinate_ascent(objective, x0, lo, hi, tol, max_sweeps)
    mu, Sigma, beta = _unpack(x, k, q)
    if not ok:
        log.warning("random-effects fit stopped after %d sweeps", sweeps)
    return REFit(REParams(mu, Sigma, beta), value, sweeps, ok)
