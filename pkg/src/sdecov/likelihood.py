"""Discretized Girsanov statistics, log-likelihood, score and observed information.

For subject ``i`` with left-point (Ito) sums on its grid,

    U_i = sum_k mu_k / sigma_k^2 * (X_{k+1} - X_k),
    V_i = sum_k mu_k^2 / sigma_k^2 * dt,

where ``mu_k = phi(t_k) b(X_k)``, and the log-likelihood against the
null-drift measure is ``sum_i (U_i - V_i / 2)``.

When the factor family is linear in its parameters the drift is
``F_k @ c(theta)`` with ``c = kron(xi, beta)``, so every subject reduces to the
pair ``S_i = sum_k F_k w_k dX_k`` and ``Q_i = sum_k F_k F_k^T w_k dt``
(``w = 1 / sigma^2``), and ``U_i = c.S_i``, ``V_i = c.Q_i.c``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import SingularDiffusionError
from .model import ModelSpec, ThetaVector
from .simulate import CovariatePath, Panel, SubjectPath

__all__ = [
    "GirsanovStats",
    "ScoreResult",
    "InformationMatrix",
    "BoundaryGradientWarning",
    "girsanov_stats",
    "log_likelihood",
    "subject_stats",
    "score",
    "observed_information",
    "get_likelihood",
    "QuadraticLikelihood",
    "PathLikelihood",
]

FD_SCORE_REL_STEP = 1e-6
FD_HESSIAN_REL_STEP = 1e-5


class BoundaryGradientWarning(UserWarning):
    """Gradient requested at a parameter on the boundary of its box."""


@dataclass(frozen=True)
class GirsanovStats:
    U: float
    V: float


@dataclass(frozen=True, eq=False)
class ScoreResult:
    gradient: np.ndarray
    method: str  # "analytic" or "finite-difference"


@dataclass(frozen=True, eq=False)
class InformationMatrix:
    """Observed information ``-l''(theta_hat)``.

    ``precision`` is the matrix used for standardization: the observed
    information when it is positive definite, the identity otherwise
    (``fallback`` set).
    """

    matrix: np.ndarray
    fallback: bool
    eigenvalues: np.ndarray

    @property
    def precision(self) -> np.ndarray:
        if self.fallback:
            return np.eye(len(self.matrix))
        return self.matrix

    def sqrt(self) -> np.ndarray:
        """Symmetric square root of ``precision``."""
        w, v = np.linalg.eigh(self.precision)
        return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T

    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.precision)

    def standardize(self, delta) -> np.ndarray:
        """``precision^{1/2} @ delta`` for one vector or rows of vectors."""
        return np.asarray(delta, dtype=float) @ self.sqrt().T


def _values(theta):
    return theta.values if isinstance(theta, ThetaVector) else np.asarray(theta, dtype=float)


def _subject_arrays(spec: ModelSpec, path: SubjectPath, cov: CovariatePath, i: int):
    if path.grid != cov.grid:
        raise ValueError(f"subject {path.subject!r}: path and covariates on different grids")
    x = path.states[:-1]
    dX = np.diff(path.states)
    sigma = spec.diffusion_for(i)(x)
    if np.any(sigma == 0):
        k = int(np.flatnonzero(sigma == 0)[0])
        raise SingularDiffusionError(
            f"subject {path.subject!r}: diffusion vanishes at step {k}")
    w = 1.0 / sigma**2
    G = spec.drift.covariate_features(cov.values[:-1])
    return x, dX, w, G, path.grid.step


def _drift(spec: ModelSpec, values, G, x):
    xi, beta = spec.split(values)
    return (G @ xi) * spec.drift.factor(x, beta)


def girsanov_stats(spec: ModelSpec, path: SubjectPath, cov: CovariatePath, theta,
                   subject_index: int = 0) -> GirsanovStats:
    """``(U, V)`` of one subject, computed directly from the path."""
    x, dX, w, G, dt = _subject_arrays(spec, path, cov, subject_index)
    mu = _drift(spec, _values(theta), G, x)
    return GirsanovStats(float(np.sum(mu * w * dX)), float(np.sum(mu * mu * w) * dt))


class QuadraticLikelihood:
    """Sufficient-statistic likelihood for factor families linear in beta."""

    method = "analytic"

    def __init__(self, panel: Panel):
        spec = panel.spec
        if not spec.linear:
            raise TypeError("QuadraticLikelihood needs a linear factor family")
        self.spec = spec
        K = spec.n_coefficients
        S_i = np.empty((panel.n, K))
        Q_i = np.empty((panel.n, K, K))
        for i, (path, cov) in enumerate(panel):
            x, dX, w, G, dt = _subject_arrays(spec, path, cov, i)
            F = spec.drift.features(cov.values[:-1], x)
            # overflow surfaces later as a non-finite update
            with np.errstate(over="ignore", invalid="ignore"):
                S_i[i] = F.T @ (w * dX)
                Q_i[i] = (F.T * (w * dt)) @ F
        self.S_i, self.Q_i = S_i, Q_i
        # summation order fixed by subject index
        self.S = S_i.sum(axis=0)
        self.Q = Q_i.sum(axis=0)
        r = spec.drift.factor.width
        self._S2 = self.S.reshape(spec.drift.n_xi, r)
        self._Q4 = self.Q.reshape(spec.drift.n_xi, r, spec.drift.n_xi, r)
        self._one = np.ones(1)

    @property
    def dim(self) -> int:
        return self.spec.dim

    def affine(self, j: int) -> bool:
        return True

    def loglik(self, values) -> float:
        c = self.spec.coefficients(values)
        return float(c @ self.S - 0.5 * (c @ self.Q @ c))

    def loglik_coefficients(self, c) -> np.ndarray:
        """Log-likelihood at rows of identified coefficients."""
        c = np.asarray(c, dtype=float)
        return c @ self.S - 0.5 * np.einsum("...k,kl,...l->...", c, self.Q, c)

    def subject_stats(self, values):
        c = self.spec.coefficients(values)
        return self.S_i @ c, np.einsum("k,ikl,l->i", c, self.Q_i, c)

    def gradient(self, values) -> np.ndarray:
        c = self.spec.coefficients(values)
        J = self.spec.coefficient_jacobian(values)
        return J.T @ (self.S - self.Q @ c)

    def coordinate_quadratic(self, values, j: int):
        """``(a, curv, lin)`` with ``logL(theta_j = t) = const + a t - (curv t^2 + lin t) / 2``."""
        spec = self.spec
        n_xi = spec.drift.n_xi
        xi = values[:n_xi]
        bc = spec.drift.factor.coefficients(values[n_xi:]) if spec.drift.q else self._one
        if j < n_xi:
            # logL is quadratic in the whole xi block given beta
            lin_part = self._S2 @ bc
            M = np.einsum("asbt,s,t->ab", self._Q4, bc, bc)
            row, vec, k = M[j], xi, j
            a = lin_part[j]
        else:
            k = j - n_xi
            lin_part = xi @ self._S2
            M = np.einsum("asbt,a,b->st", self._Q4, xi, xi)
            row, vec = M[k], bc
            a = lin_part[k]
        with np.errstate(over="ignore", invalid="ignore"):
            cross = row @ vec - row[k] * vec[k]
        return float(a), float(row[k]), float(2.0 * cross)


class PathLikelihood:
    """Direct path evaluation for arbitrary factor families."""

    method = "finite-difference"

    def __init__(self, panel: Panel):
        self.spec = panel.spec
        self.subjects = [_subject_arrays(self.spec, path, cov, i)
                         for i, (path, cov) in enumerate(panel)]

    @property
    def dim(self) -> int:
        return self.spec.dim

    def affine(self, j: int) -> bool:
        return j < self.spec.drift.n_xi

    def subject_stats(self, values):
        U = np.empty(len(self.subjects))
        V = np.empty(len(self.subjects))
        for i, (x, dX, w, G, dt) in enumerate(self.subjects):
            mu = _drift(self.spec, values, G, x)
            U[i] = np.sum(mu * w * dX)
            V[i] = np.sum(mu * mu * w) * dt
        return U, V

    def loglik(self, values) -> float:
        U, V = self.subject_stats(np.asarray(values, dtype=float))
        return float(np.sum(U - 0.5 * V))

    def gradient(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        g = np.empty(len(v))
        for j in range(len(v)):
            h = FD_SCORE_REL_STEP * max(1.0, abs(v[j]))
            up, dn = v.copy(), v.copy()
            up[j] += h
            dn[j] -= h
            g[j] = (self.loglik(up) - self.loglik(dn)) / (2 * h)
        return g

    def coordinate_quadratic(self, values, j: int):
        if not self.affine(j):
            return None
        v = np.array(values, dtype=float)
        v[j] = 0.0
        xi, beta = self.spec.split(v)
        a = curv = lin = 0.0
        for x, dX, w, G, dt in self.subjects:
            b = self.spec.drift.factor(x, beta)
            d = G[:, j] * b
            mu0 = (G @ xi) * b
            a += np.sum(d * w * dX)
            curv += np.sum(d * d * w) * dt
            lin += 2.0 * np.sum(d * mu0 * w) * dt
        return float(a), float(curv), float(lin)


def get_likelihood(panel: Panel):
    """Likelihood evaluator for ``panel``, built once and cached on the panel."""
    lik = panel._cache.get("likelihood")
    if lik is None:
        lik = QuadraticLikelihood(panel) if panel.spec.linear else PathLikelihood(panel)
        panel._cache["likelihood"] = lik
    return lik


def log_likelihood(panel: Panel, theta) -> float:
    """``sum_i (U_i - V_i / 2)``, the log density against the null-drift law."""
    return get_likelihood(panel).loglik(_values(theta))


def subject_stats(panel: Panel, theta) -> list[GirsanovStats]:
    U, V = get_likelihood(panel).subject_stats(_values(theta))
    return [GirsanovStats(float(u), float(v)) for u, v in zip(U, V)]


def score(panel: Panel, theta) -> ScoreResult:
    """Gradient of the log-likelihood.

    Analytic for linear factor families, central differences with step
    ``1e-6 * max(1, |theta_j|)`` otherwise; ``method`` says which.
    """
    if isinstance(theta, ThetaVector) and theta.on_boundary().any():
        names = [n for n, b in zip(theta.names, theta.on_boundary()) if b]
        warnings.warn(f"score evaluated on the boundary for {names}", BoundaryGradientWarning,
                      stacklevel=2)
    lik = get_likelihood(panel)
    return ScoreResult(lik.gradient(_values(theta)), lik.method)


def observed_information(panel: Panel, theta_hat, rtol: float = 1e-6) -> InformationMatrix:
    """``-l''(theta_hat)`` by symmetric differences of the score.

    Falls back to the identity when ``theta_hat`` is None or the matrix is not
    positive definite (smallest eigenvalue at most ``rtol`` times the largest).
    """
    lik = get_likelihood(panel)
    d = lik.dim
    if theta_hat is None:
        return InformationMatrix(np.zeros((d, d)), True, np.zeros(d))
    v = _values(theta_hat)
    H = np.empty((d, d))
    for j in range(d):
        h = FD_HESSIAN_REL_STEP * max(1.0, abs(v[j]))
        up, dn = v.copy(), v.copy()
        up[j] += h
        dn[j] -= h
        H[:, j] = (lik.gradient(up) - lik.gradient(dn)) / (2 * h)
    info = -0.5 * (H + H.T)
    eig = np.linalg.eigvalsh(info)
    top = np.max(np.abs(eig))
    fallback = bool(not np.all(np.isfinite(info)) or top == 0 or eig[0] <= rtol * top)
    return InformationMatrix(info, fallback, eig)
