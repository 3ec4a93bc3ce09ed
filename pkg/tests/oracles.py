"""Independent reference computations used by the tests."""

import math

import numpy as np
from scipy import stats


def naive_girsanov(states, covariates, step, xi, beta_poly, sigma, transforms=None):
    """Double loop over (step, covariate) with plain floats.

    ``beta_poly`` holds coefficients of ``b(x) = sum_j beta_j x^j``; ``sigma``
    is a callable of the state.
    """
    transforms = transforms or [lambda z: z] * (len(xi) - 1)
    U = 0.0
    V = 0.0
    for k in range(len(states) - 1):
        x = float(states[k])
        phi = xi[0]
        for l in range(1, len(xi)):
            phi += xi[l] * transforms[l - 1](float(covariates[k][l - 1]))
        b = 0.0
        for j, c in enumerate(beta_poly):
            b += c * x**j
        s2 = sigma(x) ** 2
        U += phi * b / s2 * (float(states[k + 1]) - x)
        V += phi * phi * b * b / s2 * step
    return U, V


def naive_suff_stats(states, covariates, step, b, sigma):
    """``A = sum m / s^2 dX`` and ``B = sum m m^T / s^2 dt`` by explicit loops."""
    p = len(covariates[0])
    A = [0.0] * (p + 1)
    B = [[0.0] * (p + 1) for _ in range(p + 1)]
    for k in range(len(states) - 1):
        x = float(states[k])
        m = [b(x)] + [float(covariates[k][l]) * b(x) for l in range(p)]
        s2 = sigma(x) ** 2
        dx = float(states[k + 1]) - x
        for r in range(p + 1):
            A[r] += m[r] / s2 * dx
            for c in range(p + 1):
                B[r][c] += m[r] * m[c] / s2 * step
    return np.array(A), np.array(B)


def exact_ou_path(g, x0, theta, t_end, m):
    """Exact OU transitions ``dX = -theta X dt + dW`` on ``m`` equal steps."""
    dt = t_end / m
    a = math.exp(-theta * dt)
    s = math.sqrt((1 - a * a) / (2 * theta))
    x = np.empty(m + 1)
    x[0] = x0
    z = g.standard_normal(m)
    for k in range(m):
        x[k + 1] = a * x[k] + s * z[k]
    return x


def exact_ou_loglik(x, theta, dt):
    a = np.exp(-theta * dt)
    v = (1 - a * a) / (2 * theta)
    return float(np.sum(stats.norm.logpdf(x[1:], a * x[:-1], np.sqrt(v))))


def gaussian_block_posterior(Q, S, prior_mean, prior_sd):
    """Posterior of ``c`` for ``logL = c.S - c.Q.c / 2`` and independent normal priors."""
    P = np.diag(1.0 / np.asarray(prior_sd) ** 2)
    cov = np.linalg.inv(Q + P)
    mean = cov @ (S + P @ np.asarray(prior_mean))
    return mean, cov


def batch_means_se(x, batches=50):
    """Monte Carlo standard error of the mean of a correlated chain."""
    x = np.asarray(x, dtype=float)
    n = len(x) // batches * batches
    means = x[:n].reshape(batches, -1).mean(axis=1)
    return means.std(ddof=1) / np.sqrt(batches)
