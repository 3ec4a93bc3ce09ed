import numpy as np
import pytest
from hypothesis import given, strategies as st

from sdecov.errors import ParameterError
from sdecov.model import Constant, DriftSpec, ModelSpec, TimeGrid, factor_from_name
from sdecov.random_effects import (REParams, RESuffStats, fit_random_effects, fixed_effects_loglik,
                                   panel_suff_stats, re_marginal_loglik, re_subject_terms)
from sdecov.simulate import Panel, simulate_covariates, simulate_panel

from conftest import panel_from_states
from oracles import naive_suff_stats


@pytest.fixture(scope="module")
def re_panel():
    spec = ModelSpec(DriftSpec(("identity",), factor_from_name("identity"), ((-1.0, 1.0),)),
                     Constant(0.8))
    grid = TimeGrid(1.0, 40)
    covs = simulate_covariates(6, grid, seed=21, bounds=(-1.0, 1.0))
    return simulate_panel(spec, (-1.0, 0.5), 6, grid, 1.0, covs, seed=22)


def _params():
    return REParams([-0.8, 0.3], [[0.5, 0.1], [0.1, 0.3]])


def test_unit_factor_telescopes():
    spec = ModelSpec(DriftSpec((), factor_from_name("unit")), Constant(1.0))
    x = np.array([[0.3, 1.1, -0.4, 0.9, 2.0]])
    st_ = panel_suff_stats(panel_from_states(spec, x, t_end=2.0))[0]
    np.testing.assert_allclose(st_.A, [x[0, -1] - x[0, 0]], atol=1e-15)
    np.testing.assert_allclose(st_.B, [[2.0]], rtol=1e-14)


def test_matches_naive_loop_and_is_psd(re_panel):
    for i, (path, cov) in enumerate(re_panel):
        st_ = panel_suff_stats(re_panel)[i]
        A, B = naive_suff_stats(path.states, cov.values, path.grid.step,
                                lambda x: x, lambda x: 0.8)
        np.testing.assert_allclose(st_.A, A, rtol=1e-12)
        np.testing.assert_allclose(st_.B, B, rtol=1e-12)
        assert np.linalg.eigvalsh(st_.B).min() >= -1e-12


def test_degenerate_sigma_recovers_fixed_effects(re_panel):
    stats = panel_suff_stats(re_panel)
    mu = np.array([-0.8, 0.3])
    val = re_marginal_loglik(re_panel, REParams(mu, 1e-10 * np.eye(2)))
    assert abs(val - fixed_effects_loglik(stats, mu)) < 1e-6


def test_monte_carlo_oracle(re_panel):
    params = _params()
    stats = panel_suff_stats(re_panel)
    terms = re_subject_terms(stats, params)
    g = np.random.default_rng(0)
    xi = g.multivariate_normal(params.mu, params.Sigma, size=400_000)
    for s, t in zip(stats, terms):
        w = np.exp(xi @ s.A - 0.5 * np.einsum("ij,jk,ik->i", xi, s.B, xi))
        est = np.log(w.mean())
        se = w.std() / (np.sqrt(len(w)) * w.mean())
        assert abs(est - t) < 3 * se + 1e-12


def test_forms_agree(re_panel):
    a = re_marginal_loglik(re_panel, _params(), form="stable")
    b = re_marginal_loglik(re_panel, _params(), form="inverse")
    assert abs(a - b) < 1e-8


def test_determinant_positive_on_random_instances():
    g = np.random.default_rng(5)
    for _ in range(100):
        k = g.integers(1, 4)
        R = g.normal(size=(k, k))
        B = R @ R.T
        C = g.normal(size=(k, k))
        Sigma = C @ C.T + 1e-3 * np.eye(k)
        assert np.linalg.det(np.eye(k) + B @ Sigma) > 0
        st_ = RESuffStats(g.normal(size=k), B)
        assert np.isfinite(re_subject_terms([st_], REParams(np.zeros(k), Sigma))[0])


def test_refinement_keeps_unit_factor_information():
    spec = ModelSpec(DriftSpec((), factor_from_name("unit")), Constant(1.0))
    fine = simulate_panel(spec, (0.3,), 1, TimeGrid(1.0, 64), 1.0, seed=4)
    for level in (8, 16, 32, 64):
        states = fine.paths[0].states[:: 64 // level]
        B = panel_suff_stats(panel_from_states(spec, states))[0].B[0, 0]
        assert abs(B - 1.0) < 1e-12


def test_refinement_can_lower_left_point_information():
    # B is a left-point Riemann sum, so adding a knot where b(x) is small lowers it
    spec = ModelSpec(DriftSpec((), factor_from_name("identity")), Constant(1.0))
    coarse = panel_suff_stats(panel_from_states(spec, [1.0, 1.0]))[0].B[0, 0]
    fine = panel_suff_stats(panel_from_states(spec, [1.0, 0.0, 1.0]))[0].B[0, 0]
    assert (coarse, fine) == (1.0, 0.5)


def test_information_converges_under_refinement():
    spec = ModelSpec(DriftSpec((), factor_from_name("identity")), Constant(1.0))
    fine = simulate_panel(spec, (0.3,), 1, TimeGrid(1.0, 4096), 1.0, seed=4)
    x = fine.paths[0].states
    ref = np.trapezoid(x**2, dx=1 / 4096) if hasattr(np, "trapezoid") else np.trapz(x**2, dx=1 / 4096)
    errs = [abs(panel_suff_stats(panel_from_states(spec, x[:: 4096 // m]))[0].B[0, 0] - ref)
            for m in (16, 64, 256, 1024)]
    assert errs[-1] < errs[0]


def test_subject_order_only_permutes_terms(re_panel):
    total, terms = re_marginal_loglik(re_panel, _params(), return_terms=True)
    order = [3, 0, 5, 1, 4, 2]
    perm = Panel(re_panel.spec, tuple(re_panel.paths[i] for i in order),
                 tuple(re_panel.covariates[i] for i in order))
    total2, terms2 = re_marginal_loglik(perm, _params(), return_terms=True)
    np.testing.assert_allclose(terms2, terms[order], rtol=1e-13)
    assert abs(total - total2) < 1e-10 * max(1.0, abs(total))


@given(st.floats(-2, 2), st.floats(0.01, 3))
def test_scalar_closed_form(mu, s2):
    A, B = 0.7, 1.9
    got = re_subject_terms([RESuffStats([A], [[B]])], REParams([mu], [[s2]]))[0]
    # xi A - B xi^2 / 2 under N(mu, s2): completing the square
    prec = 1 / s2 + B
    m = (A + mu / s2) / prec
    ref = -0.5 * np.log(s2 * prec) + 0.5 * prec * m**2 - 0.5 * mu**2 / s2
    assert abs(got - ref) < 1e-10 * max(1.0, abs(ref))


@pytest.mark.parametrize("Sigma", [[[1.0, 2.0], [2.0, 1.0]], [[1.0, 0.1], [0.2, 1.0]],
                                   [[-1.0, 0.0], [0.0, 1.0]]])
def test_invalid_sigma_rejected(Sigma):
    with pytest.raises(ParameterError):
        REParams([0.0, 0.0], Sigma)


def test_dimension_mismatch_rejected(re_panel):
    with pytest.raises(ParameterError):
        re_marginal_loglik(re_panel, REParams([0.0], [[1.0]]))


def test_fit_improves_likelihood(re_panel):
    init = REParams([0.0, 0.0], np.eye(2))
    fit = fit_random_effects(re_panel, init, tol=1e-4, max_sweeps=20)
    assert fit.loglik >= re_marginal_loglik(re_panel, init) - 1e-9
    assert abs(fit.loglik - re_marginal_loglik(re_panel, fit.params)) < 1e-8
