import numpy as np
import pytest
from hypothesis import given, strategies as st

from sdecov import _seeding
from sdecov.errors import DomainError, ParameterError, SimulationOverflowError
from sdecov.model import CKLS, Constant, DriftSpec, ModelSpec, TimeGrid, factor_from_name
from sdecov.presets import product_panel, product_spec
from sdecov.simulate import (CovariatePath, coarsen_increments, simulate_covariates,
                             simulate_panel, simulate_path, wiener_increments)

from conftest import ou_spec


def test_covariates_default_settings():
    covs = simulate_covariates(20, TimeGrid(1.0, 100), 7.0, 1.0, 0.0, seed=1)
    assert len(covs) == 20
    for c in covs:
        assert c.values.shape == (101, 1)
        assert np.all(np.isfinite(c.values))


def test_covariate_single_step_is_the_increment():
    dt = 0.01
    grid = TimeGrid(dt, 1)
    c = simulate_covariates(1, grid, z0=0.0, seed=5)[0]
    g = _seeding.rng(5, _seeding.COVARIATES, 0)
    g.normal(7.0, 1.0)
    dW = g.standard_normal(1) * np.sqrt(dt)
    assert c.values[1, 0] == dW[0]


def test_covariate_mean_at_zero_start():
    # E z(t) = 0 when z(0) = 0; 10^4 independent streams
    grid = TimeGrid(0.2, 20)
    covs = simulate_covariates(10_000, grid, 7.0, 1.0, 0.0, seed=2)
    zT = np.array([c.values[-1, 0] for c in covs])
    assert abs(zT.mean()) < 3 * zT.std(ddof=1) / np.sqrt(len(zT))


def test_covariate_overflow_names_subject_and_step():
    with pytest.raises(SimulationOverflowError) as exc:
        simulate_covariates(2, TimeGrid(1000.0, 2000), 7.0, 0.0, 1.0, seed=0, subjects=["a", "b"])
    assert "'a'" in str(exc.value) and "step" in str(exc.value)


def test_covariate_clamping(caplog):
    with caplog.at_level("INFO", logger="sdecov"):
        covs = simulate_covariates(3, TimeGrid(1.0, 100), seed=0, bounds=(-1.0, 1.0))
    assert max(np.abs(c.values).max() for c in covs) <= 1.0
    assert "clamped" in caplog.text


def test_null_drift_path_is_brownian():
    spec = product_spec()
    grid = TimeGrid(1.0, 100)
    cov = CovariatePath(0, grid, np.zeros((101, 1)))
    path = simulate_path(spec, np.zeros(4), cov, 0.0, grid, seed=9)
    dW = wiener_increments(9, 0, grid)
    assert path.states[0] == 0.0
    np.testing.assert_array_equal(path.states[1:], np.cumsum(dW))


@given(st.floats(-5, 5), st.floats(0.1, 3.0), st.integers(0, 2**31))
def test_null_drift_reduction(x0, sigma, seed):
    spec = ModelSpec(DriftSpec((), "linear"), Constant(sigma))
    grid = TimeGrid(1.0, 30)
    path = simulate_path(spec, [0.0, 0.0], CovariatePath.empty(0, grid), x0, grid, seed=seed)
    dW = wiener_increments(seed, 0, grid)
    expected = x0 + np.concatenate([[0.0], np.cumsum(sigma * dW)])
    np.testing.assert_allclose(path.states, expected, rtol=0, atol=1e-12)
    assert path.states[0] == x0


def test_true_parameters_give_finite_path():
    panel, _ = product_panel(3, n=1)
    assert panel.paths[0].states.shape == (101,)
    assert np.all(np.isfinite(panel.paths[0].states))


def test_ou_mean():
    # E X(1) = x0 exp(-theta) for dX = -theta X dt + dW; Euler bias is O(dt)
    theta, x0 = 0.7, 2.0
    spec = ou_spec()
    grid = TimeGrid(1.0, 200)
    n = 100_000
    panel = simulate_panel(spec, [theta], n, grid, x0, seed=17)
    xT = np.array([p.states[-1] for p in panel.paths])
    se = xT.std(ddof=1) / np.sqrt(n)
    assert abs(xT.mean() - x0 * np.exp(-theta)) < 3 * se


def test_panel_iid_and_singleton():
    spec = product_spec()
    grid = TimeGrid(1.0, 100)
    covs = simulate_covariates(20, grid, seed=1, bounds=(-1.0, 1.0))
    panel = simulate_panel(spec, (1, -1, 2, -2), 20, grid, 0.0, covs, seed=2)
    assert panel.n == 20 and panel.iid_grid
    single = simulate_panel(spec, (1, -1, 2, -2), 1, grid, 0.0, covs[:1], seed=2)
    path = simulate_path(spec, (1, -1, 2, -2), covs[0], 0.0, grid, seed=2)
    np.testing.assert_array_equal(single.paths[0].states, path.states)


def test_panel_thread_count_does_not_matter():
    spec = product_spec()
    grids = [TimeGrid(t, 100) for t in np.linspace(0.8, 1.2, 13)]
    covs = [simulate_covariates(1, g, seed=(4, i), bounds=(-1, 1), subjects=[i])[0]
            for i, g in enumerate(grids)]
    a = simulate_panel(spec, (1, -1, 2, -2), 13, grids, 0.5, covs, seed=8, workers=1)
    b = simulate_panel(spec, (1, -1, 2, -2), 13, grids, 0.5, covs, seed=8, workers=4)
    for p, q in zip(a.paths, b.paths):
        assert p.states.tobytes() == q.states.tobytes()


def test_subject_stream_independent_of_panel_size():
    spec = ou_spec()
    grid = TimeGrid(1.0, 50)
    a = simulate_panel(spec, [1.0], 3, grid, 1.0, seed=4)
    b = simulate_panel(spec, [1.0], 7, grid, 1.0, seed=4)
    for i in range(3):
        np.testing.assert_array_equal(a.paths[i].states, b.paths[i].states)


def test_grid_refinement_strong_order():
    spec = ModelSpec(DriftSpec((), factor_from_name("affine")), Constant(0.5))
    theta = [1.0, 0.5, -1.5]
    fine = TimeGrid(1.0, 256)
    levels = [8, 16, 32, 64]
    err = np.zeros(len(levels))
    for s in range(200):
        dW = wiener_increments(s, 0, fine)
        ref = simulate_path(spec, theta, CovariatePath.empty(0, fine), 1.0, fine,
                            increments=dW).states[-1]
        for k, m in enumerate(levels):
            g = TimeGrid(1.0, m)
            x = simulate_path(spec, theta, CovariatePath.empty(0, g), 1.0, g,
                              increments=coarsen_increments(dW, 256 // m)).states[-1]
            err[k] += (x - ref) ** 2
    rms = np.sqrt(err / 200)
    slope = np.polyfit(np.log(1.0 / np.array(levels)), np.log(rms), 1)[0]
    assert slope >= 0.4


def test_ckls_positivity():
    spec = ModelSpec(DriftSpec((), "affine"), CKLS(0.5, 1.0))
    grid = TimeGrid(1.0, 200)
    with pytest.raises(DomainError):
        simulate_path(spec, [1.0, 0.0, 0.0], CovariatePath.empty(0, grid), -1.0, grid, seed=0)
    # strong pull towards zero forces reflections at the floor
    path = simulate_path(spec, [1.0, 0.0, -50.0], CovariatePath.empty(0, grid), 1.0, grid,
                         seed=0)
    assert np.all(path.states > 0)


def test_overflow_raises():
    spec = ModelSpec(DriftSpec((), "linear"), Constant(1.0))
    grid = TimeGrid(100.0, 200)
    with pytest.raises(SimulationOverflowError):
        simulate_path(spec, [10.0, 10.0], CovariatePath.empty(0, grid), 1.0, grid, seed=0)


def test_mismatched_grid_rejected():
    spec = product_spec()
    cov = CovariatePath(0, TimeGrid(1.0, 50), np.zeros((51, 1)))
    with pytest.raises(ParameterError):
        simulate_path(spec, (1, -1, 2, -2), cov, 0.0, TimeGrid(1.0, 100))


def test_coarsen_increments_sums_blocks():
    dW = np.arange(8.0)
    np.testing.assert_array_equal(coarsen_increments(dW, 2), [1, 5, 9, 13])
    with pytest.raises(ParameterError):
        coarsen_increments(np.arange(5.0), 2)
