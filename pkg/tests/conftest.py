import logging

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sdecov.model import Constant, DriftSpec, ModelSpec, TimeGrid, factor_from_name
from sdecov.presets import product_panel, product_spec
from sdecov.simulate import CovariatePath, Panel, SubjectPath, simulate_covariates, simulate_panel

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_logs():
    logging.getLogger("sdecov").setLevel(logging.ERROR)
    yield


def ou_spec(bounds=((-10.0, 10.0),)):
    """``dX = -theta X dt + dW`` as a one-parameter model."""
    return ModelSpec(DriftSpec((), factor_from_name("neg_identity")), Constant(1.0), bounds=bounds,
                     names=("theta",))


def panel_from_states(spec, states, t_end=1.0, covariates=None):
    states = np.atleast_2d(np.asarray(states, dtype=float))
    grid = TimeGrid(t_end, states.shape[1] - 1)
    paths = [SubjectPath(i, grid, s) for i, s in enumerate(states)]
    if covariates is None:
        covs = [CovariatePath.empty(i, grid) for i in range(len(states))]
    else:
        covs = [CovariatePath(i, grid, np.asarray(c, dtype=float).reshape(grid.n_steps + 1, -1))
                for i, c in enumerate(covariates)]
    return Panel(spec, tuple(paths), tuple(covs))


@pytest.fixture(scope="session")
def product_data():
    panel, shape = product_panel(11)
    return panel, shape


@pytest.fixture(scope="session")
def small_affine_panel():
    """Five subjects, one covariate, affine factor, 50 steps."""
    spec = product_spec()
    grid = TimeGrid(1.0, 50)
    covs = simulate_covariates(5, grid, seed=3, bounds=(-1.0, 1.0))
    return simulate_panel(spec, (1.0, -1.0, 2.0, -2.0), 5, grid, 0.0, covs, seed=4)


ACCEPTANCE_LINES: list = []


def report(criterion: int, ok: bool, detail: str):
    """Record one acceptance line; printed in the terminal summary."""
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
