"""Simulation and inference for systems of SDEs with covariates in the drift.

The drift of subject ``i`` is ``phi_xi(t) b_beta(X_i(t))`` with
``phi_xi(t) = xi_0 + sum_l xi_l g_l(z_il(t))`` and a known diffusion.
Parameters are ordered ``(xi_0, ..., xi_p, beta_1, ..., beta_q)``.
"""

__version__ = "0.1.0"

from .errors import (BootstrapFailureError, BudgetExhaustedError, DomainError, IngestionError,
                     NotIdentifiableError, NumericalError, ParameterError, RefusalError,
                     SdeCovError, SimulationOverflowError, SingularDiffusionError)
from .model import (CKLS, CallableFactor, Constant, DiffusionSpec, DriftSpec, FixedFactor,
                    LinearFactor, ModelSpec, ThetaVector, TimeGrid, factor_from_name)
from .simulate import (CovariateModel, CovariatePath, Panel, PanelShape, SubjectPath,
                       simulate_covariates, simulate_panel, simulate_path, stack_covariates,
                       wiener_increments)
from .likelihood import (GirsanovStats, InformationMatrix, girsanov_stats, log_likelihood,
                         observed_information, score, subject_stats)
from .estimation import (MLEResult, block_relaxation_mle, conditional_update, grid_search_mle,
                         random_init)
from .bootstrap import BootstrapDist, parametric_bootstrap, percentile_ci
from .bayes import (ChainResult, PriorSpec, abc_rejection, chain_diagnostics,
                    empirical_bayes_prior, gibbs_sampler)
from .random_effects import REParams, RESuffStats, re_marginal_loglik, re_suff_stats
from .experiments import (ExperimentReport, consistency_experiment, normality_experiment,
                          posterior_normality_experiment)
from .io import ingest_panel, write_panel_csv

__all__ = [name for name in dir() if not name.startswith("_")]
