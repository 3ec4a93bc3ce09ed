"""Exception hierarchy for sdecov."""


class SdeCovError(Exception):
    """Base class for all package errors."""


class ParameterError(SdeCovError, ValueError):
    """A parameter value or specification is invalid."""


class SimulationOverflowError(SdeCovError, FloatingPointError):
    """A simulated value became non-finite."""

    def __init__(self, subject, step, what="path"):
        self.subject = subject
        self.step = step
        super().__init__(
            f"non-finite {what} value for subject {subject!r} at step {step}"
        )


class DomainError(SdeCovError, ValueError):
    """State outside the domain of the diffusion coefficient."""


class SingularDiffusionError(SdeCovError, ZeroDivisionError):
    """The diffusion coefficient vanished on the observed path."""


class NumericalError(SdeCovError, ArithmeticError):
    """A numerical routine produced a non-finite quantity."""


class NotIdentifiableError(SdeCovError, ValueError):
    """The requested experiment needs an identifiable model."""


class RefusalError(SdeCovError, ValueError):
    """The operation refuses an input it was not designed for."""


class BudgetExhaustedError(SdeCovError, RuntimeError):
    """A sampler ran out of its trial budget."""

    def __init__(self, trials, accepted, requested):
        self.trials = trials
        self.accepted = accepted
        self.requested = requested
        rate = accepted / trials if trials else 0.0
        super().__init__(
            f"trial budget exhausted after {trials} trials: {accepted} of "
            f"{requested} draws accepted (acceptance rate {rate:.3g})"
        )


class BootstrapFailureError(SdeCovError, RuntimeError):
    """Too many bootstrap replicates failed to converge."""


class IngestionError(SdeCovError, ValueError):
    """A panel file could not be read."""
