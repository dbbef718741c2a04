"""Exception hierarchy shared by every uqbench module."""


class UQBenchError(Exception):
    """Base class for all library errors."""


class ConfigError(UQBenchError, ValueError):
    """Invalid user-supplied configuration or arguments."""


class DimensionMismatch(UQBenchError, ValueError):
    pass


class NonHermitianKernel(UQBenchError):
    """Kernel spectrum has eigenvalues that are negative beyond round-off."""


class BlowUp(UQBenchError):
    """Field amplitude exceeded the blow-up threshold during integration."""

    def __init__(self, message, time=None, alpha=None):
        super().__init__(message)
        self.time = time
        self.alpha = alpha


class BlowUpBudgetExceeded(UQBenchError):
    """Too many simulations in a batch blew up."""


class InsufficientRows(UQBenchError, ValueError):
    pass


class FormatVersionMismatch(UQBenchError):
    pass


class CorruptFile(UQBenchError):
    pass


class CholeskyFailure(UQBenchError):
    pass


class AllStartsFailed(UQBenchError):
    pass


class DivergedLoss(UQBenchError):
    pass


class DegenerateEnsemble(UQBenchError, ValueError):
    pass


class ZeroUncertainty(UQBenchError):
    """A model reported zero total uncertainty where a normalized residual is needed."""


class NoEpistemicUQ(UQBenchError):
    pass
