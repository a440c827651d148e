"""Exception hierarchy shared by all modules."""


class EpicltError(Exception):
    """Base class for package errors."""


class ModelError(EpicltError):
    """Invalid model definition or rate evaluation."""


class PriorError(ModelError):
    pass


class InitializationError(ModelError):
    """Initial state cannot be built from the given parameters."""


class IntegrationError(EpicltError):
    """ODE integration failed (step-size underflow or non-finite state)."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class LikelihoodError(EpicltError):
    pass


class SimulationError(EpicltError):
    pass


class OptimizationError(EpicltError):
    pass


class SamplerError(EpicltError):
    pass


class EvidenceError(EpicltError):
    """Reference construction or thermodynamic integration failed."""


class DataError(EpicltError):
    """Malformed input file."""
