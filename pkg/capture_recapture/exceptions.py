class TrsError(Exception):
    """Base class for every error raised by the capture_recapture app"""


class CountsValidationError(TrsError, ValueError):
    """Input table, dataset name or run configuration is invalid"""


class ModelSpecificationError(TrsError, ValueError):
    """
    Parameters are incompatible with the model or with the observed data,
    e.g. a dependence vector off the simplex or a cell with probability 0
    that nevertheless holds individuals
    """


class NumericalFailure(TrsError, RuntimeError):
    """A fit did not converge or a resampling run failed too often"""
