"""Exception hierarchy shared by the simulation and analysis modules."""


class MechQubitError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(MechQubitError, ValueError):
    """A parameter is outside its documented domain."""


class InvalidInputError(MechQubitError, ValueError):
    """Input data are malformed or mutually inconsistent."""


class AliasingError(InvalidParameterError):
    """Sample rate too low for the requested waveform content."""


class ShotRangeError(InvalidInputError):
    """A shot time falls outside the simulated state path."""


class CalibrationError(MechQubitError):
    """Readout calibration could not be performed."""


class FitFailureError(MechQubitError):
    """A model fit did not converge or is degenerate.

    Parameters
    ----------
    message : str
        Human readable reason.
    best : object, optional
        Best-so-far result, when one exists.
    diagnostics : dict, optional
        Free-form details (iterations, log-likelihoods, ...).
    """

    def __init__(self, message, best=None, diagnostics=None):
        super().__init__(message)
        self.best = best
        self.diagnostics = dict(diagnostics or {})


class InsufficientDataError(MechQubitError):
    """Too few samples to produce a meaningful estimate."""


class NonThermalInversionError(MechQubitError, ValueError):
    """Populations imply a negative (inverted) temperature."""


class InvertedBathError(MechQubitError, ValueError):
    """Upward rate is not smaller than the downward rate."""


class NoSolutionError(MechQubitError, ValueError):
    """An inversion has no physical solution."""


class ConfigError(MechQubitError):
    """Scenario configuration is invalid."""


class DataError(MechQubitError):
    """A dataset on disk is missing, corrupt or tampered with."""
