"""Exception hierarchy shared by all modules."""


class HybridCZError(Exception):
    """Base class for every error raised by :mod:`hybridcz`."""


class SingularParameterError(HybridCZError, ValueError):
    """A closed-form expression hit a vanishing denominator."""


class OutOfRangeError(HybridCZError, ValueError):
    """A waveform was evaluated outside its support."""


class NoiseTraceError(HybridCZError, ValueError):
    """A noise realization does not match the schedule it is applied to."""


class AliasingError(HybridCZError, ValueError):
    """The sampling interval cannot represent the requested bandwidth."""


class IntegrationError(HybridCZError, RuntimeError):
    """The ODE integrator failed (step-size underflow or similar)."""


class LabelingAmbiguousError(HybridCZError, RuntimeError):
    """Eigenvector continuation could not match states unambiguously."""

    def __init__(self, message, step=None, overlap=None):
        super().__init__(message)
        self.step = step
        self.overlap = overlap


class GateDestroyedError(HybridCZError, RuntimeError):
    """The logical projection is too small to define a gate."""


class CalibrationError(HybridCZError, RuntimeError):
    """A calibration search did not find an acceptable operating point."""


class ConfigError(HybridCZError, ValueError):
    """An experiment configuration failed validation."""
