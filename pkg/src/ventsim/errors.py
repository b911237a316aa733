"""Exception types shared across the package."""


class VentsimError(Exception):
    """Base class for all package errors."""


class DomainError(VentsimError, ValueError):
    """An element law was evaluated outside its open domain."""


class ConfigError(VentsimError, ValueError):
    """Invalid configuration or plan parameters (CLI exit code 2)."""


class InitializationError(VentsimError, RuntimeError):
    """Steady-state solve could not bracket an equilibrium."""


class SolverError(VentsimError, RuntimeError):
    """Newton iteration failed to converge down to the minimum step."""


class CalibrationError(VentsimError, RuntimeError):
    """Tidal-volume calibration exhausted its pressure bracket."""


class ScenarioError(VentsimError, RuntimeError):
    """Staged pipeline produced an inconsistent trigger/cycle schedule."""


class AlignmentError(VentsimError, ValueError):
    """Detector predictions do not line up with ground-truth breaths."""
