"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A descriptor, config file or parameter combination is invalid."""


class DivergenceError(RuntimeError):
    """Raised when an agent produces a non-finite gradient or parameter."""

    def __init__(self, agent, step=None, what="gradient"):
        self.agent = agent
        self.step = step
        self.what = what
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite {what} on agent {agent}{where}")


class IDXFormatError(ValueError):
    """Base class for malformed IDX files."""


class IDXMagicError(IDXFormatError):
    pass


class IDXTruncatedError(IDXFormatError):
    pass


class IDXCountMismatchError(IDXFormatError):
    pass


class EstimationError(RuntimeError):
    """Noise-constant estimation had no usable probe points."""


class FitError(ValueError):
    """Convergence-rate fit could not be performed on the given log."""


class VerificationError(AssertionError):
    """A theoretical bound was violated while running in verify mode."""
