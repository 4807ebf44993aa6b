"""Exception types shared across the package."""


class MurkError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(MurkError):
    """Invalid configuration: bad intrinsics, malformed config file, bad constants."""


class InputError(MurkError):
    """Invalid runtime input: non-finite coordinates, shape mismatches."""


class IllConditionedError(MurkError):
    """A numerically ill-conditioned request, e.g. inverting near-zero transmittance."""

    def __init__(self, message, channel=None):
        super().__init__(message)
        self.channel = channel


class DivergenceError(MurkError):
    """Optimization diverged. Carries the loss history recorded up to the abort."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []
