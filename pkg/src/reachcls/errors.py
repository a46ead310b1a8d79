"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration, CLI arguments, or incompatible inputs (exit code 2)."""


class NumericalBlowupError(RuntimeError):
    """Integration produced a non-finite state (exit code 3)."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class PolicyFormatError(ConfigError):
    """A policy or value-grid file failed schema/version/dimension validation."""
