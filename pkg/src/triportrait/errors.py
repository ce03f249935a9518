"""Shared exception types."""


class ConfigurationError(ValueError):
    """A config value or tensor shape violates a module contract."""


class RejectedInputError(ValueError):
    """Caller-supplied data failed validation (non-finite, wrong arity, ...)."""


class TrainingFault(RuntimeError):
    """Non-recoverable numerical failure during training; diagnostics were dumped."""
