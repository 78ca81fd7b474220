"""Exception types shared across the package."""


class InputError(ValueError):
    """Raised when an operation rejects malformed or inconsistent input."""


class IntegrityError(RuntimeError):
    """Raised when internal state is inconsistent (missing patch, missing cache entry)."""


class TrainingError(RuntimeError):
    """Raised when predictor training diverges; carries seed and hyperparameters."""
