"""Exception types shared across track3d."""


class Track3DError(Exception):
    """Base class for track3d failures."""

    exit_code = 1


class DataError(Track3DError, ValueError):
    """Malformed or missing input data (files, ids, depth)."""

    exit_code = 2


class NumericError(Track3DError, RuntimeError):
    """Non-finite values encountered during a numeric computation."""

    exit_code = 3

    def __init__(self, message: str, diagnostics: dict[str, object] | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{base} ({details})"


class UsageError(Track3DError):
    """Invalid command-line arguments or configuration."""

    exit_code = 1
