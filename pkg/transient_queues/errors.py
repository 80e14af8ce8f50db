"""
Shared exception bases for the transient queueing toolkit.

Each module defines its own error class; these two bases group them so the
command-line interface can map failures onto exit codes.
"""


class InputError(ValueError):
    """Exception raised for invalid input: schema, parameter or precondition violations."""
    pass


class CertificationError(ArithmeticError):
    """Exception raised when a numerical result cannot be certified to tolerance."""
    pass


class TruncationError(CertificationError):
    """Exception raised when a truncated state space cannot be certified."""
    pass
