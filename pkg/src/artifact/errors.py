"""Exception hierarchy and the CLI exit-code contract."""

from __future__ import annotations


class ArtifactError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ShapeError(ArtifactError):
    """Grid/mask dimensions do not agree."""

    exit_code = 1


class ParameterError(ArtifactError):
    """Invalid parameter value or contradictory configuration."""

    exit_code = 1


class UsageError(ParameterError):
    """Bad command-line usage."""

    exit_code = 1


class NumericDivergenceError(ArtifactError):
    """A diffusion operation produced a non-finite intermediate.

    Carries the step at which the divergence was detected.
    """

    exit_code = 2

    def __init__(self, message: str, step: int | None = None, timestep: int | None = None):
        super().__init__(message)
        self.step = step
        self.timestep = timestep


class FormatError(ArtifactError):
    """A file (latent, PNG, manifest) could not be parsed."""

    exit_code = 3


class IOFailure(ArtifactError):
    """Filesystem-level failure (unreadable input, unwritable output)."""

    exit_code = 3


class PairingError(ArtifactError):
    """Evaluation inputs could not be paired by id."""

    exit_code = 1


class RemoteError(ArtifactError):
    exit_code = 4


class RemoteTransportError(RemoteError):
    """Connection/deadline failure talking to a remote service.

    ``attempts`` counts tries made (initial + retries); ``deadline`` is the
    per-request timeout in seconds.
    """

    def __init__(self, message: str, attempts: int = 1, deadline: float | None = None):
        super().__init__(message)
        self.attempts = attempts
        self.deadline = deadline


class RemoteProtocolError(RemoteError):
    """The remote peer answered with a malformed or mismatched frame."""
