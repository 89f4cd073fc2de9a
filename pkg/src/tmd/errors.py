"""Shared error base class.

Every domain error in the package derives from :class:`TmdError` and carries
a stable ``code`` string used verbatim in the service's wire error model
(``{"stage": ..., "code": ..., "message": ...}``).
"""

from __future__ import annotations


class TmdError(Exception):
    """Base class for all domain errors raised by this package."""

    code = "Internal"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


class BackendUnavailable(TmdError):
    """A pluggable backend (caption, rephrase, tuner, or image) failed."""

    code = "BackendUnavailable"
