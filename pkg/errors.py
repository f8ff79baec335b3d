"""
Exception hierarchy for sybilscope
"""
from typing import Optional


class SybilscopeError(Exception):
    """Base class for every error raised by sybilscope"""


class MalformedDocument(SybilscopeError):
    """A directory document violates the supported grammar"""

    def __init__(self, message: str, line: int, source: Optional[str] = None):
        self.message = message
        self.line = line
        self.source = source
        where = f"{source}:{line}" if source else f"line {line}"
        super().__init__(f"{where}: {message}")

    def with_source(self, source: str) -> "MalformedDocument":
        return MalformedDocument(self.message, self.line, source)


class EmptyConsensus(SybilscopeError):
    """The divisor set of a churn ratio is empty, so the ratio is undefined"""


class InvalidWindow(SybilscopeError):
    """Moving-average window smaller than one"""


class LengthMismatch(SybilscopeError):
    """Two uptime sequences cannot be correlated"""


class DomainError(SybilscopeError):
    """Argument outside the domain of a closed-form model"""


class SeedNotFound(SybilscopeError):
    """The seed relay of a neighbor search is not in the consensus"""


class GroupMemberMissing(SybilscopeError):
    """A ground-truth group member is not in the evaluated consensus"""


class SpecError(SybilscopeError):
    """Contradictory or invalid synthetic-stream specification"""


class ConfigError(SybilscopeError):
    """Invalid run configuration"""


class NoInput(SybilscopeError):
    """None of the given inputs yielded a readable document"""
