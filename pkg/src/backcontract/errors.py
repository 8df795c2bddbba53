"""Exception hierarchy shared by every stage."""


class BackcontractError(Exception):
    """Base class for all package errors."""


class DomainError(BackcontractError, ValueError):
    """A point lies outside the phase space of its map."""


class ConfigurationError(BackcontractError, ValueError):
    """Bad parameters, horizons or configuration files (CLI exit code 2)."""


class HypothesisViolation(BackcontractError):
    """The data do not satisfy the hypotheses the bound relies on (CLI exit code 3)."""


class DerivationFailure(BackcontractError):
    """No admissible backward rate could be constructed within the horizon."""


class PreconditionError(BackcontractError, ValueError):
    """An operation was called on inputs it explicitly refuses (e.g. an uncertified rate)."""


class TreeTruncated(BackcontractError):
    """Pre-image enumeration hit the node cap; ``tree`` holds the completed levels."""

    def __init__(self, message, tree=None, completed_level=0):
        super().__init__(message)
        self.tree = tree
        self.completed_level = completed_level
