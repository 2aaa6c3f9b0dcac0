"""Exception hierarchy shared across the package.

Every error carries a short machine-parsable ``category`` that the CLI
prints as ``error: <category>: <message>``.
"""


class CatkgError(Exception):
    """Base class for all package errors."""

    category = "error"


class ShapeError(CatkgError):
    """Tensor shapes incompatible with the requested operation."""

    category = "invalid-shape"


class ConfigError(CatkgError):
    """Invalid configuration value, key, or combination."""

    category = "invalid-config"


class DomainError(CatkgError):
    """Input outside the mathematical domain of an operation."""

    category = "domain-error"


class ParseError(CatkgError):
    """Malformed input file (dataset line, config line, checkpoint)."""

    category = "parse-error"


class IndexLookupError(CatkgError):
    """Entity/relation index outside the vocabulary bounds."""

    category = "lookup-error"


class PathError(CatkgError):
    """Missing or unreadable file/directory."""

    category = "path-error"


class IncompatibilityError(CatkgError):
    """Checkpoint/model/dataset combination that cannot work together."""

    category = "incompatibility"


class UnsupportedVariantError(CatkgError):
    """Operation requested for a model variant that does not support it."""

    category = "unsupported-variant"


class NumericsError(CatkgError):
    """Non-finite value encountered where finiteness is required."""

    category = "non-finite"
