"""Shared exception types."""


class DomainError(ValueError):
    """A point lies outside the domain of a map, or a map violates a domain precondition."""


class NumericsError(RuntimeError):
    """A numerical procedure failed: divergent integral, non-monotone stencil, bad table."""


class ConfigError(ValueError):
    """Invalid run configuration (schema violation, inconsistent inputs)."""
