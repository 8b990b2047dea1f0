"""Exception types shared across the toolkit."""


class SpecHomogError(Exception):
    """Base class for all toolkit errors."""


class ExprError(SpecHomogError):
    """Base class for expression parsing/evaluation errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier '{name}' (offset {offset})")
        self.name = name
        self.offset = offset


class ExprDomainError(ExprError):
    """Arithmetic domain violation, reported with the offending subexpression."""

    def __init__(self, message: str, fragment: str):
        super().__init__(f"{message} in '{fragment}'")
        self.fragment = fragment


class EvalBindingError(ExprError):
    """A free variable had no binding at evaluation time."""


class ValidationError(SpecHomogError):
    """Model data violates one of its invariants."""


class TruncationError(SpecHomogError):
    """No admissible truncation radius (tilt too large for decay)."""


class GridError(SpecHomogError):
    """Grid construction or alignment failure."""


class MemoryCapError(SpecHomogError):
    """An assembly would exceed the configured size cap."""


class ConvergenceError(SpecHomogError):
    """An iterative solver did not reach its tolerance."""


class ReducibilityError(ConvergenceError):
    """Kernel part of an operator has a zero row: grid too coarse."""


class ClassificationError(SpecHomogError):
    """Operation undefined for the bottom-of-essential-spectrum case."""


class ConfigError(SpecHomogError):
    """Configuration file is missing, malformed, or violates the schema."""
