"""Exception hierarchy for the adaptive process engine."""

from typing import Optional


class EngineError(Exception):
    """Base class for every error raised by the engine.

    Each error names the model or runtime element it concerns so that
    diagnostics can point at the offending part of a document.
    """

    def __init__(self, message: str, element: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.element = element


class ModelSyntaxError(EngineError):
    """The model document is not well-formed JSON."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.reason = message
        self.line = line
        self.column = column


class ModelValidationError(EngineError):
    """The model document is well-formed but violates a model rule."""


class NotFoundError(EngineError, LookupError):
    """A label, identifier or registry name does not exist."""


class TransformError(EngineError):
    """The specification layer cannot be realized as a runtime model."""


class BindingTypeError(EngineError, TypeError):
    """A binding would connect two service components directly."""


class DanglingReference(EngineError):
    """A change action references an element that does not exist."""


class DuplicateBinding(EngineError):
    """A change action would create an element or binding twice."""


class ArityError(EngineError):
    """A tactic was invoked with the wrong number of arguments."""


class PreconditionFailed(EngineError):
    """A tactic precondition is not entailed by the context model."""

    def __init__(self, message: str, conjunct: str, element: Optional[str] = None):
        super().__init__(message, element)
        self.conjunct = conjunct


class OrphanEvent(EngineError):
    """A block exit was observed without a matching entry."""


class RoutingError(EngineError):
    """A message reached a node with no outbound binding."""


class InterceptorPlacementError(EngineError):
    """An interceptor kind is not supported at the chosen connector."""


class NoViableOption(EngineError):
    """No alternative of an adaptation flow satisfied its preconditions."""


class ChainDepthExceeded(EngineError):
    """A chain of falsification triggers grew past the configured depth."""


class MissingLeafValue(EngineError):
    """Structural QoS needs a value for a service that has none."""


class ExpressionError(EngineError):
    """A constraint or formula expression is malformed or unsafe."""
