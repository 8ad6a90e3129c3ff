"""Exceptions raised across the capsule-network framework.

Every error derives from `CapsnetError` and from the closest builtin so
callers can catch either. Errors that concern a particular node or edge
keep its id on the instance as well as in the message.
"""


class CapsnetError(Exception):
    """Base class for all errors raised by `capsnet`."""

    def __init__(self, message: str, node: None | str = None) -> None:
        super().__init__(message)
        self.node = node


class ShapeMismatch(CapsnetError, ValueError):
    """Tensor extents are incompatible with an operation."""


class ShapeConflict(CapsnetError, ValueError):
    """Shape inference failed at a node of a capsule graph."""


class NonFiniteValue(CapsnetError, ArithmeticError):
    """A computation produced NaN or infinity."""


class InvalidGraph(CapsnetError, ValueError):
    """A capsule graph violates one or more of its invariants.

    Parameters
    ----------
    message : str
        Human-readable summary.
    violations : tuple, optional
        The violations found by `capsnet.graph.validate`.
    """

    def __init__(self, message: str, violations: tuple = ()) -> None:
        super().__init__(message)
        self.violations = tuple(violations)


class CycleDetected(InvalidGraph):
    """A graph that must be acyclic contains a directed cycle."""

    def __init__(self, message: str, nodes: tuple[str, ...] = ()) -> None:
        super().__init__(message)
        self.nodes = tuple(nodes)


class NotConnected(InvalidGraph):
    """A graph that must be weakly connected is not."""


class MissingInput(CapsnetError, LookupError):
    """No value was supplied for an input node."""


class MissingTarget(CapsnetError, LookupError):
    """No target was supplied for an output node."""


class InvalidValues(CapsnetError, ValueError):
    """A value map does not belong to the graph it is used with."""


class InvalidLoss(CapsnetError, ValueError):
    """A loss cannot be applied to the given output nodes."""


class InvalidSpec(CapsnetError, ValueError):
    """A model or capsule specification is not buildable."""


class InvalidDocument(CapsnetError, ValueError):
    """A JSON or CSV document does not follow its schema."""


class GenerationError(CapsnetError, ValueError):
    """A generation rule was applied outside its preconditions."""


class EmptySubset(GenerationError):
    """A rule received an empty node subset."""


class NodeCollision(GenerationError):
    """A rule tried to create a node whose id is already taken."""


class NotDisjoint(GenerationError):
    """Networks passed to the rule of convergence share nodes."""


class UnknownNode(GenerationError):
    """A rule referred to a node that is not in its network."""
