"""
Enumeration of the networks reachable by repeated growth.

Under labelled semantics every growth step branches over every
nonempty subset of the current nodes, so a network of m nodes has
2^m − 1 children and every derivation path is counted. Under iso
semantics networks with the same structure are counted once.
"""

import dataclasses
import enum
import itertools
import logging
from typing import Iterator

from capsnet.graph import CapsuleGraph

from .isomorphism import canonical_form
from .rules import apply_growth

logger = logging.getLogger(__name__)


class Semantics(str, enum.Enum):
    """How enumerated structures are counted."""

    LABELED = "labeled"
    ISO = "iso"


@dataclasses.dataclass(frozen=True)
class Enumeration:
    """
    Networks produced by `enumerate_growth`.

    Parameters
    ----------
    structures : tuple[CapsuleGraph, ...]
        The networks, in deterministic branching order.
    semantics : Semantics
        How they were counted.
    """

    structures: tuple[CapsuleGraph, ...]
    semantics: Semantics

    @property
    def count(self) -> int:
        """Number of structures."""

        return len(self.structures)

    def edge_lists(self) -> list[list[tuple[str, str]]]:
        """Sorted edge list of every structure."""

        return [sorted(e.key for e in net.edges) for net in self.structures]


def _fresh_id(net: CapsuleGraph) -> str:
    """The id `h<k>` with the smallest k ≥ 1 not yet in use."""

    taken = set(net.node_ids)

    return next(
        f"h{k}" for k in itertools.count(1) if f"h{k}" not in taken
    )


def _grow(net: CapsuleGraph) -> Iterator[CapsuleGraph]:
    """Every network one growth step away, smallest subsets first."""

    ids = sorted(net.node_ids)
    node = _fresh_id(net)
    for size in range(1, len(ids) + 1):
        for subset in itertools.combinations(ids, size):
            yield apply_growth(net, subset, node)


def _deduplicate(nets: list[CapsuleGraph]) -> list[CapsuleGraph]:
    """Keep the first network of every isomorphism class."""

    seen, unique = set(), []
    for net in nets:
        code = canonical_form(net)
        if code not in seen:
            seen.add(code)
            unique.append(net)

    return unique


def enumerate_growth(
    base: CapsuleGraph,
    steps: int,
    semantics: Semantics | str = Semantics.LABELED,
) -> Enumeration:
    """
    Enumerate the networks reached from `base` by growth steps.

    New nodes use default parameters and take the id `h<k>` with the
    smallest free k.

    Parameters
    ----------
    base : CapsuleGraph
        Scalar network to start from.
    steps : int
        Number of growth steps, at least one.
    semantics : Semantics | str, default="labeled"
        `"labeled"` counts every derivation path; `"iso"` counts
        structures up to isomorphism with inputs distinguished.

    Returns
    -------
    enumeration : Enumeration
        The networks after the last step and their count.

    Raises
    ------
    ValueError
        If `steps` is smaller than one.
    """

    semantics = Semantics(semantics)
    if steps < 1:
        raise ValueError("Number of growth steps must be at least one.")

    nets = [base]
    for step in range(1, steps + 1):
        nets = [child for net in nets for child in _grow(net)]
        if semantics is Semantics.ISO:
            nets = _deduplicate(nets)
        logger.debug("Growth step %d: %d structures", step, len(nets))

    return Enumeration(tuple(nets), semantics)
