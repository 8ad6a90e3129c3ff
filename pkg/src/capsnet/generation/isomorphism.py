"""
Canonical labelling and isomorphism of network structures.

Two networks have the same structure when a bijection between their
nodes preserves every edge and maps input nodes to input nodes.
Activation functions, biases and weights are ignored.

The canonical form is found by colour refinement followed by
backtracking: nodes start coloured by (input flag, in-degree,
out-degree), colours are refined by the multisets of neighbouring
colours until stable, and any remaining tie is broken by individualising
each candidate node in turn. The smallest code over all discrete
colourings is the canonical form. Nodes with identical neighbourhoods
are interchangeable, so only one of them is tried per tie.
"""

from typing import Sequence

from capsnet.graph import CapsuleGraph

CanonicalForm = tuple[int, tuple[bool, ...], tuple[tuple[int, int], ...]]


class _Skeleton:
    """Index-based adjacency of a network's structure."""

    def __init__(self, graph: CapsuleGraph) -> None:
        ids = sorted(graph.node_ids)
        index = {node_id: i for i, node_id in enumerate(ids)}
        inputs = set(graph.input_ids)

        self.n = len(ids)
        self.inputs = tuple(node_id in inputs for node_id in ids)
        self.edges = tuple(
            sorted((index[e.src], index[e.dst]) for e in graph.edges)
        )
        self.preds: list[list[int]] = [[] for _ in ids]
        self.succs: list[list[int]] = [[] for _ in ids]
        for src, dst in self.edges:
            self.succs[src].append(dst)
            self.preds[dst].append(src)

    def initial_colours(self) -> list[int]:
        keys = [
            (self.inputs[v], len(self.preds[v]), len(self.succs[v]))
            for v in range(self.n)
        ]
        return _rank(keys)

    def twin_key(self, v: int) -> tuple:
        return (self.inputs[v], tuple(self.preds[v]), tuple(self.succs[v]))


def _rank(keys: Sequence) -> list[int]:
    """Replace every key by its position among the distinct keys."""

    order = {key: rank for rank, key in enumerate(sorted(set(keys)))}

    return [order[key] for key in keys]


def _refine(skeleton: _Skeleton, colours: list[int]) -> list[int]:
    """Refine a colouring until neighbouring colours no longer split it."""

    cells = len(set(colours))
    while True:
        signatures = [
            (
                colours[v],
                tuple(sorted(colours[p] for p in skeleton.preds[v])),
                tuple(sorted(colours[s] for s in skeleton.succs[v])),
            )
            for v in range(skeleton.n)
        ]
        colours = _rank(signatures)
        refined = len(set(colours))
        if refined == cells:
            return colours
        cells = refined


def _code(skeleton: _Skeleton, colours: list[int]) -> CanonicalForm:
    """Relabel a discretely coloured skeleton by colour."""

    inputs = [False] * skeleton.n
    for v, colour in enumerate(colours):
        inputs[colour] = skeleton.inputs[v]
    edges = tuple(sorted((colours[u], colours[v]) for u, v in skeleton.edges))

    return skeleton.n, tuple(inputs), edges


def _search(skeleton: _Skeleton, colours: list[int]) -> CanonicalForm:
    """Smallest code over all individualisations of the colouring."""

    colours = _refine(skeleton, colours)
    if len(set(colours)) == skeleton.n:
        return _code(skeleton, colours)

    sizes: dict[int, int] = {}
    for colour in colours:
        sizes[colour] = sizes.get(colour, 0) + 1
    target = min(colour for colour, size in sizes.items() if size > 1)

    best, tried = None, set()
    for v in range(skeleton.n):
        if colours[v] != target:
            continue
        twin = skeleton.twin_key(v)
        if twin in tried:
            continue
        tried.add(twin)

        # v keeps the lower half of its cell, its cell-mates the upper
        split = [
            2 * c + (c == target and w != v) for w, c in enumerate(colours)
        ]
        code = _search(skeleton, split)
        if best is None or code < best:
            best = code

    return best


def canonical_form(graph: CapsuleGraph) -> CanonicalForm:
    """
    Compute a label-independent code for a network's structure.

    Parameters
    ----------
    graph : CapsuleGraph
        Network whose structure is encoded.

    Returns
    -------
    code : tuple
        Number of nodes, input flags by canonical position, and the
        sorted canonical edge list. Two networks have equal codes if and
        only if their structures are isomorphic.
    """

    skeleton = _Skeleton(graph)
    if skeleton.n == 0:
        return 0, (), ()

    return _search(skeleton, skeleton.initial_colours())


def is_isomorphic(a: CapsuleGraph, b: CapsuleGraph) -> bool:
    """
    Decide whether two networks have the same structure.

    Parameters
    ----------
    a, b : CapsuleGraph
        Networks to compare.

    Returns
    -------
    isomorphic : bool
        Whether a node bijection preserves edges and input nodes.
    """

    if (
        set(a.node_ids) == set(b.node_ids)
        and set(a.input_ids) == set(b.input_ids)
        and {e.key for e in a.edges} == {e.key for e in b.edges}
    ):
        return True

    if (
        len(a.node_ids) != len(b.node_ids)
        or len(a.input_ids) != len(b.input_ids)
        or len(a.edges) != len(b.edges)
    ):
        return False

    return canonical_form(a) == canonical_form(b)
