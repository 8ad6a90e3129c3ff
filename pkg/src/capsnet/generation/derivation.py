"""
Build any connected DAG from the generation rules, and replay the result.

`derive` follows the induction on the number of vertices. It removes
the lexicographically smallest non-input sink h of the graph. When what
remains is connected, h was added by the rule of growth; when it falls
apart into components, h joined them by the rule of convergence, fed
from each component by the predecessors of h inside it. A lone input
node is the rule of variable. `replay` runs the recorded rules and
rebuilds the network, parameters included.
"""

import collections
import dataclasses
import logging

import networkx as nx

from capsnet.errors import CycleDetected, InvalidGraph, NotConnected
from capsnet.graph import (
    CapsuleGraph,
    CapsuleNode,
    Edge,
    InputNode,
    WeightingOp,
    validate,
)
from capsnet.tensor import Tensor

from .rules import (
    apply_convergence,
    apply_growth,
    apply_neuron,
    apply_variable,
    is_scalar_net,
    scalar_cap,
)

logger = logging.getLogger(__name__)

Weights = tuple[tuple[str, float], ...]


@dataclasses.dataclass(frozen=True)
class Derivation:
    """A tree of rule applications; subclasses are the four rules."""

    rule = ""

    @property
    def children(self) -> tuple["Derivation", ...]:
        """Derivations this step builds on."""

        return ()

    def rules(self) -> collections.Counter:
        """Count how often each rule is used in the tree."""

        counts = collections.Counter({self.rule: 1})
        for child in self.children:
            counts.update(child.rules())

        return counts


@dataclasses.dataclass(frozen=True)
class Variable(Derivation):
    """The rule of variable: an input node on its own."""

    node: str
    rule = "variable"


@dataclasses.dataclass(frozen=True)
class _NewNode(Derivation):
    """The node added by a rule, with its activation and parameters."""

    node: str
    cap: str = "sigmoid"
    bias: float = 0.0
    weights: Weights = ()

    def __post_init__(self) -> None:
        weights = dict(self.weights)
        object.__setattr__(
            self,
            "weights",
            tuple(sorted((src, float(w)) for src, w in weights.items())),
        )
        object.__setattr__(self, "bias", float(self.bias))


@dataclasses.dataclass(frozen=True, kw_only=True)
class Neuron(_NewNode):
    """The rule of neuron: a node fed by fresh input nodes."""

    inputs: tuple[str, ...]
    rule = "neuron"


@dataclasses.dataclass(frozen=True, kw_only=True)
class Growth(_NewNode):
    """The rule of growth: a node fed by part of one network."""

    base: Derivation
    subset: tuple[str, ...]
    rule = "growth"

    @property
    def children(self) -> tuple[Derivation, ...]:
        """The network that is grown."""

        return (self.base,)


@dataclasses.dataclass(frozen=True, kw_only=True)
class Convergence(_NewNode):
    """The rule of convergence: a node joining node-disjoint networks."""

    bases: tuple[Derivation, ...]
    subsets: tuple[tuple[str, ...], ...]
    rule = "convergence"

    @property
    def children(self) -> tuple[Derivation, ...]:
        """The networks that are joined."""

        return self.bases


def replay(derivation: Derivation) -> CapsuleGraph:
    """
    Apply the rules recorded in a derivation.

    Parameters
    ----------
    derivation : Derivation
        Tree of rule applications.

    Returns
    -------
    net : CapsuleGraph
        The scalar network the rules generate.

    Raises
    ------
    GenerationError
        If a recorded step breaks its rule's preconditions.
    """

    match derivation:
        case Variable(node=node):
            return apply_variable(node)
        case Neuron(inputs=inputs):
            return apply_neuron(inputs, *_new_node_args(derivation))
        case Growth(base=base, subset=subset):
            return apply_growth(
                replay(base), subset, *_new_node_args(derivation)
            )
        case Convergence(bases=bases, subsets=subsets):
            return apply_convergence(
                [replay(b) for b in bases],
                subsets,
                *_new_node_args(derivation),
            )

    raise TypeError(f"Not a derivation: {derivation!r}.")


def _new_node_args(step: _NewNode) -> tuple:
    """Node id, activation, bias and weights of a rule's new node."""

    return step.node, step.cap, step.bias, dict(step.weights)


def _check_dag(digraph: nx.DiGraph) -> None:
    """Check a skeleton is a nonempty, acyclic, weakly connected graph."""

    if digraph.number_of_nodes() == 0:
        raise NotConnected("Graph has no nodes.")

    if not nx.is_directed_acyclic_graph(digraph):
        cycle = tuple(str(src) for src, _ in nx.find_cycle(digraph))
        raise CycleDetected(
            f"Directed cycle through {', '.join(cycle)}.", cycle
        )

    if not nx.is_weakly_connected(digraph):
        raise NotConnected("Graph is not weakly connected.")


def induced_network(skeleton: nx.DiGraph) -> CapsuleGraph:
    """
    Build the scalar network induced by a connected DAG.

    Vertices without predecessors become input nodes; every other
    vertex h computes `f(Σ w·y + b)` over its predecessors.

    Parameters
    ----------
    skeleton : networkx.DiGraph
        Connected acyclic graph. Vertices may carry `cap` (default
        `"sigmoid"`) and `bias` (default 0) attributes, edges a `weight`
        attribute (default 1). Vertex labels are turned into strings.

    Returns
    -------
    net : CapsuleGraph
        The induced network, with the same structure as `skeleton`.

    Raises
    ------
    CycleDetected
        If the skeleton has a directed cycle.
    NotConnected
        If it is empty or not weakly connected.
    """

    _check_dag(skeleton)
    digraph = nx.relabel_nodes(skeleton, str)

    inputs, nodes, edges = [], [], []
    for node_id in sorted(digraph):
        preds = sorted(digraph.predecessors(node_id))
        if not preds:
            inputs.append(InputNode(node_id))
            continue

        attrs = digraph.nodes[node_id]
        cap = scalar_cap(attrs.get("cap", "sigmoid"))
        bias = Tensor(float(attrs.get("bias", 0.0)))
        nodes.append(CapsuleNode(node_id, cap, (), bias))
        for src in preds:
            weight = float(digraph.edges[src, node_id].get("weight", 1.0))
            edges.append(
                Edge(src, node_id, WeightingOp.scalar(), (), Tensor(weight))
            )

    return CapsuleGraph(tuple(inputs), tuple(nodes), tuple(edges))


def _components(
    nodes: frozenset[str], neighbours: dict[str, set[str]]
) -> list[frozenset[str]]:
    """Weak components of the subgraph on `nodes`, by smallest id."""

    parts, unseen = [], set(nodes)
    for start in sorted(nodes):
        if start not in unseen:
            continue
        unseen.discard(start)
        part, queue = {start}, collections.deque([start])
        while queue:
            for other in neighbours[queue.popleft()] & unseen:
                unseen.discard(other)
                part.add(other)
                queue.append(other)
        parts.append(frozenset(part))

    return parts


def derive(graph: CapsuleGraph | nx.DiGraph) -> Derivation:
    """
    Find rule applications that generate a connected DAG.

    Parameters
    ----------
    graph : CapsuleGraph | networkx.DiGraph
        A nonempty, acyclic, weakly connected network or skeleton.
        Skeletons are first turned into their induced network. The
        activations and parameters of scalar networks are recorded;
        other networks contribute their structure only.

    Returns
    -------
    derivation : Derivation
        Derivation whose replay is isomorphic to `graph`, and identical
        to it for scalar networks.

    Raises
    ------
    CycleDetected
        If the graph has a directed cycle.
    NotConnected
        If it is empty or not weakly connected.
    InvalidGraph
        If a capsule graph breaks any other invariant.
    """

    if isinstance(graph, nx.DiGraph):
        graph = induced_network(graph)

    _check_dag(graph.to_networkx())
    report = validate(graph)
    if not report.ok:
        raise InvalidGraph(str(report), report.violations)

    structure = graph.structure
    inputs = set(graph.input_ids)
    preds = {v: set(structure.predecessors[v]) for v in graph.node_ids}
    succs = {v: set(structure.successors[v]) for v in graph.node_ids}
    neighbours = {v: preds[v] | succs[v] for v in graph.node_ids}
    keep_parameters = is_scalar_net(graph)

    def parameters(node_id: str) -> dict:
        if not keep_parameters or not graph.has_parameters:
            return {}
        weights = tuple(
            (edge.src, edge.weight.item()) for edge in graph.incoming(node_id)
        )
        node = graph.node(node_id)
        return {
            "cap": node.cap.kind.value,
            "bias": node.bias.item(),
            "weights": weights,
        }

    def step(nodes: frozenset[str]) -> Derivation:
        if len(nodes) == 1:
            return Variable(next(iter(nodes)))

        h = min(
            v for v in nodes if v not in inputs and not succs[v] & nodes
        )
        rest = nodes - {h}
        parts = _components(rest, neighbours)
        if len(parts) == 1:
            return Growth(
                node=h,
                base=step(rest),
                subset=tuple(sorted(preds[h])),
                **parameters(h),
            )

        return Convergence(
            node=h,
            bases=tuple(step(part) for part in parts),
            subsets=tuple(tuple(sorted(part & preds[h])) for part in parts),
            **parameters(h),
        )

    derivation = step(frozenset(graph.node_ids))
    logger.debug("Derived %s", dict(derivation.rules()))

    return derivation
