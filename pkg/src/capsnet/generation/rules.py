"""
The four generation rules for scalar neural networks.

A scalar network is a capsule graph whose values are all single
numbers: every edge multiplies by a scalar weight and every capsule is
one of the scalar activation functions. The rules build such networks
from nothing:

- variable: a single input node, the trivial network;
- neuron: a new node fed by a set of fresh input nodes;
- growth: a new node fed by a nonempty subset of an existing network;
- convergence: a new node joining two or more node-disjoint networks,
  fed by a nonempty subset of each.

None of the rules removes or rewires existing structure, so the base
networks are induced subgraphs of the result.
"""

from typing import Iterable, Mapping, Sequence

from capsnet.errors import (
    EmptySubset,
    GenerationError,
    InvalidSpec,
    NodeCollision,
    NotDisjoint,
    UnknownNode,
)
from capsnet.graph import (
    CapKind,
    CapsuleFn,
    CapsuleGraph,
    CapsuleNode,
    Edge,
    InputNode,
    OpKind,
    WeightingOp,
)
from capsnet.tensor import Tensor

SCALAR_CAPS = frozenset(
    {CapKind.SIGMOID, CapKind.TANH, CapKind.RELU, CapKind.IDENTITY}
)


def scalar_cap(cap: str | CapsuleFn) -> CapsuleFn:
    """
    Resolve an activation name into a scalar capsule function.

    Raises
    ------
    InvalidSpec
        If the function is not sigmoid, tanh, ReLU or the identity.
    """

    try:
        fn = cap if isinstance(cap, CapsuleFn) else CapsuleFn.parse(cap)
    except ValueError as err:
        raise InvalidSpec(f"Unknown capsule function {cap!r}.") from err

    if fn.kind not in SCALAR_CAPS:
        raise InvalidSpec(f"{fn.kind.value} is not a scalar activation.")

    return fn


def is_scalar_net(graph: CapsuleGraph) -> bool:
    """Whether every tensor is rank 0 and every edge a scalar product."""

    return (
        all(node.shape == () for node in graph.inputs)
        and all(
            node.bias_shape == () and node.cap.kind in SCALAR_CAPS
            for node in graph.nodes
        )
        and all(edge.op.kind is OpKind.SCALAR for edge in graph.edges)
    )


def _check_fresh(node: str, taken: Iterable[str]) -> None:
    """Check a new node id is usable and not already taken."""

    if not isinstance(node, str) or not node:
        raise GenerationError(f"Invalid node id {node!r}.")
    if node in set(taken):
        raise NodeCollision(f"Node {node} already exists.", node)


def _check_subset(
    subset: Iterable[str], known: Iterable[str], label: str = "The subset"
) -> tuple[str, ...]:
    """Check a subset is nonempty and drawn from `known`."""

    subset = tuple(sorted(set(subset)))
    if not subset:
        raise EmptySubset(f"{label} is empty.")

    unknown = sorted(set(subset) - set(known))
    if unknown:
        raise UnknownNode(
            f"{label} names unknown nodes {', '.join(unknown)}.",
            unknown[0],
        )

    return subset


def _attach(
    inputs: Sequence[InputNode],
    nodes: Sequence[CapsuleNode],
    edges: Sequence[Edge],
    subset: tuple[str, ...],
    node: str,
    cap: str | CapsuleFn,
    bias: float,
    weights: None | Mapping[str, float],
) -> CapsuleGraph:
    """Add node `node` computing `cap(Σ w·y + b)` over `subset`."""

    weights = dict(weights or {})
    extra = sorted(set(weights) - set(subset))
    if extra:
        raise UnknownNode(
            f"Weights given for nodes outside the subset: {', '.join(extra)}.",
            extra[0],
        )

    new_node = CapsuleNode(node, scalar_cap(cap), (), Tensor(float(bias)))
    new_edges = tuple(
        Edge(
            src,
            node,
            WeightingOp.scalar(),
            (),
            Tensor(float(weights.get(src, 1.0))),
        )
        for src in subset
    )

    return CapsuleGraph(
        tuple(inputs), (*nodes, new_node), (*edges, *new_edges)
    )


def apply_variable(x: str) -> CapsuleGraph:
    """
    Create the trivial network: one input node and nothing else.

    Parameters
    ----------
    x : str
        Id of the input node.

    Returns
    -------
    net : CapsuleGraph
        The trivial network.
    """

    _check_fresh(x, ())

    return CapsuleGraph(inputs=(InputNode(x),))


def apply_neuron(
    inputs: Iterable[str],
    node: str,
    cap: str | CapsuleFn = "sigmoid",
    bias: float = 0.0,
    weights: None | Mapping[str, float] = None,
) -> CapsuleGraph:
    """
    Create a single neuron fed by a set of new input nodes.

    Parameters
    ----------
    inputs : Iterable[str]
        Ids of the input nodes; must be nonempty.
    node : str
        Id of the neuron.
    cap : str | CapsuleFn, default="sigmoid"
        Activation function.
    bias : float, default=0.0
        Bias of the neuron.
    weights : Mapping[str, float], optional
        Weight per input; missing weights default to one.

    Returns
    -------
    net : CapsuleGraph
        The neuron and its inputs.

    Raises
    ------
    EmptySubset
        If no inputs are given.
    NodeCollision
        If the neuron reuses an input id.
    """

    subset = tuple(sorted(set(inputs)))
    if not subset:
        raise EmptySubset("A neuron needs at least one input.")
    for x in subset:
        _check_fresh(x, ())
    _check_fresh(node, subset)

    return _attach(
        tuple(InputNode(x) for x in subset),
        (),
        (),
        subset,
        node,
        cap,
        bias,
        weights,
    )


def apply_growth(
    net: CapsuleGraph,
    subset: Iterable[str],
    node: str,
    cap: str | CapsuleFn = "sigmoid",
    bias: float = 0.0,
    weights: None | Mapping[str, float] = None,
) -> CapsuleGraph:
    """
    Grow a network by one node fed from some of its existing nodes.

    Parameters
    ----------
    net : CapsuleGraph
        Scalar network to grow.
    subset : Iterable[str]
        Nonempty set of existing node ids feeding the new node.
    node : str
        Id of the new node.
    cap : str | CapsuleFn, default="sigmoid"
        Activation function of the new node.
    bias : float, default=0.0
        Bias of the new node.
    weights : Mapping[str, float], optional
        Weight per member of the subset; missing weights default to one.

    Returns
    -------
    net : CapsuleGraph
        The grown network.

    Raises
    ------
    EmptySubset
        If the subset is empty.
    UnknownNode
        If the subset names a node outside the network.
    NodeCollision
        If the new id is already taken.
    """

    subset = _check_subset(subset, net.node_ids)
    _check_fresh(node, net.node_ids)

    return _attach(
        net.inputs, net.nodes, net.edges, subset, node, cap, bias, weights
    )


def apply_convergence(
    nets: Sequence[CapsuleGraph],
    subsets: Sequence[Iterable[str]],
    node: str,
    cap: str | CapsuleFn = "sigmoid",
    bias: float = 0.0,
    weights: None | Mapping[str, float] = None,
) -> CapsuleGraph:
    """
    Join node-disjoint networks through one new node.

    Parameters
    ----------
    nets : Sequence[CapsuleGraph]
        Two or more scalar networks sharing no node ids.
    subsets : Sequence[Iterable[str]]
        For every network, the nonempty set of its nodes that feed
        the new node.
    node : str
        Id of the new node.
    cap : str | CapsuleFn, default="sigmoid"
        Activation function of the new node.
    bias : float, default=0.0
        Bias of the new node.
    weights : Mapping[str, float], optional
        Weight per member of the union of the subsets; missing weights
        default to one.

    Returns
    -------
    net : CapsuleGraph
        The joined network.

    Raises
    ------
    GenerationError
        If fewer than two networks are given, or the subsets do not
        match the networks one to one.
    NotDisjoint
        If two networks share a node id.
    EmptySubset
        If some subset is empty.
    UnknownNode
        If some subset names a node outside its network.
    NodeCollision
        If the new id is already taken.
    """

    nets, subsets = tuple(nets), tuple(subsets)
    if len(nets) < 2:
        raise GenerationError("Convergence needs at least two networks.")
    if len(subsets) != len(nets):
        raise GenerationError("Convergence needs one subset per network.")

    seen: dict[str, int] = {}
    for k, net in enumerate(nets):
        for node_id in net.node_ids:
            if node_id in seen:
                raise NotDisjoint(
                    f"Node {node_id} is in networks {seen[node_id]} and {k}.",
                    node_id,
                )
            seen[node_id] = k

    union: list[str] = []
    for k, (net, subset) in enumerate(zip(nets, subsets)):
        union.extend(_check_subset(subset, net.node_ids, f"Subset {k}"))
    _check_fresh(node, seen)

    return _attach(
        tuple(x for net in nets for x in net.inputs),
        tuple(h for net in nets for h in net.nodes),
        tuple(e for net in nets for e in net.edges),
        tuple(sorted(union)),
        node,
        cap,
        bias,
        weights,
    )
