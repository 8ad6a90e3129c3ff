"""
The capsule-graph data model.

A capsule graph is a weakly connected directed acyclic graph whose
vertices are input nodes and capsule nodes, and whose edges carry a
tensor-weighting connection: a weighting operation and, for the
operations that need one, a weight tensor.

Graphs are immutable. Parameters are optional so that a graph can be
described before it is initialised; `with_parameters` returns a new
graph with some or all of them filled in.
"""

import dataclasses
import enum
import functools
import math
from typing import Iterable, Mapping, NamedTuple

import networkx as nx

from . import tensor
from .errors import CycleDetected, InvalidGraph, ShapeConflict, ShapeMismatch
from .tensor import Shape, Tensor, check_shape

EdgeKey = tuple[str, str]


class OpKind(str, enum.Enum):
    """Kinds of weighting operation carried by an edge."""

    IDENTITY = "identity"
    SCALAR = "scalar"
    MATMUL = "matmul"
    CONV2D = "conv2d"
    RESHAPE = "reshape"


_OP_SYMBOLS = {
    OpKind.IDENTITY: "→",
    OpKind.SCALAR: "·",
    OpKind.MATMUL: "×",
    OpKind.CONV2D: "∗",
    OpKind.RESHAPE: "◁",
}


class CapKind(str, enum.Enum):
    """Kinds of capsule function."""

    IDENTITY = "identity"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    RELU = "relu"
    SOFTMAX = "softmax"
    SQUASH = "squash"
    DOWNSAMPLE = "downsample"


@dataclasses.dataclass(frozen=True)
class WeightingOp:
    """
    A weighting operation.

    Parameters
    ----------
    kind : OpKind | str
        Which operation to apply.
    target : tuple[int, ...], optional
        Target shape; required by, and only allowed for, reshapes.
    """

    kind: OpKind
    target: None | Shape = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", OpKind(self.kind))
        if self.kind is OpKind.RESHAPE:
            if self.target is None:
                raise ShapeMismatch("A reshape needs a target shape.")
            object.__setattr__(self, "target", check_shape(self.target))
        elif self.target is not None:
            raise ShapeMismatch(f"A {self.kind.value} takes no target.")

    @classmethod
    def identity(cls) -> "WeightingOp":
        """Identity transfer."""
        return cls(OpKind.IDENTITY)

    @classmethod
    def scalar(cls) -> "WeightingOp":
        """Scalar multiplication."""
        return cls(OpKind.SCALAR)

    @classmethod
    def matmul(cls) -> "WeightingOp":
        """Matrix multiplication."""
        return cls(OpKind.MATMUL)

    @classmethod
    def conv2d(cls) -> "WeightingOp":
        """Valid two-dimensional convolution."""
        return cls(OpKind.CONV2D)

    @classmethod
    def reshape(cls, target: Iterable[int]) -> "WeightingOp":
        """Tensor reshaping to `target`."""
        return cls(OpKind.RESHAPE, tuple(target))

    @property
    def requires_weight(self) -> bool:
        """Whether the operation takes a weight tensor."""

        return self.kind in (OpKind.SCALAR, OpKind.MATMUL, OpKind.CONV2D)

    @property
    def symbol(self) -> str:
        """Symbol used to draw the operation on an edge."""

        return _OP_SYMBOLS[self.kind]

    def output_shape(self, weight: None | Shape, source: Shape) -> Shape:
        """
        Shape of `weight ⊗ Y` for a source output of shape `source`.

        Raises
        ------
        ShapeMismatch
            If the weight and source shapes do not fit the operation.
        """

        match self.kind:
            case OpKind.IDENTITY:
                return tuple(source)
            case OpKind.SCALAR:
                if weight != ():
                    raise ShapeMismatch(f"Scalar weight has shape {weight}.")
                return tuple(source)
            case OpKind.MATMUL:
                return tensor.matmul_shape(weight, source)
            case OpKind.CONV2D:
                return tensor.conv2d_shape(source, weight)
            case OpKind.RESHAPE:
                if math.prod(self.target) != math.prod(source):
                    raise ShapeMismatch(
                        f"Cannot reshape {tuple(source)} to {self.target}."
                    )
                return self.target


@dataclasses.dataclass(frozen=True)
class CapsuleFn:
    """
    A capsule function.

    Parameters
    ----------
    kind : CapKind | str
        Which function to apply.
    window : int, optional
        Pooling window; required by, and only allowed for, downsampling.
    """

    kind: CapKind
    window: None | int = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", CapKind(self.kind))
        if self.kind is CapKind.DOWNSAMPLE:
            if self.window is None or int(self.window) < 1:
                raise ShapeMismatch("Downsampling needs a window of >= 1.")
            object.__setattr__(self, "window", int(self.window))
        elif self.window is not None:
            raise ShapeMismatch(f"A {self.kind.value} capsule has no window.")

    @classmethod
    def parse(cls, name: str, arg: None | int = None) -> "CapsuleFn":
        """Build a capsule function from its name and optional argument."""

        return cls(CapKind(name), arg)

    def check_shape(self, shape: Shape) -> None:
        """
        Check a total-input shape is legal for this capsule.

        Raises
        ------
        ShapeMismatch
            If a softmax gets a tensor that is not a vector, or a
            downsampling window does not divide its feature maps.
        """

        if self.kind is CapKind.SOFTMAX and len(shape) != 1:
            raise ShapeMismatch(f"Softmax needs a vector, got {shape}.")
        if self.kind is CapKind.DOWNSAMPLE:
            tensor.downsample_shape(shape, self.window)


SIGMOID = CapsuleFn(CapKind.SIGMOID)
IDENTITY = CapsuleFn(CapKind.IDENTITY)


@dataclasses.dataclass(frozen=True)
class InputNode:
    """An input node: its output is the value fed to it."""

    id: str
    shape: Shape = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "shape", check_shape(self.shape))


@dataclasses.dataclass(frozen=True)
class CapsuleNode:
    """
    A capsule node computing `cap(Σ W ⊗ Y + B)`.

    For downsampling capsules the bias is added after pooling, so its
    shape is that of the pooled maps. In every case the bias shape is
    the shape of the node's output.

    Parameters
    ----------
    id : str
        Node id, unique within a graph.
    cap : CapsuleFn
        Capsule function.
    bias_shape : tuple[int, ...]
        Shape of the bias (and of the node output).
    bias : Tensor, optional
        Bias tensor; absent until the graph is initialised.
    """

    id: str
    cap: CapsuleFn
    bias_shape: Shape = ()
    bias: None | Tensor = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "bias_shape", check_shape(self.bias_shape))
        if self.bias is not None and self.bias.shape != self.bias_shape:
            raise ShapeMismatch(
                f"Bias of {self.id} has shape {self.bias.shape}, "
                f"expected {self.bias_shape}."
            )


@dataclasses.dataclass(frozen=True)
class Edge:
    """
    A tensor-weighting connection from `src` to `dst`.

    Parameters
    ----------
    src, dst : str
        Source and destination node ids.
    op : WeightingOp
        Weighting operation.
    weight_shape : tuple[int, ...], optional
        Shape of the weight, for operations that take one.
    weight : Tensor, optional
        Weight tensor; absent until the graph is initialised.
    """

    src: str
    dst: str
    op: WeightingOp
    weight_shape: None | Shape = None
    weight: None | Tensor = None

    def __post_init__(self) -> None:
        if self.weight_shape is not None:
            shape = check_shape(self.weight_shape)
            object.__setattr__(self, "weight_shape", shape)
        if self.weight is not None:
            if self.weight_shape is None:
                object.__setattr__(self, "weight_shape", self.weight.shape)
            elif self.weight.shape != self.weight_shape:
                raise ShapeMismatch(
                    f"Weight of {self.src}->{self.dst} has shape "
                    f"{self.weight.shape}, expected {self.weight_shape}."
                )

    @property
    def key(self) -> EdgeKey:
        """The `(src, dst)` pair identifying the edge."""

        return (self.src, self.dst)


class _Structure:
    """Parameter-free adjacency of a graph, shared between its copies."""

    def __init__(self, graph: "CapsuleGraph") -> None:
        self.input_ids = tuple(node.id for node in graph.inputs)
        self.capsule_ids = tuple(node.id for node in graph.nodes)
        self.digraph = nx.DiGraph()
        self.digraph.add_nodes_from(self.input_ids + self.capsule_ids)
        self.digraph.add_edges_from(edge.key for edge in graph.edges)

        self.predecessors: dict[str, list[str]] = {
            n: [] for n in self.digraph
        }
        self.successors: dict[str, list[str]] = {n: [] for n in self.digraph}
        for src, dst in sorted(edge.key for edge in graph.edges):
            self.successors[src].append(dst)
            self.predecessors[dst].append(src)

    @functools.cached_property
    def order(self) -> None | tuple[str, ...]:
        """Lexicographic topological order, or `None` for cyclic graphs."""

        try:
            return tuple(nx.lexicographical_topological_sort(self.digraph))
        except nx.NetworkXUnfeasible:
            return None


@dataclasses.dataclass(frozen=True)
class CapsuleGraph:
    """
    A capsule network: input nodes, capsule nodes and weighted edges.

    Parameters
    ----------
    inputs : Iterable[InputNode]
        Input nodes.
    nodes : Iterable[CapsuleNode]
        Capsule nodes.
    edges : Iterable[Edge]
        Tensor-weighting connections.
    """

    inputs: tuple[InputNode, ...] = ()
    nodes: tuple[CapsuleNode, ...] = ()
    edges: tuple[Edge, ...] = ()

    def __post_init__(self) -> None:
        for name in ("inputs", "nodes", "edges"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @functools.cached_property
    def structure(self) -> _Structure:
        """Adjacency of the graph."""

        return _Structure(self)

    @functools.cached_property
    def _lookup(self) -> dict[str, InputNode | CapsuleNode]:
        return {node.id: node for node in (*self.inputs, *self.nodes)}

    @functools.cached_property
    def _edge_lookup(self) -> dict[EdgeKey, Edge]:
        return {edge.key: edge for edge in self.edges}

    @property
    def node_ids(self) -> tuple[str, ...]:
        """Ids of all nodes, inputs first, in declaration order."""

        return self.structure.input_ids + self.structure.capsule_ids

    @property
    def input_ids(self) -> tuple[str, ...]:
        """Ids of the input nodes."""

        return self.structure.input_ids

    @property
    def capsule_ids(self) -> tuple[str, ...]:
        """Ids of the capsule nodes."""

        return self.structure.capsule_ids

    def node(self, node_id: str) -> InputNode | CapsuleNode:
        """Look up a node by id."""

        return self._lookup[node_id]

    def edge(self, src: str, dst: str) -> Edge:
        """Look up an edge by its endpoints."""

        return self._edge_lookup[(src, dst)]

    def predecessors(self, node_id: str) -> tuple[str, ...]:
        """Ids with an edge into `node_id`, in lexicographic order."""

        return tuple(self.structure.predecessors[node_id])

    def successors(self, node_id: str) -> tuple[str, ...]:
        """Ids `node_id` has an edge into, in lexicographic order."""

        return tuple(self.structure.successors[node_id])

    def incoming(self, node_id: str) -> tuple[Edge, ...]:
        """Edges into `node_id`, ordered by source id."""

        return tuple(
            self._edge_lookup[(src, node_id)]
            for src in self.structure.predecessors[node_id]
        )

    @property
    def weighted_edges(self) -> tuple[Edge, ...]:
        """Edges that carry a weight, ordered by `(src, dst)`."""

        return tuple(
            edge
            for edge in sorted(self.edges, key=lambda e: e.key)
            if edge.op.requires_weight
        )

    @property
    def has_parameters(self) -> bool:
        """Whether every weight and bias has been populated."""

        return all(node.bias is not None for node in self.nodes) and all(
            edge.weight is not None for edge in self.weighted_edges
        )

    def with_parameters(
        self,
        weights: None | Mapping[EdgeKey, Tensor] = None,
        biases: None | Mapping[str, Tensor] = None,
    ) -> "CapsuleGraph":
        """
        Create a copy of the graph with some parameters replaced.

        Parameters
        ----------
        weights : Mapping[tuple[str, str], Tensor], optional
            New weights keyed by edge endpoints.
        biases : Mapping[str, Tensor], optional
            New biases keyed by node id.

        Returns
        -------
        graph : CapsuleGraph
            The updated graph, sharing its structure with this one.
        """

        weights = weights or {}
        biases = biases or {}

        nodes = tuple(
            dataclasses.replace(node, bias=biases[node.id])
            if node.id in biases
            else node
            for node in self.nodes
        )
        edges = tuple(
            dataclasses.replace(edge, weight=weights[edge.key])
            if edge.key in weights
            else edge
            for edge in self.edges
        )

        graph = CapsuleGraph(self.inputs, nodes, edges)
        if "structure" in self.__dict__:
            graph.__dict__["structure"] = self.structure

        return graph

    def to_networkx(self) -> nx.DiGraph:
        """Return a copy of the graph's skeleton as a `networkx` graph."""

        digraph = self.structure.digraph.copy()
        for node_id in self.input_ids:
            digraph.nodes[node_id]["input"] = True

        return digraph


class Violation(NamedTuple):
    """A single invariant violation found by `validate`."""

    kind: str
    message: str
    ids: tuple[str, ...] = ()


class ValidationReport(NamedTuple):
    """Outcome of `validate`: empty when the graph is valid."""

    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        """Whether no invariant is violated."""

        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return "\n".join(f"{v.kind}: {v.message}" for v in self.violations)


class Classification(NamedTuple):
    """Partition of a graph's nodes into inputs, hidden and outputs."""

    inputs: tuple[str, ...]
    hidden: tuple[str, ...]
    outputs: tuple[str, ...]


def validate(graph: CapsuleGraph) -> ValidationReport:
    """
    Check every invariant of a capsule graph.

    The checks cover unique non-empty ids, well-formed edges, weight
    presence, acyclicity, weak connectivity, and shape compatibility of
    every edge with the bias of the node it feeds.

    Parameters
    ----------
    graph : CapsuleGraph
        Graph to check.

    Returns
    -------
    report : ValidationReport
        All violations found, each naming the offending node or edge.
    """

    violations = _check_ids(graph)
    violations.extend(_check_edges(graph))
    if violations:
        return ValidationReport(tuple(violations))

    if not graph.node_ids:
        violations.append(Violation("empty", "Graph has no nodes."))

    structure = graph.structure
    for node_id in graph.capsule_ids:
        if not structure.predecessors[node_id]:
            violations.append(
                Violation(
                    "dangling",
                    f"Capsule node {node_id} has no incoming edge.",
                    (node_id,),
                )
            )

    if structure.order is None:
        cycle = tuple(src for src, _ in nx.find_cycle(structure.digraph))
        violations.append(
            Violation(
                "cycle", f"Directed cycle through {', '.join(cycle)}.", cycle
            )
        )
    elif graph.node_ids:
        violations.extend(_propagate_shapes(graph)[1])

    if graph.node_ids and not nx.is_weakly_connected(structure.digraph):
        parts = nx.weakly_connected_components(structure.digraph)
        components = sorted(sorted(c) for c in parts)
        violations.append(
            Violation(
                "disconnected",
                "Graph splits into components "
                + "; ".join(", ".join(c) for c in components)
                + ".",
                tuple(c[0] for c in components),
            )
        )

    return ValidationReport(tuple(violations))


def _check_ids(graph: CapsuleGraph) -> list[Violation]:
    """Check node ids are non-empty strings and unique."""

    violations = []
    seen = set()
    for node_id in (node.id for node in (*graph.inputs, *graph.nodes)):
        if not isinstance(node_id, str) or not node_id:
            violations.append(
                Violation("id", f"Invalid node id {node_id!r}.", ())
            )
        elif node_id in seen:
            violations.append(
                Violation("id", f"Duplicate node id {node_id}.", (node_id,))
            )
        seen.add(node_id)

    return violations


def _check_edges(graph: CapsuleGraph) -> list[Violation]:
    """Check edge endpoints, multiplicity and weight presence."""

    violations = []
    known = {node.id for node in (*graph.inputs, *graph.nodes)}
    inputs = {node.id for node in graph.inputs}
    seen = set()
    for edge in graph.edges:
        name = f"{edge.src}->{edge.dst}"
        ids = edge.key
        if edge.src not in known or edge.dst not in known:
            violations.append(
                Violation("edge", f"Edge {name} has an unknown end.", ids)
            )
        if edge.src == edge.dst:
            violations.append(
                Violation("edge", f"Edge {name} is a self-loop.", ids)
            )
        if edge.key in seen:
            violations.append(
                Violation("edge", f"Edge {name} is duplicated.", ids)
            )
        if edge.dst in inputs:
            violations.append(
                Violation("edge", f"Edge {name} enters an input node.", ids)
            )
        if edge.op.requires_weight and edge.weight_shape is None:
            violations.append(
                Violation("weight", f"Edge {name} needs a weight.", ids)
            )
        if not edge.op.requires_weight and edge.weight_shape is not None:
            violations.append(
                Violation("weight", f"Edge {name} takes no weight.", ids)
            )
        seen.add(edge.key)

    return violations


def _propagate_shapes(
    graph: CapsuleGraph,
) -> tuple[dict[str, Shape], list[Violation]]:
    """
    Walk an acyclic graph in topological order and infer output shapes.

    Every edge into a node must produce the node's bias shape, except
    for downsampling capsules, whose incoming edges must agree with one
    another and pool down to the bias shape.
    """

    shapes: dict[str, Shape] = {}
    violations: list[Violation] = []
    for node_id in graph.structure.order:
        node = graph.node(node_id)
        if isinstance(node, InputNode):
            shapes[node_id] = node.shape
            continue

        produced = []
        for edge in graph.incoming(node_id):
            name = f"{edge.src}->{edge.dst}"
            try:
                out = edge.op.output_shape(edge.weight_shape, shapes[edge.src])
            except ShapeMismatch as err:
                violations.append(
                    Violation("shape", f"Edge {name}: {err}", edge.key)
                )
                continue
            produced.append((edge, out))

        violations.extend(_check_node_shapes(node, produced))
        shapes[node_id] = node.bias_shape

    return shapes, violations


def _check_node_shapes(
    node: CapsuleNode, produced: list[tuple[Edge, Shape]]
) -> list[Violation]:
    """Check the shapes arriving at a capsule node."""

    violations = []
    if node.cap.kind is CapKind.DOWNSAMPLE:
        gathered = {out for _, out in produced}
        if len(gathered) > 1:
            violations.append(
                Violation(
                    "shape",
                    f"Edges into {node.id} produce differing shapes "
                    f"{sorted(gathered)}.",
                    (node.id,),
                )
            )
        for shape in sorted(gathered)[:1]:
            try:
                node.cap.check_shape(shape)
                pooled = tensor.downsample_shape(shape, node.cap.window)
            except ShapeMismatch as err:
                violations.append(
                    Violation("shape", f"Node {node.id}: {err}", (node.id,))
                )
                continue
            if pooled != node.bias_shape:
                violations.append(
                    Violation(
                        "shape",
                        f"Node {node.id} pools {shape} to {pooled}, but its "
                        f"bias has shape {node.bias_shape}.",
                        (node.id,),
                    )
                )
        return violations

    for edge, out in produced:
        if out != node.bias_shape:
            violations.append(
                Violation(
                    "shape",
                    f"Edge {edge.src}->{edge.dst} produces {out}, but "
                    f"{node.id} has bias shape {node.bias_shape}.",
                    edge.key,
                )
            )
    try:
        node.cap.check_shape(node.bias_shape)
    except ShapeMismatch as err:
        violations.append(
            Violation("shape", f"Node {node.id}: {err}", (node.id,))
        )

    return violations


def classify(graph: CapsuleGraph) -> Classification:
    """
    Partition the nodes into inputs, hidden nodes and outputs.

    Inputs have no incoming edge, outputs have no outgoing edge, and
    every other node is hidden. A lone input node is an input only.

    Raises
    ------
    InvalidGraph
        If the graph does not validate.
    """

    report = validate(graph)
    if not report.ok:
        raise InvalidGraph(str(report), report.violations)

    structure = graph.structure
    inputs, hidden, outputs = [], [], []
    for node_id in sorted(graph.node_ids):
        if not structure.predecessors[node_id]:
            inputs.append(node_id)
        elif not structure.successors[node_id]:
            outputs.append(node_id)
        else:
            hidden.append(node_id)

    return Classification(tuple(inputs), tuple(hidden), tuple(outputs))


def output_ids(graph: CapsuleGraph) -> tuple[str, ...]:
    """Capsule nodes without successors, in lexicographic order."""

    successors = graph.structure.successors
    return tuple(sorted(n for n in graph.capsule_ids if not successors[n]))


def topo_order(graph: CapsuleGraph) -> tuple[str, ...]:
    """
    Order the nodes so that every edge points forwards.

    Ties are broken by lexicographic node id.

    Raises
    ------
    CycleDetected
        If the graph has a directed cycle.
    """

    order = graph.structure.order
    if order is None:
        cycle = tuple(
            src for src, _ in nx.find_cycle(graph.structure.digraph)
        )
        raise CycleDetected(
            f"Directed cycle through {', '.join(cycle)}.", cycle
        )

    return order


def infer_shapes(graph: CapsuleGraph) -> dict[str, Shape]:
    """
    Infer the output shape of every node.

    Raises
    ------
    CycleDetected
        If the graph has a directed cycle.
    ShapeConflict
        Naming the first inconsistent node in topological order.
    """

    malformed = _check_ids(graph) + _check_edges(graph)
    if malformed:
        raise InvalidGraph(
            "\n".join(v.message for v in malformed), tuple(malformed)
        )

    topo_order(graph)
    shapes, violations = _propagate_shapes(graph)
    if violations:
        first = violations[0]
        raise ShapeConflict(first.message, node=first.ids[-1])

    return shapes
