"""
Forward evaluation of the tensor-computational model.

Input nodes pass their value through unchanged; every capsule node
computes its total input `u = Σ W ⊗ y + b` and output `cap(u)` in
topological order. For downsampling capsules the bias is added after
pooling, `u = pool(Σ W ⊗ y) + b`, and the output is `u` itself.
Incoming contributions are summed in lexicographic order of their
source ids, so evaluation is bit-reproducible.
"""

import dataclasses
import warnings
from types import MappingProxyType
from typing import Mapping

import numpy as np

from . import tensor
from .errors import InvalidGraph, MissingInput, NonFiniteValue, ShapeMismatch
from .graph import (
    CapKind,
    CapsuleFn,
    CapsuleGraph,
    InputNode,
    OpKind,
    WeightingOp,
    infer_shapes,
    topo_order,
)
from .tensor import Tensor

CNN_STAGES = (
    (OpKind.CONV2D, CapKind.RELU),
    (OpKind.IDENTITY, CapKind.DOWNSAMPLE),
    (OpKind.CONV2D, CapKind.RELU),
    (OpKind.IDENTITY, CapKind.DOWNSAMPLE),
    (OpKind.RESHAPE, CapKind.IDENTITY),
    (OpKind.MATMUL, CapKind.SOFTMAX),
)


@dataclasses.dataclass(frozen=True)
class ValueMap:
    """
    Outputs and total inputs recorded by a forward pass.

    Parameters
    ----------
    graph : CapsuleGraph
        The graph that was evaluated.
    outputs : Mapping[str, Tensor]
        Output of every node, inputs included.
    preactivations : Mapping[str, Tensor]
        Total input of every capsule node.
    """

    graph: CapsuleGraph
    outputs: Mapping[str, Tensor]
    preactivations: Mapping[str, Tensor]

    def __getitem__(self, node_id: str) -> Tensor:
        return self.outputs[node_id]


def apply_capsule(cap: CapsuleFn, u: Tensor) -> Tensor:
    """
    Apply a capsule function to a total input.

    Parameters
    ----------
    cap : CapsuleFn
        Capsule function. Softmax needs a vector; downsampling needs
        feature maps its window divides.
    u : Tensor
        Total input of the capsule.

    Returns
    -------
    y : Tensor
        Capsule output.
    """

    cap.check_shape(u.shape)
    x = u.array
    match cap.kind:
        case CapKind.IDENTITY:
            return u
        case CapKind.SIGMOID:
            return Tensor._wrap(0.5 * (1.0 + np.tanh(0.5 * x)))
        case CapKind.TANH:
            return Tensor._wrap(np.tanh(x))
        case CapKind.RELU:
            return Tensor._wrap(np.maximum(x, 0.0))
        case CapKind.SOFTMAX:
            shifted = np.exp(x - x.max())
            return Tensor._wrap(shifted / shifted.sum())
        case CapKind.SQUASH:
            return Tensor._wrap(x * _squash_factor(x))
        case CapKind.DOWNSAMPLE:
            return tensor.downsample(u, cap.window)


def _squash_factor(x: np.ndarray) -> float:
    """`‖s‖ / (1 + ‖s‖²)`, so that `squash(s) = factor · s`."""

    norm = float(np.linalg.norm(x))

    return norm / (1.0 + norm * norm)


def apply_weighting(
    op: WeightingOp, weight: None | Tensor, source: Tensor
) -> Tensor:
    """
    Compute `weight ⊗ source` for a weighting operation.

    Raises
    ------
    ShapeMismatch
        If the operands do not fit the operation.
    """

    match op.kind:
        case OpKind.IDENTITY:
            return source
        case OpKind.SCALAR:
            return tensor.scale(source, weight.item())
        case OpKind.MATMUL:
            return tensor.matmul(weight, source)
        case OpKind.CONV2D:
            return tensor.conv2d(source, weight)
        case OpKind.RESHAPE:
            return tensor.reshape(source, op.target)


def evaluate(graph: CapsuleGraph, inputs: Mapping[str, object]) -> ValueMap:
    """
    Evaluate a capsule graph on the given input values.

    Parameters
    ----------
    graph : CapsuleGraph
        A valid graph with every parameter populated.
    inputs : Mapping[str, Tensor | array-like]
        A value for every input node, of the node's declared shape.
        Flat sequences are read in row-major order.

    Returns
    -------
    values : ValueMap
        Output of every node and total input of every capsule node.

    Raises
    ------
    MissingInput
        If an input node has no value.
    ShapeMismatch
        If a value or parameter has the wrong shape for its node.
    NonFiniteValue
        If a node produces NaN or infinity; the first such node in
        topological order is reported.
    InvalidGraph
        If some parameters have not been initialised.
    """

    if not graph.has_parameters:
        raise InvalidGraph("Graph parameters have not been initialised.")

    unknown = sorted(set(inputs) - set(graph.input_ids))
    if unknown:
        message = f"Ignoring values for non-input nodes: {', '.join(unknown)}."
        warnings.warn(message, UserWarning)

    outputs: dict[str, Tensor] = {}
    preactivations: dict[str, Tensor] = {}
    for node_id in topo_order(graph):
        node = graph.node(node_id)
        try:
            if isinstance(node, InputNode):
                outputs[node_id] = _read_input(node, inputs)
                continue

            u, y = _evaluate_capsule(graph, node_id, outputs)
        except (ShapeMismatch, NonFiniteValue) as err:
            raise type(err)(f"Node {node_id}: {err}", node=node_id) from err

        preactivations[node_id] = u
        outputs[node_id] = y

    return ValueMap(
        graph, MappingProxyType(outputs), MappingProxyType(preactivations)
    )


def _read_input(node: InputNode, inputs: Mapping[str, object]) -> Tensor:
    """Fetch and shape-check the value of an input node."""

    if node.id not in inputs:
        raise MissingInput(f"No value for input node {node.id}.", node.id)

    return tensor.as_tensor(inputs[node.id], node.shape)


def _evaluate_capsule(
    graph: CapsuleGraph, node_id: str, outputs: Mapping[str, Tensor]
) -> tuple[Tensor, Tensor]:
    """Compute the total input and output of one capsule node."""

    node = graph.node(node_id)
    total = None
    for edge in graph.incoming(node_id):
        term = apply_weighting(edge.op, edge.weight, outputs[edge.src])
        total = term if total is None else tensor.add(total, term)

    if node.cap.kind is CapKind.DOWNSAMPLE:
        u = tensor.add(tensor.downsample(total, node.cap.window), node.bias)
        return u, u

    u = tensor.add(total, node.bias)

    return u, apply_capsule(node.cap, u)


def _path(graph: CapsuleGraph) -> tuple[str, ...]:
    """Return the nodes of a simple directed path, source first."""

    order = topo_order(graph)
    for src, dst in zip(order, order[1:]):
        if graph.successors(src) != (dst,) or graph.predecessors(dst) != (
            src,
        ):
            raise InvalidGraph(f"Graph is not a simple path at {src}.")

    return order


def _check_stage_shapes(graph: CapsuleGraph, values: ValueMap) -> None:
    """Check every recorded output against the inferred shapes."""

    for node_id, shape in infer_shapes(graph).items():
        if values[node_id].shape != shape:
            raise ShapeMismatch(
                f"Stage {node_id} produced {values[node_id].shape}, "
                f"expected {shape}.",
                node=node_id,
            )


def eval_mlp_path(graph: CapsuleGraph, x: object) -> ValueMap:
    """
    Evaluate a perceptron drawn as a path of capsules.

    Parameters
    ----------
    graph : CapsuleGraph
        Path whose edges are all matrix multiplications.
    x : Tensor | array-like
        Input vector.

    Returns
    -------
    values : ValueMap
        Values of every stage; their shapes are checked against
        `infer_shapes`.
    """

    order = _path(graph)
    for src, dst in zip(order, order[1:]):
        if graph.edge(src, dst).op.kind is not OpKind.MATMUL:
            raise InvalidGraph(f"Edge {src}->{dst} is not a matmul.")

    values = evaluate(graph, {order[0]: x})
    _check_stage_shapes(graph, values)

    return values


def eval_cnn_path(graph: CapsuleGraph, x: object) -> ValueMap:
    """
    Evaluate a convolutional network drawn as a path of capsules.

    The path must follow `CNN_STAGES`: convolution and ReLU, identity
    transfer and downsampling (twice), reshaping into an identity
    capsule, and a matrix product into a softmax.

    Parameters
    ----------
    graph : CapsuleGraph
        Seven-node capsule path.
    x : Tensor | array-like
        Input feature maps.

    Returns
    -------
    values : ValueMap
        Values of every stage; their shapes are checked against
        `infer_shapes`.
    """

    order = _path(graph)
    stages = tuple(
        (graph.edge(src, dst).op.kind, graph.node(dst).cap.kind)
        for src, dst in zip(order, order[1:])
    )
    if stages != CNN_STAGES:
        raise InvalidGraph("Graph does not follow the CNN capsule stages.")

    values = evaluate(graph, {order[0]: x})
    _check_stage_shapes(graph, values)

    return values
