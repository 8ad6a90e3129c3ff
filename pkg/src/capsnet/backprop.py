"""
Universal backpropagation over capsule graphs.

The sensitivity of a capsule node is `∂L/∂u`, the gradient of the loss
with respect to its total input. Output nodes get
it from the loss through their capsule function; hidden nodes sum the
contributions of their successors and then pass the sum through their
own capsule function. The bias gradient of a node is its sensitivity
and the weight gradient of an edge is the sensitivity pulled back
through the edge's weighting operation.

All chain-rule products are vector-Jacobian products: the functions
`cap_jacobian` and `op_adjoints` fix the tensor contractions for each
capsule function and weighting operation. `grad_check` verifies them
against central differences.
"""

import dataclasses
import enum
import logging
import math
import warnings
from types import MappingProxyType
from typing import Mapping

import numpy as np

from . import tensor
from .config import load_config
from .errors import (
    InvalidGraph,
    InvalidLoss,
    InvalidValues,
    MissingTarget,
    NonFiniteValue,
    ShapeMismatch,
)
from .forward import ValueMap, apply_capsule, evaluate
from .graph import (
    CapKind,
    CapsuleFn,
    CapsuleGraph,
    EdgeKey,
    OpKind,
    WeightingOp,
    output_ids,
    topo_order,
    validate,
)
from .tensor import Tensor

logger = logging.getLogger(__name__)

RELU_KINK = 1e-3


class LossKind(str, enum.Enum):
    """Per-node loss functions."""

    MSE = "mse"
    XENT = "xent"


@dataclasses.dataclass(frozen=True)
class LossSpec:
    """
    A loss function and one target per output node.

    Mean squared error is `½‖Y − T‖²`; softmax cross-entropy is
    `−Σ T log Y` and is only legal on softmax output nodes.

    Parameters
    ----------
    kind : LossKind | str
        Loss function applied to every output node.
    targets : Mapping[str, Tensor | array-like]
        Expected output of each output node.
    """

    kind: LossKind
    targets: Mapping[str, Tensor]

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", LossKind(self.kind))
        targets = {
            node_id: tensor.as_tensor(target)
            for node_id, target in self.targets.items()
        }
        object.__setattr__(self, "targets", MappingProxyType(targets))


@dataclasses.dataclass(frozen=True)
class SensitivityMap:
    """
    Sensitivities found by `backward`.

    Parameters
    ----------
    delta : Mapping[str, Tensor]
        `∂L/∂u` for every capsule node.
    input_grads : Mapping[str, Tensor]
        `∂L/∂Y_X` for every input node.
    """

    delta: Mapping[str, Tensor]
    input_grads: Mapping[str, Tensor]


@dataclasses.dataclass(frozen=True)
class GradientSet:
    """
    Parameter gradients found by `backward`.

    Parameters
    ----------
    weight_grads : Mapping[tuple[str, str], Tensor]
        `∂L/∂W` for every weighted edge, keyed by its endpoints.
    bias_grads : Mapping[str, Tensor]
        `∂L/∂B` for every capsule node.
    """

    weight_grads: Mapping[EdgeKey, Tensor]
    bias_grads: Mapping[str, Tensor]


def _target_for(loss: LossSpec, node_id: str, output: Tensor) -> Tensor:
    """Fetch and shape-check the target of an output node."""

    if node_id not in loss.targets:
        raise MissingTarget(f"No target for output node {node_id}.", node_id)

    return tensor.as_tensor(loss.targets[node_id], output.shape)


def _check_loss_applies(graph: CapsuleGraph, loss: LossSpec) -> None:
    """Cross-entropy is only defined on softmax outputs."""

    if loss.kind is not LossKind.XENT:
        return

    for node_id in output_ids(graph):
        if graph.node(node_id).cap.kind is not CapKind.SOFTMAX:
            raise InvalidLoss(
                f"Cross-entropy needs a softmax output, {node_id} is not.",
                node_id,
            )


def total_loss(values: ValueMap, loss: LossSpec) -> float:
    """
    Sum the per-node loss over all output nodes.

    Parameters
    ----------
    values : ValueMap
        Result of a forward pass.
    loss : LossSpec
        Loss function and targets.

    Returns
    -------
    total : float
        Non-negative total loss; zero for a graph without outputs.

    Raises
    ------
    MissingTarget
        If an output node has no target.
    ShapeMismatch
        If a target does not have its node's output shape.
    InvalidLoss
        If cross-entropy is asked of a non-softmax output.
    """

    graph = values.graph
    _check_loss_applies(graph, loss)

    total = 0.0
    for node_id in output_ids(graph):
        y = values[node_id]
        t = _target_for(loss, node_id, y)
        if loss.kind is LossKind.MSE:
            total += 0.5 * float(np.sum((y.array - t.array) ** 2))
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                terms = np.where(t.array == 0, 0.0, t.array * np.log(y.array))
            total -= float(np.sum(terms))

    if not math.isfinite(total):
        raise NonFiniteValue("Loss is not finite.")

    return total


def cap_jacobian(cap: CapsuleFn, u: Tensor, upstream: Tensor) -> Tensor:
    """
    Multiply an upstream gradient by the Jacobian of a capsule function.

    Parameters
    ----------
    cap : CapsuleFn
        Capsule function.
    u : Tensor
        Total input at which the Jacobian is taken.
    upstream : Tensor
        `∂L/∂Y`, shaped as the capsule output.

    Returns
    -------
    grad : Tensor
        `∂L/∂U`, shaped as `u`. For downsampling `u` is the sum
        before pooling and the gradient is spread evenly over each window.
    """

    if cap.kind is CapKind.DOWNSAMPLE:
        cap.check_shape(u.shape)
        return tensor.upsample(upstream, cap.window)

    if upstream.shape != u.shape:
        raise ShapeMismatch(
            f"Upstream shape {upstream.shape} differs from {u.shape}."
        )

    g = upstream.array
    match cap.kind:
        case CapKind.IDENTITY:
            return upstream
        case CapKind.SIGMOID:
            s = apply_capsule(cap, u).array
            return Tensor._wrap(g * s * (1.0 - s))
        case CapKind.TANH:
            t = np.tanh(u.array)
            return Tensor._wrap(g * (1.0 - t * t))
        case CapKind.RELU:
            return Tensor._wrap(np.where(u.array > 0, g, 0.0))
        case CapKind.SOFTMAX:
            y = apply_capsule(cap, u).array
            return Tensor._wrap(y * (g - np.dot(g, y)))
        case CapKind.SQUASH:
            return _squash_jacobian(u.array, g)


def _squash_jacobian(s: np.ndarray, g: np.ndarray) -> Tensor:
    """
    Vector-Jacobian product of `squash(s) = φ(‖s‖)·s`, `φ(n) = n/(1+n²)`.

    The Jacobian `φ I + φ'(n)/n · s sᵀ` is symmetric and vanishes at the
    origin.
    """

    norm = float(np.linalg.norm(s))
    if norm == 0.0:
        return Tensor.zeros(s.shape)

    denom = 1.0 + norm * norm
    phi = norm / denom
    dphi = (1.0 - norm * norm) / (denom * denom)

    return Tensor._wrap(phi * g + (dphi / norm) * np.vdot(s, g) * s)


def op_adjoints(
    op: WeightingOp,
    weight: None | Tensor,
    source: Tensor,
    delta: Tensor,
) -> tuple[None | Tensor, Tensor]:
    """
    Pull a sensitivity back through a weighting operation.

    Parameters
    ----------
    op : WeightingOp
        Weighting operation of the edge.
    weight : Tensor, optional
        Edge weight, for operations that take one.
    source : Tensor
        Output of the edge's source node.
    delta : Tensor
        Gradient with respect to `weight ⊗ source`.

    Returns
    -------
    weight_grad : Tensor | None
        Gradient with respect to the weight; `None` for weightless ops.
    input_grad : Tensor
        Gradient with respect to `source`.
    """

    match op.kind:
        case OpKind.IDENTITY:
            return None, delta
        case OpKind.SCALAR:
            weight_grad = Tensor._wrap(np.array(tensor.dot(delta, source)))
            return weight_grad, tensor.scale(delta, weight.item())
        case OpKind.MATMUL:
            if source.rank == 1:
                weight_grad = tensor.outer(delta, source)
            else:
                weight_grad = tensor.matmul(delta, tensor.transpose(source))
            return weight_grad, tensor.matmul(tensor.transpose(weight), delta)
        case OpKind.CONV2D:
            return (
                tensor.conv2d_kernel_grad(source, delta),
                tensor.conv2d_input_grad(delta, weight),
            )
        case OpKind.RESHAPE:
            return None, tensor.reshape(delta, source.shape)


def _output_delta(
    cap: CapsuleFn, u: Tensor, y: Tensor, t: Tensor, kind: LossKind
) -> Tensor:
    """Sensitivity of an output node."""

    if kind is LossKind.XENT:
        # softmax and cross-entropy combined: Y·ΣT − T, i.e. Y − T for
        # targets that sum to one
        return Tensor._wrap(y.array * t.array.sum() - t.array)

    residual = tensor.add(y, tensor.scale(t, -1.0))
    if cap.kind is CapKind.DOWNSAMPLE:
        # pooled outputs are their own total input
        return residual

    return cap_jacobian(cap, u, residual)


def backward(
    graph: CapsuleGraph, values: ValueMap, loss: LossSpec
) -> tuple[SensitivityMap, GradientSet]:
    """
    Compute sensitivities and parameter gradients of the total loss.

    Nodes are visited in reverse topological order. Each visited node
    pushes its contribution to every predecessor before the predecessor
    is visited, so a hidden node's sensitivity is the sum over its
    successors taken in that deterministic order.

    Parameters
    ----------
    graph : CapsuleGraph
        The evaluated graph.
    values : ValueMap
        Result of `evaluate(graph, ...)`.
    loss : LossSpec
        Loss function and targets.

    Returns
    -------
    sensitivities : SensitivityMap
        `∂L/∂u` per capsule node and `∂L/∂y` per input node.
    gradients : GradientSet
        Weight gradients per weighted edge and bias gradients per node.

    Raises
    ------
    InvalidValues
        If `values` was not produced by evaluating `graph`.
    """

    if values.graph is not graph and values.graph != graph:
        raise InvalidValues("Values were not computed on this graph.")

    _check_loss_applies(graph, loss)
    outputs = set(output_ids(graph))

    upstream: dict[str, Tensor] = {}
    delta: dict[str, Tensor] = {}
    weight_grads: dict[EdgeKey, Tensor] = {}
    for node_id in reversed(topo_order(graph)):
        if node_id in graph.input_ids:
            continue

        node = graph.node(node_id)
        u, y = values.preactivations[node_id], values[node_id]
        if node_id in outputs:
            t = _target_for(loss, node_id, y)
            delta[node_id] = _output_delta(node.cap, u, y, t, loss.kind)
        elif node.cap.kind is CapKind.DOWNSAMPLE:
            delta[node_id] = upstream[node_id]
        else:
            delta[node_id] = cap_jacobian(node.cap, u, upstream[node_id])

        # pooling sits between the incoming sum and the total input
        gathered = delta[node_id]
        if node.cap.kind is CapKind.DOWNSAMPLE:
            gathered = tensor.upsample(gathered, node.cap.window)

        for edge in graph.incoming(node_id):
            weight_grad, input_grad = op_adjoints(
                edge.op, edge.weight, values[edge.src], gathered
            )
            if weight_grad is not None:
                weight_grads[edge.key] = weight_grad
            if edge.src in upstream:
                input_grad = tensor.add(upstream[edge.src], input_grad)
            upstream[edge.src] = input_grad

    input_grads = {
        node_id: upstream.get(node_id, Tensor.zeros(values[node_id].shape))
        for node_id in graph.input_ids
    }
    sensitivities = SensitivityMap(
        MappingProxyType(delta), MappingProxyType(input_grads)
    )
    gradients = GradientSet(
        MappingProxyType(weight_grads), MappingProxyType(dict(delta))
    )

    return sensitivities, gradients


def _relative_error(analytic: float, numeric: float) -> float:
    """`|a − n| / max(|a|, |n|, 1e-8)`."""

    scale = max(abs(analytic), abs(numeric), 1e-8)

    return abs(analytic - numeric) / scale


def _check_epsilon(epsilon: float) -> None:
    """Check the finite-difference step lies in `(0, 1e-3]`."""

    if not 0 < epsilon <= 1e-3:
        raise ValueError("Epsilon must lie in (0, 1e-3].")


def _warn_on_kinks(graph: CapsuleGraph, values: ValueMap) -> None:
    """Warn when a ReLU total input sits too close to zero."""

    for node_id in graph.capsule_ids:
        if graph.node(node_id).cap.kind is not CapKind.RELU:
            continue
        u = values.preactivations[node_id].array
        if np.any(np.abs(u) < RELU_KINK):
            message = (
                f"ReLU node {node_id} has total inputs within {RELU_KINK} "
                "of its kink; finite differences may disagree there."
            )
            warnings.warn(message, UserWarning)


def grad_check(
    graph: CapsuleGraph,
    inputs: Mapping[str, object],
    loss: LossSpec,
    epsilon: None | float = None,
) -> float:
    """
    Compare analytic gradients with central differences.

    Every weight and bias entry θ is perturbed by ±ε and the numeric
    derivative `(L(θ+ε) − L(θ−ε)) / 2ε` compared with the gradient from
    `backward`. The difference of the two losses is taken output by
    output. Where the loss is exactly zero every numeric derivative is
    zero, since a non-negative loss has its minimum there.

    Parameters
    ----------
    graph : CapsuleGraph
        A valid graph with every parameter populated.
    inputs : Mapping[str, Tensor | array-like]
        Value of every input node.
    loss : LossSpec
        Loss function and targets.
    epsilon : float, optional
        Step size in `(0, 1e-3]`. Read from the `gradcheck`
        configuration (1e-5) if not given.

    Returns
    -------
    error : float
        Largest relative error `|a − n| / max(|a|, |n|, 1e-8)` over all
        parameter entries.

    Raises
    ------
    InvalidGraph
        If the graph does not validate.
    NonFiniteValue
        If any loss evaluation is not finite.
    """

    if epsilon is None:
        epsilon = float(load_config("gradcheck")["epsilon"])
    _check_epsilon(epsilon)

    report = validate(graph)
    if not report.ok:
        raise InvalidGraph(str(report), report.violations)

    values = evaluate(graph, inputs)
    _warn_on_kinks(graph, values)
    _, gradients = backward(graph, values, loss)
    # a non-negative loss is stationary wherever it vanishes
    stationary = total_loss(values, loss) == 0.0

    def values_at(weights=None, biases=None):
        return evaluate(graph.with_parameters(weights, biases), inputs)

    def numeric_for(parameter, values_with):
        if stationary:
            return np.zeros(parameter.size)
        return _central_differences(parameter, epsilon, values_with, loss)

    worst, where = 0.0, None
    for edge in graph.weighted_edges:
        analytic = gradients.weight_grads[edge.key].array.ravel()
        numeric = numeric_for(
            edge.weight, lambda w: values_at(weights={edge.key: w})
        )
        for index, value in enumerate(numeric):
            error = _relative_error(float(analytic[index]), float(value))
            if error > worst:
                worst, where = error, (f"{edge.src}->{edge.dst}", index)

    for node_id in graph.capsule_ids:
        analytic = gradients.bias_grads[node_id].array.ravel()
        numeric = numeric_for(
            graph.node(node_id).bias,
            lambda b: values_at(biases={node_id: b}),
        )
        for index, value in enumerate(numeric):
            error = _relative_error(float(analytic[index]), float(value))
            if error > worst:
                worst, where = error, (node_id, index)

    logger.debug("Largest relative gradient error %.3e at %s", worst, where)

    return worst


def _loss_difference(
    plus: ValueMap, minus: ValueMap, loss: LossSpec
) -> float:
    """
    `L(plus) − L(minus)`, summed output by output.

    Each term is factored so that two whole losses are never subtracted:
    `½(Y₊ − Y₋)(Y₊ + Y₋ − 2T)` for squared error and `−T log(Y₊ / Y₋)`
    for cross-entropy.
    """

    difference = 0.0
    for node_id in output_ids(plus.graph):
        y_plus, y_minus = plus[node_id].array, minus[node_id].array
        t = _target_for(loss, node_id, plus[node_id]).array
        if loss.kind is LossKind.MSE:
            terms = 0.5 * (y_plus - y_minus) * (y_plus + y_minus - 2.0 * t)
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.log1p((y_plus - y_minus) / y_minus)
                terms = np.where(t == 0, 0.0, -t * ratio)
        difference += float(np.sum(terms))

    if not math.isfinite(difference):
        raise NonFiniteValue("Loss is not finite.")

    return difference


def _central_differences(
    parameter: Tensor, epsilon: float, values_at, loss: LossSpec
) -> np.ndarray:
    """Numeric derivative of the loss for every entry, in flat order."""

    flat = parameter.array.ravel()
    numeric = np.empty(flat.size)
    for index in range(flat.size):
        shifted = flat.copy()
        shifted[index] = flat[index] + epsilon
        plus = values_at(Tensor(shifted, parameter.shape))
        shifted[index] = flat[index] - epsilon
        minus = values_at(Tensor(shifted, parameter.shape))
        numeric[index] = _loss_difference(plus, minus, loss) / (2 * epsilon)

    return numeric
