"""Unit tests for the `forward` module."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capsnet.errors import (
    InvalidGraph,
    MissingInput,
    NonFiniteValue,
    ShapeMismatch,
)
from capsnet.forward import (
    apply_capsule,
    eval_cnn_path,
    eval_mlp_path,
    evaluate,
)
from capsnet.graph import (
    CapKind,
    CapsuleFn,
    CapsuleGraph,
    CapsuleNode,
    Edge,
    InputNode,
    WeightingOp,
    infer_shapes,
)
from capsnet.models import build_mlp, fixtures
from capsnet.tensor import Tensor

from .common import (
    SCALAR_FUNCTIONS,
    ST_REALS,
    ST_SEEDS,
    random_inputs,
    random_parameters,
    scalar_graph,
    scalar_oracle,
    st_dag_structures,
    st_tensors,
)

settings.register_profile("ci", deadline=None)
settings.load_profile("ci")

FIXTURES = fixtures()


def linear_graph(seed):
    """A tensor network of identity capsules with zero biases."""

    identity = CapsuleFn(CapKind.IDENTITY)
    graph = CapsuleGraph(
        [InputNode("x", (1, 4, 4))],
        [
            CapsuleNode("a", identity, (2, 3, 3)),
            CapsuleNode("r", identity, (18,)),
            CapsuleNode("o", identity, (3,)),
        ],
        [
            Edge("x", "a", WeightingOp.conv2d(), (2, 1, 2, 2)),
            Edge("a", "r", WeightingOp.reshape((18,))),
            Edge("r", "o", WeightingOp.matmul(), (3, 18)),
        ],
    )
    graph = random_parameters(graph, seed)
    zeros = {node.id: Tensor.zeros(node.bias_shape) for node in graph.nodes}

    return graph.with_parameters(biases=zeros)


def test_trivial_network():
    """Check an input node outputs its value."""

    values = evaluate(FIXTURES["trivial"], {"x1": 3.0})

    assert values["x1"] == Tensor(3.0)
    assert dict(values.preactivations) == {}


def test_identity_pipeline():
    """Check identity transfer into an identity capsule is a no-op."""

    identity = CapsuleFn(CapKind.IDENTITY)
    graph = CapsuleGraph(
        [InputNode("x", (2, 2))],
        [CapsuleNode("h", identity, (2, 2), Tensor.zeros((2, 2)))],
        [Edge("x", "h", WeightingOp.identity())],
    )
    x = Tensor([[1.0, -2.0], [3.5, 0.25]])

    assert evaluate(graph, {"x": x})["h"] == x


def test_single_sigmoid_neuron_at_zero():
    """Check one sigmoid neuron with unit weight at zero gives a half."""

    values = evaluate(FIXTURES["one_input_one_neuron"], {"x1": 0.0})

    assert values["h1"].item() == 0.5
    assert values.preactivations["h1"].item() == 0.0


def test_softmax_of_zeros():
    """Check a flat softmax is uniform."""

    y = apply_capsule(CapsuleFn(CapKind.SOFTMAX), Tensor.zeros((4,)))

    assert y == Tensor([0.25, 0.25, 0.25, 0.25])


def test_relu():
    """Check ReLU clips negatives only."""

    y = apply_capsule(CapsuleFn(CapKind.RELU), Tensor([-1.0, 2.0]))

    assert y == Tensor([0.0, 2.0])


def test_squash_unit_vector():
    """Check a unit vector is squashed to half its length."""

    s = Tensor([0.6, 0.0, -0.8])

    y = apply_capsule(CapsuleFn(CapKind.SQUASH), s)

    assert np.allclose(y.array, s.array / 2, rtol=1e-15, atol=0)


def test_squash_zero():
    """Check the zero vector squashes to itself."""

    y = apply_capsule(CapsuleFn(CapKind.SQUASH), Tensor.zeros((3,)))

    assert y == Tensor.zeros((3,))


@given(st_tensors((5,), elements=st.integers(-10, 10).map(float)))
def test_squash_keeps_direction_and_shrinks(s):
    """Check squashing points the same way with length below one."""

    y = apply_capsule(CapsuleFn(CapKind.SQUASH), s).array

    assert np.linalg.norm(y) < 1
    assert np.all(np.sign(y) == np.sign(s.array))


@given(st_tensors((6,), elements=ST_REALS))
def test_softmax_sums_to_one(u):
    """Check softmax outputs sum to one for any finite input."""

    y = apply_capsule(CapsuleFn(CapKind.SOFTMAX), u).array

    assert math.isclose(y.sum(), 1.0, abs_tol=1e-12)
    assert np.all(y > 0)


def test_softmax_of_matrix_raises():
    """Check softmax refuses a matrix."""

    with pytest.raises(ShapeMismatch):
        apply_capsule(CapsuleFn(CapKind.SOFTMAX), Tensor.zeros((2, 2)))


def test_downsample_capsule_adds_bias_after_pooling():
    """Check a pooling node outputs its pooled sum plus bias."""

    pool = CapsuleFn(CapKind.DOWNSAMPLE, 2)
    bias = Tensor([[[10.0]]])
    graph = CapsuleGraph(
        [InputNode("x", (1, 2, 2))],
        [CapsuleNode("p", pool, (1, 1, 1), bias)],
        [Edge("x", "p", WeightingOp.identity())],
    )

    values = evaluate(graph, {"x": [1.0, 2.0, 3.0, 4.0]})

    assert values["p"] == Tensor([[[12.5]]])
    assert values.preactivations["p"] == values["p"]


def test_mlp_with_zero_parameters():
    """Check zero weights and biases give all-0.5 sigmoid outputs."""

    graph = build_mlp()
    weights = {e.key: Tensor.zeros(e.weight_shape) for e in graph.edges}
    biases = {n.id: Tensor.zeros(n.bias_shape) for n in graph.nodes}
    graph = graph.with_parameters(weights, biases)

    values = eval_mlp_path(graph, np.arange(5.0))

    for node_id in ("H1", "H2", "H3"):
        assert values[node_id] == Tensor.full((7,), 0.5)


@given(ST_SEEDS)
def test_cnn_softmax_sums_to_one(seed):
    """Check the classifier outputs form a distribution."""

    x = random_inputs(FIXTURES["cnn"], seed)["X"]

    values = eval_cnn_path(FIXTURES["cnn"], x)

    assert math.isclose(values["O"].array.sum(), 1.0, abs_tol=1e-12)


def test_cnn_stage_shapes():
    """Check every stage output has its inferred shape."""

    graph = FIXTURES["cnn"]

    values = eval_cnn_path(graph, np.zeros((1, 12, 12)))

    shapes = {node_id: values[node_id].shape for node_id in graph.node_ids}
    assert shapes == infer_shapes(graph)
    assert shapes["H2"] == (4, 5, 5)
    assert shapes["H4"] == (8, 2, 2)


def test_path_wrappers_check_the_path():
    """Check the wrappers refuse networks of the other kind."""

    with pytest.raises(InvalidGraph):
        eval_mlp_path(FIXTURES["cnn"], np.zeros((1, 12, 12)))
    with pytest.raises(InvalidGraph):
        eval_cnn_path(FIXTURES["mlp"], np.zeros(5))
    with pytest.raises(InvalidGraph):
        eval_mlp_path(FIXTURES["diamond"], 0.0)


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_evaluation_is_pure(name):
    """Check evaluating twice gives bit-identical values."""

    graph = FIXTURES[name]
    inputs = random_inputs(graph, 0)

    first = evaluate(graph, inputs)
    second = evaluate(graph, inputs)

    assert dict(first.outputs) == dict(second.outputs)
    assert dict(first.preactivations) == dict(second.preactivations)
    assert set(first.outputs) == set(graph.node_ids)
    assert set(first.preactivations) == set(graph.capsule_ids)


@given(ST_SEEDS, ST_REALS, ST_REALS)
def test_identity_networks_are_linear(seed, alpha, beta):
    """Check eval(αx + βy) = α eval(x) + β eval(y)."""

    graph = linear_graph(seed)
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-1, 1, size=(2, 1, 4, 4))

    combined = evaluate(graph, {"x": alpha * x + beta * y})["o"].array
    separate = (
        alpha * evaluate(graph, {"x": x})["o"].array
        + beta * evaluate(graph, {"x": y})["o"].array
    )

    scale = max(1.0, np.abs(separate).max())
    assert np.allclose(combined, separate, rtol=1e-10, atol=1e-10 * scale)


@given(
    st_dag_structures(min_nodes=2),
    st.sampled_from(sorted(SCALAR_FUNCTIONS)),
    ST_SEEDS,
)
def test_scalar_networks_match_recursion(structure, cap, seed):
    """Check scalar networks agree with a recursive evaluation."""

    graph = random_parameters(scalar_graph(*structure, cap=cap), seed)
    inputs = random_inputs(graph, seed)

    values = evaluate(graph, inputs)
    expected = scalar_oracle(graph, inputs)

    for node_id, value in expected.items():
        assert math.isclose(
            values[node_id].item(), value, rel_tol=1e-12, abs_tol=1e-12
        )


def test_missing_input():
    """Check an absent input value names the node."""

    with pytest.raises(MissingInput) as info:
        evaluate(FIXTURES["two_input_one_neuron"], {"x1": 1.0})

    assert info.value.node == "x2"


def test_input_of_wrong_shape():
    """Check an input of the wrong shape is refused."""

    with pytest.raises(ShapeMismatch):
        evaluate(FIXTURES["mlp"], {"X": np.zeros(4)})


def test_unknown_inputs_warn():
    """Check values for non-input nodes are ignored with a warning."""

    with pytest.warns(UserWarning, match="h1"):
        values = evaluate(
            FIXTURES["one_input_one_neuron"], {"x1": 0.0, "h1": 9.0}
        )

    assert values["h1"].item() == 0.5


def test_overflow_names_the_node():
    """Check an infinite total input is reported at its node."""

    graph = FIXTURES["linear"].with_parameters({("x", "h"): Tensor(1e300)})

    with pytest.raises(NonFiniteValue) as info:
        evaluate(graph, {"x": 1e300})

    assert info.value.node == "h"


def test_uninitialised_graph_raises():
    """Check evaluation needs every parameter."""

    with pytest.raises(InvalidGraph, match="initialised"):
        evaluate(build_mlp(), {"X": np.zeros(5)})
