"""Unit tests for the `models` module."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capsnet.errors import InvalidSpec
from capsnet.forward import CNN_STAGES, evaluate
from capsnet.generation import derive, is_isomorphic, replay
from capsnet.graph import (
    CapKind,
    OpKind,
    classify,
    infer_shapes,
    topo_order,
    validate,
)
from capsnet.models import CnnSpec, MlpSpec, build_cnn, build_mlp, fixtures
from capsnet.tensor import Tensor

from .common import random_inputs

settings.register_profile("ci", deadline=None)
settings.load_profile("ci")

FIXTURES = fixtures()
PATHS = [
    "trivial",
    "one_input_one_neuron",
    "one_input_two_neuron_b",
    "linear",
    "mlp",
    "cnn",
    "cnn_small",
]


def is_path(graph):
    """Whether every node has at most one neighbour either side."""

    return all(
        len(graph.predecessors(n)) <= 1 and len(graph.successors(n)) <= 1
        for n in graph.node_ids
    )


def test_default_mlp_weight_shapes():
    """Check the default perceptron has 7x5, 7x7, 7x7 and 4x7 weights."""

    graph = build_mlp()

    shapes = [edge.weight_shape for edge in graph.weighted_edges]
    assert sorted(shapes) == sorted([(7, 5), (7, 7), (7, 7), (4, 7)])
    assert graph.edge("X", "H1").weight_shape == (7, 5)
    assert graph.edge("H3", "O").weight_shape == (4, 7)
    assert all(e.op.kind is OpKind.MATMUL for e in graph.edges)

    assert [infer_shapes(graph)[n] for n in ("H1", "H2", "H3", "O")] == [
        (7,),
        (7,),
        (7,),
        (4,),
    ]


@given(st.integers(1, 6))
def test_identity_mlp_computes_identity(width):
    """Check identity capsules with identity weights copy their input."""

    spec = MlpSpec((width, width, width), "identity", "identity")
    graph = build_mlp(spec)
    graph = graph.with_parameters(
        {e.key: Tensor(np.eye(width)) for e in graph.edges},
        {n.id: Tensor.zeros((width,)) for n in graph.nodes},
    )
    x = np.arange(1.0, width + 1)

    assert evaluate(graph, {"X": x})["O"] == Tensor(x)


@given(
    st.lists(st.integers(1, 8), min_size=2, max_size=6),
    st.sampled_from(["sigmoid", "tanh", "relu", "identity"]),
)
def test_random_mlps_are_valid_paths(widths, hidden):
    """Check built perceptrons validate and have a single output."""

    graph = build_mlp(MlpSpec(widths, hidden))

    assert validate(graph).ok
    assert is_path(graph)
    assert classify(graph).outputs == ("O",)
    assert len(graph.node_ids) == len(widths)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"widths": (5,)},
        {"widths": (5, 0)},
        {"widths": (5, 2.5)},
        {"hidden": "gelu"},
    ],
)
def test_mlp_spec_rejects_bad_values(kwargs):
    """Check perceptron specifications are validated."""

    with pytest.raises(InvalidSpec):
        MlpSpec(**kwargs)


def test_cnn_stages():
    """Check the convolutional path follows its op and capsule sequence."""

    graph = build_cnn()
    order = topo_order(graph)

    stages = tuple(
        (graph.edge(src, dst).op.kind, graph.node(dst).cap.kind)
        for src, dst in zip(order, order[1:])
    )

    assert order == ("X", "H1", "H2", "H3", "H4", "H5", "O")
    assert stages == CNN_STAGES
    assert stages[0] == (OpKind.CONV2D, CapKind.RELU)
    assert stages[-1] == (OpKind.MATMUL, CapKind.SOFTMAX)
    assert is_path(graph)


def test_cnn_default_shapes():
    """Check the default stage shapes follow the per-op formulas."""

    shapes = infer_shapes(build_cnn())

    assert shapes["H1"] == (4, 10, 10)
    assert shapes["H2"] == (4, 5, 5)
    assert shapes["H3"] == (8, 4, 4)
    assert shapes["H4"] == (8, 2, 2)
    assert shapes["H5"] == (32,)
    assert shapes["O"] == (10,)


@pytest.mark.parametrize("seed", range(5))
def test_cnn_output_sums_to_one(seed):
    """Check the classifier output is a distribution."""

    graph = FIXTURES["cnn"]

    y = evaluate(graph, random_inputs(graph, seed))["O"].array

    assert math.isclose(y.sum(), 1.0, abs_tol=1e-12)


@pytest.mark.parametrize(
    "spec",
    [
        # a second 3x3 stage leaves 3x3 maps, which two does not divide
        {"kernels": ((4, 3), (8, 3))},
        {"input_shape": (1, 4, 4)},
        {"input_shape": (1, 12, 12), "window": 5},
    ],
)
def test_cnn_shapes_must_fit(spec):
    """Check windows that do not divide their maps are refused."""

    with pytest.raises(InvalidSpec):
        build_cnn(CnnSpec(**spec))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"input_shape": (12, 12)},
        {"kernels": ((4, 3),)},
        {"kernels": ((4, 3), (8, 0))},
        {"window": 0},
        {"classes": -1},
    ],
)
def test_cnn_spec_rejects_bad_values(kwargs):
    """Check convolutional specifications are validated."""

    with pytest.raises(InvalidSpec):
        CnnSpec(**kwargs)


def test_specs_from_bundled_toml():
    """Check the bundled files give the default specifications."""

    assert MlpSpec.from_toml() == MlpSpec()
    assert CnnSpec.from_toml() == CnnSpec()


def test_spec_from_file(tmp_path):
    """Check a perceptron specification can be read from a path."""

    path = tmp_path / "mlp.toml"
    path.write_text('widths = [3, 2]\nhidden = "tanh"\noutput = "softmax"\n')

    spec = MlpSpec.from_toml(str(path))

    assert spec.widths == (3, 2)
    assert spec.output.kind is CapKind.SOFTMAX


def test_fixture_families():
    """Check the scalar families have their expected sizes."""

    names = list(FIXTURES)

    assert sum(n.startswith("two_input_two_neuron_") for n in names) == 7
    assert sum(n.startswith("one_input_two_neuron_") for n in names) == 3
    assert sum(n.startswith("one_input_three_neuron_") for n in names) == 7
    assert {"convergence_a", "convergence_b", "convergence_c"} <= set(names)
    assert {"trivial", "diamond", "mlp", "cnn"} <= set(names)


def test_two_input_two_neuron_fixtures_are_distinct():
    """Check the seven growth results differ in their edges."""

    edge_sets = {
        frozenset(e.key for e in FIXTURES[f"two_input_two_neuron_{s}"].edges)
        for s in "abcdefg"
    }

    assert len(edge_sets) == 7


def test_one_input_three_neuron_fixtures_are_distinct():
    """Check no two of the seven chain growths are isomorphic."""

    family = [FIXTURES[f"one_input_three_neuron_{s}"] for s in "abcdefg"]

    for i, first in enumerate(family):
        for second in family[i + 1 :]:
            assert not is_isomorphic(first, second)


@pytest.mark.parametrize("suffix", "abcdefg")
def test_one_input_three_neuron_fixtures_replay(suffix):
    """Check each member of the family derives and replays to itself."""

    graph = FIXTURES[f"one_input_three_neuron_{suffix}"]
    derivation = derive(graph)

    assert derivation.rules()["variable"] >= 1
    assert sum(derivation.rules().values()) == 4
    assert is_isomorphic(replay(derivation), graph)


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_fixtures_are_usable(name):
    """Check every fixture validates, shape-infers and evaluates."""

    graph = FIXTURES[name]
    zeros = {
        node.id: Tensor.zeros(node.shape) for node in graph.inputs
    }

    assert validate(graph).ok
    assert graph.has_parameters
    assert set(infer_shapes(graph)) == set(graph.node_ids)
    assert set(evaluate(graph, zeros).outputs) == set(graph.node_ids)


def test_convergence_fixture_needs_convergence():
    """Check the joined pair is derived with a convergence step."""

    assert derive(FIXTURES["convergence_c"]).rules()["convergence"] >= 1


@pytest.mark.parametrize("name", PATHS)
def test_paths_need_no_convergence(name):
    """Check simple paths are derived without convergence."""

    graph = FIXTURES[name]

    assert is_path(graph)
    assert derive(graph).rules()["convergence"] == 0


def test_fixtures_are_seeded():
    """Check the tensor fixtures depend on the seed only."""

    assert fixtures(3)["cnn_small"] == fixtures(3)["cnn_small"]
    assert fixtures(3)["cnn_small"] != fixtures(4)["cnn_small"]
