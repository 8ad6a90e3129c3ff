"""Unit tests for derivations of connected DAGs."""

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capsnet.errors import CycleDetected, NodeCollision, NotConnected
from capsnet.generation import (
    Convergence,
    Growth,
    Neuron,
    Variable,
    derive,
    induced_network,
    is_isomorphic,
    replay,
)
from capsnet.graph import CapKind, validate
from capsnet.models import fixtures

from ..common import ST_SEEDS, st_dag_structures
from .strategies import (
    decorated_network,
    relabelled,
    skeleton,
    upper_triangular_dags,
)

settings.register_profile("ci", deadline=None)
settings.load_profile("ci")

FIXTURES = fixtures()


def same_network(a, b):
    """Whether two networks agree node for node and edge for edge."""

    return (
        set(a.input_ids) == set(b.input_ids)
        and {node.id: node for node in a.nodes}
        == {node.id: node for node in b.nodes}
        and {edge.key: edge for edge in a.edges}
        == {edge.key: edge for edge in b.edges}
    )


def test_trivial_network_is_a_variable():
    """Check a lone input node is derived by the rule of variable."""

    assert derive(FIXTURES["trivial"]) == Variable("x1")


def test_single_neuron_is_grown():
    """Check one neuron on one input is a growth of a variable."""

    derivation = derive(FIXTURES["one_input_one_neuron"])

    assert derivation == Growth(
        node="h1",
        base=Variable("x1"),
        subset=("x1",),
        cap="sigmoid",
        bias=0.0,
        weights={"x1": 1.0},
    )


def test_diamond_rules():
    """Check the diamond needs growth only."""

    derivation = derive(FIXTURES["diamond"])

    assert derivation.node == "c"
    assert derivation.subset == ("a", "b")
    assert derivation.rules() == {"growth": 3, "variable": 1}


def test_convergence_splits_into_components():
    """Check removing the joining node leaves one base per component."""

    derivation = derive(FIXTURES["convergence_c"])

    assert isinstance(derivation, Convergence)
    assert derivation.node == "h3"
    assert derivation.subsets == (("h1",), ("h2",))
    assert [base.node for base in derivation.bases] == ["h1", "h2"]
    assert derivation.rules() == {
        "convergence": 1,
        "growth": 2,
        "variable": 2,
    }


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_fixtures_replay(name):
    """Check every fixture is rebuilt by replaying its derivation."""

    graph = FIXTURES[name]

    rebuilt = replay(derive(graph))

    assert is_isomorphic(rebuilt, graph)
    assert validate(rebuilt).ok


def test_tensor_networks_give_structure_only():
    """Check tensor models are derived with default scalar nodes."""

    rebuilt = replay(derive(FIXTURES["mlp"]))

    assert set(rebuilt.node_ids) == set(FIXTURES["mlp"].node_ids)
    assert all(node.cap.kind is CapKind.SIGMOID for node in rebuilt.nodes)
    assert all(edge.weight.item() == 1.0 for edge in rebuilt.edges)


@pytest.mark.parametrize("n", range(1, 7))
def test_every_small_dag_is_derived(n):
    """Check every connected DAG of up to six nodes replays to itself."""

    for edges in upper_triangular_dags(n):
        net = induced_network(skeleton(n, edges))

        derivation = derive(net)

        assert same_network(replay(derivation), net)
        assert sum(derivation.rules().values()) == n


@settings(max_examples=500)
@given(st_dag_structures(min_nodes=7, max_nodes=10), ST_SEEDS)
def test_random_dags_replay_exactly(structure, seed):
    """Check larger scalar networks replay with their parameters."""

    net = decorated_network(*structure, seed)

    derivation = derive(net)

    assert same_network(replay(derivation), net)
    assert derivation.rules()["neuron"] == 0


@given(st_dag_structures(max_nodes=8), st.randoms(use_true_random=False))
def test_relabelled_networks_are_derived(structure, random):
    """Check a relabelled network replays to its own structure."""

    n, edges = structure
    net = induced_network(skeleton(n, edges))
    permutation = list(range(n))
    random.shuffle(permutation)

    other = relabelled(net, permutation)

    assert is_isomorphic(replay(derive(other)), net)


def test_derive_accepts_skeletons():
    """Check a networkx graph is turned into its induced network."""

    digraph = nx.DiGraph([(0, 1), (0, 2), (1, 3), (2, 3)])

    rebuilt = replay(derive(digraph))

    assert set(rebuilt.input_ids) == {"0"}
    assert set(rebuilt.predecessors("3")) == {"1", "2"}


@pytest.mark.parametrize(
    "digraph, error",
    [
        (nx.DiGraph(), NotConnected),
        (nx.DiGraph([(0, 1), (2, 3)]), NotConnected),
        (nx.DiGraph([(0, 1), (1, 2), (2, 1)]), CycleDetected),
    ],
)
def test_derive_refuses_bad_skeletons(digraph, error):
    """Check only nonempty, acyclic, connected graphs are derived."""

    with pytest.raises(error):
        derive(digraph)


def test_cycle_names_its_nodes():
    """Check a cycle reports the nodes along it."""

    with pytest.raises(CycleDetected) as info:
        induced_network(nx.DiGraph([("a", "b"), ("b", "c"), ("c", "b")]))

    assert set(info.value.nodes) == {"b", "c"}


def test_induced_network_uses_attributes():
    """Check vertex and edge attributes become capsules and parameters."""

    digraph = nx.DiGraph()
    digraph.add_node("h", cap="tanh", bias=0.25)
    digraph.add_edge("x", "h", weight=-2.0)

    net = induced_network(digraph)

    assert net.input_ids == ("x",)
    assert net.node("h").cap.kind is CapKind.TANH
    assert net.node("h").bias.item() == 0.25
    assert net.edge("x", "h").weight.item() == -2.0


def test_weights_are_normalised():
    """Check a step's weights are kept sorted whatever their order."""

    step = Growth(
        node="h",
        base=Variable("x"),
        subset=("x", "y"),
        weights={"y": 2, "x": 1},
    )

    assert step.weights == (("x", 1.0), ("y", 2.0))
    assert step == Growth(
        node="h",
        base=Variable("x"),
        subset=("x", "y"),
        weights=(("x", 1.0), ("y", 2.0)),
    )


def test_neuron_replays():
    """Check the rule of neuron can be recorded and replayed."""

    step = Neuron(node="h", inputs=("x1", "x2"), cap="relu", bias=1.0)

    net = replay(step)

    assert set(net.input_ids) == {"x1", "x2"}
    assert net.node("h").cap.kind is CapKind.RELU
    assert step.rules() == {"neuron": 1}


def test_replay_checks_the_rules():
    """Check a step breaking its rule is refused on replay."""

    step = Growth(node="x", base=Variable("x"), subset=("x",))

    with pytest.raises(NodeCollision):
        replay(step)


def test_replay_needs_a_derivation():
    """Check replaying anything else is a type error."""

    with pytest.raises(TypeError):
        replay("x")
