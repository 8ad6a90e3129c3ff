"""Common strategies and utilities used across multiple test modules."""

import math

import numpy as np
from hypothesis import strategies as st

from capsnet.forward import evaluate
from capsnet.graph import (
    CapKind,
    CapsuleFn,
    CapsuleGraph,
    CapsuleNode,
    Edge,
    InputNode,
    OpKind,
    WeightingOp,
    infer_shapes,
    output_ids,
)
from capsnet.tensor import Tensor
from capsnet.trainer import init_params

ST_REALS = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
ST_SMALL_REALS = st.floats(-2, 2, allow_nan=False, allow_infinity=False)

ST_SHAPES = st.lists(st.integers(1, 4), max_size=4).map(tuple)
ST_SEEDS = st.integers(0, 2**32 - 1)

SCALAR_FUNCTIONS = {
    "identity": lambda u: u,
    "sigmoid": lambda u: 1 / (1 + math.exp(-u)),
    "tanh": math.tanh,
    "relu": lambda u: max(u, 0.0),
}

RELU_MARGIN = 1e-3


@st.composite
def st_tensors(draw, shape=None, elements=ST_SMALL_REALS):
    """Create a tensor, of a random shape unless one is given."""

    shape = draw(ST_SHAPES) if shape is None else tuple(shape)
    size = math.prod(shape)
    data = draw(st.lists(elements, min_size=size, max_size=size))

    return Tensor(data, shape)


@st.composite
def st_dag_structures(draw, min_nodes=1, max_nodes=10):
    """
    Create the skeleton of a weakly connected DAG.

    A random spanning tree plus extra pairs is oriented along a random
    permutation, which can never close a cycle.

    Returns
    -------
    n : int
        Number of nodes, labelled `0, ..., n - 1`.
    edges : list[tuple[int, int]]
        Directed edges, sorted.
    """

    n = draw(st.integers(min_nodes, max_nodes))
    pairs = {(draw(st.integers(0, j - 1)), j) for j in range(1, n)}
    extra = draw(
        st.lists(
            st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)),
            max_size=n,
        )
    )
    pairs.update((min(a, b), max(a, b)) for a, b in extra if a != b)

    rank = draw(st.permutations(range(n)))
    edges = sorted((i, j) if rank[i] < rank[j] else (j, i) for i, j in pairs)

    return n, edges


def scalar_graph(n, edges, cap="sigmoid"):
    """Build an uninitialised scalar network on a skeleton."""

    ids = [f"v{i}" for i in range(n)]
    targets = {j for _, j in edges}

    inputs = [InputNode(ids[i]) for i in range(n) if i not in targets]
    nodes = [
        CapsuleNode(ids[i], CapsuleFn.parse(cap))
        for i in range(n)
        if i in targets
    ]
    links = [
        Edge(ids[i], ids[j], WeightingOp.scalar(), ()) for i, j in edges
    ]

    return CapsuleGraph(inputs, nodes, links)


def random_tensor(rng, shape, low=-1.0, high=1.0):
    """Draw a tensor with uniform entries from a numpy generator."""

    return Tensor(rng.uniform(low, high, size=shape))


def random_parameters(graph: CapsuleGraph, seed: int) -> CapsuleGraph:
    """Fill every weight and bias with uniform draws in [-1, 1]."""

    rng = np.random.default_rng(seed)
    weights = {
        edge.key: random_tensor(rng, edge.weight_shape)
        for edge in graph.weighted_edges
    }
    biases = {
        node.id: random_tensor(rng, node.bias_shape, -0.5, 0.5)
        for node in graph.nodes
    }

    return graph.with_parameters(weights, biases)


def random_inputs(graph: CapsuleGraph, seed: int) -> dict[str, Tensor]:
    """Draw a value for every input node."""

    rng = np.random.default_rng(seed)

    return {
        node.id: random_tensor(rng, node.shape) for node in graph.inputs
    }


def random_targets(
    graph: CapsuleGraph, seed: int, loss: str = "mse"
) -> dict[str, Tensor]:
    """Draw targets for every output node; one-hot for cross-entropy."""

    rng = np.random.default_rng(seed)
    shapes = infer_shapes(graph)
    targets = {}
    for node_id in output_ids(graph):
        if loss == "xent":
            data = np.zeros(shapes[node_id])
            data[rng.integers(data.size)] = 1.0
            targets[node_id] = Tensor(data)
        else:
            targets[node_id] = random_tensor(rng, shapes[node_id], 0.0, 1.0)

    return targets


def off_kink(graph: CapsuleGraph, inputs: dict) -> bool:
    """Whether every ReLU total input is at least the margin from zero."""

    values = evaluate(graph, inputs)
    for node in graph.nodes:
        if node.cap.kind is CapKind.RELU:
            u = values.preactivations[node.id].array
            if np.any(np.abs(u) < RELU_MARGIN):
                return False

    return True


def nudged_draw(graph: CapsuleGraph, seed: int, tries: int = 100):
    """
    Draw parameters and inputs with ReLU total inputs off the kink.

    Convolutional graphs get Glorot weights and zero biases so that
    their softmax outputs stay away from saturation.

    Returns
    -------
    graph : CapsuleGraph
        Graph with random parameters.
    inputs : dict[str, Tensor]
        Input values for it.
    """

    convolutional = any(edge.op.kind is OpKind.CONV2D for edge in graph.edges)
    for attempt in range(tries):
        draw = seed * tries + attempt
        if convolutional:
            candidate = init_params(graph, draw)
        else:
            candidate = random_parameters(graph, draw)
        inputs = random_inputs(graph, draw)
        if off_kink(candidate, inputs):
            return candidate, inputs

    raise RuntimeError("Could not draw parameters away from the kink.")


def scalar_oracle(graph: CapsuleGraph, inputs: dict) -> dict[str, float]:
    """Evaluate a scalar network by plain recursion over predecessors."""

    memo = {}

    def value(node_id):
        if node_id not in memo:
            if node_id in graph.input_ids:
                memo[node_id] = inputs[node_id].item()
            else:
                node = graph.node(node_id)
                total = sum(
                    edge.weight.item() * value(edge.src)
                    for edge in graph.incoming(node_id)
                )
                total += node.bias.item()
                function = SCALAR_FUNCTIONS[node.cap.kind.value]
                memo[node_id] = function(total)
        return memo[node_id]

    return {node_id: value(node_id) for node_id in graph.node_ids}
