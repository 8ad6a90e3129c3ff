"""Strategies and exhaustive generators of small connected DAGs."""

import itertools

import networkx as nx
import numpy as np
from hypothesis import strategies as st

from capsnet.generation import induced_network

ST_CAPS = st.sampled_from(["sigmoid", "tanh", "relu", "identity"])


def is_connected(n, edges):
    """Whether the skeleton on `range(n)` is weakly connected."""

    digraph = nx.DiGraph()
    digraph.add_nodes_from(range(n))
    digraph.add_edges_from(edges)

    return nx.is_weakly_connected(digraph)


def upper_triangular_dags(n):
    """
    Yield every connected DAG on `n` nodes whose edges point upwards.

    Nodes are `0, ..., n - 1` and every edge is `i -> j` with `i < j`.
    Every DAG has a topological order, so this covers each isomorphism
    class at least once.
    """

    pairs = list(itertools.combinations(range(n), 2))
    for mask in range(2 ** len(pairs)):
        edges = [pair for k, pair in enumerate(pairs) if mask >> k & 1]
        if is_connected(n, edges):
            yield edges


def skeleton(n, edges):
    """A networkx skeleton with vertices labelled `v0, v1, ...`."""

    digraph = nx.DiGraph()
    digraph.add_nodes_from(f"v{i}" for i in range(n))
    digraph.add_edges_from((f"v{i}", f"v{j}") for i, j in edges)

    return digraph


def decorated_network(n, edges, seed):
    """An induced network with random activations and parameters."""

    rng = np.random.default_rng(seed)
    digraph = skeleton(n, edges)
    caps = ["sigmoid", "tanh", "relu", "identity"]
    for node_id in digraph:
        digraph.nodes[node_id]["cap"] = caps[rng.integers(len(caps))]
        digraph.nodes[node_id]["bias"] = rng.uniform(-1, 1)
    for src, dst in digraph.edges:
        digraph.edges[src, dst]["weight"] = rng.uniform(-1, 1)

    return induced_network(digraph)


def relabelled(net, permutation):
    """The same network with node `vi` renamed `u<permutation[i]>`."""

    digraph = nx.DiGraph()
    rename = {f"v{i}": f"u{p}" for i, p in enumerate(permutation)}
    digraph.add_nodes_from(rename[node_id] for node_id in net.node_ids)
    digraph.add_edges_from(
        (rename[e.src], rename[e.dst]) for e in net.edges
    )

    return induced_network(digraph)
