"""
Reading and writing graphs, derivations, values and datasets.

Graphs, derivations and value maps are JSON documents; datasets and
loss histories are CSV files; graphs can also be drawn as GraphViz DOT.
Every writer orders its output by node id so that repeated runs give
byte-identical files.

Graph documents look like::

    {
        "inputs": [{"id": "X", "shape": [5]}],
        "nodes": [{"id": "O", "cap": "sigmoid", "bias_shape": [4],
                   "bias": [0.0, 0.0, 0.0, 0.0]}],
        "edges": [{"from": "X", "to": "O", "op": "matmul",
                   "weight_shape": [4, 5], "weight": [...]}]
    }

with tensors stored flat in row-major order. `cap_arg` holds the
window of downsampling capsules and `op_arg` the target shape of
reshapes.
"""

import csv
import json
import math
import os
from typing import Iterable, Mapping

from .errors import CapsnetError, InvalidDocument, NonFiniteValue
from .generation import Convergence, Derivation, Growth, Neuron, Variable
from .graph import (
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
from .tensor import Tensor
from .trainer import Dataset, Sample

_GRAPH_KEYS = {"inputs", "nodes", "edges"}
_INPUT_KEYS = {"id", "shape"}
_NODE_KEYS = {"id", "cap", "cap_arg", "bias_shape", "bias"}
_EDGE_KEYS = {"from", "to", "op", "op_arg", "weight_shape", "weight"}
_STEP_KEYS = {
    "rule",
    "node",
    "inputs",
    "base",
    "subset",
    "bases",
    "subsets",
    "cap",
    "bias",
    "weights",
}


def _check_keys(entry: object, allowed: set, required: set, where: str):
    """Check a JSON object only uses known keys and has the required."""

    if not isinstance(entry, dict):
        raise InvalidDocument(f"Expected an object for {where}.")

    unknown = sorted(set(entry) - allowed)
    if unknown:
        raise InvalidDocument(
            f"Unknown keys in {where}: {', '.join(unknown)}."
        )

    missing = sorted(required - set(entry))
    if missing:
        raise InvalidDocument(
            f"Missing keys in {where}: {', '.join(missing)}."
        )


def _make_parent(path: str) -> None:
    """Create the directory a file is to be written to, if need be."""

    where = os.path.dirname(path)
    if where and not os.path.exists(where):
        os.makedirs(where)


def _dump(document: dict, path: str) -> None:
    """Write a JSON document, creating its directory if need be."""

    _make_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=4, ensure_ascii=False)
        f.write("\n")


def _load(path: str) -> object:
    """Read a JSON document."""

    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as err:
            raise InvalidDocument(f"{path} is not valid JSON: {err}") from err


def _flat(values: None | Tensor) -> None | list[float]:
    return None if values is None else list(values.data)


def graph_to_dict(graph: CapsuleGraph) -> dict:
    """
    Describe a capsule graph as a JSON-ready dictionary.

    Parameters
    ----------
    graph : CapsuleGraph
        Graph to describe.

    Returns
    -------
    document : dict
        Inputs, nodes and edges, each sorted by id.
    """

    inputs = [
        {"id": node.id, "shape": list(node.shape)}
        for node in sorted(graph.inputs, key=lambda n: n.id)
    ]

    nodes = []
    for node in sorted(graph.nodes, key=lambda n: n.id):
        entry = {"id": node.id, "cap": node.cap.kind.value}
        if node.cap.window is not None:
            entry["cap_arg"] = node.cap.window
        entry["bias_shape"] = list(node.bias_shape)
        if node.bias is not None:
            entry["bias"] = _flat(node.bias)
        nodes.append(entry)

    edges = []
    for edge in sorted(graph.edges, key=lambda e: e.key):
        entry = {"from": edge.src, "to": edge.dst, "op": edge.op.kind.value}
        if edge.op.target is not None:
            entry["op_arg"] = list(edge.op.target)
        if edge.weight_shape is not None:
            entry["weight_shape"] = list(edge.weight_shape)
        if edge.weight is not None:
            entry["weight"] = _flat(edge.weight)
        edges.append(entry)

    return {"inputs": inputs, "nodes": nodes, "edges": edges}


def graph_from_dict(document: Mapping) -> CapsuleGraph:
    """
    Build a capsule graph from its dictionary description.

    The graph is not validated; use `capsnet.graph.validate` for that.

    Parameters
    ----------
    document : Mapping
        Description in the layout written by `graph_to_dict`.

    Returns
    -------
    graph : CapsuleGraph
        The described graph.

    Raises
    ------
    InvalidDocument
        If the description does not follow the layout.
    NonFiniteValue
        If a parameter is NaN or infinite.
    """

    _check_keys(document, _GRAPH_KEYS, _GRAPH_KEYS, "graph")

    try:
        inputs = []
        for entry in document["inputs"]:
            _check_keys(entry, _INPUT_KEYS, {"id"}, "input")
            inputs.append(InputNode(entry["id"], entry.get("shape", ())))

        nodes = []
        for entry in document["nodes"]:
            _check_keys(entry, _NODE_KEYS, {"id", "cap"}, "node")
            shape = tuple(entry.get("bias_shape", ()))
            bias = entry.get("bias")
            nodes.append(
                CapsuleNode(
                    entry["id"],
                    CapsuleFn.parse(entry["cap"], entry.get("cap_arg")),
                    shape,
                    None if bias is None else Tensor(bias, shape),
                )
            )

        edges = []
        for entry in document["edges"]:
            _check_keys(entry, _EDGE_KEYS, {"from", "to", "op"}, "edge")
            kind = OpKind(entry["op"])
            if kind is OpKind.RESHAPE:
                if "op_arg" not in entry:
                    raise InvalidDocument("Reshape edge needs op_arg.")
                op = WeightingOp.reshape(entry["op_arg"])
            else:
                op = WeightingOp(kind)
            shape = entry.get("weight_shape")
            if shape is not None:
                shape = tuple(shape)
            weight = entry.get("weight")
            if weight is not None:
                weight = Tensor(weight, shape)
            edges.append(Edge(entry["from"], entry["to"], op, shape, weight))
    except (InvalidDocument, NonFiniteValue):
        raise
    except (CapsnetError, ValueError, TypeError) as err:
        raise InvalidDocument(f"Malformed graph document: {err}") from err

    return CapsuleGraph(tuple(inputs), tuple(nodes), tuple(edges))


def write_graph(graph: CapsuleGraph, path: str) -> None:
    """Save a capsule graph as JSON."""

    _dump(graph_to_dict(graph), path)


def read_graph(path: str) -> CapsuleGraph:
    """Load a capsule graph saved by `write_graph`."""

    return graph_from_dict(_load(path))


def _new_node_fields(step) -> dict:
    return {
        "cap": step.cap,
        "bias": step.bias,
        "weights": dict(step.weights),
    }


def derivation_to_dict(derivation: Derivation) -> dict:
    """
    Flatten a derivation into a list of steps.

    Steps are listed in post-order, so every step refers only to steps
    listed before it, by position. The last step is the root.

    Parameters
    ----------
    derivation : Derivation
        Derivation to flatten.

    Returns
    -------
    document : dict
        `{"steps": [...], "root": index}`.
    """

    steps: list[dict] = []

    def visit(step: Derivation) -> int:
        match step:
            case Variable():
                entry = {"rule": step.rule, "node": step.node}
            case Neuron():
                entry = {
                    "rule": step.rule,
                    "node": step.node,
                    "inputs": list(step.inputs),
                    **_new_node_fields(step),
                }
            case Growth():
                base = visit(step.base)
                entry = {
                    "rule": step.rule,
                    "node": step.node,
                    "base": base,
                    "subset": list(step.subset),
                    **_new_node_fields(step),
                }
            case Convergence():
                bases = [visit(b) for b in step.bases]
                entry = {
                    "rule": step.rule,
                    "node": step.node,
                    "bases": bases,
                    "subsets": [list(s) for s in step.subsets],
                    **_new_node_fields(step),
                }
        steps.append(entry)
        return len(steps) - 1

    root = visit(derivation)

    return {"steps": steps, "root": root}


def derivation_from_dict(document: Mapping) -> Derivation:
    """
    Rebuild a derivation from its flattened steps.

    Raises
    ------
    InvalidDocument
        If a step is malformed or refers to a step not listed before it.
    """

    _check_keys(document, {"steps", "root"}, {"steps", "root"}, "derivation")

    built: list[Derivation] = []

    def earlier(index: object) -> Derivation:
        if not isinstance(index, int) or not 0 <= index < len(built):
            raise InvalidDocument(f"Step reference {index!r} is not earlier.")
        return built[index]

    try:
        for entry in document["steps"]:
            _check_keys(entry, _STEP_KEYS, {"rule", "node"}, "step")
            fields = {
                key: entry[key]
                for key in ("cap", "bias", "weights")
                if key in entry
            }
            match entry["rule"]:
                case "variable":
                    step = Variable(entry["node"])
                case "neuron":
                    step = Neuron(
                        node=entry["node"],
                        inputs=tuple(entry["inputs"]),
                        **fields,
                    )
                case "growth":
                    step = Growth(
                        node=entry["node"],
                        base=earlier(entry["base"]),
                        subset=tuple(entry["subset"]),
                        **fields,
                    )
                case "convergence":
                    step = Convergence(
                        node=entry["node"],
                        bases=tuple(earlier(i) for i in entry["bases"]),
                        subsets=tuple(tuple(s) for s in entry["subsets"]),
                        **fields,
                    )
                case rule:
                    raise InvalidDocument(f"Unknown rule {rule!r}.")
            built.append(step)
    except InvalidDocument:
        raise
    except (KeyError, ValueError, TypeError) as err:
        raise InvalidDocument(f"Malformed derivation step: {err}") from err

    return earlier(document["root"])


def write_derivation(derivation: Derivation, path: str) -> None:
    """Save a derivation as JSON."""

    _dump(derivation_to_dict(derivation), path)


def read_derivation(path: str) -> Derivation:
    """Load a derivation saved by `write_derivation`."""

    return derivation_from_dict(_load(path))


def _dot_quote(text: str) -> str:
    """Quote a DOT id, escaping backslashes and double quotes."""

    escaped = text.replace("\\", "\\\\").replace('"', '\\"')

    return f'"{escaped}"'


def to_dot(graph: CapsuleGraph) -> str:
    """
    Draw a capsule graph in the GraphViz DOT language.

    Input nodes are boxes and capsule nodes ellipses, both labelled by
    id; edges are labelled with the symbol of their weighting
    operation.
    """

    lines = ["digraph capsnet {", "    rankdir=LR;"]
    for node in sorted(graph.inputs, key=lambda n: n.id):
        lines.append(f"    {_dot_quote(node.id)} [shape=box];")
    for node in sorted(graph.nodes, key=lambda n: n.id):
        lines.append(f"    {_dot_quote(node.id)} [shape=ellipse];")
    for edge in sorted(graph.edges, key=lambda e: e.key):
        src, dst = _dot_quote(edge.src), _dot_quote(edge.dst)
        label = _dot_quote(edge.op.symbol)
        lines.append(f"    {src} -> {dst} [label={label}];")
    lines.append("}")

    return "\n".join(lines) + "\n"


def write_dot(graph: CapsuleGraph, path: str) -> None:
    """Save a capsule graph as a DOT file."""

    _make_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write(to_dot(graph))


def values_from_dict(document: Mapping) -> dict[str, Tensor]:
    """
    Read node values from a JSON object keyed by node id.

    Each value is either `{"shape": [...], "data": [...]}` or a number
    or (nested) list of numbers. NaN and infinite values raise
    `NonFiniteValue`; anything else that cannot be read raises
    `InvalidDocument`.
    """

    if not isinstance(document, dict):
        raise InvalidDocument("Expected an object of node values.")

    values = {}
    try:
        for node_id, value in document.items():
            if isinstance(value, dict):
                _check_keys(value, {"shape", "data"}, {"data"}, node_id)
                shape = value.get("shape")
                values[node_id] = Tensor(value["data"], shape)
            else:
                values[node_id] = Tensor(value)
    except (InvalidDocument, NonFiniteValue):
        raise
    except (CapsnetError, ValueError, TypeError) as err:
        raise InvalidDocument(f"Malformed values: {err}") from err

    return values


def values_to_dict(values: Mapping[str, Tensor]) -> dict:
    """Describe node values as `{id: {"shape", "data"}}`, sorted by id."""

    return {
        node_id: {
            "shape": list(values[node_id].shape),
            "data": _flat(values[node_id]),
        }
        for node_id in sorted(values)
    }


def read_values(path: str) -> dict[str, Tensor]:
    """Load node values from a JSON file."""

    return values_from_dict(_load(path))


def write_values(values: Mapping[str, Tensor], path: str) -> None:
    """Save node values as a JSON file."""

    _dump(values_to_dict(values), path)


def _columns(prefix: str, values: Mapping[str, Tensor]) -> list[str]:
    return [
        f"{prefix}:{node_id}:{index}"
        for node_id in sorted(values)
        for index in range(values[node_id].size)
    ]


def write_dataset(dataset: Dataset | Iterable[Sample], path: str) -> None:
    """
    Save a dataset as CSV.

    Columns are `in:<node>:<flat index>` for every input value followed
    by `out:<node>:<flat index>` for every target, one row per sample.
    """

    samples = list(dataset)
    if not samples:
        raise InvalidDocument("Cannot write an empty dataset.")

    header = _columns("in", samples[0].inputs)
    header += _columns("out", samples[0].targets)
    _make_parent(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for sample in samples:
            row = [
                value
                for part in (sample.inputs, sample.targets)
                for node_id in sorted(part)
                for value in part[node_id].data
            ]
            if len(row) != len(header):
                raise InvalidDocument("Samples have differing shapes.")
            writer.writerow(repr(value) for value in row)


def _parse_header(
    header: list[str], shapes: Mapping[str, tuple]
) -> dict[tuple[str, str], list[int]]:
    """Map every `(in|out, node)` pair to its column positions."""

    positions: dict[tuple[str, str], dict[int, int]] = {}
    for column, name in enumerate(header):
        prefix, _, rest = name.partition(":")
        node_id, _, index = rest.rpartition(":")
        if prefix not in ("in", "out") or not node_id or not index.isdigit():
            raise InvalidDocument(f"Unrecognised dataset column {name!r}.")
        positions.setdefault((prefix, node_id), {})[int(index)] = column

    columns = {}
    for (prefix, node_id), found in positions.items():
        if node_id not in shapes:
            raise InvalidDocument(f"Column for unknown node {node_id}.")
        size = math.prod(shapes[node_id])
        if sorted(found) != list(range(size)):
            raise InvalidDocument(
                f"Columns for {prefix}:{node_id} do not cover {size} entries."
            )
        columns[(prefix, node_id)] = [found[i] for i in range(size)]

    return columns


def read_dataset(path: str, graph: CapsuleGraph) -> Dataset:
    """
    Load a CSV dataset for a graph.

    Parameters
    ----------
    path : str
        File written in the layout of `write_dataset`.
    graph : CapsuleGraph
        Graph whose input and output shapes the values are read into.

    Returns
    -------
    dataset : Dataset
        One sample per row.

    Raises
    ------
    InvalidDocument
        If a column is unrecognised, names an unknown node, or the
        columns of a node do not cover its shape.
    NonFiniteValue
        If a value is NaN or infinite.
    """

    shapes = infer_shapes(graph)
    with open(path, "r", newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise InvalidDocument(f"{path} has no header.")

    columns = _parse_header(rows[0], shapes)
    outputs = set(output_ids(graph))
    for prefix, node_id in columns:
        if prefix == "in" and node_id not in graph.input_ids:
            raise InvalidDocument(f"{node_id} is not an input node.")
        if prefix == "out" and node_id not in outputs:
            raise InvalidDocument(f"{node_id} is not an output node.")

    samples = []
    for number, row in enumerate(rows[1:], start=2):
        try:
            parts = {"in": {}, "out": {}}
            for (prefix, node_id), where in columns.items():
                data = [float(row[i]) for i in where]
                parts[prefix][node_id] = Tensor(data, shapes[node_id])
        except NonFiniteValue:
            raise
        except (CapsnetError, ValueError, IndexError) as err:
            raise InvalidDocument(f"Row {number} of {path}: {err}") from err
        samples.append(Sample(parts["in"], parts["out"]))

    return Dataset(tuple(samples))


def write_history(history: Iterable[float], path: str) -> None:
    """Save a loss history as CSV with columns `epoch,mean_loss`."""

    _make_parent(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "mean_loss"])
        for epoch, loss in enumerate(history, start=1):
            writer.writerow([epoch, repr(float(loss))])
