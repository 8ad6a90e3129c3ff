"""
Model zoo: perceptrons and convolutional networks as capsule paths.

A multilayer perceptron is a path of capsules joined by matrix
products. A convolutional network is a path of six capsules: two
convolution and pooling stages, a reshape into a vector, and a dense
softmax classifier. `fixtures` collects the small scalar networks built
by the generation rules alongside the two paths.
"""

import dataclasses
from typing import Iterable

from . import tensor
from .config import load_config
from .errors import InvalidSpec, ShapeMismatch
from .generation import (
    apply_convergence,
    apply_growth,
    apply_neuron,
    apply_variable,
)
from .graph import (
    CapKind,
    CapsuleFn,
    CapsuleGraph,
    CapsuleNode,
    Edge,
    InputNode,
    WeightingOp,
    infer_shapes,
)
from .tensor import Shape
from .trainer import init_params


def _parse_cap(cap: str | CapsuleFn) -> CapsuleFn:
    """Resolve a capsule function, reporting failures as `InvalidSpec`."""

    if isinstance(cap, CapsuleFn):
        return cap

    try:
        return CapsuleFn.parse(cap)
    except ValueError as err:
        raise InvalidSpec(f"Unknown capsule function {cap!r}.") from err


def _positive(values: Iterable, what: str) -> tuple[int, ...]:
    """Check every value is a positive integer."""

    values = tuple(values)
    if not all(isinstance(v, int) and v > 0 for v in values):
        raise InvalidSpec(f"{what} must be positive integers, got {values}.")

    return values


@dataclasses.dataclass(frozen=True)
class MlpSpec:
    """
    Layer widths and capsule functions of a perceptron.

    Parameters
    ----------
    widths : Iterable[int]
        Widths of the input, hidden and output layers; at least two.
    hidden : str | CapsuleFn, default="sigmoid"
        Capsule function of every hidden layer.
    output : str | CapsuleFn, default="sigmoid"
        Capsule function of the output layer.
    """

    widths: tuple[int, ...] = (5, 7, 7, 7, 4)
    hidden: CapsuleFn = CapsuleFn(CapKind.SIGMOID)
    output: CapsuleFn = CapsuleFn(CapKind.SIGMOID)

    def __post_init__(self) -> None:
        widths = _positive(self.widths, "Layer widths")
        if len(widths) < 2:
            raise InvalidSpec("A perceptron needs at least two layers.")

        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "hidden", _parse_cap(self.hidden))
        object.__setattr__(self, "output", _parse_cap(self.output))

    @classmethod
    def from_toml(cls, path: None | str = None) -> "MlpSpec":
        """
        Load a perceptron specification from a TOML file.

        Parameters
        ----------
        path : str, optional
            Location of the file. If not specified, the bundled
            `mlp.toml` is used.

        Returns
        -------
        spec : MlpSpec
            Validated specification.
        """

        config = load_config("mlp", path)

        return cls(
            widths=tuple(config["widths"]),
            hidden=config.get("hidden", "sigmoid"),
            output=config.get("output", "sigmoid"),
        )


@dataclasses.dataclass(frozen=True)
class CnnSpec:
    """
    Shapes of a two-stage convolutional network.

    Parameters
    ----------
    input_shape : Iterable[int]
        Input feature maps `[c, h, w]`.
    kernels : Iterable[tuple[int, int]]
        `(count, size)` of the square kernels of each of the two
        convolution stages.
    window : int
        Side of the square pooling window.
    classes : int
        Number of output classes.
    """

    input_shape: Shape = (1, 12, 12)
    kernels: tuple[tuple[int, int], ...] = ((4, 3), (8, 2))
    window: int = 2
    classes: int = 10

    def __post_init__(self) -> None:
        input_shape = _positive(self.input_shape, "Input extents")
        if len(input_shape) != 3:
            raise InvalidSpec(f"Input must be [c, h, w], got {input_shape}.")

        kernels = tuple(
            _positive(kernel, "Kernel counts and sizes")
            for kernel in self.kernels
        )
        if len(kernels) != 2 or any(len(k) != 2 for k in kernels):
            raise InvalidSpec("Give (count, size) for exactly two stages.")

        _positive((self.window, self.classes), "Window and class count")

        object.__setattr__(self, "input_shape", input_shape)
        object.__setattr__(self, "kernels", kernels)

    @classmethod
    def from_toml(cls, path: None | str = None) -> "CnnSpec":
        """
        Load a convolutional network specification from a TOML file.

        Parameters
        ----------
        path : str, optional
            Location of the file. If not specified, the bundled
            `cnn.toml` is used.

        Returns
        -------
        spec : CnnSpec
            Validated specification.
        """

        config = load_config("cnn", path)

        return cls(
            input_shape=tuple(config["input_shape"]),
            kernels=tuple(tuple(k) for k in config["kernels"]),
            window=config["window"],
            classes=config["classes"],
        )


def build_mlp(spec: None | MlpSpec = None) -> CapsuleGraph:
    """
    Draw a perceptron as a path of capsules `X → H1 → … → O`.

    Parameters
    ----------
    spec : MlpSpec, optional
        Layer widths and capsule functions; the bundled default has
        widths 5, 7, 7, 7, 4.

    Returns
    -------
    graph : CapsuleGraph
        Uninitialised path whose edges are matrix products with weights
        of shape `(width[i+1], width[i])`.
    """

    spec = spec or MlpSpec.from_toml()
    depth = len(spec.widths) - 1
    ids = ["X", *(f"H{i}" for i in range(1, depth)), "O"]

    nodes, edges = [], []
    for i in range(1, depth + 1):
        cap = spec.output if i == depth else spec.hidden
        nodes.append(CapsuleNode(ids[i], cap, (spec.widths[i],)))
        edges.append(
            Edge(
                ids[i - 1],
                ids[i],
                WeightingOp.matmul(),
                (spec.widths[i], spec.widths[i - 1]),
            )
        )

    return _checked(
        CapsuleGraph((InputNode("X", (spec.widths[0],)),), nodes, edges)
    )


def build_cnn(spec: None | CnnSpec = None) -> CapsuleGraph:
    """
    Draw a convolutional network as a path of six capsules.

    The stages are convolution into ReLU, identity transfer into
    downsampling (twice), reshape into an identity capsule, and a
    matrix product into softmax.

    Parameters
    ----------
    spec : CnnSpec, optional
        Network shapes; the bundled default takes 1×12×12 inputs.

    Returns
    -------
    graph : CapsuleGraph
        Uninitialised path `X → H1 → … → H5 → O`.

    Raises
    ------
    InvalidSpec
        If a kernel does not fit its input or a pooling window does not
        divide its feature maps.
    """

    spec = spec or CnnSpec.from_toml()
    (k1, s1), (k2, s2) = spec.kernels
    c = spec.input_shape[0]

    try:
        conv1 = tensor.conv2d_shape(spec.input_shape, (k1, c, s1, s1))
        pool1 = tensor.downsample_shape(conv1, spec.window)
        conv2 = tensor.conv2d_shape(pool1, (k2, k1, s2, s2))
        pool2 = tensor.downsample_shape(conv2, spec.window)
    except ShapeMismatch as err:
        raise InvalidSpec(f"Network shapes do not fit: {err}") from err
    flat = pool2[0] * pool2[1] * pool2[2]
    pool = CapsuleFn(CapKind.DOWNSAMPLE, spec.window)

    nodes = (
        CapsuleNode("H1", CapsuleFn(CapKind.RELU), conv1),
        CapsuleNode("H2", pool, pool1),
        CapsuleNode("H3", CapsuleFn(CapKind.RELU), conv2),
        CapsuleNode("H4", pool, pool2),
        CapsuleNode("H5", CapsuleFn(CapKind.IDENTITY), (flat,)),
        CapsuleNode("O", CapsuleFn(CapKind.SOFTMAX), (spec.classes,)),
    )
    edges = (
        Edge("X", "H1", WeightingOp.conv2d(), (k1, c, s1, s1)),
        Edge("H1", "H2", WeightingOp.identity()),
        Edge("H2", "H3", WeightingOp.conv2d(), (k2, k1, s2, s2)),
        Edge("H3", "H4", WeightingOp.identity()),
        Edge("H4", "H5", WeightingOp.reshape((flat,))),
        Edge("H5", "O", WeightingOp.matmul(), (spec.classes, flat)),
    )

    return _checked(
        CapsuleGraph((InputNode("X", spec.input_shape),), nodes, edges)
    )


def _checked(graph: CapsuleGraph) -> CapsuleGraph:
    """Run shape inference, reporting conflicts as `InvalidSpec`."""

    try:
        infer_shapes(graph)
    except ValueError as err:
        raise InvalidSpec(str(err)) from err

    return graph


def _capsule_mix() -> CapsuleGraph:
    """A small tensor DAG mixing every op with the vector capsules."""

    inputs = (InputNode("x", (2, 3)),)
    nodes = (
        CapsuleNode("r", CapsuleFn(CapKind.IDENTITY), (6,)),
        CapsuleNode("a", CapsuleFn(CapKind.TANH), (4,)),
        CapsuleNode("b", CapsuleFn(CapKind.SQUASH), (6,)),
        CapsuleNode("o", CapsuleFn(CapKind.SOFTMAX), (4,)),
        CapsuleNode("p", CapsuleFn(CapKind.RELU), (4,)),
    )
    edges = (
        Edge("x", "r", WeightingOp.reshape((6,))),
        Edge("r", "a", WeightingOp.matmul(), (4, 6)),
        Edge("r", "b", WeightingOp.scalar(), ()),
        Edge("x", "b", WeightingOp.reshape((6,))),
        Edge("a", "o", WeightingOp.identity()),
        Edge("b", "o", WeightingOp.matmul(), (4, 6)),
        Edge("a", "p", WeightingOp.matmul(), (4, 4)),
    )

    return CapsuleGraph(inputs, nodes, edges)


def fixtures(seed: int = 0) -> dict[str, CapsuleGraph]:
    """
    Collect the named test networks.

    Scalar networks come from the generation rules with unit weights
    and zero biases; tensor networks are initialised with `seed`. The
    growth families are one input with two or three neurons and two
    inputs with two neurons; the three-neuron family is grown from the
    chain `x1 → h1 → h2`.

    Parameters
    ----------
    seed : int, default=0
        Seed for the tensor networks' parameters.

    Returns
    -------
    graphs : dict[str, CapsuleGraph]
        Networks by name, every one of them valid and initialised.
    """

    graphs = {"trivial": apply_variable("x1")}

    one_one = apply_neuron(["x1"], "h1")
    graphs["one_input_one_neuron"] = one_one
    for suffix, subset in zip("abc", (["x1"], ["h1"], ["x1", "h1"])):
        name = f"one_input_two_neuron_{suffix}"
        graphs[name] = apply_growth(one_one, subset, "h2")

    # grown from the chain; the fork's two leaves would pair up
    chain = graphs["one_input_two_neuron_b"]
    subsets = (
        ["x1"],
        ["h1"],
        ["h2"],
        ["x1", "h1"],
        ["x1", "h2"],
        ["h1", "h2"],
        ["x1", "h1", "h2"],
    )
    for suffix, subset in zip("abcdefg", subsets):
        name = f"one_input_three_neuron_{suffix}"
        graphs[name] = apply_growth(chain, subset, "h3")

    two_one = apply_neuron(["x1", "x2"], "h1")
    graphs["two_input_one_neuron"] = two_one
    subsets = (
        ["x1"],
        ["x2"],
        ["h1"],
        ["x1", "x2"],
        ["x1", "h1"],
        ["x2", "h1"],
        ["x1", "x2", "h1"],
    )
    for suffix, subset in zip("abcdefg", subsets):
        name = f"two_input_two_neuron_{suffix}"
        graphs[name] = apply_growth(two_one, subset, "h2")

    left = apply_neuron(["x1"], "h1")
    right = apply_neuron(["x2"], "h2")
    graphs["convergence_a"] = left
    graphs["convergence_b"] = right
    graphs["convergence_c"] = apply_convergence(
        [left, right], [["h1"], ["h2"]], "h3"
    )

    diamond = apply_neuron(["x"], "a")
    diamond = apply_growth(diamond, ["x"], "b")
    graphs["diamond"] = apply_growth(diamond, ["a", "b"], "c")

    # two hidden neurons and one output, which also sees both inputs
    xor = apply_neuron(["x1", "x2"], "h1")
    xor = apply_growth(xor, ["x1", "x2"], "h2")
    graphs["xor"] = apply_growth(xor, ["h1", "h2", "x1", "x2"], "o")
    graphs["linear"] = apply_neuron(["x"], "h", cap="identity")

    graphs["mlp"] = init_params(build_mlp(), seed)
    graphs["cnn"] = init_params(build_cnn(), seed)
    small = CnnSpec((1, 8, 8), ((2, 3), (3, 2)), 2, 4)
    graphs["cnn_small"] = init_params(build_cnn(small), seed)
    graphs["capsule_mix"] = init_params(_capsule_mix(), seed)

    return graphs
