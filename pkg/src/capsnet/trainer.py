"""
Parameter initialisation and stochastic gradient descent.

One iteration evaluates the graph on a sample, backpropagates the loss
and moves every weight and bias against its gradient. `train` repeats
this over a dataset for a number of epochs, visiting the samples in a
fresh order each epoch. Every random draw comes from a PCG64 generator
seeded explicitly, so runs are reproducible bit for bit.
"""

import dataclasses
import logging
import math
from typing import Iterable, Iterator, Mapping, NamedTuple

import numpy as np
from tqdm import tqdm

from . import tensor
from .backprop import LossKind, LossSpec, backward, total_loss
from .config import load_config
from .errors import InvalidGraph, MissingInput, MissingTarget
from .forward import evaluate
from .graph import CapsuleGraph, infer_shapes, output_ids, validate
from .tensor import Shape, Tensor

logger = logging.getLogger(__name__)

MAX_SEED = 2**64 - 1


def _check_train_parameters(
    learning_rate: float, epochs: int, seed: int
) -> None:
    """
    Check the training hyperparameters are usable.

    Raises
    ------
    ValueError
        If the learning rate is not positive, the number of epochs is
        negative, or the seed is not a 64-bit unsigned integer.
    """

    if not learning_rate > 0 or not math.isfinite(learning_rate):
        raise ValueError("Learning rate must be a positive number.")

    if epochs < 0:
        raise ValueError("Number of epochs must be non-negative.")

    if not 0 <= seed <= MAX_SEED:
        raise ValueError("Seed must be a 64-bit unsigned integer.")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """
    Hyperparameters of a training run.

    Parameters
    ----------
    learning_rate : float
        Step size η > 0.
    epochs : int
        Number of passes over the dataset.
    seed : int
        Seed for parameter initialisation and shuffling.
    loss : LossKind | str
        Loss function applied to every output node.
    """

    learning_rate: float = 0.1
    epochs: int = 100
    seed: int = 0
    loss: LossKind = LossKind.MSE

    def __post_init__(self) -> None:
        _check_train_parameters(self.learning_rate, self.epochs, self.seed)
        object.__setattr__(self, "loss", LossKind(self.loss))

    @classmethod
    def from_toml(cls, path: None | str = None, **overrides) -> "TrainConfig":
        """
        Load a configuration from a TOML file.

        Parameters
        ----------
        path : str, optional
            Location of the file. If not specified, the bundled
            `train.toml` is used.
        **overrides
            Values taking precedence over the file; `None` is ignored.

        Returns
        -------
        config : TrainConfig
            Validated configuration.
        """

        config = load_config("train", path)
        config.update(
            {k: v for k, v in overrides.items() if v is not None}
        )

        return cls(
            learning_rate=float(config["learning_rate"]),
            epochs=int(config["epochs"]),
            seed=int(config["seed"]),
            loss=config.get("loss", "mse"),
        )


class Sample(NamedTuple):
    """Input values and output targets for one training example."""

    inputs: Mapping[str, Tensor]
    targets: Mapping[str, Tensor]


@dataclasses.dataclass(frozen=True)
class Dataset:
    """
    An ordered collection of training samples.

    Parameters
    ----------
    samples : Iterable[Sample]
        Samples; plain `(inputs, targets)` pairs are accepted.
    """

    samples: tuple[Sample, ...] = ()

    def __post_init__(self) -> None:
        samples = tuple(
            Sample(
                {k: tensor.as_tensor(v) for k, v in inputs.items()},
                {k: tensor.as_tensor(v) for k, v in targets.items()},
            )
            for inputs, targets in self.samples
        )
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def check(self, graph: CapsuleGraph) -> None:
        """
        Check every sample against the graph's input and output shapes.

        Raises
        ------
        MissingInput, MissingTarget
            If a sample lacks a value for an input or output node.
        ShapeMismatch
            If a value has the wrong shape.
        """

        shapes = infer_shapes(graph)
        outputs = output_ids(graph)
        for sample in self.samples:
            for node_id in graph.input_ids:
                tensor.as_tensor(
                    _lookup(sample.inputs, node_id, "input"), shapes[node_id]
                )
            for node_id in outputs:
                tensor.as_tensor(
                    _lookup(sample.targets, node_id, "target"),
                    shapes[node_id],
                )


def _lookup(values: Mapping[str, Tensor], node_id: str, what: str):
    """Fetch a sample value, naming the node when it is missing."""

    if node_id not in values:
        error = MissingInput if what == "input" else MissingTarget
        raise error(f"Sample has no {what} for {node_id}.", node_id)

    return values[node_id]


def _fans(shape: Shape) -> tuple[int, int]:
    """
    Fan-in and fan-out of a weight tensor.

    Matrices `[m, n]` map `n` entries to `m`; kernels `[k, c, kh, kw]`
    see `c·kh·kw` entries and feed `k·kh·kw`; scalars count as one each.
    """

    match len(shape):
        case 0:
            return 1, 1
        case 2:
            return shape[1], shape[0]
        case 4:
            k, c, kh, kw = shape
            return c * kh * kw, k * kh * kw

    size = math.prod(shape)

    return size, size


def init_params(graph: CapsuleGraph, seed: int = 0) -> CapsuleGraph:
    """
    Populate every weight and bias of a graph.

    Weights are drawn uniformly from `[−r, r]` with
    `r = sqrt(6 / (fan_in + fan_out))`, edge by edge in `(src, dst)`
    order; biases are zero.

    Parameters
    ----------
    graph : CapsuleGraph
        A structurally valid graph. Existing parameters are replaced.
    seed : int
        Seed of the PCG64 generator used for the draws.

    Returns
    -------
    graph : CapsuleGraph
        The same structure with all parameters populated.

    Raises
    ------
    ShapeConflict
        If the graph's shapes cannot be inferred.
    """

    _check_train_parameters(1.0, 0, seed)
    infer_shapes(graph)

    rng = np.random.Generator(np.random.PCG64(seed))
    weights = {}
    for edge in graph.weighted_edges:
        fan_in, fan_out = _fans(edge.weight_shape)
        r = math.sqrt(6.0 / (fan_in + fan_out))
        values = rng.uniform(-r, r, size=edge.weight_shape)
        weights[edge.key] = Tensor._wrap(values)

    biases = {
        node.id: Tensor.zeros(node.bias_shape) for node in graph.nodes
    }

    return graph.with_parameters(weights, biases)


def sgd_step(
    graph: CapsuleGraph,
    sample: Sample,
    learning_rate: float,
    loss: LossKind | str = LossKind.MSE,
) -> tuple[CapsuleGraph, float]:
    """
    Run one iteration of gradient descent on a single sample.

    Parameters
    ----------
    graph : CapsuleGraph
        Graph with every parameter populated.
    sample : Sample
        Input values and targets.
    learning_rate : float
        Step size η > 0.
    loss : LossKind | str
        Loss function.

    Returns
    -------
    graph : CapsuleGraph
        Graph with every parameter θ replaced by `θ − η·∂L/∂θ`.
    loss : float
        Loss before the update.
    """

    _check_train_parameters(learning_rate, 0, 0)

    spec = LossSpec(loss, sample.targets)
    values = evaluate(graph, sample.inputs)
    before = total_loss(values, spec)
    _, gradients = backward(graph, values, spec)

    weights = {
        edge.key: tensor.add(
            edge.weight,
            tensor.scale(gradients.weight_grads[edge.key], -learning_rate),
        )
        for edge in graph.weighted_edges
    }
    biases = {
        node.id: tensor.add(
            node.bias,
            tensor.scale(gradients.bias_grads[node.id], -learning_rate),
        )
        for node in graph.nodes
    }

    return graph.with_parameters(weights, biases), before


def train(
    graph: CapsuleGraph,
    dataset: Dataset | Iterable[Sample],
    config: None | TrainConfig = None,
    progress: bool = False,
) -> tuple[CapsuleGraph, list[float]]:
    """
    Train a graph by per-sample gradient descent.

    Parameters
    ----------
    graph : CapsuleGraph
        Graph to train. Parameters are initialised from the config seed
        if any are missing.
    dataset : Dataset | Iterable[Sample]
        Training samples.
    config : TrainConfig, optional
        Hyperparameters. Defaults to the bundled `train.toml`.
    progress : bool, default=False
        Whether to show a progress bar over the epochs.

    Returns
    -------
    graph : CapsuleGraph
        The trained graph.
    history : list[float]
        Mean sample loss of every epoch, measured before each update.

    Raises
    ------
    InvalidGraph
        If the graph does not validate.
    """

    if config is None:
        config = TrainConfig.from_toml()
    if not isinstance(dataset, Dataset):
        dataset = Dataset(tuple(dataset))

    history: list[float] = []
    if config.epochs == 0:
        return graph, history

    report = validate(graph)
    if not report.ok:
        raise InvalidGraph(str(report), report.violations)
    if not graph.has_parameters:
        graph = init_params(graph, config.seed)
    dataset.check(graph)
    if not len(dataset):
        raise ValueError("Cannot train on an empty dataset.")

    rng = np.random.default_rng(config.seed)
    epochs = range(1, config.epochs + 1)
    for epoch in tqdm(epochs, desc="Training", disable=not progress):
        total = 0.0
        for index in rng.permutation(len(dataset)):
            graph, loss = sgd_step(
                graph,
                dataset.samples[index],
                config.learning_rate,
                config.loss,
            )
            total += loss
        history.append(total / len(dataset))
        logger.debug("Epoch %d mean loss %.6g", epoch, history[-1])

    logger.info("Trained %d epochs, final loss %.6g", epochs[-1], history[-1])

    return graph, history
