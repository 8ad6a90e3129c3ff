"""Command-line front end for building, checking and training networks."""

import argparse
import json
import logging
import os
import sys
from typing import Sequence

from . import formats
from .backprop import LossKind, LossSpec, grad_check
from .config import load_config
from .errors import CapsnetError, InvalidGraph, NonFiniteValue
from .forward import evaluate
from .generation import (
    apply_neuron,
    derive,
    enumerate_growth,
    replay,
)
from .graph import CapsuleGraph, validate
from .models import CnnSpec, MlpSpec, build_cnn, build_mlp
from .trainer import TrainConfig, init_params, train

logger = logging.getLogger(__name__)

BASES = {
    "1in1n": lambda: apply_neuron(["x1"], "h1"),
    "2in1n": lambda: apply_neuron(["x1", "x2"], "h1"),
}


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"{value} is not a positive integer")
    return number


def _non_negative_int(value: str) -> int:
    number = int(value)
    if number < 0:
        raise argparse.ArgumentTypeError(f"{value} is negative")
    return number


def _positive_float(value: str) -> float:
    number = float(value)
    if not number > 0:
        raise argparse.ArgumentTypeError(f"{value} is not a positive number")
    return number


def _emit(text: str, output: None | str) -> None:
    """Write text to a file, or print it when no file is given."""

    if output is None:
        sys.stdout.write(text)
        return

    where = os.path.dirname(output)
    if where:
        os.makedirs(where, exist_ok=True)

    with open(output, "w", encoding="utf-8") as f:
        f.write(text)


def _json(document: dict) -> str:
    return json.dumps(document, indent=4, ensure_ascii=False) + "\n"


def _ensure_parameters(graph: CapsuleGraph, seed: int) -> CapsuleGraph:
    """Initialise the parameters of a valid graph if any are missing."""

    report = validate(graph)
    if not report.ok:
        raise InvalidGraph(str(report), report.violations)
    if graph.has_parameters:
        return graph

    logger.info("Initialising missing parameters with seed %d", seed)

    return init_params(graph, seed)


def _validate(args: argparse.Namespace) -> int:
    report = validate(formats.read_graph(args.graph))
    print(report)

    return 0 if report.ok else 1


def _eval(args: argparse.Namespace) -> int:
    graph = _ensure_parameters(formats.read_graph(args.graph), args.seed)
    values = evaluate(graph, formats.read_values(args.inputs))
    document = {"outputs": formats.values_to_dict(values.outputs)}
    _emit(_json(document), args.output)

    return 0


def _gradcheck(args: argparse.Namespace) -> int:
    graph = _ensure_parameters(formats.read_graph(args.graph), args.seed)
    loss = LossSpec(args.loss, formats.read_values(args.targets))
    error = grad_check(graph, formats.read_values(args.inputs), loss, args.eps)
    print(repr(error))

    tolerance = float(load_config("gradcheck")["tolerance"])
    if error > tolerance:
        print(
            f"Largest relative error exceeds {tolerance}.", file=sys.stderr
        )
        return 1

    return 0


def _train(args: argparse.Namespace) -> int:
    config = TrainConfig.from_toml(
        args.config,
        learning_rate=args.lr,
        epochs=args.epochs,
        seed=args.seed,
        loss=args.loss,
    )
    graph = _ensure_parameters(formats.read_graph(args.graph), config.seed)
    dataset = formats.read_dataset(args.data, graph)

    trained, history = train(graph, dataset, config, progress=args.progress)
    formats.write_graph(trained, args.output)
    formats.write_history(history, args.history)
    if history:
        print(f"Final mean loss: {history[-1]!r}")

    return 0


def _enumerate(args: argparse.Namespace) -> int:
    result = enumerate_growth(BASES[args.base](), args.steps, args.semantics)
    print(result.count)
    if args.list:
        for edges in result.edge_lists():
            print(" ".join(f"{src}->{dst}" for src, dst in edges))

    return 0


def _derive(args: argparse.Namespace) -> int:
    derivation = derive(formats.read_graph(args.graph))
    logger.info("Rules used: %s", dict(sorted(derivation.rules().items())))
    _emit(_json(formats.derivation_to_dict(derivation)), args.output)

    return 0


def _replay(args: argparse.Namespace) -> int:
    graph = replay(formats.read_derivation(args.derivation))
    _emit(_json(formats.graph_to_dict(graph)), args.output)

    return 0


def _export_dot(args: argparse.Namespace) -> int:
    _emit(formats.to_dot(formats.read_graph(args.graph)), args.output)

    return 0


def _zoo(args: argparse.Namespace) -> int:
    if args.model == "mlp":
        graph = build_mlp(MlpSpec.from_toml(args.config))
    else:
        graph = build_cnn(CnnSpec.from_toml(args.config))

    graph = init_params(graph, args.seed)
    _emit(_json(formats.graph_to_dict(graph)), args.output)

    return 0


def _add_output(parser: argparse.ArgumentParser, what: str) -> None:
    parser.add_argument(
        "-o",
        "--output",
        type=str,
        required=False,
        help=f"file to write the {what} to (default standard output)",
    )


def _add_seed(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--seed",
        type=_non_negative_int,
        default=0,
        help="seed for initialising missing parameters (default 0)",
    )


def build_parser() -> argparse.ArgumentParser:
    """Create the argument parser with one subparser per command."""

    parser = argparse.ArgumentParser(
        prog="capsnet",
        description="Build, check, train and generate capsule networks.",
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="store_true",
        help="log debugging information to standard error",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    validate_ = commands.add_parser("validate", help="check a graph")
    validate_.add_argument("graph", help="graph JSON file")
    validate_.set_defaults(handler=_validate)

    eval_ = commands.add_parser("eval", help="evaluate a graph")
    eval_.add_argument("graph", help="graph JSON file")
    eval_.add_argument("--inputs", required=True, help="input values JSON")
    _add_seed(eval_)
    _add_output(eval_, "node outputs")
    eval_.set_defaults(handler=_eval)

    check = commands.add_parser("gradcheck", help="check gradients")
    check.add_argument("graph", help="graph JSON file")
    check.add_argument("--inputs", required=True, help="input values JSON")
    check.add_argument("--targets", required=True, help="target values JSON")
    check.add_argument(
        "--loss",
        choices=[kind.value for kind in LossKind],
        default=LossKind.MSE.value,
        help="loss function (default mse)",
    )
    check.add_argument(
        "--eps",
        type=_positive_float,
        required=False,
        help="finite-difference step (default 1e-5)",
    )
    _add_seed(check)
    check.set_defaults(handler=_gradcheck)

    train_ = commands.add_parser("train", help="train a graph by SGD")
    train_.add_argument("graph", help="graph JSON file")
    train_.add_argument("--data", required=True, help="dataset CSV file")
    train_.add_argument("--lr", type=_positive_float, help="learning rate")
    train_.add_argument(
        "--epochs", type=_non_negative_int, help="number of epochs"
    )
    train_.add_argument(
        "--seed",
        type=_non_negative_int,
        help="seed for initialisation and shuffling (default 0)",
    )
    train_.add_argument(
        "--loss",
        choices=[kind.value for kind in LossKind],
        help="loss function (default mse)",
    )
    train_.add_argument(
        "--config", type=str, help="path to training TOML configuration"
    )
    train_.add_argument(
        "-o", "--output", required=True, help="file for the trained graph"
    )
    train_.add_argument(
        "--history", required=True, help="file for the loss history CSV"
    )
    train_.add_argument(
        "--progress", action="store_true", help="show a progress bar"
    )
    train_.set_defaults(handler=_train)

    enumerate_ = commands.add_parser(
        "enumerate", help="count networks reached by growth"
    )
    enumerate_.add_argument("--base", choices=sorted(BASES), required=True)
    enumerate_.add_argument("--steps", type=_positive_int, required=True)
    enumerate_.add_argument(
        "--semantics", choices=["labeled", "iso"], default="labeled"
    )
    enumerate_.add_argument(
        "--list", action="store_true", help="print every structure's edges"
    )
    enumerate_.set_defaults(handler=_enumerate)

    derive_ = commands.add_parser("derive", help="derive a graph by rules")
    derive_.add_argument("graph", help="graph JSON file")
    _add_output(derive_, "derivation")
    derive_.set_defaults(handler=_derive)

    replay_ = commands.add_parser("replay", help="rebuild a derived graph")
    replay_.add_argument("derivation", help="derivation JSON file")
    _add_output(replay_, "graph")
    replay_.set_defaults(handler=_replay)

    dot = commands.add_parser("export-dot", help="draw a graph as DOT")
    dot.add_argument("graph", help="graph JSON file")
    _add_output(dot, "DOT text")
    dot.set_defaults(handler=_export_dot)

    zoo = commands.add_parser("zoo", help="write a default model")
    zoo.add_argument("model", choices=["mlp", "cnn"])
    zoo.add_argument(
        "--config", type=str, help="path to a model TOML configuration"
    )
    _add_seed(zoo)
    _add_output(zoo, "graph")
    zoo.set_defaults(handler=_zoo)

    return parser


def run(argv: None | Sequence[str] = None) -> int:
    """
    Run one command and return its exit code.

    Exit codes are 0 on success, 1 for invalid graphs, documents or
    shapes, 2 for usage errors and 3 for NaN or infinite values.
    """

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return err.code if isinstance(err.code, int) else 2

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        return args.handler(args)
    except NonFiniteValue as err:
        print(f"capsnet: numeric failure: {err}", file=sys.stderr)
        return 3
    except (CapsnetError, OSError, ValueError) as err:
        print(f"capsnet: error: {err}", file=sys.stderr)
        return 1


def main():
    """Entry point for the `capsnet` command."""

    sys.exit(run())


if __name__ == "__main__":
    main()
