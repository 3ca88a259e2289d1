"""The `seqdistill` command line"""

import argparse
import logging
import sys
from typing import Any, Callable, Dict, List, Optional

from seqdistill import config, constants, pipeline, synthetic
from seqdistill.exceptions import Error

logger = logging.getLogger(__name__)

SETTINGS = frozenset(config.snapshot())


def _flag(group, name: str, *, dest: str, type: Callable[[str], Any], help: str) -> None:
    """A flag that maps onto a setting and is left unset unless given"""
    group.add_argument(name, dest=dest, type=type, default=constants.UNSET, help=help)


def _switch(group, name: str, *, dest: str, help: str) -> None:
    group.add_argument(
        name,
        dest=dest,
        action=argparse.BooleanOptionalAction,
        default=constants.UNSET,
        help=help,
    )


def _add_common(parser: argparse.ArgumentParser, *, data: bool = True) -> None:
    parser.add_argument("--config", help="A flat TOML settings file. Flags take precedence.")
    parser.add_argument("--out", required=True, help="The work directory for artifacts")
    parser.add_argument("--schema", required=True, help="The schema JSON file")
    if data:
        parser.add_argument("--events", required=True, help="The events CSV file")
        parser.add_argument("--scores", required=True, help="The teacher scores CSV file")
    _flag(parser, "--seed", dest="seed", type=int, help="The global seed (default 0)")
    _flag(parser, "--threads", dest="threads", type=int, help="Search threads (default 1)")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")


def _add_split(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("split")
    _flag(group, "--train-frac", dest="train_frac", type=float, help="Training fraction")
    _flag(group, "--valid-count", dest="valid_count", type=int, help="Validation users")


def _add_search(parser: argparse.ArgumentParser, *, batch_flag: str = "--batch-size") -> None:
    group = parser.add_argument_group("statistic search")
    _flag(group, "--depth", dest="search_depth", type=int, help="Maximum operators, D")
    _flag(group, "--num-stats", dest="num_stats", type=int, help="Statistics to generate, K")
    _flag(
        group,
        batch_flag,
        dest="search_batch_size",
        type=int,
        help="Users per reward evaluation, B",
    )
    _flag(group, "--simulations", dest="simulations", type=int, help="Simulations per operator")
    _flag(group, "--exploration", dest="exploration", type=float, help="UCT constant")
    _flag(group, "--scorer", dest="reward_scorer", type=str, help="Reward scorer name")
    _switch(group, "--zscore-target", dest="zscore_target", help="Standardize search targets")
    group.add_argument(
        "--strategy",
        choices=pipeline.STRATEGIES,
        default="mcts",
        help="Generate statistics by tree search or at random",
    )


def _add_train(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("network")
    _flag(group, "--layers", dest="layers", type=int, help="Logical layers, L")
    _flag(group, "--hidden", dest="hidden", type=int, help="Hidden neuron pairs, H")
    _flag(group, "--rules", dest="rules", type=int, help="Rules, R (even)")
    _flag(group, "--epochs", dest="epochs", type=int, help="Training epochs")
    _flag(group, "--batch-size", dest="train_batch_size", type=int, help="Training batch size")
    _flag(group, "--lr-start", dest="lr_start", type=float, help="Initial learning rate")
    _flag(group, "--lr-end", dest="lr_end", type=float, help="Final learning rate")
    _flag(group, "--tau-start", dest="tau_start", type=float, help="Initial temperature")
    _flag(group, "--tau-end", dest="tau_end", type=float, help="Final temperature")
    _switch(group, "--shared-noise", dest="shared_noise", help="Share Gumbel noise in a batch")


def _add_evaluate(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("evaluation")
    group.add_argument("--labels", help="A user_id,label CSV of true labels for AUC")
    _flag(
        group,
        "--label-quantile",
        dest="label_quantile",
        type=float,
        help="Teacher quantile that splits positive from negative labels",
    )


def parse_args(sys_args: List[str]) -> argparse.Namespace:
    """Parse the command line.

    Args:
        sys_args: The arguments after the program name.

    Returns:
        The parsed arguments. Setting flags that were not given hold
        [seqdistill.constants.UNSET][].
    """
    parser = argparse.ArgumentParser(
        prog="seqdistill",
        description="Distill a sequence scoring model into weighted rules.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gen_stats = commands.add_parser("gen-stats", help="Split the data and generate statistics")
    _add_common(gen_stats)
    _add_split(gen_stats)
    _add_search(gen_stats)

    binarize = commands.add_parser("binarize", help="Threshold statistics into literals")
    _add_common(binarize, data=False)

    train = commands.add_parser("train", help="Train the logical network")
    _add_common(train, data=False)
    _add_train(train)

    extract = commands.add_parser("extract", help="Read rules off the trained network")
    _add_common(extract, data=False)

    evaluate = commands.add_parser("evaluate", help="Report fidelity and AUC of the rules")
    _add_common(evaluate)
    _add_evaluate(evaluate)

    run_all = commands.add_parser("run-all", help="Run every stage")
    _add_common(run_all)
    _add_split(run_all)
    # run-all also takes the training --batch-size
    _add_search(run_all, batch_flag="--search-batch-size")
    _add_train(run_all)
    _add_evaluate(run_all)

    fixture = commands.add_parser("make-synthetic", help="Write a synthetic fixture dataset")
    fixture.add_argument("fixture", choices=synthetic.fixtures(), help="The fixture to generate")
    fixture.add_argument("--n", type=int, default=2000, help="Number of users (default 2000)")
    fixture.add_argument("--seed", type=int, default=0, help="Fixture seed (default 0)")
    fixture.add_argument("--out", required=True, help="Directory for the fixture files")
    fixture.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")

    return parser.parse_args(sys_args)


def _run_config(args: argparse.Namespace) -> pipeline.RunConfig:
    overrides = {key: value for key, value in vars(args).items() if key in SETTINGS}
    config.configure(args.config, **overrides)
    return pipeline.RunConfig.from_settings(
        workdir=args.out,
        schema=args.schema,
        events=getattr(args, "events", None),
        scores=getattr(args, "scores", None),
        labels=getattr(args, "labels", None),
        strategy=getattr(args, "strategy", "mcts"),
    )


def _make_synthetic(args: argparse.Namespace) -> None:
    fixture = synthetic.make_synthetic(args.fixture, args.n, args.seed)
    paths = synthetic.write_fixture(fixture, args.out)
    for name, path in paths.items():
        print(f"{name}: {path}")


def _print_report(report: Dict[str, str]) -> None:
    for key, value in report.items():
        print(f"{key}: {value}")


STAGES: Dict[str, Callable[[pipeline.RunConfig], object]] = {
    "gen-stats": pipeline.gen_stats,
    "binarize": pipeline.binarize_stage,
    "train": pipeline.train_stage,
    "extract": pipeline.extract_stage,
    "evaluate": pipeline.evaluate_stage,
    "run-all": pipeline.run_all,
}


def main(sys_args: Optional[List[str]] = None) -> int:
    """Run a subcommand.

    Returns:
        The exit status: 0 on success and 1 when a stage fails.
    """
    args = parse_args(sys.argv[1:] if sys_args is None else sys_args)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        if args.command == "make-synthetic":
            _make_synthetic(args)
            return 0

        run = _run_config(args)
        result = STAGES[args.command](run)
        if args.command in ("evaluate", "run-all"):
            _print_report(pipeline.read_report(run))
    except Error as exc:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1

    logger.debug("Command %s returned %r", args.command, result)
    return 0
