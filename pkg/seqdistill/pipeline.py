"""The distillation pipeline, one function per stage.

Stages communicate only through the files in the work directory, so any
stage can be rerun on its own once its inputs exist.
"""

import dataclasses
import logging
import pathlib
import warnings
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from seqdistill import artifacts, config, mcts, numerics, runtime
from seqdistill.binarize import augment_matrix, fit_transform, source_columns, transform
from seqdistill.dataset import Dataset, Schema, load_dataset, load_labels, load_schema, split
from seqdistill.exceptions import ArtifactError, ConfigError, MetricError
from seqdistill.nln import NlnConfig, forward_hard, ranking_objective, train
from seqdistill.operators import StatisticChain, evaluate_column
from seqdistill.rules import auc, extract, fidelity, render, score_dataset
from seqdistill.utils import config_hash, stage_rng

logger = logging.getLogger(__name__)

PathLike = Union[str, pathlib.Path]

STRATEGIES = ("mcts", "random")


def _path(value: Optional[PathLike]) -> Optional[pathlib.Path]:
    return pathlib.Path(value) if value is not None else None


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run reads.

    Attributes:
        workdir: Directory the artifacts are written to.
        schema: The schema file. Every stage needs it to read statistics.
        events: The events file, read by `gen-stats` and `evaluate`.
        scores: The teacher scores file, read by `gen-stats` and `evaluate`.
        labels: An optional `user_id,label` file of true labels for AUC.
        search: Statistic search settings.
        nln: Network settings.
        train_frac: Fraction of users in the training portion.
        valid_count: Users of the training portion held out for validation.
        seed: The global seed. Every stage draws from its own sub-seed.
        label_quantile: Teacher scores above this quantile of the training
            split are positive when no labels are given.
        strategy: `"mcts"` or `"random"` statistic generation.
    """

    workdir: pathlib.Path
    schema: pathlib.Path
    events: Optional[pathlib.Path] = None
    scores: Optional[pathlib.Path] = None
    labels: Optional[pathlib.Path] = None
    search: mcts.SearchConfig = dataclasses.field(default_factory=mcts.SearchConfig)
    nln: NlnConfig = dataclasses.field(default_factory=NlnConfig)
    train_frac: float = 0.8
    valid_count: int = 1000
    seed: int = 0
    label_quantile: float = 0.5
    strategy: str = "mcts"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f'Unknown strategy "{self.strategy}". Choose from {STRATEGIES}')
        if not 0 < self.label_quantile < 1:
            raise ConfigError(f"label_quantile must be in (0, 1), got {self.label_quantile}")

    @classmethod
    def from_settings(
        cls,
        *,
        workdir: PathLike,
        schema: PathLike,
        events: Optional[PathLike] = None,
        scores: Optional[PathLike] = None,
        labels: Optional[PathLike] = None,
        strategy: str = "mcts",
    ) -> "RunConfig":
        """A run configured from the active [seqdistill.config][] settings"""
        return cls(
            workdir=pathlib.Path(workdir),
            schema=pathlib.Path(schema),
            events=_path(events),
            scores=_path(scores),
            labels=_path(labels),
            search=mcts.SearchConfig.from_settings(),
            nln=NlnConfig.from_settings(),
            train_frac=config.train_frac(),
            valid_count=config.valid_count(),
            seed=config.seed(),
            label_quantile=config.label_quantile(),
            strategy=strategy,
        )

    @property
    def hash(self) -> str:
        """Digest of every setting that changes the artifacts. Paths are left out."""
        return config_hash(
            {
                "search": dataclasses.asdict(self.search),
                "nln": dataclasses.asdict(self.nln),
                "train_frac": self.train_frac,
                "valid_count": self.valid_count,
                "seed": self.seed,
                "label_quantile": self.label_quantile,
                "strategy": self.strategy,
            }
        )

    def artifact(self, name: str, *, must_exist: bool = False) -> pathlib.Path:
        path = self.workdir / name
        if must_exist and not path.exists():
            raise ArtifactError(f'"{path}" does not exist. Run the stage that writes it first.')

        return path


def _context(run: RunConfig) -> runtime.context:
    return runtime.context(seed=run.seed, config_hash=run.hash)


def _load_schema(run: RunConfig) -> Schema:
    return load_schema(run.schema)


def _load_dataset(run: RunConfig) -> Dataset:
    if run.events is None or run.scores is None:
        raise ConfigError("This stage needs the events and scores files")

    return load_dataset(run.events, run.schema, run.scores)


@dataclasses.dataclass(frozen=True, eq=False)
class StatisticsReport:
    """What `gen-stats` selected and how well the set explains the teacher"""

    chains: List[StatisticChain]
    rewards: List[float]
    multiple_corr: float
    mean_depth: float


def gen_stats(run: RunConfig) -> StatisticsReport:
    """Split the dataset and generate statistics on the training split.

    Writes `splits.csv`, `statistics.txt` and `statistics_values.csv`.
    """
    with _context(run), runtime.stage("gen-stats"):
        run.workdir.mkdir(parents=True, exist_ok=True)
        dataset = _load_dataset(run)
        train_set, valid_set, test_set = split(dataset, run.train_frac, run.valid_count, run.seed)
        names = {}
        for name, part in zip(artifacts.SPLIT_NAMES, (train_set, valid_set, test_set)):
            names.update(dict.fromkeys(part.user_ids, name))
        logger.info(
            "Split %d users into %d train, %d valid and %d test",
            len(dataset),
            len(train_set),
            len(valid_set),
            len(test_set),
        )

        rng = stage_rng(run.seed, "gen-stats")
        if run.strategy == "mcts":
            found = mcts.generate_top_k(train_set, train_set.scores, run.search, rng)
            chains = [stat.chain for stat in found]
            rewards = [stat.reward for stat in found]
        else:
            chains = mcts.random_statistics(
                dataset.schema, run.search.num_stats, run.search.depth, rng
            )
            target = numerics.zscore(train_set.scores)
            scorer = mcts.get_scorer(run.search.scorer)
            rewards = [scorer(evaluate_column(chain, train_set), target) for chain in chains]

        train_values = [evaluate_column(chain, train_set) for chain in chains]
        quality = numerics.multiple_corr_of_set(train_values, train_set.scores)
        mean_depth = float(np.mean([chain.depth for chain in chains])) if chains else 0.0
        logger.info(
            "Generated %d statistics: multiple correlation %.4f, mean depth %.2f",
            len(chains),
            quality,
            mean_depth,
        )

        artifacts.write_splits(
            run.artifact(artifacts.SPLITS),
            dataset.user_ids,
            [names[user] for user in dataset.user_ids],
            dataset.scores,
        )
        artifacts.write_statistics(
            run.artifact(artifacts.STATISTICS),
            list(zip(chains, rewards)),
            notes=[
                ("strategy", run.strategy),
                ("multiple_corr", repr(quality)),
                ("mean_depth", repr(mean_depth)),
            ],
        )
        artifacts.write_values(
            run.artifact(artifacts.VALUES),
            dataset.user_ids,
            chains,
            [evaluate_column(chain, dataset) for chain in chains],
        )

    return StatisticsReport(
        chains=chains, rewards=rewards, multiple_corr=quality, mean_depth=mean_depth
    )


def binarize_stage(run: RunConfig) -> int:
    """Fit literal thresholds on the training split and binarize every user.

    Writes `thresholds.json` and `literals.csv`.

    Returns:
        The number of literals.
    """
    with _context(run), runtime.stage("binarize"):
        schema = _load_schema(run)
        splits = artifacts.read_splits(run.artifact(artifacts.SPLITS, must_exist=True))
        user_ids, chains, values = artifacts.read_values(
            run.artifact(artifacts.VALUES, must_exist=True), schema
        )
        if not chains:
            raise ArtifactError("No statistics to binarize")

        aligned = splits.align(user_ids)
        names = splits.names[aligned]
        sources, matrix = source_columns(chains, values)
        model, _ = fit_transform(matrix[names == "train"], sources)
        table = transform(matrix, model)

        artifacts.write_thresholds(run.artifact(artifacts.THRESHOLDS), model)
        artifacts.write_literals(
            run.artifact(artifacts.LITERALS), user_ids, names, splits.scores[aligned], table
        )

    return model.n_literals


def train_stage(run: RunConfig) -> float:
    """Train the network on the training split's literals.

    With at least 2 validation users, the epoch whose discrete network ranks
    the validation split best is kept. Writes `checkpoint.json`.

    Returns:
        The ranking objective of the discrete network on the training split.
    """
    with _context(run), runtime.stage("train"):
        schema = _load_schema(run)
        literals = artifacts.read_literals(
            run.artifact(artifacts.LITERALS, must_exist=True), schema
        )
        model = artifacts.read_thresholds(
            run.artifact(artifacts.THRESHOLDS, must_exist=True), schema
        )

        descriptors = tuple(model.descriptors)
        if descriptors != literals.table.descriptors:
            raise ArtifactError(
                f"{artifacts.LITERALS} does not hold the literals of {artifacts.THRESHOLDS}"
            )

        rows = literals.rows("train")
        if len(rows) < 2:
            raise ArtifactError(f"Training needs at least 2 users, got {len(rows)}")

        z0 = augment_matrix(literals.table.bits[rows])
        y = literals.scores[rows]
        rng = stage_rng(run.seed, "train")
        logger.info(
            "Training on %d users with %d literals", len(rows), literals.table.bits.shape[1]
        )
        valid_rows = literals.rows("valid")
        valid = None
        if len(valid_rows) >= 2:
            valid = (augment_matrix(literals.table.bits[valid_rows]), literals.scores[valid_rows])
        params = train(z0, y, run.nln, rng, valid=valid)

        artifacts.write_checkpoint(
            run.artifact(artifacts.CHECKPOINT),
            artifacts.Checkpoint(
                params=params,
                nln=run.nln,
                model=model,
                descriptors=descriptors,
            ),
        )

        _, y_hard = forward_hard(params, z0)
        objective = ranking_objective(y_hard, y)
        logger.info("Training objective of the discrete network: %.6f", objective)

    return objective


def extract_stage(run: RunConfig) -> int:
    """Read the rules off the checkpoint. Writes `rules.txt`.

    Returns:
        The number of rules.
    """
    with _context(run), runtime.stage("extract"):
        schema = _load_schema(run)
        checkpoint = artifacts.read_checkpoint(
            run.artifact(artifacts.CHECKPOINT, must_exist=True), schema
        )
        ruleset = extract(
            checkpoint.params,
            checkpoint.descriptors,
            provenance=[
                ("checkpoint", artifacts.CHECKPOINT),
                ("thresholds", artifacts.THRESHOLDS),
            ],
        )
        logger.info("Rules:\n%s", render(ruleset))
        artifacts.write_rules(run.artifact(artifacts.RULES), ruleset)

    return len(ruleset)


def _metric(func, *args) -> Optional[float]:
    try:
        return func(*args)
    except MetricError as exc:
        warnings.warn(str(exc), stacklevel=3)
        return None


def _format(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.6f}"


def evaluate_stage(run: RunConfig) -> Dict[str, str]:
    """Score every user with the rules file and compare with the teacher.

    Rules are evaluated from their literal definitions, so only the rules
    file, the splits file and the dataset are read. Writes `report.txt`.

    Returns:
        The report entries in file order.
    """
    with _context(run), runtime.stage("evaluate"):
        dataset = _load_dataset(run)
        ruleset = artifacts.read_rules(
            run.artifact(artifacts.RULES, must_exist=True), dataset.schema
        )
        splits = artifacts.read_splits(run.artifact(artifacts.SPLITS, must_exist=True))
        names = splits.names[splits.align(dataset.user_ids)]

        y = dataset.scores
        student = score_dataset(ruleset, dataset)
        if run.labels is not None:
            labels = load_labels(run.labels, dataset.user_ids)
            label_source = f"file {run.labels.name}"
        else:
            cut = numerics.percentile(y[names == "train"], 100 * run.label_quantile)
            labels = (y > cut).astype(np.int64)
            label_source = f"teacher scores above the {run.label_quantile} train quantile"

        entries: List[Tuple[str, Any]] = [
            ("rules", len(ruleset)),
            ("max_literals_per_rule", ruleset.max_literals),
            ("labels", label_source),
        ]
        for name in artifacts.SPLIT_NAMES:
            rows = np.flatnonzero(names == name)
            entries.append((f"{name}.users", len(rows)))
            if len(rows) < 2:
                entries += [(f"{name}.fidelity", "n/a"), (f"{name}.auc", "n/a")]
                continue

            fid = _metric(fidelity, y[rows], student[rows])
            entries.append((f"{name}.fidelity", _format(fid)))
            entries.append((f"{name}.auc", _format(_metric(auc, labels[rows], student[rows]))))
            if run.labels is not None:
                teacher_auc = _metric(auc, labels[rows], y[rows])
                entries.append((f"{name}.teacher_auc", _format(teacher_auc)))

        artifacts.write_report(run.artifact(artifacts.REPORT), entries)
        for key, value in entries:
            logger.info("%s: %s", key, value)

    return {key: str(value) for key, value in entries}


def run_all(run: RunConfig) -> Dict[str, pathlib.Path]:
    """Run every stage in order.

    Returns:
        The path of every artifact, keyed by file name.
    """
    run.workdir.mkdir(parents=True, exist_ok=True)
    with _context(run):
        gen_stats(run)
        binarize_stage(run)
        train_stage(run)
        extract_stage(run)
        evaluate_stage(run)

    names = (
        artifacts.STATISTICS,
        artifacts.VALUES,
        artifacts.SPLITS,
        artifacts.THRESHOLDS,
        artifacts.LITERALS,
        artifacts.CHECKPOINT,
        artifacts.RULES,
        artifacts.REPORT,
    )
    return {name: run.artifact(name) for name in names}


def read_report(run: RunConfig) -> Dict[str, str]:
    """The entries of the run's evaluation report"""
    return artifacts.read_report(run.artifact(artifacts.REPORT, must_exist=True))
