from seqdistill.binarize import (
    LiteralDescriptor,
    LiteralTable,
    ThresholdModel,
    augment,
    augment_matrix,
    fit_thresholds,
    transform,
)
from seqdistill.constants import DEFAULT, UNSET
from seqdistill.dataset import (
    Column,
    Dataset,
    EventSequence,
    Schema,
    load_dataset,
    sample_batch,
    split,
    write_dataset,
)
from seqdistill.mcts import (
    GeneratedStatistic,
    SearchConfig,
    SearchNode,
    generate_statistic,
    generate_top_k,
    random_statistics,
    register_scorer,
)
from seqdistill.nln import (
    NlnConfig,
    NlnParams,
    backward,
    forward_hard,
    forward_soft,
    grad_check,
    ranking_objective,
    train,
)
from seqdistill.operators import (
    StatisticChain,
    evaluate,
    is_valid,
    parse_chain,
    valid_next_operators,
)
from seqdistill.pipeline import RunConfig, run_all
from seqdistill.rules import RuleSet, auc, extract, fidelity, render, score
from seqdistill.runtime import context
from seqdistill.synthetic import make_synthetic
from seqdistill.version import __version__

__all__ = [
    "auc",
    "augment",
    "augment_matrix",
    "backward",
    "Column",
    "context",
    "Dataset",
    "DEFAULT",
    "evaluate",
    "EventSequence",
    "extract",
    "fidelity",
    "fit_thresholds",
    "forward_hard",
    "forward_soft",
    "generate_statistic",
    "generate_top_k",
    "GeneratedStatistic",
    "grad_check",
    "is_valid",
    "LiteralDescriptor",
    "LiteralTable",
    "load_dataset",
    "make_synthetic",
    "NlnConfig",
    "NlnParams",
    "parse_chain",
    "random_statistics",
    "ranking_objective",
    "register_scorer",
    "render",
    "RuleSet",
    "run_all",
    "RunConfig",
    "sample_batch",
    "Schema",
    "score",
    "SearchConfig",
    "SearchNode",
    "split",
    "StatisticChain",
    "ThresholdModel",
    "train",
    "transform",
    "UNSET",
    "valid_next_operators",
    "write_dataset",
    "__version__",
]
