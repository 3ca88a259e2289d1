"""Monte Carlo tree search over statistic chains.

Statistics are built one operator at a time. For every position a fresh tree
is grown over the committed prefix, and the child of the root with the best
mean reward is committed. After each statistic the target is replaced by the
residual of a least-squares fit on every statistic found so far, so the next
search looks for what is still unexplained.
"""

import concurrent.futures
import contextlib
import dataclasses
import logging
import math
import warnings
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from seqdistill import config, constants, numerics
from seqdistill.dataset import Dataset, Schema, sample_batch
from seqdistill.exceptions import ConfigError, SearchExhaustedError
from seqdistill.operators import Grammar, Operator, StatisticChain, evaluate_column

logger = logging.getLogger(__name__)

Scorer = Callable[[np.ndarray, np.ndarray], float]

_scorers: Dict[str, Scorer] = {}


def register_scorer(name: str) -> Callable[[Scorer], Scorer]:
    """Register a reward scorer under a name.

    A scorer maps a value matrix of shape `(B, output_dim)` and a target
    vector of length `B` to a reward in [0, 1].
    """

    def decorator(func: Scorer) -> Scorer:
        _scorers[name] = func
        return func

    return decorator


def get_scorer(name: str) -> Scorer:
    try:
        return _scorers[name]
    except KeyError:
        raise ConfigError(f'Unknown reward scorer "{name}". Known: {sorted(_scorers)}') from None


@register_scorer("correlation")
def correlation_reward(values: np.ndarray, target: np.ndarray) -> float:
    """Absolute correlation for scalar statistics, multiple correlation for vectors"""
    if values.shape[1] == 1:
        return abs(numerics.pearson_corr(values[:, 0], target))

    return numerics.multiple_corr(values, target)


@dataclasses.dataclass(frozen=True)
class SearchConfig:
    """Statistic search settings. Fields left unset read [seqdistill.config][]."""

    depth: int = 4
    num_stats: int = 20
    batch_size: int = 128
    simulations: int = 500
    exploration: float = constants.EXPLORATION
    zscore_target: bool = True
    scorer: str = "correlation"
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.depth < 2:
            raise ConfigError(f"Search depth must be at least 2, got {self.depth}")
        if self.num_stats < 1:
            raise ConfigError(f"Number of statistics must be at least 1, got {self.num_stats}")
        if self.batch_size < 2:
            raise ConfigError(f"Search batch size must be at least 2, got {self.batch_size}")
        if self.simulations < 1:
            raise ConfigError(f"Simulations must be at least 1, got {self.simulations}")
        if self.threads < 1:
            raise ConfigError(f"Threads must be at least 1, got {self.threads}")
        get_scorer(self.scorer)

    @classmethod
    def from_settings(cls, **overrides: Any) -> "SearchConfig":
        values = {
            "depth": config.search_depth(),
            "num_stats": config.num_stats(),
            "batch_size": config.search_batch_size(),
            "simulations": config.simulations(),
            "exploration": config.exploration(),
            "zscore_target": config.zscore_target(),
            "scorer": config.reward_scorer(),
            "threads": config.threads(),
            "seed": config.seed(),
        }
        values.update({k: v for k, v in overrides.items() if v is not constants.UNSET})
        return cls(**values)


@dataclasses.dataclass(eq=False)
class SearchNode:
    """A node of the search tree.

    Attributes:
        state: The chain prefix the node stands for.
        action: The operator that extended the parent's state, `None` at the root.
        cum_reward: The sum of rewards backpropagated through the node.
        visits: The number of backpropagations through the node.
        children: Expanded children in creation order.
        untried: Valid operators not yet expanded, in canonical order.
    """

    state: StatisticChain
    action: Optional[Operator] = None
    parent: Optional["SearchNode"] = dataclasses.field(default=None, repr=False)
    cum_reward: float = 0.0
    visits: int = 0
    children: List["SearchNode"] = dataclasses.field(default_factory=list, repr=False)
    untried: List[Operator] = dataclasses.field(default_factory=list, repr=False)

    @classmethod
    def for_prefix(cls, prefix: StatisticChain, grammar: Grammar) -> "SearchNode":
        """A root node whose untried operators are the valid extensions of `prefix`"""
        return cls(state=prefix, untried=list(grammar.valid_next(prefix.ops)))

    @property
    def terminal(self) -> bool:
        return self.state.is_terminal

    @property
    def mean_reward(self) -> float:
        return self.cum_reward / self.visits if self.visits else 0.0


@dataclasses.dataclass(frozen=True, eq=False)
class GeneratedStatistic:
    """A statistic chosen by the search.

    Attributes:
        chain: The statistic.
        values: Its values on every user of the searched dataset.
        reward: The mean batch reward of the statistic when it was committed.
    """

    chain: StatisticChain
    values: np.ndarray
    reward: float


def uct_score(child: SearchNode, parent_visits: int, c: float) -> float:
    """Mean reward plus the UCT exploration bonus. Unvisited children score infinity."""
    if child.visits == 0:
        return math.inf

    return child.cum_reward / child.visits + c * math.sqrt(
        2 * math.log(parent_visits) / child.visits
    )


def _argmax(nodes: Sequence[SearchNode], key: Callable[[SearchNode], float]) -> SearchNode:
    """The first node with the largest key"""
    best, best_key = nodes[0], key(nodes[0])
    for node in nodes[1:]:
        node_key = key(node)
        if node_key > best_key:
            best, best_key = node, node_key

    return best


def best_child(root: SearchNode) -> SearchNode:
    """The child with the highest mean reward, earliest created on ties"""
    if not root.children:
        raise SearchExhaustedError(f"No child of {root.state} could be expanded")

    return _argmax(root.children, lambda node: node.mean_reward)


def rollout(
    prefix: StatisticChain,
    D: int,
    excluded: Iterable[StatisticChain],
    rng: np.random.Generator,
    *,
    grammar: Optional[Grammar] = None,
) -> StatisticChain:
    """Complete a prefix into a valid statistic by uniform random choices.

    A terminal prefix is returned unchanged.

    Raises:
        SearchExhaustedError: No valid statistic outside `excluded` extends the prefix.
    """
    grammar = grammar or Grammar(prefix.schema, D, excluded)
    chain = prefix
    while not chain.is_terminal:
        choices = grammar.valid_next(chain.ops)
        if not choices:
            raise SearchExhaustedError(f"No valid statistic extends {chain}")
        chain = chain.extend(choices[int(rng.integers(len(choices)))])

    if chain.ops in grammar.excluded:
        raise SearchExhaustedError(f"{chain} is excluded")

    return chain


def reward(
    chain: StatisticChain,
    dataset: Dataset,
    batch: np.ndarray,
    y_hat: np.ndarray,
    scorer: str = "correlation",
) -> float:
    """The reward of a statistic on a batch of users"""
    values = evaluate_column(chain, dataset, batch)
    return get_scorer(scorer)(values, np.asarray(y_hat)[batch])


class _Tree:
    """Grows one search tree. Only this object mutates the tree."""

    def __init__(
        self,
        root: SearchNode,
        dataset: Dataset,
        y_hat: np.ndarray,
        search: SearchConfig,
        grammar: Grammar,
        rng: np.random.Generator,
        pool: Optional[concurrent.futures.Executor] = None,
    ):
        self.root = root
        self.dataset = dataset
        self.y_hat = y_hat
        self.search = search
        self.grammar = grammar
        self.rng = rng
        self.pool = pool
        self.scorer = get_scorer(search.scorer)

    def expand(self, node: SearchNode) -> Tuple[SearchNode, StatisticChain]:
        """Add the first untried child and roll it out.

        The grammar only offers completable operators, so the rollout cannot dead-end.
        """
        op = node.untried.pop(0)
        state = node.state.extend(op)
        child = SearchNode(
            state=state,
            action=op,
            parent=node,
            untried=list(self.grammar.valid_next(state.ops)),
        )
        node.children.append(child)
        return child, rollout(state, self.grammar.D, (), self.rng, grammar=self.grammar)

    def descend(self) -> Tuple[SearchNode, StatisticChain]:
        """Selection, expansion and simulation. Returns the leaf and its rollout."""
        node = self.root
        while True:
            if node.terminal:
                return node, node.state

            if node.untried:
                return self.expand(node)

            if not node.children:
                raise SearchExhaustedError(f"No valid statistic extends {node.state}")

            parent_visits = max(node.visits, 1)
            node = _argmax(
                node.children,
                lambda child: uct_score(child, parent_visits, self.search.exploration),
            )

    def evaluate(self, chain: StatisticChain, batch: np.ndarray) -> float:
        values = evaluate_column(chain, self.dataset, batch)
        return self.scorer(values, self.y_hat[batch])

    def backpropagate(self, node: Optional[SearchNode], value: float) -> None:
        while node is not None:
            node.visits += 1
            node.cum_reward += value
            node = node.parent

    def grow(self) -> None:
        leaf, chain = self.descend()
        batch = sample_batch(len(self.dataset), self.search.batch_size, self.rng)
        self.backpropagate(leaf, self.evaluate(chain, batch))

    def grow_wave(self, size: int) -> None:
        """Simulate `size` times, then evaluate the rewards in parallel.

        Rewards are backpropagated in submission order, so results do not depend
        on thread timing.
        """
        pending = []
        for _ in range(size):
            leaf, chain = self.descend()
            batch = sample_batch(len(self.dataset), self.search.batch_size, self.rng)
            pending.append((leaf, chain, batch))

        if self.pool is None:
            raise AssertionError
        futures = [self.pool.submit(self.evaluate, chain, batch) for _, chain, batch in pending]
        for (leaf, _, _), future in zip(pending, futures):
            self.backpropagate(leaf, future.result())

    def run(self, simulations: int) -> None:
        if self.pool is None or self.search.threads == 1:
            for _ in range(simulations):
                self.grow()
        else:
            done = 0
            while done < simulations:
                size = min(self.search.threads, simulations - done)
                self.grow_wave(size)
                done += size


def grow_tree(
    root: SearchNode,
    dataset: Dataset,
    y_hat: np.ndarray,
    search: SearchConfig,
    excluded: Iterable[StatisticChain],
    rng: np.random.Generator,
    *,
    grammar: Optional[Grammar] = None,
) -> None:
    """Run one selection, expansion, simulation and backpropagation step"""
    grammar = grammar or Grammar(dataset.schema, search.depth, excluded)
    _Tree(root, dataset, np.asarray(y_hat, dtype=np.float64), search, grammar, rng).grow()


def _search_statistic(
    dataset: Dataset,
    y_hat: np.ndarray,
    search: SearchConfig,
    grammar: Grammar,
    rng: np.random.Generator,
    pool: Optional[concurrent.futures.Executor],
) -> Tuple[StatisticChain, float]:
    prefix = StatisticChain((), dataset.schema)
    if not grammar.valid_next(prefix.ops):
        raise SearchExhaustedError("Every valid statistic is excluded")

    score = 0.0
    while not prefix.is_terminal:
        root = SearchNode.for_prefix(prefix, grammar)
        _Tree(root, dataset, y_hat, search, grammar, rng, pool).run(search.simulations)
        best = best_child(root)
        logger.debug(
            "Position %d: %s (mean reward %.4f over %d visits)",
            len(prefix) + 1,
            best.action.render() if best.action else None,
            best.mean_reward,
            best.visits,
        )
        prefix, score = best.state, best.mean_reward

    return prefix, score


def generate_statistic(
    dataset: Dataset,
    y_hat: np.ndarray,
    search: SearchConfig,
    excluded: Iterable[StatisticChain],
    rng: np.random.Generator,
) -> StatisticChain:
    """Search for one statistic correlated with `y_hat`.

    Raises:
        SearchExhaustedError: Every valid statistic is excluded.
    """
    grammar = Grammar(dataset.schema, search.depth, excluded)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    with _executor(search) as pool:
        chain, _ = _search_statistic(dataset, y_hat, search, grammar, rng, pool)

    return chain


@contextlib.contextmanager
def _executor(search: SearchConfig) -> Iterator[Optional[concurrent.futures.Executor]]:
    """A thread pool when more than one thread is configured"""
    if search.threads == 1:
        yield None
    else:
        with concurrent.futures.ThreadPoolExecutor(search.threads) as pool:
            yield pool


def generate_top_k(
    dataset: Dataset,
    y: np.ndarray,
    search: SearchConfig,
    rng: Optional[np.random.Generator] = None,
) -> List[GeneratedStatistic]:
    """Search for `search.num_stats` distinct statistics.

    After each statistic is found it is excluded from later searches, and the
    target becomes the residual of `y` on every statistic found so far.
    Stops early with a warning when no valid statistic remains.
    """
    rng = rng if rng is not None else np.random.default_rng(search.seed)
    y = np.asarray(y, dtype=np.float64)
    found: List[GeneratedStatistic] = []
    y_hat = y

    with _executor(search) as pool:
        for k in range(search.num_stats):
            grammar = Grammar(dataset.schema, search.depth, [stat.chain for stat in found])
            target = numerics.zscore(y_hat) if search.zscore_target else y_hat
            try:
                chain, score = _search_statistic(dataset, target, search, grammar, rng, pool)
            except SearchExhaustedError:
                warnings.warn(
                    f"Statistic space exhausted after {k} of {search.num_stats} statistics",
                    stacklevel=2,
                )
                break

            values = evaluate_column(chain, dataset)
            found.append(GeneratedStatistic(chain=chain, values=values, reward=score))
            y_hat = numerics.residualize(y, [stat.values for stat in found])
            logger.info("Statistic %d: %s (reward %.4f)", k + 1, chain, score)

    return found


def random_statistics(
    schema: Schema, count: int, D: int, rng: np.random.Generator
) -> List[StatisticChain]:
    """Distinct statistics drawn by uniform rollouts from the empty prefix.

    Returns fewer than `count` statistics when the space runs out.
    """
    chains: List[StatisticChain] = []
    empty = StatisticChain((), schema)
    for _ in range(count):
        grammar = Grammar(schema, D, chains)
        try:
            chains.append(rollout(empty, D, chains, rng, grammar=grammar))
        except SearchExhaustedError:
            warnings.warn(
                f"Statistic space exhausted after {len(chains)} statistics", stacklevel=2
            )
            break

    return chains
