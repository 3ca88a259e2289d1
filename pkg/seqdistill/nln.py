"""The neural logical network.

Every neuron picks two inputs with Gumbel-softmax selectors. Conjunction
neurons multiply their picks and disjunction neurons combine them with
`1 - (1 - a)(1 - b)`. Every layer but the last concatenates its input to its
output, and the last layer's outputs are the rules that a linear head weights.
Gradients are derived by hand for exactly this architecture.
"""

import dataclasses
import logging
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
import scipy.special

from seqdistill import config, constants
from seqdistill.exceptions import ConfigError, ShapeError

logger = logging.getLogger(__name__)

SELECTORS = 4
"""Selectors per neuron pair: two for the conjunction, two for the disjunction"""


@dataclasses.dataclass(frozen=True)
class NlnConfig:
    """Network shape and training settings. Fields left unset read [seqdistill.config][]."""

    layers: int = 2
    hidden: int = 20
    rules: int = 20
    epochs: int = 500
    batch_size: int = 128
    lr_start: float = 0.1
    lr_end: float = 0.001
    tau_start: float = 1.0
    tau_end: float = 0.0001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_scale: float = 0.1
    shared_noise: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError(f"The network needs at least 1 layer, got {self.layers}")
        if self.hidden < 1:
            raise ConfigError(f"Hidden size must be at least 1, got {self.hidden}")
        if self.rules < 2 or self.rules % 2:
            raise ConfigError(f"Rule count must be a positive even number, got {self.rules}")
        if self.epochs < 0:
            raise ConfigError(f"Epochs cannot be negative, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(f"Training batch size must be at least 2, got {self.batch_size}")
        for name in ("lr_start", "lr_end", "tau_start", "tau_end", "init_scale"):
            if getattr(self, name) <= 0:
                raise ConfigError(f'"{name}" must be positive, got {getattr(self, name)}')

    @classmethod
    def from_settings(cls, **overrides: Any) -> "NlnConfig":
        values = {
            "layers": config.layers(),
            "hidden": config.hidden(),
            "rules": config.rules(),
            "epochs": config.epochs(),
            "batch_size": config.train_batch_size(),
            "lr_start": config.lr_start(),
            "lr_end": config.lr_end(),
            "tau_start": config.tau_start(),
            "tau_end": config.tau_end(),
            "shared_noise": config.shared_noise(),
            "seed": config.seed(),
        }
        values.update({k: v for k, v in overrides.items() if v is not constants.UNSET})
        return cls(**values)

    def schedule(self, epoch: int) -> Tuple[float, float]:
        """The learning rate and temperature of an epoch, linearly interpolated"""
        frac = epoch / (self.epochs - 1) if self.epochs > 1 else 0.0
        lr = self.lr_start + (self.lr_end - self.lr_start) * frac
        tau = self.tau_start + (self.tau_end - self.tau_start) * frac
        return lr, tau


def layer_widths(n_literals: int, layers: int, hidden: int, rules: int) -> List[int]:
    """The width of the input and of every layer's output.

    The input holds the literals, their negations and the constants 1 and 0.
    Hidden layers add `2 * hidden` neurons to their input. The last layer has
    exactly `rules` neurons.
    """
    widths = [2 * n_literals + 2]
    for _ in range(layers - 1):
        widths.append(2 * hidden + widths[-1])
    widths.append(rules)
    return widths


@dataclasses.dataclass
class NlnParams:
    """Selector logits of every layer plus the rule weights.

    Attributes:
        layers: One array per layer of shape `(4, n_half, h_in)`. Selectors 0
            and 1 feed the conjunction neurons and 2 and 3 the disjunction neurons.
        weights: The rule weights, one per last-layer neuron.
    """

    layers: List[np.ndarray]
    weights: np.ndarray

    def __post_init__(self):
        for pos, W in enumerate(self.layers):
            if W.ndim != 3 or W.shape[0] != SELECTORS:
                raise ShapeError(f"Layer {pos + 1} logits have shape {W.shape}")
            if pos and W.shape[2] != self.in_width(pos):
                raise ShapeError(
                    f"Layer {pos + 1} reads {W.shape[2]} inputs, expected {self.in_width(pos)}"
                )
        if len(self.weights) != 2 * self.layers[-1].shape[1]:
            n_rules = 2 * self.layers[-1].shape[1]
            raise ShapeError(f"{len(self.weights)} weights for {n_rules} rules")

    def in_width(self, pos: int) -> int:
        if pos == 0:
            return self.layers[0].shape[2]

        prev = self.layers[pos - 1]
        return 2 * prev.shape[1] + prev.shape[2]

    @property
    def n_rules(self) -> int:
        return len(self.weights)

    @property
    def arrays(self) -> List[np.ndarray]:
        return [*self.layers, self.weights]

    def copy(self) -> "NlnParams":
        return NlnParams(layers=[W.copy() for W in self.layers], weights=self.weights.copy())


def init_params(n_literals: int, nln: NlnConfig, rng: np.random.Generator) -> NlnParams:
    """Random logits and weights drawn from `normal(0, init_scale)`"""
    widths = layer_widths(n_literals, nln.layers, nln.hidden, nln.rules)
    layers = []
    for pos in range(nln.layers):
        n_half = nln.rules // 2 if pos == nln.layers - 1 else nln.hidden
        layers.append(rng.normal(0.0, nln.init_scale, size=(SELECTORS, n_half, widths[pos])))

    return NlnParams(layers=layers, weights=rng.normal(0.0, nln.init_scale, size=nln.rules))


@dataclasses.dataclass
class LayerTrace:
    inputs: np.ndarray
    noise: np.ndarray
    q: np.ndarray
    s: np.ndarray
    skip: bool


@dataclasses.dataclass
class ForwardTrace:
    """Everything the backward pass needs from a relaxed forward pass"""

    layers: List[LayerTrace]
    tau: float
    output: np.ndarray
    y_tilde: np.ndarray


def sample_noise(
    params: NlnParams, n: int, rng: np.random.Generator, *, shared: bool = False
) -> List[np.ndarray]:
    """Gumbel(0, 1) noise for every selector logit.

    Per-instance noise has shape `(n, 4, n_half, h_in)` per layer. Shared noise
    has shape `(4, n_half, h_in)` and is reused by every instance of the batch.
    """
    return [rng.gumbel(size=W.shape if shared else (n, *W.shape)) for W in params.layers]


def _as_batch(z0: np.ndarray, width: int) -> np.ndarray:
    z0 = np.asarray(z0, dtype=np.float64)
    if z0.ndim == 1:
        z0 = z0[None, :]
    if z0.ndim != 2 or z0.shape[1] != width:
        raise ShapeError(f"Network input of shape {z0.shape} does not have width {width}")

    return z0


def forward_soft(
    params: NlnParams,
    z0: np.ndarray,
    tau: float,
    noise: Optional[Sequence[np.ndarray]] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, ForwardTrace]:
    """The relaxed forward pass.

    Args:
        params: The network.
        z0: Augmented inputs, one row per instance, or a single row.
        tau: The Gumbel-softmax temperature.
        noise: Gumbel noise as returned by [seqdistill.nln.sample_noise][].
            Drawn per instance from `rng` when not given.
        rng: The generator fresh noise is drawn from.

    Returns:
        The scores of every instance and the trace of the pass.
    """
    if tau <= 0:
        raise ValueError(f"Temperature must be positive, got {tau}")

    z = _as_batch(z0, params.in_width(0))
    if noise is None:
        if rng is None:
            raise ValueError("Either noise or rng is required")
        noise = sample_noise(params, len(z), rng)

    traces = []
    last = len(params.layers) - 1
    for pos, (W, g) in enumerate(zip(params.layers, noise)):
        q = scipy.special.softmax((W + g) / tau, axis=-1)
        n_half, h_in = W.shape[1], W.shape[2]
        if q.ndim == 3:
            s = (z @ q.reshape(-1, h_in).T).reshape(len(z), SELECTORS, n_half)
        else:
            s = np.matmul(q.reshape(len(z), -1, h_in), z[:, :, None]).reshape(
                len(z), SELECTORS, n_half
            )

        u = s[:, 0] * s[:, 1]
        v = 1.0 - (1.0 - s[:, 2]) * (1.0 - s[:, 3])
        traces.append(LayerTrace(inputs=z, noise=g, q=q, s=s, skip=pos < last))
        z = np.hstack([u, v, z]) if pos < last else np.hstack([u, v])

    y_tilde = z @ params.weights
    return y_tilde, ForwardTrace(layers=traces, tau=tau, output=z, y_tilde=y_tilde)


def backward(params: NlnParams, trace: ForwardTrace, d_y: np.ndarray) -> NlnParams:
    """Gradients of a scalar function of the scores.

    Args:
        params: The network the trace was computed with.
        trace: A relaxed forward pass.
        d_y: The derivative of the function with respect to every score.

    Returns:
        The gradients, shaped like the parameters.
    """
    d_y = np.asarray(d_y, dtype=np.float64)
    d_weights = trace.output.T @ d_y
    dz = d_y[:, None] * params.weights[None, :]

    d_layers: List[np.ndarray] = [np.empty(0)] * len(params.layers)
    for pos in range(len(params.layers) - 1, -1, -1):
        layer = trace.layers[pos]
        n_half = params.layers[pos].shape[1]
        du, dv = dz[:, :n_half], dz[:, n_half : 2 * n_half]
        s = layer.s

        ds = np.stack(
            [du * s[:, 1], du * s[:, 0], dv * (1.0 - s[:, 3]), dv * (1.0 - s[:, 2])], axis=1
        )
        z = layer.inputs
        n, h_in = z.shape
        if layer.q.ndim == 3:
            # shared noise: q is (k, j, h) and the sum over instances is a matrix product
            q = layer.q.reshape(-1, h_in)
            flat = ds.reshape(n, -1)
            dot = (flat.T @ z).reshape(layer.q.shape)
            da = layer.q * (dot - (ds * s).sum(axis=0)[..., None])
            dz_in = flat @ q
        else:
            da = (ds[..., None] * layer.q * (z[:, None, None, :] - s[..., None])).sum(axis=0)
            per_instance = layer.q.reshape(n, -1, h_in)
            dz_in = np.matmul(ds.reshape(n, 1, -1), per_instance).reshape(n, h_in)

        d_layers[pos] = da / trace.tau
        if layer.skip:
            dz_in = dz_in + dz[:, 2 * n_half :]
        dz = dz_in

    return NlnParams(layers=d_layers, weights=d_weights)


def _pair_terms(y_tilde: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    y_tilde = np.asarray(y_tilde, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(y_tilde) != len(y):
        raise ShapeError(f"{len(y_tilde)} scores for {len(y)} targets")
    if len(y) < 2:
        raise ShapeError("The ranking objective needs at least 2 instances")

    diff = y_tilde[:, None] - y_tilde[None, :]
    above = y[:, None] > y[None, :]
    off_diagonal = ~np.eye(len(y), dtype=bool)
    return diff, above, off_diagonal


def ranking_objective(y_tilde: np.ndarray, y: np.ndarray) -> float:
    """The mean pairwise log-likelihood of the teacher's order.

    Averages, over ordered pairs `i != j`, `log sigmoid(ỹ_i - ỹ_j)` when
    `y_i > y_j` and `log sigmoid(ỹ_j - ỹ_i)` otherwise. Training maximizes it.
    """
    diff, above, off_diagonal = _pair_terms(y_tilde, y)
    terms = np.where(above, scipy.special.log_expit(diff), scipy.special.log_expit(-diff))
    n = len(diff)
    return float(terms[off_diagonal].sum() / (n * (n - 1)))


def ranking_gradient(y_tilde: np.ndarray, y: np.ndarray) -> np.ndarray:
    """The derivative of [seqdistill.nln.ranking_objective][] with respect to every score"""
    diff, above, off_diagonal = _pair_terms(y_tilde, y)
    coef = np.where(above, scipy.special.expit(-diff), -scipy.special.expit(diff))
    coef = np.where(off_diagonal, coef, 0.0)
    n = len(diff)
    return (coef.sum(axis=1) - coef.sum(axis=0)) / (n * (n - 1))


def hard_wiring(params: NlnParams) -> List[np.ndarray]:
    """The input each selector picks, the first on ties. One `(4, n_half)` array per layer."""
    return [np.argmax(W, axis=-1) for W in params.layers]


def weigh_rules(fired: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """The summed weight of the rules that fire in every row.

    Rules are added one at a time in rule order, so the same firings always
    give bit-identical scores whatever the layout of `fired`.
    """
    fired = np.asarray(fired, dtype=np.float64)
    total = np.zeros(fired.shape[0])
    for pos, weight in enumerate(np.asarray(weights, dtype=np.float64)):
        total += fired[:, pos] * weight

    return total


def forward_hard(params: NlnParams, z0: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
    """The discrete forward pass with every selector at its argmax.

    Returns:
        The binary activations of every layer and the scores.
    """
    z = _as_batch(z0, params.in_width(0))
    activations = []
    last = len(params.layers) - 1
    for pos, wiring in enumerate(hard_wiring(params)):
        picks = z[:, wiring] > 0.5
        u = picks[:, 0] & picks[:, 1]
        v = picks[:, 2] | picks[:, 3]
        out = np.hstack([u, v]).astype(np.float64)
        z = np.hstack([out, z]) if pos < last else out
        activations.append(z)

    return activations, weigh_rules(z, params.weights)


class Adam:
    """Adaptive moment estimation over a list of arrays, updated in place"""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: List[np.ndarray] = []
        self.v: List[np.ndarray] = []

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]

        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _loss_and_grads(
    params: NlnParams, z0: np.ndarray, y: np.ndarray, tau: float, noise: Sequence[np.ndarray]
) -> Tuple[float, NlnParams]:
    y_tilde, trace = forward_soft(params, z0, tau, noise=noise)
    objective = ranking_objective(y_tilde, y)
    grads = backward(params, trace, -ranking_gradient(y_tilde, y))
    return -objective, grads


def train(
    z0: np.ndarray,
    y: np.ndarray,
    nln: NlnConfig,
    rng: Optional[np.random.Generator] = None,
    params: Optional[NlnParams] = None,
    valid: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> NlnParams:
    """Fit the network to the teacher's order on the training split.

    Args:
        z0: Augmented literal rows of the training split.
        y: Teacher scores aligned with `z0`.
        nln: Network and schedule settings.
        rng: Source of initialization, shuffling and noise. Seeded from
            `nln.seed` when not given.
        params: Starting parameters. Drawn with [seqdistill.nln.init_params][]
            when not given.
        valid: Augmented literal rows and teacher scores of the validation split.
            When given, the discrete network is scored on them after every epoch
            and the epoch with the best ranking objective is kept. Later epochs
            win ties.

    Returns:
        The trained parameters.
    """
    rng = rng if rng is not None else np.random.default_rng(nln.seed)
    z0 = np.asarray(z0, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(z0) != len(y):
        raise ShapeError(f"{len(z0)} input rows for {len(y)} scores")

    if params is None:
        params = init_params((z0.shape[1] - 2) // 2, nln, rng)
    else:
        params = params.copy()

    if valid is not None:
        valid = (np.asarray(valid[0], dtype=np.float64), np.asarray(valid[1], dtype=np.float64))
        if len(valid[0]) != len(valid[1]):
            raise ShapeError(f"{len(valid[0])} validation rows for {len(valid[1])} scores")

    best: Optional[Tuple[int, float, NlnParams]] = None
    optimizer = Adam(nln.beta1, nln.beta2, nln.eps)
    report_every = max(1, nln.epochs // 10)
    n = len(y)
    for epoch in range(nln.epochs):
        lr, tau = nln.schedule(epoch)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, nln.batch_size):
            batch = order[start : start + nln.batch_size]
            if len(batch) < 2:
                continue

            noise = sample_noise(params, len(batch), rng, shared=nln.shared_noise)
            loss, grads = _loss_and_grads(params, z0[batch], y[batch], tau, noise)
            optimizer.step(params.arrays, grads.arrays, lr)
            losses.append(loss)

        objective = -float(np.mean(losses)) if losses else float("nan")
        logger.debug("Epoch %d: objective %.6f (lr %.5f, tau %.5f)", epoch + 1, objective, lr, tau)
        if (epoch + 1) % report_every == 0:
            logger.info("Epoch %d/%d: objective %.6f", epoch + 1, nln.epochs, objective)

        if valid is not None:
            _, y_hard = forward_hard(params, valid[0])
            valid_objective = ranking_objective(y_hard, valid[1])
            logger.debug("Epoch %d: validation objective %.6f", epoch + 1, valid_objective)
            if best is None or valid_objective >= best[1]:
                best = (epoch + 1, valid_objective, params.copy())

    if best is not None:
        logger.info("Keeping epoch %d, validation objective %.6f", best[0], best[1])
        return best[2]

    return params


def grad_check(
    nln: NlnConfig,
    rng: np.random.Generator,
    *,
    n_literals: int = 6,
    batch: int = 8,
    tau: Optional[float] = None,
    h: float = 1e-5,
) -> float:
    """Compare hand-derived gradients with central differences on a random network.

    The noise is drawn once and reused for every evaluation, so the check is a
    deterministic function of `rng`.

    Returns:
        The largest relative error `|a - n| / max(|a| + |n|, 1e-6)` over all parameters.
    """
    tau = nln.tau_start if tau is None else tau
    params = init_params(n_literals, nln, rng)
    params = NlnParams(
        layers=[rng.normal(0.0, 1.0, size=W.shape) for W in params.layers],
        weights=rng.normal(0.0, 1.0, size=params.weights.shape),
    )
    bits = rng.integers(0, 2, size=(batch, n_literals))
    z0 = np.hstack([bits, 1 - bits, np.ones((batch, 1)), np.zeros((batch, 1))])
    y = rng.normal(size=batch)
    noise = sample_noise(params, batch, rng, shared=nln.shared_noise)

    _, grads = _loss_and_grads(params, z0, y, tau, noise)
    worst = 0.0
    for array, grad in zip(params.arrays, grads.arrays):
        for index in np.ndindex(array.shape):
            saved = array[index]
            array[index] = saved + h
            plus, _ = _loss_and_grads(params, z0, y, tau, noise)
            array[index] = saved - h
            minus, _ = _loss_and_grads(params, z0, y, tau, noise)
            array[index] = saved

            numeric = (plus - minus) / (2 * h)
            analytic = grad[index]
            worst = max(worst, abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-6))

    return worst
