"""Episodic meta pre-training of the shared initializer.

Each outer step draws a fresh class-balanced support sample per stock,
adapts a private task-learner copy for five epochs of plain gradient steps,
sums the query-month losses, and applies one Adam step (cosine-annealed base
rate) to the shared parameters. The meta-gradient uses the first-order
convention: the adapted parameters' dependence on the initializer is dropped
and the query gradients are applied to the shared structure directly.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from metatrend.errors import DivergenceError, ModelError
from metatrend.labeling import TrendLabel
from metatrend.nn.network import Batch, ModelParams, Network, build_network, clone_params
from metatrend.nn.optim import AdamState, adam_step, cosine_lr
from metatrend.tensor import LabeledDataset

logger = logging.getLogger(__name__)

# Stream tags keep per-purpose RNGs independent of stock processing order.
_STREAM_SUPPORT = 1
_STREAM_INNER = 2

# Support pools are resampled every outer step; repeat shortfall warnings for
# the same (stock, class, counts) add nothing, so each is logged once.
_warned_short: set[tuple] = set()


@dataclass(frozen=True)
class TrainConfig:
    """Learning rates and loop sizes; defaults are the published settings."""

    alpha: float = 1e-4            # task-learner rate (inner adaptation)
    beta: float = 1e-4             # meta-learner rate (outer Adam step)
    gamma: float = 1e-4            # fine-tuning rate (meta-testing)
    meta_steps: int = 100
    inner_epochs: int = 5
    finetune_epochs: int = 50
    inner_batch_size: int = 16
    finetune_batch_size: int = 32
    support_per_class: int = 20
    meta_grad: str = "first_order"
    reset_per_window: bool = False

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("meta_steps", "inner_epochs", "finetune_epochs",
                     "inner_batch_size", "finetune_batch_size", "support_per_class"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.meta_grad != "first_order":
            raise ValueError("only the first_order meta gradient is supported")


@dataclass(frozen=True)
class Episode:
    """One stock's task: balanced support sample plus its query month."""

    stock_id: str
    support: LabeledDataset
    query: LabeledDataset


@dataclass
class MetaRunState:
    phi: ModelParams
    optimizer: AdamState = field(default_factory=AdamState)
    step: int = 0
    loss_log: list[tuple[int, float, float]] = field(default_factory=list)


def _rng(seed: int, stream: int, *key: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((seed, stream, *key)))
    )


def sample_support(dataset: LabeledDataset, per_class: int,
                   rng: np.random.Generator) -> LabeledDataset:
    """Uniform without-replacement sample of up to ``per_class`` examples per
    label; short classes contribute what they have (with a warning)."""
    if dataset.is_empty:
        raise ValueError(f"{dataset.stock_id}: cannot sample from an empty dataset")
    chosen: list[int] = []
    for label in TrendLabel:
        candidates = np.flatnonzero(dataset.labels == int(label))
        if candidates.size == 0:
            logger.warning("%s: no %s examples to sample", dataset.stock_id, label.csv_name)
            continue
        take = min(per_class, candidates.size)
        if take < per_class:
            key = (dataset.stock_id, label, candidates.size, per_class)
            if key not in _warned_short:
                _warned_short.add(key)
                logger.warning(
                    "%s: only %d %s examples available (wanted %d)",
                    dataset.stock_id, candidates.size, label.csv_name, per_class,
                )
        picked = rng.choice(candidates, size=take, replace=False)
        chosen.extend(int(i) for i in picked)
    chosen.sort()
    return dataset.take(chosen)


def _minibatches(dataset: LabeledDataset, batch_size: int,
                 rng: np.random.Generator):
    order = rng.permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        yield Batch(dataset.tensors[idx], dataset.labels[idx])


def inner_adapt(net: Network, phi: ModelParams, support: LabeledDataset,
                alpha: float, epochs: int, batch_size: int,
                rng: np.random.Generator) -> ModelParams:
    """Adapt a deep copy of phi on the support set with plain gradient steps.

    phi itself is never touched; the copy's normalization running statistics
    do absorb the support batches.
    """
    if support.is_empty:
        raise ValueError(f"{support.stock_id}: empty support set")
    theta = clone_params(phi)
    for epoch in range(epochs):
        for batch in _minibatches(support, batch_size, rng):
            loss, grads = net.loss_and_grads(theta, batch, update_stats=True)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"{support.stock_id}: non-finite loss during adaptation"
                )
            for key, grad in grads.items():
                theta.values[key] -= (alpha * grad).astype(theta.values[key].dtype)
    return theta


def query_loss_and_grads(net: Network, theta: ModelParams,
                         query: LabeledDataset, chunk: int = 256):
    """Mean cross-entropy over a full query set, with gradients.

    Evaluated in training mode (batch statistics) without touching running
    stats; chunks are mean-weighted so the result is the exact dataset mean.
    """
    if query.is_empty:
        raise ValueError(f"{query.stock_id}: empty query set")
    total = len(query)
    loss_sum = 0.0
    grad_sum: dict[str, np.ndarray] = {}
    for start in range(0, total, chunk):
        idx = slice(start, min(start + chunk, total))
        batch = Batch(query.tensors[idx], query.labels[idx])
        loss, grads = net.loss_and_grads(theta, batch, update_stats=False)
        weight = len(batch) / total
        loss_sum += loss * weight
        for key, grad in grads.items():
            if key in grad_sum:
                grad_sum[key] += weight * grad
            else:
                grad_sum[key] = weight * grad
    return loss_sum, grad_sum


def accumulate_meta_loss(net: Network, thetas: list[ModelParams],
                         queries: list[LabeledDataset]):
    """Sum of per-task query losses and the first-order meta-gradient.

    Tasks are folded in list order (callers pass stock-id order), so the
    reduction is deterministic regardless of how the adaptations ran.
    """
    if len(thetas) != len(queries):
        raise ModelError("one query set per adapted task-learner required")
    total_loss = 0.0
    total_grads: dict[str, np.ndarray] = {}
    used = 0
    for theta, query in zip(thetas, queries):
        if query.is_empty:
            logger.warning("%s: empty query set skipped", query.stock_id)
            continue
        loss, grads = query_loss_and_grads(net, theta, query)
        total_loss += loss
        for key, grad in grads.items():
            if key in total_grads:
                total_grads[key] += grad
            else:
                total_grads[key] = grad.copy()
        used += 1
    if used == 0:
        raise ModelError("every query set was empty")
    return total_loss, total_grads


def meta_train(pools: dict[str, LabeledDataset], queries: dict[str, LabeledDataset],
               cfg: TrainConfig, phi: ModelParams, seed: int,
               executor=None) -> MetaRunState:
    """Run the outer loop; returns the trained phi and the per-step loss log.

    ``pools`` maps stock id to that stock's support pool (training-year
    examples); ``queries`` maps stock id to its held-out query month.
    """
    stock_ids = sorted(sid for sid in pools if not pools[sid].is_empty)
    stock_ids = [sid for sid in stock_ids if sid in queries and not queries[sid].is_empty]
    if not stock_ids:
        raise ModelError("no stock has both a support pool and a query set")
    net = build_network(phi.arch, phi.scale)
    state = MetaRunState(phi=phi)

    def adapt_one(step: int, rank: int) -> ModelParams:
        sid = stock_ids[rank]
        support = sample_support(
            pools[sid], cfg.support_per_class, _rng(seed, _STREAM_SUPPORT, step, rank)
        )
        return inner_adapt(
            net, phi, support, cfg.alpha, cfg.inner_epochs,
            cfg.inner_batch_size, _rng(seed, _STREAM_INNER, step, rank),
        )

    for step in range(cfg.meta_steps):
        if executor is not None:
            thetas = list(executor.map(lambda r: adapt_one(step, r), range(len(stock_ids))))
        else:
            thetas = [adapt_one(step, rank) for rank in range(len(stock_ids))]
        loss, grads = accumulate_meta_loss(
            net, thetas, [queries[sid] for sid in stock_ids]
        )
        if not np.isfinite(loss):
            raise DivergenceError(f"meta loss diverged at step {step}", step=step)
        lr = cosine_lr(step, cfg.meta_steps, cfg.beta)
        adam_step(phi, grads, state.optimizer, lr)
        state.step = step + 1
        state.loss_log.append((step, lr, loss))
        if step % 10 == 0 or step == cfg.meta_steps - 1:
            logger.info("meta step %d lr %.3g loss %.6f", step, lr, loss)
    return state
