"""Loss, Adam, and the mini-batch training loop with early stopping.

The training split is chronological (no leakage): anchors — time indices
whose history window is fully available — are ordered and divided into
train/validation/test segments. Batch gradients are the plain sum over the
records in the batch; the loss applies its 1/q root over the whole batch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tree
from .checkpoint import save_checkpoint
from .errors import ConfigError, DataError
from .griddata import (
    NormStats,
    TemporalConfig,
    apply_norm,
    branch_offsets,
    fit_norm,
    invert_norm,
    required_history,
)
from .mixer import ModelConfig, ModelParams, batch_backward, batch_forward, build_params

Array = np.ndarray


# ---------------------------------------------------------------------------
# loss


@dataclass
class LossConfig:
    q: int = 2           # 1 = absolute-error loss, 2 = root-of-squares loss
    combine: bool = False  # sum the q=1 and q=2 losses

    def validate(self) -> None:
        if self.q not in (1, 2):
            raise ConfigError(f"loss norm order q must be 1 or 2, got {self.q}")


def loss(pred: Array, target: Array, cfg: LossConfig) -> tuple[float, Array]:
    """Batch loss ``(sum |pred - target|^q)^(1/q)`` and its gradient.

    The sum runs over every entry of every record in the batch. For q=1 the
    gradient uses sign(0) = 0; for q=2 the gradient at an exact fit is 0.
    """
    cfg.validate()
    if pred.shape != target.shape:
        raise DataError(
            f"prediction shape {pred.shape} does not match target {target.shape}"
        )
    r = pred - target
    value = 0.0
    grad = np.zeros_like(r)
    if cfg.q == 1 or cfg.combine:
        value += float(np.abs(r).sum())
        grad += np.sign(r)
    if cfg.q == 2 or cfg.combine:
        l2 = float(np.sqrt((r * r).sum()))
        value += l2
        if l2 > 0.0:
            grad += r / l2
    return value, grad


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: ModelParams
    v: ModelParams
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0


def adam_init(params: ModelParams, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        m=tree.tree_zeros_like(params),
        v=tree.tree_zeros_like(params),
        lr=lr, beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState) -> ModelParams:
    """One bias-corrected Adam update; moments update in place, params are new.

    Shared parameter arrays are updated exactly once (their gradients were
    already accumulated across all paths that reach them).
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step

    def update(p, g, m, v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        return p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)

    return tree.tree_map(update, params, grads, state.m, state.v)


# ---------------------------------------------------------------------------
# dataset windows


@dataclass
class SplitAnchors:
    train: Array
    val: Array
    test: Array


def split_anchors(
    n_maps: int,
    cfg: TemporalConfig,
    split: tuple[float, float, float],
    min_history: int | None = None,
) -> SplitAnchors:
    """Chronological train/val/test anchor split.

    An anchor t means: history = maps[:t], target = maps[t]. The warm-up
    region (anchors whose window would reach before the data) is excluded;
    ``min_history`` can push the warm-up further so different window
    configurations can be compared on identical anchors.
    """
    if len(split) != 3 or any(s < 0 for s in split) or abs(sum(split) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three nonnegative values summing to 1, got {split}")
    if not 0.0 < split[1] < 1.0:
        raise ConfigError(f"validation fraction must lie in (0, 1), got {split[1]}")
    warm = max(required_history(cfg), min_history or 0)
    anchors = np.arange(warm, n_maps)
    n = anchors.size
    n_train = int(n * split[0])
    n_val = int(n * split[1])
    parts = SplitAnchors(
        train=anchors[:n_train],
        val=anchors[n_train : n_train + n_val],
        test=anchors[n_train + n_val :],
    )
    for name, part in (("train", parts.train), ("val", parts.val), ("test", parts.test)):
        if part.size == 0:
            raise ConfigError(
                f"empty {name} split: {n} usable anchors (of {n_maps} steps, "
                f"warm-up {warm}) under ratios {split}"
            )
    return parts


def gather_windows(
    maps: Array, anchors: Array, cfg: TemporalConfig
) -> tuple[Array, Array, Array]:
    """Branch map stacks ``(B, len, H, W, d)`` for a batch of anchors."""
    anchors = np.asarray(anchors)
    out = []
    for offsets in branch_offsets(cfg):
        idx = anchors[:, None] + offsets[None, :]
        out.append(maps[idx.astype(int)])
    return tuple(out)


def select_target(maps: Array, predict_channel: int | None) -> Array:
    """Restrict targets to the configured output channel, if any."""
    if predict_channel is None:
        return maps
    return maps[..., predict_channel : predict_channel + 1]


def predict_batches(
    params: ModelParams, maps: Array, anchors: Array, cfg: TemporalConfig, batch_size: int
) -> Array:
    """Forward passes over anchors in batches; returns stacked predictions."""
    preds = []
    for start in range(0, len(anchors), batch_size):
        chunk = anchors[start : start + batch_size]
        branch_maps = gather_windows(maps, chunk, cfg)
        pred, _ = batch_forward(branch_maps, params)
        preds.append(pred)
    return np.concatenate(preds, axis=0)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0
    lr: float = 1e-3
    min_history: int | None = None

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")


@dataclass
class TrainResult:
    params: ModelParams
    stats: NormStats
    anchors: SplitAnchors
    history: list[tuple[int, float, float]] = field(default_factory=list)
    log_lines: list[str] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mae: float = float("inf")
    train_seconds: float = 0.0


def train(
    maps: Array,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    loss_cfg: LossConfig,
    checkpoint_path=None,
    config_text: str = "",
    log=None,
) -> TrainResult:
    """Train on a raw ``(T, H, W, d)`` stack; returns the best checkpoint.

    Emits one ``epoch,<n>,train_loss,<v>,val_mae,<v>`` line per epoch via
    ``log``. Validation MAE is computed in the original data scale; the
    checkpoint with the lowest validation MAE wins. When ``checkpoint_path``
    is given, the best parameters so far are kept in ``<path>.best`` and the
    final best set is written to ``<path>``.
    """
    t0 = time.monotonic()
    model_cfg.validate()
    train_cfg.validate()
    loss_cfg.validate()

    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim != 4:
        raise DataError(f"expected a (T, H, W, d) stack, got shape {maps.shape}")
    n_maps, h, w, d = maps.shape
    temporal = model_cfg.temporal

    parts = split_anchors(n_maps, temporal, train_cfg.split, train_cfg.min_history)
    stats = fit_norm(maps[: parts.train[-1] + 1])
    normed = apply_norm(maps, stats)

    params = build_params(model_cfg, h, w, d, seed=[train_cfg.seed, 0])
    adam = adam_init(params, lr=train_cfg.lr)
    shuffle_rng = np.random.default_rng([train_cfg.seed, 1])

    result = TrainResult(params=params, stats=stats, anchors=parts)
    best_params = tree.tree_copy(params)
    since_best = 0

    val_targets_raw = select_target(maps[parts.val], params.predict_channel)

    for epoch in range(1, train_cfg.max_epochs + 1):
        order = shuffle_rng.permutation(parts.train)
        batch_losses = []
        for start in range(0, order.size, train_cfg.batch_size):
            chunk = order[start : start + train_cfg.batch_size]
            branch_maps = gather_windows(normed, chunk, temporal)
            targets = select_target(normed[chunk], params.predict_channel)
            pred, cache = batch_forward(branch_maps, params)
            value, grad_pred = loss(pred, targets, loss_cfg)
            grads = batch_backward(cache, grad_pred, params)
            params = adam_step(params, grads, adam)
            batch_losses.append(value)
        train_loss = float(np.mean(batch_losses))

        val_pred = predict_batches(params, normed, parts.val, temporal, train_cfg.batch_size)
        val_pred_raw = invert_norm(val_pred, _stats_for_output(stats, params.predict_channel))
        val_mae = float(np.abs(val_pred_raw - val_targets_raw).mean())

        line = f"epoch,{epoch},train_loss,{train_loss!r},val_mae,{val_mae!r}"
        result.log_lines.append(line)
        if log is not None:
            log(line)
        result.history.append((epoch, train_loss, val_mae))

        if val_mae < result.best_val_mae:
            result.best_val_mae = val_mae
            result.best_epoch = epoch
            best_params = tree.tree_copy(params)
            since_best = 0
            if checkpoint_path is not None:
                save_checkpoint(
                    f"{checkpoint_path}.best", best_params, temporal, config_text, stats
                )
        else:
            since_best += 1
            if since_best >= train_cfg.patience:
                break

    result.params = best_params
    result.train_seconds = time.monotonic() - t0
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, best_params, temporal, config_text, stats)
    return result


def _stats_for_output(stats: NormStats, predict_channel: int | None) -> NormStats:
    if predict_channel is None:
        return stats
    sl = slice(predict_channel, predict_channel + 1)
    return NormStats(lo=stats.lo[sl], hi=stats.hi[sl])
