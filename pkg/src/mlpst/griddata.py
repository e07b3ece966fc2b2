"""Spatio-temporal data model: grid maps, patches, temporal slicing.

A traffic flow grid map is an ``(H, W, d)`` float64 array for one time
interval; a history is a time-ordered ``(T, H, W, d)`` stack. All
operations accept extra leading batch axes and are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

Array = np.ndarray


# ---------------------------------------------------------------------------
# patch partitioning


def n_patches(h: int, w: int, patch: int) -> int:
    _check_divides(h, w, patch)
    return (h // patch) * (w // patch)


def _check_divides(h: int, w: int, patch: int) -> None:
    if patch < 1 or h % patch != 0 or w % patch != 0:
        raise ConfigError(
            f"patch size {patch} must divide both grid dimensions (H={h}, W={w})"
        )


def patchify(x: Array, patch: int) -> Array:
    """Split ``(..., H, W, d)`` into flattened patch tokens ``(..., N_P, P*P*d)``.

    Token k is the k-th patch in row-major patch order, flattened row-major
    within the patch with the feature channels innermost.
    """
    x = np.asarray(x, dtype=np.float64)
    *lead, h, w, d = x.shape
    _check_divides(h, w, patch)
    gh, gw = h // patch, w // patch
    y = x.reshape(*lead, gh, patch, gw, patch, d)
    y = np.swapaxes(y, -4, -3)  # (..., gh, gw, P, P, d)
    return y.reshape(*lead, gh * gw, patch * patch * d)


def unpatchify(tokens: Array, h: int, w: int, patch: int, d: int) -> Array:
    """Exact inverse of :func:`patchify`."""
    tokens = np.asarray(tokens, dtype=np.float64)
    _check_divides(h, w, patch)
    gh, gw = h // patch, w // patch
    *lead, np_, pd = tokens.shape
    if np_ != gh * gw or pd != patch * patch * d:
        raise ConfigError(
            f"token grid {np_}x{pd} does not match H={h}, W={w}, P={patch}, d={d}"
        )
    y = tokens.reshape(*lead, gh, gw, patch, patch, d)
    y = np.swapaxes(y, -4, -3)  # (..., gh, P, gw, P, d)
    return y.reshape(*lead, h, w, d)


# ---------------------------------------------------------------------------
# temporal dependency slicing


@dataclass(frozen=True)
class TemporalConfig:
    """Trend/period/closeness lengths and their sampling intervals.

    ``trend``, ``period`` and ``closeness`` are sequence lengths summing to
    the input window T. The intervals give the stride (in unit time steps)
    at which each sequence samples the history; ``block_mode`` instead
    carves the last ``T`` steps into three contiguous blocks in
    trend/period/closeness order, ignoring the intervals.
    """

    trend: int = 2
    period: int = 2
    closeness: int = 8
    trend_interval: int = 168
    period_interval: int = 24
    closeness_interval: int = 1
    block_mode: bool = False
    enforce_interval_order: bool = True

    @property
    def window(self) -> int:
        return self.trend + self.period + self.closeness

    def validate(self) -> None:
        for name in ("trend", "period", "closeness"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} length must be >= 0")
        if self.trend == 1 or self.period == 1:
            raise ConfigError(
                "trend and period lengths of 1 are not allowed (nothing to mix); "
                "use 0 or >= 2"
            )
        if self.window < 1:
            raise ConfigError("input window t+p+c must be at least 1")
        for name in ("trend_interval", "period_interval", "closeness_interval"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.block_mode or not self.enforce_interval_order:
            return
        # only intervals of active branches are constrained
        active = [
            (length, interval)
            for length, interval in (
                (self.trend, self.trend_interval),
                (self.period, self.period_interval),
                (self.closeness, self.closeness_interval),
            )
            if length > 0
        ]
        for (_, hi), (_, lo) in zip(active, active[1:]):
            if hi <= lo:
                raise ConfigError(
                    "intervals must satisfy trend > period > closeness among "
                    "active branches (set enforce_interval_order=false to override)"
                )


def branch_offsets(cfg: TemporalConfig) -> tuple[Array, Array, Array]:
    """Per-branch history offsets relative to the prediction anchor.

    The anchor is the number of available steps T; offset -1 is the most
    recent observation. Strided mode selects steps T-k*l for k=len..1,
    never the anchor step itself; block mode splits the last t+p+c steps
    into contiguous trend/period/closeness blocks.
    """
    if cfg.block_mode:
        w = cfg.window
        trend = np.arange(-w, -w + cfg.trend)
        period = np.arange(-w + cfg.trend, -w + cfg.trend + cfg.period)
        closeness = np.arange(-cfg.closeness, 0)
        return trend, period, closeness

    def strided(length: int, interval: int) -> Array:
        ks = np.arange(length, 0, -1)
        return -(ks * interval) - 1

    return (
        strided(cfg.trend, cfg.trend_interval),
        strided(cfg.period, cfg.period_interval),
        strided(cfg.closeness, cfg.closeness_interval),
    )


def required_history(cfg: TemporalConfig) -> int:
    """Minimum number of past steps needed to form one input window."""
    if cfg.block_mode:
        return cfg.window
    need = 0
    for length, interval in (
        (cfg.trend, cfg.trend_interval),
        (cfg.period, cfg.period_interval),
        (cfg.closeness, cfg.closeness_interval),
    ):
        if length > 0:
            need = max(need, length * interval + 1)
    return need


def slice_dependencies(
    history: Array, cfg: TemporalConfig
) -> tuple[Array, Array, Array]:
    """Slice a history stack into (trend, period, closeness) sub-sequences.

    ``history`` is ``(T_avail, H, W, d)``; the anchor is T_avail, i.e. the
    returned sequences feed a prediction of the step right after the stack.
    """
    history = np.asarray(history, dtype=np.float64)
    n = history.shape[0]
    need = required_history(cfg)
    if n < need:
        earliest = n - need
        raise DataError(
            f"insufficient history: {n} steps available but the window reaches "
            f"back to index {earliest} (needs at least {need} steps)"
        )
    trend, period, closeness = branch_offsets(cfg)
    return history[n + trend], history[n + period], history[n + closeness]


# ---------------------------------------------------------------------------
# min-max normalisation


@dataclass
class NormStats:
    """Per-channel min/max of the training split."""

    lo: Array  # (d,)
    hi: Array  # (d,)


def fit_norm(maps: Array) -> NormStats:
    """Per-channel bounds over a ``(..., d)`` stack; fit on the training split only."""
    maps = np.asarray(maps, dtype=np.float64)
    axes = tuple(range(maps.ndim - 1))
    return NormStats(lo=maps.min(axis=axes), hi=maps.max(axis=axes))


def apply_norm(maps: Array, stats: NormStats) -> Array:
    """Min-max scale to [0, 1]; a constant channel maps to 0."""
    span = stats.hi - stats.lo
    safe = np.where(span > 0, span, 1.0)
    out = (maps - stats.lo) / safe
    return np.where(span > 0, out, 0.0)


def invert_norm(maps: Array, stats: NormStats) -> Array:
    """Undo :func:`apply_norm`; restores a constant channel exactly."""
    return maps * (stats.hi - stats.lo) + stats.lo
