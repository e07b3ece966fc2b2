"""Operator-facing run configuration: a flat key=value file.

Lines are ``key = value``; ``#`` starts a comment; blank lines are ignored.
Unknown keys and unconvertible values are configuration errors. The same
text format is echoed into checkpoints for provenance, so
``parse_config_text(cfg.to_text())`` round-trips.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError
from .griddata import TemporalConfig
from .mixer import ModelConfig, VARIANTS
from .training import LossConfig, TrainConfig


@dataclass
class RunConfig:
    # grid geometry; None means "take from the dataset"
    h: int | None = None
    w: int | None = None
    d: int | None = None
    # model
    patch: int = 2
    channels_spatial: int = 20
    channels_temporal: int = 20
    expansion: int = 8
    layers: int = 8
    variant: str = "full"
    share_layers: bool = True
    share_branches: bool = False
    predict_channel: int | None = None
    # temporal window
    trend: int = 2
    period: int = 2
    closeness: int = 8
    trend_interval: int = 168
    period_interval: int = 24
    closeness_interval: int = 1
    window: int | None = None
    block_mode: bool = False
    enforce_interval_order: bool = True
    # loss
    q: int = 2
    combine_loss: bool = False
    # training
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0
    min_history: int | None = None

    # -- conversions ---------------------------------------------------

    def temporal_config(self) -> TemporalConfig:
        return TemporalConfig(
            trend=self.trend,
            period=self.period,
            closeness=self.closeness,
            trend_interval=self.trend_interval,
            period_interval=self.period_interval,
            closeness_interval=self.closeness_interval,
            block_mode=self.block_mode,
            enforce_interval_order=self.enforce_interval_order,
        )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            temporal=self.temporal_config(),
            patch=self.patch,
            channels_spatial=self.channels_spatial,
            channels_temporal=self.channels_temporal,
            expansion=self.expansion,
            n_layers=self.layers,
            variant=self.variant,
            share_layers=self.share_layers,
            share_branches=self.share_branches,
            predict_channel=self.predict_channel,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            split=self.split,
            seed=self.seed,
            lr=self.lr,
            min_history=self.min_history,
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(q=self.q, combine=self.combine_loss)

    # -- validation ----------------------------------------------------

    def validate(self) -> None:
        if self.q not in (1, 2):
            raise ConfigError(f"q must be 1 or 2, got {self.q}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.window is not None and self.window != self.trend + self.period + self.closeness:
            raise ConfigError(
                f"window={self.window} violates trend+period+closeness=="
                f"{self.trend + self.period + self.closeness}"
            )
        self.temporal_config().validate()
        self.model_config().validate()
        self.train_config().validate()
        for name in ("h", "w", "d"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("h", "w"):
            value = getattr(self, name)
            if value is not None and value % self.patch != 0:
                raise ConfigError(f"patch={self.patch} must divide {name}={value}")
        if self.predict_channel is not None:
            if self.predict_channel < 0 or (self.d is not None and self.predict_channel >= self.d):
                raise ConfigError(
                    f"predict_channel={self.predict_channel} is outside the feature channels"
                )

    def resolve_grid(self, h: int, w: int, d: int) -> "RunConfig":
        """Fill grid geometry from a dataset, rejecting explicit mismatches."""
        for name, value in (("h", h), ("w", w), ("d", d)):
            configured = getattr(self, name)
            if configured is not None and configured != value:
                raise ConfigError(
                    f"config {name}={configured} does not match the dataset ({value})"
                )
        resolved = dataclasses.replace(self, h=h, w=w, d=d)
        resolved.validate()
        return resolved

    # -- text format ---------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is None:
                text = ""
            elif isinstance(value, bool):
                text = str(value).lower()
            elif isinstance(value, tuple):
                text = ",".join(repr(v) for v in value)
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{f.name}={text}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _convert(name: str, text: str):
    text = text.strip()
    if name in ("h", "w", "d", "predict_channel", "window", "min_history"):
        return None if text == "" else int(text)
    if name in ("variant",):
        return text
    if name in ("share_layers", "share_branches", "block_mode",
                "enforce_interval_order", "combine_loss"):
        lowered = text.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if name in ("lr",):
        return float(text)
    if name == "split":
        parts = tuple(float(p) for p in text.split(","))
        if len(parts) != 3:
            raise ValueError("split needs three comma-separated ratios")
        return parts
    return int(text)


def parse_config_text(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"config line {lineno} is not key=value: {raw!r}")
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        try:
            setattr(cfg, key, _convert(key, value))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r} (line {lineno}): {exc}") from exc
    return cfg


def parse_config_file(path) -> RunConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())
