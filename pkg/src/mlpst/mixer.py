"""The MLPST model: patch embedding, spatial/temporal mixing, fusion, head.

Forward passes operate on a whole batch at once; every op has a hand-paired
backward. A mixer layer applies a token-mixing MLP block across the token
axis (via transpose) and then a channel-mixing MLP block across the channel
axis; both blocks carry their own LayerNorm and a residual add, so zeroing
the blocks' output weights makes the layer an exact identity.

Parameter sharing: a mixer stack holds either one layer applied
``n_layers`` times (shared, the default) or ``n_layers`` distinct layers.
The three temporal branches can additionally share parameters between
branches of equal sequence length.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError
from .griddata import TemporalConfig, n_patches, patchify, slice_dependencies
from .tensor import (
    Array,
    LayerNormParams,
    MlpBlockCache,
    MlpBlockParams,
    _flat2,
    layernorm_init,
    matmul,
    mlp_block_bwd,
    mlp_block_fwd,
    mlp_block_init,
    init_params,
)
from . import tree

VARIANTS = ("full", "mlp_at", "mlp_sa")


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class MixerLayerParams:
    """One token-mixing + channel-mixing layer.

    ``ln_tokens`` normalises along the token axis (it is applied to the
    transposed input, whose rows run across tokens); ``ln_channels``
    normalises along the channel axis.
    """

    token_mlp: MlpBlockParams
    channel_mlp: MlpBlockParams
    ln_tokens: LayerNormParams
    ln_channels: LayerNormParams


@dataclass
class SpatialMixerParams:
    patch: int
    fc_w: Array  # (P*P*d, C_S) per-patch fully connected
    fc_b: Array  # (C_S,)
    layers: list[MixerLayerParams] = field(default_factory=list)
    n_layers: int = 0


@dataclass
class TemporalMixerParams:
    seq_len: int
    layers: list[MixerLayerParams] = field(default_factory=list)
    n_layers: int = 0


@dataclass
class ModelParams:
    """Full trainable parameter set plus the grid geometry it was built for."""

    grid_h: int
    grid_w: int
    grid_d: int
    spatial: SpatialMixerParams
    temporal_trend: TemporalMixerParams | None
    temporal_period: TemporalMixerParams | None
    temporal_closeness: TemporalMixerParams | None
    w_trend: Array      # (d_T,) fusion weights
    w_period: Array
    w_closeness: Array
    w_out: Array        # (d_T, out_dim) output head
    b_out: Array        # (out_dim,)
    variant: str = "full"
    predict_channel: int | None = None

    @property
    def d_t(self) -> int:
        return n_patches(self.grid_h, self.grid_w, self.spatial.patch) * self.spatial.fc_w.shape[1]

    @property
    def out_channels(self) -> int:
        return 1 if self.predict_channel is not None else self.grid_d


@dataclass
class ModelConfig:
    """Hyperparameters defining a model for a given grid geometry."""

    temporal: TemporalConfig = field(default_factory=TemporalConfig)
    patch: int = 2
    channels_spatial: int = 20   # C_S: token width after the per-patch FC
    channels_temporal: int = 20  # C_T: hidden units of temporal channel-mixing MLPs
    expansion: int = 8           # hidden units of the remaining mixing MLPs
    n_layers: int = 8
    variant: str = "full"
    share_layers: bool = True
    share_branches: bool = False
    predict_channel: int | None = None

    def validate(self) -> None:
        self.temporal.validate()
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("patch", "channels_spatial", "channels_temporal", "expansion"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_layers < 0:
            raise ConfigError("n_layers must be >= 0")


def mixer_layer_init(
    n_tokens: int, n_channels: int, token_hidden: int, channel_hidden: int, rng
) -> MixerLayerParams:
    return MixerLayerParams(
        token_mlp=mlp_block_init(n_tokens, token_hidden, rng),
        channel_mlp=mlp_block_init(n_channels, channel_hidden, rng),
        ln_tokens=layernorm_init(n_tokens),
        ln_channels=layernorm_init(n_channels),
    )


def _init_stack(
    n_tokens: int,
    n_channels: int,
    token_hidden: int,
    channel_hidden: int,
    n_layers: int,
    shared: bool,
    rng,
) -> list[MixerLayerParams]:
    count = 1 if shared and n_layers > 0 else n_layers
    return [
        mixer_layer_init(n_tokens, n_channels, token_hidden, channel_hidden, rng)
        for _ in range(count)
    ]


def build_params(cfg: ModelConfig, h: int, w: int, d: int, seed) -> ModelParams:
    """Seeded construction of a full parameter set.

    Draw order is fixed (spatial FC, spatial stack, trend, period,
    closeness, output head) so identical seeds give identical parameters.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    n_p = n_patches(h, w, cfg.patch)
    patch_dim = cfg.patch * cfg.patch * d
    c_s = cfg.channels_spatial
    d_t = n_p * c_s

    spatial_layers = (
        []
        if cfg.variant == "mlp_at"
        else _init_stack(n_p, c_s, cfg.expansion, cfg.expansion, cfg.n_layers, cfg.share_layers, rng)
    )
    spatial = SpatialMixerParams(
        patch=cfg.patch,
        fc_w=init_params((patch_dim, c_s), rng),
        fc_b=np.zeros(c_s),
        layers=spatial_layers,
        n_layers=0 if cfg.variant == "mlp_at" else cfg.n_layers,
    )

    temporal: dict[str, TemporalMixerParams | None] = {}
    by_length: dict[int, TemporalMixerParams] = {}
    t_cfg = cfg.temporal
    for name, length in (
        ("trend", t_cfg.trend),
        ("period", t_cfg.period),
        ("closeness", t_cfg.closeness),
    ):
        if length == 0 or cfg.variant == "mlp_sa":
            temporal[name] = None
            continue
        if cfg.share_branches and length in by_length:
            temporal[name] = by_length[length]
            continue
        params = TemporalMixerParams(
            seq_len=length,
            layers=_init_stack(
                length, d_t, cfg.expansion, cfg.channels_temporal,
                cfg.n_layers, cfg.share_layers, rng,
            ),
            n_layers=cfg.n_layers,
        )
        by_length[length] = params
        temporal[name] = params

    out_channels = 1 if cfg.predict_channel is not None else d
    out_dim = h * w * out_channels
    return ModelParams(
        grid_h=h,
        grid_w=w,
        grid_d=d,
        spatial=spatial,
        temporal_trend=temporal["trend"],
        temporal_period=temporal["period"],
        temporal_closeness=temporal["closeness"],
        w_trend=np.ones(d_t),
        w_period=np.ones(d_t),
        w_closeness=np.ones(d_t),
        w_out=init_params((d_t, out_dim), rng),
        b_out=np.zeros(out_dim),
        variant=cfg.variant,
        predict_channel=cfg.predict_channel,
    )


# ---------------------------------------------------------------------------
# mixer layer


class MixerLayerCache(NamedTuple):
    token: MlpBlockCache
    channel: MlpBlockCache


def mixer_layer_fwd(
    v: Array, p: MixerLayerParams
) -> tuple[Array, MixerLayerCache]:
    """Token mixing across the token axis, then channel mixing; shape preserved."""
    vt = np.swapaxes(v, -2, -1)
    u, token_cache = mlp_block_fwd(vt, p.token_mlp, p.ln_tokens)
    ut = np.swapaxes(u, -2, -1)
    y, channel_cache = mlp_block_fwd(ut, p.channel_mlp, p.ln_channels)
    return y, MixerLayerCache(token=token_cache, channel=channel_cache)


def mixer_layer_bwd(
    grad_y: Array, cache: MixerLayerCache, p: MixerLayerParams, grads: MixerLayerParams
) -> Array:
    """Accumulate parameter gradients into ``grads`` and return dv."""
    dut, g_ch, g_lnc = mlp_block_bwd(grad_y, cache.channel, p.channel_mlp, p.ln_channels)
    du = np.swapaxes(dut, -2, -1)
    dvt, g_tok, g_lnt = mlp_block_bwd(du, cache.token, p.token_mlp, p.ln_tokens)
    _acc_mlp(grads.channel_mlp, g_ch)
    _acc_ln(grads.ln_channels, g_lnc)
    _acc_mlp(grads.token_mlp, g_tok)
    _acc_ln(grads.ln_tokens, g_lnt)
    return np.swapaxes(dvt, -2, -1)


def _acc_mlp(acc: MlpBlockParams, g: MlpBlockParams) -> None:
    acc.w_in += g.w_in
    acc.b_in += g.b_in
    acc.w_out += g.w_out
    acc.b_out += g.b_out


def _acc_ln(acc: LayerNormParams, g: LayerNormParams) -> None:
    acc.gamma += g.gamma
    acc.beta += g.beta


def _stack_layer(layers: list[MixerLayerParams], i: int) -> MixerLayerParams:
    return layers[i] if len(layers) > 1 else layers[0]


def mixer_stack_fwd(
    v: Array, layers: list[MixerLayerParams], n_layers: int
) -> tuple[Array, list[MixerLayerCache]]:
    caches = []
    for i in range(n_layers):
        v, c = mixer_layer_fwd(v, _stack_layer(layers, i))
        caches.append(c)
    return v, caches


def mixer_stack_bwd(
    grad: Array,
    caches: list[MixerLayerCache],
    layers: list[MixerLayerParams],
    n_layers: int,
    grad_layers: list[MixerLayerParams],
) -> Array:
    for i in reversed(range(n_layers)):
        grad = mixer_layer_bwd(grad, caches[i], _stack_layer(layers, i), _stack_layer(grad_layers, i))
    return grad


# ---------------------------------------------------------------------------
# spatial mixer


class SpatialCache(NamedTuple):
    tokens: Array  # (..., N_P, P*P*d)
    v_shape: tuple
    layer_caches: list[MixerLayerCache]


def spatial_mixer_fwd(
    x: Array, p: SpatialMixerParams
) -> tuple[Array, SpatialCache]:
    """Map grid maps ``(..., H, W, d)`` to embeddings ``(..., N_P * C_S)``."""
    tokens = patchify(x, p.patch)
    if tokens.shape[-1] != p.fc_w.shape[0]:
        raise ConfigError(
            f"patch token width {tokens.shape[-1]} does not match per-patch FC "
            f"input {p.fc_w.shape[0]}"
        )
    v = matmul(tokens, p.fc_w) + p.fc_b
    y, caches = mixer_stack_fwd(v, p.layers, p.n_layers)
    lead = y.shape[:-2]
    e = y.reshape(*lead, -1)
    return e, SpatialCache(tokens=tokens, v_shape=y.shape, layer_caches=caches)


def spatial_mixer_bwd(
    grad_e: Array, cache: SpatialCache, p: SpatialMixerParams, grads: SpatialMixerParams
) -> None:
    """Accumulate spatial parameter gradients; input gradients are not needed."""
    gy = grad_e.reshape(cache.v_shape)
    gv = mixer_stack_bwd(gy, cache.layer_caches, p.layers, p.n_layers, grads.layers)
    grads.fc_w += matmul(_flat2(cache.tokens).T, _flat2(gv))
    grads.fc_b += _flat2(gv).sum(axis=0)


# ---------------------------------------------------------------------------
# temporal mixer


class TemporalCache(NamedTuple):
    layer_caches: list[MixerLayerCache]


def temporal_mixer_fwd(
    e_seq: Array, p: TemporalMixerParams
) -> tuple[Array, TemporalCache]:
    """Mix a branch sequence ``(..., len, d_T)``; shape preserved."""
    if e_seq.shape[-2] != p.seq_len:
        raise ConfigError(
            f"temporal sequence length {e_seq.shape[-2]} does not match the "
            f"configured length {p.seq_len}"
        )
    y, caches = mixer_stack_fwd(e_seq, p.layers, p.n_layers)
    return y, TemporalCache(layer_caches=caches)


def temporal_mixer_bwd(
    grad: Array, cache: TemporalCache, p: TemporalMixerParams, grads: TemporalMixerParams
) -> Array:
    return mixer_stack_bwd(grad, cache.layer_caches, p.layers, p.n_layers, grads.layers)


# ---------------------------------------------------------------------------
# fusion and output head


def fuse(
    e_trend: Array | None,
    e_period: Array | None,
    e_closeness: Array | None,
    w_trend: Array,
    w_period: Array,
    w_closeness: Array,
) -> Array:
    """Elementwise-weighted sum of the branches' last-step embeddings.

    Branch inputs are ``(..., len, d_T)``; a missing or zero-length branch
    contributes zero.
    """
    total = None
    for e_seq, weight in ((e_trend, w_trend), (e_period, w_period), (e_closeness, w_closeness)):
        if e_seq is None or e_seq.shape[-2] == 0:
            continue
        term = weight * e_seq[..., -1, :]
        total = term if total is None else total + term
    if total is None:
        raise ConfigError("fusion needs at least one nonempty branch")
    return total


def output_head(e_hat: Array, w_out: Array, b_out: Array, h: int, w: int, channels: int) -> Array:
    """Affine map from the fused embedding to an ``(H, W, channels)`` grid."""
    if e_hat.shape[-1] != w_out.shape[0]:
        raise ConfigError(
            f"fused embedding length {e_hat.shape[-1]} does not match output "
            f"head input {w_out.shape[0]}"
        )
    flat = matmul(e_hat, w_out) + b_out
    return flat.reshape(*e_hat.shape[:-1], h, w, channels)


# ---------------------------------------------------------------------------
# full model


class ModelCache(NamedTuple):
    lengths: tuple[int, int, int]
    spatial: SpatialCache
    temporal: tuple[TemporalCache | None, TemporalCache | None, TemporalCache | None]
    branch_last: tuple[Array | None, Array | None, Array | None]
    e_hat: Array
    batch: int


def _branch_params(params: ModelParams):
    return (params.temporal_trend, params.temporal_period, params.temporal_closeness)


def _fusion_weights(params: ModelParams):
    return (params.w_trend, params.w_period, params.w_closeness)


def batch_forward(
    branch_maps: tuple[Array, Array, Array], params: ModelParams
) -> tuple[Array, ModelCache]:
    """Forward a batch of pre-sliced windows.

    ``branch_maps`` holds the trend/period/closeness map stacks, each of
    shape ``(B, len, H, W, d)`` (len may be 0). Returns predictions
    ``(B, H, W, out_channels)`` in the model's (normalised) output space.
    """
    lengths = tuple(m.shape[1] for m in branch_maps)
    batch = branch_maps[0].shape[0]
    for m in branch_maps:
        if m.shape[0] != batch:
            raise ConfigError("branch batches must agree")
        if m.shape[2:] != (params.grid_h, params.grid_w, params.grid_d):
            raise ConfigError(
                f"grid maps of shape {m.shape[2:]} do not match the model grid "
                f"({params.grid_h}, {params.grid_w}, {params.grid_d})"
            )

    stacked = np.concatenate(branch_maps, axis=1)  # (B, L, H, W, d)
    e_all, spatial_cache = spatial_mixer_fwd(stacked, params.spatial)

    t, p, _ = lengths
    branch_seqs = (e_all[:, :t], e_all[:, t : t + p], e_all[:, t + p :])
    mixed: list[Array | None] = []
    temporal_caches: list[TemporalCache | None] = []
    for e_seq, bp in zip(branch_seqs, _branch_params(params)):
        if e_seq.shape[1] == 0:
            mixed.append(None)
            temporal_caches.append(None)
        elif bp is None:  # mlp_sa: embeddings pass through unchanged
            mixed.append(e_seq)
            temporal_caches.append(None)
        else:
            y, c = temporal_mixer_fwd(e_seq, bp)
            mixed.append(y)
            temporal_caches.append(c)

    branch_last = tuple(None if m is None else m[:, -1, :] for m in mixed)
    e_hat = fuse(mixed[0], mixed[1], mixed[2], *_fusion_weights(params))
    pred = output_head(
        e_hat, params.w_out, params.b_out,
        params.grid_h, params.grid_w, params.out_channels,
    )
    cache = ModelCache(
        lengths=lengths,
        spatial=spatial_cache,
        temporal=tuple(temporal_caches),
        branch_last=branch_last,
        e_hat=e_hat,
        batch=batch,
    )
    return pred, cache


def batch_backward(cache: ModelCache, grad_pred: Array, params: ModelParams) -> ModelParams:
    """Exact reverse-mode gradients for every parameter; nothing else.

    Returns a gradient tree congruent with ``params`` (same sharing
    topology); repeated calls on one cache give identical results.
    """
    grads: ModelParams = tree.tree_zeros_like(params)
    g_flat = grad_pred.reshape(cache.batch, -1)

    grads.b_out += g_flat.sum(axis=0)
    grads.w_out += matmul(cache.e_hat.T, g_flat)
    g_ehat = matmul(g_flat, params.w_out.T)

    d_t = params.w_out.shape[0]
    grad_weights = (grads.w_trend, grads.w_period, grads.w_closeness)
    branch_grads = []
    for i, (length, bp, gbp, tcache) in enumerate(
        zip(cache.lengths, _branch_params(params), _branch_params(grads), cache.temporal)
    ):
        if length == 0:
            branch_grads.append(np.zeros((cache.batch, 0, d_t)))
            continue
        last = cache.branch_last[i]
        gw = grad_weights[i]
        gw += (g_ehat * last).sum(axis=0)
        g_seq = np.zeros((cache.batch, length, d_t))
        g_seq[:, -1, :] = g_ehat * _fusion_weights(params)[i]
        if bp is not None:
            g_seq = temporal_mixer_bwd(g_seq, tcache, bp, gbp)
        branch_grads.append(g_seq)

    g_e_all = np.concatenate(branch_grads, axis=1)
    spatial_mixer_bwd(g_e_all, cache.spatial, params.spatial, grads.spatial)
    return grads


def model_forward(
    history: Array, cfg: TemporalConfig, params: ModelParams
) -> tuple[Array, ModelCache]:
    """Predict the next grid map from a single history stack ``(T, H, W, d)``."""
    trend, period, closeness = slice_dependencies(history, cfg)
    branch_maps = tuple(m[np.newaxis] for m in (trend, period, closeness))
    pred, cache = batch_forward(branch_maps, params)
    return pred[0], cache


def model_backward(cache: ModelCache, grad_prediction: Array, params: ModelParams) -> ModelParams:
    """Backward pass matching :func:`model_forward` (single sample)."""
    return batch_backward(cache, grad_prediction[np.newaxis], params)


# ---------------------------------------------------------------------------
# parameter accounting

_GROUP_PREFIXES = (
    ("spatial.fc", "per_patch_fc"),
    ("spatial.layers", "spatial_mixer"),
    ("temporal_trend", "temporal_trend"),
    ("temporal_period", "temporal_period"),
    ("temporal_closeness", "temporal_closeness"),
    ("w_trend", "fusion"),
    ("w_period", "fusion"),
    ("w_closeness", "fusion"),
    ("w_out", "output_head"),
    ("b_out", "output_head"),
)


def param_count(params: ModelParams) -> dict[str, int]:
    """Trainable parameter count per group; shared arrays counted once.

    A parameter array shared between groups (branch sharing) is attributed
    to the first group that reaches it.
    """
    counts: dict[str, int] = {}
    for path, arr in tree.unique_leaves(params):
        group = next(
            (g for prefix, g in _GROUP_PREFIXES if path.startswith(prefix)), "other"
        )
        counts[group] = counts.get(group, 0) + arr.size
    return counts


def param_total(params: ModelParams) -> int:
    return sum(param_count(params).values())
