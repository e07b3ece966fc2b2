"""Dense 64-bit numerics with hand-paired forward/backward passes.

Every primitive the model needs lives here: GELU, LayerNorm, the residual
two-layer MLP block, seeded initialisation, and a matmul wrapper that can
count scalar multiplies for complexity measurements. There is no autodiff
tape; each ``*_fwd`` returns a cache that its ``*_bwd`` partner consumes.

Conventions:

- arrays are float64, shape ``(..., rows, cols)``; leading axes are batch
  axes and every op treats the last axis as the feature axis,
- parameter matrices are ``(in_dim, out_dim)`` so a row vector maps through
  ``row @ w + b``,
- backward passes never mutate their cache, so one cache supports repeated
  backward calls.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import erf

from .errors import ConfigError

Array = np.ndarray

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# instrumented matmul


class MultiplyCounter:
    """Tally of scalar multiplies performed by :func:`matmul`."""

    __slots__ = ("count",)

    def __init__(self) -> None:
        self.count = 0


_active_counter: MultiplyCounter | None = None


@contextmanager
def count_multiplies():
    """Count matmul scalar multiplies executed inside the ``with`` block.

    Counting is process-global; only the innermost active counter tallies.
    """
    global _active_counter
    previous = _active_counter
    counter = MultiplyCounter()
    _active_counter = counter
    try:
        yield counter
    finally:
        _active_counter = previous


def matmul(a: Array, b: Array) -> Array:
    """``a @ b`` where ``b`` is 2-D; counts ``batch * n * k * m`` multiplies."""
    if _active_counter is not None:
        n, k = a.shape[-2], a.shape[-1]
        m = b.shape[-1]
        batch = 1
        for s in a.shape[:-2]:
            batch *= s
        _active_counter.count += batch * n * k * m
    return a @ b


def _flat2(x: Array) -> Array:
    """Collapse all leading axes: ``(..., n, m) -> (prod*n, m)``."""
    return x.reshape(-1, x.shape[-1])


# ---------------------------------------------------------------------------
# GELU


def gelu(x):
    """Exact GELU ``x * Phi(x)`` using the erf form of the normal CDF."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x):
    """Derivative ``Phi(x) + x * phi(x)`` of the exact GELU."""
    x = np.asarray(x, dtype=np.float64)
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return cdf + x * pdf


# ---------------------------------------------------------------------------
# LayerNorm


@dataclass
class LayerNormParams:
    """Affine LayerNorm parameters over a fixed feature dimension."""

    gamma: Array
    beta: Array
    eps: float = 1e-5


def layernorm_init(dim: int) -> LayerNormParams:
    return LayerNormParams(gamma=np.ones(dim), beta=np.zeros(dim))


class LayerNormCache(NamedTuple):
    xhat: Array
    inv_std: Array


def layernorm_fwd(x: Array, p: LayerNormParams) -> tuple[Array, LayerNormCache]:
    """Normalise each row of the last axis to zero mean / unit variance.

    Uses the population (biased) variance, eps-stabilised, then applies the
    gamma/beta affine map.
    """
    dim = p.gamma.shape[0]
    if x.shape[-1] != dim:
        raise ConfigError(
            f"layernorm dimension mismatch: input has {x.shape[-1]} features, "
            f"params expect {dim}"
        )
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + p.eps)
    xhat = (x - mean) * inv_std
    y = p.gamma * xhat + p.beta
    return y, LayerNormCache(xhat=xhat, inv_std=inv_std)


def layernorm_bwd(
    grad_y: Array, cache: LayerNormCache, p: LayerNormParams
) -> tuple[Array, Array, Array]:
    """Map an upstream gradient to ``(dx, dgamma, dbeta)``."""
    xhat, inv_std = cache
    lead = tuple(range(grad_y.ndim - 1))
    dgamma = (grad_y * xhat).sum(axis=lead)
    dbeta = grad_y.sum(axis=lead)
    dxhat = grad_y * p.gamma
    dx = (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    ) * inv_std
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# residual MLP block


@dataclass
class MlpBlockParams:
    """Two-layer MLP weights; in/out dims match so the residual add works."""

    w_in: Array   # (in_dim, hidden)
    b_in: Array   # (hidden,)
    w_out: Array  # (hidden, out_dim)
    b_out: Array  # (out_dim,)


def mlp_block_init(dim: int, hidden: int, rng) -> MlpBlockParams:
    """Uniform fan-in weights, zero biases, for a ``dim -> hidden -> dim`` block."""
    return MlpBlockParams(
        w_in=init_params((dim, hidden), rng),
        b_in=np.zeros(hidden),
        w_out=init_params((hidden, dim), rng),
        b_out=np.zeros(dim),
    )


class MlpBlockCache(NamedTuple):
    xn: Array         # LayerNorm output
    h: Array          # pre-activation hidden
    a: Array          # post-GELU hidden
    ln: LayerNormCache


def mlp_block_fwd(
    x: Array, p: MlpBlockParams, ln: LayerNormParams
) -> tuple[Array, MlpBlockCache]:
    """``y = x + gelu(layernorm(x) @ w_in + b_in) @ w_out + b_out`` row-wise."""
    in_dim, hidden = p.w_in.shape
    if x.shape[-1] != in_dim:
        raise ConfigError(
            f"mlp block dimension mismatch: input has {x.shape[-1]} features, "
            f"w_in expects {in_dim}"
        )
    if p.w_out.shape != (hidden, in_dim):
        raise ConfigError(
            f"mlp block w_out shape {p.w_out.shape} does not invert "
            f"w_in shape {p.w_in.shape}"
        )
    xn, ln_cache = layernorm_fwd(x, ln)
    h = matmul(xn, p.w_in) + p.b_in
    a = gelu(h)
    y = x + matmul(a, p.w_out) + p.b_out
    return y, MlpBlockCache(xn=xn, h=h, a=a, ln=ln_cache)


def mlp_block_bwd(
    grad_y: Array, cache: MlpBlockCache, p: MlpBlockParams, ln: LayerNormParams
) -> tuple[Array, MlpBlockParams, LayerNormParams]:
    """Return ``(dx, block grads, layernorm grads)`` for an upstream gradient.

    Gradient containers reuse the parameter dataclasses (same shapes).
    """
    da = matmul(grad_y, p.w_out.T)
    dw_out = matmul(_flat2(cache.a).T, _flat2(grad_y))
    db_out = _flat2(grad_y).sum(axis=0)
    dh = da * gelu_grad(cache.h)
    dxn = matmul(dh, p.w_in.T)
    dw_in = matmul(_flat2(cache.xn).T, _flat2(dh))
    db_in = _flat2(dh).sum(axis=0)
    dx_ln, dgamma, dbeta = layernorm_bwd(dxn, cache.ln, ln)
    dx = grad_y + dx_ln
    grads = MlpBlockParams(w_in=dw_in, b_in=db_in, w_out=dw_out, b_out=db_out)
    ln_grads = LayerNormParams(gamma=dgamma, beta=dbeta, eps=ln.eps)
    return dx, grads, ln_grads


# ---------------------------------------------------------------------------
# initialisation


def init_params(shape, rng, scheme: str = "uniform-fanin") -> Array:
    """Seeded parameter initialisation.

    ``rng`` may be an integer seed or a ``numpy.random.Generator``.
    ``uniform-fanin`` draws from U(-1/sqrt(fan_in), +1/sqrt(fan_in)) with
    fan_in the first dimension of ``shape``; ``zeros`` returns zeros.
    """
    if scheme == "zeros":
        return np.zeros(shape)
    if scheme == "uniform-fanin":
        gen = np.random.default_rng(rng)
        shape = tuple(np.atleast_1d(shape))
        bound = 1.0 / math.sqrt(shape[0])
        return gen.uniform(-bound, bound, size=shape)
    raise ConfigError(f"unknown init scheme {scheme!r}")
