"""Network blocks: expanded SSM block, tied bidirectional wrapper, stems, pooling, head.

Sequence tensors are channel-last, (batch, L, d_model). Raw windows are
(batch, C, L) as they come out of the data pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ShapeError
from .numerics import Tensor, mac_scope
from .ssm_core import SsmKernelParams, init_kernel_params, selective_params, selective_scan, state_matrix

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
LN_EPS = 1e-5


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = math.sqrt(1.0 / fan_in)
    return nx.parameter(rng.uniform(-bound, bound, size=shape))


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class SsmBlockParams:
    in_proj: Tensor  # (2*d_inner, d_model): first half SSM path, second half gate
    conv_w: Tensor  # (d_inner, k_conv), depthwise
    conv_b: Tensor  # (d_inner,)
    kernel: SsmKernelParams
    out_proj: Tensor  # (d_model, d_inner)
    norm_g: Tensor  # (d_model,)
    norm_b: Tensor  # (d_model,)

    @property
    def d_inner(self) -> int:
        return self.conv_w.shape[0]

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + "in_proj": self.in_proj, prefix + "conv_w": self.conv_w,
               prefix + "conv_b": self.conv_b}
        out.update(self.kernel.named(prefix + "kernel."))
        out.update({prefix + "out_proj": self.out_proj, prefix + "norm_g": self.norm_g,
                    prefix + "norm_b": self.norm_b})
        return out


def init_ssm_block(d_model: int, d_state: int, expand: int, k_conv: int, dt_rank: int,
                   rng: np.random.Generator) -> SsmBlockParams:
    d_inner = expand * d_model
    return SsmBlockParams(
        in_proj=_uniform(rng, (2 * d_inner, d_model), d_model),
        conv_w=_uniform(rng, (d_inner, k_conv), k_conv),
        conv_b=_uniform(rng, (d_inner,), k_conv),
        kernel=init_kernel_params(d_inner, d_state, dt_rank, rng),
        out_proj=_uniform(rng, (d_model, d_inner), d_inner),
        norm_g=nx.parameter(np.ones(d_model)),
        norm_b=nx.parameter(np.zeros(d_model)),
    )


@dataclass
class StemParams:
    conv_w: Tensor  # (d_model, C_in, k); C_in = 1 for the channel-independent stem
    conv_b: Tensor
    bn_g: Tensor
    bn_b: Tensor
    running_mean: np.ndarray = field(default=None)
    running_var: np.ndarray = field(default=None)

    def __post_init__(self):
        d = self.conv_w.shape[0]
        if self.running_mean is None:
            self.running_mean = np.zeros(d)
        if self.running_var is None:
            self.running_var = np.ones(d)

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + "conv_w": self.conv_w, prefix + "conv_b": self.conv_b,
                prefix + "bn_g": self.bn_g, prefix + "bn_b": self.bn_b}

    def buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + "running_mean": self.running_mean, prefix + "running_var": self.running_var}


def init_stem(d_model: int, in_channels: int, k_stem: int, rng: np.random.Generator) -> StemParams:
    if k_stem % 2 == 0:
        raise ConfigError(f"stem kernel must be odd for same padding, got {k_stem}")
    fan_in = in_channels * k_stem
    return StemParams(
        conv_w=_uniform(rng, (d_model, in_channels, k_stem), fan_in),
        conv_b=_uniform(rng, (d_model,), fan_in),
        bn_g=nx.parameter(np.ones(d_model)),
        bn_b=nx.parameter(np.zeros(d_model)),
    )


@dataclass
class PoolingParams:
    W_g: Tensor  # (d_attn, d_model)
    b_g: Tensor  # (d_attn,)
    v: Tensor  # (d_attn,)

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + "W_g": self.W_g, prefix + "b_g": self.b_g, prefix + "v": self.v}


def init_pooling(d_model: int, d_attn: int, rng: np.random.Generator) -> PoolingParams:
    return PoolingParams(W_g=_uniform(rng, (d_attn, d_model), d_model),
                         b_g=_uniform(rng, (d_attn,), d_model),
                         v=_uniform(rng, (d_attn,), d_attn))


# ---------------------------------------------------------------------------
# SSM blocks


def ssm_block_forward(Z: Tensor, p: SsmBlockParams, direction: str = "forward",
                      scan_method: str = "fused") -> Tensor:
    """One pass of the gated selective-SSM path (no residual, no norm).

    ``direction="backward"`` reverses time before and after, with the same
    parameters.
    """
    if direction not in ("forward", "backward"):
        raise ConfigError(f"direction must be 'forward' or 'backward', got {direction!r}")
    d_inner = p.d_inner
    if Z.shape[-1] != p.in_proj.shape[1]:
        raise ShapeError(f"ssm block: input {Z.shape} does not fit in_proj {p.in_proj.shape}")
    if direction == "backward":
        Z = nx.flip(Z, -2)
    with mac_scope("in_proj"):
        xz = nx.linear(Z, p.in_proj)
    u, gate = xz[..., :d_inner], xz[..., d_inner:]
    with mac_scope("dw_conv"):
        u = nx.silu(nx.depthwise_conv1d_causal(u, p.conv_w, p.conv_b))
    with mac_scope("selective_proj"):
        delta, Bm, Cm = selective_params(u, p.kernel)
    with mac_scope("scan"):
        y = selective_scan(u, delta, state_matrix(p.kernel), Bm, Cm, p.kernel.D, method=scan_method)
    with mac_scope("out_proj"):
        out = nx.linear(y * nx.silu(gate), p.out_proj)
    if direction == "backward":
        out = nx.flip(out, -2)
    return out


def bidir_block(Z: Tensor, p: SsmBlockParams, bidirectional: bool = True,
                scan_method: str = "fused") -> Tensor:
    """LN(Z + H_fwd + H_bwd) with tied parameters; LN(Z + H_fwd) when unidirectional."""
    h = Z + ssm_block_forward(Z, p, "forward", scan_method)
    if bidirectional:
        h = h + ssm_block_forward(Z, p, "backward", scan_method)
    return nx.layer_norm(h, p.norm_g, p.norm_b, LN_EPS)


# ---------------------------------------------------------------------------
# stems


def _stem(X: Tensor, p: StemParams, training: bool) -> Tensor:
    with mac_scope("stem"):
        z = nx.conv1d(X, p.conv_w, p.conv_b)
    z = nx.batch_norm_1d(z, p.bn_g, p.bn_b, p.running_mean, p.running_var, training,
                         BN_MOMENTUM, BN_EPS)
    return nx.silu(z).transpose(0, 2, 1)


def stem_ci(X: Tensor, p: StemParams, training: bool = False) -> Tensor:
    """Shared per-channel stem: (B, C, L) -> (B*C, L, d_model), channel-major within each sample."""
    if p.conv_w.shape[1] != 1:
        raise ConfigError(f"channel-independent stem needs a single input channel, got {p.conv_w.shape}")
    if X.ndim != 3:
        raise ShapeError(f"stem expects (B, C, L), got {X.shape}")
    nb, c, n = X.shape
    return _stem(X.reshape(nb * c, 1, n), p, training)


def stem_crossover(X: Tensor, p: StemParams, training: bool = False) -> Tensor:
    """Early-fusion stem: (B, C, L) -> (B, L, d_model)."""
    if X.ndim != 3:
        raise ShapeError(f"stem expects (B, C, L), got {X.shape}")
    if X.shape[1] != p.conv_w.shape[1]:
        raise ConfigError(f"stem built for {p.conv_w.shape[1]} channels, input has {X.shape[1]}")
    return _stem(X, p, training)


# ---------------------------------------------------------------------------
# pooling and head


def attention_weights(Z: Tensor, p: PoolingParams) -> Tensor:
    """Softmax over time of vᵀ tanh(W_g z_t + b_g); shape (..., L, 1)."""
    e = nx.tanh(nx.linear(Z, p.W_g, p.b_g))
    scores = nx.linear(e, p.v.reshape(1, -1))
    return nx.softmax(scores, axis=-2)


def attention_pool(Z: Tensor, p: PoolingParams) -> Tensor:
    with mac_scope("pool"):
        alpha = attention_weights(Z, p)
        c = nx.matmul(alpha.transpose(*range(alpha.ndim - 2), alpha.ndim - 1, alpha.ndim - 2), Z)
    return c.reshape(*Z.shape[:-2], Z.shape[-1])


def mean_pool(Z: Tensor) -> Tensor:
    return Z.mean(axis=-2)


def late_fuse(pooled: Tensor) -> Tensor:
    """Average per-channel vectors: (B, C, d) -> (B, d)."""
    return pooled.mean(axis=-2)


def classify(h: Tensor, W: Tensor, b: Tensor) -> Tensor:
    with mac_scope("head"):
        return nx.linear(h, W, b)
