"""Sparse directed graph learning for pedestrian interactions and motion tendency.

Two branches score pairwise influence with single-layer self-attention:
the spatial branch relates pedestrians within each observed time step,
the temporal branch relates time steps within each pedestrian (causally
masked so no past step attends to the future).  Scores pass through a
1x1 channel-fusion conv (spatial branch only), a cascade of asymmetric
row/column convolutions, a hard sparsity threshold on the sigmoid of the
resulting features, and a zero-preserving renormalization, yielding
asymmetric, row-normalized, genuinely sparse adjacency tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .errors import ConfigError

ZERO_SOFTMAX_EPS = 1e-12


@dataclass
class SparseAdjacency:
    """Learned adjacency: ``normalized`` drives the GCN, ``mask``/``raw`` aid inspection.

    ``mask`` is the thresholded keep-pattern with the forced diagonal;
    ``raw`` holds pre-normalization products.  Entries read as (i, j) =
    influence of node i on node j, so rows index influencers.
    """

    normalized: Tensor
    mask: np.ndarray
    raw: Tensor


def position_encoding_table(length: int, dim: int) -> np.ndarray:
    """Fixed sinusoidal table: sin on even feature indices, cos on odd."""
    if dim % 2:
        raise ConfigError(f"position encoding dim must be even, got {dim}")
    pos = np.arange(length)[:, None]
    freq = np.power(10000.0, -np.arange(0, dim, 2) / dim)[None, :]
    table = np.empty((length, dim))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table


def embed_nodes(nodes, w, b, encoding: np.ndarray | None = None) -> Tensor:
    """Linear 2 -> D lift of coordinates, optionally offset by a position table."""
    out = ad.matmul(ad.as_tensor(nodes), w) + b
    if encoding is not None:
        out = out + encoding
    return out


def attention_scores(embeddings: Tensor, w_q, b_q, w_k, b_k, mask: np.ndarray | None = None) -> Tensor:
    """Row-stochastic scaled dot-product scores over the second-to-last axis.

    Masked (False) positions get score exactly 0; rows renormalize over
    what remains.  Entry (i, j) is the influence of node i on node j.
    """
    q = ad.matmul(embeddings, w_q) + b_q
    k = ad.matmul(embeddings, w_k) + b_k
    scale = float(np.sqrt(q.shape[-1]))
    logits = ad.matmul(q, ad.swap_last2(k)) / scale
    return ad.softmax_lastdim(logits, mask=mask)


def fuse_spatial_temporal(stacked: Tensor, kernels, bias) -> Tensor:
    """Mix the per-time-step score stack with a 1x1 conv over time channels."""
    kernels = ad.as_tensor(kernels)
    t_obs = stacked.shape[0]
    if kernels.shape != (t_obs, t_obs, 1, 1):
        raise ConfigError(
            f"fusion kernels must be [{t_obs},{t_obs},1,1] for a {t_obs}-step stack, got {kernels.shape}"
        )
    return ad.conv2d_zero_pad(stacked, kernels, bias)


def asymmetric_conv_features(x: Tensor, layers) -> Tensor:
    """Cascade of paired (1xS) row and (Sx1) column convs, summed then PReLU'd.

    ``layers`` is a sequence of (row_k, row_b, col_k, col_b, slope).
    Input is [C, H, W] or batched [B, C, H, W]; shape is preserved.
    """
    for row_k, row_b, col_k, col_b, slope in layers:
        f_row = ad.conv2d_zero_pad(x, row_k, row_b)
        f_col = ad.conv2d_zero_pad(x, col_k, col_b)
        x = ad.prelu(f_row + f_col, slope)
    return x


def sparse_mask(features: np.ndarray, xi: float) -> np.ndarray:
    """Keep-pattern 1{sigmoid(F) >= xi}; a hard gate, constant to backward."""
    if not 0.0 <= xi <= 1.0:
        raise ConfigError(f"xi must lie in [0, 1], got {xi}")
    return ad._sigmoid(np.asarray(features, dtype=np.float64)) >= xi


def _with_identity(mask: np.ndarray) -> np.ndarray:
    """min(M + I, 1): force self-connections without double-weighting them."""
    n = mask.shape[-1]
    if mask.shape[-2] != n:
        raise ConfigError(f"adjacency slices must be square, got {mask.shape}")
    return mask | np.eye(n, dtype=bool)


def sparse_adjacency(mask: np.ndarray, scores: Tensor) -> Tensor:
    """Gate dense scores with the mask (plus forced diagonal), elementwise."""
    return scores * _with_identity(mask).astype(np.float64)


def zero_softmax(x: Tensor, eps: float = ZERO_SOFTMAX_EPS) -> Tensor:
    """Row renormalization mapping exact zeros to exact zeros.

    y_i = (exp(x_i) - 1)^2 / (sum_j (exp(x_j) - 1)^2 + eps).  Inputs here
    are bounded products of row-stochastic scores, so exp cannot overflow.
    """
    squashed = ad.exp(x) - 1.0
    squared = squashed * squashed
    return squared / (ad.tsum(squared, axis=-1, keepdims=True) + eps)


def _conv_stack(weights: dict, prefix: str, n_layers: int):
    return [
        (
            weights[f"{prefix}_conv{layer}_row_k"],
            weights[f"{prefix}_conv{layer}_row_b"],
            weights[f"{prefix}_conv{layer}_col_k"],
            weights[f"{prefix}_conv{layer}_col_b"],
            weights[f"{prefix}_conv{layer}_slope"],
        )
        for layer in range(n_layers)
    ]


def build_spatial_graph(displacements, weights: dict, cfg: ModelConfig):
    """Learn the pedestrian-interaction adjacency from one observed window.

    ``displacements`` is [T_obs, N, 2].  Returns (SparseAdjacency with
    [T_obs, N, N] slices, node embeddings [T_obs, N, D] for the GCN).
    """
    x = ad.as_tensor(displacements)
    t_obs, n, _ = x.shape
    if t_obs != cfg.t_obs:
        raise ConfigError(f"window has {t_obs} observed steps, config expects {cfg.t_obs}")

    h0 = embed_nodes(x, weights["spa_embed_w"], weights["spa_embed_b"])
    scores = attention_scores(
        h0, weights["spa_query_w"], weights["spa_query_b"], weights["spa_key_w"], weights["spa_key_b"]
    )
    fused = fuse_spatial_temporal(scores, weights["spa_fuse_k"], weights["spa_fuse_b"])
    features = asymmetric_conv_features(fused, _conv_stack(weights, "spa", cfg.conv_layers))
    mask = sparse_mask(features.data, cfg.xi)
    raw = sparse_adjacency(mask, fused)
    return SparseAdjacency(normalized=zero_softmax(raw), mask=_with_identity(mask), raw=raw), h0


def build_temporal_graph(displacements, weights: dict, cfg: ModelConfig):
    """Learn each pedestrian's motion-tendency adjacency over time steps.

    Returns (SparseAdjacency with [N, T_obs, T_obs] slices, embeddings
    [N, T_obs, D]).  Slices are upper triangular: a step only influences
    itself and later steps.  The score stack is used directly, with no
    channel fusion, because the pedestrian count varies scene to scene.
    """
    x = ad.permute(ad.as_tensor(displacements), (1, 0, 2))
    n, t_obs, _ = x.shape
    if t_obs != cfg.t_obs:
        raise ConfigError(f"window has {t_obs} observed steps, config expects {cfg.t_obs}")

    encoding = position_encoding_table(t_obs, cfg.embed_dim)
    h0 = embed_nodes(x, weights["tmp_embed_w"], weights["tmp_embed_b"], encoding)
    causal = np.triu(np.ones((t_obs, t_obs), dtype=bool))
    scores = attention_scores(
        h0,
        weights["tmp_query_w"],
        weights["tmp_query_b"],
        weights["tmp_key_w"],
        weights["tmp_key_b"],
        mask=causal,
    )
    stacked = ad.reshape(scores, (n, 1, t_obs, t_obs))
    features = asymmetric_conv_features(stacked, _conv_stack(weights, "tmp", cfg.conv_layers))
    features = ad.reshape(features, (n, t_obs, t_obs))
    mask = sparse_mask(features.data, cfg.xi) & causal
    raw = sparse_adjacency(mask, scores)
    return SparseAdjacency(normalized=zero_softmax(raw), mask=_with_identity(mask) & causal, raw=raw), h0
