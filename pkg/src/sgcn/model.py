"""Dual-branch graph aggregation, temporal conv head, and the Gaussian output.

The learned spatial and temporal adjacencies each drive a one-layer GCN;
one branch mixes pedestrians first and time steps second, the other the
reverse, and their summed features feed a stack of time-channel convs
that maps 8 observed steps to 12 future steps of bi-variate Gaussian
displacement parameters.  Also home to weight init, sampling, and the
checkpoint format.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .errors import CheckpointError, ShapeError
from .graphs import build_spatial_graph, build_temporal_graph

CHECKPOINT_MAGIC = "SGCNCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class BiGaussianParams:
    """Per-step, per-pedestrian displacement distribution (plain arrays)."""

    mu: np.ndarray       # [T_pred, N, 2]
    sigma: np.ndarray    # [T_pred, N, 2], positive
    rho: np.ndarray      # [T_pred, N], in (-1, 1)


def _glorot(rng, shape, fan_in, fan_out) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_weights(cfg: ModelConfig, seed: int = 0) -> dict:
    """All trainable parameters, name -> leaf Tensor, deterministic in seed."""
    rng = np.random.default_rng(seed)
    d, t, p, s = cfg.embed_dim, cfg.t_obs, cfg.t_pred, cfg.conv_kernel
    w: dict = {}

    def linear(name, n_in, n_out):
        w[f"{name}_w"] = Tensor(_glorot(rng, (n_in, n_out), n_in, n_out), requires_grad=True)
        w[f"{name}_b"] = Tensor(np.zeros(n_out), requires_grad=True)

    def conv(name, c_out, c_in, kh, kw):
        fan_in, fan_out = c_in * kh * kw, c_out * kh * kw
        w[f"{name}_k"] = Tensor(_glorot(rng, (c_out, c_in, kh, kw), fan_in, fan_out), requires_grad=True)
        w[f"{name}_b"] = Tensor(np.zeros(c_out), requires_grad=True)

    def slope(name):
        w[name] = Tensor(0.25, requires_grad=True)

    for prefix, channels in (("spa", t), ("tmp", 1)):
        linear(f"{prefix}_embed", 2, d)
        linear(f"{prefix}_query", d, d)
        linear(f"{prefix}_key", d, d)
        if prefix == "spa":
            conv(f"{prefix}_fuse", t, t, 1, 1)
        for layer in range(cfg.conv_layers):
            conv(f"{prefix}_conv{layer}_row", channels, channels, 1, s)
            conv(f"{prefix}_conv{layer}_col", channels, channels, s, 1)
            slope(f"{prefix}_conv{layer}_slope")

    for name in ("gcn_spa1", "gcn_tmp1", "gcn_tmp2", "gcn_spa2"):
        w[f"{name}_w"] = Tensor(_glorot(rng, (d, d), d, d), requires_grad=True)
        slope(f"{name}_slope")

    conv("tcn_conv0", p, t, 1, cfg.conv_kernel)
    slope("tcn_slope0")
    for layer in range(1, cfg.tcn_layers):
        conv(f"tcn_conv{layer}", p, p, 1, cfg.conv_kernel)
        slope(f"tcn_slope{layer}")
    linear("out_proj", d, 5)
    # damp the head so initial outputs sit near (mu=0, sigma=1, rho=0)
    # instead of an arbitrarily sharp or inflated density
    w["out_proj_w"] = Tensor(w["out_proj_w"].data * 0.1, requires_grad=True)
    return w


def zero_grads(weights: dict) -> None:
    for tensor in weights.values():
        tensor.zero_grad()


def gcn_layer(adjacency: Tensor, features: Tensor, weight: Tensor, slope: Tensor) -> Tensor:
    """One propagation step: receivers aggregate their influencers.

    Adjacency entry (i, j) weights i's influence on j, so features are
    premultiplied by the transposed slices.
    """
    if adjacency.shape[-1] != features.shape[-2]:
        raise ShapeError(f"adjacency {adjacency.shape} cannot aggregate features {features.shape}")
    return ad.prelu(ad.matmul(ad.matmul(ad.swap_last2(adjacency), features), weight), slope)


def interaction_tendency_branch(spa_adj: Tensor, tmp_adj: Tensor, h0_spa: Tensor, w: dict) -> Tensor:
    """Pedestrian mixing per time step, then step mixing per pedestrian -> [N, T, D]."""
    spatial = gcn_layer(spa_adj, h0_spa, w["gcn_spa1_w"], w["gcn_spa1_slope"])
    return gcn_layer(tmp_adj, ad.permute(spatial, (1, 0, 2)), w["gcn_tmp1_w"], w["gcn_tmp1_slope"])


def tendency_interaction_branch(spa_adj: Tensor, tmp_adj: Tensor, h0_tmp: Tensor, w: dict) -> Tensor:
    """Step mixing per pedestrian, then pedestrian mixing per time step -> [T, N, D]."""
    temporal = gcn_layer(tmp_adj, h0_tmp, w["gcn_tmp2_w"], w["gcn_tmp2_slope"])
    return gcn_layer(spa_adj, ad.permute(temporal, (1, 0, 2)), w["gcn_spa2_w"], w["gcn_spa2_slope"])


def fuse_branches(h_itf: Tensor, h_tif: Tensor) -> Tensor:
    """Elementwise sum in time-major layout [T, N, D]."""
    return ad.permute(h_itf, (1, 0, 2)) + h_tif


def tcn_head(h: Tensor, weights: dict, cfg: ModelConfig) -> Tensor:
    """Map fused features [T_obs, N, D] to raw outputs [T_pred, N, 5].

    Time steps act as conv channels; kernels are 1 wide on the pedestrian
    axis (order must not matter) and ``conv_kernel`` wide on features.
    Equal-shape layers carry residual connections.
    """
    x = ad.prelu(ad.conv2d_zero_pad(h, weights["tcn_conv0_k"], weights["tcn_conv0_b"]), weights["tcn_slope0"])
    for layer in range(1, cfg.tcn_layers):
        conv = ad.conv2d_zero_pad(x, weights[f"tcn_conv{layer}_k"], weights[f"tcn_conv{layer}_b"])
        x = ad.prelu(conv, weights[f"tcn_slope{layer}"]) + x
    return ad.matmul(x, weights["out_proj_w"]) + weights["out_proj_b"]


def forward(displacements, weights: dict, cfg: ModelConfig):
    """Full pass: observed displacements [T_obs, N, 2] -> raw head output [T_pred, N, 5].

    Returns (raw, spatial SparseAdjacency, temporal SparseAdjacency).
    """
    spa, h0_spa = build_spatial_graph(displacements, weights, cfg)
    tmp, h0_tmp = build_temporal_graph(displacements, weights, cfg)
    h_itf = interaction_tendency_branch(spa.normalized, tmp.normalized, h0_spa, weights)
    h_tif = tendency_interaction_branch(spa.normalized, tmp.normalized, h0_tmp, weights)
    fused = fuse_branches(h_itf, h_tif)
    return tcn_head(fused, weights, cfg), spa, tmp


def to_gaussian(raw) -> BiGaussianParams:
    """Split raw 5-vectors into (mu, sigma, rho) with positivity/range maps."""
    values = raw.data if isinstance(raw, Tensor) else np.asarray(raw)
    return BiGaussianParams(
        mu=values[..., 0:2].copy(),
        sigma=np.exp(values[..., 2:4]),
        rho=np.tanh(values[..., 4]),
    )


def predict(displacements, weights: dict, cfg: ModelConfig) -> BiGaussianParams:
    raw, _, _ = forward(displacements, weights, cfg)
    return to_gaussian(raw)


def sample_displacements(params: BiGaussianParams, rng) -> np.ndarray:
    """One correlated draw per (step, pedestrian) via the closed-form Cholesky.

    [[sx^2, r sx sy], [r sx sy, sy^2]] factors as L = [[sx, 0],
    [r sy, sy sqrt(1 - r^2)]], so two standard normals suffice.
    """
    eps = rng.standard_normal(params.mu.shape)
    sx, sy = params.sigma[..., 0], params.sigma[..., 1]
    r = params.rho
    out = np.empty_like(params.mu)
    out[..., 0] = params.mu[..., 0] + sx * eps[..., 0]
    out[..., 1] = params.mu[..., 1] + sy * (r * eps[..., 0] + np.sqrt(1.0 - r * r) * eps[..., 1])
    return out


def sample_trajectory(params: BiGaussianParams, last_observed: np.ndarray, rng) -> np.ndarray:
    """Absolute future positions from one sampled displacement sequence."""
    return last_observed[None] + np.cumsum(sample_displacements(params, rng), axis=0)


def mu_trajectory(params: BiGaussianParams, last_observed: np.ndarray) -> np.ndarray:
    """Deterministic mean path (the zero-noise sample)."""
    return last_observed[None] + np.cumsum(params.mu, axis=0)


# ---------------------------------------------------------------------------
# checkpoint format: text header (version, config, shape table) + raw payload


def _config_fields(cfg: ModelConfig) -> dict:
    return {
        "t_obs": cfg.t_obs,
        "t_pred": cfg.t_pred,
        "embed_dim": cfg.embed_dim,
        "conv_layers": cfg.conv_layers,
        "conv_kernel": cfg.conv_kernel,
        "tcn_layers": cfg.tcn_layers,
        "xi": cfg.xi,
    }


def save_checkpoint(path, weights: dict, cfg: ModelConfig) -> None:
    """Write header + row-major little-endian float64 payloads atomically."""
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}"]
    for key, value in _config_fields(cfg).items():
        lines.append(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}")
    names = sorted(weights)
    for name in names:
        dims = " ".join(str(d) for d in weights[name].shape)
        lines.append(f"param {name} {dims}".rstrip())
    lines.append("END")
    payload = b"".join(
        np.ascontiguousarray(weights[name].data, dtype="<f8").tobytes() for name in names
    )
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode())
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple:
    """Read (weights, ModelConfig); malformed files raise CheckpointError."""
    with open(path, "rb") as fh:
        blob = fh.read()
    head, sep, _ = blob.partition(b"\nEND\n")
    if not sep:
        raise CheckpointError(f"{path}: missing END marker in header")
    header_lines = head.decode(errors="replace").splitlines()
    if not header_lines:
        raise CheckpointError(f"{path}: empty header")
    magic = header_lines[0].split()
    if len(magic) != 2 or magic[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad version line {header_lines[0]!r}, expected '{CHECKPOINT_MAGIC} <version>'")
    if magic[1] != str(CHECKPOINT_VERSION):
        raise CheckpointError(f"{path}: unsupported version {magic[1]!r} (supported: {CHECKPOINT_VERSION})")

    fields: dict = {}
    shapes: list = []
    for line in header_lines[1:]:
        if line.startswith("param "):
            parts = line.split()
            shapes.append((parts[1], tuple(int(d) for d in parts[2:])))
        elif "=" in line:
            key, _, value = line.partition("=")
            fields[key] = value
    try:
        cfg = ModelConfig(
            t_obs=int(fields["t_obs"]),
            t_pred=int(fields["t_pred"]),
            embed_dim=int(fields["embed_dim"]),
            conv_layers=int(fields["conv_layers"]),
            conv_kernel=int(fields["conv_kernel"]),
            tcn_layers=int(fields["tcn_layers"]),
            xi=float(fields["xi"]),
        )
    except KeyError as err:
        raise CheckpointError(f"{path}: header missing config field {err}") from None

    expected = init_weights(cfg, seed=0)
    expected_shapes = sorted((name, tuple(t.shape)) for name, t in expected.items())
    if sorted(shapes) != expected_shapes:
        got = dict(shapes)
        for name, shape in expected_shapes:
            if name not in got:
                raise CheckpointError(f"{path}: parameter {name} missing from shape table")
            if got[name] != shape:
                raise CheckpointError(
                    f"{path}: parameter {name} has shape {got[name]}, config implies {shape}"
                )
        extra = set(got) - {n for n, _ in expected_shapes}
        raise CheckpointError(f"{path}: unexpected parameters {sorted(extra)}")

    payload = blob[len(head) + len(b"\nEND\n"):]
    total = sum(int(np.prod(shape)) if shape else 1 for _, shape in shapes)
    if len(payload) != total * 8:
        raise CheckpointError(f"{path}: payload holds {len(payload)} bytes, shape table implies {total * 8}")

    weights = {}
    offset = 0
    for name, shape in shapes:
        count = int(np.prod(shape)) if shape else 1
        flat = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        weights[name] = Tensor(flat.reshape(shape).copy(), requires_grad=True)
        offset += count * 8
    return weights, cfg
