"""Negative-log-likelihood training with Adam and stepped lr decay.

Scenes have variable pedestrian counts, so a "batch" is a gradient
accumulation window: per-scene losses are backpropagated one at a time,
accumulated gradients are averaged over the window, and Adam steps once
per window.  The objective per scene is the bi-variate Gaussian NLL of
the ground-truth future displacements, summed over future steps and
averaged over pedestrians.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig, TrainConfig
from .data import future_displacements
from .errors import ConfigError, NumericsError
from .model import forward, init_weights, save_checkpoint, zero_grads

logger = logging.getLogger(__name__)

RHO_LIMIT = 1.0 - 1e-6
SIGMA_FLOOR = 1e-8
# exp argument ceiling: keeps sigma finite under transient optimizer
# excursions without affecting any realistic scale (e^30 ~ 1e13 meters)
LOG_SIGMA_MAX = 30.0
LOG_2PI = float(np.log(2.0 * np.pi))


def nll_loss(raw: Tensor, gt_displacements: np.ndarray) -> Tensor:
    """Scalar loss: -sum over steps, mean over pedestrians, of the log density.

    ``raw`` is the head output [T_pred, N, 5]; the correlation is clamped
    to |rho| <= 1 - 1e-6 and sigma floored at 1e-8 to keep the density
    nonsingular (gradients are exact away from the clamps).
    """
    gt = np.asarray(gt_displacements, dtype=np.float64)
    n = raw.shape[1]
    log_floor = float(np.log(SIGMA_FLOOR))
    mu_x, mu_y = raw[..., 0], raw[..., 1]
    sigma_x = ad.exp(ad.clamp(raw[..., 2], lo=log_floor, hi=LOG_SIGMA_MAX))
    sigma_y = ad.exp(ad.clamp(raw[..., 3], lo=log_floor, hi=LOG_SIGMA_MAX))
    rho = ad.clamp(ad.tanh(raw[..., 4]), lo=-RHO_LIMIT, hi=RHO_LIMIT)

    dx = (gt[..., 0] - mu_x) / sigma_x
    dy = (gt[..., 1] - mu_y) / sigma_y
    one_minus_r2 = 1.0 - rho * rho
    z = dx * dx - 2.0 * rho * dx * dy + dy * dy
    log_pdf = (
        -LOG_2PI
        - ad.log(sigma_x)
        - ad.log(sigma_y)
        - 0.5 * ad.log(one_minus_r2)
        - z / (2.0 * one_minus_r2)
    )
    return -ad.tsum(log_pdf) / float(n)


class Adam:
    """Standard Adam with bias correction over a name -> Tensor dict.

    Parameters whose grad is None (never touched by backward) are left
    untouched; their moment buffers stay zero.
    """

    def __init__(self, weights: dict, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {name: np.zeros(t.shape) for name, t in weights.items()}
        self.v = {name: np.zeros(t.shape) for name, t in weights.items()}

    def step(self, weights: dict, lr: float, grad_scale: float = 1.0) -> None:
        self.step_count += 1
        correct1 = 1.0 - self.beta1 ** self.step_count
        correct2 = 1.0 - self.beta2 ** self.step_count
        for name, p in weights.items():
            if p.grad is None:
                continue
            g = p.grad * grad_scale
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / correct1
            v_hat = self.v[name] / correct2
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def write_loss_log(rows, path) -> None:
    """CSV ``epoch,step,nll,lr``; floats via repr for byte-stable output."""
    lines = ["epoch,step,nll,lr"]
    for epoch, step, nll, lr in rows:
        lines.append(f"{epoch},{step},{nll!r},{lr!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def scene_loss(scene, weights: dict, model_cfg: ModelConfig) -> Tensor:
    raw, _, _ = forward(scene.displacements_obs, weights, model_cfg)
    return nll_loss(raw, future_displacements(scene))


def train(
    train_scenes,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    weights: dict | None = None,
    checkpoint_path=None,
    loss_log_path=None,
):
    """Optimize over windows; returns (weights, loss rows).

    Loss rows are (epoch, optimizer_step, mean window NLL, lr).  When
    paths are given, a checkpoint is rewritten after every epoch and the
    loss log at the end, both usable mid-run.
    """
    if not train_scenes:
        raise ConfigError("training requires at least one scene window")
    if weights is None:
        weights = init_weights(model_cfg, seed=train_cfg.seed)
    optimizer = Adam(weights)
    order_rng = np.random.default_rng(train_cfg.seed)
    rows = []
    step = 0
    for epoch in range(train_cfg.epochs):
        lr = train_cfg.lr_at(epoch)
        order = order_rng.permutation(len(train_scenes))
        zero_grads(weights)
        window_losses = []
        for scene_idx in order:
            scene = train_scenes[int(scene_idx)]
            try:
                loss = scene_loss(scene, weights, model_cfg)
                ad.backward(loss)
            except NumericsError as err:
                raise NumericsError(
                    f"scene {scene.scene_name}@frame{scene.start_frame} "
                    f"(N={scene.n_pedestrians}): {err}"
                ) from err
            window_losses.append(loss.item())
            if len(window_losses) == train_cfg.batch_size:
                optimizer.step(weights, lr, grad_scale=1.0 / len(window_losses))
                step += 1
                rows.append((epoch, step, float(np.mean(window_losses)), lr))
                window_losses = []
                zero_grads(weights)
        if window_losses:  # remainder window at epoch end
            optimizer.step(weights, lr, grad_scale=1.0 / len(window_losses))
            step += 1
            rows.append((epoch, step, float(np.mean(window_losses)), lr))
            zero_grads(weights)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, weights, model_cfg)
        logger.info("epoch %d done, lr %.2e, last window nll %.4f", epoch, lr, rows[-1][2])
    if loss_log_path is not None:
        write_loss_log(rows, loss_log_path)
    return weights, rows
