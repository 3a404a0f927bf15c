"""Dataclass configs for the model and the training/evaluation protocol."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

SCENE_NAMES = ("ETH", "HOTEL", "UNIV", "ZARA1", "ZARA2")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    Defaults follow the experimental settings: 64-dim embeddings, a single
    self-attention layer per branch, 7 asymmetric conv layers with kernel
    extent 3, a 4-layer temporal conv head, and sparsity threshold 0.5.
    """

    t_obs: int = 8
    t_pred: int = 12
    embed_dim: int = 64
    conv_layers: int = 7
    conv_kernel: int = 3
    tcn_layers: int = 4
    xi: float = 0.5

    def __post_init__(self):
        for name in ("t_obs", "t_pred", "embed_dim", "conv_layers", "tcn_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ConfigError(f"conv_kernel must be odd and >= 1, got {self.conv_kernel}")
        if self.tcn_layers < 2:
            raise ConfigError(f"tcn_layers must be >= 2 (head needs an entry layer), got {self.tcn_layers}")
        if not 0.0 <= self.xi <= 1.0:
            raise ConfigError(f"xi must lie in [0, 1], got {self.xi}")
        if self.embed_dim % 2 != 0:
            raise ConfigError(f"embed_dim must be even for the sin/cos position table, got {self.embed_dim}")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization protocol: Adam, stepped lr decay, accumulation batching."""

    epochs: int = 150
    batch_size: int = 128
    lr: float = 1e-3
    lr_decay_factor: float = 0.1
    lr_decay_interval: int = 50
    xi: float = 0.5
    seed: int = 0
    holdout: str = "ZARA2"
    t_obs: int = 8
    t_pred: int = 12
    num_samples: int = 20

    def __post_init__(self):
        for name in ("epochs", "batch_size", "lr_decay_interval", "t_obs", "t_pred", "num_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ConfigError(f"lr_decay_factor must lie in (0, 1], got {self.lr_decay_factor}")
        if not 0.0 <= self.xi <= 1.0:
            raise ConfigError(f"xi must lie in [0, 1], got {self.xi}")

    def lr_at(self, epoch: int) -> float:
        """Stepped decay: lr * factor^(epoch // interval)."""
        return self.lr * self.lr_decay_factor ** (epoch // self.lr_decay_interval)


def read_config_file(path) -> dict:
    """Parse a flat key=value config file into a string->string dict.

    Blank lines and #-comments are ignored.  Values never contain '='
    interpretation beyond the first occurrence.
    """
    result = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        result[key.strip()] = value.strip()
    return result


def write_config_file(path, values: dict) -> None:
    """Echo a resolved configuration as sorted key=value lines."""
    lines = [f"{k}={values[k]}" for k in sorted(values)]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class RunConfig:
    """Fully resolved CLI run: every field explicit, echoed next to outputs."""

    command: str = ""
    data_root: str = ""
    holdout: str = "ZARA2"
    epochs: int = 150
    batch_size: int = 128
    lr: float = 1e-3
    xi: float = 0.5
    seed: int = 0
    num_samples: int = 20
    out: str = "runs/default"
    jobs: int = 1
    field_order: str = "frame id x y"
    checkpoint: str = ""
    scene_file: str = ""
    scenes: tuple = field(default_factory=tuple)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}
