"""Shared fixtures: small deterministic scenes and one session-wide overfit run."""

import time
from types import SimpleNamespace

import numpy as np
import pytest

from sgcn import data as sgcn_data
from sgcn import model as sgcn_model
from sgcn import training as sgcn_training
from sgcn.config import ModelConfig, TrainConfig

# Overfit recipe, frozen after a weight-seed robustness scan: seeds 0-4 all
# reach mu-path ADE < 0.05 on the fixtures below, seed 3 lands near 0.006
# with the largest margin.  One optimizer step per epoch (batch covers both
# scenes), so 500 epochs == 500 optimizer steps.
OVERFIT_WEIGHT_SEED = 3
OVERFIT_MODEL = ModelConfig()
OVERFIT_TRAIN = TrainConfig(
    epochs=500,
    batch_size=2,
    lr=3e-3,
    lr_decay_factor=0.3,
    lr_decay_interval=150,
    seed=0,
)

# Two three-pedestrian constant-velocity scenes.  The 0.01 m positional
# jitter is load-bearing: exactly collinear points let the bi-Gaussian
# NLL push sigma to its floor, and the exploding curvature then stalls
# the optimizer short of the ADE target.
FIXTURE_SCENES = (
    ("fix1", [[0.5, 0.0], [0.0, 0.4], [-0.4, 0.1]], [[0.0, 2.0], [3.0, 0.0], [9.0, 5.0]], 2),
    ("fix2", [[-0.3, 0.3], [0.4, -0.2], [0.2, 0.4]], [[8.0, 1.0], [1.0, 6.0], [0.0, 0.0]], 102),
)
FIXTURE_JITTER = 0.01
FIXTURE_FRAME_STEP = 10


def fixture_positions(velocities, origins, seed, jitter=FIXTURE_JITTER, steps=20):
    """[steps, N, 2] jittered straight-line walks."""
    vel = np.asarray(velocities, dtype=np.float64)
    org = np.asarray(origins, dtype=np.float64)
    rng = np.random.default_rng(seed)
    pos = org[None] + np.arange(steps)[:, None, None] * vel[None]
    return pos + rng.normal(scale=jitter, size=pos.shape)


def write_trajectory_file(path, positions, frame_step=FIXTURE_FRAME_STEP):
    """Write [T, N, 2] positions as `frame id x y` rows, ids 1..N."""
    lines = []
    for t in range(positions.shape[0]):
        for n in range(positions.shape[1]):
            x, y = float(positions[t, n, 0]), float(positions[t, n, 1])
            lines.append(f"{t * frame_step} {n + 1} {x!r} {y!r}")
    path.write_text("\n".join(lines) + "\n")


def write_fixture_dataset(root):
    """Fixture scene files plus a one-pedestrian DUMMY holdout scene."""
    for name, vel, org, seed in FIXTURE_SCENES:
        write_trajectory_file(root / f"{name}.txt", fixture_positions(vel, org, seed))
    write_trajectory_file(root / "dummy.txt", fixture_positions([[0.3, 0.2]], [[1.0, 1.0]], 7))


def overfit_training_scenes(root):
    """The two fixture windows, parsed back from disk (one window per file)."""
    tables = sgcn_data.load_dataset(root)
    scenes = []
    for name, _, _, _ in FIXTURE_SCENES:
        windows = sgcn_data.window_scenes(tables[name.upper()], OVERFIT_MODEL.t_obs, OVERFIT_MODEL.t_pred)
        assert len(windows) == 1
        scenes.extend(windows)
    return scenes


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture_data")
    write_fixture_dataset(root)
    return root


@pytest.fixture(scope="session")
def overfit_run(fixture_root, tmp_path_factory):
    """Weights trained to convergence on the two fixture scenes.

    Trained once per session; the namespace carries everything the
    consumers need (weights, configs, scenes, loss rows, checkpoint
    path, data root, wall-clock seconds of the training call).
    """
    scenes = overfit_training_scenes(fixture_root)
    checkpoint = tmp_path_factory.mktemp("overfit") / "checkpoint.ckpt"
    weights = sgcn_model.init_weights(OVERFIT_MODEL, seed=OVERFIT_WEIGHT_SEED)
    start = time.monotonic()
    weights, rows = sgcn_training.train(
        scenes, OVERFIT_MODEL, OVERFIT_TRAIN, weights=weights, checkpoint_path=checkpoint
    )
    train_seconds = time.monotonic() - start
    return SimpleNamespace(
        weights=weights,
        rows=rows,
        scenes=scenes,
        model_cfg=OVERFIT_MODEL,
        train_cfg=OVERFIT_TRAIN,
        checkpoint=checkpoint,
        data_root=fixture_root,
        train_seconds=train_seconds,
    )
