"""Trajectory file parsing, windowing, displacement conversion, and splits.

Input files are plain text, one observation per line, whitespace-separated
fields `frame_id pedestrian_id x y` (order configurable), positions in
meters.  Windowing slices each scene into fixed-length observation +
prediction samples; the model consumes per-step displacements and
absolute positions are recovered by cumulative summation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

FIELD_NAMES = ("frame", "id", "x", "y")


@dataclass(frozen=True)
class RawTrajectoryTable:
    """Parsed scene file, sorted by (frame, pedestrian)."""

    name: str
    frames: np.ndarray
    ped_ids: np.ndarray
    xy: np.ndarray

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class TrajectoryScene:
    """One windowed sample: N pedestrians over t_obs + t_pred frames."""

    pedestrian_ids: tuple
    positions_obs: np.ndarray
    positions_fut: np.ndarray
    displacements_obs: np.ndarray | None = None
    start_frame: int = 0
    scene_name: str = ""

    @property
    def n_pedestrians(self) -> int:
        return len(self.pedestrian_ids)


@dataclass(frozen=True)
class DatasetSplit:
    train_scenes: list
    test_scenes: list
    holdout_name: str


def _parse_int_field(token: str, what: str, where: str) -> int:
    # Some dataset exports write ids as "1.0"; accept integral decimals.
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"{where}: {what} {token!r} is not numeric") from None
    if value != int(value):
        raise DataError(f"{where}: {what} {token!r} is not integral")
    return int(value)


def load_scene_file(path, name: str | None = None, field_order: str = "frame id x y") -> RawTrajectoryTable:
    """Parse one scene file into a table; errors carry 1-based line numbers."""
    order = tuple(field_order.split())
    if sorted(order) != sorted(FIELD_NAMES):
        raise ConfigError(f"field_order must permute {' '.join(FIELD_NAMES)!r}, got {field_order!r}")
    col = {f: order.index(f) for f in FIELD_NAMES}

    path = Path(path)
    if name is None:
        name = path.stem.upper()
    frames, ped_ids, xs, ys = [], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            tokens = stripped.split()
            where = f"{path}:{lineno}"
            if len(tokens) != 4:
                raise DataError(f"{where}: expected 4 fields, got {len(tokens)}")
            frames.append(_parse_int_field(tokens[col["frame"]], "frame_id", where))
            ped_ids.append(_parse_int_field(tokens[col["id"]], "pedestrian_id", where))
            try:
                xs.append(float(tokens[col["x"]]))
                ys.append(float(tokens[col["y"]]))
            except ValueError:
                raise DataError(f"{where}: position fields must be numeric") from None

    if not frames:
        raise DataError(f"{path}: no trajectory rows")

    frames = np.asarray(frames, dtype=np.int64)
    ped_ids = np.asarray(ped_ids, dtype=np.int64)
    xy = np.column_stack([xs, ys]).astype(np.float64)

    order_idx = np.lexsort((ped_ids, frames))
    frames, ped_ids, xy = frames[order_idx], ped_ids[order_idx], xy[order_idx]

    keys = frames * (ped_ids.max() + 1) + ped_ids
    if len(np.unique(keys)) != len(keys):
        dup = np.flatnonzero(np.diff(np.sort(keys)) == 0)[0]
        raise DataError(f"{path}: duplicate (frame, pedestrian) observation near row {dup + 1}")

    return RawTrajectoryTable(name=name, frames=frames, ped_ids=ped_ids, xy=xy)


def infer_frame_step(table: RawTrajectoryTable) -> int:
    """Smallest gap between consecutive distinct frame ids (1 if only one frame)."""
    unique = np.unique(table.frames)
    if len(unique) < 2:
        return 1
    return int(np.diff(unique).min())


def to_displacements(scene: TrajectoryScene) -> TrajectoryScene:
    """Populate per-step observation deltas; the first step is the zero vector."""
    disp = np.zeros_like(scene.positions_obs)
    disp[1:] = scene.positions_obs[1:] - scene.positions_obs[:-1]
    return replace(scene, displacements_obs=disp)


def reconstruct_positions(origin: np.ndarray, displacements: np.ndarray) -> np.ndarray:
    """Invert displacement conversion: origin + running sum of deltas.

    ``origin`` is [N, 2]; ``displacements`` is [T, N, 2] where step 0 is
    the delta from the origin.  Exact inverse of the conversion on data
    whose coordinates are representable sums (binary-fraction grids).
    """
    return origin[None] + np.cumsum(displacements, axis=0)


def future_displacements(scene: TrajectoryScene) -> np.ndarray:
    """Training targets: per-step deltas of the future, anchored at the last observation."""
    fut = scene.positions_fut
    out = np.empty_like(fut)
    out[0] = fut[0] - scene.positions_obs[-1]
    out[1:] = fut[1:] - fut[:-1]
    return out


def window_scenes(table: RawTrajectoryTable, t_obs: int, t_pred: int, stride: int = 1) -> list:
    """Slice a table into complete observation+prediction windows.

    A window starts at every ``stride``-th distinct frame whose next
    t_obs + t_pred distinct frames are uniformly spaced by the dataset
    frame step.  A pedestrian joins a window only when present at every
    one of its frames; windows with no qualifying pedestrian are dropped.
    """
    if t_obs < 1 or t_pred < 1 or stride < 1:
        raise ConfigError(f"t_obs, t_pred, stride must be >= 1, got {t_obs}, {t_pred}, {stride}")
    total = t_obs + t_pred
    unique = np.unique(table.frames)
    if len(unique) < total:
        return []
    step = infer_frame_step(table)

    # at_frame: frame -> {pedestrian -> row}
    at_frame: dict = {}
    for row in range(len(table)):
        at_frame.setdefault(int(table.frames[row]), {})[int(table.ped_ids[row])] = row

    scenes = []
    for s in range(0, len(unique) - total + 1, stride):
        window = unique[s : s + total]
        if window[-1] - window[0] != (total - 1) * step:
            continue  # a recording gap interrupts this window
        present = set(at_frame[int(window[0])])
        for f in window[1:]:
            present &= set(at_frame[int(f)])
            if not present:
                break
        if not present:
            continue
        ids = tuple(sorted(present))
        pos = np.empty((total, len(ids), 2))
        for ti, f in enumerate(window):
            rows = at_frame[int(f)]
            for ni, pid in enumerate(ids):
                pos[ti, ni] = table.xy[rows[pid]]
        scene = TrajectoryScene(
            pedestrian_ids=ids,
            positions_obs=pos[:t_obs],
            positions_fut=pos[t_obs:],
            start_frame=int(window[0]),
            scene_name=table.name,
        )
        scenes.append(to_displacements(scene))
    return scenes


def load_dataset(data_root, field_order: str = "frame id x y") -> dict:
    """Map scene name -> table for every *.txt file under ``data_root``."""
    root = Path(data_root)
    if not root.is_dir():
        raise DataError(f"data root {root} is not a directory")
    tables = {}
    for path in sorted(root.glob("*.txt")):
        table = load_scene_file(path, field_order=field_order)
        tables[table.name] = table
    if not tables:
        raise DataError(f"no *.txt scene files under {root}")
    return tables


def leave_one_out_split(tables: dict, holdout: str, t_obs: int, t_pred: int, stride: int = 1) -> DatasetSplit:
    """Train on every scene except ``holdout``; test on the holdout's windows."""
    if holdout not in tables:
        raise ConfigError(f"holdout {holdout!r} not among scenes {sorted(tables)}")
    train, test = [], []
    for name, table in tables.items():
        windows = window_scenes(table, t_obs, t_pred, stride)
        if name == holdout:
            test.extend(windows)
        else:
            train.extend(windows)
    if not train:
        logger.warning("split with holdout %s has no training scenes", holdout)
    return DatasetSplit(train_scenes=train, test_scenes=test, holdout_name=holdout)
