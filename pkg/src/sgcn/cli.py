"""Operator entry point: train, evaluate, predict, and graph dumps.

Configuration precedence, lowest to highest: built-in defaults, the
``SGCN_DATA_ROOT`` environment variable (data root only), values from a
``--config`` key=value file, explicit command-line flags.  Every run
echoes its fully resolved configuration into the output directory so a
later ``--config resolved.cfg`` reproduces it.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ModelConfig, RunConfig, TrainConfig, read_config_file, write_config_file
from .data import infer_frame_step, leave_one_out_split, load_dataset, load_scene_file
from .errors import ConfigError, DataError, SgcnError
from .evaluation import evaluate_best_of_k, write_metrics_csv, write_summary
from .model import forward, load_checkpoint, mu_trajectory, predict, sample_trajectory
from .training import train

logger = logging.getLogger(__name__)

_INT_KEYS = {"epochs", "batch_size", "seed", "num_samples", "jobs"}
_FLOAT_KEYS = {"lr", "xi"}
_STRING_KEYS = {"data_root", "holdout", "out", "field_order", "checkpoint", "scene_file"}
_FLAG_KEYS = sorted(_INT_KEYS | _FLOAT_KEYS | _STRING_KEYS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgcn",
        description="Sparse-graph trajectory predictor: training, evaluation, and inspection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, text in (
        ("train", "fit a model with leave-one-out holdout and write a checkpoint"),
        ("eval", "best-of-K displacement metrics for a checkpoint on the holdout scene"),
        ("predict", "export observed points, mu-path, per-step Gaussians, and samples as CSV"),
        ("dump-graphs", "export learned spatial/temporal adjacency matrices as labeled text"),
    ):
        p = sub.add_parser(command, help=text)
        p.add_argument("--config", help="key=value file; flags override its entries")
        p.add_argument("--data-root", dest="data_root", help="directory of *.txt scene files")
        p.add_argument("--holdout", help="scene held out of training / evaluated")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--xi", type=float, help="graph sparsity threshold in [0, 1]")
        p.add_argument("--seed", type=int)
        p.add_argument("--num-samples", dest="num_samples", type=int)
        p.add_argument("--out", help="output directory for artifacts")
        p.add_argument("--jobs", type=int, help="evaluation worker threads")
        p.add_argument("--checkpoint", help="model checkpoint path")
        p.add_argument("--scene-file", dest="scene_file", help="single trajectory file to run on")
    return parser


def _coerce(key: str, text: str):
    try:
        if key in _INT_KEYS:
            return int(text)
        if key in _FLOAT_KEYS:
            return float(text)
    except ValueError as err:
        raise ConfigError(f"config key {key}: {err}") from err
    if key == "scenes":
        return tuple(s for s in (part.strip() for part in text.split(",")) if s)
    return text


def resolve_config(args: argparse.Namespace) -> tuple[RunConfig, set]:
    """Merge defaults, environment, config file, and flags.

    Returns the resolved run plus the set of keys the operator set
    explicitly (file or flag); commands use it to tell a deliberate
    value from a default.
    """
    values = RunConfig(command=args.command).as_dict()
    explicit: set = set()
    env_root = os.environ.get("SGCN_DATA_ROOT")
    if env_root:
        values["data_root"] = env_root
    if args.config is not None:
        for key, text in read_config_file(args.config).items():
            if key == "command":
                continue  # the subcommand on the command line governs
            if key not in values:
                raise ConfigError(f"{args.config}: unknown config key {key!r}")
            values[key] = _coerce(key, text)
            explicit.add(key)
    for key in _FLAG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
            explicit.add(key)
    return RunConfig(**values), explicit


def _echo_config(run: RunConfig, out: Path) -> None:
    values = run.as_dict()
    values["scenes"] = ",".join(run.scenes)
    write_config_file(out / "resolved.cfg", values)


def _prepare_out(run: RunConfig) -> Path:
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(run, out)
    return out


def _require(value: str, what: str) -> str:
    if not value:
        raise ConfigError(f"{what} not set; pass --{what.replace('_', '-')}"
                          + (" or set SGCN_DATA_ROOT" if what == "data_root" else ""))
    return value


def _load_tables(run: RunConfig) -> dict:
    tables = load_dataset(_require(run.data_root, "data_root"), run.field_order)
    if run.scenes:
        missing = [s for s in run.scenes if s not in tables]
        if missing:
            raise ConfigError(f"scenes {missing} not found under {run.data_root}")
        tables = {name: tables[name] for name in run.scenes}
    return tables


def _observation_window(table, t_obs: int, source) -> tuple:
    """Last ``t_obs`` uniformly spaced frames; pedestrians must span all of them.

    Returns (ids, positions [t_obs, N, 2]).  Incomplete pedestrians are
    dropped with a warning; an empty result is an error naming them.
    """
    unique = np.unique(table.frames)
    if len(unique) < t_obs:
        raise DataError(f"{source}: needs at least {t_obs} distinct frames, found {len(unique)}")
    window = unique[-t_obs:]
    step = infer_frame_step(table)
    if window[-1] - window[0] != (t_obs - 1) * step:
        raise DataError(f"{source}: recording gap inside the last {t_obs} frames")
    at_frame: dict = {}
    for row in range(len(table)):
        at_frame.setdefault(int(table.frames[row]), {})[int(table.ped_ids[row])] = row
    present = set(at_frame[int(window[0])])
    for f in window[1:]:
        present &= set(at_frame[int(f)])
    dropped = sorted(set(int(p) for p in table.ped_ids) - present)
    if not present:
        raise DataError(
            f"{source}: no pedestrian observed at all of the last {t_obs} frames; "
            f"dropped pedestrians {dropped}"
        )
    if dropped:
        logger.warning("%s: dropping pedestrians with incomplete observation: %s", source, dropped)
    ids = tuple(sorted(present))
    pos = np.empty((t_obs, len(ids), 2))
    for ti, f in enumerate(window):
        rows = at_frame[int(f)]
        for ni, pid in enumerate(ids):
            pos[ti, ni] = table.xy[rows[pid]]
    return ids, pos


def _load_scene_input(run: RunConfig, t_obs: int) -> tuple:
    """(ids, observed positions, displacements) for predict/dump-graphs."""
    table = load_scene_file(_require(run.scene_file, "scene_file"), field_order=run.field_order)
    ids, obs = _observation_window(table, t_obs, run.scene_file)
    disp = np.zeros_like(obs)
    disp[1:] = obs[1:] - obs[:-1]
    return ids, obs, disp


def _load_weights(run: RunConfig, explicit: set) -> tuple:
    weights, cfg = load_checkpoint(_require(run.checkpoint, "checkpoint"))
    if "xi" in explicit and run.xi != cfg.xi:
        cfg = replace(cfg, xi=run.xi)
    return weights, cfg


def cmd_train(run: RunConfig, explicit: set) -> int:
    out = _prepare_out(run)
    model_cfg = ModelConfig(xi=run.xi)
    train_cfg = TrainConfig(
        epochs=run.epochs,
        batch_size=run.batch_size,
        lr=run.lr,
        xi=run.xi,
        seed=run.seed,
        holdout=run.holdout,
        num_samples=run.num_samples,
    )
    split = leave_one_out_split(_load_tables(run), run.holdout, model_cfg.t_obs, model_cfg.t_pred)
    checkpoint = out / "checkpoint.ckpt"
    train(
        split.train_scenes,
        model_cfg,
        train_cfg,
        checkpoint_path=checkpoint,
        loss_log_path=out / "loss_log.csv",
    )
    print(f"checkpoint: {checkpoint}")
    return 0


def cmd_eval(run: RunConfig, explicit: set) -> int:
    out = _prepare_out(run)
    weights, cfg = _load_weights(run, explicit)
    split = leave_one_out_split(_load_tables(run), run.holdout, cfg.t_obs, cfg.t_pred)
    report = evaluate_best_of_k(
        weights, cfg, split.test_scenes, k=run.num_samples, seed=run.seed, jobs=run.jobs
    )
    write_metrics_csv(report, out / "metrics.csv")
    write_summary(report, out / "summary.txt")
    print(f"ADE {report.ade:.4f} FDE {report.fde:.4f} "
          f"({report.n_pedestrians} pedestrians, {report.k} samples)")
    return 0


def cmd_predict(run: RunConfig, explicit: set) -> int:
    out = _prepare_out(run)
    weights, cfg = _load_weights(run, explicit)
    ids, obs, disp = _load_scene_input(run, cfg.t_obs)
    params = predict(disp, weights, cfg)
    last = obs[-1]
    mu_path = mu_trajectory(params, last)
    rng = np.random.default_rng(run.seed)
    samples = [sample_trajectory(params, last, rng) for _ in range(run.num_samples)]

    def xy(arr, t, ni):
        return f"{float(arr[t, ni, 0])!r},{float(arr[t, ni, 1])!r}"

    lines = ["ped_id,kind,sample,step,x,y,sigma_x,sigma_y,rho"]
    for ni, pid in enumerate(ids):
        for t in range(cfg.t_obs):
            lines.append(f"{pid},obs,,{t},{xy(obs, t, ni)},,,")
        for t in range(cfg.t_pred):
            lines.append(
                f"{pid},mu,,{t},{xy(mu_path, t, ni)},"
                f"{float(params.sigma[t, ni, 0])!r},{float(params.sigma[t, ni, 1])!r},"
                f"{float(params.rho[t, ni])!r}"
            )
        for s, sample in enumerate(samples, start=1):
            for t in range(cfg.t_pred):
                lines.append(f"{pid},sample,{s},{t},{xy(sample, t, ni)},,,")
    path = out / "predictions.csv"
    path.write_text("\n".join(lines) + "\n")
    print(f"predictions: {path} ({len(ids)} pedestrians, {run.num_samples} samples)")
    return 0


def cmd_dump_graphs(run: RunConfig, explicit: set) -> int:
    out = _prepare_out(run)
    weights, cfg = _load_weights(run, explicit)
    ids, _, disp = _load_scene_input(run, cfg.t_obs)
    _, spatial, temporal = forward(disp, weights, cfg)

    def matrix_lines(m: np.ndarray):
        return [" ".join(repr(float(v)) for v in row) for row in m]

    lines = [f"# pedestrians: {' '.join(str(p) for p in ids)}"]
    for t in range(cfg.t_obs):
        lines.append(f"# spatial step {t}")
        lines.extend(matrix_lines(spatial.normalized.data[t]))
    for ni, pid in enumerate(ids):
        lines.append(f"# temporal pedestrian {pid}")
        lines.extend(matrix_lines(temporal.normalized.data[ni]))
    path = out / "graphs.txt"
    path.write_text("\n".join(lines) + "\n")
    print(f"graphs: {path}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "dump-graphs": cmd_dump_graphs,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        run, explicit = resolve_config(args)
        return _COMMANDS[args.command](run, explicit)
    except (SgcnError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
