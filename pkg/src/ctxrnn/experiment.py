"""Run orchestration: datasets from config, training runs with metrics files,
checkpoints, evaluation and conditional rollouts.

Run directory layout::

    config.ini       resolved config (reproduces the run)
    metrics.jsonl    one MetricsRecord per (epoch, split), deterministic
    timing.jsonl     wall-clock seconds per record (not deterministic)
    checkpoint.npz   named parameter arrays + config metadata
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import data
from .config import ExperimentConfig, resolve
from .estimators import ArtClassifier, LcdSequenceModel

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class MetricsRecord:
    epoch: int
    split: str
    seed: int
    log_likelihood: float | None = None
    accuracy: float | None = None
    mse: float | None = None
    seconds: float = 0.0

    @classmethod
    def from_history(cls, rec: dict) -> "MetricsRecord":
        return cls(**{k: rec[k] for k in ("epoch", "split", "seed", "log_likelihood",
                                           "accuracy", "mse", "seconds") if k in rec})

    def to_json(self) -> str:
        """Deterministic JSON line; wall-clock time is kept out of it."""
        d = {k: v for k, v in asdict(self).items() if v is not None and k != "seconds"}
        return json.dumps(d, sort_keys=True)


# ---------------------------------------------------------------------------
# datasets


def generate_datasets(cfg: ExperimentConfig):
    seed = cfg.data_seed
    if cfg.task == "art":
        return data.gen_art_dataset(cfg["data.n_train"], cfg["data.n_valid"], cfg["data.pairs"], seed)
    return data.gen_lcd_splits(cfg["data.n_train"], cfg["data.n_valid"], cfg["data.t_f"], seed)


def save_datasets(task: str, datasets, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = (out_dir / "train.txt", out_dir / "valid.txt")
    for split, path in zip(datasets, paths):
        if task == "art":
            data.save_art(path, *split)
        else:
            data.save_lcd(path, split)
    return paths


def load_dataset(task: str, path):
    """Arrays ready for the estimators: ART ``(tokens, targets)``, LCD ``(values, periods)``."""
    if task == "art":
        return data.load_art(path)
    return data.lcd_arrays(data.load_lcd(path))


def datasets_for(cfg: ExperimentConfig):
    """Load the configured dataset files, or generate them from ``data.seed``."""
    train_path, valid_path = cfg["data.train_path"], cfg["data.valid_path"]
    if bool(train_path) != bool(valid_path):
        key = "data.valid_path" if train_path else "data.train_path"
        raise FileNotFoundError(f"{key} must be set together with its counterpart")
    if train_path:
        for p in (train_path, valid_path):
            if not Path(p).is_file():
                raise FileNotFoundError(f"dataset file not found: {p}")
        return load_dataset(cfg.task, train_path), load_dataset(cfg.task, valid_path)
    train, valid = generate_datasets(cfg)
    if cfg.task == "lcd":
        train, valid = data.lcd_arrays(train), data.lcd_arrays(valid)
    return train, valid


# ---------------------------------------------------------------------------
# estimators and checkpoints


def build_estimator(cfg: ExperimentConfig):
    clip = cfg["train.clip_norm"] or None
    common = dict(
        init=cfg["init.strategy"],
        hidden_size=cfg["model.hidden_size"],
        noise_std=cfg["init.noise_std"],
        learning_rate=cfg["train.learning_rate"],
        batch_size=cfg["train.batch_size"],
        epochs=cfg["train.epochs"],
        clip_norm=clip,
        eval_batch_size=cfg["train.eval_batch_size"],
        random_state=cfg["run.seed"],
    )
    if cfg.task == "art":
        return ArtClassifier(embedding_dim=cfg["model.embedding_dim"], fw_decay=cfg["model.fw_decay"],
                             fw_learning_rate=cfg["model.fw_learning_rate"],
                             fw_steps=cfg["model.fw_steps"], **common)
    append = {"auto": None, "yes": True, "no": False}[cfg["model.append_period"]]
    return LcdSequenceModel(context_hidden=cfg["model.context_hidden"], append_period=append,
                            sigma_init=cfg["model.sigma_init"], **common)


def save_checkpoint(estimator, cfg: ExperimentConfig, path) -> None:
    meta = {"version": CHECKPOINT_VERSION, "task": cfg.task, "config": cfg.to_ini(),
            "config_sha256": cfg.digest(), "epochs_trained": estimator.n_epochs_}
    arrays = {f"param/{k}": v for k, v in estimator.params_.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path):
    """Rebuild ``(estimator, config)``; parameter shapes must match the config."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as npz:
            meta = json.loads(str(npz["__meta__"]))
            params = {k[len("param/"):]: npz[k].astype(np.float64) for k in npz.files if k.startswith("param/")}
    except (ValueError, KeyError, OSError) as err:
        raise CheckpointError(f"{path}: unreadable checkpoint ({err})") from None
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    cfg = resolve(meta["task"], text=meta["config"])
    est = build_estimator(cfg)
    est._initialize()
    expected = {k: v.shape for k, v in est.params_.items()}
    got = {k: v.shape for k, v in params.items()}
    if expected != got:
        raise CheckpointError(f"{path}: parameter shapes {got} do not match config {expected}")
    est.params_ = params
    est.n_epochs_ = meta["epochs_trained"]
    if cfg.task == "art":
        est.classes_ = np.arange(data.N_DIGITS)
    return est, cfg


# ---------------------------------------------------------------------------
# runs


def train(cfg: ExperimentConfig, out_dir, datasets=None):
    """Train one configured model; writes the run directory and returns the estimator."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / "config.ini")
    (train_xy, valid_xy) = datasets if datasets is not None else datasets_for(cfg)
    est = build_estimator(cfg)
    with open(out_dir / "metrics.jsonl", "w") as metrics, open(out_dir / "timing.jsonl", "w") as timing:
        def on_record(rec):
            m = MetricsRecord.from_history(rec)
            metrics.write(m.to_json() + "\n")
            metrics.flush()
            timing.write(json.dumps({"epoch": m.epoch, "split": m.split, "seconds": m.seconds}) + "\n")
            log.info("epoch %d %s %s", m.epoch, m.split, m.to_json())

        est.fit(*train_xy, validation_data=valid_xy, on_record=on_record)
    save_checkpoint(est, cfg, out_dir / "checkpoint.npz")
    return est


def train_art(cfg: ExperimentConfig, out_dir, datasets=None) -> ArtClassifier:
    if cfg.task != "art":
        raise ValueError("train_art needs an art config")
    return train(cfg, out_dir, datasets)


def train_lcd(cfg: ExperimentConfig, out_dir, datasets=None) -> LcdSequenceModel:
    if cfg.task != "lcd":
        raise ValueError("train_lcd needs an lcd config")
    return train(cfg, out_dir, datasets)


def evaluate(estimator, dataset, split: str = "valid") -> MetricsRecord:
    """Metrics of a trained estimator on ``dataset`` arrays, without updating it.

    Stochastic initial states are evaluated at their mean.
    """
    metrics = estimator.evaluate(*dataset)
    return MetricsRecord(epoch=estimator.n_epochs_, split=split, seed=estimator.random_state, **metrics)


def rollout_generate(estimator: LcdSequenceModel, x0: float, period: float, n_samples: int = 10,
                     rng=None, length: int = 25) -> np.ndarray:
    """``n_samples`` free-running trajectories conditioned on ``(x0, period)``."""
    return estimator.sample(x0, period, n_samples, length=length, random_state=rng)


def write_samples_csv(path, trajectories: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "t", "x"])
        for i, traj in enumerate(trajectories):
            for t, x in enumerate(traj):
                w.writerow([i, t, repr(float(x))])
