"""Training loop: seeded epochs over a patch archive, ADAM on MSE, checkpoints and history CSV.

Output directory layout::

    history.csv          epoch, train_mse, val_mse, wall_seconds
    last.bwex / .json    state after the latest epoch (with optimizer moments)
    best.bwex / .json    state with the lowest validation MSE so far
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bwex.data import PatchArchive
from bwex.errors import ConfigError, TrainingDivergedError, UsageError
from bwex.model import VARIANTS, AudioUNet, ModelConfig
from bwex.nn import functional as F
from bwex.nn.checkpoint import load_checkpoint, save_checkpoint
from bwex.nn.optim import adam_step, clip_grad_norm

log = logging.getLogger(__name__)

SIDECAR_SCHEMA_VERSION = 1
HISTORY_COLUMNS = ("epoch", "train_mse", "val_mse", "wall_seconds")


@dataclass
class TrainConfig:
    epochs: int = 400
    batch_size: int = 16
    lr: float = 1e-4
    seed: int = 0
    max_grad_norm: float | None = None
    loss: str = "mean_sq"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise ConfigError(f"invalid training config {self}")


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)

    def append(self, epoch: int, train_mse: float, val_mse: float, wall: float) -> None:
        self.rows.append(dict(epoch=epoch, train_mse=train_mse, val_mse=val_mse, wall_seconds=wall))

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for r in self.rows:
                w.writerow([r["epoch"], repr(float(r["train_mse"])), repr(float(r["val_mse"])),
                            f"{r['wall_seconds']:.3f}"])

    @classmethod
    def read(cls, path) -> "History":
        h = cls()
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                h.append(int(r["epoch"]), float(r["train_mse"]), float(r["val_mse"]), float(r["wall_seconds"]))
        return h


def write_sidecar(path, net: AudioUNet, epoch: int, extra: dict | None = None) -> None:
    meta = {"schema_version": SIDECAR_SCHEMA_VERSION, "model_type": "audiounet",
            "config": net.cfg.to_dict(), "seed": net.seed, "epoch": epoch}
    meta.update(extra or {})
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_model(ckpt_path, dtype=np.float32) -> AudioUNet:
    """Rebuild an :class:`AudioUNet` from ``x.bwex`` and its ``x.json`` sidecar."""
    ckpt_path = Path(ckpt_path)
    sidecar = ckpt_path.with_suffix(".json")
    if not sidecar.exists():
        raise UsageError(f"missing config sidecar {sidecar}")
    meta = json.loads(sidecar.read_text())
    if meta.get("schema_version") != SIDECAR_SCHEMA_VERSION:
        raise UsageError(f"{sidecar}: unsupported schema {meta.get('schema_version')}")
    if meta.get("model_type") != "audiounet":
        raise UsageError(f"{sidecar}: model_type {meta.get('model_type')!r} is not audiounet")
    net = AudioUNet(ModelConfig.from_dict(meta["config"]), seed=meta.get("seed", 0), dtype=dtype)
    load_checkpoint(net.store, ckpt_path, load_optimizer=False)
    return net


def evaluate_mse(net: AudioUNet, archive: PatchArchive, batch_size: int = 16, loss: str = "mean_sq") -> float:
    """Inference-mode loss averaged over batches weighted by batch size."""
    if len(archive) == 0:
        return float("nan")
    was_training = net.training
    net.eval()
    try:
        total = 0.0
        for x, y in archive.iter_batches(batch_size):
            x = x.astype(net.final.weight.data.dtype)
            value, _ = F.mse_loss(net.forward(x), y, loss)
            total += value * x.shape[0]
    finally:
        net.train(was_training)
    return total / len(archive)


def train_step(net: AudioUNet, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
               epoch: int = 0, batch_index: int = 0) -> float:
    """Forward, backward and one ADAM update; raises on a non-finite loss."""
    dtype = net.final.weight.data.dtype
    pred = net.forward(x.astype(dtype))
    value, grad = F.mse_loss(pred, y.astype(dtype), cfg.loss)
    net.store.zero_grad()
    net.backward(grad.astype(dtype))
    if not np.isfinite(value):
        gmax = max((float(np.max(np.abs(t.grad))) for _, t in net.store if t.grad is not None), default=0.0)
        raise TrainingDivergedError(
            f"non-finite loss {value} at epoch {epoch}, batch {batch_index}; max |grad| = {gmax:.3e}")
    if cfg.max_grad_norm:
        clip_grad_norm(net.store, cfg.max_grad_norm)
    adam_step(net.store, cfg.lr)
    return float(value)


def train(net: AudioUNet, train_archive: PatchArchive, val_archive: PatchArchive | None = None,
          cfg: TrainConfig | None = None, out_dir=None, resume: bool = False) -> History:
    """Train ``net`` in place and return its history.

    Epoch ``e`` visits the archive in the order ``default_rng([seed, e])``
    permutes it, so a run resumed from ``last.bwex`` replays the same batches
    as an uninterrupted one.
    """
    cfg = cfg or TrainConfig()
    if train_archive.patch_length % net.cfg.multiple:
        raise ConfigError(f"patch length {train_archive.patch_length} is not divisible by 2**{net.cfg.blocks}")
    if len(train_archive) == 0:
        raise UsageError("training archive is empty")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    history = History()
    start = 0
    best = float("inf")
    if resume:
        if out is None or not (out / "last.bwex").exists():
            raise UsageError("resume requested but no last.bwex checkpoint exists")
        load_checkpoint(net.store, out / "last.bwex", load_optimizer=True)
        history = History.read(out / "history.csv")
        start = int(json.loads((out / "last.json").read_text())["epoch"])
        history.rows = [r for r in history.rows if r["epoch"] <= start]
        vals = history.column("val_mse")
        scores = np.where(np.isfinite(vals), vals, history.column("train_mse"))
        if scores.size:
            best = float(np.min(scores))

    net.train()
    for epoch in range(start + 1, cfg.epochs + 1):
        t0 = time.perf_counter()
        losses, sizes = [], []
        for i, (x, y) in enumerate(train_archive.iter_batches(cfg.batch_size, epoch=epoch, seed=cfg.seed)):
            losses.append(train_step(net, x, y, cfg, epoch, i))
            sizes.append(x.shape[0])
        train_mse = float(np.dot(losses, sizes) / np.sum(sizes))
        val_mse = evaluate_mse(net, val_archive, cfg.batch_size, cfg.loss) if val_archive is not None else float("nan")
        history.append(epoch, train_mse, val_mse, time.perf_counter() - t0)
        log.info("epoch %d train %.6g val %.6g", epoch, train_mse, val_mse)

        if out is not None:
            score = val_mse if np.isfinite(val_mse) else train_mse
            if score < best:
                best = score
                save_checkpoint(net.store, out / "best.bwex")
                write_sidecar(out / "best.json", net, epoch)
            save_checkpoint(net.store, out / "last.bwex")
            write_sidecar(out / "last.json", net, epoch)
            history.write(out / "history.csv")
    return history


def ablation_suite(cfg: ModelConfig, train_archive: PatchArchive, val_archive: PatchArchive | None,
                   train_cfg: TrainConfig, variants=VARIANTS, seed: int = 0, out_dir=None,
                   dtype=np.float32) -> dict[str, History]:
    """Train each variant from the same seed on the same data; one history per variant."""
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ConfigError(f"unknown variants {bad}; expected a subset of {VARIANTS}")
    results = {}
    for v in variants:
        net = AudioUNet(cfg.variant(v), seed=seed, dtype=dtype)
        sub = Path(out_dir) / v if out_dir is not None else None
        results[v] = train(net, train_archive, val_archive, train_cfg, sub)
    return results
