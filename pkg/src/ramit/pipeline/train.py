"""Training loop, learning-rate schedule, dataset manifests and inference."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from ..checkpoint import atomic_write, save_checkpoint
from ..nn import AdamState, adam_step
from ..tensor import Tape, Tensor, abs_, no_grad
from .data import NormStats, Rng, augment, awgn_degrade, box_downsample, crop_back, crop_patch, pad_to_multiple
from .netpbm import load_image

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


class EmptyDataset(DatasetError):
    pass


@dataclass
class TrainSchedule:
    """Epoch-based schedule.

    ``lr_base`` defaults to ``0.0004 * 64 / batch_size`` of the first phase.
    ``phases`` lists ``(start_epoch, patch, batch)``; the last phase whose
    start has passed is active.
    """

    epochs: int = 400
    warmup_epochs: float = 20
    halve_at: list = field(default_factory=lambda: [200, 300, 350, 375])
    phases: list = field(default_factory=lambda: [(0, 64, 64), (100, 96, 32), (200, 128, 16)])
    lr_base: float | None = None
    repeat: int = 1
    checkpoint_every: int = 0

    @property
    def base_lr(self) -> float:
        if self.lr_base is not None:
            return float(self.lr_base)
        return 0.0004 * 64 / self.phases[0][2]

    def lr(self, epoch: float) -> float:
        """Linear warmup from 0, then halve at each listed epoch."""
        base = self.base_lr
        if self.warmup_epochs > 0 and epoch < self.warmup_epochs:
            return base * epoch / self.warmup_epochs
        return base * 0.5 ** sum(1 for e in self.halve_at if epoch >= e)

    def phase(self, epoch: float) -> tuple[int, int]:
        active = self.phases[0]
        for ph in self.phases:
            if epoch >= ph[0]:
                active = ph
        return int(active[1]), int(active[2])

    @classmethod
    def from_dict(cls, d: dict) -> "TrainSchedule":
        d = dict(d)
        if "phases" in d:
            d["phases"] = [tuple(p) for p in d["phases"]]
        return cls(**d)

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "warmup_epochs": self.warmup_epochs, "halve_at": list(self.halve_at),
                "phases": [list(p) for p in self.phases], "lr_base": self.lr_base, "repeat": self.repeat,
                "checkpoint_every": self.checkpoint_every}


@dataclass
class Sample:
    hq: np.ndarray
    lq: np.ndarray | None = None


def load_manifest(path: str) -> list[Sample]:
    """JSON list of ``{"hq_path", "lq_path"?}``; relative paths resolve against the manifest."""
    try:
        with open(path) as f:
            entries = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetError(f"cannot read manifest {path}: {e}") from e
    if not isinstance(entries, list):
        raise DatasetError("manifest must be a JSON list")
    root = os.path.dirname(os.path.abspath(path))
    samples = []
    for i, e in enumerate(entries):
        if not isinstance(e, dict) or "hq_path" not in e:
            raise DatasetError(f"manifest entry {i} lacks hq_path")
        try:
            hq = load_image(os.path.join(root, e["hq_path"])).to_array()
            lq = load_image(os.path.join(root, e["lq_path"])).to_array() if e.get("lq_path") else None
        except (OSError, ValueError) as err:
            raise DatasetError(f"manifest entry {i}: {err}") from err
        samples.append(Sample(hq, lq))
    if not samples:
        raise EmptyDataset("dataset manifest is empty")
    return samples


def dataset_norm(samples: list[Sample], task: str) -> NormStats:
    """Denoising normalizes with HQ statistics (noise is synthesized); other tasks with LQ."""
    if task in ("color_dn", "gray_dn") or any(s.lq is None for s in samples):
        return NormStats.from_images([s.hq for s in samples])
    return NormStats.from_images([s.lq for s in samples])


def make_pair(sample: Sample, task: str, scale: int, rng: Rng):
    """Degrade on the fly where the task allows it."""
    hq = sample.hq
    if task in ("color_dn", "gray_dn"):
        sigma = float(rng.uniform(low=0.0, high=50.0))
        return hq, awgn_degrade(hq, sigma, rng)
    if sample.lq is not None:
        return hq, sample.lq
    if task == "sr":
        return hq[:, :hq.shape[1] // scale * scale, :hq.shape[2] // scale * scale], box_downsample(hq, scale)
    raise DatasetError(f"task {task!r} needs paired lq_path entries")


def l1_pixel_loss(out_norm: Tensor, hq: np.ndarray, norm: NormStats) -> Tensor:
    """Mean |HQ - denormalize(out)|, built on the tape."""
    std = np.asarray(norm.std, dtype=out_norm.dtype)[:, None, None]
    mean = np.asarray(norm.mean, dtype=out_norm.dtype)[:, None, None]
    pixel = out_norm * std + mean
    return abs_(pixel - hq.astype(out_norm.dtype)).mean()


@dataclass
class TrainResult:
    trace: list
    norm: NormStats

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "epoch", "lr", "loss"])
        for row in self.trace:
            w.writerow([row[0], f"{row[1]:.6f}", repr(row[2]), repr(row[3])])
        return buf.getvalue()


def train_loop(model, samples: list[Sample], schedule: TrainSchedule, rng: Rng,
               steps: int | None = None, norm: NormStats | None = None,
               checkpoint_path: str | None = None, on_step=None) -> TrainResult:
    """Run Adam on the L1 pixel loss; deterministic given ``rng``.

    One epoch is ``len(samples) * repeat`` images.  ``steps`` caps the run;
    by default it lasts ``schedule.epochs`` epochs.
    """
    if not samples:
        raise EmptyDataset("no training samples")
    cfg = model.config
    norm = norm or dataset_norm(samples, cfg.task)
    params = model.parameters()
    state = AdamState()
    per_epoch = len(samples) * schedule.repeat
    trace = []
    step = 0
    seen = 0
    total_steps = steps
    try:
        while True:
            epoch = seen / per_epoch
            if total_steps is not None and step >= total_steps:
                break
            if total_steps is None and epoch >= schedule.epochs:
                break
            patch, batch = schedule.phase(epoch)
            lr = schedule.lr(epoch)
            srng = rng.fork(step)
            with Tape() as tape:
                losses = []
                for _ in range(batch):
                    sample = samples[srng.integers(0, len(samples))]
                    hq, lq = make_pair(sample, cfg.task, cfg.upscale, srng)
                    hq, lq = augment(hq, lq, srng)
                    p = min(patch, lq.shape[1], lq.shape[2])
                    p -= p % cfg.unit
                    hq, lq = crop_patch(hq, lq, p, cfg.upscale, srng)
                    x = Tensor(norm.normalize(lq.astype(np.float32)))
                    losses.append(l1_pixel_loss(model(x), hq, norm))
                loss = losses[0]
                for extra in losses[1:]:
                    loss = loss + extra
                if batch > 1:
                    loss = loss * (1.0 / batch)
            grads = tape.gradient(loss, params)
            adam_step(params, grads, state, lr)
            trace.append((step, epoch, lr, float(loss.data)))
            if on_step is not None:
                on_step(step, trace[-1])
            step += 1
            seen += batch
            if checkpoint_path and schedule.checkpoint_every and step % schedule.checkpoint_every == 0:
                save_checkpoint(model, checkpoint_path, {"norm": norm.to_dict(), "step": step})
    except KeyboardInterrupt:
        log.warning("interrupted at step %d; writing final checkpoint", step)
    if checkpoint_path:
        save_checkpoint(model, checkpoint_path, {"norm": norm.to_dict(), "step": step})
    return TrainResult(trace, norm)


def restore(model, lq: np.ndarray, norm: NormStats | None = None) -> np.ndarray:
    """Pad, normalize, run, de-normalize, crop back and clamp to [0, 1]."""
    cfg = model.config
    norm = norm or NormStats.identity(cfg.in_channels)
    padded, size = pad_to_multiple(lq.astype(np.float32), cfg.unit)
    with no_grad():
        out = model(Tensor(norm.normalize(padded)))
    y = norm.denormalize(out.data)
    return np.clip(crop_back(y, size, cfg.upscale), 0.0, 1.0)


def write_trace(result: TrainResult, path: str):
    atomic_write(path, result.csv().encode())
