"""Renderer pre-training on ground-truth states and observations."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..autodiff import ContractError
from ..scenesim.dataset import VideoData, list_split, load_video
from .losses import mask_metrics, render_loss
from .model import RendererConfig, StateNorm, compose, init_params, render_maps


@dataclass
class RendererTrainConfig:
    epochs: int = 30
    frames_per_epoch: int = 500
    batch_frames: int = 8
    lr: float = 1e-3
    patience: int = 10
    val_frames: int = 150
    seed: int = 0


@dataclass
class FrameSample:
    """One training frame: states ordered by mask id, plus its targets."""
    objects: list[dict]
    mask: np.ndarray
    depth_norm: np.ndarray


def frame_samples(videos: list[VideoData], norm: StateNorm) -> list[FrameSample]:
    samples = []
    for vd in videos:
        for t, row in enumerate(vd.states):
            objects = sorted(row["objects"], key=lambda o: o["mask_id"])
            if row.get("occluder"):
                objects = objects + [row["occluder"]]
            samples.append(FrameSample(
                objects=objects,
                mask=vd.masks[t],
                depth_norm=norm.normalize_depth_map(vd.depths[t]),
            ))
    return samples


def batch_loss(params: dict, norm: StateNorm, batch: list[FrameSample],
               resolution: int) -> ad.Tensor:
    feats = np.concatenate([norm.features(s.objects) for s in batch])
    logits, depths = render_maps(params, feats, resolution)
    lam = params["lambda"]
    losses = []
    offset = 0
    for s in batch:
        k = len(s.objects)
        cat, depth = compose(
            ad.narrow(logits, 0, offset, k), ad.narrow(depths, 0, offset, k), lam)
        losses.append(render_loss(cat, depth, s.mask, s.depth_norm))
        offset += k
    total = losses[0]
    for term in losses[1:]:
        total = ad.add(total, term)
    return ad.mul(total, 1.0 / len(batch))


def evaluate(params: dict, norm: StateNorm, samples: list[FrameSample],
             resolution: int) -> dict:
    losses, accs, ious = [], [], []
    for s in samples:
        feats = norm.features(s.objects)
        logits, depths = render_maps(params, feats, resolution)
        cat, depth = compose(logits, depths, params["lambda"])
        losses.append(render_loss(cat, depth, s.mask, s.depth_norm).item())
        m = mask_metrics(cat.data, s.mask)
        accs.append(m["pixel_acc"])
        ious.extend(m["ious"])
    return {
        "loss": float(np.mean(losses)),
        "pixel_acc": float(np.mean(accs)),
        "mean_iou": float(np.mean(ious)) if ious else 0.0,
    }


def train_renderer(dataset_root: str | Path, config: RendererTrainConfig,
                   out_stem: str | Path | None = None,
                   log=print) -> tuple[dict, StateNorm, list[dict]]:
    """Adam + plateau schedule on the renderer-pretrain split."""
    video_dirs = list_split(dataset_root, "renderer")
    if not video_dirs:
        raise ContractError("renderer split is empty")
    videos = [load_video(d) for d in video_dirs]
    meta = videos[0].meta
    resolution = meta["resolution"]
    lo, hi = meta["depth_norm"]
    norm = StateNorm(resolution, lo, hi)

    samples = frame_samples(videos, norm)
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(samples))
    n_val = min(config.val_frames, len(samples) // 5)
    val = [samples[i] for i in order[:n_val]]
    train = [samples[i] for i in order[n_val:]]

    params = init_params(RendererConfig(resolution=resolution, seed=config.seed))
    opt = ad.Adam(params, lr=config.lr)
    sched = ad.PlateauScheduler(opt, patience=config.patience)
    history = []
    for epoch in range(config.epochs):
        t0 = time.time()
        picks = rng.choice(len(train), size=min(config.frames_per_epoch, len(train)),
                           replace=False)
        epoch_losses = []
        for start in range(0, len(picks), config.batch_frames):
            batch = [train[i] for i in picks[start : start + config.batch_frames]]
            opt.zero_grad()
            loss = batch_loss(params, norm, batch, resolution)
            loss.backward()
            opt.step()
            epoch_losses.append(loss.item())
        val_loss = float(np.mean([
            batch_loss(params, norm, val[i : i + config.batch_frames],
                       resolution).item()
            for i in range(0, len(val), config.batch_frames)]))
        sched.update(val_loss)
        entry = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses)),
                 "val_loss": val_loss, "lr": opt.lr,
                 "lambda": params["lambda"].item(),
                 "seconds": round(time.time() - t0, 2)}
        history.append(entry)
        log(f"[renderer] epoch {epoch:3d} train {entry['train_loss']:.4f} "
            f"val {val_loss:.4f} lambda {entry['lambda']:+.2f} lr {opt.lr:.1e} "
            f"({entry['seconds']}s)")
    if out_stem is not None:
        save_renderer(out_stem, params, norm, history)
    return params, norm, history


def save_renderer(stem: str | Path, params: dict, norm: StateNorm,
                  history: list[dict] | None = None) -> None:
    meta = {"kind": "renderer", "norm": norm.to_meta()}
    if history:
        meta["final"] = history[-1]
    ad.save_checkpoint(stem, params, meta)


def load_renderer(stem: str | Path) -> tuple[dict, StateNorm]:
    arrays, meta = ad.load_checkpoint(stem)
    params = {}
    for name, arr in arrays.items():
        params[name] = ad.Tensor(arr if arr.shape != () else float(arr),
                                 requires_grad=True)
    return params, StateNorm.from_meta(meta["norm"])
