"""Training on ground-truth state sequences with occlusion-masked loss."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..autodiff import ContractError
from ..scenesim.dataset import VideoData, list_split, load_video
from .baselines import MAX_SLOTS, MLPBaseline, init_mlp_params
from .model import (
    POS,
    STATE_DIM,
    TAU,
    VEL,
    DynamicsConfig,
    RecIntNet,
    StateScaler,
    init_params,
    mse_loss,
    nll_loss,
    predict,
    state_row,
    step,
)

SEQ_LEN = 10


@dataclass
class DynamicsTrainConfig:
    model: str = "rin"             # "rin" | "mlp"
    proba: bool = True
    epochs: int = 40
    warmup_epochs: int = 16        # MSE epochs before the heteroscedastic loss
    seqs_per_epoch: int = 1500
    batch: int = 16
    lr: float = 1e-3
    patience: int = 10
    seq_len: int = SEQ_LEN
    stride: int = 2
    val_videos: int = 10
    seed: int = 0


@dataclass
class VideoStates:
    """Per-frame state arrays for one video, stable object order."""
    states: np.ndarray     # (T, N, 16) with v_t = p_t - p_{t-1}
    visible: np.ndarray    # (T, N) bool
    dynamic: np.ndarray    # (N,) bool


def video_state_array(vd: VideoData) -> VideoStates:
    """GT states with velocities from position deltas; the occluder row is
    filled by constant-velocity extrapolation on frames where it is off-screen."""
    T = vd.meta["frames"]
    n_obj = vd.meta["n_objects"]
    has_occ = any(row.get("occluder") for row in vd.states)
    n_rows = n_obj + (1 if has_occ else 0)
    pos = np.zeros((T, n_rows, 3))
    intr = np.zeros((T, n_rows, STATE_DIM))
    visible = np.zeros((T, n_rows), dtype=bool)
    dynamic = np.zeros(n_rows, dtype=bool)

    for t, row in enumerate(vd.states):
        for obj in row["objects"]:
            i = obj["id"]
            intr[t, i] = state_row(obj, np.zeros(3))
            pos[t, i] = obj["p"]
            visible[t, i] = obj["visible_px"] > 0
            dynamic[i] = obj["class"] == "ball" or dynamic[i]
    if has_occ:
        i = n_obj
        known_t, known_p = [], []
        for t, row in enumerate(vd.states):
            occ = row.get("occluder")
            if occ:
                intr[t, i] = state_row(occ, np.zeros(3))
                pos[t, i] = occ["p"]
                visible[t, i] = True
                known_t.append(t)
                known_p.append(occ["p"])
        ts = np.asarray(known_t, dtype=float)
        ps = np.asarray(known_p)
        # least-squares line fit: exact for the rectilinear occluder
        a = np.stack([np.ones_like(ts), ts], axis=1)
        coef, *_ = np.linalg.lstsq(a, ps, rcond=None)
        template = intr[known_t[0], i]
        for t in range(T):
            if not visible[t, i]:
                intr[t, i] = template
                pos[t, i] = coef[0] + coef[1] * t
    states = intr
    states[:, :, POS] = pos
    states[1:, :, VEL] = pos[1:] - pos[:-1]
    states[0, :, VEL] = states[1, :, VEL]
    return VideoStates(states, visible, dynamic)


def seed_states(video: VideoStates, t0: int) -> np.ndarray:
    """State at t0+1 with velocity from the (t0, t0+1) position delta."""
    s = video.states[t0 + 1].copy()
    s[:, VEL] = video.states[t0 + 1, :, POS] - video.states[t0, :, POS]
    s[:, TAU] = 0.0
    return s


class _RINStep:
    def __init__(self, params, scaler):
        self.params = params
        self.scaler = scaler

    def __call__(self, s_t: ad.Tensor, batch: int, n: int):
        d_v, tau = predict(self.params, self.scaler, s_t, batch, n)
        return step(s_t, d_v, tau), tau


class _MLPStep:
    def __init__(self, params, scaler):
        self.params = params
        self.scaler = scaler
        self.mlp = MLPBaseline(params, scaler)

    def __call__(self, s_t: ad.Tensor, batch: int, n: int):
        rows = batch * n
        mean_t = ad.constant(np.tile(self.scaler.mean, (rows, 1)))
        inv_t = ad.constant(np.tile(1.0 / self.scaler.std, (rows, 1)))
        std = ad.mul(ad.sub(s_t, mean_t), inv_t)
        flat = ad.reshape(std, (batch, n * STATE_DIM))
        if n < MAX_SLOTS:
            pad = np.zeros((batch, (MAX_SLOTS - n) * STATE_DIM))
            flat = ad.concat([flat, ad.constant(pad)], axis=1)
        d_v_all = self.mlp.forward(flat, batch)
        keep = np.concatenate([np.arange(n) + b * MAX_SLOTS for b in range(batch)])
        d_v = ad.gather_rows(d_v_all, keep)
        tau = ad.constant(np.zeros((rows, 3)))
        return step(s_t, d_v, tau), tau


def sequence_loss(stepper, batch_videos: list[VideoStates], t0s: list[int],
                  seq_len: int, proba: bool) -> ad.Tensor:
    """Recurrent rollout over a batch of same-arity sequences."""
    batch = len(batch_videos)
    n = batch_videos[0].states.shape[1]
    seeds = np.stack([seed_states(v, t0) for v, t0 in zip(batch_videos, t0s)])
    dyn = np.stack([v.dynamic for v in batch_videos])          # (B,N)
    dyn_rows = np.repeat(dyn.astype(float).reshape(-1, 1), STATE_DIM, axis=1)
    s_t = ad.constant(seeds.reshape(batch * n, STATE_DIM))
    losses = []
    for k in range(2, seq_len):
        s_next, tau = stepper(s_t, batch, n)
        frame_gt = np.stack([v.states[t0 + k] for v, t0 in zip(batch_videos, t0s)])
        vis = np.stack([v.visible[t0 + k] for v, t0 in zip(batch_videos, t0s)])
        # teacher-force non-dynamic rows (boxes stay put, occluder slides)
        gt_rows = frame_gt.reshape(batch * n, STATE_DIM)
        s_next = ad.add(ad.mul(s_next, ad.constant(dyn_rows)),
                        ad.constant(gt_rows * (1.0 - dyn_rows)))
        pred_p = ad.narrow(s_next, 1, 0, 3)
        weights = (vis.reshape(-1) & dyn.reshape(-1)).astype(float)
        target_p = gt_rows[:, POS]
        if proba:
            losses.append(nll_loss(pred_p, tau, target_p, weights, clamp_tau=True))
        else:
            losses.append(mse_loss(pred_p, target_p, weights))
        s_t = s_next
    total = losses[0]
    for term in losses[1:]:
        total = ad.add(total, term)
    return ad.mul(total, 1.0 / len(losses))


def train_dynamics(dataset_root: str | Path, config: DynamicsTrainConfig,
                   out_stem: str | Path | None = None, log=print):
    """Train the interaction network or the padded-MLP baseline."""
    video_dirs = list_split(dataset_root, "dynamics")
    if not video_dirs:
        raise ContractError("dynamics split is empty")
    videos = [video_state_array(load_video(d)) for d in video_dirs]
    if any(v.states.shape[0] < 3 for v in videos):
        raise ContractError("sequences need at least 3 frames")

    scaler = StateScaler.fit(np.concatenate([v.states.reshape(-1, STATE_DIM)
                                             for v in videos]))
    rng = np.random.default_rng(config.seed)
    n_val = min(config.val_videos, len(videos) // 5)
    val_videos = videos[:n_val]
    train_videos = videos[n_val:]

    if config.model == "rin":
        params = init_params(DynamicsConfig(proba=config.proba, seed=config.seed))
        stepper = _RINStep(params, scaler)
    elif config.model == "mlp":
        params = init_mlp_params(config.seed)
        stepper = _MLPStep(params, scaler)
    else:
        raise ValueError(f"unknown model '{config.model}'")

    def windows(vs: list[VideoStates]):
        out = []
        for vi, v in enumerate(vs):
            T = v.states.shape[0]
            for t0 in range(0, T - config.seq_len, config.stride):
                out.append((vi, t0))
        return out

    train_windows = windows(train_videos)
    val_windows = windows(val_videos)
    opt = ad.Adam(params, lr=config.lr)
    sched = ad.PlateauScheduler(opt, patience=config.patience)
    history = []

    def batched(windows_list, vs, shuffle_rng=None):
        """Group same-arity windows into batches."""
        by_n: dict[int, list] = {}
        for vi, t0 in windows_list:
            by_n.setdefault(vs[vi].states.shape[1], []).append((vi, t0))
        batches = []
        for group in by_n.values():
            if shuffle_rng is not None:
                shuffle_rng.shuffle(group)
            for s in range(0, len(group), config.batch):
                batches.append(group[s : s + config.batch])
        return batches

    for epoch in range(config.epochs):
        t0_clock = time.time()
        # the heteroscedastic loss self-dampens large errors, so positions
        # learn under plain MSE first and tau calibrates afterwards
        use_proba = (config.proba and config.model == "rin"
                     and epoch >= config.warmup_epochs)
        epoch_windows = train_windows
        if len(epoch_windows) > config.seqs_per_epoch:
            picks = rng.choice(len(epoch_windows), config.seqs_per_epoch, replace=False)
            epoch_windows = [train_windows[i] for i in picks]
        batches = batched(epoch_windows, train_videos, shuffle_rng=rng)
        rng.shuffle(batches)
        epoch_losses = []
        for batch in batches:
            opt.zero_grad()
            loss = sequence_loss(stepper, [train_videos[vi] for vi, _ in batch],
                                 [t0 for _, t0 in batch], config.seq_len, use_proba)
            loss.backward()
            for p in params.values():
                # single-object batches never touch the relation MLP
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            opt.step()
            epoch_losses.append(loss.item())
        val_losses = [
            sequence_loss(stepper, [val_videos[vi] for vi, _ in b],
                          [t0 for _, t0 in b], config.seq_len, use_proba).item()
            for b in batched(val_windows, val_videos)
        ]
        val_loss = float(np.mean(val_losses)) if val_losses else float("nan")
        sched.update(val_loss)
        entry = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses)),
                 "val_loss": val_loss, "lr": opt.lr,
                 "seconds": round(time.time() - t0_clock, 2)}
        history.append(entry)
        log(f"[dynamics:{config.model}{'' if config.proba else '-noproba'}] "
            f"epoch {epoch:3d} train {entry['train_loss']:.4f} "
            f"val {val_loss:.4f} lr {opt.lr:.1e} ({entry['seconds']}s)")

    if config.model == "rin":
        model = RecIntNet(params, scaler, DynamicsConfig(config.proba, config.seed))
    else:
        model = MLPBaseline(params, scaler)
    if out_stem is not None:
        model.save(out_stem)
    return model, history
