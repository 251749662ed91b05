"""Recurrent pairwise-interaction dynamics in 2.5D.

State vector per object (16 features):
    [0:3]   p  = (p_x, p_y, depth) in pixel/depth units
    [3:6]   v  = per-frame velocity of p
    [6:13]  c  = (size, class one-hot x3, rgb x3), intrinsic and constant
    [13:16] tau = per-axis log variance of the position prediction

For every ordered pair (i, j) a relation MLP encodes the receiver state,
the relative position/velocity, and the sender intrinsics into an effect
vector; effects are summed per receiver and an object MLP maps them to a
velocity change d_v and a new tau. Integration is the Taylor update
p1 = p0 + v0 + d_v/2, v1 = v0 + d_v, so an all-zero network predicts
exactly linear motion.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .. import autodiff as ad

STATE_DIM = 16
POS, VEL, INTR, TAU = slice(0, 3), slice(3, 6), slice(6, 13), slice(13, 16)
PAIR_IN = STATE_DIM + 6 + 7      # receiver state, relative p/v, sender intrinsics
EFFECT_DIM = 32
OBJ_IN = STATE_DIM + EFFECT_DIM
HIDDEN = 64
CLASS_INDEX = {"ball": 0, "box": 1, "occluder": 2}


@dataclass
class DynamicsConfig:
    proba: bool = True           # False: deterministic variant trained with MSE
    seed: int = 0


@dataclass
class StateScaler:
    mean: np.ndarray
    std: np.ndarray

    @staticmethod
    def fit(states: np.ndarray) -> "StateScaler":
        """Per-feature statistics; tau columns stay at identity scaling."""
        mean = states.reshape(-1, STATE_DIM).mean(axis=0)
        std = states.reshape(-1, STATE_DIM).std(axis=0)
        mean[TAU] = 0.0
        std[TAU] = 1.0
        std = np.maximum(std, 1e-6)
        return StateScaler(mean, std)

    @staticmethod
    def identity() -> "StateScaler":
        return StateScaler(np.zeros(STATE_DIM), np.ones(STATE_DIM))


def _mlp_init(rng, sizes, zero_last=False):
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if zero_last and i == len(sizes) - 2:
            w = np.zeros((n_in, n_out))
        else:
            w = rng.uniform(-1, 1, (n_in, n_out)) * np.sqrt(2.0 / n_in)
        layers.append((w, np.zeros(n_out)))
    return layers


def init_params(config: DynamicsConfig) -> dict[str, ad.Tensor]:
    """Relation and object MLPs; final layers start at zero so the untrained
    model predicts d_v = 0 and tau = 0 (the linear-motion prior)."""
    rng = np.random.default_rng(config.seed)
    p: dict[str, ad.Tensor] = {}
    rel = _mlp_init(rng, [PAIR_IN, HIDDEN, HIDDEN, EFFECT_DIM], zero_last=True)
    obj = _mlp_init(rng, [OBJ_IN, HIDDEN, HIDDEN, 6], zero_last=True)
    for tag, layers in (("rel", rel), ("obj", obj)):
        for li, (w, b) in enumerate(layers):
            p[f"{tag}.{li}.w"] = ad.Tensor(w, requires_grad=True)
            p[f"{tag}.{li}.b"] = ad.Tensor(b, requires_grad=True)
    return p


@lru_cache(maxsize=256)
def _pair_indices(batch: int, n: int):
    """Flat receiver/sender row indices for all ordered pairs i != j."""
    recv, send = [], []
    for b in range(batch):
        for i in range(n):
            for j in range(n):
                if i != j:
                    recv.append(b * n + i)
                    send.append(b * n + j)
    return (np.asarray(recv, dtype=np.intp), np.asarray(send, dtype=np.intp))


def _mlp(params, tag, x, n_layers=3):
    for li in range(n_layers):
        x = ad.linear(x, params[f"{tag}.{li}.w"], params[f"{tag}.{li}.b"])
        if li < n_layers - 1:
            x = ad.relu(x)
    return x


def predict(params: dict, scaler: StateScaler, states: ad.Tensor,
            batch: int, n: int) -> tuple[ad.Tensor, ad.Tensor]:
    """(d_v, tau) tensors of shape [batch*n, 3] from flat [batch*n, 16] states."""
    rows = batch * n
    mean_t = ad.constant(np.tile(scaler.mean, (rows, 1)))
    inv_t = ad.constant(np.tile(1.0 / scaler.std, (rows, 1)))
    std_states = ad.mul(ad.sub(states, mean_t), inv_t)

    if n > 1:
        recv_idx, send_idx = _pair_indices(batch, n)
        recv = ad.gather_rows(std_states, recv_idx)
        send = ad.gather_rows(std_states, send_idx)
        rel_pv = ad.narrow(ad.sub(send, recv), 1, 0, 6)
        send_c = ad.narrow(send, 1, INTR.start, INTR.stop - INTR.start)
        pair_in = ad.concat([recv, rel_pv, send_c], axis=1)
        effects = _mlp(params, "rel", pair_in)
        agg = ad.segment_sum(effects, recv_idx, rows)
    else:
        agg = ad.constant(np.zeros((rows, EFFECT_DIM)))

    out = _mlp(params, "obj", ad.concat([std_states, agg], axis=1))
    d_v = ad.narrow(out, 1, 0, 3)
    tau = ad.narrow(out, 1, 3, 3)
    return d_v, tau


def step(states: ad.Tensor, d_v: ad.Tensor, tau: ad.Tensor) -> ad.Tensor:
    """Taylor update with dt = 1 frame; intrinsics carried over."""
    p0 = ad.narrow(states, 1, 0, 3)
    v0 = ad.narrow(states, 1, 3, 3)
    c = ad.narrow(states, 1, INTR.start, INTR.stop - INTR.start)
    p1 = ad.add(ad.add(p0, v0), ad.mul(d_v, 0.5))
    v1 = ad.add(v0, d_v)
    return ad.concat([p1, v1, c, tau], axis=1)


TAU_MIN, TAU_MAX = -2.0, 6.0


def _clamp(x: ad.Tensor, lo: float, hi: float) -> ad.Tensor:
    return ad.sub(ad.add(ad.relu(ad.sub(x, lo)), lo), ad.relu(ad.sub(x, hi)))


def nll_loss(pred_p: ad.Tensor, tau: ad.Tensor, target_p: np.ndarray,
             weights: np.ndarray, clamp_tau: bool = False) -> ad.Tensor:
    """Heteroscedastic loss (err^2 * exp(-tau) + tau), summed over axes.

    `weights` is [rows] with 0 for occluded or non-dynamic objects; the
    result is averaged over contributing rows. With clamp_tau the log
    variance is limited to [TAU_MIN, TAU_MAX] inside the loss so confident
    rows cannot amplify their error gradients without bound (the formula is
    unchanged wherever tau is in range).
    """
    if clamp_tau:
        tau = _clamp(tau, TAU_MIN, TAU_MAX)
    err2 = ad.square(ad.sub(pred_p, ad.constant(target_p)))
    per_axis = ad.add(ad.mul(err2, ad.exp(ad.mul(tau, -1.0))), tau)
    per_row = ad.sum_axis(per_axis, 1)
    w = np.asarray(weights, dtype=float)
    denom = max(float(w.sum()), 1.0)
    return ad.mul(ad.reduce_sum(ad.mul(per_row, ad.constant(w))), 1.0 / denom)


def mse_loss(pred_p: ad.Tensor, target_p: np.ndarray,
             weights: np.ndarray) -> ad.Tensor:
    err2 = ad.square(ad.sub(pred_p, ad.constant(target_p)))
    per_row = ad.sum_axis(err2, 1)
    w = np.asarray(weights, dtype=float)
    denom = max(float(w.sum()), 1.0)
    return ad.mul(ad.reduce_sum(ad.mul(per_row, ad.constant(w))), 1.0 / denom)


class RecIntNet:
    """Bundled parameters + scaler with rollout helpers."""

    def __init__(self, params: dict, scaler: StateScaler, config: DynamicsConfig):
        self.params = params
        self.scaler = scaler
        self.config = config

    def predict_np(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(d_v, tau) arrays for [N,16] states, no gradients retained."""
        n = states.shape[0]
        d_v, tau = predict(self.params, self.scaler,
                           ad.constant(states.reshape(n, STATE_DIM)), 1, n)
        return d_v.data.copy(), tau.data.copy()

    def step_np(self, states: np.ndarray, dynamic: np.ndarray) -> np.ndarray:
        """One predict+step; non-dynamic rows are never updated by the
        network and simply continue their own rectilinear motion."""
        d_v, tau = self.predict_np(states)
        out = states.copy()
        upd = dynamic.astype(bool)
        out[upd, POS] = states[upd, POS] + states[upd, VEL] + 0.5 * d_v[upd]
        out[upd, VEL] = states[upd, VEL] + d_v[upd]
        out[upd, TAU] = tau[upd]
        out[~upd, POS] = states[~upd, POS] + states[~upd, VEL]
        return out

    def rollout_np(self, states0: np.ndarray, horizon: int,
                   dynamic: np.ndarray | None = None,
                   statics_at: "callable | None" = None) -> np.ndarray:
        """Recurrent rollout; returns [horizon+1, N, 16] including the seed.

        `statics_at(t)` may supply ground-truth states for non-dynamic rows
        at step t (boxes keep still, the occluder translates).
        """
        n = states0.shape[0]
        if dynamic is None:
            dynamic = np.ones(n, dtype=bool)
        out = [states0.copy()]
        cur = states0.copy()
        for t in range(1, horizon + 1):
            cur = self.step_np(cur, dynamic)
            if statics_at is not None:
                gt = statics_at(t)
                if gt is not None:
                    cur[~dynamic.astype(bool)] = gt[~dynamic.astype(bool)]
            out.append(cur.copy())
        return np.stack(out)

    def save(self, stem: str | Path, extra_meta: dict | None = None) -> None:
        tensors = dict(self.params)
        tensors["scaler.mean"] = ad.Tensor(self.scaler.mean)
        tensors["scaler.std"] = ad.Tensor(self.scaler.std)
        meta = {"kind": "dynamics", "proba": self.config.proba,
                "seed": self.config.seed}
        if extra_meta:
            meta.update(extra_meta)
        ad.save_checkpoint(stem, tensors, meta)

    @staticmethod
    def load(stem: str | Path) -> "RecIntNet":
        arrays, meta = ad.load_checkpoint(stem)
        scaler = StateScaler(arrays.pop("scaler.mean"), arrays.pop("scaler.std"))
        params = {n: ad.Tensor(a, requires_grad=True) for n, a in arrays.items()}
        return RecIntNet(params, scaler,
                         DynamicsConfig(proba=bool(meta["proba"]), seed=meta["seed"]))


def state_row(obj: dict, velocity: np.ndarray, tau: np.ndarray | None = None) -> np.ndarray:
    """Build a 16-feature state vector from a ground-truth object dict."""
    row = np.zeros(STATE_DIM)
    row[POS] = obj["p"]
    row[VEL] = velocity
    row[6] = obj["size"]
    row[7 + CLASS_INDEX[obj["class"]]] = 1.0
    row[10:13] = obj["rgb"]
    row[TAU] = 0.0 if tau is None else tau
    return row
