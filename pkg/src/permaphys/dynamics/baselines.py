"""Reference predictors: constant-velocity extrapolation and a padded MLP."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from .model import POS, STATE_DIM, TAU, VEL, StateScaler

MAX_SLOTS = 9            # 6 balls + 2 boxes + occluder
MLP_HIDDEN = 180
MLP_LAYERS = 4


def linear_rollout(states0: np.ndarray, horizon: int) -> np.ndarray:
    """p_t = p_0 + t * v_0 for every object; [horizon+1, N, 16]."""
    out = np.repeat(states0[None], horizon + 1, axis=0).copy()
    for t in range(1, horizon + 1):
        out[t, :, POS] = states0[:, POS] + t * states0[:, VEL]
    return out


def init_mlp_params(seed: int = 0) -> dict[str, ad.Tensor]:
    rng = np.random.default_rng(seed)
    sizes = [MAX_SLOTS * STATE_DIM] + [MLP_HIDDEN] * MLP_LAYERS + [MAX_SLOTS * 3]
    p: dict[str, ad.Tensor] = {}
    for li, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if li == len(sizes) - 2:
            w = np.zeros((n_in, n_out))
        else:
            w = rng.uniform(-1, 1, (n_in, n_out)) * np.sqrt(2.0 / n_in)
        p[f"mlp.{li}.w"] = ad.Tensor(w, requires_grad=True)
        p[f"mlp.{li}.b"] = ad.Tensor(np.zeros(n_out), requires_grad=True)
    return p


class MLPBaseline:
    """Fixed-arity MLP over zero-padded object slots, same Taylor update."""

    def __init__(self, params: dict, scaler: StateScaler):
        self.params = params
        self.scaler = scaler

    def forward(self, slots: ad.Tensor, batch: int) -> ad.Tensor:
        """[B, MAX_SLOTS*STATE_DIM] standardized slots -> [B*MAX_SLOTS, 3] d_v."""
        x = slots
        for li in range(MLP_LAYERS + 1):
            x = ad.linear(x, self.params[f"mlp.{li}.w"], self.params[f"mlp.{li}.b"])
            if li < MLP_LAYERS:
                x = ad.relu(x)
        return ad.reshape(x, (batch * MAX_SLOTS, 3))

    def standardize(self, states: np.ndarray) -> np.ndarray:
        """[B,N,16] raw -> [B, MAX_SLOTS*16] standardized, zero padded."""
        b, n, _ = states.shape
        std = (states - self.scaler.mean) / self.scaler.std
        slots = np.zeros((b, MAX_SLOTS, STATE_DIM))
        slots[:, :n] = std
        return slots.reshape(b, -1)

    def step_np(self, states: np.ndarray, dynamic: np.ndarray) -> np.ndarray:
        b_in = self.standardize(states[None])
        d_v = self.forward(ad.constant(b_in), 1).data[: states.shape[0]]
        out = states.copy()
        upd = dynamic.astype(bool)
        out[upd, POS] = states[upd, POS] + states[upd, VEL] + 0.5 * d_v[upd]
        out[upd, VEL] = states[upd, VEL] + d_v[upd]
        out[~upd, POS] = states[~upd, POS] + states[~upd, VEL]
        return out

    def rollout_np(self, states0: np.ndarray, horizon: int,
                   dynamic: np.ndarray | None = None,
                   statics_at: "callable | None" = None) -> np.ndarray:
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

    def save(self, stem: str | Path) -> None:
        tensors = dict(self.params)
        tensors["scaler.mean"] = ad.Tensor(self.scaler.mean)
        tensors["scaler.std"] = ad.Tensor(self.scaler.std)
        ad.save_checkpoint(stem, tensors, {"kind": "mlp-baseline"})

    @staticmethod
    def load(stem: str | Path) -> "MLPBaseline":
        arrays, _ = ad.load_checkpoint(stem)
        scaler = StateScaler(arrays.pop("scaler.mean"), arrays.pop("scaler.std"))
        params = {n: ad.Tensor(a, requires_grad=True) for n, a in arrays.items()}
        return MLPBaseline(params, scaler)
