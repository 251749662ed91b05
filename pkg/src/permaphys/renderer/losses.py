"""Reconstruction losses: per-pixel mask NLL plus depth MSE."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import ContractError
from .model import EPS

MASK_WEIGHT = 0.7
DEPTH_WEIGHT = 0.3


def one_hot_channels(target_ids: np.ndarray, n_channels: int) -> np.ndarray:
    """[C,H,W] indicator of the target channel at every pixel."""
    if int(target_ids.max(initial=0)) >= n_channels:
        raise ContractError(
            f"target id {int(target_ids.max())} outside {n_channels} channels")
    h, w = target_ids.shape
    onehot = np.zeros((n_channels, h, w))
    flat = target_ids.reshape(-1).astype(int)
    onehot.reshape(n_channels, -1)[flat, np.arange(h * w)] = 1.0
    return onehot


def mask_nll(categorical: ad.Tensor, target_ids: np.ndarray,
             reduce: str = "mean") -> ad.Tensor:
    """Negative log-likelihood of the target id under the categorical."""
    onehot = one_hot_channels(target_ids, categorical.shape[0])
    selected = ad.sum_axis(ad.mul(categorical, ad.constant(onehot)), 0)
    logp = ad.log(ad.add(selected, EPS))
    total = ad.reduce_mean(logp) if reduce == "mean" else ad.reduce_sum(logp)
    return ad.mul(total, -1.0)


def render_loss(categorical: ad.Tensor, depth: ad.Tensor,
                target_ids: np.ndarray, target_depth: np.ndarray) -> ad.Tensor:
    """0.7 * mean pixel NLL + 0.3 * depth MSE (target depth in [-1,1])."""
    l_mask = mask_nll(categorical, target_ids, reduce="mean")
    l_depth = ad.reduce_mean(ad.square(ad.sub(depth, ad.constant(target_depth))))
    return ad.add(ad.mul(l_mask, MASK_WEIGHT), ad.mul(l_depth, DEPTH_WEIGHT))


def mask_metrics(categorical: np.ndarray, target_ids: np.ndarray) -> dict:
    """Pixel accuracy and per-object IoU of the argmax segmentation."""
    pred = categorical.argmax(axis=0)
    acc = float((pred == target_ids).mean())
    ious = []
    for obj_id in np.unique(target_ids):
        if obj_id == 0:
            continue
        inter = float(((pred == obj_id) & (target_ids == obj_id)).sum())
        union = float(((pred == obj_id) | (target_ids == obj_id)).sum())
        if union > 0:
            ious.append(inter / union)
    return {"pixel_acc": acc, "ious": ious}
