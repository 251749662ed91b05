"""Compositional renderer: per-object mask/depth nets + softmin compositing.

Each object state is tiled into a 16x16 position-field tensor (the state
vector plus per-cell x,y coordinates), pushed through 1x1/3x3 conv blocks
with ReLU pre-activation and bilinear upsampling to 128x128, and reduced to
two channels: a mask logit map and a depth map. Scenes are composed with a
per-pixel softmax over lambda * depth, which for negative lambda selects the
nearest object while staying differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad

BASE_GRID = 16
NATIVE_RES = 128          # BASE_GRID * 2**3
FEATURE_DIM = 14          # px, py, d, size, class(3), rgb(3), quad(4)
CLASS_INDEX = {"ball": 0, "box": 1, "occluder": 2}
EPS = 1e-12


@dataclass
class RendererConfig:
    resolution: int = 64          # output maps are average-pooled to this
    seed: int = 0

    def __post_init__(self):
        if NATIVE_RES % self.resolution or self.resolution > NATIVE_RES:
            raise ValueError(f"resolution must divide {NATIVE_RES}")


def _conv_init(rng: np.random.Generator, f: int, c: int, k: int) -> ad.Tensor:
    bound = float(np.sqrt(1.0 / (c * k * k)))
    return ad.Tensor(rng.uniform(-bound, bound, (f, c, k, k)), requires_grad=True)


def init_params(config: RendererConfig) -> dict[str, ad.Tensor]:
    """Conv weights plus the compositing scalar; the final conv starts at zero
    so an untrained net emits flat logits (sigmoid 0.5 everywhere)."""
    rng = np.random.default_rng(config.seed)
    p: dict[str, ad.Tensor] = {}
    cin = FEATURE_DIM + 2
    p["stem.w"] = _conv_init(rng, 16, cin, 1)
    p["stem.b"] = ad.zeros((16,), requires_grad=True)
    for blk in range(3):
        p[f"b{blk}.c1.w"] = _conv_init(rng, 4, 16, 1)
        p[f"b{blk}.c1.b"] = ad.zeros((4,), requires_grad=True)
        p[f"b{blk}.c2.w"] = _conv_init(rng, 4, 4, 3)
        p[f"b{blk}.c2.b"] = ad.zeros((4,), requires_grad=True)
        p[f"b{blk}.c3.w"] = _conv_init(rng, 16, 4, 1)
        p[f"b{blk}.c3.b"] = ad.zeros((16,), requires_grad=True)
    p["head.w"] = ad.zeros((2, 16, 1, 1), requires_grad=True)
    p["head.b"] = ad.zeros((2,), requires_grad=True)
    p["lambda"] = ad.Tensor(-1.0, requires_grad=True)
    return p


@dataclass
class StateNorm:
    """Maps raw 2.5D states into the renderer's normalized feature space."""
    resolution: int
    depth_lo: float
    depth_hi: float

    def to_meta(self) -> dict:
        return {"resolution": self.resolution,
                "depth_lo": self.depth_lo, "depth_hi": self.depth_hi}

    @staticmethod
    def from_meta(meta: dict) -> "StateNorm":
        return StateNorm(meta["resolution"], meta["depth_lo"], meta["depth_hi"])

    def normalize_depth_map(self, depth: np.ndarray) -> np.ndarray:
        return 2.0 * (depth - self.depth_lo) / (self.depth_hi - self.depth_lo) - 1.0

    def position_scale(self) -> tuple[np.ndarray, np.ndarray]:
        """offset, scale so that feat = (raw + offset) * scale for (px,py,d)."""
        w = float(self.resolution)
        span = self.depth_hi - self.depth_lo
        offset = np.array([0.5, 0.5, -self.depth_lo])
        scale = np.array([1.0 / w, 1.0 / w, 1.0 / span])
        return offset, scale

    def const_features(self, obj: dict) -> np.ndarray:
        """Intrinsic part of the feature vector (size, class, rgb, quad)."""
        w = float(self.resolution)
        cls = np.zeros(3)
        cls[CLASS_INDEX[obj["class"]]] = 1.0
        quad = np.zeros(4)
        if obj.get("quad") is not None:
            q = np.asarray(obj["quad"], dtype=float)
            quad = (q + 0.5) / w
        return np.concatenate([[obj["size"] / w], cls, np.asarray(obj["rgb"], float), quad])

    def features(self, objects: list[dict]) -> np.ndarray:
        """Full feature matrix for ground-truth state dicts."""
        offset, scale = self.position_scale()
        rows = []
        for obj in objects:
            pos = (np.asarray(obj["p"], dtype=float) + offset) * scale
            rows.append(np.concatenate([pos, self.const_features(obj)]))
        return np.stack(rows) if rows else np.zeros((0, FEATURE_DIM))


def features_from_tensor(norm: StateNorm, pos: ad.Tensor,
                         const_feats: np.ndarray) -> ad.Tensor:
    """Differentiable feature assembly from a [B,3] position tensor."""
    offset, scale = norm.position_scale()
    b = pos.shape[0]
    off_t = ad.constant(np.tile(offset, (b, 1)))
    scale_t = ad.constant(np.tile(scale, (b, 1)))
    pos_n = ad.mul(ad.add(pos, off_t), scale_t)
    return ad.concat([pos_n, ad.constant(const_feats)], axis=1)


def _coord_field(batch: int) -> np.ndarray:
    ax = (np.arange(BASE_GRID) + 0.5) / BASE_GRID
    xs, ys = np.meshgrid(ax, ax)
    field = np.stack([xs, ys])  # channel 0: x (column), channel 1: y (row)
    return np.broadcast_to(field, (batch, 2, BASE_GRID, BASE_GRID)).copy()


def render_maps(params: dict[str, ad.Tensor], feats: ad.Tensor | np.ndarray,
                resolution: int) -> tuple[ad.Tensor, ad.Tensor]:
    """Mask logits and depth maps, each [B, resolution, resolution]."""
    if not isinstance(feats, ad.Tensor):
        feats = ad.constant(feats)
    b = feats.shape[0]
    x = ad.concat([ad.broadcast_spatial(feats, BASE_GRID, BASE_GRID),
                   ad.constant(_coord_field(b))], axis=1)
    x = ad.conv2d(x, params["stem.w"], params["stem.b"])
    for blk in range(3):
        if blk > 0:
            x = ad.upsample2x(x)
        x = ad.conv2d(ad.relu(x), params[f"b{blk}.c1.w"], params[f"b{blk}.c1.b"])
        x = ad.conv2d(ad.relu(x), params[f"b{blk}.c2.w"], params[f"b{blk}.c2.b"])
        x = ad.conv2d(ad.relu(x), params[f"b{blk}.c3.w"], params[f"b{blk}.c3.b"])
    # the 1x1 head commutes with bilinear upsampling, so it runs at 64x64
    # before the last upsample; the composition still maps 16x16 -> 128x128
    x = ad.conv2d(ad.relu(x), params["head.w"], params["head.b"])
    x = ad.upsample2x(x)
    res = NATIVE_RES
    while res > resolution:
        x = ad.avgpool2x(x)
        res //= 2
    depth = ad.reshape(ad.narrow(x, 1, 0, 1), (b, res, res))
    logits = ad.reshape(ad.narrow(x, 1, 1, 1), (b, res, res))
    return logits, depth


def compose(logits: ad.Tensor, depths: ad.Tensor, lam: ad.Tensor
            ) -> tuple[ad.Tensor, ad.Tensor]:
    """Occlusion-aware composition of K per-object maps.

    Returns a per-pixel categorical over [background, object 1..K] and the
    composed depth map. Weights are a softmax over lambda * depth, so large
    negative lambda approaches a hard minimum-depth selection.
    """
    weights = ad.softmax_over_channel(ad.mul(depths, lam), axis=0)
    obj_probs = ad.mul(weights, ad.sigmoid(logits))
    fg = ad.sum_axis(obj_probs, 0)
    bg = ad.relu(ad.sub(ad.constant(np.ones(fg.shape)), fg))
    h, w = fg.shape
    categorical = ad.concat([ad.reshape(bg, (1, h, w)), obj_probs], axis=0)
    depth = ad.sum_axis(ad.mul(weights, depths), 0)
    return categorical, depth


def compose_empty(resolution: int) -> tuple[ad.Tensor, ad.Tensor]:
    """No objects: all background at far depth."""
    shape = (resolution, resolution)
    return (ad.constant(np.ones((1, *shape))), ad.constant(np.full(shape, 1.0)))
