"""Compositional rendering network and its training loop."""

from .model import (
    FEATURE_DIM,
    NATIVE_RES,
    RendererConfig,
    StateNorm,
    compose,
    compose_empty,
    features_from_tensor,
    init_params,
    render_maps,
)
from .losses import mask_metrics, mask_nll, one_hot_channels, render_loss
from .train import (
    RendererTrainConfig,
    evaluate,
    frame_samples,
    load_renderer,
    save_renderer,
    train_renderer,
)
