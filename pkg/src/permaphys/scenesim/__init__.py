"""Deterministic scene simulator: worlds, cameras, rasterization, datasets."""

from .world import (
    BOX_EXTENT,
    GRAVITY,
    Ball,
    GenerationError,
    StaticBox,
    WorldConfig,
    WorldState3D,
    continue_simulation,
    resolve_ball_ball,
    simulate,
    step_world,
    total_energy,
)
from .camera import Camera, ProjectionError
from .raster import FrameObservation, RasterObject, rasterize, rasterize_state
from .events import InjectionError, SimVideo, inject_impossible
from .dataset import (
    DatasetError,
    GenSpec,
    VideoData,
    dataset_hash,
    list_pairs,
    list_split,
    load_video,
    make_dataset,
)
