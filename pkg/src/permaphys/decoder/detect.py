"""Detections from instance masks: centroid, mean depth, visible size."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DecodeError(RuntimeError):
    """Video cannot be decoded (e.g. no detections in any frame)."""


@dataclass
class Detection:
    px: float
    py: float
    depth: float          # mean of the depth map over the mask pixels
    size: int             # visible pixel count
    frame: int
    mask_id: int          # frame-local, carries no correspondence

    @property
    def point(self) -> np.ndarray:
        return np.array([self.px, self.py, self.depth])

    @property
    def radius_estimate(self) -> float:
        return float(np.sqrt(self.size / np.pi))


@dataclass
class OccluderDetection:
    px: float
    py: float
    depth: float
    size: int
    frame: int
    quad: list[float]     # axis-aligned corner box of the visible pixels


def detect(mask: np.ndarray, depth: np.ndarray, frame: int,
           occluder_id: int | None = None
           ) -> tuple[list[Detection], OccluderDetection | None]:
    """One Detection per nonzero id; the occluder is reported separately."""
    detections = []
    occluder = None
    for mid in np.unique(mask):
        if mid == 0:
            continue
        rows, cols = np.nonzero(mask == mid)
        cx, cy = float(cols.mean()), float(rows.mean())
        d = float(depth[rows, cols].mean())
        if occluder_id is not None and mid == occluder_id:
            occluder = OccluderDetection(
                px=cx, py=cy, depth=d, size=len(rows), frame=frame,
                quad=[float(cols.min()), float(rows.min()),
                      float(cols.max()), float(rows.max())])
        else:
            detections.append(Detection(px=cx, py=cy, depth=d, size=len(rows),
                                         frame=frame, mask_id=int(mid)))
    return detections, occluder


def detect_video(masks: np.ndarray, depths: np.ndarray,
                 occluder_id: int | None = None
                 ) -> tuple[list[list[Detection]], list[OccluderDetection | None]]:
    per_frame, occluders = [], []
    for t in range(masks.shape[0]):
        dets, occ = detect(masks[t], depths[t], t, occluder_id)
        per_frame.append(dets)
        occluders.append(occ)
    return per_frame, occluders
