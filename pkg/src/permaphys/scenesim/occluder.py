"""Moving occluder: an irregular 8-vertex polygon on a camera-facing plane.

The polygon is scaled so it covers 25% of the frame when fully inside view,
sits nearer to the camera than any scene surface, and translates from the
bottom to the top of the frame at constant velocity over the whole video.
"""

from __future__ import annotations

import numpy as np

from .camera import Camera

# Irregular convex-ish blob, unit scale, centered near the origin.
CANONICAL_VERTS = np.array([
    [-1.00, -0.35], [-0.45, -0.78], [0.30, -0.55], [1.05, -0.30],
    [0.80, 0.28], [0.25, 0.72], [-0.30, 0.52], [-0.82, 0.30],
])
COVERAGE = 0.25


def polygon_area(verts: np.ndarray) -> float:
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _screen_to_plane(cam: Camera, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Lift screen points onto the occluder plane, returning world coords."""
    d_occ = cam.occluder_distance()
    if cam.mode == "ortho":
        x = (px + 0.5) / cam.scale
        y = (py + 0.5) / cam.scale
        from .camera import ORTHO_REF_HEIGHT

        z = np.full_like(x, ORTHO_REF_HEIGHT - d_occ)
        return np.stack([x, y, z], axis=-1)
    a = (px - cam.cx) * d_occ / cam.focal
    b = -(py - cam.cy) * d_occ / cam.focal
    return (cam.pos + d_occ * cam.forward
            + a[..., None] * cam.right + b[..., None] * cam.up)


def build_occluder_track(cam: Camera, frames: int,
                         rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Initial world vertices (8,3) and per-frame world velocity (3,)."""
    w = h = cam.resolution
    shape = CANONICAL_VERTS.copy()
    if rng.random() < 0.5:
        shape = shape[::-1] * np.array([-1.0, 1.0])
    s_px = np.sqrt(COVERAGE * w * h / polygon_area(shape))
    px_c = cam.cx + rng.uniform(-0.10, 0.10) * w
    half_h = s_px * (shape[:, 1].max() - shape[:, 1].min()) / 2.0
    py_start = (h - 1) + half_h + 1.0
    py_end = -half_h - 1.0
    vy_px = (py_end - py_start) / max(frames - 1, 1)

    px = px_c + s_px * shape[:, 0]
    py = py_start + s_px * shape[:, 1]
    verts0 = _screen_to_plane(cam, px, py)
    step = _screen_to_plane(cam, np.array([px_c]), np.array([py_start + vy_px]))
    base = _screen_to_plane(cam, np.array([px_c]), np.array([py_start]))
    vel = (step - base)[0]
    return verts0, vel
