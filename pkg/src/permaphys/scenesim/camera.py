"""Camera models mapping the 200^3 world to 2.5D pixel states and back.

The top view (tilt 90) is the orthographic limit: pixel coordinates are an
affine map of world x,y and depth is the distance to a reference plane.
Tilted views use a pinhole on a circle around the scene, with depth defined
as the Euclidean camera-to-point distance so back-projection is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .world import BOX_EXTENT

ORTHO_REF_HEIGHT = 400.0
PINHOLE_RADIUS = 500.0


class ProjectionError(ValueError):
    """Point cannot be projected (behind the camera)."""


@dataclass
class Camera:
    tilt_deg: float
    resolution: int
    mode: str                      # "ortho" | "pinhole"
    scale: float = 0.0             # ortho: pixels per world unit
    pos: np.ndarray | None = None  # pinhole origin
    right: np.ndarray | None = None
    up: np.ndarray | None = None
    forward: np.ndarray | None = None
    focal: float = 0.0
    cx: float = 0.0
    cy: float = 0.0

    @staticmethod
    def make(tilt_deg: float, resolution: int) -> "Camera":
        if tilt_deg >= 90.0 - 1e-9:
            return Camera(tilt_deg=90.0, resolution=resolution, mode="ortho",
                          scale=resolution / BOX_EXTENT,
                          cx=(resolution - 1) / 2.0, cy=(resolution - 1) / 2.0)
        theta = np.radians(tilt_deg)
        target = np.array([BOX_EXTENT / 2, BOX_EXTENT / 2, 0.0])
        pos = target + PINHOLE_RADIUS * np.array([0.0, -np.cos(theta), np.sin(theta)])
        fwd = (target - pos) / PINHOLE_RADIUS
        right = np.array([1.0, 0.0, 0.0])
        up = np.cross(right, fwd)
        up /= np.linalg.norm(up)
        cam = Camera(tilt_deg=tilt_deg, resolution=resolution, mode="pinhole",
                     pos=pos, right=right, up=up, forward=fwd,
                     cx=(resolution - 1) / 2.0, cy=(resolution - 1) / 2.0)
        cam.focal = cam._fit_focal()
        return cam

    def _fit_focal(self) -> float:
        """Largest focal length keeping the floor square inside the frame."""
        corners = np.array([
            [0, 0, 0], [BOX_EXTENT, 0, 0], [0, BOX_EXTENT, 0],
            [BOX_EXTENT, BOX_EXTENT, 0],
            [0, 0, 80], [BOX_EXTENT, 0, 80], [0, BOX_EXTENT, 80],
            [BOX_EXTENT, BOX_EXTENT, 80],
        ], dtype=float)
        q = corners - self.pos
        zf = q @ self.forward
        xo = (q @ self.right) / zf
        yo = (q @ self.up) / zf
        half = (self.resolution - 1) / 2.0 - 1.0
        return float(min(half / np.max(np.abs(xo)), half / np.max(np.abs(yo))))

    # ---- point projection ------------------------------------------------------

    def project_points(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(px, py, dist) for an (n,3) array of world points."""
        pts = np.atleast_2d(pts)
        if self.mode == "ortho":
            px = pts[:, 0] * self.scale - 0.5
            py = pts[:, 1] * self.scale - 0.5
            dist = ORTHO_REF_HEIGHT - pts[:, 2]
            return px, py, dist
        q = pts - self.pos
        zf = q @ self.forward
        if np.any(zf <= 0):
            raise ProjectionError("point behind the camera")
        px = self.cx + self.focal * (q @ self.right) / zf
        py = self.cy - self.focal * (q @ self.up) / zf
        dist = np.linalg.norm(q, axis=1)
        return px, py, dist

    def backproject(self, px: float, py: float, dist: float) -> np.ndarray:
        """Inverse of project_points for a single pixel state."""
        if self.mode == "ortho":
            x = (px + 0.5) / self.scale
            y = (py + 0.5) / self.scale
            z = ORTHO_REF_HEIGHT - dist
            return np.array([x, y, z])
        direction = ((px - self.cx) / self.focal * self.right
                     - (py - self.cy) / self.focal * self.up
                     + self.forward)
        direction /= np.linalg.norm(direction)
        return self.pos + dist * direction

    def apparent_radius(self, center: np.ndarray, radius: float) -> float:
        if self.mode == "ortho":
            return radius * self.scale
        zf = float((center - self.pos) @ self.forward)
        if zf <= 0:
            raise ProjectionError("point behind the camera")
        return self.focal * radius / zf

    def forward_depth(self, pts: np.ndarray) -> np.ndarray:
        """Depth along the view axis (used by the rasterizer for spheres)."""
        pts = np.atleast_2d(pts)
        if self.mode == "ortho":
            return ORTHO_REF_HEIGHT - pts[:, 2]
        return (pts - self.pos) @ self.forward

    # ---- background ------------------------------------------------------------

    def floor_depth_map(self) -> np.ndarray:
        """Per-pixel distance to the z=0 floor plane (far clamp outside it)."""
        n = self.resolution
        if self.mode == "ortho":
            return np.full((n, n), ORTHO_REF_HEIGHT)
        jj, ii = np.meshgrid(np.arange(n), np.arange(n))
        dirs = ((jj - self.cx)[..., None] / self.focal * self.right
                - (ii - self.cy)[..., None] / self.focal * self.up
                + self.forward)
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        dz = dirs[..., 2]
        t = np.where(dz < -1e-9, -self.pos[2] / np.minimum(dz, -1e-9), np.inf)
        far = PINHOLE_RADIUS + BOX_EXTENT * 1.5
        return np.minimum(t, far)

    def depth_bounds(self) -> tuple[float, float]:
        """[lo, hi] covering the occluder plane through the farthest floor pixel."""
        if self.mode == "ortho":
            lo = ORTHO_REF_HEIGHT - BOX_EXTENT  # highest conceivable surface
            hi = ORTHO_REF_HEIGHT
        else:
            lo = PINHOLE_RADIUS - BOX_EXTENT
            hi = float(self.floor_depth_map().max())
        return lo, hi

    def occluder_distance(self) -> float:
        """Distance of the occluder plane; nearer than any scene surface."""
        if self.mode == "ortho":
            return ORTHO_REF_HEIGHT - 160.0
        return PINHOLE_RADIUS - 160.0

    def to_json(self) -> dict:
        return {"tilt_deg": self.tilt_deg, "resolution": self.resolution}

    @staticmethod
    def from_json(d: dict) -> "Camera":
        return Camera.make(d["tilt_deg"], d["resolution"])
