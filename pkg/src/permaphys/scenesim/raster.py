"""Ground-truth rasterization: z-buffered instance masks and depth maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import Camera
from .world import Ball, StaticBox, WorldState3D


@dataclass
class RasterObject:
    """One object in 2.5D raster form."""
    kind: str                    # "disc" | "hull" | "polygon"
    px: float
    py: float
    dist: float                  # distance to the object center / plane
    r_px: float = 0.0            # disc apparent radius
    px_per_unit: float = 1.0     # local pixel scale, for spherical depth
    hull: np.ndarray | None = None   # (V,2) screen points for hull/polygon


@dataclass
class FrameObservation:
    mask: np.ndarray             # (H,W) uint8 ids: 0 bg, 1..N objects, N+1 occluder
    depth: np.ndarray            # (H,W) float64 surface distance
    visible_px: np.ndarray       # count per id, length N+2
    n_objects: int

    @property
    def occluder_id(self) -> int:
        return self.n_objects + 1


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull of (n,2) points, counter-clockwise."""
    pts = np.unique(points, axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross2(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and cross2(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def fill_polygon(verts: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test over a pixel grid."""
    inside = np.zeros(xs.shape, dtype=bool)
    n = len(verts)
    for k in range(n):
        x1, y1 = verts[k]
        x2, y2 = verts[(k + 1) % n]
        if y1 == y2:
            continue
        cond = (y1 > ys) != (y2 > ys)
        xint = x1 + (ys - y1) * (x2 - x1) / (y2 - y1)
        inside ^= cond & (xs < xint)
    return inside


def ball_to_raster(ball: Ball, cam: Camera) -> RasterObject:
    px, py, dist = cam.project_points(ball.pos[None])
    r_px = cam.apparent_radius(ball.pos, ball.radius)
    if ball.shape == "cube":
        corners = ball.pos + ball.radius * np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
        cx, cy, _ = cam.project_points(corners)
        return RasterObject("hull", float(px[0]), float(py[0]), float(dist[0]),
                            r_px=r_px, hull=convex_hull(np.stack([cx, cy], axis=1)))
    return RasterObject("disc", float(px[0]), float(py[0]), float(dist[0]),
                        r_px=r_px, px_per_unit=r_px / ball.radius)


def box_to_raster(box: StaticBox, cam: Camera) -> RasterObject:
    corners = box.center + box.half * np.array(
        [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    cx, cy, _ = cam.project_points(corners)
    px, py, dist = cam.project_points(box.center[None])
    return RasterObject("hull", float(px[0]), float(py[0]), float(dist[0]),
                        hull=convex_hull(np.stack([cx, cy], axis=1)))


def occluder_to_raster(verts_world: np.ndarray, cam: Camera) -> RasterObject:
    px, py, _ = cam.project_points(verts_world)
    d_occ = cam.occluder_distance()
    return RasterObject("polygon", float(px.mean()), float(py.mean()), d_occ,
                        hull=np.stack([px, py], axis=1))


def _paint(obj: RasterObject, mask: np.ndarray, depth: np.ndarray, obj_id: int,
           xs: np.ndarray, ys: np.ndarray) -> None:
    if obj.kind == "disc":
        rr2 = (xs - obj.px) ** 2 + (ys - obj.py) ** 2
        cover = rr2 <= obj.r_px ** 2
        if not cover.any():
            return
        r_w = obj.r_px / obj.px_per_unit
        rho2 = rr2 / obj.px_per_unit ** 2
        cand = obj.dist - np.sqrt(np.maximum(r_w ** 2 - rho2, 0.0))
    else:
        if obj.hull is None or len(obj.hull) < 3:
            return
        cover = fill_polygon(obj.hull, xs, ys)
        if not cover.any():
            return
        cand = np.full(xs.shape, obj.dist)
    win = cover & (cand < depth)
    mask[win] = obj_id
    depth[win] = cand[win]


def rasterize(objects: list[RasterObject], occluder: RasterObject | None,
              cam: Camera, id_perm: np.ndarray) -> FrameObservation:
    """Paint objects with z-test; `id_perm[k]` is the mask id of object k."""
    n = cam.resolution
    xs, ys = np.meshgrid(np.arange(n, dtype=float), np.arange(n, dtype=float))
    depth = cam.floor_depth_map().astype(np.float64).copy()
    mask = np.zeros((n, n), dtype=np.uint8)
    for k, obj in enumerate(objects):
        _paint(obj, mask, depth, int(id_perm[k]), xs, ys)
    n_objects = len(objects)
    if occluder is not None:
        _paint(occluder, mask, depth, n_objects + 1, xs, ys)
    counts = np.bincount(mask.reshape(-1), minlength=n_objects + 2)
    return FrameObservation(mask=mask, depth=depth,
                            visible_px=counts[: n_objects + 2], n_objects=n_objects)


def rasterize_state(state: WorldState3D, cam: Camera, id_perm: np.ndarray,
                    skip_ball: int | None = None) -> FrameObservation:
    """Rasterize a world state; `skip_ball` omits one ball (deletion events)."""
    objects: list[RasterObject] = []
    for i, ball in enumerate(state.balls):
        if i == skip_ball:
            objects.append(RasterObject("disc", -1e9, -1e9, 1e9, r_px=0.0))
        else:
            objects.append(ball_to_raster(ball, cam))
    for box in state.boxes:
        objects.append(box_to_raster(box, cam))
    occ = None
    if state.occluder_verts is not None:
        occ = occluder_to_raster(state.occluder_verts, cam)
    return rasterize(objects, occ, cam, id_perm)
