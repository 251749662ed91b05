"""Deterministic procedural worlds: balls bouncing in a 200^3 box.

Physics: fixed-step integration at 4 substeps per frame, exact parabolic
flight under gravity, perfectly elastic impulse collisions (mass ~ r^3).
Velocities are reflected without positional correction, so kinetic plus
potential energy is conserved to within the tiny rest-clamp losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

BOX_EXTENT = 200.0
GRAVITY = 9.8          # world units per frame^2, along -z
SUBSTEPS = 4
REST_SPEED = 0.35      # |vz| below this at floor contact comes to rest
RADIUS_RANGE = (10.0, 40.0)
SPEED_RANGE = (-25.0, 25.0)


class GenerationError(RuntimeError):
    """Could not place objects without overlap after the retry budget."""


@dataclass
class WorldConfig:
    n_balls: int = 3
    n_boxes: int = 0
    frames: int = 30
    tilt_deg: float = 90.0
    occluder: bool = False
    resolution: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_balls <= 6:
            raise ValueError(f"n_balls must be in [1,6], got {self.n_balls}")
        if not 0 <= self.n_boxes <= 2:
            raise ValueError(f"n_boxes must be in [0,2], got {self.n_boxes}")
        if not 0.0 < self.tilt_deg <= 90.0:
            raise ValueError(f"tilt_deg must be in (0, 90], got {self.tilt_deg}")


@dataclass
class Ball:
    pos: np.ndarray          # (3,) center, world units
    vel: np.ndarray          # (3,) units per frame
    radius: float
    rgb: np.ndarray          # (3,) in [0,1]
    shape: str = "ball"      # "ball" or "cube" (after shape-change injection)

    def copy(self) -> "Ball":
        return Ball(self.pos.copy(), self.vel.copy(), self.radius,
                    self.rgb.copy(), self.shape)

    @property
    def mass(self) -> float:
        return self.radius ** 3


@dataclass
class StaticBox:
    center: np.ndarray       # (3,)
    half: np.ndarray         # (3,) half extents


@dataclass
class WorldState3D:
    balls: list[Ball]
    boxes: list[StaticBox]
    occluder_verts: np.ndarray | None = None   # (V,3) world coords
    occluder_vel: np.ndarray | None = None     # (3,) units per frame

    def copy(self) -> "WorldState3D":
        return WorldState3D(
            [b.copy() for b in self.balls],
            self.boxes,
            None if self.occluder_verts is None else self.occluder_verts.copy(),
            None if self.occluder_vel is None else self.occluder_vel.copy(),
        )


def resolve_ball_ball(b1: Ball, b2: Ball) -> None:
    """Elastic impulse along the center line; conserves momentum and energy."""
    delta = b1.pos - b2.pos
    dist = float(np.linalg.norm(delta))
    if dist == 0.0:
        return
    n = delta / dist
    u1 = float(b1.vel @ n)
    u2 = float(b2.vel @ n)
    m1, m2 = b1.mass, b2.mass
    new_u1 = ((m1 - m2) * u1 + 2.0 * m2 * u2) / (m1 + m2)
    new_u2 = ((m2 - m1) * u2 + 2.0 * m1 * u1) / (m1 + m2)
    b1.vel = b1.vel + (new_u1 - u1) * n
    b2.vel = b2.vel + (new_u2 - u2) * n


def _aabb_closest_point(p: np.ndarray, box: StaticBox) -> np.ndarray:
    return np.clip(p, box.center - box.half, box.center + box.half)


def _is_supported(ball: Ball, boxes: list[StaticBox]) -> bool:
    """Resting on the floor or on a box top: gravity is cancelled."""
    if abs(ball.vel[2]) > 1e-9:
        return False
    if ball.pos[2] <= ball.radius + 1e-9:
        return True
    for box in boxes:
        top = box.center[2] + box.half[2]
        if (abs(ball.pos[2] - (top + ball.radius)) <= 1e-9
                and abs(ball.pos[0] - box.center[0]) <= box.half[0]
                and abs(ball.pos[1] - box.center[1]) <= box.half[1]):
            return True
    return False


def _collide(balls: list[Ball], boxes: list[StaticBox]) -> None:
    """One pass of rounds of pairwise/wall/box resolution after a move."""
    for _ in range(8):
        hit = False
        for i in range(len(balls)):
            b = balls[i]
            r = b.radius
            # walls on x and y, floor and ceiling on z
            for ax in (0, 1, 2):
                if b.pos[ax] < r and b.vel[ax] < 0.0:
                    if ax == 2 and abs(b.vel[2]) < REST_SPEED:
                        b.vel[2] = 0.0
                        b.pos[2] = r
                    else:
                        b.vel[ax] = -b.vel[ax]
                    hit = True
                elif b.pos[ax] > BOX_EXTENT - r and b.vel[ax] > 0.0:
                    b.vel[ax] = -b.vel[ax]
                    hit = True
            for box in boxes:
                cp = _aabb_closest_point(b.pos, box)
                delta = b.pos - cp
                dist = float(np.linalg.norm(delta))
                if 0.0 < dist < r:
                    n = delta / dist
                    vn = float(b.vel @ n)
                    if vn < 0.0:
                        if n[2] > 0.99 and abs(vn) < REST_SPEED:
                            b.vel -= vn * n
                            b.pos[2] = cp[2] + r
                        else:
                            b.vel -= 2.0 * vn * n
                        hit = True
            for j in range(i + 1, len(balls)):
                o = balls[j]
                delta = b.pos - o.pos
                if float(delta @ delta) < (r + o.radius) ** 2:
                    if float((b.vel - o.vel) @ delta) < 0.0:
                        resolve_ball_ball(b, o)
                        hit = True
        if not hit:
            break


def step_world(state: WorldState3D, substeps: int = SUBSTEPS) -> WorldState3D:
    """Advance one frame; the input state is not modified."""
    state = state.copy()
    h = 1.0 / substeps
    for _ in range(substeps):
        for b in state.balls:
            supported = _is_supported(b, state.boxes)
            b.pos[0] += b.vel[0] * h
            b.pos[1] += b.vel[1] * h
            if supported:
                b.pos[2] += b.vel[2] * h
            else:
                b.pos[2] += b.vel[2] * h - 0.5 * GRAVITY * h * h
                b.vel[2] -= GRAVITY * h
        _collide(state.balls, state.boxes)
    if state.occluder_verts is not None:
        state.occluder_verts = state.occluder_verts + state.occluder_vel
    return state


def total_energy(state: WorldState3D) -> float:
    """Kinetic plus gravitational potential energy of all balls."""
    e = 0.0
    for b in state.balls:
        e += 0.5 * b.mass * float(b.vel @ b.vel) + b.mass * GRAVITY * float(b.pos[2])
    return e


def _sample_initial_state(config: WorldConfig, rng: np.random.Generator) -> WorldState3D:
    boxes: list[StaticBox] = []
    for _ in range(config.n_boxes):
        for _ in range(100):
            half = np.array([rng.uniform(12, 25), rng.uniform(12, 25), rng.uniform(10, 20)])
            center = np.array([
                rng.uniform(half[0] + 1, BOX_EXTENT - half[0] - 1),
                rng.uniform(half[1] + 1, BOX_EXTENT - half[1] - 1),
                half[2],
            ])
            ok = all(
                np.max(np.abs(center[:2] - b.center[:2]) - (half[:2] + b.half[:2])) > 5.0
                for b in boxes
            )
            if ok:
                boxes.append(StaticBox(center, half))
                break
        else:
            raise GenerationError("could not place static boxes without overlap")

    balls: list[Ball] = []
    for _ in range(config.n_balls):
        for attempt in range(100):
            radius = rng.uniform(*RADIUS_RANGE)
            pos = np.array([rng.uniform(1.0, BOX_EXTENT),
                            rng.uniform(1.0, BOX_EXTENT),
                            radius])
            pos[0] = float(np.clip(pos[0], radius, BOX_EXTENT - radius))
            pos[1] = float(np.clip(pos[1], radius, BOX_EXTENT - radius))
            clear = all(
                float(np.linalg.norm(pos - b.pos)) > radius + b.radius + 1.0
                for b in balls
            ) and all(
                float(np.linalg.norm(pos - _aabb_closest_point(pos, bx))) > radius + 1.0
                for bx in boxes
            )
            if clear:
                vel = np.array([rng.uniform(*SPEED_RANGE), rng.uniform(*SPEED_RANGE), 0.0])
                balls.append(Ball(pos, vel, radius, rng.uniform(0.0, 1.0, 3)))
                break
        else:
            raise GenerationError("could not place balls without overlap after 100 tries")
    return WorldState3D(balls, boxes)


def simulate(config: WorldConfig, seed: int | None = None) -> list[WorldState3D]:
    """Full trajectory of `config.frames` states; deterministic per seed."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    state = _sample_initial_state(config, rng)
    if config.occluder:
        from .camera import Camera
        from .occluder import build_occluder_track

        cam = Camera.make(config.tilt_deg, config.resolution)
        verts, vel = build_occluder_track(cam, config.frames, rng)
        state.occluder_verts = verts
        state.occluder_vel = vel
    frames = [state]
    for _ in range(config.frames - 1):
        frames.append(step_world(frames[-1]))
    return frames


def continue_simulation(state: WorldState3D, n_frames: int) -> list[WorldState3D]:
    """Re-integrate forward from an (edited) state; excludes the input state."""
    frames = []
    cur = state
    for _ in range(n_frames):
        cur = step_world(cur)
        frames.append(cur)
    return frames
