"""Injection of physically impossible events into simulated videos."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import Camera
from .raster import rasterize_state
from .world import BOX_EXTENT, WorldConfig, WorldState3D, continue_simulation

KINDS = ("disappear", "shape_change", "teleport")
VISIBILITIES = ("visible", "occluded")
MIN_TELEPORT = 40.0


class InjectionError(RuntimeError):
    """No frame window satisfies the requested visibility condition."""


@dataclass
class SimVideo:
    config: WorldConfig
    camera: Camera
    frames: list[WorldState3D]
    event: dict | None = None

    def hidden_ball_at(self, t: int) -> int | None:
        """Index of the ball removed from rasterization at frame t, if any."""
        if self.event and self.event["kind"] == "disappear" and t >= self.event["t_e"]:
            return self.event["ball"]
        return None


def _identity_perm(state: WorldState3D) -> np.ndarray:
    return np.arange(1, len(state.balls) + len(state.boxes) + 1)


def _ball_visible_px(state: WorldState3D, ball: int, cam: Camera,
                     with_occluder: bool = True) -> int:
    probe = state if with_occluder else state.copy()
    if not with_occluder:
        probe.occluder_verts = None
        probe.occluder_vel = None
    obs = rasterize_state(probe, cam, _identity_perm(state))
    return int(obs.visible_px[ball + 1])


def _is_plainly_visible(state: WorldState3D, ball: int, cam: Camera) -> bool:
    """At least half of the solo silhouette survives occlusion tests."""
    solo = _ball_visible_px(state, ball, cam, with_occluder=False)
    if solo == 0:
        return False
    return _ball_visible_px(state, ball, cam) >= 0.5 * solo


def _is_occluder_hidden(state: WorldState3D, ball: int, cam: Camera) -> bool:
    """Fully covered by the moving occluder (not merely by another ball)."""
    if state.occluder_verts is None:
        return False
    if _ball_visible_px(state, ball, cam) > 0:
        return False
    return _ball_visible_px(state, ball, cam, with_occluder=False) > 0


def _event_window(video: SimVideo, visibility: str, rng: np.random.Generator,
                  need_later_evidence: bool) -> tuple[int, int]:
    """Pick (ball, t_e) satisfying the visibility condition, or raise."""
    frames, cam = video.frames, video.camera
    T = len(frames)
    lo, hi = max(2, T // 4), min(T - 4, 3 * T // 4)
    n_balls = len(frames[0].balls)
    candidates = [(b, t) for b in range(n_balls) for t in range(lo, hi)]
    rng.shuffle(candidates)
    for ball, t_e in candidates:
        if visibility == "visible":
            if all(_is_plainly_visible(frames[t], ball, cam) for t in (t_e, t_e + 1, t_e + 2)):
                return ball, t_e
        else:
            if not _is_occluder_hidden(frames[t_e], ball, cam):
                continue
            if not need_later_evidence:
                return ball, t_e
            later = range(t_e + 1, T)
            if any(_ball_visible_px(frames[t], ball, cam, with_occluder=False) > 0
                   and _is_plainly_visible(frames[t], ball, cam) for t in later):
                return ball, t_e
    raise InjectionError(f"no {visibility} window for any ball")


def _teleport_target(video: SimVideo, ball: int, t_e: int, visibility: str,
                     rng: np.random.Generator) -> np.ndarray | None:
    state = video.frames[t_e]
    b = state.balls[ball]
    angles = rng.permutation(12) * (2 * np.pi / 12)
    for mag in (120.0, 100.0, 80.0):   # prefer the largest feasible jump
        for ang in angles:
            new_pos = b.pos + mag * np.array([np.cos(ang), np.sin(ang), 0.0])
            if not (b.radius <= new_pos[0] <= BOX_EXTENT - b.radius
                    and b.radius <= new_pos[1] <= BOX_EXTENT - b.radius):
                continue
            clear = all(
                i == ball or float(np.linalg.norm(new_pos - o.pos)) > b.radius + o.radius + 1
                for i, o in enumerate(state.balls)
            ) and all(
                float(np.linalg.norm(new_pos - np.clip(new_pos, bx.center - bx.half,
                                                       bx.center + bx.half))) > b.radius
                for bx in state.boxes
            )
            if not clear:
                continue
            probe = state.copy()
            probe.balls[ball].pos = new_pos
            if visibility == "visible":
                if _is_plainly_visible(probe, ball, video.camera):
                    return new_pos
            else:
                if _is_occluder_hidden(probe, ball, video.camera):
                    return new_pos
    return None


def inject_impossible(video: SimVideo, kind: str, visibility: str,
                      rng: np.random.Generator) -> SimVideo:
    """Return a modified copy with event metadata; raises InjectionError."""
    if kind not in KINDS or visibility not in VISIBILITIES:
        raise ValueError(f"unknown event {kind}/{visibility}")
    if visibility == "occluded" and not video.config.occluder:
        raise InjectionError("occluded events need an occluder in the scene")

    if kind in ("disappear", "shape_change"):
        ball, t_e = _event_window(video, visibility, rng,
                                  need_later_evidence=(visibility == "occluded"))
        frames = [f.copy() for f in video.frames]
        if kind == "shape_change":
            for t in range(t_e, len(frames)):
                frames[t].balls[ball].shape = "cube"
        meta = {"kind": kind, "visibility": visibility, "t_e": t_e, "ball": ball}
        return SimVideo(video.config, video.camera, frames, meta)

    # teleport: displace at t_e and re-integrate the remaining frames
    last_err = None
    balls_ts = None
    try:
        balls_ts = _event_window(video, visibility, rng, need_later_evidence=False)
    except InjectionError as e:
        last_err = e
    if balls_ts is None:
        raise last_err
    candidates = [balls_ts]
    for ball, t_e in candidates:
        new_pos = _teleport_target(video, ball, t_e, visibility, rng)
        if new_pos is None:
            continue
        frames = [f.copy() for f in video.frames[:t_e]]
        jumped = video.frames[t_e].copy()
        displacement = float(np.linalg.norm(new_pos - jumped.balls[ball].pos))
        jumped.balls[ball].pos = new_pos
        frames.append(jumped)
        frames.extend(continue_simulation(jumped, len(video.frames) - t_e - 1))
        meta = {"kind": kind, "visibility": visibility, "t_e": t_e, "ball": ball,
                "displacement": displacement}
        return SimVideo(video.config, video.camera, frames, meta)
    raise InjectionError("no collision-free teleport target found")
