"""Dataset generation and on-disk video format.

Layout:
    <root>/dataset.json                manifest over all videos
    <root>/<split>/video_<k>/frame_<t>.mask.pgm    binary PGM P5, ids as gray
    <root>/<split>/video_<k>/frame_<t>.depth.f32   little-endian float32 raw
    <root>/<split>/video_<k>/states.jsonl          one JSON object per frame
    <root>/<split>/video_<k>/meta.json             seed, tilt, label, event

Mask ids are shuffled per frame so they carry no cross-frame correspondence;
states.jsonl records the per-frame id of each (stable-identity) object.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .camera import Camera
from .events import KINDS, VISIBILITIES, InjectionError, SimVideo, inject_impossible
from .occluder import polygon_area
from .raster import (
    FrameObservation,
    ball_to_raster,
    box_to_raster,
    occluder_to_raster,
    rasterize,
)
from .world import WorldConfig, simulate

CLASSES = ("ball", "box", "occluder")


class DatasetError(RuntimeError):
    """I/O or generation failure, annotated with the offending path."""


# ---- primitive file formats ----------------------------------------------------


def save_pgm(path: Path, mask: np.ndarray) -> None:
    h, w = mask.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    path.write_bytes(header + mask.astype(np.uint8).tobytes())


def load_pgm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise DatasetError(f"not a binary PGM: {path}")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w).copy()


def save_depth(path: Path, depth: np.ndarray) -> None:
    path.write_bytes(depth.astype("<f4").tobytes())


def load_depth(path: Path, resolution: int) -> np.ndarray:
    arr = np.frombuffer(path.read_bytes(), dtype="<f4")
    return arr.reshape(resolution, resolution).astype(np.float64)


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1))


# ---- ground-truth 2.5D state rows ----------------------------------------------


def _round(x) -> float:
    return float(np.round(float(x), 6))


def _occluder_quad(obs: FrameObservation) -> list[float] | None:
    """Axis-aligned corner box of the occluder's visible pixels."""
    rows, cols = np.nonzero(obs.mask == obs.occluder_id)
    if rows.size == 0:
        return None
    return [float(cols.min()), float(rows.min()), float(cols.max()), float(rows.max())]


def state_rows(video: SimVideo, t: int, perm: np.ndarray,
               obs: FrameObservation) -> dict:
    """GT states for frame t in stable object order (balls then boxes)."""
    state = video.frames[t]
    cam = video.camera
    hidden = video.hidden_ball_at(t)
    rows = []
    idx = 0
    for i, ball in enumerate(state.balls):
        ro = ball_to_raster(ball, cam)
        removed = hidden is not None and i == hidden
        rows.append({
            "id": idx,
            "mask_id": int(perm[idx]),
            "class": "ball" if ball.shape == "ball" else "box",
            "p": [_round(ro.px), _round(ro.py), _round(ro.dist)],
            "world": [_round(v) for v in ball.pos],
            "vel_world": [_round(v) for v in ball.vel],
            "size": _round(ro.r_px),
            "rgb": [_round(v) for v in ball.rgb],
            "visible_px": 0 if removed else int(obs.visible_px[perm[idx]]),
            "removed": removed,
        })
        idx += 1
    for box in state.boxes:
        ro = box_to_raster(box, cam)
        area = polygon_area(ro.hull) if ro.hull is not None and len(ro.hull) >= 3 else 1.0
        rows.append({
            "id": idx,
            "mask_id": int(perm[idx]),
            "class": "box",
            "p": [_round(ro.px), _round(ro.py), _round(ro.dist)],
            "world": [_round(v) for v in box.center],
            "vel_world": [0.0, 0.0, 0.0],
            "size": _round(np.sqrt(max(area, 1.0) / np.pi)),
            "rgb": [0.5, 0.5, 0.5],
            "visible_px": int(obs.visible_px[perm[idx]]),
            "removed": False,
        })
        idx += 1
    occ = None
    if state.occluder_verts is not None:
        ro = occluder_to_raster(state.occluder_verts, cam)
        quad = _occluder_quad(obs)
        if quad is not None:
            occ = {
                "mask_id": obs.occluder_id,
                "class": "occluder",
                "p": [_round(ro.px), _round(ro.py), _round(ro.dist)],
                "size": _round(np.sqrt(int(obs.visible_px[obs.occluder_id]) / np.pi)),
                "rgb": [0.5, 0.5, 0.5],
                "visible_px": int(obs.visible_px[obs.occluder_id]),
                "quad": quad,
            }
    return {"t": t, "objects": rows, "occluder": occ}


def render_video(video: SimVideo, rng: np.random.Generator
                 ) -> tuple[list[FrameObservation], list[dict]]:
    """Rasterize all frames with per-frame shuffled ids."""
    state0 = video.frames[0]
    n_obj = len(state0.balls) + len(state0.boxes)
    observations, rows = [], []
    for t, state in enumerate(video.frames):
        perm = rng.permutation(n_obj) + 1
        objects = []
        hidden = video.hidden_ball_at(t)
        for i, ball in enumerate(state.balls):
            objects.append(ball_to_raster(ball, video.camera))
        for box in state.boxes:
            objects.append(box_to_raster(box, video.camera))
        if hidden is not None:
            objects[hidden].r_px = 0.0
            objects[hidden].hull = None
        occ = None
        if state.occluder_verts is not None:
            occ = occluder_to_raster(state.occluder_verts, video.camera)
        obs = rasterize(objects, occ, video.camera, perm)
        observations.append(obs)
        rows.append(state_rows(video, t, perm, obs))
    return observations, rows


# ---- video read/write ------------------------------------------------------------


def write_video(out_dir: Path, video: SimVideo, split: str, label: str,
                rng: np.random.Generator, pair_id: str | None = None) -> dict:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        observations, rows = render_video(video, rng)
        for t, obs in enumerate(observations):
            save_pgm(out_dir / f"frame_{t}.mask.pgm", obs.mask)
            save_depth(out_dir / f"frame_{t}.depth.f32", obs.depth)
        with (out_dir / "states.jsonl").open("w") as f:
            for row in rows:
                f.write(json.dumps(row, sort_keys=True) + "\n")
        lo, hi = video.camera.depth_bounds()
        state0 = video.frames[0]
        meta = {
            "seed": video.config.seed,
            "tilt": video.config.tilt_deg,
            "resolution": video.config.resolution,
            "frames": len(video.frames),
            "label": label,
            "split": split,
            "event": video.event,
            "n_objects": len(state0.balls) + len(state0.boxes),
            "n_balls": len(state0.balls),
            "occluder": video.config.occluder,
            "depth_norm": [lo, hi],
            "camera": video.camera.to_json(),
            "pair_id": pair_id,
        }
        _dump_json(out_dir / "meta.json", meta)
        return meta
    except OSError as e:
        raise DatasetError(f"failed writing video to {out_dir}: {e}") from e


@dataclass
class VideoData:
    """A video loaded back from disk."""
    path: Path
    meta: dict
    masks: np.ndarray      # (T,H,W) uint8
    depths: np.ndarray     # (T,H,W) float64
    states: list[dict]

    @property
    def camera(self) -> Camera:
        return Camera.from_json(self.meta["camera"])

    @property
    def occluder_id(self) -> int:
        return self.meta["n_objects"] + 1


def load_video(video_dir: str | Path) -> VideoData:
    video_dir = Path(video_dir)
    meta = json.loads((video_dir / "meta.json").read_text())
    n = meta["resolution"]
    masks, depths = [], []
    for t in range(meta["frames"]):
        masks.append(load_pgm(video_dir / f"frame_{t}.mask.pgm"))
        depths.append(load_depth(video_dir / f"frame_{t}.depth.f32", n))
    states = [json.loads(line) for line in (video_dir / "states.jsonl").read_text().splitlines()]
    return VideoData(video_dir, meta, np.stack(masks), np.stack(depths), states)


# ---- dataset generation ----------------------------------------------------------


@dataclass
class GenSpec:
    resolution: int = 64
    tilt_deg: float = 90.0
    frames: int = 30
    max_balls: int = 4
    max_boxes: int = 2
    occluder_fraction: float = 0.5
    seed: int = 0


def _sample_config(spec: GenSpec, rng: np.random.Generator, seed: int,
                   occluder: bool, allow_boxes: bool) -> WorldConfig:
    return WorldConfig(
        n_balls=int(rng.integers(1, spec.max_balls + 1)),
        n_boxes=int(rng.integers(0, spec.max_boxes + 1)) if allow_boxes else 0,
        frames=spec.frames,
        tilt_deg=spec.tilt_deg,
        occluder=occluder,
        resolution=spec.resolution,
        seed=seed,
    )


def _make_sim(spec: GenSpec, key: tuple, occluder: bool, allow_boxes: bool) -> SimVideo:
    rng = np.random.default_rng([spec.seed, *key])
    seed = int(rng.integers(0, 2**31 - 1))
    config = _sample_config(spec, rng, seed, occluder, allow_boxes)
    frames = simulate(config)
    return SimVideo(config, Camera.make(config.tilt_deg, config.resolution), frames)


def make_dataset(spec: GenSpec, counts: dict, out_root: str | Path) -> dict:
    """Generate all splits; returns (and writes) the manifest."""
    out_root = Path(out_root)
    try:
        out_root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DatasetError(f"cannot create dataset root {out_root}: {e}") from e
    entries = []

    def add(video: SimVideo, split: str, name: str, label: str,
            render_key: tuple, pair_id: str | None = None) -> None:
        rng = np.random.default_rng([spec.seed, 77, *render_key])
        vdir = out_root / split / name
        meta = write_video(vdir, video, split, label, rng, pair_id=pair_id)
        entries.append({
            "name": f"{split}/{name}",
            "split": split,
            "label": label,
            "seed": meta["seed"],
            "tilt": meta["tilt"],
            "event": meta["event"],
            "pair_id": pair_id,
        })

    for split_idx, split in enumerate(("renderer", "dynamics", "eval")):
        n = int(counts.get(split, 0))
        for k in range(n):
            occluder = (k % 2 == 0) if spec.occluder_fraction > 0 else False
            if spec.occluder_fraction >= 1.0:
                occluder = True
            allow_boxes = split != "eval"
            video = _make_sim(spec, (split_idx, k), occluder, allow_boxes)
            add(video, split, f"video_{k}", "possible", (split_idx, k))

    pairs = int(counts.get("plaus_pairs", 0))
    pair_list = []
    for ci, (kind, vis) in enumerate(
            [(k, v) for k in KINDS for v in VISIBILITIES]):
        made = 0
        attempt = 0
        while made < pairs:
            attempt += 1
            if attempt > pairs * 30:
                raise DatasetError(
                    f"could not build {pairs} {kind}/{vis} pairs after {attempt} tries")
            key = (9, ci, attempt)
            video = _make_sim(spec, key, occluder=(vis == "occluded"), allow_boxes=False)
            inj_rng = np.random.default_rng([spec.seed, 13, ci, attempt])
            try:
                impossible = inject_impossible(video, kind, vis, inj_rng)
            except InjectionError:
                continue
            pair_id = f"{kind}_{vis}_{made}"
            add(video, "plaus", f"{pair_id}_pos", "possible", (*key, 0), pair_id)
            add(impossible, "plaus", f"{pair_id}_neg", "impossible", (*key, 1), pair_id)
            pair_list.append(pair_id)
            made += 1

    manifest = {
        "spec": asdict(spec),
        "counts": counts,
        "videos": entries,
        "pairs": pair_list,
    }
    _dump_json(out_root / "dataset.json", manifest)
    return manifest


def dataset_hash(root: str | Path) -> str:
    """Order-independent content hash over every file in the dataset."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


def list_split(root: str | Path, split: str) -> list[Path]:
    root = Path(root)
    manifest = json.loads((root / "dataset.json").read_text())
    return [root / e["name"] for e in manifest["videos"] if e["split"] == split]


def list_pairs(root: str | Path) -> list[tuple[dict, Path, Path]]:
    """(event metadata, possible dir, impossible dir) per plausibility pair."""
    root = Path(root)
    manifest = json.loads((root / "dataset.json").read_text())
    by_pair: dict[str, dict] = {}
    for e in manifest["videos"]:
        if e["split"] != "plaus":
            continue
        d = by_pair.setdefault(e["pair_id"], {})
        d[e["label"]] = root / e["name"]
        if e["event"]:
            d["event"] = e["event"]
    out = []
    for pair_id in manifest["pairs"]:
        d = by_pair[pair_id]
        out.append((d["event"], d["possible"], d["impossible"]))
    return out
