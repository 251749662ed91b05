"""Evaluation protocols: rollout error, object following, plausibility, pixels."""

from __future__ import annotations

import json
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..decoder.detect import detect_video
from ..decoder.matching import closest_match
from ..decoder.online import OnlineConfig, decode_online
from ..decoder.plausibility import decode_video
from ..decoder.proposal import occluder_track
from ..decoder.refine import RefineConfig, freeze
from ..dynamics.baselines import MLPBaseline, linear_rollout
from ..dynamics.model import POS, RecIntNet, STATE_DIM, VEL
from ..dynamics.train import seed_states, video_state_array
from ..renderer.losses import render_loss
from ..renderer.model import StateNorm, compose, render_maps
from ..renderer.train import load_renderer
from ..scenesim.camera import Camera
from ..scenesim.dataset import VideoData, list_pairs, list_split, load_video


def split_videos(data_root: str | Path, split: str, occluder: bool | None = None,
                 limit: int | None = None) -> list[Path]:
    dirs = list_split(data_root, split)
    if occluder is not None:
        dirs = [d for d in dirs
                if json.loads((d / "meta.json").read_text())["occluder"] == occluder]
    return dirs[:limit] if limit else dirs


def _world_positions(camera: Camera, states: np.ndarray) -> np.ndarray:
    """Back-project (px, py, d) rows into the untilted world frame."""
    out = np.zeros_like(states[:, 0:3])
    for i, row in enumerate(states):
        out[i] = camera.backproject(row[0], row[1], row[2])
    return out


def gt_world_positions(vd: VideoData, t: int) -> np.ndarray:
    return np.array([obj["world"] for obj in vd.states[t]["objects"]])


# ---- rollout -----------------------------------------------------------------


def eval_rollout(models: dict, data_root: str | Path, horizons: list[int],
                 limit: int | None = None) -> dict:
    """Mean back-projected L2 error per model and horizon on plain eval videos."""
    dirs = split_videos(data_root, "eval", occluder=False, limit=limit)
    per_model: dict[str, dict[int, list[float]]] = {
        name: {h: [] for h in horizons} for name in models}
    for d in dirs:
        vd = load_video(d)
        if vd.meta["frames"] <= max(horizons) + 1:
            raise ValueError(f"horizon exceeds video length in {d}")
        v = video_state_array(vd)
        cam = vd.camera
        s0 = seed_states(v, 0)
        for name, model in models.items():
            if model is None:
                roll = linear_rollout(s0, max(horizons))
            else:
                roll = model.rollout_np(s0, max(horizons), dynamic=v.dynamic)
            for h in horizons:
                t = 1 + h
                pred_w = _world_positions(cam, roll[h][v.dynamic])
                gt_w = gt_world_positions(vd, t)[v.dynamic[: vd.meta["n_objects"]]]
                err = np.linalg.norm(pred_w - gt_w, axis=1).mean()
                per_model[name][h].append(float(err))
    rows = []
    for name in models:
        for h in horizons:
            vals = np.array(per_model[name][h])
            rows.append({"model": name, "horizon": h,
                         "l2_world": float(vals.mean()),
                         "std": float(vals.std()),
                         "n_videos": len(vals)})
    return {"metric": "rollout_l2_world", "rows": rows}


# ---- object following ---------------------------------------------------------


def _seed_identity(vd: VideoData) -> dict[int, int]:
    """Map detection mask ids in frame 0 to stable ground-truth object ids."""
    return {obj["mask_id"]: obj["id"] for obj in vd.states[0]["objects"]}


def eval_following(renderer_params: dict, norm: StateNorm, net: RecIntNet,
                   data_root: str | Path, online: OnlineConfig,
                   lengths: list[int], threshold: float,
                   limit: int | None = None, occluder: bool = False) -> dict:
    """Fraction of objects within a `threshold`-unit image-plane neighborhood.

    Distances are pixel distances rescaled to world units (200-unit frame),
    so the default threshold of 20 equals the smallest ball diameter.
    """
    dirs = split_videos(data_root, "eval", occluder=occluder, limit=limit)
    dists: dict[str, dict[int, list[float]]] = {
        "ours": {L: [] for L in lengths}, "linear": {L: [] for L in lengths}}
    for d in dirs:
        vd = load_video(d)
        px_to_unit = 200.0 / vd.meta["resolution"]
        id_map = _seed_identity(vd)
        try:
            pred = decode_online(vd, renderer_params, norm, net, online)
        except Exception:
            continue
        dets0, _ = detect_video(vd.masks[:1], vd.depths[:1],
                                vd.occluder_id if vd.meta["occluder"] else None)
        gt_ids = [id_map.get(det.mask_id) for det in dets0[0]]
        lin = linear_rollout(pred[1], max(lengths))
        for L in lengths:
            t = min(1 + L, vd.meta["frames"] - 1)
            gt_px = np.array([obj["p"][:2] for obj in vd.states[t]["objects"]])
            for k, gid in enumerate(gt_ids):
                if gid is None:
                    continue
                for name, states in (("ours", pred[t]), ("linear", lin[t - 1])):
                    err = float(np.linalg.norm(states[k, 0:2] - gt_px[gid]))
                    dists[name][L].append(err * px_to_unit)
    rows = []
    curve_thresholds = list(np.arange(2.0, 42.0, 2.0))
    curves = {}
    for name in dists:
        for L in lengths:
            vals = np.array(dists[name][L])
            ok = float((vals <= threshold).mean()) if len(vals) else 0.0
            rows.append({"model": name, "length": L,
                         "pct_within": 100.0 * ok, "n": int(len(vals))})
            curves[f"{name}_{L}"] = [
                float((vals <= th).mean()) if len(vals) else 0.0
                for th in curve_thresholds]
    return {"metric": "following", "threshold": threshold, "rows": rows,
            "curve_thresholds": curve_thresholds, "curves": curves}


# ---- plausibility --------------------------------------------------------------


_WORKER: dict = {}


def _plaus_init(renderer_stem: str, dynamics_stem: str, cfg: dict) -> None:
    params, norm = load_renderer(renderer_stem)
    _WORKER["renderer"] = freeze(params)
    _WORKER["norm"] = norm
    _WORKER["net"] = RecIntNet.load(dynamics_stem)
    _WORKER["cfg"] = RefineConfig(**cfg)


def _plaus_one(video_dir: str) -> dict:
    vd = load_video(video_dir)
    res = decode_video(vd, _WORKER["renderer"], _WORKER["norm"], _WORKER["net"],
                       _WORKER["cfg"])
    return {"dir": video_dir, "score": res.report.score,
            "physics": res.report.physics_total,
            "render": res.report.render_total}


def eval_plausibility(renderer_stem: str | Path, dynamics_stem: str | Path,
                      data_root: str | Path, cfg: RefineConfig,
                      workers: int = 2, max_pairs: int | None = None) -> dict:
    """Pairwise error and AUC per event kind x visibility."""
    pairs = list_pairs(data_root)
    by_condition: dict[tuple[str, str], list] = {}
    for event, pos_dir, neg_dir in pairs:
        key = (event["kind"], event["visibility"])
        if max_pairs and len(by_condition.get(key, [])) >= max_pairs:
            continue
        by_condition.setdefault(key, []).append((event, pos_dir, neg_dir))

    jobs = []
    for cond_pairs in by_condition.values():
        for _, pos_dir, neg_dir in cond_pairs:
            jobs.extend([str(pos_dir), str(neg_dir)])
    cfg_dict = {"lam": cfg.lam, "steps": cfg.steps, "lr": cfg.lr,
                "frame_batch": cfg.frame_batch, "eval_every": cfg.eval_every,
                "seed": cfg.seed}
    if workers > 1:
        ctx = get_context("fork")
        with ctx.Pool(workers, initializer=_plaus_init,
                      initargs=(str(renderer_stem), str(dynamics_stem), cfg_dict)) as pool:
            results = pool.map(_plaus_one, jobs)
    else:
        _plaus_init(str(renderer_stem), str(dynamics_stem), cfg_dict)
        results = [_plaus_one(j) for j in jobs]
    scores = {r["dir"]: r for r in results}

    rows = []
    for (kind, vis), cond_pairs in sorted(by_condition.items()):
        deltas, wrong, pos_scores, neg_scores = [], 0, [], []
        for _, pos_dir, neg_dir in cond_pairs:
            sp = scores[str(pos_dir)]["score"]
            sn = scores[str(neg_dir)]["score"]
            pos_scores.append(sp)
            neg_scores.append(sn)
            deltas.append(sp - sn)
            if sn >= sp:
                wrong += 1
        pos_arr, neg_arr = np.array(pos_scores), np.array(neg_scores)
        # rank AUC: probability a possible video outscores an impossible one
        auc = float(np.mean(pos_arr[:, None] > neg_arr[None, :])
                    + 0.5 * np.mean(pos_arr[:, None] == neg_arr[None, :]))
        rows.append({"kind": kind, "visibility": vis,
                     "n_pairs": len(cond_pairs),
                     "pairwise_error": wrong / len(cond_pairs),
                     "auc": auc,
                     "mean_score_gap": float(np.mean(deltas))})
    return {"metric": "plausibility", "rows": rows,
            "scores": {k: {"score": v["score"], "physics": v["physics"],
                           "render": v["render"]} for k, v in scores.items()}}


# ---- two-frame pixel prediction -------------------------------------------------


def _pixel_loss_for_video(vd: VideoData, renderer_params: dict, norm: StateNorm,
                          net: RecIntNet | MLPBaseline | None,
                          t_samples: list[int]) -> list[float]:
    """Render states predicted two frames ahead and score the training loss.

    net=None renders ground-truth states (the reconstruction floor).
    """
    occ_id = vd.occluder_id if vd.meta["occluder"] else None
    detections, occluders = detect_video(vd.masks, vd.depths, occ_id)
    occ = occluder_track(occluders)
    losses = []
    for t in t_samples:
        tgt = t + 2
        if tgt >= vd.meta["frames"]:
            continue
        objects = []
        if net is None:
            rows_gt = vd.states[tgt]
            for obj in rows_gt["objects"]:
                if not obj.get("removed") and obj["visible_px"] >= 0:
                    objects.append((obj, obj["mask_id"]))
            occ_here = rows_gt.get("occluder")
            occ_maps_obj = occ_here
        else:
            d0, d1 = detections[t], detections[t + 1]
            if not d0 or not d1:
                continue
            pts0 = np.array([x.point for x in d0])
            assign = closest_match(pts0, np.array([x.point for x in d1]))
            seeds = []
            for i, j in enumerate(assign):
                if j is None:
                    continue
                s = np.zeros(STATE_DIM)
                s[POS] = d1[j].point
                s[VEL] = d1[j].point - d0[i].point
                s[6] = d1[j].radius_estimate
                s[7] = 1.0
                s[10:13] = 0.5
                seeds.append(s)
            if not seeds:
                continue
            rows = np.array(seeds)
            dyn = np.ones(len(rows), dtype=bool)
            if occ is not None:
                rows = np.concatenate([rows, occ.states[t + 1][None]])
                dyn = np.concatenate([dyn, [False]])
            cur = rows
            for _ in range(2):
                cur = net.step_np(cur, dyn)
            pred = cur[: len(seeds)]
            dets_tgt = detections[tgt]
            remap: dict[int, int] = {}
            if dets_tgt:
                assign_t = closest_match(pred[:, POS],
                                         np.array([x.point for x in dets_tgt]),
                                         gate_px=30.0)
                for k, j in enumerate(assign_t):
                    if j is not None:
                        remap[k] = dets_tgt[j].mask_id
            objects = []
            for k, row in enumerate(pred):
                obj = {"p": list(row[0:3]), "size": float(row[6]),
                       "class": "ball", "rgb": [0.5, 0.5, 0.5]}
                objects.append((obj, remap.get(k, -1)))
            occ_maps_obj = None
            if occ is not None and occ.present[tgt]:
                occ_maps_obj = {"p": list(occ.states[tgt, 0:3]),
                                "size": float(occ.states[tgt, 6]),
                                "class": "occluder", "rgb": [0.5, 0.5, 0.5],
                                "quad": list(occ.quads[tgt])}

        feats_objs = [o for o, _ in objects]
        if occ_maps_obj is not None:
            feats_objs = feats_objs + [occ_maps_obj]
        if not feats_objs:
            continue
        feats = norm.features(feats_objs)
        logits, depths = render_maps(renderer_params, feats, vd.meta["resolution"])
        cat, depth = compose(logits, depths, renderer_params["lambda"])
        target = np.zeros(vd.masks[tgt].shape, dtype=np.int64)
        for ch, (_, mid) in enumerate(objects):
            if mid >= 0:
                target[vd.masks[tgt] == mid] = ch + 1
        if occ_maps_obj is not None and occ_id is not None:
            target[vd.masks[tgt] == occ_id] = len(objects) + 1
        tdepth = norm.normalize_depth_map(vd.depths[tgt])
        losses.append(render_loss(cat, depth, target, tdepth).item())
    return losses


def eval_pixels(renderer_stem: str | Path, nets: dict[str, RecIntNet | None],
                data_root: str | Path, limit: int | None = None,
                t_samples: list[int] | None = None) -> dict:
    """Two-frame-ahead pixel losses per condition (plain vs occluded)."""
    renderer_params, norm = load_renderer(renderer_stem)
    renderer_params = freeze(renderer_params)
    t_samples = t_samples or [2, 10, 18]
    rows = []
    for cond, occluded in (("top", False), ("top_occluded", True)):
        dirs = split_videos(data_root, "eval", occluder=occluded, limit=limit)
        for name, net in nets.items():
            losses = []
            for d in dirs:
                vd = load_video(d)
                losses.extend(_pixel_loss_for_video(vd, renderer_params, norm,
                                                    net, t_samples))
            rows.append({"condition": cond, "model": name,
                         "loss": float(np.mean(losses)) if losses else float("nan"),
                         "n": len(losses)})
    return {"metric": "pixel_prediction", "rows": rows}
