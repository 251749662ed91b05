"""Online decoding: refine only the newest frame's state as frames arrive.

During full occlusion the render gradient vanishes and the position is
carried by the dynamics prediction alone; when the object is visible the
mask NLL pulls the state onto the observation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..dynamics.model import POS, RecIntNet, STATE_DIM, TAU, VEL
from ..renderer.losses import mask_nll
from ..renderer.model import StateNorm, compose, features_from_tensor, render_maps
from ..scenesim.dataset import VideoData
from .detect import DecodeError, detect_video
from .proposal import occluder_track
from .matching import closest_match
from .refine import freeze


@dataclass
class OnlineConfig:
    lam: float = 0.5
    steps: int = 12
    lr: float = 0.3          # Adam step size in pixel units
    seed: int = 0


def _ball_const_feats(intrinsics: np.ndarray, resolution: int) -> np.ndarray:
    n = intrinsics.shape[0]
    out = np.zeros((n, 11))
    out[:, 0] = intrinsics[:, 0] / resolution
    out[:, 1:4] = intrinsics[:, 1:4]
    out[:, 4:7] = intrinsics[:, 4:7]
    return out


def decode_online(video: VideoData, renderer_params: dict, norm: StateNorm,
                  net: RecIntNet, config: OnlineConfig) -> np.ndarray:
    """Per-frame predict + refine; returns [T, N, 16] states.

    Objects are seeded from the first two frames; identity is then carried
    by the tracker, not by mask ids.
    """
    occ_id = video.occluder_id if video.meta.get("occluder") else None
    detections, occluders = detect_video(video.masks, video.depths, occ_id)
    if not detections[0] or not detections[1]:
        raise DecodeError("online decoding needs detections in frames 0 and 1")
    rparams = freeze(renderer_params)
    nparams = freeze(net.params)
    net = RecIntNet(nparams, net.scaler, net.config)
    occ = occluder_track(occluders)
    T = video.meta["frames"]
    resolution = video.meta["resolution"]

    base = detections[0]
    n = len(base)
    intrinsics = np.zeros((n, 7))
    for k, d in enumerate(base):
        intrinsics[k, 0] = d.radius_estimate
        intrinsics[k, 1] = 1.0
        intrinsics[k, 4:7] = 0.5
    const_feats = _ball_const_feats(intrinsics, resolution)

    states = np.zeros((T, n, STATE_DIM))
    states[0, :, POS] = [d.point for d in base]
    states[0, :, 6:13] = intrinsics
    nxt = detections[1]
    assign = closest_match(states[0, :, POS], np.array([d.point for d in nxt]))
    states[1] = states[0]
    for k, j in enumerate(assign):
        if j is not None:
            states[1, k, POS] = nxt[j].point
    states[1, :, VEL] = states[1, :, POS] - states[0, :, POS]
    states[0, :, VEL] = states[1, :, VEL]

    for t in range(2, T):
        rows = states[t - 1].copy()
        dynamic = np.ones(n, dtype=bool)
        if occ is not None:
            rows = np.concatenate([rows, occ.states[t - 1][None]], axis=0)
            dynamic = np.concatenate([dynamic, [False]])
        pred = net.step_np(rows, dynamic)
        if occ is not None:
            pred[-1] = occ.states[t]
        cur = pred[:n].copy()

        # one-frame differentiable refinement of positions only
        pos_t = ad.Tensor(cur[:, POS].copy(), requires_grad=True)
        anchor = ad.constant(cur[:, POS].copy())
        occ_maps = None
        if occ is not None and occ.present[t]:
            obj = {"p": list(occ.states[t, 0:3]), "size": float(occ.states[t, 6]),
                   "class": "occluder", "rgb": [0.5, 0.5, 0.5],
                   "quad": list(occ.quads[t])}
            lg, dp = render_maps(rparams, norm.features([obj]), resolution)
            occ_maps = (lg.data.copy(), dp.data.copy())
        target = np.zeros(video.masks[t].shape, dtype=np.int64)
        dets_t = detections[t]
        if dets_t:
            points = np.array([d.point for d in dets_t])
            assign_t = closest_match(cur[:, POS], points, gate_px=30.0)
            for k, j in enumerate(assign_t):
                if j is not None:
                    target[video.masks[t] == dets_t[j].mask_id] = k + 1
                    # sequential linking step: start the refinement from the
                    # matched detection; unmatched objects start at the
                    # prediction (under full occlusion the dynamics rule alone)
                    cur[k, POS] = dets_t[j].point
            pos_t = ad.Tensor(cur[:, POS].copy(), requires_grad=True)
        if occ is not None and occ.present[t] and occ_id is not None:
            target[video.masks[t] == occ_id] = n + 1

        opt = ad.Adam({"pos": pos_t}, lr=config.lr)
        for _ in range(config.steps):
            opt.zero_grad()
            feats = features_from_tensor(norm, pos_t, const_feats)
            logits, depths = render_maps(rparams, feats, resolution)
            if occ_maps is not None:
                logits = ad.concat([logits, ad.constant(occ_maps[0])], axis=0)
                depths = ad.concat([depths, ad.constant(occ_maps[1])], axis=0)
            cat, _ = compose(logits, depths, rparams["lambda"])
            visual = mask_nll(cat, target, reduce="sum")
            phys = ad.reduce_sum(ad.square(ad.sub(pos_t, anchor)))
            loss = ad.add(ad.mul(phys, config.lam), ad.mul(visual, 1 - config.lam))
            loss.backward()
            opt.step()

        states[t] = cur
        states[t, :, POS] = pos_t.data
        states[t, :, VEL] = states[t, :, POS] - states[t - 1, :, POS]
    return states
