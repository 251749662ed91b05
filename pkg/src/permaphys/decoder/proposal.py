"""Graph proposal: link detections into object trajectories via dynamics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dynamics.model import POS, STATE_DIM, TAU, VEL, RecIntNet
from .detect import Detection, DecodeError, OccluderDetection
from .matching import closest_match

GATE_PX = 30.0


def seed_frame(detections: list[list[Detection]]) -> int:
    """Frame pair (t*, t*+1) with the most detections; ties prefer larger
    mean visible size, then the earliest frame."""
    T = len(detections)
    if T < 2:
        raise DecodeError("need at least two frames")
    best_t, best_key = None, None
    for t in range(T - 1):
        pair = detections[t] + detections[t + 1]
        count = len(detections[t]) + len(detections[t + 1])
        mean_size = float(np.mean([d.size for d in pair])) if pair else 0.0
        key = (count, mean_size, -t)
        if best_key is None or key > best_key:
            best_key = key
            best_t = t
    if best_key is None or best_key[0] == 0:
        raise DecodeError("no detections in any frame")
    return best_t


@dataclass
class OccluderTrack:
    states: np.ndarray          # (T, 16)
    quads: np.ndarray           # (T, 4)
    present: np.ndarray         # (T,) bool


def occluder_track(occluders: list[OccluderDetection | None]) -> OccluderTrack | None:
    """Known occluder states per frame; off-screen gaps are filled by a line
    fit (its motion is rectilinear by construction)."""
    T = len(occluders)
    known = [(t, o) for t, o in enumerate(occluders) if o is not None]
    if not known:
        return None
    states = np.zeros((T, STATE_DIM))
    quads = np.zeros((T, 4))
    present = np.zeros(T, dtype=bool)
    ts = np.array([t for t, _ in known], dtype=float)
    ps = np.array([[o.px, o.py, o.depth] for _, o in known])
    if len(known) > 1:
        a = np.stack([np.ones_like(ts), ts], axis=1)
        coef, *_ = np.linalg.lstsq(a, ps, rcond=None)
    else:
        coef = np.stack([ps[0], np.zeros(3)])
    mean_size = float(np.mean([o.size for _, o in known]))
    for t in range(T):
        occ = occluders[t]
        p = np.array([occ.px, occ.py, occ.depth]) if occ else coef[0] + coef[1] * t
        states[t, POS] = p
        states[t, VEL] = coef[1]
        states[t, 6] = np.sqrt(max(occ.size if occ else mean_size, 1.0) / np.pi)
        states[t, 7 + 2] = 1.0      # occluder class
        states[t, 10:13] = 0.5
        if occ:
            quads[t] = occ.quad
            present[t] = True
        else:
            quads[t] = [p[0], p[1], p[0], p[1]]
    return OccluderTrack(states, quads, present)


@dataclass
class ProposalGraph:
    """Latent trajectory estimate: fixed object count, consistent ordering."""
    positions: np.ndarray       # (T, N, 3)
    velocities: np.ndarray      # (T, N, 3)
    taus: np.ndarray            # (T, N, 3)
    observed: np.ndarray        # (T, N) bool
    det_mask_id: np.ndarray     # (T, N) mask id of the linked detection or -1
    intrinsics: np.ndarray      # (N, 7) size, class one-hot, rgb
    occluder: OccluderTrack | None
    t_star: int

    @property
    def T(self) -> int:
        return self.positions.shape[0]

    @property
    def n_objects(self) -> int:
        return self.positions.shape[1]

    def states_at(self, t: int) -> np.ndarray:
        """(N, 16) state rows for the proposal objects at frame t."""
        n = self.n_objects
        s = np.zeros((n, STATE_DIM))
        s[:, POS] = self.positions[t]
        s[:, VEL] = self.velocities[t]
        s[:, 6:13] = self.intrinsics
        s[:, TAU] = self.taus[t]
        return s


def _det_intrinsics(det: Detection) -> np.ndarray:
    """Detections carry no class or color: assume a gray ball."""
    row = np.zeros(7)
    row[0] = det.radius_estimate
    row[1] = 1.0
    row[4:7] = 0.5
    return row


def _parse_direction(graph_pos, graph_vel, graph_tau, observed, det_mask_id,
                     intrinsics, occ: OccluderTrack | None,
                     detections, net: RecIntNet, t_from: int, step: int,
                     gate_px: float) -> None:
    """March the proposal forward (step=+1) or backward (step=-1) in time.

    The backward pass runs the same network on velocity-reversed states;
    elastic dynamics are time-symmetric so no separate model is needed.
    """
    T, n = graph_pos.shape[0], graph_pos.shape[1]
    t = t_from
    while 0 <= t + step < T:
        nxt = t + step
        rows = np.zeros((n + (1 if occ is not None else 0), STATE_DIM))
        rows[:n, POS] = graph_pos[t]
        rows[:n, VEL] = step * graph_vel[t]
        rows[:n, 6:13] = intrinsics
        rows[:n, TAU] = graph_tau[t]
        dynamic = np.ones(len(rows), dtype=bool)
        if occ is not None:
            rows[n] = occ.states[t]
            rows[n, VEL] *= step
            dynamic[n] = False
        pred = net.step_np(rows, dynamic)[:n]
        dets = detections[nxt]
        if dets:
            points = np.array([d.point for d in dets])
            assign = closest_match(pred[:, POS], points, gate_px=gate_px)
        else:
            assign = [None] * n
        for k in range(n):
            j = assign[k]
            if j is not None:
                graph_pos[nxt, k] = dets[j].point
                graph_vel[nxt, k] = step * (graph_pos[nxt, k] - graph_pos[t, k])
                graph_tau[nxt, k] = 0.0
                observed[nxt, k] = True
                det_mask_id[nxt, k] = dets[j].mask_id
            else:
                graph_pos[nxt, k] = pred[k, POS]
                graph_vel[nxt, k] = step * pred[k, VEL]
                graph_tau[nxt, k] = pred[k, TAU]
        t = nxt


def graph_proposal(detections: list[list[Detection]],
                   occluders: list[OccluderDetection | None],
                   net: RecIntNet, gate_px: float = GATE_PX) -> ProposalGraph:
    T = len(detections)
    t_star = seed_frame(detections)
    base = detections[t_star]
    n = len(base)
    if n == 0:
        raise DecodeError(f"seed frame {t_star} has no detections")

    positions = np.zeros((T, n, 3))
    velocities = np.zeros((T, n, 3))
    taus = np.zeros((T, n, 3))
    observed = np.zeros((T, n), dtype=bool)
    det_mask_id = np.full((T, n), -1, dtype=int)
    intrinsics = np.stack([_det_intrinsics(d) for d in base])
    occ = occluder_track(occluders)

    positions[t_star] = np.array([d.point for d in base])
    observed[t_star] = True
    det_mask_id[t_star] = [d.mask_id for d in base]

    nxt = detections[t_star + 1]
    assign = closest_match(positions[t_star], np.array([d.point for d in nxt])
                           if nxt else np.zeros((0, 3)))
    for k in range(n):
        j = assign[k]
        if j is not None:
            positions[t_star + 1, k] = nxt[j].point
            observed[t_star + 1, k] = True
            det_mask_id[t_star + 1, k] = nxt[j].mask_id
        else:
            positions[t_star + 1, k] = positions[t_star, k]
    velocities[t_star + 1] = positions[t_star + 1] - positions[t_star]
    velocities[t_star] = velocities[t_star + 1]

    _parse_direction(positions, velocities, taus, observed, det_mask_id,
                     intrinsics, occ, detections, net, t_star + 1, +1, gate_px)
    _parse_direction(positions, velocities, taus, observed, det_mask_id,
                     intrinsics, occ, detections, net, t_star, -1, gate_px)

    # uniform backward-difference velocity convention over the final positions
    velocities[1:] = positions[1:] - positions[:-1]
    velocities[0] = velocities[1]
    return ProposalGraph(positions, velocities, taus, observed, det_mask_id,
                         intrinsics, occ, t_star)
