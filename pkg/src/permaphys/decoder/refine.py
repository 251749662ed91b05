"""Gradient refinement of proposal states through both networks.

The full objective is lambda * physics + (1 - lambda) * visual, where the
physics term compares each one-step dynamics prediction with the next stored
state and the visual term is the summed per-pixel NLL of the observed masks
under the rendered composition. Positions and velocities of the proposal
objects are the free variables; intrinsics, tau, occluder states, and both
networks stay frozen. Plain SGD can overshoot, so the best iterate over
periodic full evaluations is returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..dynamics.model import RecIntNet, predict, step as dyn_step, STATE_DIM
from ..renderer.losses import mask_nll, one_hot_channels
from ..renderer.model import StateNorm, compose, features_from_tensor, render_maps
from .detect import DecodeError
from .proposal import ProposalGraph


@dataclass
class PlausibilityReport:
    physics_per_frame: list[float]      # transition t-1 -> t charged to frame t
    render_per_frame: list[float]
    physics_total: float
    render_total: float
    total: float
    lam: float
    score: float
    steps: int = 0
    initial_total: float = 0.0

    def to_json(self) -> dict:
        return {
            "physics_per_frame": self.physics_per_frame,
            "render_per_frame": self.render_per_frame,
            "physics_total": self.physics_total,
            "render_total": self.render_total,
            "total": self.total,
            "lambda": self.lam,
            "score": self.score,
            "steps": self.steps,
            "initial_total": self.initial_total,
        }


def freeze(params: dict[str, ad.Tensor]) -> dict[str, ad.Tensor]:
    return {n: ad.Tensor(t.data, requires_grad=False) for n, t in params.items()}


@dataclass
class RefineConfig:
    lam: float = 0.5
    steps: int = 1000
    lr: float = 1e-3
    frame_batch: int = 8
    eval_every: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0 and self.lam not in (0.0, 1.0):
            raise ValueError("lambda must lie in [0, 1]")


class _DecodeProblem:
    """Shared tensors and target structures for one video."""

    def __init__(self, graph: ProposalGraph, masks: np.ndarray,
                 renderer_params: dict, norm: StateNorm, net: RecIntNet,
                 occluder_mask_id: int | None):
        self.graph = graph
        self.masks = masks
        self.net_params = freeze(net.params)
        self.scaler = net.scaler
        self.rparams = freeze(renderer_params)
        self.norm = norm
        self.T, self.N = graph.T, graph.n_objects
        self.resolution = masks.shape[1]
        self._occ_id = occluder_mask_id

        self.pos = ad.Tensor(graph.positions.reshape(-1, 3), requires_grad=True)
        self.vel = ad.Tensor(graph.velocities.reshape(-1, 3), requires_grad=True)
        intr = np.repeat(graph.intrinsics[None], self.T, axis=0).reshape(-1, 7)
        self.const_tail = np.concatenate([intr, np.zeros((self.T * self.N, 3))], axis=1)

        occ = graph.occluder
        self.occ = occ
        self.has_occ = occ is not None
        if self.has_occ:
            self.occ_rows = occ.states
            self.occ_render = self._render_occluder()
        # physics gather indices: rows of [t balls..., t occ] per transition
        per_frame = self.N + (1 if self.has_occ else 0)
        idx_in, idx_tgt = [], []
        for t in range(self.T - 1):
            idx_in.extend(range(t * self.N, (t + 1) * self.N))
            idx_tgt.extend(range((t + 1) * self.N, (t + 2) * self.N))
            if self.has_occ:
                idx_in.append(self.T * self.N + t)
                idx_tgt.append(self.T * self.N + t + 1)
        self.idx_in = np.asarray(idx_in, dtype=np.intp)
        self.idx_tgt = np.asarray(idx_tgt, dtype=np.intp)
        w = np.ones((self.T - 1, per_frame))
        if self.has_occ:
            w[:, -1] = 0.0
        self.phys_weights = w.reshape(-1)
        self.per_frame_rows = per_frame

        self.targets = [self._frame_target(t) for t in range(self.T)]
        self.ball_const_feats = np.concatenate(
            [np.concatenate([[graph.intrinsics[k, 0] / self.resolution],
                             graph.intrinsics[k, 1:4],
                             graph.intrinsics[k, 4:7],
                             np.zeros(4)])[None]
             for k in range(self.N)], axis=0)

    # ---- target construction -------------------------------------------------

    def _frame_target(self, t: int) -> tuple[np.ndarray, int]:
        """Remapped id map: 0 bg, 1..N proposal objects, N+1 occluder."""
        mask = self.masks[t]
        occ_here = self.has_occ and self.occ.present[t]
        n_ch = 1 + self.N + (1 if occ_here else 0)
        ids = np.zeros(mask.shape, dtype=np.int64)
        for k in range(self.N):
            mid = self.graph.det_mask_id[t, k]
            if mid >= 0:
                ids[mask == mid] = k + 1
        if occ_here:
            ids[mask == self._occ_id] = self.N + 1
        return ids, n_ch

    # ---- rendering -----------------------------------------------------------

    def _render_occluder(self) -> list[tuple[np.ndarray, np.ndarray] | None]:
        """Occluder maps are constant across refinement: render once."""
        out = []
        for t in range(self.T):
            if not self.occ.present[t]:
                out.append(None)
                continue
            obj = {
                "p": list(self.occ.states[t, 0:3]),
                "size": float(self.occ.states[t, 6]),
                "class": "occluder",
                "rgb": [0.5, 0.5, 0.5],
                "quad": list(self.occ.quads[t]),
            }
            feats = self.norm.features([obj])
            logits, depths = render_maps(self.rparams, feats, self.resolution)
            out.append((logits.data.copy(), depths.data.copy()))
        return out

    # ---- loss terms ------------------------------------------------------------

    def physics_loss(self) -> tuple[ad.Tensor, np.ndarray]:
        """Summed squared error between one-step predictions and stored states."""
        ball_rows = ad.concat([self.pos, self.vel, ad.constant(self.const_tail)], axis=1)
        if self.has_occ:
            all_rows = ad.concat([ball_rows, ad.constant(self.occ_rows)], axis=0)
        else:
            all_rows = ball_rows
        flat_in = ad.gather_rows(all_rows, self.idx_in)
        d_v, tau = predict(self.net_params, self.scaler, flat_in,
                           self.T - 1, self.per_frame_rows)
        stepped = dyn_step(flat_in, d_v, tau)
        pred_pv = ad.narrow(stepped, 1, 0, 6)
        targ_pv = ad.narrow(ad.gather_rows(all_rows, self.idx_tgt), 1, 0, 6)
        per_row = ad.sum_axis(ad.square(ad.sub(pred_pv, targ_pv)), 1)
        weighted = ad.mul(per_row, ad.constant(self.phys_weights))
        total = ad.reduce_sum(weighted)
        per_frame = weighted.data.reshape(self.T - 1, self.per_frame_rows).sum(axis=1)
        return total, per_frame

    def visual_loss(self, frames: list[int]) -> tuple[ad.Tensor, dict[int, float]]:
        """Summed mask NLL over the given frames."""
        rows = np.concatenate([np.arange(t * self.N, (t + 1) * self.N)
                               for t in frames])
        pos_rows = ad.gather_rows(self.pos, rows)
        const = np.concatenate([self.ball_const_feats] * len(frames), axis=0)
        feats = features_from_tensor(self.norm, pos_rows, const)
        logits, depths = render_maps(self.rparams, feats, self.resolution)
        terms = []
        per_frame: dict[int, float] = {}
        for fi, t in enumerate(frames):
            lg = ad.narrow(logits, 0, fi * self.N, self.N)
            dp = ad.narrow(depths, 0, fi * self.N, self.N)
            if self.has_occ and self.occ_render[t] is not None:
                olg, odp = self.occ_render[t]
                lg = ad.concat([lg, ad.constant(olg)], axis=0)
                dp = ad.concat([dp, ad.constant(odp)], axis=0)
            cat, _ = compose(lg, dp, self.rparams["lambda"])
            ids, n_ch = self.targets[t]
            term = mask_nll(cat, ids, reduce="sum")
            per_frame[t] = term.item()
            terms.append(term)
        total = terms[0]
        for term in terms[1:]:
            total = ad.add(total, term)
        return total, per_frame


def optimize_states(graph: ProposalGraph, masks: np.ndarray,
                    renderer_params: dict, norm: StateNorm, net: RecIntNet,
                    occluder_mask_id: int, config: RefineConfig
                    ) -> tuple[ProposalGraph, PlausibilityReport]:
    """SGD over proposal positions/velocities; returns the best iterate."""
    problem = _DecodeProblem(graph, masks, renderer_params, norm, net,
                             occluder_mask_id)
    rng = np.random.default_rng(config.seed)
    T = problem.T

    def full_eval() -> tuple[float, np.ndarray, np.ndarray]:
        p_total, p_frames = problem.physics_loss()
        v_total, v_frames = problem.visual_loss(list(range(T)))
        total = config.lam * p_total.item() + (1 - config.lam) * v_total.item()
        render_pf = np.array([v_frames[t] for t in range(T)])
        if not np.isfinite(total):
            bad_frames = [t for t in range(T) if not np.isfinite(render_pf[t])]
            bad_phys = [t + 1 for t in range(T - 1) if not np.isfinite(p_frames[t])]
            raise DecodeError(
                f"non-finite refinement loss at frames {bad_frames or bad_phys}")
        return total, p_frames, render_pf

    best_total, best_pf, best_rf = full_eval()
    initial_total = best_total
    best_pos = problem.pos.data.copy()
    best_vel = problem.vel.data.copy()

    for it in range(config.steps):
        problem.pos.zero_grad()
        problem.vel.zero_grad()
        loss_terms = []
        if config.lam > 0.0:
            p_total, _ = problem.physics_loss()
            loss_terms.append(ad.mul(p_total, config.lam))
        if config.lam < 1.0:
            if config.frame_batch >= T:
                frames = list(range(T))
                scale = 1.0
            else:
                frames = sorted(rng.choice(T, config.frame_batch, replace=False))
                scale = T / len(frames)
            v_total, _ = problem.visual_loss(frames)
            loss_terms.append(ad.mul(v_total, (1 - config.lam) * scale))
        loss = loss_terms[0]
        for term in loss_terms[1:]:
            loss = ad.add(loss, term)
        loss.backward()
        if problem.pos.grad is not None:
            problem.pos.data -= config.lr * problem.pos.grad
        if problem.vel.grad is not None:
            problem.vel.data -= config.lr * problem.vel.grad
        if (it + 1) % config.eval_every == 0 or it == config.steps - 1:
            total, pf, rf = full_eval()
            if total < best_total:
                best_total, best_pf, best_rf = total, pf, rf
                best_pos = problem.pos.data.copy()
                best_vel = problem.vel.data.copy()

    refined = ProposalGraph(
        positions=best_pos.reshape(T, problem.N, 3),
        velocities=best_vel.reshape(T, problem.N, 3),
        taus=graph.taus,
        observed=graph.observed,
        det_mask_id=graph.det_mask_id,
        intrinsics=graph.intrinsics,
        occluder=graph.occluder,
        t_star=graph.t_star,
    )
    physics_pf = [0.0] + [float(v) for v in best_pf]
    render_pf = [float(v) for v in best_rf]
    physics_total = float(np.sum(best_pf))
    render_total = float(np.sum(best_rf))
    total = config.lam * physics_total + (1 - config.lam) * render_total
    report = PlausibilityReport(
        physics_per_frame=physics_pf,
        render_per_frame=render_pf,
        physics_total=physics_total,
        render_total=render_total,
        total=total,
        lam=config.lam,
        score=-total,
        steps=config.steps,
        initial_total=initial_total,
    )
    return refined, report
