"""Full-video decoding: detect, propose, refine, and score plausibility."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..dynamics.model import RecIntNet
from ..renderer.model import StateNorm
from ..scenesim.dataset import VideoData, load_video
from .detect import detect_video
from .proposal import GATE_PX, ProposalGraph, graph_proposal
from .refine import PlausibilityReport, RefineConfig, optimize_states


@dataclass
class DecodeResult:
    graph: ProposalGraph
    report: PlausibilityReport
    video: VideoData


def decode_video(video: VideoData, renderer_params: dict, norm: StateNorm,
                 net: RecIntNet, config: RefineConfig,
                 gate_px: float = GATE_PX) -> DecodeResult:
    occ_id = video.occluder_id if video.meta.get("occluder") else None
    detections, occluders = detect_video(video.masks, video.depths, occ_id)
    graph = graph_proposal(detections, occluders, net, gate_px=gate_px)
    refined, report = optimize_states(graph, video.masks, renderer_params,
                                      norm, net, occ_id or -1, config)
    return DecodeResult(refined, report, video)


def plausibility(video_dir: str | Path, renderer_params: dict, norm: StateNorm,
                 net: RecIntNet, config: RefineConfig) -> DecodeResult:
    """Score one on-disk video; score = negative total decode loss."""
    return decode_video(load_video(video_dir), renderer_params, norm, net, config)


def write_decode_outputs(result: DecodeResult, out_dir: str | Path) -> None:
    """decoded.jsonl (refined states per frame) + plausibility.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    g = result.graph
    with (out_dir / "decoded.jsonl").open("w") as f:
        for t in range(g.T):
            row = {
                "t": t,
                "objects": [
                    {
                        "index": k,
                        "p": [float(v) for v in g.positions[t, k]],
                        "v": [float(v) for v in g.velocities[t, k]],
                        "observed": bool(g.observed[t, k]),
                        "size": float(g.intrinsics[k, 0]),
                    }
                    for k in range(g.n_objects)
                ],
            }
            f.write(json.dumps(row, sort_keys=True) + "\n")
    (out_dir / "plausibility.json").write_text(
        json.dumps(result.report.to_json(), sort_keys=True, indent=1))
