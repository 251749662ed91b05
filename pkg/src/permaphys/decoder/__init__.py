"""Event decoding: detections, matching, graph proposal, refinement."""

from .detect import DecodeError, Detection, OccluderDetection, detect, detect_video
from .matching import closest_match, match_cost
from .proposal import (
    GATE_PX,
    OccluderTrack,
    ProposalGraph,
    graph_proposal,
    occluder_track,
    seed_frame,
)
from .refine import PlausibilityReport, RefineConfig, freeze, optimize_states
from .plausibility import DecodeResult, decode_video, plausibility, write_decode_outputs
from .online import OnlineConfig, decode_online
