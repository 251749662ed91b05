"""Occlusion-resistant intuitive physics on synthetic bouncing-ball videos.

Subpackages:
    autodiff  - dense float64 tensors, reverse-mode autodiff, Adam
    scenesim  - deterministic 3D ball simulator, camera projection, rasterizer
    renderer  - compositional mask/depth renderer with softmin occlusion
    dynamics  - recurrent pairwise-interaction dynamics plus baselines
    decoder   - detection, matching, graph proposal, differentiable refinement
    harness   - CLI, experiment configs, evaluation metrics, reports
"""

__version__ = "0.1.0"
