"""Command-line entry point tying generation, training, decoding and evals."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

VERBS = ("gen", "train-renderer", "train-dynamics", "decode", "render", "rollout",
         "eval-rollout", "eval-following", "eval-plausibility", "eval-pixels",
         "report")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="permaphys",
        description="Occlusion-resistant intuitive physics pipeline.")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--workers", type=int, default=None)
        if verb in ("decode", "rollout", "render"):
            p.add_argument("--video", required=True, help="video directory")
        if verb == "decode":
            p.add_argument("--lambda", dest="lam", type=float, default=None)
            p.add_argument("--steps", type=int, default=None)
            p.add_argument("--lr", type=float, default=None)
        if verb == "train-dynamics":
            p.add_argument("--models", default="rin,noproba,mlp",
                           help="comma list of rin|noproba|mlp")
    return parser


def _load(args):
    from .config import load_config

    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    # per-video verbs use --out for their own artifacts, not the experiment dir
    if args.out is not None and args.verb not in ("decode", "render", "rollout"):
        config.out_dir = args.out
    if args.workers is not None:
        config.eval.workers = args.workers
    return config


def _renderer_stem(config) -> Path:
    return config.checkpoint_dir / "renderer"


def _dynamics_stem(config, name: str = "dynamics_rin") -> Path:
    return config.checkpoint_dir / name


def cmd_gen(config, args) -> int:
    from ..scenesim.dataset import make_dataset

    manifest = make_dataset(config.gen, config.counts, config.data_root)
    print(f"generated {len(manifest['videos'])} videos under {config.data_root}")
    return 0


def cmd_train_renderer(config, args) -> int:
    from ..renderer.train import train_renderer

    cfg = replace(config.renderer_train, seed=config.seed)
    _, _, history = train_renderer(config.data_root, cfg,
                                   out_stem=_renderer_stem(config))
    Path(f"{_renderer_stem(config)}.history.json").write_text(
        json.dumps(history, indent=1))
    print(f"renderer checkpoint at {_renderer_stem(config)}")
    return 0


def cmd_train_dynamics(config, args) -> int:
    from ..dynamics.train import train_dynamics

    names = [n.strip() for n in args.models.split(",") if n.strip()]
    for name in names:
        if name == "rin":
            cfg = replace(config.dynamics_train, model="rin", proba=True,
                          seed=config.seed)
            stem = _dynamics_stem(config, "dynamics_rin")
        elif name == "noproba":
            cfg = replace(config.dynamics_train, model="rin", proba=False,
                          seed=config.seed)
            stem = _dynamics_stem(config, "dynamics_noproba")
        elif name == "mlp":
            cfg = replace(config.dynamics_train, model="mlp", proba=False,
                          seed=config.seed)
            stem = _dynamics_stem(config, "dynamics_mlp")
        else:
            print(f"unknown dynamics model '{name}'", file=sys.stderr)
            return 2
        _, history = train_dynamics(config.data_root, cfg, out_stem=stem)
        Path(f"{stem}.history.json").write_text(json.dumps(history, indent=1))
        print(f"{name} checkpoint at {stem}")
    return 0


def _load_decode_stack(config):
    from ..decoder.refine import freeze
    from ..dynamics.model import RecIntNet
    from ..renderer.train import load_renderer

    params, norm = load_renderer(_renderer_stem(config))
    net = RecIntNet.load(_dynamics_stem(config))
    return freeze(params), norm, net


def cmd_decode(config, args) -> int:
    from ..decoder.plausibility import plausibility, write_decode_outputs
    from ..decoder.refine import RefineConfig

    cfg = config.decode
    cfg = RefineConfig(
        lam=args.lam if args.lam is not None else cfg.lam,
        steps=args.steps if args.steps is not None else cfg.steps,
        lr=args.lr if args.lr is not None else cfg.lr,
        frame_batch=cfg.frame_batch, eval_every=cfg.eval_every, seed=config.seed)
    rparams, norm, net = _load_decode_stack(config)
    result = plausibility(args.video, rparams, norm, net, cfg)
    out = Path(args.out) if args.out else Path(args.video) / "decode"
    write_decode_outputs(result, out)
    print(f"plausibility score {result.report.score:.3f} -> {out}")
    return 0


def cmd_render(config, args) -> int:
    """Render composed masks for the ground-truth states of one video."""
    from ..renderer.model import compose, render_maps
    from ..renderer.train import load_renderer
    from ..scenesim.dataset import load_video, save_pgm

    params, norm = load_renderer(_renderer_stem(config))
    vd = load_video(args.video)
    out = Path(args.out) if args.out else Path(args.video) / "rendered"
    out.mkdir(parents=True, exist_ok=True)
    for t, row in enumerate(vd.states):
        objects = sorted(row["objects"], key=lambda o: o["mask_id"])
        if row.get("occluder"):
            objects.append(row["occluder"])
        feats = norm.features(objects)
        logits, depths = render_maps(params, feats, vd.meta["resolution"])
        cat, _ = compose(logits, depths, params["lambda"])
        save_pgm(out / f"frame_{t}.pred.pgm", cat.data.argmax(axis=0).astype(np.uint8))
    print(f"rendered {len(vd.states)} frames to {out}")
    return 0


def cmd_rollout(config, args) -> int:
    """Predict a full trajectory from the first two frames of a video."""
    from ..dynamics.model import RecIntNet
    from ..dynamics.train import seed_states, video_state_array
    from ..scenesim.dataset import load_video

    net = RecIntNet.load(_dynamics_stem(config))
    vd = load_video(args.video)
    v = video_state_array(vd)
    horizon = vd.meta["frames"] - 2
    roll = net.rollout_np(seed_states(v, 0), horizon, dynamic=v.dynamic)
    out = Path(args.out) if args.out else Path(args.video) / "rollout.jsonl"
    with open(out, "w") as f:
        for t in range(horizon + 1):
            f.write(json.dumps({
                "t": t + 1,
                "objects": [{"p": [float(x) for x in roll[t, k, 0:3]],
                             "tau": [float(x) for x in roll[t, k, 13:16]]}
                            for k in range(roll.shape[1])]},
                sort_keys=True) + "\n")
    print(f"rollout written to {out}")
    return 0


def cmd_eval_rollout(config, args) -> int:
    import time

    from ..dynamics.baselines import MLPBaseline
    from ..dynamics.model import RecIntNet
    from .evals import eval_rollout
    from .report import write_metric

    t0 = time.time()
    models = {
        "recintnet": RecIntNet.load(_dynamics_stem(config, "dynamics_rin")),
        "noproba": RecIntNet.load(_dynamics_stem(config, "dynamics_noproba")),
        "mlp": MLPBaseline.load(_dynamics_stem(config, "dynamics_mlp")),
        "linear": None,
    }
    payload = eval_rollout(models, config.data_root, config.eval.horizons,
                           limit=config.eval.rollout_videos)
    payload["seconds"] = round(time.time() - t0, 1)
    path = write_metric(config, "rollout", payload)
    print(f"rollout metrics -> {path}")
    return 0


def cmd_eval_following(config, args) -> int:
    from .evals import eval_following
    from .report import write_metric

    import time

    t0 = time.time()
    rparams, norm, net = _load_decode_stack(config)
    payload = eval_following(rparams, norm, net, config.data_root, config.online,
                             config.eval.following_lengths,
                             config.eval.following_threshold,
                             limit=config.eval.following_videos)
    payload["seconds"] = round(time.time() - t0, 1)
    path = write_metric(config, "following", payload)
    print(f"following metrics -> {path}")
    return 0


def cmd_eval_plausibility(config, args) -> int:
    from .evals import eval_plausibility
    from .report import write_metric

    import time

    t0 = time.time()
    payload = eval_plausibility(_renderer_stem(config), _dynamics_stem(config),
                                config.data_root, config.decode,
                                workers=config.eval.workers)
    payload["seconds"] = round(time.time() - t0, 1)
    path = write_metric(config, "plausibility", payload)
    print(f"plausibility metrics -> {path}")
    return 0


def cmd_eval_pixels(config, args) -> int:
    from ..dynamics.model import RecIntNet
    from .evals import eval_pixels
    from .report import write_metric

    nets = {
        "proba": RecIntNet.load(_dynamics_stem(config, "dynamics_rin")),
        "noproba": RecIntNet.load(_dynamics_stem(config, "dynamics_noproba")),
        "gt": None,
    }
    import time

    t0 = time.time()
    payload = eval_pixels(_renderer_stem(config), nets, config.data_root,
                          limit=config.eval.pixel_videos)
    payload["seconds"] = round(time.time() - t0, 1)
    path = write_metric(config, "pixels", payload)
    print(f"pixel metrics -> {path}")
    return 0


def cmd_report(config, args) -> int:
    from .report import ReportError, build_report, format_report

    try:
        report = build_report(config)
    except ReportError as e:
        print(str(e), file=sys.stderr)
        return 1
    print(format_report(report))
    print(f"report -> {Path(config.out_dir) / 'metrics.json'}")
    return 0


_HANDLERS = {
    "gen": cmd_gen,
    "train-renderer": cmd_train_renderer,
    "train-dynamics": cmd_train_dynamics,
    "decode": cmd_decode,
    "render": cmd_render,
    "rollout": cmd_rollout,
    "eval-rollout": cmd_eval_rollout,
    "eval-following": cmd_eval_following,
    "eval-plausibility": cmd_eval_plausibility,
    "eval-pixels": cmd_eval_pixels,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    from .config import ConfigError

    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"config not found: {e}", file=sys.stderr)
        return 2
    try:
        return _HANDLERS[args.verb](config, args)
    except Exception as e:
        print(f"{args.verb} failed: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
