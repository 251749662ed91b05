"""Metric aggregation: metrics.json with provenance plus a CSV mirror."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from ..autodiff import checkpoint_hash
from .config import ExperimentConfig


class ReportError(RuntimeError):
    pass


def write_metric(config: ExperimentConfig, name: str, payload: dict) -> Path:
    config.metrics_dir.mkdir(parents=True, exist_ok=True)
    path = config.metrics_dir / f"{name}.json"
    path.write_text(json.dumps(payload, sort_keys=True, indent=1))
    return path


def _checkpoint_hashes(config: ExperimentConfig) -> dict:
    hashes = {}
    for stem in sorted(config.checkpoint_dir.glob("*.json")):
        name = stem.stem
        try:
            hashes[name] = checkpoint_hash(stem.with_suffix(""))
        except FileNotFoundError:
            continue
    return hashes


def build_report(config: ExperimentConfig) -> dict:
    metric_files = sorted(config.metrics_dir.glob("*.json")) \
        if config.metrics_dir.exists() else []
    if not metric_files:
        raise ReportError("no metrics found; run the eval verbs first")
    metrics = {p.stem: json.loads(p.read_text()) for p in metric_files}
    report = {
        "config_hash": config.digest(),
        "checkpoint_hashes": _checkpoint_hashes(config),
        "metrics": metrics,
    }
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(report, sort_keys=True, indent=1))

    with (out / "metrics.csv").open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "key", "value"])
        for name, payload in sorted(metrics.items()):
            for row in payload.get("rows", []):
                label = "/".join(str(row[k]) for k in row
                                 if k in ("model", "horizon", "kind", "visibility",
                                          "condition", "length"))
                for field, value in row.items():
                    if isinstance(value, (int, float)):
                        writer.writerow([name, f"{label}/{field}", value])
    return report


def format_report(report: dict) -> str:
    lines = [f"config {report['config_hash']}"]
    for name, h in sorted(report["checkpoint_hashes"].items()):
        lines.append(f"checkpoint {name} {h[:12]}")
    for name, payload in sorted(report["metrics"].items()):
        lines.append(f"-- {name} --")
        for row in payload.get("rows", []):
            lines.append("  " + json.dumps(row, sort_keys=True))
    return "\n".join(lines)
