"""Evaluation harness: per-sample and aggregate material metrics.

Reports carry albedo PSNR / SSIM / perceptual-proxy plus metallic and
roughness RMSE, all computed over the stored foreground masks, and are
written both machine-readable (report.json) and as an aligned text table
(report.txt).  The perceptual column is the random-feature proxy and is
labeled as such.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import DatasetManifest
from .errors import ConfigError
from .flow import SamplerConfig
from .materials import MaterialTriplet
from .metrics import perceptual, psnr, rmse, ssim
from .pipeline import ModelBundle, estimate_single
from .utils import derive_seed

COLUMNS = ("albedo_psnr", "albedo_ssim", "albedo_perceptual", "metallic_rmse", "roughness_rmse")
# higher is better for the first two, lower for the rest
HIGHER_BETTER = {"albedo_psnr": True, "albedo_ssim": True, "albedo_perceptual": False, "metallic_rmse": False, "roughness_rmse": False}


@dataclass
class EvalReport:
    per_sample: list
    aggregates: dict
    count: int
    config_hash: str
    checkpoints: dict
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "aggregates": self.aggregates,
            "checkpoints": self.checkpoints,
            "config_hash": self.config_hash,
            "count": self.count,
            "metadata": self.metadata,
            "per_sample": self.per_sample,
        }


def triplet_metrics(pred: MaterialTriplet, target: MaterialTriplet, mask: np.ndarray) -> dict:
    return {
        "albedo_psnr": psnr(pred.albedo, target.albedo, mask),
        "albedo_ssim": ssim(pred.albedo, target.albedo, mask),
        "albedo_perceptual": perceptual(pred.albedo, target.albedo, mask),
        "metallic_rmse": rmse(pred.metallic, target.metallic, mask),
        "roughness_rmse": rmse(pred.roughness, target.roughness, mask),
    }


def checkpoint_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:12]


def evaluate(
    manifest: DatasetManifest,
    models: ModelBundle,
    split: str,
    sampler_cfg: Optional[SamplerConfig] = None,
    seed: int = 0,
    config_hash: str = "",
    checkpoints: Optional[dict] = None,
    combine: str = "dual",
) -> EvalReport:
    """Single-view inference and metrics over every pair of a split.

    ``combine`` selects which prediction is scored: the dual-path output
    (default) or a single path's full triplet ("alb" / "mat"), used by the
    path-ablation comparisons.
    """
    records = manifest.split(split)
    if not records:
        raise ConfigError(f"evaluation split {split!r} is empty")
    if combine not in ("dual", "alb", "mat"):
        raise ConfigError(f"combine must be dual/alb/mat, got {combine!r}")
    sampler_cfg = sampler_cfg or SamplerConfig()

    per_sample = []
    for rec in records:
        image, target, mask = manifest.load_pair(rec)
        result = estimate_single(image, models, sampler_cfg, seed=derive_seed(seed, _stable_id(rec["id"])))
        pred = result["combined"] if combine == "dual" else result[combine]
        row = {"id": rec["id"]}
        row.update(triplet_metrics(pred, target, mask))
        per_sample.append(row)

    aggregates = {c: float(np.mean([row[c] for row in per_sample])) for c in COLUMNS}
    return EvalReport(
        per_sample=per_sample,
        aggregates=aggregates,
        count=len(per_sample),
        config_hash=config_hash,
        checkpoints=checkpoints or {},
        metadata={
            "split": split,
            "combine": combine,
            "seed": seed,
            "sampler_steps": sampler_cfg.steps,
            "masking": "metrics over foreground mask only",
            "perceptual": "random-feature proxy (not comparable to published LPIPS numbers)",
        },
    )


def _stable_id(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=4).digest(), "little")


def mean_baseline_triplet(manifest: DatasetManifest, split: str = "train") -> MaterialTriplet:
    """Per-pixel mean of the split's ground-truth maps: the
    predict-the-dataset-mean reference predictor."""
    records = manifest.split(split)
    if not records:
        raise ConfigError(f"baseline split {split!r} is empty")
    acc = None
    for rec in records:
        _, trip, _ = manifest.load_pair(rec)
        stack = trip.stack5().astype(np.float64)
        acc = stack if acc is None else acc + stack
    return MaterialTriplet.from_stack5((acc / len(records)).astype(np.float32))


def evaluate_baseline(manifest: DatasetManifest, split: str, baseline: Optional[MaterialTriplet] = None) -> EvalReport:
    """Score the constant mean-triplet predictor on a split."""
    baseline = baseline or mean_baseline_triplet(manifest, "train")
    records = manifest.split(split)
    if not records:
        raise ConfigError(f"evaluation split {split!r} is empty")
    per_sample = []
    for rec in records:
        _, target, mask = manifest.load_pair(rec)
        row = {"id": rec["id"]}
        row.update(triplet_metrics(baseline, target, mask))
        per_sample.append(row)
    aggregates = {c: float(np.mean([row[c] for row in per_sample])) for c in COLUMNS}
    return EvalReport(
        per_sample=per_sample,
        aggregates=aggregates,
        count=len(per_sample),
        config_hash="",
        checkpoints={},
        metadata={"split": split, "combine": "mean-baseline"},
    )


_HEADERS = ("sample", "alb PSNR", "alb SSIM", "alb perc*", "met RMSE", "rough RMSE")


def format_report_table(report: EvalReport) -> str:
    rows = [
        (row["id"],) + tuple(f"{row[c]:.4f}" for c in COLUMNS)
        for row in report.per_sample
    ]
    rows.append(("mean",) + tuple(f"{report.aggregates[c]:.4f}" for c in COLUMNS))
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(_HEADERS)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(_HEADERS)),
        "  ".join("-" * w for w in widths),
    ]
    for r in rows[:-1]:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(len(r))))
    lines.append("  ".join("-" * w for w in widths))
    lines.append("  ".join(rows[-1][i].ljust(widths[i]) for i in range(len(rows[-1]))))
    lines.append("")
    lines.append("* perceptual distance is a declared random-feature proxy")
    lines.append(f"samples: {report.count}   config: {report.config_hash or 'n/a'}")
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    txt_path = out_dir / "report.txt"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    txt_path.write_text(format_report_table(report), encoding="utf-8")
    return json_path, txt_path
