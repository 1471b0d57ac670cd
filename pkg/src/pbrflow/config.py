"""Run configuration: flat ``section.key = value`` documents.

Every tunable has a default; unknown keys are rejected by name.  Parsing and
serialization form a fixed point, and the canonical serialization is hashed
into reports for provenance.
"""
from __future__ import annotations

import hashlib
from pathlib import Path

from .errors import ConfigError

DEFAULTS: dict[str, object] = {
    # global execution controls
    "run.seed": 0,
    "run.deterministic": False,
    # synthetic dataset generation
    "data.count": 16,
    "data.resolution": 64,
    "data.views_per_material": 1,
    "data.seed": 0,
    "data.overwrite": False,
    # latent codecs (both paths)
    "codec.base_width": 48,
    "codec.steps": 5000,
    "codec.batch_size": 4,
    "codec.lr": 1e-4,
    "codec.seed": 0,
    "codec.lambda_rec": 1.0,
    "codec.lambda_perc": 0.001,
    "codec.lambda_adv": 0.01,
    "codec.lambda_code": 0.1,
    "codec.adv_start_frac": 0.1,
    "codec.grayscale_mix": 0.15,
    # frozen semantic encoder pretraining
    "semantic.steps": 600,
    "semantic.batch_size": 8,
    "semantic.lr": 1e-3,
    "semantic.seed": 0,
    # denoiser architecture (shared interior for both paths)
    "unet.base_width": 64,
    "unet.channel_mults": "1,2,2,4",
    "unet.attention_levels": "2,3",
    "unet.token_dim": 256,
    "unet.num_heads": 4,
    # two-stage training
    "train.stage1_steps": 2000,
    "train.stage2_steps": 2000,
    "train.fd_cutoff_steps": 200,
    "train.lambda_fd": 1.0,
    "train.batch_size": 4,
    "train.lr": 1e-4,
    "train.seed": 0,
    # multi-view fine-tuning
    "multiview.steps": 400,
    "multiview.views": 4,
    "multiview.seed": 0,
    # sampling and guided tiling
    "sampler.steps": 3,
    "guidance.gamma": 0.1,
    "guidance.blur_sigma": 0.0,  # 0 = derive from the downsample factor
    "tiling.overlap_frac": 0.25,
    # evaluation
    "eval.split": "val",
    "eval.seed": 0,
    # inference inputs/outputs (paths relative to the workdir)
    "infer.image": "",
    "infer.images": "",
    "infer.out": "estimate",
    "infer.seed": 0,
    # artifact locations (relative to the workdir)
    "io.dataset": "dataset",
    "io.ckpt_dir": "ckpts",
    "io.report_dir": "reports",
    "io.unet_alb": "unet_alb.ckpt",
    "io.unet_mat": "unet_mat.ckpt",
    "io.unet_alb_mv": "unet_alb_mv.ckpt",
    "io.unet_mat_mv": "unet_mat_mv.ckpt",
}


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"key {key!r} expects a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"key {key!r} expects an integer, got {raw!r}") from exc
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"key {key!r} expects a number, got {raw!r}") from exc
    return raw


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunConfig:
    """Validated flat key-value configuration with typed accessors."""

    def __init__(self, values: dict | None = None):
        self._values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key: {key}")
        if isinstance(value, str) and not isinstance(DEFAULTS[key], str):
            value = _coerce(key, value)
        expected = type(DEFAULTS[key])
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, expected) or isinstance(value, bool) != isinstance(DEFAULTS[key], bool):
            raise ConfigError(f"key {key!r} expects {expected.__name__}, got {type(value).__name__}")
        self._values[key] = value

    def get(self, key: str):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key: {key}")
        return self._values[key]

    def ints(self, key: str) -> tuple[int, ...]:
        """Comma-separated integer list value."""
        raw = str(self.get(key))
        try:
            return tuple(int(part) for part in raw.split(",") if part.strip() != "")
        except ValueError as exc:
            raise ConfigError(f"key {key!r} must be a comma-separated integer list, got {raw!r}") from exc

    def strings(self, key: str) -> list[str]:
        raw = str(self.get(key))
        return [part.strip() for part in raw.split(",") if part.strip()]

    def serialize(self) -> str:
        lines = []
        section = None
        for key in sorted(self._values):
            sec = key.split(".", 1)[0]
            if sec != section:
                if section is not None:
                    lines.append("")
                lines.append(f"# [{sec}]")
                section = sec
            lines.append(f"{key} = {_format(self._values[key])}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()[:16]

    @staticmethod
    def parse(text: str) -> "RunConfig":
        cfg = RunConfig()
        for lineno, line in enumerate(text.splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"line {lineno}: expected 'section.key = value', got {line!r}")
            key, raw = body.split("=", 1)
            key = key.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"line {lineno}: unknown config key: {key}")
            cfg._values[key] = _coerce(key, raw)
        return cfg

    @staticmethod
    def load(path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise OSError(f"config file not found: {path}")
        return RunConfig.parse(path.read_text(encoding="utf-8"))

    def apply_overrides(self, pairs: list[str]) -> None:
        """--set key=value overrides; config-file values lose to these."""
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override must look like key=value, got {pair!r}")
            key, raw = pair.split("=", 1)
            key = key.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key: {key}")
            self._values[key] = _coerce(key, raw)
