"""Command-line interface.

Every subcommand takes ``--config <file>`` plus repeatable ``--set
key=value`` overrides; paths in the config are resolved relative to
``--workdir``.  Exit codes: 0 success, 1 validation/configuration error,
2 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .codec_training import (
    CodecTrainConfig,
    load_albedo_codec,
    load_material_codec,
    train_albedo_codec,
    train_material_codec,
)
from .codecs import CodecLossWeights
from .conditioning import load_semantic_encoder, pretrain_semantic_encoder
from .config import RunConfig
from .dataset import DatasetManifest, _read_png, make_dataset
from .errors import ConfigError, RejectedInput
from .evaluate import checkpoint_digest, evaluate, write_report
from .flow import SamplerConfig
from .multiview import ViewBatch, estimate_multiview, finetune_multiview
from .pipeline import estimate_single, load_models, save_triplet_pngs
from .tiling import GuidanceConfig, estimate_hires
from .training import TrainSchedule, train_stage1, train_stage2
from .unet import UNetConfig
from .utils import enable_determinism

SUBCOMMANDS = (
    "gen-data",
    "train-codec",
    "train-stage1",
    "train-stage2",
    "finetune-mv",
    "infer",
    "infer-hires",
    "infer-mv",
    "eval",
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we map usage errors to 1
        raise _UsageError(f"{message}\n{self.format_usage()}")


def build_parser() -> _Parser:
    parser = _Parser(prog="pbrflow", description="dual-path rectified-flow PBR material estimation")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, add_help=True)
        p.add_argument("--config", type=str, default=None, help="config file (section.key = value lines)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--workdir", type=str, default=".", help="base directory for all relative paths")
        p.add_argument("--deterministic", action="store_true", help="single-threaded bit-reproducible mode")
    return parser


def _base_unet_config(cfg: RunConfig) -> UNetConfig:
    return UNetConfig(
        in_channels=0,
        out_channels=0,
        base_width=cfg.get("unet.base_width"),
        channel_mults=cfg.ints("unet.channel_mults"),
        attention_levels=cfg.ints("unet.attention_levels"),
        token_dim=cfg.get("unet.token_dim"),
        num_heads=cfg.get("unet.num_heads"),
    )


def _codec_config(cfg: RunConfig) -> CodecTrainConfig:
    return CodecTrainConfig(
        steps=cfg.get("codec.steps"),
        batch_size=cfg.get("codec.batch_size"),
        lr=cfg.get("codec.lr"),
        seed=cfg.get("codec.seed"),
        base_width=cfg.get("codec.base_width"),
        weights=CodecLossWeights(
            lambda_rec=cfg.get("codec.lambda_rec"),
            lambda_perc=cfg.get("codec.lambda_perc"),
            lambda_adv=cfg.get("codec.lambda_adv"),
            lambda_code=cfg.get("codec.lambda_code"),
        ),
        adv_start_frac=cfg.get("codec.adv_start_frac"),
        grayscale_mix=cfg.get("codec.grayscale_mix"),
        deterministic=cfg.get("run.deterministic"),
    )


def _schedule(cfg: RunConfig, seed_key: str = "train.seed") -> TrainSchedule:
    return TrainSchedule(
        stage1_steps=cfg.get("train.stage1_steps"),
        stage2_steps=cfg.get("train.stage2_steps"),
        fd_cutoff_steps=cfg.get("train.fd_cutoff_steps"),
        lambda_fd=cfg.get("train.lambda_fd"),
        batch_size=cfg.get("train.batch_size"),
        lr=cfg.get("train.lr"),
        seed=cfg.get(seed_key),
        deterministic=cfg.get("run.deterministic"),
    )


def _manifest(cfg: RunConfig, wd: Path) -> DatasetManifest:
    return DatasetManifest.load(wd / cfg.get("io.dataset"))


def _ckpt_dir(cfg: RunConfig, wd: Path) -> Path:
    return wd / cfg.get("io.ckpt_dir")


def _load_frozen_stack(cfg: RunConfig, wd: Path):
    ckpts = _ckpt_dir(cfg, wd)
    return (
        load_albedo_codec(ckpts / "codec_alb.ckpt"),
        load_material_codec(ckpts / "codec_mat.ckpt"),
        load_semantic_encoder(ckpts / "semantic.ckpt"),
    )


def _sampler(cfg: RunConfig) -> SamplerConfig:
    return SamplerConfig(steps=cfg.get("sampler.steps"))


def _read_image(path: Path) -> np.ndarray:
    img = _read_png(path)
    if img.ndim != 3 or img.shape[2] != 3:
        raise RejectedInput(f"{path} is not an RGB image")
    return img


def cmd_gen_data(cfg: RunConfig, wd: Path) -> None:
    manifest = make_dataset(
        count=cfg.get("data.count"),
        seed=cfg.get("data.seed"),
        resolution=cfg.get("data.resolution"),
        views_per_material=cfg.get("data.views_per_material"),
        out_path=wd / cfg.get("io.dataset"),
        overwrite=cfg.get("data.overwrite"),
    )
    print(f"wrote {len(manifest.records)} pairs under {manifest.root}")


def cmd_train_codec(cfg: RunConfig, wd: Path) -> None:
    manifest = _manifest(cfg, wd)
    ckpts = _ckpt_dir(cfg, wd)
    ccfg = _codec_config(cfg)
    train_albedo_codec(manifest, ccfg, ckpts / "codec_alb.ckpt")
    print(f"wrote {ckpts / 'codec_alb.ckpt'}")
    train_material_codec(manifest, ccfg, ckpts / "codec_mat.ckpt")
    print(f"wrote {ckpts / 'codec_mat.ckpt'}")
    pretrain_semantic_encoder(
        manifest,
        steps=cfg.get("semantic.steps"),
        batch_size=cfg.get("semantic.batch_size"),
        lr=cfg.get("semantic.lr"),
        seed=cfg.get("semantic.seed"),
        out_path=ckpts / "semantic.ckpt",
        deterministic=cfg.get("run.deterministic"),
    )
    print(f"wrote {ckpts / 'semantic.ckpt'}")


def cmd_train_stage1(cfg: RunConfig, wd: Path) -> None:
    manifest = _manifest(cfg, wd)
    ckpts = _ckpt_dir(cfg, wd)
    alb_codec, mat_codec, semantic = _load_frozen_stack(cfg, wd)
    out = ckpts / cfg.get("io.unet_alb")
    train_stage1(
        manifest, _schedule(cfg), alb_codec, mat_codec, semantic, _base_unet_config(cfg),
        out, ckpts / "stage1_log.csv",
    )
    print(f"wrote {out}")


def cmd_train_stage2(cfg: RunConfig, wd: Path) -> None:
    manifest = _manifest(cfg, wd)
    ckpts = _ckpt_dir(cfg, wd)
    alb_codec, mat_codec, semantic = _load_frozen_stack(cfg, wd)
    out = ckpts / cfg.get("io.unet_mat")
    train_stage2(
        manifest, _schedule(cfg), ckpts / cfg.get("io.unet_alb"), alb_codec, mat_codec, semantic,
        _base_unet_config(cfg), out, ckpts / "stage2_log.csv",
    )
    print(f"wrote {out}")


def cmd_finetune_mv(cfg: RunConfig, wd: Path) -> None:
    manifest = _manifest(cfg, wd)
    ckpts = _ckpt_dir(cfg, wd)
    alb_codec, mat_codec, semantic = _load_frozen_stack(cfg, wd)
    out_alb = ckpts / cfg.get("io.unet_alb_mv")
    out_mat = ckpts / cfg.get("io.unet_mat_mv")
    finetune_multiview(
        manifest, _schedule(cfg, seed_key="multiview.seed"),
        ckpts / cfg.get("io.unet_alb"), ckpts / cfg.get("io.unet_mat"),
        alb_codec, mat_codec, semantic, out_alb, out_mat,
        steps=cfg.get("multiview.steps"), log_path=ckpts / "mv_log.csv",
    )
    print(f"wrote {out_alb}")
    print(f"wrote {out_mat}")


def _models(cfg: RunConfig, wd: Path, multiview: bool = False):
    ckpts = _ckpt_dir(cfg, wd)
    if multiview:
        alb = ckpts / cfg.get("io.unet_alb_mv")
        mat = ckpts / cfg.get("io.unet_mat_mv")
        if alb.exists() and mat.exists():
            return load_models(ckpts, unet_alb_name=alb.name, unet_mat_name=mat.name)
        print("multi-view checkpoints not found; using single-view weights with cross-view attention")
    return load_models(ckpts, unet_alb_name=cfg.get("io.unet_alb"), unet_mat_name=cfg.get("io.unet_mat"))


def cmd_infer(cfg: RunConfig, wd: Path) -> None:
    if not cfg.get("infer.image"):
        raise ConfigError("infer.image must name an input image")
    image = _read_image(wd / cfg.get("infer.image"))
    models = _models(cfg, wd)
    result = estimate_single(image, models, _sampler(cfg), seed=cfg.get("infer.seed"))
    out = wd / cfg.get("infer.out")
    save_triplet_pngs(result["combined"], out)
    save_triplet_pngs(result["alb"], out / "path_alb")
    save_triplet_pngs(result["mat"], out / "path_mat")
    print(f"wrote {out}")


def cmd_infer_hires(cfg: RunConfig, wd: Path) -> None:
    if not cfg.get("infer.image"):
        raise ConfigError("infer.image must name an input image")
    image = _read_image(wd / cfg.get("infer.image"))
    models = _models(cfg, wd)
    res = models.train_resolution
    overlap = int(round(cfg.get("tiling.overlap_frac") * res))
    sigma = cfg.get("guidance.blur_sigma")
    if sigma <= 0:
        sigma = max(image.shape[0], image.shape[1]) / res / 2.0
    guidance = GuidanceConfig(gamma=cfg.get("guidance.gamma"), blur_sigma=sigma)
    triplet, diag = estimate_hires(
        image, models, _sampler(cfg), guidance, seed=cfg.get("infer.seed"), overlap=overlap,
    )
    out = wd / cfg.get("infer.out")
    save_triplet_pngs(triplet, out)
    with open(out / "tiling.json", "w", encoding="utf-8") as fh:
        json.dump(diag, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out} (seam={diag['seam']:.6f}, patches={diag['patches']})")


def cmd_infer_mv(cfg: RunConfig, wd: Path) -> None:
    paths = cfg.strings("infer.images")
    if not paths:
        raise ConfigError("infer.images must list input images (comma separated, in view order)")
    images = [_read_image(wd / p) for p in paths]
    models = _models(cfg, wd, multiview=True)
    triplets = estimate_multiview(ViewBatch(images), models, _sampler(cfg), seed=cfg.get("infer.seed"))
    out = wd / cfg.get("infer.out")
    for i, trip in enumerate(triplets):
        save_triplet_pngs(trip, out / f"view_{i:02d}")
    print(f"wrote {out} ({len(triplets)} views)")


def cmd_eval(cfg: RunConfig, wd: Path) -> None:
    manifest = _manifest(cfg, wd)
    models = _models(cfg, wd)
    ckpts = _ckpt_dir(cfg, wd)
    names = ["codec_alb.ckpt", "codec_mat.ckpt", "semantic.ckpt", cfg.get("io.unet_alb"), cfg.get("io.unet_mat")]
    digests = {name: checkpoint_digest(ckpts / name) for name in names}
    report = evaluate(
        manifest, models, cfg.get("eval.split"), _sampler(cfg), seed=cfg.get("eval.seed"),
        config_hash=cfg.hash(), checkpoints=digests,
    )
    json_path, txt_path = write_report(report, wd / cfg.get("io.report_dir"))
    print(txt_path.read_text(encoding="utf-8"))
    print(f"wrote {json_path}")
    print(f"wrote {txt_path}")


DISPATCH = {
    "gen-data": cmd_gen_data,
    "train-codec": cmd_train_codec,
    "train-stage1": cmd_train_stage1,
    "train-stage2": cmd_train_stage2,
    "finetune-mv": cmd_finetune_mv,
    "infer": cmd_infer,
    "infer-hires": cmd_infer_hires,
    "infer-mv": cmd_infer_mv,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # -h/--help
        return int(exc.code or 0)

    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        cfg.apply_overrides(args.overrides)
        if args.deterministic:
            cfg.set("run.deterministic", True)
        enable_determinism(cfg.get("run.deterministic"))
        DISPATCH[args.command](cfg, Path(args.workdir))
        return 0
    except (ConfigError, RejectedInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
