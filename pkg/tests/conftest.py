"""Shared fixtures: a small end-to-end trained stack reused by integration
tests.  Widths and step counts are deliberately tiny; quality-gated checks
live in the acceptance suite, which trains at the full desk configuration."""
from types import SimpleNamespace

import pytest

from pbrflow.codec_training import CodecTrainConfig, train_albedo_codec, train_material_codec
from pbrflow.conditioning import pretrain_semantic_encoder
from pbrflow.dataset import make_dataset
from pbrflow.pipeline import load_models
from pbrflow.training import TrainSchedule, train_stage1, train_stage2
from pbrflow.unet import UNetConfig

TINY_UNET = UNetConfig(in_channels=16, out_channels=12, base_width=16, token_dim=64, num_heads=4)


@pytest.fixture(scope="session")
def tiny_ws(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_ws")
    manifest = make_dataset(count=8, seed=100, resolution=64, views_per_material=1, out_path=root / "dataset")
    ckpts = root / "ckpts"

    codec_cfg = CodecTrainConfig(steps=200, batch_size=4, base_width=16, seed=0)
    alb_codec = train_albedo_codec(manifest, codec_cfg, ckpts / "codec_alb.ckpt")
    mat_codec = train_material_codec(manifest, codec_cfg, ckpts / "codec_mat.ckpt")
    semantic = pretrain_semantic_encoder(manifest, steps=120, seed=0, out_path=ckpts / "semantic.ckpt")

    schedule = TrainSchedule(stage1_steps=150, stage2_steps=150, fd_cutoff_steps=50, batch_size=4, seed=0)
    train_stage1(
        manifest, schedule, alb_codec, mat_codec, semantic, TINY_UNET,
        ckpts / "unet_alb.ckpt", root / "stage1.csv",
    )
    train_stage2(
        manifest, schedule, ckpts / "unet_alb.ckpt", alb_codec, mat_codec, semantic, TINY_UNET,
        ckpts / "unet_mat.ckpt", root / "stage2.csv",
    )
    models = load_models(ckpts)
    return SimpleNamespace(
        root=root,
        manifest=manifest,
        ckpt_dir=ckpts,
        models=models,
        base_cfg=TINY_UNET,
        schedule=schedule,
        codec_cfg=codec_cfg,
        alb_codec=alb_codec,
        mat_codec=mat_codec,
        semantic=semantic,
        stage1_log=root / "stage1.csv",
        stage2_log=root / "stage2.csv",
    )


@pytest.fixture(scope="session")
def tiny_mv_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_mv")
    return make_dataset(count=3, seed=200, resolution=64, views_per_material=2, out_path=root / "dataset")
