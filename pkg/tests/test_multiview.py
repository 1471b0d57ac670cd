import numpy as np
import pytest
import torch

from pbrflow.errors import ConfigError, RejectedInput
from pbrflow.flow import SamplerConfig
from pbrflow.multiview import ViewBatch, crossview_attention, estimate_multiview, finetune_multiview
from pbrflow.pipeline import estimate_single, load_models
from pbrflow.training import TrainSchedule, load_unet_checkpoint
from pbrflow.unet import SelfAttention


@pytest.fixture()
def layer():
    torch.manual_seed(0)
    return SelfAttention(channels=32, heads=4).eval()


class TestCrossviewAttention:
    def test_single_view_matches_plain_attention(self, layer):
        tokens = torch.randn(1, 10, 32)
        joint = crossview_attention(layer, tokens)
        plain = layer.attend_tokens(tokens)
        assert torch.allclose(joint, plain, atol=1e-6)

    def test_permutation_equivariance(self, layer):
        g = torch.Generator().manual_seed(1)
        tokens = torch.randn(4, 6, 32, generator=g)
        perm = torch.tensor([2, 0, 3, 1])
        out = crossview_attention(layer, tokens)
        out_perm = crossview_attention(layer, tokens[perm])
        assert torch.allclose(out[perm], out_perm, atol=1e-6)

    def test_shapes_preserved(self, layer):
        tokens = torch.randn(3, 5, 32)
        out = crossview_attention(layer, tokens)
        assert out.shape == tokens.shape

    def test_ragged_tokens_rejected(self, layer):
        with pytest.raises(RejectedInput):
            crossview_attention(layer, torch.randn(5, 32))

    def test_views_actually_interact(self, layer):
        g = torch.Generator().manual_seed(2)
        tokens = torch.randn(2, 6, 32, generator=g)
        out_joint = crossview_attention(layer, tokens)
        out_split = torch.stack([layer.attend_tokens(tokens[i : i + 1])[0] for i in range(2)])
        assert not torch.allclose(out_joint, out_split, atol=1e-5)


class TestSelfAttentionViewGrouping:
    def test_views_one_is_plain_path(self, layer):
        x = torch.randn(2, 32, 4, 4)
        assert torch.equal(layer(x, views=1), layer(x))

    def test_batch_not_divisible_rejected(self, layer):
        with pytest.raises(RejectedInput):
            layer(torch.randn(3, 32, 4, 4), views=2)


class TestViewBatch:
    def test_requires_equal_resolution(self):
        a = np.zeros((64, 64, 3), np.float32)
        b = np.zeros((32, 32, 3), np.float32)
        with pytest.raises(RejectedInput):
            ViewBatch([a, b])

    def test_requires_at_least_one(self):
        with pytest.raises(RejectedInput):
            ViewBatch([])


class TestEstimateMultiview:
    def test_output_length_and_order(self, tiny_ws):
        rng = np.random.default_rng(0)
        views = ViewBatch([rng.random((64, 64, 3)).astype(np.float32) for _ in range(3)])
        out = estimate_multiview(views, tiny_ws.models, SamplerConfig(steps=2), seed=5)
        assert len(out) == 3

    def test_duplicated_views_identical_outputs(self, tiny_ws):
        rng = np.random.default_rng(1)
        img = rng.random((64, 64, 3)).astype(np.float32)
        views = ViewBatch([img.copy() for _ in range(3)])
        out = estimate_multiview(views, tiny_ws.models, SamplerConfig(steps=3), seed=6, share_noise=True)
        for trip in out[1:]:
            assert np.abs(trip.albedo - out[0].albedo).max() <= 1e-5
            assert np.abs(trip.metallic - out[0].metallic).max() <= 1e-5
            assert np.abs(trip.roughness - out[0].roughness).max() <= 1e-5

    def test_single_view_reduces_bit_exactly(self, tiny_ws):
        rng = np.random.default_rng(2)
        img = rng.random((64, 64, 3)).astype(np.float32)
        mv = estimate_multiview(ViewBatch([img]), tiny_ws.models, SamplerConfig(steps=3), seed=7)[0]
        sv = estimate_single(img, tiny_ws.models, SamplerConfig(steps=3), seed=7)["combined"]
        assert np.array_equal(mv.albedo, sv.albedo)
        assert np.array_equal(mv.metallic, sv.metallic)
        assert np.array_equal(mv.roughness, sv.roughness)


@pytest.fixture(scope="module")
def mv_finetuned(tiny_ws, tiny_mv_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("mv_ckpts")
    sched = TrainSchedule(stage1_steps=1, stage2_steps=1, fd_cutoff_steps=0, batch_size=4, seed=9)
    finetune_multiview(
        tiny_mv_dataset,
        sched,
        tiny_ws.ckpt_dir / "unet_alb.ckpt",
        tiny_ws.ckpt_dir / "unet_mat.ckpt",
        tiny_ws.alb_codec,
        tiny_ws.mat_codec,
        tiny_ws.semantic,
        out / "unet_alb_mv.ckpt",
        out / "unet_mat_mv.ckpt",
        steps=20,
        log_path=out / "mv.csv",
    )
    return out


class TestFinetuneMultiview:
    def test_checkpoints_carry_multiview_flag(self, mv_finetuned):
        alb = load_unet_checkpoint(mv_finetuned / "unet_alb_mv.ckpt", expected_kind="unet_alb")
        mat = load_unet_checkpoint(mv_finetuned / "unet_mat_mv.ckpt", expected_kind="unet_mat")
        assert alb.multiview is True
        assert mat.multiview is True

    def test_models_load_for_inference(self, tiny_ws, mv_finetuned):
        import shutil

        for name in ("codec_alb.ckpt", "codec_mat.ckpt", "semantic.ckpt"):
            shutil.copy(tiny_ws.ckpt_dir / name, mv_finetuned / name)
        models = load_models(mv_finetuned, unet_alb_name="unet_alb_mv.ckpt", unet_mat_name="unet_mat_mv.ckpt")
        assert models.multiview is True
        rng = np.random.default_rng(3)
        views = ViewBatch([rng.random((64, 64, 3)).astype(np.float32) for _ in range(2)])
        out = estimate_multiview(views, models, SamplerConfig(steps=2), seed=8)
        assert len(out) == 2

    def test_empty_split_rejected(self, tiny_ws, tmp_path):
        from pbrflow.dataset import DatasetManifest

        empty = DatasetManifest(root=tmp_path, records=[])
        sched = TrainSchedule(seed=0)
        with pytest.raises(ConfigError):
            finetune_multiview(
                empty, sched,
                tiny_ws.ckpt_dir / "unet_alb.ckpt", tiny_ws.ckpt_dir / "unet_mat.ckpt",
                tiny_ws.alb_codec, tiny_ws.mat_codec, tiny_ws.semantic,
                tmp_path / "a.ckpt", tmp_path / "m.ckpt", steps=1,
            )

    def test_v1_groups_reduce_to_single_view_training(self, tiny_ws, tmp_path):
        # with one view per material the grouped forward is the plain batch
        # forward, so the loss trajectory matches a single-view run exactly
        sched = TrainSchedule(stage1_steps=1, stage2_steps=1, fd_cutoff_steps=0, batch_size=2, seed=11, deterministic=True)
        logs = []
        for tag in ("a", "b"):
            finetune_multiview(
                tiny_ws.manifest, sched,
                tiny_ws.ckpt_dir / "unet_alb.ckpt", tiny_ws.ckpt_dir / "unet_mat.ckpt",
                tiny_ws.alb_codec, tiny_ws.mat_codec, tiny_ws.semantic,
                tmp_path / f"alb_{tag}.ckpt", tmp_path / f"mat_{tag}.ckpt",
                steps=10, log_path=tmp_path / f"{tag}.csv",
            )
            logs.append((tmp_path / f"{tag}.csv").read_bytes())
        assert logs[0] == logs[1]
        assert (tmp_path / "alb_a.ckpt").read_bytes() == (tmp_path / "alb_b.ckpt").read_bytes()
