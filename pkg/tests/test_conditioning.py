import numpy as np
import pytest
import torch

from pbrflow.conditioning import (
    ConditioningBundle,
    SemanticEncoder,
    TokenProjection,
    build_condition,
    load_semantic_encoder,
    semantic_embed,
    structure_latent,
)
from pbrflow.errors import RejectedInput


@pytest.fixture()
def encoder():
    torch.manual_seed(0)
    return SemanticEncoder(expected_resolution=64).freeze()


@pytest.fixture()
def projection():
    torch.manual_seed(1)
    return TokenProjection(feature_dim=128, token_dim=64)


def rand_image(seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(1, 3, 64, 64, generator=g)


class TestSemanticEmbed:
    def test_deterministic(self, encoder, projection):
        x = rand_image()
        a = semantic_embed(x, encoder, projection)
        b = semantic_embed(x, encoder, projection)
        assert torch.equal(a, b)

    def test_token_shape_fixed(self, encoder, projection):
        for seed in (1, 2):
            tokens = semantic_embed(rand_image(seed), encoder, projection)
            assert tokens.shape == (1, 16, 64)

    def test_freeze_contract(self, encoder, projection):
        tokens = semantic_embed(rand_image(3), encoder, projection)
        tokens.pow(2).mean().backward()
        for p in encoder.parameters():
            assert p.grad is None
        grads = [p.grad for p in projection.parameters()]
        assert all(g is not None for g in grads)
        assert any(g.abs().max() > 0 for g in grads)

    def test_resolution_mismatch_rejected(self, encoder, projection):
        with pytest.raises(RejectedInput):
            semantic_embed(torch.rand(1, 3, 32, 32), encoder, projection)

    def test_frozen_weights_stay_frozen_after_step(self, encoder, projection):
        before = {k: v.clone() for k, v in encoder.state_dict().items()}
        opt = torch.optim.SGD(projection.parameters(), lr=0.1)
        loss = semantic_embed(rand_image(4), encoder, projection).pow(2).mean()
        loss.backward()
        opt.step()
        after = encoder.state_dict()
        for k in before:
            assert torch.equal(before[k], after[k])


class TestStructureLatent:
    def test_shape_and_purity(self, tiny_ws):
        x = rand_image(5)
        a = structure_latent(x, tiny_ws.alb_codec)
        b = structure_latent(x, tiny_ws.alb_codec)
        assert a.shape == (1, 4, 8, 8)
        assert torch.equal(a, b)

    def test_black_vs_white_distinct(self, tiny_ws):
        black = torch.zeros(1, 3, 64, 64)
        white = torch.ones(1, 3, 64, 64)
        za = structure_latent(black, tiny_ws.alb_codec)
        zb = structure_latent(white, tiny_ws.alb_codec)
        assert not torch.allclose(za, zb)


class TestBundle:
    def test_build_contains_both_fields(self, tiny_ws):
        img = np.random.default_rng(0).random((64, 64, 3)).astype(np.float32)
        bundle = build_condition(img, tiny_ws.semantic, tiny_ws.models.projection, tiny_ws.alb_codec)
        assert bundle.semantic_tokens.shape[1:] == (16, tiny_ws.base_cfg.token_dim)
        assert bundle.structure_latent.shape == (1, 4, 8, 8)

    def test_build_pure(self, tiny_ws):
        img = np.random.default_rng(1).random((64, 64, 3)).astype(np.float32)
        a = build_condition(img, tiny_ws.semantic, tiny_ws.models.projection, tiny_ws.alb_codec)
        b = build_condition(img, tiny_ws.semantic, tiny_ws.models.projection, tiny_ws.alb_codec)
        assert torch.equal(a.semantic_tokens, b.semantic_tokens)
        assert torch.equal(a.structure_latent, b.structure_latent)

    def test_serialization_roundtrip_bit_exact(self, tiny_ws, tmp_path):
        img = np.random.default_rng(2).random((64, 64, 3)).astype(np.float32)
        bundle = build_condition(img, tiny_ws.semantic, tiny_ws.models.projection, tiny_ws.alb_codec)
        path = tmp_path / "bundle.ckpt"
        bundle.save(path)
        again = ConditioningBundle.load(path)
        assert torch.equal(bundle.semantic_tokens, again.semantic_tokens)
        assert torch.equal(bundle.structure_latent, again.structure_latent)
        again.save(tmp_path / "bundle2.ckpt")
        assert (tmp_path / "bundle.ckpt").read_bytes() == (tmp_path / "bundle2.ckpt").read_bytes()

    def test_nonfinite_tokens_rejected(self):
        with pytest.raises(RejectedInput):
            ConditioningBundle(torch.full((1, 4, 8), float("nan")), torch.zeros(1, 4, 8, 8))


class TestCheckpoint:
    def test_semantic_roundtrip(self, tiny_ws):
        loaded = load_semantic_encoder(tiny_ws.ckpt_dir / "semantic.ckpt")
        x = rand_image(6)
        assert torch.equal(loaded(x), tiny_ws.semantic(x))
        assert all(not p.requires_grad for p in loaded.parameters())
