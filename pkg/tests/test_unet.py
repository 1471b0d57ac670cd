import pytest
import torch

from pbrflow.conditioning import ConditioningBundle
from pbrflow.errors import RejectedInput
from pbrflow.unet import DualUNet, UNetConfig, adapt_io_layers, sinusoidal_time_embedding

BASE = UNetConfig(in_channels=16, out_channels=12, base_width=16, token_dim=64, num_heads=4)


def make_bundle(batch=1, h=8, w=8, token_dim=64, seed=0):
    g = torch.Generator().manual_seed(seed)
    return ConditioningBundle(
        semantic_tokens=torch.randn(batch, 16, token_dim, generator=g),
        structure_latent=torch.randn(batch, 4, h, w, generator=g),
    )


@pytest.fixture(scope="module")
def unet_alb():
    torch.manual_seed(0)
    return DualUNet(adapt_io_layers(BASE, 12)).eval()


class TestIOAdaptation:
    def test_alb_channels(self):
        cfg = adapt_io_layers(BASE, 12)
        assert cfg.in_channels == 16
        assert cfg.out_channels == 12

    def test_mat_channels(self):
        cfg = adapt_io_layers(BASE, 14)
        assert cfg.in_channels == 18
        assert cfg.out_channels == 14

    def test_interior_identical_across_paths(self):
        a = adapt_io_layers(BASE, 12)
        m = adapt_io_layers(BASE, 14)
        assert a.widths() == m.widths()
        assert a.base_width == m.base_width
        assert a.channel_mults == m.channel_mults
        assert a.attention_levels == m.attention_levels

    def test_interior_parameter_shapes_match(self):
        torch.manual_seed(0)
        ua = DualUNet(adapt_io_layers(BASE, 12))
        um = DualUNet(adapt_io_layers(BASE, 14))
        sa, sm = ua.state_dict(), um.state_dict()
        assert set(sa) == set(sm)
        for k in sa:
            if k.startswith(("in_conv", "out_conv")):
                continue
            assert sa[k].shape == sm[k].shape, k


class TestForward:
    def test_velocity_shape_and_tap_count(self, unet_alb):
        cond = make_bundle()
        out = unet_alb(torch.randn(1, 12, 8, 8), 0.5, cond)
        assert out.velocity.shape == (1, 12, 8, 8)
        assert len(out.taps) == 9

    def test_tap_count_independent_of_resolution(self, unet_alb):
        cond = make_bundle(h=16, w=16)
        out = unet_alb(torch.randn(1, 12, 16, 16), 0.25, cond)
        assert out.velocity.shape == (1, 12, 16, 16)
        assert len(out.taps) == 9

    def test_tap_order_spatial_sizes(self, unet_alb):
        cond = make_bundle()
        taps = unet_alb(torch.randn(1, 12, 8, 8), 0.1, cond).taps
        sizes = [t.shape[-1] for t in taps]
        assert sizes == [8, 4, 2, 1, 1, 1, 2, 4, 8]

    def test_eval_mode_purity(self, unet_alb):
        cond = make_bundle(seed=3)
        z = torch.randn(2, 12, 8, 8)
        a = unet_alb(z, 0.7, cond.select(torch.arange(1).repeat(2)))
        b = unet_alb(z, 0.7, cond.select(torch.arange(1).repeat(2)))
        assert torch.equal(a.velocity, b.velocity)

    def test_semantic_tokens_are_live(self):
        torch.manual_seed(1)
        net = DualUNet(adapt_io_layers(BASE, 12)).eval()
        # break the zero-init of the output conv so token changes can reach it
        with torch.no_grad():
            torch.manual_seed(2)
            net.out_conv.weight.normal_(0, 0.05)
        cond_a = make_bundle(seed=5)
        cond_b = ConditioningBundle(cond_a.semantic_tokens + 1.0, cond_a.structure_latent)
        z = torch.randn(1, 12, 8, 8)
        va = net(z, 0.5, cond_a).velocity
        vb = net(z, 0.5, cond_b).velocity
        assert not torch.allclose(va, vb)

    def test_batched_time(self, unet_alb):
        cond = make_bundle(batch=3, seed=7)
        out = unet_alb(torch.randn(3, 12, 8, 8), torch.tensor([0.0, 0.5, 1.0]), cond)
        assert out.velocity.shape == (3, 12, 8, 8)


class TestForwardValidation:
    def test_wrong_latent_channels(self, unet_alb):
        with pytest.raises(RejectedInput):
            unet_alb(torch.randn(1, 14, 8, 8), 0.5, make_bundle())

    def test_spatial_mismatch(self, unet_alb):
        cond = make_bundle(h=16, w=16)
        with pytest.raises(RejectedInput):
            unet_alb(torch.randn(1, 12, 8, 8), 0.5, cond)

    def test_time_out_of_range(self, unet_alb):
        with pytest.raises(RejectedInput):
            unet_alb(torch.randn(1, 12, 8, 8), 1.5, make_bundle())
        with pytest.raises(RejectedInput):
            unet_alb(torch.randn(1, 12, 8, 8), -0.1, make_bundle())


class TestGradientFlow:
    def test_every_parameter_receives_gradient(self):
        torch.manual_seed(4)
        net = DualUNet(adapt_io_layers(BASE, 12)).train()
        cond = make_bundle(seed=9)
        out = net(torch.randn(1, 12, 8, 8), 0.4, cond)
        loss = (out.velocity**2).mean() + sum((t**2).mean() for t in out.taps)
        loss.backward()
        for name, p in net.named_parameters():
            assert p.grad is not None, name
            assert torch.isfinite(p.grad).all(), name


class TestTimeEmbedding:
    def test_shape_and_determinism(self):
        t = torch.tensor([0.0, 0.5, 1.0])
        e1 = sinusoidal_time_embedding(t, 128)
        e2 = sinusoidal_time_embedding(t, 128)
        assert e1.shape == (3, 128)
        assert torch.equal(e1, e2)

    def test_distinct_times_distinct_embeddings(self):
        t = torch.tensor([0.1, 0.9])
        e = sinusoidal_time_embedding(t, 64)
        assert not torch.allclose(e[0], e[1])
