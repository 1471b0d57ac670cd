import pytest

from pbrflow.config import DEFAULTS, RunConfig
from pbrflow.errors import ConfigError


class TestDefaults:
    def test_documented_defaults(self):
        cfg = RunConfig()
        assert cfg.get("sampler.steps") == 3
        assert cfg.get("guidance.gamma") == 0.1
        assert cfg.get("tiling.overlap_frac") == 0.25
        assert cfg.get("codec.lambda_rec") == 1.0
        assert cfg.get("codec.lambda_perc") == 0.001
        assert cfg.get("codec.lambda_code") == 0.1
        assert cfg.get("codec.lambda_adv") == 0.01
        assert cfg.get("train.lambda_fd") == 1.0
        assert cfg.get("train.stage1_steps") == 2000
        assert cfg.get("train.stage2_steps") == 2000
        assert cfg.get("train.fd_cutoff_steps") == 200
        assert cfg.get("codec.steps") == 5000
        assert cfg.get("unet.base_width") == 64
        assert cfg.ints("unet.channel_mults") == (1, 2, 2, 4)

    def test_every_key_defaulted(self):
        cfg = RunConfig()
        for key in DEFAULTS:
            cfg.get(key)


class TestParsing:
    def test_parse_sections_comments_and_values(self):
        text = """
# a comment
sampler.steps = 4   # trailing comment
guidance.gamma = 0.2
run.deterministic = true
io.dataset = my_data
"""
        cfg = RunConfig.parse(text)
        assert cfg.get("sampler.steps") == 4
        assert cfg.get("guidance.gamma") == 0.2
        assert cfg.get("run.deterministic") is True
        assert cfg.get("io.dataset") == "my_data"

    def test_unknown_key_rejected_by_name(self):
        with pytest.raises(ConfigError, match="sampler.stepz"):
            RunConfig.parse("sampler.stepz = 3")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig.parse("sampler.steps = many")
        with pytest.raises(ConfigError):
            RunConfig.parse("run.deterministic = perhaps")

    def test_malformed_line_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig.parse("sampler.steps 3")

    def test_roundtrip_fixed_point(self):
        cfg = RunConfig()
        cfg.set("guidance.gamma", 0.05)
        cfg.set("io.dataset", "elsewhere")
        s1 = cfg.serialize()
        s2 = RunConfig.parse(s1).serialize()
        assert s1 == s2

    def test_hash_tracks_content(self):
        a = RunConfig()
        b = RunConfig()
        b.set("sampler.steps", 4)
        assert a.hash() != b.hash()
        assert a.hash() == RunConfig().hash()


class TestOverrides:
    def test_set_overrides_config_value(self):
        cfg = RunConfig.parse("sampler.steps = 2")
        cfg.apply_overrides(["sampler.steps=3"])
        assert cfg.get("sampler.steps") == 3

    def test_unknown_override_rejected(self):
        cfg = RunConfig()
        with pytest.raises(ConfigError, match="nope.key"):
            cfg.apply_overrides(["nope.key=1"])

    def test_malformed_override_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig().apply_overrides(["sampler.steps"])

    def test_typed_set(self):
        cfg = RunConfig()
        with pytest.raises(ConfigError):
            cfg.set("sampler.steps", "x")
        cfg.set("codec.lr", 1)  # int promoted to float
        assert cfg.get("codec.lr") == 1.0
