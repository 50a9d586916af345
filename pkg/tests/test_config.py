import pytest

from subitize.config import ConfigError, PipelineConfig, load_config, parse_config_text


def test_defaults_roundtrip(tmp_path):
    cfg = PipelineConfig()
    p = cfg.write(tmp_path)
    assert p.read_text().startswith("# subitize ")
    assert load_config(p) == cfg


def test_overrides_are_typed():
    cfg = parse_config_text("""
        # comment
        seed = 7
        synth.canvas_size = 64
        synth.ref_scale_range = 0.3, 0.5
        train.hflip = false
        train.base_lr = 0.01
    """)
    assert cfg.seed == 7 and cfg.synth.canvas_size == 64
    assert cfg.synth.ref_scale_range == (0.3, 0.5)
    assert cfg.train.hflip is False and cfg.train.base_lr == 0.01
    assert cfg.stage2.base_lr == 0.001


@pytest.mark.parametrize("text", [
    "nope = 1",
    "train.nope = 1",
    "train.base_lr = fast",
    "train.hflip = maybe",
    "synth.ref_scale_range = 0.4",
    "synth.max_occlusion = 1.5",
    "seed = 1\nseed = 2",
    "just words",
])
def test_bad_config_raises(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_roundtrip_after_override(tmp_path):
    cfg = parse_config_text("eval.knn_k = 10\nsynth.rotation_range_deg = -5.0, 5.0")
    assert load_config(cfg.write(tmp_path)) == cfg
