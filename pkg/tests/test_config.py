import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csasr.config import (
    ConfigError,
    ModelConfig,
    RunConfig,
    TrainConfig,
    dump_config,
    load_run_config,
    full_model_config,
    parse_config_text,
    set_key,
)


def test_defaults():
    t = TrainConfig()
    assert (t.lr, t.beta1, t.beta2, t.eps, t.epochs) == (1e-4, 0.9, 0.99, 1e-8, 1500)
    assert [t.batch_for(s) for s in (2, 3, 4)] == [10, 8, 6]
    assert ModelConfig().csa.reduction == 16
    p = full_model_config()
    assert p.scale == 3 and p.transformer.embed_dim == 256


def test_file_then_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nmodel.scale = 3\ntrain.lr = 5e-4  # inline\nmodel.transformer.num_heads = 2\n")
    cfg = load_run_config(path, ["model.scale=4", "train.augment=true"])
    assert cfg.model.scale == 4 and cfg.train.lr == 5e-4 and cfg.train.augment is True
    assert cfg.model.transformer.num_heads == 2


@pytest.mark.parametrize("key", ["model.bogus", "bogus", "model.transformer.depth", "model.scale.x"])
def test_unknown_keys_rejected(key):
    with pytest.raises(ConfigError, match="unknown config key"):
        set_key(RunConfig(), key, "1")


def test_bad_values_and_lines():
    with pytest.raises(ConfigError):
        set_key(RunConfig(), "model.scale", "three")
    with pytest.raises(ConfigError):
        set_key(RunConfig(), "model.csa", "1")
    with pytest.raises(ConfigError):
        parse_config_text("model.scale 3")
    with pytest.raises(ConfigError):
        load_run_config(None, ["model.scale"])


def test_validation_lists_problems():
    cfg = ModelConfig(scale=5, num_stages=0)
    with pytest.raises(ConfigError) as info:
        cfg.validate()
    assert "scale" in str(info.value) and "num_stages" in str(info.value)
    with pytest.raises(ConfigError, match="betas"):
        TrainConfig(beta1=1.0).validate()


def test_dump_round_trip(tmp_path):
    cfg = load_run_config(None, ["model.scale=3", "train.seed=11", "model.global_skip=yes"])
    path = tmp_path / "dump.cfg"
    path.write_text("\n".join(dump_config(cfg)))
    assert load_run_config(path) == cfg


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([2, 3, 4]), st.integers(0, 2**31 - 1), st.floats(1e-6, 1.0))
def test_override_wins(scale, seed, lr):
    cfg = load_run_config(None, [f"model.scale={scale}", f"train.seed={seed}", f"train.lr={lr!r}"])
    assert (cfg.model.scale, cfg.train.seed, cfg.train.lr) == (scale, seed, lr)
