import pytest

from textmark.config import PROFILES, ConfigError, TrainConfig, load_config_file, make_config


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.lr_codec_pretrain, cfg.lr_codec_full, cfg.lr_stego) == (1e-4, 1e-8, 1e-4)
    assert cfg.strength == 0.8 and cfg.embedding_noise
    assert cfg.stego.image_size == 224 and cfg.stego.vit_dim == 768


def test_desk_profile():
    cfg = make_config("desk")
    assert cfg.stego.image_size == 64 and cfg.stego.patch_size == 8 and cfg.stego.vit_dim == 128
    assert cfg.codec.d_model == 32 and cfg.codec.num_layers == 1
    assert cfg.profile == "desk"


def test_override_order():
    cfg = make_config("desk", {"stego": {"vit_depth": 5}, "seed": 3})
    assert cfg.stego.vit_depth == 5 and cfg.stego.vit_dim == 128 and cfg.seed == 3


def test_epochs_alias():
    assert make_config("paper", {"epochs": 7}).pretrain_epochs == 7
    assert make_config("paper", {"epochs": 7, "phase": "full"}).full_epochs == 7


@pytest.mark.parametrize(
    "over, field",
    [
        ({"lr_stego": 0}, "lr_stego"),
        ({"full_epochs": 0}, "full_epochs"),
        ({"learning_rate": 1}, "learning_rate"),
        ({"stego": {"width": 3}}, "stego.width"),
        ({"grids": {"jpeg": [1]}}, "grids.jpeg"),
        ({"phase": "finetune"}, "phase"),
    ],
)
def test_errors_name_field(over, field):
    with pytest.raises(ConfigError, match=field):
        make_config("paper", over)


def test_unknown_profile():
    with pytest.raises(ConfigError, match="profile"):
        make_config("laptop")


def test_dict_round_trip():
    cfg = make_config("desk", {"seed": 11})
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 5\nstego:\n  vit_depth: 1\n")
    assert load_config_file(p) == {"seed": 5, "stego": {"vit_depth": 1}}
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config_file(p)
    with pytest.raises(ConfigError, match="not found"):
        load_config_file(tmp_path / "none.yaml")


def test_profiles_are_valid():
    for name in PROFILES:
        make_config(name)
