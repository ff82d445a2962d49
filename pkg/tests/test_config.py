import pytest

from eckconv.config import PRESETS, SCHEMA, ConfigError, load_config, parse_lines


def test_defaults_parse():
    cfg = load_config()
    assert set(cfg) == set(SCHEMA)
    assert cfg.m == (64, 32, 8) and cfg.A == 8 and cfg.residual is True
    assert cfg.classes == ("sphere", "cube", "torus", "cylinder")
    assert cfg.hidden == ()


def test_precedence_file_then_set_then_seed(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nA = 5\nepochs=3  # trailing\npreset=full\n")
    cfg = load_config(p, ["epochs=7"], seed=11)
    assert cfg.A == 5                  # file beats preset
    assert cfg.d == 64                 # preset beats default
    assert cfg.epochs == 7             # --set beats file
    assert cfg.seed == 11


def test_unknown_keys_and_bad_values(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        load_config(None, ["nope=1"])
    with pytest.raises(ConfigError, match="bad value"):
        load_config(None, ["A=many"])
    with pytest.raises(ConfigError):
        load_config(None, ["ordering=sideways"])
    with pytest.raises(ConfigError):
        load_config(None, ["preset=missing"])
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")
    with pytest.raises(ConfigError):
        parse_lines("novalue\n")


def test_digest_tracks_settings():
    a, b = load_config(), load_config()
    assert a.digest() == b.digest() and len(a.digest()) == 16
    assert load_config(None, ["seed=1"]).digest() != a.digest()


def test_presets_only_use_known_keys():
    for name, values in PRESETS.items():
        assert set(values) <= set(SCHEMA), name
        load_config(None, [f"preset={name}"])
