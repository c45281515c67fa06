import pytest

from evonav.config import RunConfig, dump_config, load_config, parse_config_text
from evonav.errors import ConfigError


def test_defaults():
    cfg = load_config()
    assert cfg == RunConfig()
    assert (cfg.levels, cfg.threshold) == (5, 0.75)


def test_file_then_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nseed = 4\nwindow = 12   # trailing\n\nterminal_wall = yes\n")
    cfg = load_config(p, {"seed": 9, "window": None})
    assert cfg.seed == 9 and cfg.window == 12 and cfg.terminal_wall is True


def test_dump_round_trip(tmp_path):
    cfg = RunConfig(seed=3, sigma=0.125, terminal_wall=True)
    p = tmp_path / "c.cfg"
    p.write_text(dump_config(cfg))
    assert load_config(p) == cfg


@pytest.mark.parametrize("text", ["seed 3", "seed = three", "terminal_wall = maybe", "sigma = -1", "colour = red"])
def test_bad_configs(tmp_path, text):
    p = tmp_path / "bad.cfg"
    p.write_text(text + "\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_line_numbers_in_errors():
    with pytest.raises(ConfigError, match="x.cfg:2"):
        parse_config_text("a = 1\noops\n", "x.cfg")
