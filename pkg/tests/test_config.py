import pytest

from steercompose.config import RunConfig, coerce, read_config, write_config
from steercompose.core import ConfigError


def test_defaults_match_photorealism_setting():
    cfg = RunConfig()
    assert (cfg.num_solver_steps, cfg.alpha, cfg.guidance_scale) == (20, 0.2, 2.5)


def test_roundtrip(tmp_path):
    cfg = RunConfig(alpha=0.35, stage="post", rca=False, widths="8,16", noise_seed=7)
    write_config(cfg, tmp_path / "c.ini")
    assert read_config(tmp_path / "c.ini") == cfg


def test_headerless_file_and_comments(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("alpha = 0.5  # more steering\nrca = no\n")
    cfg = read_config(p)
    assert cfg.alpha == 0.5 and cfg.rca is False


@pytest.mark.parametrize("bad", [{"nope": "1"}, {"alpha": "x"}, {"rca": "maybe"}])
def test_coerce_errors(bad):
    with pytest.raises(ConfigError):
        coerce(bad)


@pytest.mark.parametrize("kw", [dict(stage="mid"), dict(samplers=3), dict(alpha=1.5), dict(guidance_scale=0)])
def test_invalid_values(kw):
    with pytest.raises(ConfigError):
        RunConfig(**kw)


def test_updated_coerces_strings():
    assert RunConfig().updated(alpha="0.4", samplers="4").samplers == 4
