import pytest
from hypothesis import given, strategies as st

from tanglepick.config import KEYS, Config, ConfigError, config_checksum, dump_config, load_config, parse_config


def test_empty_text_is_default_config():
    assert parse_config("") == Config()
    assert parse_config("# only a comment\n\n") == Config()


def test_default_round_trip():
    assert parse_config(dump_config(Config())) == Config()
    assert [line.split(" = ")[0] for line in dump_config(Config()).splitlines()] == list(KEYS)


@given(st.sampled_from(["Magnet", "Gripper"]), st.sampled_from(["full", "single"]), st.floats(0.05, 5),
       st.integers(1, 50), st.lists(st.integers(0, 2**63), min_size=1, max_size=5), st.none() | st.floats(0, 1),
       st.floats(1e-7, 1e-3))
def test_config_round_trip_is_lossless(protocol, grid, tau, iterations, seeds, const, dt):
    cfg = Config(protocol=protocol, grid=grid, tau_mm=tau, iterations=iterations, seeds=tuple(seeds),
                 link_constant=const, dt_s=dt)
    assert parse_config(dump_config(cfg)) == cfg


def test_parse_values_and_comments():
    cfg = parse_config("protocol = Gripper  # jaw\nseeds = 3, 4,5\nlink_constant = 0.5\ngrain_types = v,I\n")
    assert cfg.protocol == "Gripper" and cfg.seeds == (3, 4, 5) and cfg.link_constant == 0.5
    assert cfg.grain_types == ("v", "I")


@pytest.mark.parametrize("text,key,line", [("a = 1\n", "a", 1), ("\niterations = x\n", "iterations", 2),
                                           ("seeds = 1\nseeds = 2\n", "seeds", 2),
                                           ("grid = everything\n", "grid", 1),
                                           ("\n\niterations = 0\n", "iterations", 3),
                                           ("grain_types = I,XX\n", "grain_types", 1)])
def test_errors_cite_key_and_line(text, key, line):
    with pytest.raises(ConfigError) as e:
        parse_config(text)
    assert e.value.key == key and e.value.line == line
    assert f"key '{key}'" in str(e.value) and f"line {line}" in str(e.value)


def test_line_without_equals():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("just words\n")


def test_builders_carry_values(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("face_diameter_mm = 50\nlink_d0_mm = 4\ncontact_stiffness_n_mm = 0.3\ngrid = single\n"
                 "tau_mm = 1.0\nlambda_mm = 12\nspikes = 2\nshake_duration_s = 0.25\n")
    cfg = load_config(p)
    assert cfg.magnet().face_diameter == 50
    assert cfg.link().d0 == 4
    assert cfg.sim_params().contact_stiffness == 0.3
    assert cfg.column().shake_duration == 0.25
    (t,) = cfg.targets()
    assert (t.thickness, t.length, t.spikes) == (1.0, 12.0, 2)
    assert len(Config().targets()) == 27


def test_checksum_changes_with_content():
    a = dump_config(Config())
    b = dump_config(Config(iterations=3))
    assert config_checksum(a) == config_checksum(a) != config_checksum(b)
    assert len(config_checksum(a)) == 64
