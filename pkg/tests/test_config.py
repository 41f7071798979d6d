import pytest
from hypothesis import given, strategies as st

from smpsee.config import ConfigError, ScenarioConfig


def test_defaults_round_trip_through_text():
    cfg = ScenarioConfig()
    assert ScenarioConfig.from_text(cfg.to_text()) == cfg


@given(seed=st.integers(0, 2**31), paths=st.integers(1, 10**5),
       eps=st.lists(st.floats(1e-3, 1.0), min_size=4, max_size=6, unique=True).map(
           lambda v: tuple(sorted(v, reverse=True))),
       armijo=st.booleans(), box=st.floats(-5, 5))
def test_round_trip_property(seed, paths, eps, armijo, box):
    cfg = ScenarioConfig(seed=seed, n_paths=paths, epsilons=eps, armijo=armijo,
                         box_lo=(box,), box_hi=(box + 1,))
    assert ScenarioConfig.from_text(cfg.to_text()) == cfg


def test_parses_comments_lists_and_booleans():
    cfg = ScenarioConfig.from_text("""
        # comment
        scenario = tanh-drift   # trailing
        n_paths = 10
        box_lo = -1
        box_hi = 1
        active_modes = 0, 2
        armijo = yes
        epsilons = 0.4,0.2,0.1,0.05
    """)
    assert cfg.scenario == "tanh-drift" and cfg.n_paths == 10
    assert cfg.box_lo == (-1.0,) and cfg.active_modes == (0, 2)
    assert cfg.armijo is True and cfg.epsilons == (0.4, 0.2, 0.1, 0.05)


@pytest.mark.parametrize("text,fragment", [
    ("n_paths = 10\nbogus = 1", "cfg:2: unknown key 'bogus'"),
    ("seed = 1\nseed = 2", "cfg:2: duplicate key 'seed' (first set on line 1)"),
    ("n_paths 10", "cfg:1: expected 'key = value'"),
    ("n_paths = ten", "cfg:1: field 'n_paths'"),
    ("armijo = maybe", "field 'armijo'"),
    ("scenario = heat", "unknown scenario 'heat'"),
    ("n_paths = 0", "n_paths must be positive"),
    ("horizon = -1", "horizon must be positive"),
    ("box_lo = 0", "box_lo and box_hi"),
    ("epsilons = 0.5, 0.4, 0.3, 2", "epsilons"),
    ("epsilons = 0.4, 0.2, 0.1", "epsilons"),
    ("epsilons = 0.4, 0.2, 0.2, 0.1", "epsilons"),
])
def test_rejects_bad_input_with_location(text, fragment):
    with pytest.raises(ConfigError) as info:
        ScenarioConfig.from_text(text, "cfg")
    assert fragment in str(info.value)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        ScenarioConfig.from_file(tmp_path / "nope.cfg")


def test_override_ignores_none_and_validates():
    cfg = ScenarioConfig().override(seed=None, n_paths=5)
    assert cfg.n_paths == 5 and cfg.seed == 0
    with pytest.raises(ConfigError):
        cfg.override(n_steps=0)
    with pytest.raises(ConfigError):
        cfg.override(colour="red")
