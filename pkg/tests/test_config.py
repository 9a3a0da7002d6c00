from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphfl.config import ConfigError, ExperimentConfig, load_config, parse_config, serialize_config
from graphfl.privacy import Hybrid, IIDNoise, NonPrivate


def test_empty_config_is_default():
    config = parse_config("")
    assert config == ExperimentConfig()
    assert (config.servers, config.clients, config.samples, config.dim) == (10, 50, 100, 2)
    assert (config.mu, config.rho, config.sigma_g, config.iterations) == (0.1, 0.01, 0.2, 2000)
    assert config.sampled_clients == 50
    assert config.schemes == ("none", "iid", "hybrid")


def test_two_assignments_on_one_line():
    config = parse_config("[engine]\nscheme = hybrid, sigma_g = 0.2\n")
    assert config.engine_config().scheme == Hybrid(0.2)


def test_scheme_selection():
    config = parse_config("scheme = iid\nsigma_g = 2.0")
    assert config.engine_config().scheme == IIDNoise(2.0)
    assert config.engine_config("none").scheme == NonPrivate()


def test_sampled_clients_above_k_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config("[engine]\nL = 60\n")
    message = str(info.value)
    assert "line 2" in message and "L <= K" in message and "L = 60" in message
    assert info.value.key == "L"


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("[engine]\nlearning_rate = 0.1", "unknown key 'learning_rate'"),
        ("[model]\nM = 2", "unknown section"),
        ("[graph]\nmu = 0.1", "belongs in [engine]"),
        ("mu = 0.1\nmu = 0.2", "set twice"),
        ("mu = fast", "cannot read"),
        ("mu", "expected 'key = value'"),
        ("mu = 0", "must be positive"),
        ("rho = 0", "must be positive"),
        ("T = 0", "at least 1"),
        ("batch_size = 101", "must not exceed N"),
        ("schemes = none, gaussian", "unknown scheme"),
        ("schemes = none, none", "twice"),
        ("graph = star", "expected one of"),
        ("graph = edges\nedges = 0-1, 2-3", "disconnected"),
        ("plot = maybe", "cannot read"),
    ],
)
def test_invalid_configs(text, fragment):
    with pytest.raises(ConfigError, match=None) as info:
        parse_config(text)
    assert fragment in str(info.value)


def test_comments_and_sections_optional():
    config = parse_config("# settings\nP = 4  # servers\n\n[experiment]\nR = 3\n")
    assert config.servers == 4 and config.repetitions == 3


def test_overrides_take_precedence():
    config = parse_config("K = 20", ["K=30", "L=25"])
    assert (config.clients, config.sampled_clients) == (30, 25)
    with pytest.raises(ConfigError, match="--set"):
        parse_config("", ["L=70"])


def test_default_l_follows_k():
    assert parse_config("K = 12").sampled_clients == 12


def test_round_trip_of_defaults():
    config = parse_config("")
    assert parse_config(serialize_config(config)) == config


@settings(max_examples=100, deadline=None)
@given(
    st.integers(1, 20),
    st.integers(1, 60),
    st.floats(1e-4, 1.0),
    st.floats(1e-3, 5.0),
    st.sampled_from(["ring", "path", "complete", "random"]),
    st.lists(st.sampled_from(["none", "iid", "hybrid"]), min_size=1, max_size=3, unique=True),
    st.booleans(),
)
def test_round_trip(servers, clients, mu, sigma, graph, schemes, plot):
    config = replace(
        ExperimentConfig(),
        servers=servers,
        clients=clients,
        sampled_clients=max(1, clients // 2),
        mu=mu,
        sigma_g=sigma,
        graph=graph,
        schemes=tuple(schemes),
        plot=plot,
    )
    text = serialize_config(config)
    assert parse_config(text) == config
    assert serialize_config(parse_config(text)) == text


def test_load_config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[dataset]\nP = 3\n")
    assert load_config(path, ["M=4"]).dim == 4
    assert load_config(path).servers == 3
