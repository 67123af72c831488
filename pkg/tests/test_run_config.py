from dataclasses import replace

import pytest

from config.loader import load_settings
from domain.errors import ConfigError
from domain.run_config import OUTPUT_DIR_ENV, RunConfig, parse_overrides


def config_error(document):
    with pytest.raises(ConfigError) as info:
        RunConfig.from_dict(document)
    assert info.value.exit_code == 2
    return info.value


def test_defaults_match_settings_file(monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    assert RunConfig.from_settings(load_settings()) == RunConfig()
    assert RunConfig.from_dict({}) == RunConfig()


def test_dict_round_trip():
    config = RunConfig.from_dict({"model": {"g": 0.02, "modes": 6}, "flow": {"n_max": 4, "tower_levels": [1, 2]}})
    assert RunConfig.from_dict(config.to_dict()) == config
    assert config.flow.tower_levels == (1, 2)


def test_hash_ignores_output_and_ledger():
    config = RunConfig()
    moved = replace(config, output=replace(config.output, directory="elsewhere"), ledger=replace(config.ledger, enabled=False))
    assert moved.config_hash == config.config_hash
    changed = RunConfig.from_dict({"model": {"g": 0.06}})
    assert changed.config_hash != config.config_hash
    assert len(config.run_id) == 16
    assert config.config_hash.startswith(config.run_id)


def test_provenance():
    provenance = RunConfig().provenance("flow")
    assert set(provenance) == {"run_id", "config_hash", "version", "command"}
    assert provenance["command"] == "flow"


@pytest.mark.parametrize("document, field", [
    ({"bogus": {}}, "bogus"),
    ({"model": {"bogus": 1}}, "model.bogus"),
    ({"model": {"rho": 0.8}}, "model.rho"),
    ({"model": {"modes": "eight"}}, "model.modes"),
    ({"model": {"modes": 2.5}}, "model.modes"),
    ({"model": {"max_total": 0}}, "model.max_total"),
    ({"model": {"max_per_mode": 0}}, "model.max_per_mode"),
    ({"flow": {"sign_convention": "sideways"}}, "flow.sign_convention"),
    ({"flow": {"n_max": 7}}, "flow.n_max"),
    ({"flow": {"tower_levels": [9]}}, "flow.tower_levels"),
    ({"fock": {"allow_boundary_ties": "maybe"}}, "fock.allow_boundary_ties"),
    ({"output": {"formats": ["xml"]}}, "output.formats"),
])
def test_invalid_fields_are_named(document, field):
    assert config_error(document).field == field


def test_string_values_are_coerced():
    config = RunConfig.from_dict({"model": {"modes": "6"}, "flow": {"n_max": "4"}, "fock": {"allow_boundary_ties": "false"}})
    assert config.model.modes == 6
    assert config.flow.n_max == 4
    assert config.fock.allow_boundary_ties is False


def test_parse_overrides():
    overrides = parse_overrides(["flow.n_max=5", "model.form_factor=exponential", 'output.directory="out"', "seed=7"])
    assert overrides == {"flow.n_max": 5, "model.form_factor": "exponential", "output.directory": "out", "seed": 7}
    with pytest.raises(ConfigError) as info:
        parse_overrides(["n_max"])
    assert info.value.field == "--set"


def test_overrides_reach_the_config(monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    config = RunConfig.from_settings(load_settings(overrides={"flow.n_max": 5, "model.g": 0.01}))
    assert config.flow.n_max == 5
    assert config.model.g == 0.01
    assert config.model.rho == 0.5


def test_extra_settings_file(tmp_path, monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    path = tmp_path / "run.toml"
    path.write_text("[model]\ng = 0.0\nmodes = 6\n\n[flow]\nn_max = 4\n")
    config = RunConfig.from_settings(load_settings(str(path)))
    assert config.model.g == 0.0
    assert config.model.modes == 6
    assert config.model.max_total == 3


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path))
    config = RunConfig.from_settings(load_settings())
    assert config.output.directory == str(tmp_path)
    assert config.config_hash == RunConfig().config_hash


def test_with_axis():
    config = RunConfig()
    assert config.with_axis("g", 0.1).model.g == 0.1
    shallow = config.with_axis("J", 6)
    assert shallow.model.modes == 6
    assert shallow.flow.n_max == 4
    assert config.with_axis("rho", 0.4).flow_config().rho == 0.4
    with pytest.raises(ConfigError):
        config.with_axis("temperature", 1.0)
    with pytest.raises(ConfigError):
        config.with_axis("rho", 0.9)


def test_factories_agree():
    config = RunConfig.from_dict({"model": {"modes": 6}, "flow": {"n_max": 4}})
    basis = config.basis()
    assert basis.ladder == config.params().ladder
    config.flow_config().validate(basis)
