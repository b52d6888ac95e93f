import pytest
import yaml

from shadowpool.config import ExperimentConfig, config_from_dict, default_config, load_config
from shadowpool.exceptions import ConfigError


def test_defaults_validate_and_round_trip(tmp_path):
    cfg = default_config()
    cfg.dump(tmp_path / "c.yaml")
    back = load_config(tmp_path / "c.yaml")
    assert back.to_dict() == cfg.to_dict()
    assert back.fixture_config().pool_epochs == cfg.pool.epochs


@pytest.mark.parametrize("data,field", [
    ({"version": 1, "pool": {"alpah": 0.1}}, "pool.alpah"),
    ({"version": 1, "pool": {"alpha": "big"}}, "pool.alpha"),
    ({"version": 1, "pool": {"beta": -0.5}}, "pool.beta"),
    ({"version": 1, "architecture": {"n_layers": 0}}, "architecture.n_layers"),
    ({"version": 1, "architecture": {"n_experts": 1.5}}, "architecture.n_experts"),
    ({"version": 1, "baselines": {"masks": [{"scope": "fc", "p": 0.1}, {"scope": "attn"}]}},
     "baselines.masks[1].scope"),
    ({"version": 1, "attack": {"fix_variance": "yes"}}, "attack.fix_variance"),
    ({"version": 1, "dataset": {"kind": "csv"}}, "dataset.path"),
    ({"version": 1, "pool": {"n_shared": 100}}, "pool.n_shared"),
    ({"pool": {}}, "version"),
    ({"version": 2}, "version"),
])
def test_errors_name_the_field(data, field):
    with pytest.raises(ConfigError) as err:
        config_from_dict(data)
    assert err.value.field == field
    assert field in str(err.value)


def test_invalid_yaml_reports_line(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("version: 1\npool: [unclosed\n")
    with pytest.raises(ConfigError, match="line"):
        load_config(p)


def test_csv_paths_resolve_relative_to_config(tmp_path):
    (tmp_path / "u.csv").write_text("id,f0,label\n0,1.0,0\n")
    (tmp_path / "p.csv").write_text("id,f0,label\n1,1.0,0\n")
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"version": 1, "dataset": {
        "kind": "csv", "path": "u.csv", "population_path": "p.csv"}}))
    cfg = load_config(p)
    assert cfg.dataset.path == str((tmp_path / "u.csv").resolve())


def test_int_accepted_for_float_field():
    cfg = config_from_dict({"version": 1, "pool": {"alpha": 1}})
    assert isinstance(cfg.pool.alpha, float)
    assert isinstance(ExperimentConfig().pool.beta, float)


def test_offline_preset_overrides_pool_fields():
    cfg = config_from_dict({"version": 1, "pool": {"preset": "offline", "alpha": 0.05}})
    f = cfg.fixture_config()
    assert (f.alpha, f.beta, f.ft_epochs) == (0.0, 0.0, 3)
    assert cfg.pool.alpha == 0.05
    with pytest.raises(ConfigError) as err:
        config_from_dict({"version": 1, "pool": {"preset": "fast"}})
    assert err.value.field == "pool.preset"
