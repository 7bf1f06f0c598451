import json
import textwrap

import pytest

from config.settings import DT, K_MAX, POD_ELL
from src.optimization.projected_gradient import OptimizerSettings
from src.pipeline.run_config import RunConfig, config_summary, load_config, save_config
from src.utils.errors import ConfigError


def _write(tmp_path, text, name="run.json"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text).lstrip("\n"), encoding="utf-8")
    return str(path)


def test_defaults():
    cfg = load_config(None)
    assert cfg == RunConfig()
    assert cfg.model.dt == DT
    assert cfg.model.n_steps == 500
    assert cfg.optimizer.k_max == K_MAX
    assert cfg.pod.ell == POD_ELL and cfg.pod.deim_size == POD_ELL
    assert ("Time grid", "T=0.0125, dt=2.5e-05, N_t=500") in config_summary(cfg)


def test_round_trip_through_dict_and_file(tmp_path):
    cfg = RunConfig().with_overrides(optimizer=OptimizerSettings(k_max=3, rel_tol=0.5))
    assert RunConfig.from_dict(json.loads(cfg.dumps())) == cfg
    path = save_config(cfg, str(tmp_path / "nested" / "cfg.json"))
    assert load_config(path) == cfg


def test_partial_config_keeps_other_defaults(tmp_path):
    path = _write(tmp_path, """
        {
          "model": {"T": 0.000125},
          "control": {"u_a": [0, 1], "u_b": [50, 40], "shapes": ["sin_cos_vortex", "double_vortex"]},
          "pod": {"ell": 4, "ell_d": 2}
        }
    """)
    cfg = load_config(path)
    assert cfg.model.n_steps == 5
    assert cfg.control.u_a == [0.0, 1.0]
    assert cfg.pod.deim_size == 2
    assert cfg.cost == RunConfig().cost


def test_unknown_key_reports_file_and_line(tmp_path):
    path = _write(tmp_path, """
        {
          "model": {
            "dt": 2.5e-5
          },
          "mesh": {
            "bogus": 1
          }
        }
    """)
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert str(info.value).startswith(f"{path}:6:")
    assert "mesh.bogus" in str(info.value)


def test_unknown_section(tmp_path):
    path = _write(tmp_path, '{\n  "solver": {}\n}\n')
    with pytest.raises(ConfigError, match=r":2: unknown section 'solver'"):
        load_config(path)


@pytest.mark.parametrize("body, fragment", [
    ('{"optimizer": {"k_max": "ten"}}', "must be an integer"),
    ('{"optimizer": {"k_max": 2.5}}', "must be an integer"),
    ('{"mesh": {"adapt": 1}}', "true or false"),
    ('{"model": {"dt": null}}', "must not be null"),
    ('{"control": {"shapes": "sin_cos_vortex"}}', "list of strings"),
    ('{"control": {"u_a": []}}', "number or list"),
    ('{"model": []}', "must be an object"),
    ('{"pod": {"basis_dir": 3}}', "must be a string"),
])
def test_wrong_types_are_rejected(tmp_path, body, fragment):
    with pytest.raises(ConfigError, match=fragment):
        load_config(_write(tmp_path, body))


@pytest.mark.parametrize("body", [
    '{"cost": {"gamma": -1}}',
    '{"model": {"T": 1.1e-4}}',
    '{"mesh": {"root_level": 6, "max_level": 5}}',
    '{"control": {"shapes": ["spiral"]}}',
    '{"output": {"cfl_policy": "ignore"}}',
    '{"pod": {"snapshot_source": "state"}}',
])
def test_out_of_range_values_are_rejected(tmp_path, body):
    with pytest.raises(ConfigError, match="invalid"):
        load_config(_write(tmp_path, body))


def test_invalid_json_reports_line(tmp_path):
    path = _write(tmp_path, '{\n  "model": {\n    "dt": 2.5e-5,\n  }\n}\n')
    with pytest.raises(ConfigError, match=r":4: invalid JSON"):
        load_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="config file not found"):
        load_config(str(tmp_path / "absent.json"))


def test_nullable_fields(tmp_path):
    cfg = load_config(_write(tmp_path, '{"mesh": {"h_min_guard": null}, "pod": {"ell_d": null}}'))
    assert cfg.mesh.h_min_guard is None
    assert cfg.pod.ell_d is None


def test_basis_dir_accepts_a_path_or_null(tmp_path):
    cfg = load_config(_write(tmp_path, '{"pod": {"basis_dir": "outputs/pod"}}'))
    assert cfg.pod.basis_dir == "outputs/pod"
    assert load_config(_write(tmp_path, '{"pod": {"basis_dir": null}}')).pod.basis_dir is None
    assert RunConfig.from_dict(cfg.to_dict()).pod.basis_dir == "outputs/pod"
