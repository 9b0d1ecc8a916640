import json

import pytest

from config import PROCEDURES, RunConfig, load_run_config
from errors import ConfigError
from kernel_design import KernelKind


def _write(tmp_path, values):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(values), encoding="utf-8")
    return path


class TestRunConfig:

    def test_defaults(self, tmp_path):
        config, provenance = load_run_config(_write(tmp_path, {"seed": 42}))
        assert config.seed == 42
        assert config.alpha == 0.05
        assert (config.l, config.p, config.neighbors_M) == (2, 3, 3)
        assert config.mc_draws == 100000
        assert config.kernel is KernelKind.TRIANGULAR
        assert config.procedures == PROCEDURES
        assert provenance["seed"] == "file"
        assert provenance["alpha"] == "default"

    @pytest.mark.parametrize("field, value", [("alpha", 1.5), ("alpha", 0.0), ("l", 0),
                                              ("mc_draws", 2.5), ("kernel", "gaussian"),
                                              ("h_f", -0.1), ("bandwidths", "silverman")])
    def test_invalid_field(self, field, value):
        with pytest.raises(ConfigError) as info:
            RunConfig(seed=1, **{field: value})
        assert info.value.field == field

    def test_invalid_bandwidth_entry(self):
        with pytest.raises(ConfigError) as info:
            RunConfig(seed=1, bandwidths=(0.2, -0.1))
        assert info.value.field == "bandwidths[1]"

    def test_unknown_procedure(self):
        with pytest.raises(ConfigError) as info:
            RunConfig(seed=1, procedures=("wald", "lasso"))
        assert info.value.field == "procedures[1]"

    def test_flag_overrides_file(self, tmp_path):
        path = _write(tmp_path, {"seed": 42, "h_f": 0.2})
        config, provenance = load_run_config(path, {"h_f": 0.3, "alpha": None})
        assert config.h_f == 0.3
        assert provenance["h_f"] == "flag"
        assert provenance["alpha"] == "default"

    def test_seed_required(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            load_run_config(_write(tmp_path, {"alpha": 0.1}))
        assert info.value.field == "seed"

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            load_run_config(_write(tmp_path, {"seed": 1, "bandwith": 0.2}))
        assert info.value.field == "bandwith"

    def test_bandwidth_list_from_file(self, tmp_path):
        config, _ = load_run_config(_write(tmp_path, {"seed": 1, "bandwidths": [0.2, 0.3]}))
        assert config.bandwidths == (0.2, 0.3)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "absent.json")

    def test_to_dict_is_json_ready(self):
        values = RunConfig(seed=5, bandwidths=(0.1, 0.2)).to_dict()
        assert values["kernel"] == "triangular"
        assert values["bandwidths"] == [0.1, 0.2]
        json.dumps(values)
