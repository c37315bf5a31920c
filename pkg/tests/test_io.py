import json

import numpy as np
import pytest

from erdmd.core_dmd import LaggedModel, LagSet, TimeSeries
from erdmd.errors import ArtifactError, ConfigError
from erdmd.io import (
    find_series,
    load_config,
    preset_names,
    read_json,
    read_model,
    read_series,
    write_json,
    write_model,
    write_series,
)
from erdmd.models import KSSpec, LaggedLinearSpec, ODESpec


@pytest.fixture
def series():
    data = np.random.default_rng(0).standard_normal((3, 25))
    return TimeSeries(data, dt=0.01, t0=21.5)


class TestSeries:
    @pytest.mark.parametrize("suffix", [".csv", ".json"])
    def test_values_survive(self, tmp_path, series, suffix):
        path = write_series(series, tmp_path / f"series{suffix}")
        back = read_series(path)
        np.testing.assert_array_equal(back.data, series.data)
        assert back.dt == series.dt
        assert back.t0 == series.t0

    @pytest.mark.parametrize("dt", [1 / 3, 0.1, np.pi / 100, 0.25])
    def test_csv_keeps_dt_exactly(self, tmp_path, dt):
        series = TimeSeries(np.random.default_rng(1).standard_normal((2, 301)), dt=dt)
        back = read_series(write_series(series, tmp_path / "series.csv"))
        assert back.dt == dt
        np.testing.assert_array_equal(back.times, series.times)

    def test_hand_written_times_get_a_rounded_step(self, tmp_path):
        path = tmp_path / "series.csv"
        path.write_text("t,y0\n0.0,1.0\n0.1,2.0\n0.2000001,3.0\n")
        assert read_series(path).dt == pytest.approx(0.10000005)

    def test_csv_header(self, tmp_path, series):
        path = write_series(series, tmp_path / "series.csv")
        assert path.read_text().splitlines()[0] == "t,y0,y1,y2"

    def test_bad_header(self, tmp_path):
        path = tmp_path / "series.csv"
        path.write_text("time,y0\n0.0,1.0\n0.1,2.0\n")
        with pytest.raises(ArtifactError):
            read_series(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ArtifactError):
            read_series(tmp_path / "nope.csv")

    def test_find_series_prefers_csv(self, tmp_path, series):
        assert find_series(tmp_path) is None
        write_series(series, tmp_path / "series.json")
        assert find_series(tmp_path).suffix == ".json"
        write_series(series, tmp_path / "series.csv")
        assert find_series(tmp_path).suffix == ".csv"


class TestJson:
    def test_non_finite_becomes_null(self, tmp_path):
        path = write_json(tmp_path / "out.json", {"b": float("nan"), "a": [1.0, float("inf")]})
        assert read_json(path) == {"a": [1.0, None], "b": None}
        assert path.read_text().index('"a"') < path.read_text().index('"b"')

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ArtifactError):
            read_json(path)


def test_model_file(tmp_path):
    model = LaggedModel(
        state_dim=2,
        lags=LagSet((1, 7)),
        matrices=(np.array([[0.1, 0.2], [0.3, 0.4]]), np.array([[1e-12, 0.0], [0.0, -0.5]])),
    )
    path = write_model(model, tmp_path / "model.json", kind="erdmd", seed=3)
    payload = json.loads(path.read_text())
    assert payload["lags"] == [1, 7]
    assert payload["matrices"][0] == [[0.1, 0.2], [0.3, 0.4]]

    back, meta = read_model(path)
    assert back.lags == model.lags
    for a, b in zip(back.matrices, model.matrices):
        np.testing.assert_array_equal(a, b)
    assert meta == {"kind": "erdmd", "seed": 3}


class TestConfigs:
    @pytest.mark.parametrize("name", preset_names())
    def test_presets_load(self, name):
        cfg = load_config(name)
        assert cfg.name == name
        assert cfg.baseline

    def test_preset_systems(self):
        assert isinstance(load_config("lorenz_d150").system, ODESpec)
        assert isinstance(load_config("ks_d200").system, KSSpec)
        assert isinstance(load_config("synthetic_two_lag").system, LaggedLinearSpec)
        assert load_config("lorenz_d150").er.d == 150

    def test_unknown_preset(self):
        with pytest.raises(ConfigError) as info:
            load_config("no_such_preset")
        assert "lorenz_d150" in info.value.detail

    def test_yaml_file(self, tmp_path):
        path = tmp_path / "exp.yaml"
        path.write_text(
            "name: small\n"
            "system:\n"
            "  kind: rossler\n"
            "  t_span: [0, 10]\n"
            "er:\n"
            "  d: 50\n"
            "  seed: 7\n"
        )
        cfg = load_config(str(path))
        assert cfg.system.kind == "rossler"
        assert cfg.er.seed == 7
        assert cfg.formats == "csv"

    def test_invalid_config(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"name": "bad", "system": {"kind": "lorenz63"}, "er": {"d": 1}}))
        with pytest.raises(ConfigError) as info:
            load_config(str(path))
        assert "er.d" in info.value.detail

    def test_unknown_field(self, tmp_path):
        path = tmp_path / "typo.json"
        path.write_text(json.dumps({"name": "x", "system": {"kind": "lorenz63"}, "er": {"d": 5}, "baseln": True}))
        with pytest.raises(ConfigError):
            load_config(str(path))
