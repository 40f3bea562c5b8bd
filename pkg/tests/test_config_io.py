import json

import pytest

from confspec.config import ConfigError, RunConfig, Tolerances
from confspec.io import dumps, jsonable, write_json, write_text


def test_default_roundtrip():
    cfg = RunConfig().validate()
    again = RunConfig.from_json(cfg.to_json())
    assert again == cfg
    assert json.loads(cfg.to_json())["schema"] == 1


def test_custom_roundtrip():
    cfg = RunConfig(operator={"name": "dirac", "kind": "circle", "resolution": 64, "spin": "periodic"},
                    factors=[{"terms": [{"kx": 3, "ky": 0, "phase": "sin", "coef": 0.25}]}],
                    eps_grid=[-0.1, 0.0, 0.1], window=None, alpha=2.5,
                    tolerances=Tolerances(cluster_tol=1e-6, zero_tol=1e-8, spread_tol=1e-7, gamma=1e-2, guard=0.05),
                    seed=7, out="x")
    assert RunConfig.from_dict(json.loads(cfg.to_json())) == cfg


@pytest.mark.parametrize("data", [
    {"eps_grid": [0.1, 0.2]},
    {"tolerances": {"cluster_tol": 0}},
    {"tolerances": {"gamma": -1}},
    {"tolerances": {"bogus": 1}},
    {"window": [2, 1]},
    {"alpha": 0},
    {"factors": []},
    {"factors": [{"modes": 1}]},
    {"colour": "red"},
    {"schema": 2},
    {"index_count": 0},
    [],
])
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(data)


def test_bad_json_message():
    with pytest.raises(ConfigError, match="line 1"):
        RunConfig.from_json("{")


def test_load_missing(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "nope.json")


def test_jsonable():
    import numpy as np
    data = jsonable({"a": np.float64(1.5), "b": np.arange(2), "c": float("inf"), "d": np.bool_(True)})
    assert data == {"a": 1.5, "b": [0, 1], "c": "inf", "d": True}
    assert json.loads(dumps({"x": 1}))["schema"] == 1


def test_atomic_write(tmp_path):
    p = write_text(tmp_path / "sub" / "f.txt", "hello")
    assert p.read_text() == "hello"
    write_json(p, {"a": 1})
    assert json.loads(p.read_text()) == {"a": 1, "schema": 1}
    assert [f.name for f in p.parent.iterdir()] == ["f.txt"]
