import json

import pytest

from services.errors import ConfigError
from services.flows import LogisticFlow, TorusFlow
from services.presets import build_flow, get_preset, load_presets, preset_names


def test_shipped_presets():
    assert preset_names() == ["torus1", "torus2", "logistic"]
    p = get_preset("torus2")
    assert p.k == 2 and p.base == (0.1, 0.1)
    logistic = get_preset("logistic")
    assert logistic.base == (0.5,)
    assert build_flow("logistic").from_coordinates(logistic.base)[0] == 0.0


def test_build_flow_kinds_and_scale_override():
    flow = build_flow("torus1", group_scale=12.0)
    assert isinstance(flow, TorusFlow) and flow.group_scale == 12.0
    assert build_flow("torus2").group_scale == 8.0
    assert isinstance(build_flow("logistic"), LogisticFlow)


def test_unknown_flow():
    with pytest.raises(ConfigError, match="unknown flow 'mobius'"):
        get_preset("mobius")


def test_missing_presets_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_presets(str(tmp_path / "nope.json"))


def test_custom_presets_file(tmp_path):
    path = tmp_path / "presets.json"
    path.write_text(json.dumps({"flows": [{"name": "wide", "kind": "torus", "k": 1, "group_scale": 16, "base": [0.5]}]}))
    flow = build_flow("wide", path=str(path))
    assert flow.group_scale == 16.0

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"flows": [{"name": "x", "kind": "klein", "k": 1, "group_scale": 1, "base": [0]}]}))
    with pytest.raises(ConfigError, match="unknown kind"):
        build_flow("x", path=str(bad))
