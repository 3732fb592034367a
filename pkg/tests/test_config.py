import json

import numpy as np
import pytest

from vdpsync.config import ConfigFile, content_hash, load_config, parse_config
from vdpsync.errors import ConfigError


def test_defaults_mirror_baseline():
    conf = parse_config({})
    cfg = conf.run_config()
    assert cfg.osc.mu == (0.5, 3.0, 6.0, 10.0)
    assert cfg.graph.m == 6
    assert (cfg.k_c, cfg.epsilon, cfg.f, cfg.omega, cfg.n_periods) == (200.0, 0.1, 400, 0.01, 20)
    assert cfg.hybrid is None and cfg.x0 is None


def test_unknown_keys_rejected_with_location():
    with pytest.raises(ConfigError, match=r"schedule\.fq"):
        parse_config({"schedule": {"fq": 3}})
    with pytest.raises(ConfigError, match="colour"):
        parse_config({"colour": "blue"})


def test_value_errors_name_their_field():
    with pytest.raises(ConfigError, match=r"oscillators\.mu"):
        parse_config({"oscillators": {"mu": [1, -2]}})
    with pytest.raises(ConfigError, match=r"schedule\.f"):
        parse_config({"schedule": {"f": 1}})
    with pytest.raises(ConfigError, match="top level"):
        parse_config([1, 2])


def test_graph_kinds():
    conf = parse_config({"graph": {"kind": "complete"}})
    assert conf.coupling_graph().m == 12
    ring = parse_config({"graph": {"kind": "edges", "edges": [[0, 3], [1, 0], [2, 1], [3, 2]]}})
    assert ring.coupling_graph().m == 4
    with pytest.raises(ConfigError, match="strongly connected"):
        parse_config({"graph": {"kind": "edges", "edges": [[0, 1]]}})
    with pytest.raises(ConfigError):
        parse_config({"graph": {"kind": "edges"}})
    with pytest.raises(ConfigError):
        parse_config({"graph": {"kind": "chain", "edges": [[0, 1]]}})


def test_initial_states():
    a = parse_config({"initial_states": "random", "seed": 7}).x0()
    b = parse_config({"initial_states": "random", "seed": 7}).x0()
    np.testing.assert_array_equal(a, b)
    assert a.shape == (8,)
    listed = parse_config({"initial_states": [[1, 0], [0, 1], [2, 0], [0, 2]]})
    np.testing.assert_array_equal(listed.run_config().x0, [1, 0, 0, 1, 2, 0, 0, 2])
    with pytest.raises(ConfigError, match="initial_states"):
        parse_config({"initial_states": [[1, 0]]})


def test_hybrid_and_solver_sections():
    conf = parse_config({"simulation": {"hybrid": {"error_threshold": 0.3, "signal": "reference"}},
                         "solver": {"method": "subgradient", "subgrad_iters": 10}})
    cfg = conf.run_config()
    assert cfg.hybrid.error_threshold == 0.3 and cfg.hybrid.signal == "reference"
    assert cfg.resync_epsilon == cfg.epsilon
    assert cfg.solver.method == "subgradient" and cfg.solver.subgrad_iters == 10


def test_load_yaml_and_json(tmp_path):
    y = tmp_path / "c.yaml"
    y.write_text("schedule:\n  f: 100\n  omega: 0.1\n")
    assert load_config(y).schedule.f == 100
    j = tmp_path / "c.json"
    j.write_text(json.dumps({"coupling": {"k_c": 150}}))
    assert load_config(j).coupling.k_c == 150
    bad = tmp_path / "bad.yaml"
    bad.write_text("schedule: [unclosed\n")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(bad)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.yaml")


def test_content_hash_is_order_free():
    assert content_hash({"a": 1, "b": [1, 2]}) == content_hash({"b": [1, 2], "a": 1})
    assert content_hash({"a": 1}) != content_hash({"a": 2})
    assert isinstance(ConfigFile().model_dump(), dict)
