import json

import numpy as np
import pytest

from bdia.config import ConfigError, RunConfig, substream


def test_defaults():
    c = RunConfig()
    assert c.schedule.kind == "vp" and c.solver == "bdia-ddim"
    g = c.time_grid
    assert g.N == 10 and g.t(10) == 0.999 and g.t(0) == 1e-3
    np.testing.assert_array_equal(c.mixture.means, [[2.0, 2.0], [-2.0, -2.0]])


def test_edm_defaults():
    c = RunConfig.from_dict({"solver": "edm"})
    assert c.schedule.kind == "edm"
    assert c.time_grid.times[0] == 80.0 and c.time_grid.times[-1] == 0.0


def test_round_trip_dict():
    c = RunConfig.from_dict({"solver": "edict", "params": {"p": 0.9}, "seed": 4, "batch": 7, "edit": 0.5})
    assert RunConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c


@pytest.mark.parametrize(
    "d",
    [
        {"bogus": 1},
        {"params": {"beta": 1}},
        {"grid": {"kind": "uniform", "n": 5, "t_min": 0.1, "t_max": 0.9, "x": 1}},
        {"mixture": [{"w": 1.0, "mu": [0.0], "s2": 1.0, "z": 0}]},
        {"solver": "euler"},
        {"seed": -1},
        {"seed": 1.5},
        {"batch": 0},
        {"params": {"gamma": 1.5}},
        {"params": {"p": 0.0}},
        {"solver": "cbdia", "params": {"gamma1": 0.5, "gamma2": 0.5}},
        {"solver": "edm", "schedule": {"kind": "vp"}},
        {"schedule": {"kind": "vp"}, "grid": {"n": 5, "t_min": 0.1, "t_max": 1.0}},
        {"solver": "cbdia", "grid": {"n": 5, "t_min": 0.0, "t_max": 0.9}},
        {"format": "xml"},
        [],
    ],
)
def test_rejected_configs(d):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(d)


def test_malformed_json():
    with pytest.raises(ConfigError):
        RunConfig.from_json("{not json")


def test_replace_routes_nested_fields():
    c = RunConfig().replace(n=25, gamma=0.5, seed=3)
    assert c.grid["n"] == 25 and c.params["gamma"] == 0.5 and c.seed == 3
    e = c.replace(solver="bdia-edm")
    assert e.schedule.kind == "edm" and e.grid["n"] == 25 and e.grid["terminal_zero"]
    with pytest.raises(ConfigError):
        c.replace(gamma=2.0)


def test_substreams_are_independent_and_reproducible():
    a = np.random.default_rng(substream(1, "data")).standard_normal(4)
    b = np.random.default_rng(substream(1, "noise")).standard_normal(4)
    c = np.random.default_rng(substream(1, "data")).standard_normal(4)
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, c)
