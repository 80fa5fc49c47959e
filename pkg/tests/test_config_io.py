import json

import numpy as np
import pytest

from pinchlift.config import (ConfigError, ExperimentConfig, config_from_dict, default_config_dict,
                              load_config)
from pinchlift.params_io import (CorruptFileError, read_checkpoint, read_params, write_checkpoint,
                                 write_params)
from pinchlift.policy import n_policy_params


def test_default_roundtrip_and_hash():
    d = default_config_dict()
    cfg = config_from_dict(json.loads(json.dumps(d)))
    assert cfg == ExperimentConfig()
    assert cfg.config_hash() == ExperimentConfig().config_hash()
    assert len(cfg.config_hash()) == 16
    assert cfg.with_overrides(seed=1).config_hash() != cfg.config_hash()


def test_hash_ignores_key_order(tmp_path):
    d = {"version": 1, "seed": 2, "scene": {"n_robots": 3, "shape": "default_box"}}
    e = {"scene": {"shape": "default_box", "n_robots": 3}, "seed": 2, "version": 1}
    assert config_from_dict(d).config_hash() == config_from_dict(e).config_hash()


@pytest.mark.parametrize("bad, msg", [
    ({"version": 1, "bogus": 1}, "bogus"),
    ({"version": 1, "scene": {"n_robot": 2}}, "n_robot"),
    ({"version": 1, "training": {"stages": [{"phase": 1, "gens": 3}]}}, r"stages\[0\]"),
    ({"version": 2}, "version"),
    ({"seed": 0}, "version"),
    ({"version": 1, "scene": {"n_robots": 1}}, "n_robots"),
    ({"version": 1, "scene": {"shape": "box"}}, "dims"),
    ({"version": 1, "phase": 4}, "phase"),
    ({"version": 1, "mode": "cf_never"}, "cf_never"),
    ({"version": 1, "controller": {"kind": "learned", "params_path": "nope.bin"}}, "nope.bin"),
    ({"version": 1, "schedule": {"not_a_term": [[1], 0, None]}}, "not_a_term"),
])
def test_strict_validation(bad, msg):
    with pytest.raises(ConfigError, match=msg):
        config_from_dict(bad)


def test_load_config_errors(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"version": 1,\n "seed": }')
    with pytest.raises(ConfigError, match="line 2"):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_relative_params_path(tmp_path):
    theta = np.zeros(n_policy_params(4, 2))
    write_params(tmp_path / "p.bin", theta, hidden=4)
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"version": 1, "controller": {"kind": "learned", "params_path": "p.bin"}}))
    cfg = load_config(p)
    assert cfg.resolve(cfg.controller.params_path) == str(tmp_path / "p.bin")


def test_out_dir_precedence(monkeypatch):
    monkeypatch.setenv("PINCHLIFT_OUT_DIR", "/env")
    cfg = ExperimentConfig()
    assert cfg.output_dir() == "/env"
    assert cfg.with_overrides(out_dir="/cfg").output_dir() == "/cfg"
    assert cfg.with_overrides(out_dir="/cfg").output_dir("/cli") == "/cli"


def test_params_roundtrip_and_corruption(tmp_path):
    rng = np.random.default_rng(0)
    theta = rng.standard_normal(n_policy_params(8, 2))
    p = tmp_path / "p.bin"
    write_params(p, theta, hidden=8, seed=3, iteration=12, config_hash="abc")
    back, hdr = read_params(p)
    assert np.array_equal(back, theta) and hdr["iteration"] == 12 and hdr["obs_version"] == 1
    blob = bytearray(p.read_bytes())
    blob[-3] ^= 0xFF
    p.write_bytes(bytes(blob))
    with pytest.raises(CorruptFileError, match="checksum"):
        read_params(p)
    p.write_bytes(bytes(blob[:40]))
    with pytest.raises(CorruptFileError):
        read_params(p)
    p.write_bytes(b"NOTMAGIC" + bytes(blob[8:]))
    with pytest.raises(CorruptFileError, match="magic"):
        read_params(p)
    with pytest.raises(CorruptFileError):
        read_params(tmp_path / "absent.bin")
    with pytest.raises(ValueError):
        write_params(p, theta[:-1], hidden=8)


def test_checkpoint_roundtrip(tmp_path):
    p = tmp_path / "c.bin"
    th, m, v = np.arange(5.0), np.ones(5), np.full(5, 2.0)
    write_checkpoint(p, th, m, v, 7, {"stage": 1, "history": [{"generation": 0}]})
    a, b, c, hdr = read_checkpoint(p)
    assert np.array_equal(a, th) and np.array_equal(b, m) and np.array_equal(c, v)
    assert hdr["adam_t"] == 7 and hdr["history"][0]["generation"] == 0
    # a params file is not a checkpoint
    write_params(tmp_path / "p.bin", np.zeros(n_policy_params(2, 2)), hidden=2)
    with pytest.raises(CorruptFileError, match="magic"):
        read_checkpoint(tmp_path / "p.bin")
