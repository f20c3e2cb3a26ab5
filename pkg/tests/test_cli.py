import json
import os

import numpy as np
import pytest

from latticeheat.cli import main, run_experiment
from latticeheat.config import ConfigError, parse_config

MINIMAL = {
    "interaction": {
        "site": {"kind": "pseudo_linear_well", "a": 1.0},
        "pair": {"kind": "cosine_diff", "J": 0.1, "eps": 0.2},
    },
    "lattice": {"chain_length": 3},
    "schedule": {"t": [0.1], "h": 1.0},
    "experiment": "verify",
}


def test_parse_minimal_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.grid.n == 32
    assert cfg.grid.half_width == 6.0
    assert cfg.grid.margin == 6
    assert cfg.dense_budget == 5000
    assert cfg.seed == 0
    assert cfg.lattice_box.n_sites == 3


def test_parse_eps_out_of_range():
    bad = json.loads(json.dumps(MINIMAL))
    bad["interaction"]["pair"]["eps"] = 1.2
    with pytest.raises(ConfigError, match="decay parameter must lie in"):
        parse_config(bad)


def test_parse_budget_error_names_dimension():
    bad = json.loads(json.dumps(MINIMAL))
    bad["lattice"]["chain_length"] = 8
    bad["experiment"] = "correlate"
    bad["options"] = {"method": "dense"}
    with pytest.raises(ConfigError, match="1099511627776"):
        parse_config(bad)


def test_parse_unknown_keys_and_multiple_violations():
    bad = json.loads(json.dumps(MINIMAL))
    bad["extra"] = 1
    bad["interaction"]["pair"]["eps"] = 1.5
    del bad["schedule"]["h"]
    with pytest.raises(ConfigError) as err:
        parse_config(bad)
    msgs = err.value.violations
    assert any("unknown key 'extra'" in m for m in msgs)
    assert any("decay parameter" in m for m in msgs)
    assert any("missing required key 'h'" in m for m in msgs)


def test_parse_missing_lattice():
    bad = json.loads(json.dumps(MINIMAL))
    del bad["lattice"]
    with pytest.raises(ConfigError, match="lattice"):
        parse_config(bad)


def test_cli_verify_core(tmp_path, capsys):
    cfg = json.loads(json.dumps(MINIMAL))
    cfg["grid"] = {"n": 9, "half_width": 5.0}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    rc = main(["verify", "--config", str(path), "--out", str(tmp_path / "out")])
    out = capsys.readouterr().out
    assert rc == 0
    assert "PASS" in out and "FAIL" not in out
    assert (tmp_path / "out" / "verify.json").exists()
    assert (tmp_path / "out" / "manifest.json").exists()
    assert (tmp_path / "out" / "SCHEMA.md").exists()


def test_cli_bad_config_exit_2(tmp_path):
    cfg = json.loads(json.dumps(MINIMAL))
    cfg["interaction"]["pair"]["eps"] = 2.0
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    rc = main(["kernel", "--config", str(path), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_cli_correlate_reproducible(tmp_path):
    cfg = json.loads(json.dumps(MINIMAL))
    cfg["grid"] = {"n": 8, "half_width": 6.0}
    cfg["lattice"]["chain_length"] = 3
    cfg["schedule"]["t"] = [0.2]
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    rc1 = main(["correlate", "--config", str(path), "--out", str(tmp_path / "a")])
    rc2 = main(["correlate", "--config", str(path), "--out", str(tmp_path / "b")])
    assert rc1 == 0 and rc2 == 0
    body_a = (tmp_path / "a" / "decay.csv").read_bytes()
    body_b = (tmp_path / "b" / "decay.csv").read_bytes()
    assert body_a == body_b
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    paths = {e["path"] for e in man["artifacts"]}
    assert "decay.csv" in paths and "SCHEMA.md" in paths
    import hashlib
    for e in man["artifacts"]:
        digest = hashlib.sha256((tmp_path / "a" / e["path"]).read_bytes()).hexdigest()
        assert digest == e["sha256"]


def test_cli_kernel_and_decompose(tmp_path):
    cfg = json.loads(json.dumps(MINIMAL))
    cfg["grid"] = {"n": 9, "half_width": 5.0}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    rc = main(["kernel", "--config", str(path), "--out", str(tmp_path / "k")])
    assert rc == 0
    assert (tmp_path / "k" / "kernel_summary.csv").exists()
    rc = main(["decompose", "--config", str(path), "--out", str(tmp_path / "d")])
    assert rc == 0
    body = (tmp_path / "d" / "decay_profile.csv").read_text().splitlines()
    assert body[0] == "diam,sup_norm,normalized,boxes_counted"
    assert len(body) == 4  # diam 0, 1, 2


def test_cli_thermo_partial(tmp_path):
    cfg = json.loads(json.dumps(MINIMAL))
    cfg["grid"] = {"n": 9, "half_width": 6.0}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    rc = main(["thermo", "--config", str(path), "--out", str(tmp_path / "t")])
    assert rc == 0
    status = json.loads((tmp_path / "t" / "thermo_status.json").read_text())
    assert status["status"].startswith("partial")
