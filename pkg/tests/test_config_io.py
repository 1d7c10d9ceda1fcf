import json

import numpy as np
import pytest

from nqcs.config import load, parse_override
from nqcs.errors import ConfigurationError
from nqcs.io import fmt, to_json, write_csv, write_manifest


def test_defaults_filled(tmp_path):
    conf = load("example")
    assert conf["example"]["T"] == 10.0 and conf["example"]["n_grid"] == 100_000


def test_overrides_and_types(tmp_path):
    conf = load("simulate", None, ["network.h_mati=0.02", "network.h_mad=0.001",
                                   "run.eta0=0.1, 0.2", "run.check=no"])
    assert conf["run"]["eta0"] == [0.1, 0.2] and conf["run"]["check"] is False


@pytest.mark.parametrize("override,msg", [("run.seed=1.5", "run.seed"),
                                          ("run.nope=1", "run.nope"),
                                          ("bad", "section.key")])
def test_rejections(override, msg):
    with pytest.raises(ConfigurationError, match=msg):
        load("simulate", None, ["network.h_mati=0.02", "network.h_mad=0.001", override])


def test_missing_required():
    with pytest.raises(ConfigurationError, match="network.h_mati"):
        load("simulate")


def test_optional_section_absent():
    conf = load("tradeoff", None, ["tradeoff.L0=1"])
    assert "combo" not in conf


def test_json_round_trip(tmp_path):
    conf = load("verify", None, ["combo.protocol=rr", "combo.node_dims=1,1", "combo.n_df=2",
                                 "combo.varpi=0.1", "combo.delta=0.1", "combo.m=4",
                                 "combo.omega=0.5"])
    path = tmp_path / "c.json"
    path.write_text(to_json({"command": "verify", **conf}))
    assert load("verify", str(path)) == conf


def test_parse_override():
    assert parse_override("a.b.c = 1=2") == ("a", "b.c", "1=2")


def test_fmt_and_csv(tmp_path):
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(np.float64(2.0)) == "2"
    assert fmt(3) == "3"
    p = write_csv(tmp_path / "x.csv", ["a", "b"], [(1.0 / 3.0, "x")])
    assert open(p, "rb").read() == b"a,b\n0.33333333333333331,x\n"


def test_json_is_stable_and_valid():
    text = to_json({"b": np.float64(1.5), "a": [np.int64(2), float("inf")],
                    "c": np.arange(2)})
    assert json.loads(text) == {"a": [2, "inf"], "b": 1.5, "c": [0, 1]}
    assert text == to_json({"c": np.arange(2), "a": [np.int64(2), float("inf")],
                            "b": np.float64(1.5)})


def test_manifest(tmp_path):
    f = tmp_path / "x.txt"
    f.write_text("hello\n")
    write_manifest(tmp_path, [str(f)], extra={"command": "t"})
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["files"][0]["file"] == "x.txt" and m["files"][0]["bytes"] == 6
