import csv
import json
import math

import pytest

from higgslab.cli import DEFAULT_CONFIG, config_hash, load_config, main


def run(tmp_path, command, toml=None, *extra):
    args = [command, "--out", str(tmp_path / "out")]
    if toml is not None:
        cfg = tmp_path / "cfg.toml"
        cfg.write_text(toml)
        args += ["--config", str(cfg)]
    code = main(args + list(extra))
    out = tmp_path / "out" / f"{command}.json"
    doc = json.loads(out.read_text()) if code == 0 and out.exists() else None
    return code, doc


def test_threshold_two_zero(tmp_path):
    code, doc = run(tmp_path, "threshold")
    assert code == 0
    assert abs(doc["threshold"] - math.pi / 2) <= 1e-3
    assert doc["config_hash"] == config_hash(load_config(None) | {"seed": 0})
    assert "tolerances" in doc


def test_threshold_none_below_cutoff(tmp_path):
    code, doc = run(tmp_path, "threshold", "[curve]\ncoefficients = [0.0, 1.0]\n")
    assert code == 0 and doc["threshold"] == "none below cutoff"


def test_threshold_non_simple_zero_exit_2(tmp_path):
    code, _ = run(tmp_path, "threshold", "[curve]\ncoefficients = [0.0, 0.0, 1.0]\n")
    assert code == 2


@pytest.mark.parametrize("toml", ["[bogus]\nx = 1\n", "[decay]\nR = -1.0\n", "[compare]\nt = [3.0, 2.0, 4.0]\n",
                                  "this is not toml ==="])
def test_invalid_configuration_exit_2(tmp_path, toml):
    command = "compare" if "compare" in toml else "decay"
    assert run(tmp_path, command, toml)[0] == 2


def test_bad_arguments_exit_2(tmp_path):
    assert main(["nope"]) == 2
    assert main(["threshold", "--jobs", "0", "--out", str(tmp_path)]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_solver_failure_exit_3(tmp_path):
    toml = "[decay]\nR = 2.0\nh_divisions = 8\namplitude = 1e30\ngeneral = false\n"
    assert run(tmp_path, "decay", toml)[0] == 3


def test_compare_without_threshold_exit_4(tmp_path):
    assert run(tmp_path, "compare", "[curve]\ncoefficients = [0.0, 1.0]\n")[0] == 4


def test_compare_bad_kappa_exit_4(tmp_path):
    assert run(tmp_path, "compare", "[compare]\nkappa_fraction = 1.5\n")[0] == 4


def test_decay_zero_boundary(tmp_path):
    toml = "[decay]\nR = 2.0\nh_divisions = 16\namplitude = 0.0\n"
    code, doc = run(tmp_path, "decay", toml)
    assert code == 0
    with open(tmp_path / "out" / "decay.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["exponent"] for r in rows] == ["exact zero field", "exact zero field"]


def test_auxgram_complex_encoding(tmp_path):
    code, doc = run(tmp_path, "auxgram")
    assert code == 0
    entry = doc["gram"]["hor_ver"][0][0]
    assert isinstance(entry, list) and len(entry) == 2
    assert all(isinstance(x, float) for x in entry)


def test_compare_zero_forms_and_determinism(tmp_path):
    toml = ("[compare]\nt = [2.0, 3.0, 4.0]\nnu = [0.0]\nmu = [0.0]\ndirect_t = []\n")
    code, doc = run(tmp_path, "compare", toml)
    assert code == 0
    for row in doc["rows"]:
        assert row["pair_HH"] == 0 and row["pair_VV"] == 0 and row["pair_HV"] == [0.0, 0.0]
    first = (tmp_path / "out" / "compare.json").read_bytes()
    assert main(["compare", "--config", str(tmp_path / "cfg.toml"), "--out", str(tmp_path / "out"),
                 "--jobs", "2"]) == 0
    assert (tmp_path / "out" / "compare.json").read_bytes() == first


def test_model_outputs_csv(tmp_path):
    code, doc = run(tmp_path, "model", "[model]\nt = [1.0, 2.0]\n")
    assert code == 0
    assert doc["scaling_law_max_error"] <= 1e-6
    assert all(abs(f["far_field_slope"] - 1) <= 0.05 for f in doc["fits"])
    raw = (tmp_path / "out" / "model.csv").read_bytes()
    assert b"\r\n" in raw
    with open(tmp_path / "out" / "model.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert set(rows[0]) == {"t", "r", "v", "psi"}


def test_config_hash_stable_and_sensitive():
    a = load_config(None)
    b = load_config(None)
    assert config_hash(a) == config_hash(b)
    b["compare"]["kappa_fraction"] = 0.4
    assert config_hash(a) != config_hash(b)
    assert DEFAULT_CONFIG["compare"]["kappa_fraction"] == 0.5
