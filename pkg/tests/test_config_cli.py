import json
from pathlib import Path

import numpy as np
import pytest

from gridsec.cli import main
from gridsec.config import apply_override, build_config, load_config, parse_value
from gridsec.errors import ConfigError
from gridsec.ledger import export_ledger, import_ledger

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_parse_and_override():
    assert parse_value("50") == 50 and parse_value("0.3") == 0.3
    assert parse_value("true") is True and parse_value("halt") == "halt"
    doc = {"scenario": {"attacks": [{"targets": [1], "onset": 5, "magnitude": 0.1}]}}
    apply_override(doc, "scenario.attacks.0.magnitude=0.4")
    apply_override(doc, "scenario.T=40")
    assert doc["scenario"]["attacks"][0]["magnitude"] == 0.4 and doc["scenario"]["T"] == 40
    with pytest.raises(ConfigError):
        apply_override(doc, "scenario.T")


@pytest.mark.parametrize("name", ["ieee14_case1.toml", "ieee14_case2.toml", "regular.toml", "toy_inline.toml"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.scenario.T >= 1


def test_case1_config_contents():
    sc = load_config(CONFIGS / "ieee14_case1.toml").scenario
    (a,) = sc.attacks
    assert a.targets == (1, 2) and a.onset == 200 and a.magnitude == 0.3
    assert sc.threshold == pytest.approx(21.3527, abs=0.01)


def test_inline_partition_is_one_based():
    cfg = load_config(CONFIGS / "toy_inline.toml")
    assert cfg.scenario.model.partition == ((0, 2), (1, 3))


@pytest.mark.parametrize(
    "doc, field",
    [
        ({"scenario": {"T": 10, "colour": 1}}, "colour"),
        ({"detection": {"alpha": "x"}}, "alpha"),
        ({"model": {"preset": "ieee30"}}, "preset"),
        ({"scenario": {"attacks": [{"targets": [1], "onset": 1}]}}, "magnitude"),
    ],
)
def test_bad_config_names_field(doc, field):
    with pytest.raises(ConfigError, match=field):
        build_config(doc)


def test_cli_threshold(capsys):
    assert main(["threshold", "0.2", "1e6"]) == 0
    assert capsys.readouterr().out.strip() == "21.352669"
    assert main(["threshold", "0.4", "1e6"]) == 2


def test_cli_run_and_verify(tmp_path, capsys):
    args = ["run", "--config", str(CONFIGS / "ieee14_case1.toml"), "--seed", "4", "--out", str(tmp_path), "--set", "scenario.T=40"]
    assert main(args) == 0
    stem = tmp_path / "case1"
    assert len(Path(f"{stem}.csv").read_text().splitlines()) == 41
    assert json.loads(Path(f"{stem}.json").read_text())["seed"] == 4
    ledger = Path(f"{stem}.ledger")
    assert main(["verify-ledger", str(ledger), "--config", str(CONFIGS / "ieee14_case1.toml"), "--seed", "4"]) == 0
    raw = bytearray(ledger.read_bytes())
    raw[len(raw) // 3] ^= 0x01
    bad = tmp_path / "bad.ledger"
    bad.write_bytes(bytes(raw))
    assert main(["verify-ledger", str(bad)]) == 4
    bad.write_bytes(ledger.read_bytes()[:50])
    assert main(["verify-ledger", str(bad)]) == 2
    assert main(["verify-ledger", str(tmp_path / "missing.ledger")]) == 2


def test_cli_run_twice_is_reproducible(tmp_path):
    for d in ("a", "b"):
        assert main(["run", "--config", str(CONFIGS / "toy_inline.toml"), "--out", str(tmp_path / d)]) == 0
    for ext in ("csv", "json", "ledger"):
        assert (tmp_path / "a" / f"toy.{ext}").read_bytes() == (tmp_path / "b" / f"toy.{ext}").read_bytes()


def test_cli_config_errors(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.toml")]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("[scenario]\nT = 10\nspeed = 3\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert "speed" in capsys.readouterr().err


def test_cli_validate_model(capsys):
    assert main(["validate-model"]) == 0
    assert "13 states" in capsys.readouterr().out
    assert main(["validate-model", "--config", str(CONFIGS / "toy_inline.toml")]) == 0
