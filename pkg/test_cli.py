#!/usr/bin/env python3
"""
Test script for the swarm coordinator command line: config validation, simulate, presets and output files.
"""

import json
import os
import sys

import pandas as pd
import pytest

# Add the app directory to the Python path
sys.path.append(os.path.join(os.path.dirname(__file__), 'app'))

from swarm_coordinator.cli import (  # noqa: E402
    EXIT_OK,
    EXIT_VALIDATION,
    TRAJECTORY_COLUMNS,
    main,
    parse_overrides,
    validate_config,
)
from swarmlab.errors import ConfigError  # noqa: E402

CONFIG = {
    "network": {"p": 0.5, "y_opt": True},
    "swarms": [
        {"id": "W1", "file": "1..4", "lambda": 2.0},
        {"id": "W2", "file": "3..6", "lambda": 1.0},
    ],
    "policy": {"kind": "RFwPMS"},
    "sim": {"t_end": 20.0, "rng_seed": 5, "sample_interval": 2.0},
}


def write_config(tmp_path, doc=None, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc if doc is not None else CONFIG, indent=2), encoding="utf-8")
    return str(path)


def test_validate_config_accepts_good_file(tmp_path):
    result = validate_config(write_config(tmp_path))
    assert result["status"] == "success"
    assert result["swarms"] == ["W1", "W2"]


def test_validate_config_reports_every_problem(tmp_path, capsys):
    doc = json.loads(json.dumps(CONFIG))
    doc["swarms"][0]["lamda"] = 2.0
    doc["network"]["p"] = "high"
    path = write_config(tmp_path, doc)
    assert main(["validate-config", path]) == EXIT_VALIDATION
    err = capsys.readouterr().err
    assert "2 problem(s)" in err
    assert "unknown key 'lamda'" in err
    assert "p must be a number" in err


def test_malformed_json_names_the_line(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "swarms": [\n', encoding="utf-8")
    assert main(["validate-config", "--config", str(path)]) == EXIT_VALIDATION
    assert "line 3" in capsys.readouterr().err


def test_simulate_zero_horizon_writes_initial_samples(tmp_path):
    doc = json.loads(json.dumps(CONFIG))
    doc["sim"]["t_end"] = 0.0
    out = tmp_path / "out"
    assert main(["simulate", write_config(tmp_path, doc), "--out", str(out), "--quiet"]) == EXIT_OK
    trajectory = pd.read_csv(out / "trajectory.csv")
    assert list(trajectory.columns) == TRAJECTORY_COLUMNS
    assert trajectory["swarm"].tolist() == ["W1", "W2"]
    assert (trajectory["t"] == 0).all()
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["status"] == "success"
    assert len(summary["config_hash"]) == 64


def test_simulate_is_byte_reproducible(tmp_path):
    path = write_config(tmp_path)
    for name in ("a", "b"):
        assert main(["simulate", path, "--seed", "9", "--out", str(tmp_path / name), "--quiet"]) == EXIT_OK
    for csv in ("trajectory.csv", "sojourns.csv"):
        assert (tmp_path / "a" / csv).read_bytes() == (tmp_path / "b" / csv).read_bytes()


def test_simulate_replications_get_their_own_directories(tmp_path):
    out = tmp_path / "reps"
    assert main(["simulate", write_config(tmp_path), "--replications", "2", "--out", str(out), "--quiet"]) == EXIT_OK
    assert (out / "rep0" / "trajectory.csv").exists()
    assert (out / "rep1" / "sojourns.csv").exists()


def test_seed_must_be_unsigned(tmp_path):
    with pytest.raises(SystemExit):
        main(["simulate", write_config(tmp_path), "--seed", "-1"])


def test_list_presets(capsys):
    assert main(["list-presets"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "fps_hard_tft" in out
    assert "flash_crowd_small" in out


def test_unknown_preset_suggests_names(capsys):
    assert main(["preset", "fps_hard"]) == EXIT_VALIDATION
    assert "did you mean: fps_hard_tft" in capsys.readouterr().err


def test_short_preset_run_writes_outputs(tmp_path):
    out = tmp_path / "fps"
    assert main(["preset", "fps_hard_tft", "--t_end=20", "--out", str(out), "--quiet"]) == EXIT_OK
    assert (out / "fps" / "rep0" / "trajectory.csv").exists()
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["preset"] == "fps_hard_tft"
    assert summary["options"]["t_end"] == 20.0
    assert len(summary["verdicts"]) == 2


def test_preset_overrides_from_file(tmp_path):
    overrides = tmp_path / "overrides.json"
    overrides.write_text(json.dumps({"t_end": 15, "k": 5}), encoding="utf-8")
    out = tmp_path / "fps"
    assert main(["preset", "fps_hard_tft", "--config", str(overrides), "--out", str(out), "--quiet"]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["options"]["k"] == 5
    overrides.write_text("[1, 2]", encoding="utf-8")
    assert main(["preset", "fps_hard_tft", "--config", str(overrides), "--quiet"]) == EXIT_VALIDATION


def test_parse_overrides():
    tokens = ["--k", "5", "--beta=1.2", "--sample-interval", "2"]
    assert parse_overrides(tokens) == {"k": "5", "beta": "1.2", "sample_interval": "2"}
    with pytest.raises(ConfigError):
        parse_overrides(["stray"])
    with pytest.raises(ConfigError):
        parse_overrides(["--k"])


def test_one_club_with_negative_missing_piece_is_a_validation_error(tmp_path, capsys):
    doc = json.loads(json.dumps(CONFIG))
    doc["sim"]["initial"] = {"kind": "one_club", "sizes": {"W1": 10}, "missing": {"W1": -1}}
    assert main(["validate-config", write_config(tmp_path, doc)]) == EXIT_VALIDATION
    assert "one-club missing piece for 'W1' must lie in its file" in capsys.readouterr().err


def test_preset_overrides_flag_layers_on_config(tmp_path):
    base = tmp_path / "base.json"
    base.write_text(json.dumps({"t_end": 40, "k": 6}), encoding="utf-8")
    layered = tmp_path / "ov.json"
    layered.write_text(json.dumps({"t_end": 12}), encoding="utf-8")
    out = tmp_path / "fps"
    argv = ["preset", "fps_hard_tft", "--config", str(base), "--overrides", str(layered), "--out", str(out),
            "--quiet"]
    assert main(argv) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["options"]["t_end"] == 12.0
    assert summary["options"]["k"] == 6


def test_preset_summary_embeds_resolved_case_configs(tmp_path):
    out = tmp_path / "fps"
    assert main(["preset", "fps_hard_tft", "--t_end=10", "--k=4", "--out", str(out), "--quiet"]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    config = summary["config"]["fps"]
    assert config["sim"]["t_end"] == 10.0
    assert config["swarms"][0]["file"] == "1..4"
    assert config["network"]["p"] == 0.0
    assert set(summary["config"]) == set(summary["case_config_hashes"])
