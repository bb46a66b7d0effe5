#!/usr/bin/env python3
"""
Tests for run configuration loading, config hashes, seed streams and the
command-line exit codes.
"""

import json
import os
import sys

import pytest

# Add project root to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", ".."))

from errors import ConfigurationError, DatasetIOError
from main import build_parser, main
from reports import read_csv, write_csv
from run_config import SEED_STREAMS, RunConfig, config_hash, load_run_config, log_level, seed_stream

ROOT = os.path.join(os.path.dirname(__file__), "..", "..")
SMOKE = os.path.join(ROOT, "configs", "smoke.json")


def _write_config(tmp_path, payload, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def _smoke(tmp_path, **sections):
    with open(SMOKE, encoding="utf-8") as f:
        payload = json.load(f)
    for key, value in sections.items():
        payload.setdefault(key, {}).update(value)
    return _write_config(tmp_path, payload, "smoke.json")


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for name in ("DAP_SEED", "DAP_JOBS", "DAP_OUT_DIR", "DAP_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)


def test_shipped_configs_load():
    default = load_run_config(os.path.join(ROOT, "configs", "default.json"))
    assert default.model.vocab.n_traj == 1144
    smoke = load_run_config(SMOKE)
    assert smoke.bev.tokens_per_frame == smoke.model.bev_tokens_per_frame == 16


def test_unknown_keys_are_rejected(tmp_path):
    with pytest.raises(ConfigurationError):
        load_run_config(_write_config(tmp_path, {"sim": {"bogus": 1}}))
    with pytest.raises(ConfigurationError):
        load_run_config(_write_config(tmp_path, {"colour": "red"}))


def test_inconsistent_vocabulary_is_rejected(tmp_path):
    with pytest.raises(ConfigurationError):
        load_run_config(_write_config(tmp_path, {"sim": {"scheme": "fb-ka-B"}}))
    with pytest.raises(ConfigurationError):
        load_run_config(_write_config(tmp_path, {"model": {"bev_tokens_per_frame": 5}}))


def test_unreadable_files(tmp_path):
    with pytest.raises(DatasetIOError):
        load_run_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        load_run_config(str(bad))


def test_source_precedence(tmp_path, monkeypatch):
    path = _write_config(tmp_path, {"seed": 1, "out_dir": "from_file"})
    assert load_run_config(path).seed == 1
    monkeypatch.setenv("DAP_SEED", "5")
    monkeypatch.setenv("DAP_OUT_DIR", "from_env")
    cfg = load_run_config(path)
    assert cfg.seed == 5 and cfg.out_dir == "from_env"
    cfg = load_run_config(path, seed=9, out_dir="from_flag")
    assert cfg.seed == 9 and cfg.out_dir == "from_flag"
    monkeypatch.setenv("DAP_JOBS", "many")
    with pytest.raises(ConfigurationError):
        load_run_config(path)


def test_log_level_from_environment(monkeypatch):
    assert log_level() == "INFO"
    monkeypatch.setenv("DAP_LOG_LEVEL", "debug")
    assert log_level() == "DEBUG"
    monkeypatch.setenv("DAP_LOG_LEVEL", "chatty")
    assert log_level() == "INFO"


def test_seed_streams_are_distinct_and_stable():
    seeds = [seed_stream(0, name) for name in SEED_STREAMS]
    assert len(set(seeds)) == len(SEED_STREAMS)
    assert seeds == [seed_stream(0, name) for name in SEED_STREAMS]
    assert seed_stream(0, "data") != seed_stream(1, "data")
    assert all(0 <= s < 2**31 for s in seeds)
    with pytest.raises(ConfigurationError):
        seed_stream(0, "weather")


def test_config_hashes():
    base = RunConfig()
    assert len(base.hash) == 16 and int(base.hash, 16) >= 0
    assert base.hash == RunConfig().hash
    assert config_hash({"b": 1, "a": 2}) == config_hash({"a": 2, "b": 1})

    more_data = RunConfig(sim={"n_episodes": 5})
    assert more_data.dataset_hash != base.dataset_hash
    assert more_data.checkpoint_hash == base.checkpoint_hash

    wider = RunConfig(model={"d_model": 32, "n_heads": 4})
    assert wider.checkpoint_hash != base.checkpoint_hash
    assert wider.dataset_hash == base.dataset_hash


def test_parser_rejects_bad_arguments():
    with pytest.raises(SystemExit) as excinfo:
        build_parser().parse_args(["eval", "--mode", "sideways"])
    assert excinfo.value.code == 2
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_exit_codes(tmp_path):
    out = str(tmp_path / "run")
    assert main(["--config", _write_config(tmp_path, {"sim": {"bogus": 1}}), "gen-data"]) == 3
    assert main(["--config", str(tmp_path / "missing.json"), "gen-data"]) == 4
    assert main(["--config", SMOKE, "--out", out, "eval", "--mode", "open", "--policy", "expert"]) == 2
    assert main(["--config", SMOKE, "--out", out, "train-bc"]) == 4


def test_gen_data_reruns_are_byte_identical(tmp_path):
    config = _smoke(tmp_path, sim={"n_episodes": 3, "episode_steps": 6})
    outputs = []
    for name in ("first", "second"):
        out = str(tmp_path / name)
        assert main(["--quiet", "--config", config, "--out", out, "gen-data"]) == 0
        data = os.path.join(out, "data")
        files = {}
        for base, _, names in os.walk(data):
            for n in names:
                with open(os.path.join(base, n), "rb") as f:
                    files[os.path.relpath(os.path.join(base, n), data)] = f.read()
        outputs.append(files)
    assert len(outputs[0]) == 4
    assert outputs[0] == outputs[1]


def test_tok_bench_writes_reports(tmp_path):
    out = str(tmp_path / "bench")
    assert main(["--quiet", "--config", SMOKE, "--out", out, "tok-bench", "--schemes", "fb-ka-B", "fb-ka-D"]) == 0
    sizes = read_csv(os.path.join(out, "tok_bench", "codebook_sizes.csv"))
    assert [(r["scheme"], r["codebook_size"]) for r in sizes] == [("fb-ka-B", "3648"), ("fb-ka-D", "14592")]
    with open(os.path.join(out, "tok_bench", "reconstruction.csv"), encoding="utf-8") as f:
        assert f.readline().startswith("# config_hash=")


def test_posttune_command_refines_a_csv(tmp_path):
    rows = [{"x": 12.0 + 2.0 * i, "y": 0.4 * (-1) ** i, "yaw": 0.0} for i in range(8)]
    src = write_csv(str(tmp_path / "plan.csv"), ["x", "y", "yaw"], rows)
    out = str(tmp_path / "pt")
    default = os.path.join(ROOT, "configs", "default.json")
    code = main(["--config", default, "--out", out, "posttune", "--input", src, "--scene-seed", "0",
                 "--difficulty", "straight"])
    assert code == 0
    refined = read_csv(os.path.join(out, "posttune", "refined.csv"))
    assert len(refined) == 8
    assert (sum(float(r["y"]) ** 2 for r in refined) / 8) ** 0.5 < 0.4
    with open(os.path.join(out, "posttune", "diagnostics.json"), encoding="utf-8") as f:
        diagnostics = json.load(f)
    assert diagnostics["lateral_objective"] <= diagnostics["lateral_objective_zero"] + 1e-12
