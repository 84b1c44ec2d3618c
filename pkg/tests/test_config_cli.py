import json
import os
import subprocess
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tigames.cli import main
from tigames.config import ExperimentConfig, parse_config, serialize_config
from tigames.errors import ConfigError

MINIMAL = '{"schema_version": 1, "game": {"preset": "ex1"}}'


def _write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(data if isinstance(data, str) else json.dumps(data))
    return str(path)


def test_minimal_config_fills_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.game["players"] == 2 and cfg.game["sigma"] == 1.0
    assert cfg.numerics["steps"] == 50 and cfg.sweep["N"] == [2, 4, 8, 16, 32, 64]
    assert cfg.seed == 0 and cfg.command is None


def test_zero_players_message():
    with pytest.raises(ConfigError) as info:
        parse_config('{"schema_version": 1, "game": {"preset": "rep51", "players": 0}}')
    assert "game.players: num_players must be ≥ 1" in info.value.errors


@pytest.mark.parametrize("text, fragment", [
    ('{"schema_version": 2, "game": {"preset": "ex1"}}', "schema_version"),
    ('{"schema_version": 1, "game": {"preset": "ex1", "sigmaa": 1}}', "game.sigmaa: unknown key"),
    ('{"schema_version": 1, "game": {"preset": "ex1"}, "extra": 1}', "extra: unknown key"),
    ('{"schema_version": 1, "game": {"preset": "ex1"}, "numerics": {"steps": 0}}', "numerics.steps"),
    ('{"schema_version": 1, "game": {"preset": "ex1", "sigma": NaN}}', "NaN"),
    ('{"schema_version": 1, "game": {"preset": "ex1"}, "seed": -1}', "seed"),
    ('{"schema_version": 1, "schema_version": 1, "game": {"preset": "ex1"}}', "duplicate"),
    ('{"schema_version": 1, "game": {"preset": "ex1", "players": 3}}', "exactly 2"),
    ('{"schema_version": 1, "game": {"preset": "custom"}}', "coefficients"),
    ('{"schema_version": 1, "game": {"preset": "custom", "coefficients": {"drift": {"cubic": 1}}}}',
     "game.coefficients.drift.cubic: unknown key"),
    ('{"schema_version": 1', "invalid JSON"),
])
def test_rejections_name_the_key(text, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert any(fragment in e for e in info.value.errors)


@given(st.integers(0, 2**64 - 1), st.sampled_from(["ex1", "ex2", "rep51", "lq-zero-sum"]),
       st.floats(0.1, 5.0), st.lists(st.integers(1, 200), min_size=1, max_size=6))
@settings(max_examples=40)
def test_serialize_round_trip(seed, preset, sigma, Ns):
    cfg = ExperimentConfig(game={"preset": preset, "sigma": sigma}, sweep={"N": Ns}, seed=seed)
    once = parse_config(serialize_config(cfg))
    assert parse_config(serialize_config(once)) == once
    assert once.seed == seed and once.game["sigma"] == sigma and once.sweep["N"] == Ns


def test_cli_config_errors_exit_2(tmp_path, capsys):
    assert main(["converge", "--config", _write(tmp_path, "{not json")]) == 2
    assert main(["converge", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["converge", "--config", _write(tmp_path, MINIMAL), "--seed", "-3"]) == 2
    assert main(["bogus", "--config", _write(tmp_path, MINIMAL)]) == 2
    # ex1 has no convergence sweep
    assert main(["converge", "--config", _write(tmp_path, MINIMAL), "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_converge_passes_and_is_byte_identical(tmp_path):
    cfg = {"schema_version": 1, "command": "converge",
           "game": {"preset": "rep51", "kappa1": 0.5, "kappa2": 0.5},
           "numerics": {"steps": 10, "reference_particles": 4096}, "sweep": {"gamma_reps": 4}, "seed": 7}
    path = _write(tmp_path, cfg)
    out = tmp_path / "run"
    files = ("sweep.csv", "sweep_plot.dat", "config.json", "verdict.json")
    snapshots = []
    for _ in range(2):
        assert main(["converge", "--config", path, "--out", str(out)]) == 0
        snapshots.append({f: (out / f).read_bytes() for f in files})
    assert snapshots[0] == snapshots[1]
    outs = [out]
    verdict = json.loads((outs[0] / "verdict.json").read_text())
    assert verdict["passed"] and verdict["exit_code"] == 0


def test_cli_seed_override_changes_outputs(tmp_path):
    cfg = {"schema_version": 1, "game": {"preset": "rep51", "kappa1": 0.5, "kappa2": 0.5},
           "numerics": {"steps": 10, "reference_particles": 4096}, "sweep": {"gamma_reps": 4, "N": [2, 4, 8]}}
    path = _write(tmp_path, cfg)
    main(["converge", "--config", path, "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["converge", "--config", path, "--out", str(tmp_path / "b"), "--seed", "0x2"])
    assert (tmp_path / "a" / "sweep.csv").read_bytes() != (tmp_path / "b" / "sweep.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "config.json").read_text())["seed"] == 2


def test_cli_non_convergence_exit_3(tmp_path):
    cfg = {"schema_version": 1, "game": {"preset": "rep51", "kappa1": 0.5, "kappa2": 0.5},
           "numerics": {"steps": 10, "particles": 1000, "outer_max_iters": 1}}
    assert main(["solve-meanfield", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 3
    assert json.loads((tmp_path / "o" / "verdict.json").read_text())["exit_code"] == 3


def test_cli_command_mismatch_is_config_error(tmp_path):
    cfg = {"schema_version": 1, "command": "zerosum", "game": {"preset": "rep51"}}
    assert main(["converge", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "tigames.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "--config" in proc.stdout
