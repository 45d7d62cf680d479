from __future__ import annotations

import csv
import logging

import pytest
from click.testing import CliRunner

from wbbn_main import EXIT_CONFIG, EXIT_RUNTIME, cli

QUIET = ["--quiet", "--log-level", "WARNING"]


@pytest.fixture
def runner():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield CliRunner()
    # the command installs a handler bound to the runner's captured stderr
    root.handlers[:] = handlers
    root.setLevel(level)


def _rows(path):
    with path.open(newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def test_run_writes_result_files(runner, tiny_scenario_file, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(cli, ["run", str(tiny_scenario_file), "--output-dir", str(out), *QUIET])
    assert result.exit_code == 0, result.output

    runs = _rows(out / "runs.csv")
    assert [row["iteration"] for row in runs] == ["0", "1"]
    assert [row["seed"] for row in runs] == ["11", "12"]
    aggregate = _rows(out / "aggregate.csv")
    assert len(aggregate) == 1
    assert aggregate[0]["iterations"] == "2"
    assert (out / "effective_config.json").exists()
    assert (out / "topology_Clustered_2450_DQPSK_16B_1s.dot").exists()
    assert not (out / "hops_table.csv").exists()


def test_run_flags_override_the_document(runner, tiny_scenario_file, tmp_path):
    out = tmp_path / "out"
    args = ["run", str(tiny_scenario_file), "--output-dir", str(out), "--iterations", "1", "--seed", "40"]
    args += ["--strategy", "Distributed", "--payload", "64", "--trace", *QUIET]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.output
    (row,) = _rows(out / "runs.csv")
    assert (row["strategy"], row["payload_bytes"], row["seed"]) == ("Distributed", "64", "40")
    assert (out / "traces" / "trace_Distributed_2450_DQPSK_64B_1s_it0.tsv").exists()


def test_output_dir_from_environment(runner, tiny_scenario_file, tmp_path):
    out = tmp_path / "from-env"
    result = runner.invoke(
        cli,
        ["run", str(tiny_scenario_file), "--iterations", "1", *QUIET],
        env={"WBBN_OUTPUT_DIR": str(out)},
    )
    assert result.exit_code == 0, result.output
    assert (out / "runs.csv").exists()


def test_sweep_writes_plot_blocks_and_hop_table(runner, tiny_scenario_file, tmp_path):
    out = tmp_path / "sweep"
    args = ["sweep", str(tiny_scenario_file), "--output-dir", str(out), "--iterations", "1", "--duration", "1"]
    args += ["--strategy", "Clustered", "--frequency", "2450", "--modulation", "DQPSK"]
    args += ["--payload", "16", "--payload", "32", *QUIET]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.output

    assert len(_rows(out / "runs.csv")) == 2
    assert len(_rows(out / "aggregate.csv")) == 2
    assert len(_rows(out / "hops_table.csv")) == 1
    for metric in ("prr", "mean_delay_ms", "energy_mj_per_node", "energy_mj_per_delivered"):
        assert (out / f"gnuplot_{metric}.dat").exists()


def test_invalid_document_exits_with_config_code(runner, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "traffic": {\n    "interval_s": 0.3\n  }\n}\n', encoding="utf-8")
    result = runner.invoke(cli, ["run", str(path), "--output-dir", str(tmp_path / "out"), *QUIET])
    assert result.exit_code == EXIT_CONFIG
    assert f"{path}:3:" in result.output
    assert not (tmp_path / "out").exists()


def test_missing_document_exits_with_config_code(runner, tmp_path):
    result = runner.invoke(cli, ["run", str(tmp_path / "nope.json"), *QUIET])
    assert result.exit_code == EXIT_CONFIG


def test_invalid_sweep_grid_runs_nothing(runner, tiny_scenario_file, tmp_path):
    out = tmp_path / "out"
    args = ["sweep", str(tiny_scenario_file), "--output-dir", str(out), "--payload", "16", "--payload", "8", *QUIET]
    result = runner.invoke(cli, args)
    assert result.exit_code == EXIT_CONFIG
    assert not out.exists()


def test_unwritable_output_exits_with_runtime_code(runner, tiny_scenario_file, tmp_path):
    blocker = tmp_path / "occupied"
    blocker.write_text("not a directory", encoding="utf-8")
    args = ["run", str(tiny_scenario_file), "--output-dir", str(blocker), "--iterations", "1", *QUIET]
    result = runner.invoke(cli, args)
    assert result.exit_code == EXIT_RUNTIME
    assert "runtime error" in result.output


def test_missing_document_names_the_path(runner, tmp_path):
    missing = tmp_path / "nope.json"
    result = runner.invoke(cli, ["run", str(missing), *QUIET])
    assert result.exit_code == EXIT_CONFIG
    assert f"configuration error: {missing}: scenario configuration file not found" in result.output


def test_missing_file_while_writing_outputs_is_a_runtime_error(runner, tiny_scenario_file, tmp_path, monkeypatch):
    def vanished(*args, **kwargs):
        raise FileNotFoundError("output directory vanished")

    monkeypatch.setattr("wbbn_main.emit_results", vanished)
    args = ["run", str(tiny_scenario_file), "--output-dir", str(tmp_path / "out"), "--iterations", "1", *QUIET]
    result = runner.invoke(cli, args)
    assert result.exit_code == EXIT_RUNTIME
    assert "runtime error: output directory vanished" in result.output
