import json
import os

import numpy as np
import pytest

from errors import ConfigurationError
from experiment_cli import (ExperimentConfig, derive_seed, derive_seeds, emit_report, load_config, main,
                            run_experiment, summary_text)
from experiments import EXPERIMENTS

QUADRATURE_INI = """
[experiment]
id = quadrature-aform
seed = 3

[grid]
u = 0.5, 1.0  # two points
tolerance = 1e-6
"""


def _write(tmp_path, text, name="exp.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _quadrature_config(tmp_path):
    return ExperimentConfig(experiment="quadrature-aform", seed=3, workers=1, replicates=1,
                            output_dir=str(tmp_path / "out"), params={"u": "0.5, 1.0"})


def test_derive_seed_is_deterministic():
    assert derive_seed(42, 0) == derive_seed(42, 0)
    assert derive_seed(42, 0) != derive_seed(42, 1)
    assert derive_seed(42, 0) != derive_seed(43, 0)
    assert 0 <= derive_seed(2**70, 5) < 2**64
    with pytest.raises(ConfigurationError):
        derive_seed(42, -1)


def test_vectorised_seeds_agree():
    indices = [0, 1, 2, 1 << 20, (3 << 20) - 1]
    assert [int(s) for s in derive_seeds(42, indices)] == [derive_seed(42, i) for i in indices]


def test_no_seed_collisions():
    seeds = derive_seeds(20240101, np.arange(10**6))
    assert np.unique(seeds).size == 10**6


def test_load_config(tmp_path):
    path = _write(tmp_path, """
[experiment]
id = killed-geometric
seed = 11
workers = 2
replicates = 3

[law]
name = lazy

[grid]
N = 10, 20

[sampling]
samples = 500
cap = 1000
""")
    config = load_config("killed-geometric", path)
    assert (config.seed, config.workers, config.replicates) == (11, 2, 3)
    assert (config.samples, config.cap) == (500, 1000)
    assert config.get_ints("N", [1]) == [10, 20]
    assert [law.name for law in config.resolve_laws(["simple"])] == ["lazy"]
    with pytest.raises(ConfigurationError):
        config.get_int("N", 1)

    overridden = load_config("killed-geometric", path, seed=5, workers=1, output_dir=str(tmp_path))
    assert (overridden.seed, overridden.workers, overridden.output) == (5, 1, str(tmp_path))


def test_config_defaults():
    config = ExperimentConfig(experiment="killed-geometric")
    assert config.get_int("N", 7) == 7
    assert config.get_floats("u", [1]) == [1.0]
    assert [law.name for law in config.resolve_laws(["simple", "wide4"])] == ["simple", "wide4"]
    assert config.output.endswith("killed-geometric")
    inline = ExperimentConfig(experiment="killed-geometric", law={"support": "-1:1/2, 1:1/2"})
    assert inline.resolve_laws(["lazy"])[0].variance == pytest.approx(1.0)


def test_bad_configs(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config("nope")
    with pytest.raises(ConfigurationError):
        load_config("killed-geometric", str(tmp_path / "missing.ini"))
    with pytest.raises(ConfigurationError):
        load_config("killed-geometric", _write(tmp_path, "[experiment]\nseed = abc\n"))
    with pytest.raises(ConfigurationError):
        load_config("killed-geometric", _write(tmp_path, "[sampling]\nsamples = 0\n", "zero.ini"))


def test_run_is_deterministic(tmp_path):
    first = run_experiment(_quadrature_config(tmp_path))
    second = run_experiment(_quadrature_config(tmp_path))
    assert first.passed
    assert len(first.reports) == 1
    assert first.tables == second.tables
    assert first.tables["quadrature_aform.csv"].startswith("u,v,quadrature,closed_form,abs_error\n")


def test_summary_text(tmp_path):
    record = run_experiment(_quadrature_config(tmp_path))
    text = summary_text(record)
    lines = text.splitlines()
    assert lines[0] == "experiment: quadrature-aform"
    assert lines[1] == "seed: 3"
    assert lines[-1] == "result: all criteria passed"
    assert any(line.startswith("PASS a-form quadrature") for line in lines)


def test_emit_report_formats(tmp_path):
    record = run_experiment(_quadrature_config(tmp_path))
    out = str(tmp_path / "reports")
    csv_paths = emit_report(record, "csv", out)
    assert sorted(os.path.basename(p) for p in csv_paths) == ["quadrature_aform.csv", "verdicts.csv"]
    json_paths = emit_report(record, "json-lines", out)
    assert sorted(os.path.basename(p) for p in json_paths) == ["record.json", "verdicts.jsonl"]
    summary = json.loads((tmp_path / "reports" / "record.json").read_text())
    assert summary["passed"] is True
    assert summary["config"]["seed"] == 3
    assert "wall_clock_seconds" in summary
    verdicts = (tmp_path / "reports" / "verdicts.csv").read_text()
    assert "wall_clock" not in verdicts
    emit_report(record, "summary-text", out)
    assert (tmp_path / "reports" / "summary.txt").read_text() == summary_text(record)
    assert os.path.exists(str(tmp_path / "reports" / "summary.txt.meta"))
    with pytest.raises(ConfigurationError):
        emit_report(record, "xml", out)


def test_emit_report_writes_samples_and_histograms(tmp_path):
    config = ExperimentConfig(experiment="killed-geometric", samples=2000, seed=5, workers=1, replicates=2,
                              law={"name": "simple"}, params={"N": "5", "sample_records": "3"})
    record = run_experiment(config)
    out = tmp_path / "reports"
    csv_names = [os.path.basename(p) for p in emit_report(record, "csv", str(out))]
    histogram = [name for name in csv_names if name.startswith("histogram_") and name.endswith("_simple_N_5.csv")]
    assert len(histogram) == 1
    lines = (out / histogram[0]).read_text().splitlines()
    assert lines[0] == "level,count,frequency"
    assert sum(int(line.split(",")[2]) for line in lines[1:]) == 2000
    json_names = [os.path.basename(p) for p in emit_report(record, "json-lines", str(out))]
    samples = [name for name in json_names if name.startswith("samples_")]
    assert len(samples) == 1
    rows = [json.loads(line) for line in (out / samples[0]).read_text().splitlines()]
    assert [row["sample"] for row in rows] == [0, 1, 2]
    assert set(rows[0]) == {"sample", "seed_index", "counts", "capped", "excursion_length"}
    assert set(rows[0]["counts"]) == {"5"} and rows[0]["counts"]["5"] >= 1
    assert rows[0]["seed_index"] % (1 << 20) == 0
    text = (out / "record.json").read_text()
    assert text.startswith('{\n  "capped": ')
    summary = json.loads(text)
    assert summary["notes"]["norming simple"] == "closed form c(n) = sigma sqrt(n), sigma^2 = 1"
    assert summary["samples"] == [samples[0][:-len(".jsonl")]]
    assert "norming simple: closed form" in summary_text(record)


def test_main_list(capsys):
    assert main(["list"]) == 0
    listed = capsys.readouterr().out
    for experiment_id in EXPERIMENTS:
        assert experiment_id in listed


def test_main_run(tmp_path, capsys):
    path = _write(tmp_path, QUADRATURE_INI)
    out = str(tmp_path / "cli")
    assert main(["run", "quadrature-aform", "--config", path, "--out", out, "--workers", "1"]) == 0
    assert "result: all criteria passed" in capsys.readouterr().out
    written = set(os.listdir(out))
    assert {"verdicts.csv", "verdicts.jsonl", "record.json", "summary.txt", "quadrature_aform.csv"} <= written


def test_main_errors(tmp_path, capsys):
    assert main(["run", "nope"]) == 2
    assert "error:" in capsys.readouterr().err
    bad = _write(tmp_path, "[experiment]\nworkers = -3\n")
    assert main(["run", "quadrature-aform", "--config", bad]) == 2
