import json
import os

import numpy as np
import pytest

from errors import ConfigurationError
from results_store import ResultsStore, checksum, render_csv, render_jsonl
from stats_verify import Criterion


def test_render_csv_uses_repr_floats():
    text = render_csv(["N", "value"], [(10, 0.1), (20, 1 / 3)])
    assert text == "N,value\n10,0.1\n20,0.3333333333333333\n"


def test_render_jsonl_is_sorted_and_plain():
    text = render_jsonl([{"b": np.int64(2), "a": np.float64(0.5), "c": np.arange(2), "d": Criterion.SIGMA}])
    assert text == '{"a": 0.5, "b": 2, "c": [0, 1], "d": "sigma"}\n'


def test_write_and_read_back(tmp_path):
    store = ResultsStore(str(tmp_path / "run"))
    artifacts = {"summary.txt": "all passed\n", "table.csv": render_csv(["x"], [(1.5,)])}
    paths = store.write_all(artifacts)
    assert [os.path.basename(p) for p in paths] == ["summary.txt", "table.csv"]
    assert store.read("table.csv") == "x\n1.5\n"
    meta = json.loads((tmp_path / "run" / "summary.txt.meta").read_text())
    assert meta["checksum"] == checksum("all passed\n")
    assert meta["bytes"] == 11
    assert store.checksums["summary.txt"] == meta["checksum"]


def test_tampered_artifact_reads_as_missing(tmp_path):
    store = ResultsStore(str(tmp_path))
    store.write_all({"report.jsonl": render_jsonl([{"passed": True}])})
    (tmp_path / "report.jsonl").write_text('{"passed": false}\n')
    assert store.read("report.jsonl") is None
    assert store.read("missing.csv") is None


def test_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(ConfigurationError):
        ResultsStore(str(blocker / "sub"))


def test_save_dispatches_on_content(tmp_path):
    store = ResultsStore(str(tmp_path))
    store.write_all({
        "note.txt": "plain\n",
        "table.csv": (["level", "count"], [(3, 0.25)]),
        "samples.jsonl": [{"sample": 0, "seed_index": np.int64(5)}, {"sample": 1, "seed_index": None}],
        "record.json": {"passed": True, "notes": {"norming simple": "closed form"}},
    })
    assert store.read("note.txt") == "plain\n"
    assert store.read("table.csv") == "level,count\n3,0.25\n"
    lines = store.read("samples.jsonl").splitlines()
    assert [json.loads(line)["seed_index"] for line in lines] == [5, None]
    text = store.read("record.json")
    assert text.endswith("}\n") and '\n  "notes": {' in text
    assert json.loads(text)["notes"]["norming simple"] == "closed form"
    with pytest.raises(ConfigurationError):
        store.write_all({"bad.bin": b"bytes"})
