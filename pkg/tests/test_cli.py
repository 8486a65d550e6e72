import csv
import json
from pathlib import Path

import jsonschema
import numpy as np
import pydot
import pytest

from sargnn import cli
from sargnn import tensor as T
from sargnn.graph import Dataset, Graph

SCHEMA = json.loads(cli.METRICS_SCHEMA.read_text())
FAST = ["--layers", "2", "--dim", "6", "--epochs", "2"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    path = root / "d.json"
    assert cli.main(["generate", "--n", "24", "--nodes", "6..12", "--labels", "3", "--seed", "1",
                     "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def trained(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["train", "--data", str(data), "--variant", "sar-s", "--out", str(out), *FAST]) == 0
    return out


def usage_error(argv):
    with pytest.raises(SystemExit) as info:
        cli.main(argv)
    return info.value.code == 2


def test_generate_counts_and_bytes(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    args = ["generate", "--n", "60", "--nodes", "6..12", "--labels", "3", "--seed", "1"]
    cli.main(args + ["--out", str(a)])
    cli.main(args + ["--out", str(b)])
    ds = Dataset.load(a)
    assert len(ds) == 60 and np.bincount(ds.labels).tolist() == [20, 20, 20]
    assert a.read_bytes() == b.read_bytes()


def test_usage_errors(data, tmp_path):
    assert usage_error(["generate", "--n", "5", "--labels", "1", "--out", str(tmp_path / "x.json")])
    assert usage_error(["train", "--data", str(data), "--fusion", "scaling", "--gamma", "-1",
                        "--out", str(tmp_path)])
    assert usage_error(["train", "--data", str(data), "--variant", "sar-w", "--fusion", "scaling",
                        "--out", str(tmp_path)])
    assert usage_error(["train", "--data", str(data), "--variant", "base", "--fusion", "weighted",
                        "--out", str(tmp_path)])
    assert usage_error(["train", "--out", str(tmp_path)])  # no data source
    assert usage_error(["crossval", "--data", str(data), "--k", "99", "--out", str(tmp_path)])


def test_train_outputs(trained):
    assert {p.name for p in trained.iterdir()} >= {"metrics.json", "metrics.csv", "checkpoint.json",
                                                   "embeddings.csv"}
    metrics = json.loads((trained / "metrics.json").read_text())
    jsonschema.validate(metrics, SCHEMA)
    assert metrics["config"]["variant"] == "sar_gnn" and metrics["config"]["fusion_mode"] == "scaling"
    with open(trained / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == cli.CSV_HEADER
    assert [int(r[1]) for r in rows[1:]] == [0, 1]
    with open(trained / "embeddings.csv") as fh:
        emb = list(csv.reader(fh))
    assert len(emb) == 25 and len(emb[0]) == 3 + 6


def test_train_base_has_no_memory(data, tmp_path):
    cli.main(["train", "--data", str(data), "--variant", "base", "--out", str(tmp_path), *FAST])
    params = json.loads((tmp_path / "checkpoint.json").read_text())["parameters"]
    assert not any(k.startswith(("memory", "saliency", "m0")) for k in params)


def test_train_from_tu_fixture(tmp_path):
    tu = Path(__file__).parent / "data" / "TOY" / "TOY"
    assert cli.main(["train", "--tu", str(tu), "--variant", "gnm", "--out", str(tmp_path), *FAST]) == 0
    jsonschema.validate(json.loads((tmp_path / "metrics.json").read_text()), SCHEMA)


def test_crossval_is_deterministic(data, tmp_path, capsys):
    argv = ["crossval", "--data", str(data), "--k", "3", "--seed", "3", *FAST]
    cli.main(argv + ["--out", str(tmp_path / "a")])
    cli.main(argv + ["--out", str(tmp_path / "b")])
    a = json.loads((tmp_path / "a" / "metrics.json").read_text())
    b = json.loads((tmp_path / "b" / "metrics.json").read_text())
    jsonschema.validate(a, SCHEMA)
    assert (a["mean_accuracy"], a["std_accuracy"]) == (b["mean_accuracy"], b["std_accuracy"])
    assert a["folds"] == b["folds"]


def test_ablate_covers_all_variants(data, tmp_path):
    cli.main(["ablate", "--data", str(data), "--k", "2", "--layers", "1", "--dim", "4", "--epochs", "1",
              "--out", str(tmp_path)])
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    jsonschema.validate(metrics, SCHEMA)
    assert set(metrics["variants"]) == set(cli.VARIANT_ALIASES)


def test_evaluate(data, trained, capsys):
    assert cli.main(["evaluate", "--data", str(data), "--checkpoint", str(trained / "checkpoint.json")]) == 0
    assert 0 <= json.loads(capsys.readouterr().out)["accuracy"] <= 1


def test_export_saliency(data, trained, tmp_path):
    assert cli.main(["export-saliency", "--data", str(data), "--checkpoint", str(trained / "checkpoint.json"),
                     "--indices", "0,5", "--out", str(tmp_path)]) == 0
    for i in (0, 5):
        record = json.loads((tmp_path / "saliency" / f"{i}.json").read_text())
        assert set(record) == {"nodes", "edges", "saliency", "label", "prediction"}
        assert len(record["saliency"]) == 2
        for layer in record["saliency"]:
            assert abs(sum(layer) - 1) < 1e-6
        parsed = pydot.graph_from_dot_file(str(tmp_path / "saliency" / f"{i}.dot"))
        assert len(parsed) == 1
        assert len(parsed[0].get_edges()) == len(record["edges"])
    assert usage_error(["export-saliency", "--data", str(data), "--checkpoint",
                        str(trained / "checkpoint.json"), "--indices", "24", "--out", str(tmp_path)])


def test_export_saliency_singleton(trained, tmp_path):
    ds = Dataset([Graph(1, np.zeros((0, 2), int), np.eye(11)[[0]], 0)], 3, 11)
    ds.save(tmp_path / "one.json")
    cli.main(["export-saliency", "--data", str(tmp_path / "one.json"), "--checkpoint",
              str(trained / "checkpoint.json"), "--indices", "0", "--out", str(tmp_path)])
    record = json.loads((tmp_path / "saliency" / "0.json").read_text())
    assert record["saliency"] == [[1.0], [1.0]]
    assert pydot.graph_from_dot_data((tmp_path / "saliency" / "0.dot").read_text())


def test_gradcheck_default_passes_and_lists_groups(capsys):
    assert cli.main(["gradcheck"]) == 0
    report = json.loads(capsys.readouterr().out)
    expected = {"embed", "head", "m0", "backbone.0", "backbone.1", "memory.0", "memory.1", "memory.2",
                "saliency.0", "saliency.1"}
    assert set(report["groups"]) == expected
    assert report["max_error"] < cli.GRADCHECK_TOLERANCE


def test_gradcheck_flags_wrong_backward_rule(monkeypatch, capsys):
    good = T.relu

    def bad_relu(a):
        out = good(a)
        mask = out.data > 0
        out._backward = lambda g: (0.5 * g * mask,)
        return out

    monkeypatch.setattr(T, "relu", bad_relu)
    assert cli.main(["gradcheck"]) != 0


def test_bench_rows_and_exponents(tmp_path, capsys):
    cli.main(["bench", "--sizes", "1:1:4,8:1:4,16:1:4,8:2:4", "--repeats", "1", "--out", str(tmp_path)])
    result = json.loads((tmp_path / "bench.json").read_text())
    assert len(result["rows"]) == 4
    assert set(result["exponents"]) == {"N", "L"}
