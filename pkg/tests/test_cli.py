import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from metashap.benchgen import load_ground_truth
from metashap.cli import main


def constant_objective(config):
    return 0.5


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("kb")
    assert main(["benchgen", "--out", str(out), "--seed", "3"]) == 0
    return out


def _recommend(bundle, out, *extra):
    return main(["recommend", "--kb", str(bundle), "--algorithm", "synthetic", "--query-id", "d01",
                 "--n-trees", "40", "--out", str(out), *extra])


@pytest.fixture(scope="module")
def recommended(bundle, tmp_path_factory):
    out = tmp_path_factory.mktemp("rec")
    assert _recommend(bundle, out) == 0
    return out


def test_benchgen_bundle(bundle):
    assert len((bundle / "records.jsonl").read_text().splitlines()) == 4000
    assert (bundle / "ground_truth.json").exists() and (bundle / "surfaces.json").exists()


def test_ranking_matches_ground_truth(bundle, recommended):
    report = json.loads((recommended / "report.json").read_text())
    gt = load_ground_truth(bundle / "ground_truth.json")["d01"]
    names = [f"x{i}" for i in range(8)]
    assert report["selected"] == gt.ranking(names)[:3]
    assert report["schema_version"] == "report/v1"
    assert report["provenance"]["run"]["flags"]["seed"] == 42


def test_outputs_written(recommended):
    attr = json.loads((recommended / "attribution.json").read_text())
    assert attr["schema_version"] == "attribution/v1" and "provenance" in attr
    report = json.loads((recommended / "report.json").read_text())
    for name in report["selected"]:
        with open(recommended / f"ranges_{name}.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["value", "phi", "smoothed_phi"] and len(rows) > 20


def test_top_one(bundle, tmp_path):
    assert _recommend(bundle, tmp_path, "--top-m", "1") == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert len(report["selected"]) == 1 and report["selected"][0] == report["ranking"][0][0]


def test_missing_target_column(bundle, tmp_path, capsys):
    csv_path = tmp_path / "data.csv"
    csv_path.write_text("a,b,y\n1,2,0\n3,4,1\n")
    code = main(["recommend", "--kb", str(bundle), "--algorithm", "synthetic", "--dataset", str(csv_path),
                 "--out", str(tmp_path / "o")])
    assert code == 2
    assert "[metafeatures]" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv,stage",
    [
        (["--kb", "/nonexistent"], "kb"),
        (["--query-id", "zz"], "retrieval"),
    ],
)
def test_error_stages(bundle, tmp_path, capsys, argv, stage):
    base = {"--kb": str(bundle), "--algorithm": "synthetic", "--query-id": "d01", "--out": str(tmp_path)}
    for flag, value in zip(argv[::2], argv[1::2]):
        base[flag] = value
    code = main(["recommend", *[x for kv in base.items() for x in kv]])
    assert code == 2 and f"[{stage}]" in capsys.readouterr().err


def test_invalid_flag_value(bundle, tmp_path):
    with pytest.raises(SystemExit) as info:
        _recommend(bundle, tmp_path, "--tau", "1.5")
    assert info.value.code == 2


def test_compare_constant_objective(bundle, tmp_path):
    code = main(["compare", "--kb", str(bundle), "--algorithm", "synthetic", "--query-id", "d01", "--n-trees", "40",
                 "--objective", "test_cli:constant_objective", "--budget", "8", "--out", str(tmp_path)])
    assert code == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["speedup_ratio"] == 1.0
    for mode in ("vanilla", "guided"):
        assert all(v == 0.5 for v in summary["modes"][mode]["best_so_far"][0])


def test_compare_budget_rows(bundle, tmp_path):
    code = main(["compare", "--kb", str(bundle), "--algorithm", "synthetic", "--query-id", "d01", "--exclude-query",
                 "--k-neighbors", "4", "--n-trees", "40", "--surface", str(bundle / "surfaces.json"),
                 "--out", str(tmp_path)])
    assert code == 0
    for name in ("trace_vanilla.csv", "trace_guided.csv"):
        with open(tmp_path / name) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 30 and [int(r["iteration"]) for r in rows] == list(range(1, 31))
        best = np.array([float(r["best_so_far"]) for r in rows])
        assert np.all(np.diff(best) >= 0)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["optimum_source"] == "analytic"


def test_compare_needs_an_objective(bundle, tmp_path, capsys):
    code = main(["compare", "--kb", str(bundle), "--algorithm", "synthetic", "--query-id", "d01", "--n-trees", "10",
                 "--out", str(tmp_path)])
    assert code == 2 and "[optimizer]" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "metashap.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "recommend" in proc.stdout


def _toy_csv(path):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(120, 3))
    y = (X[:, 0] > 0).astype(int)
    with open(path, "w") as fh:
        fh.write("f0,f1,color,label\n")
        for row, lab in zip(X, y):
            fh.write(f"{row[0]:.6f},{row[1]:.6f},{'red' if row[2] > 0 else 'blue'},{lab}\n")


def test_metafeatures_and_ingest(bundle, tmp_path):
    import shutil

    from metashap.kb import load_kb

    kb_dir = tmp_path / "kb"
    shutil.copytree(bundle, kb_dir)
    data = tmp_path / "toy.csv"
    _toy_csv(data)
    reg = tmp_path / "toy_meta.csv"
    assert main(["metafeatures", "--dataset", str(data), "--target-col", "label", "--categorical", "color",
                 "--out", str(reg)]) == 0
    assert "toy" in reg.read_text()

    records = tmp_path / "new.jsonl"
    cfg = {f"x{i}": v for i, v in enumerate([0.5, 0.1, 32, 0.5, 0.1, 32, 0.5, 0.1])}
    records.write_text(json.dumps({"dataset_id": "toy", "algorithm_id": "synthetic", "config": cfg,
                                   "performance": 0.7}) + "\n")
    code = main(["ingest", "--kb", str(kb_dir), "--dataset", str(data), "--target-col", "label",
                 "--categorical", "color", "--records", str(records)])
    assert code == 0
    kb = load_kb(kb_dir)
    assert "toy" in kb.meta_registry and kb.size == 4001


def test_ingest_rejects_malformed_records(bundle, tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"dataset_id": "d00"}\n')
    assert main(["ingest", "--kb", str(bundle), "--records", str(bad)]) == 2
    assert "[ingest]" in capsys.readouterr().err
