import io
import json
import subprocess
import sys

import pytest

from attrcons.cli import main
from attrcons.consolidate import ConsolidationConfig, consolidate_dataset, write_consolidation_csv
from attrcons.inconsistency import dataset_im, write_im_csv
from attrcons.model import AttributeSchema, load_annotations, load_predictions


def run(*argv):
    return main([str(a) for a in argv])


def test_im_matches_library(workspace, tmp_path, capsys):
    out = tmp_path / "im.csv"
    assert run("im", "--predictions", workspace / "predictions.csv", "--out", out) == 0
    data = load_predictions(workspace / "predictions.csv", AttributeSchema.celeba())
    buf = io.StringIO()
    write_im_csv(dataset_im(data), buf)
    assert out.read_text() == buf.getvalue()
    # stdout (not a terminal) gets the same CSV
    assert run("im", "--predictions", workspace / "predictions.csv") == 0
    assert capsys.readouterr().out == buf.getvalue()


def test_jsonl_and_csv_inputs_agree(workspace, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("im", "--predictions", workspace / "predictions.csv", "--out", a) == 0
    assert run("im", "--predictions", workspace / "predictions.jsonl", "--out", b) == 0
    assert a.read_text() == b.read_text()


def test_im_json(workspace, tmp_path, monkeypatch):
    out = tmp_path / "im.json"
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    assert run("im", "--predictions", workspace / "predictions.csv", "--format", "json",
               "--out", out, "--schema", workspace / "schema.json") == 0
    doc = json.loads(out.read_text())
    assert doc["metadata"] == {"dataset_id": "predictions.csv", "mode": "predictions",
                               "timestamp": "1970-01-01T00:00:00+00:00"}
    assert len(doc["per_attribute"]) == 40


def test_seeded_json_has_null_timestamp(workspace, tmp_path, monkeypatch):
    monkeypatch.delenv("SOURCE_DATE_EPOCH", raising=False)
    out = tmp_path / "audit.json"
    assert run("audit", "--annotations", workspace / "annotations.csv", "--format", "json",
               "--seed", 1, "--out", out) == 0
    doc = json.loads(out.read_text())
    assert doc["metadata"]["timestamp"] is None and doc["metadata"]["mode"] == "labels"


def test_quality(workspace, tmp_path):
    out = tmp_path / "q.csv"
    assert run("quality", "--predictions", workspace / "predictions.jsonl",
               "--images", workspace / "images", "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("image_id,subject_id,brightness,")
    assert len(lines) == 1 + 12 * 5
    ranks = [int(line.rsplit(",", 1)[1]) for line in lines[1:6]]
    assert ranks == [1, 2, 3, 4, 5]
    out_json = tmp_path / "q.json"
    assert run("quality", "--predictions", workspace / "predictions.jsonl",
               "--images", workspace / "images", "--format", "json", "--out", out_json) == 0
    doc = json.loads(out_json.read_text())
    assert all(d["error"] is None and 0 <= d["score"] <= 8.4 for d in doc)


def test_consolidate_writes_sidecar(workspace, tmp_path):
    out = tmp_path / "cons.csv"
    assert run("consolidate", "--predictions", workspace / "predictions.csv",
               "--top-k", 3, "--out", out) == 0
    data = load_predictions(workspace / "predictions.csv", AttributeSchema.celeba())
    buf = io.StringIO()
    write_consolidation_csv(consolidate_dataset(data, ConsolidationConfig("confidence", 3)),
                            data.schema, buf)
    assert out.read_text() == buf.getvalue()
    side = tmp_path / "cons.provenance.json"
    doc = json.loads(side.read_text())
    assert doc["strategy"] == "confidence" and doc["top_k"] == 3
    first = doc["subjects"][0]
    male = first["attributes"]["Male"]
    assert len(male["contributors"]) == 3 and sum(male["votes"]) == 3


def test_consolidate_quality_needs_images(workspace, tmp_path, capsys):
    out = tmp_path / "cons.csv"
    assert run("consolidate", "--predictions", workspace / "predictions.csv",
               "--strategy", "quality", "--out", out) == 2
    assert "quality" in capsys.readouterr().err
    assert not out.exists()
    assert run("consolidate", "--predictions", workspace / "predictions.jsonl",
               "--strategy", "quality", "--images", workspace / "images", "--out", out) == 0


def test_correct_and_dry_run(workspace, tmp_path):
    cons = tmp_path / "cons.csv"
    assert run("consolidate", "--predictions", workspace / "predictions.csv", "--out", cons) == 0
    before = (workspace / "annotations.csv").read_bytes()

    log = tmp_path / "dry.csv"
    assert run("correct", "--annotations", workspace / "annotations.csv",
               "--consolidated", cons, "--dry-run", "--out", log) == 0
    assert (workspace / "annotations.csv").read_bytes() == before
    assert log.read_text().startswith("image_id,subject_id,attribute,old,new\n")
    n_changes = len(log.read_text().splitlines()) - 1
    assert n_changes > 0

    fixed = tmp_path / "fixed.csv"
    assert run("correct", "--annotations", workspace / "annotations.csv",
               "--consolidated", cons, "--out", fixed) == 0
    assert (tmp_path / "fixed.changes.csv").read_text() == log.read_text()
    schema = AttributeSchema.celeba()
    fixed_data = load_annotations(fixed, schema)
    stable = [j for j, s in enumerate(schema.stable) if s]
    for g in fixed_data.groups:
        assert (g.labels[:, stable] == g.labels[0, stable]).all()

    inline = tmp_path / "inline.csv"
    assert run("correct", "--annotations", workspace / "annotations.csv",
               "--predictions", workspace / "predictions.csv", "--out", inline) == 0
    assert inline.read_text() == fixed.read_text()


def test_correct_needs_a_source(workspace, capsys):
    assert run("correct", "--annotations", workspace / "annotations.csv") == 1
    assert "--consolidated" in capsys.readouterr().err


def test_synth(workspace, tmp_path):
    out = tmp_path / "synth.csv"
    assert run("synth", "--config", workspace / "experiment.json", "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# rng: ")
    assert len(lines) == 2 + 2 * 2 * 2
    seeded = tmp_path / "seeded.json"
    assert run("synth", "--config", workspace / "experiment.json", "--seed", 5,
               "--format", "json", "--out", seeded) == 0
    doc = json.loads(seeded.read_text())
    assert {r["seed"] for r in doc["rows"]} == {5}


def test_unknown_flag_is_usage_error(capsys):
    assert run("im", "--bogus") == 1
    err = capsys.readouterr().err
    assert "usage:" in err
    assert run() == 1
    assert run("im", "--predictions", "x.csv", "--jobs", 0) == 1


def test_bad_data_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("image_id,subject_id,a_p1,a_p0\ni1,A,0.9,0.9\n")
    schema = tmp_path / "s.json"
    schema.write_text('[{"name": "a"}]')
    assert run("im", "--predictions", bad, "--schema", schema) == 2
    err = capsys.readouterr().err
    assert "line 2" in err and "a_p1" in err
    assert run("im", "--predictions", tmp_path / "missing.csv") == 2


def test_refuses_to_overwrite(workspace, tmp_path, capsys):
    out = tmp_path / "im.csv"
    out.write_text("keep me")
    assert run("im", "--predictions", workspace / "predictions.csv", "--out", out) == 1
    assert out.read_text() == "keep me"
    assert "--force" in capsys.readouterr().err
    assert run("im", "--predictions", workspace / "predictions.csv", "--out", out, "--force") == 0
    assert out.read_text().startswith("subject_id,")
    assert [p.name for p in tmp_path.iterdir()] == ["im.csv"]


def test_log_level_from_environment(workspace, tmp_path):
    env_cmd = [sys.executable, "-m", "attrcons", "im", "--predictions",
               str(workspace / "predictions.csv"), "--out", str(tmp_path / "x.csv")]
    quiet = subprocess.run(env_cmd, capture_output=True, text=True)
    loud = subprocess.run(env_cmd + ["--force"], capture_output=True, text=True,
                          env={**__import__("os").environ, "ATTRCONS_LOG": "info"})
    assert quiet.returncode == loud.returncode == 0
    assert quiet.stderr == ""
    assert "INFO attrcons" in loud.stderr


@pytest.mark.parametrize("argv", [["--version"], ["im", "--help"]])
def test_help_and_version(argv, capsys):
    assert run(*argv) == 0
    assert capsys.readouterr().out
