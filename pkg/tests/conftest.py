import json

import numpy as np
import pytest

from attrcons.model import (
    AttributeSchema, Dataset, ImageRecord, SubjectGroup, write_annotations, write_predictions,
)
from attrcons.quality import write_pgm
from attrcons.synth import NoiseModel, generate, render_fixture


def make_group(subject_id, labels=None, p_pos=None, quality=None):
    """Group from a label matrix (degenerate probabilities) or a p_pos matrix."""
    if p_pos is None:
        p_pos = np.asarray(labels, dtype=float)
    p_pos = np.atleast_2d(np.asarray(p_pos, dtype=float))
    recs = []
    for i, row in enumerate(p_pos):
        q = None if quality is None else quality[i]
        recs.append(ImageRecord.from_probabilities(f"{subject_id}_{i}", subject_id, row, quality=q))
    return SubjectGroup(subject_id, tuple(recs))


def make_dataset(label_mats, names=None):
    n_attr = np.atleast_2d(label_mats[0]).shape[1]
    schema = AttributeSchema(tuple(names or (f"a{j}" for j in range(n_attr))))
    groups = tuple(make_group(f"s{i}", m) for i, m in enumerate(label_mats))
    return Dataset(schema, groups)


def _landmarks(size):
    c = (size - 1) / 2.0
    return {
        "left_eye": {"outer": [c - 10, 10], "inner": [c - 4, 10], "top": [c - 7, 9], "bottom": [c - 7, 11]},
        "right_eye": {"outer": [c + 10, 10], "inner": [c + 4, 10], "top": [c + 7, 9], "bottom": [c + 7, 11]},
        "mouth": {"left": [c - 5, 24], "right": [c + 5, 24], "top": [c, 23], "bottom": [c, 25]},
        "nose_tip": [c, 17],
    }


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    """Small on-disk project: predictions (csv + jsonl), annotations, schema, PGM images."""
    root = tmp_path_factory.mktemp("ws")
    schema = AttributeSchema.celeba()
    truth, data = generate(12, 5, NoiseModel(flip_prob=0.25), seed=7, schema=schema)
    images = root / "images"
    images.mkdir()
    lines = []
    for g, levels in zip(data.groups, truth.degradation):
        for rec, level in zip(g.images, levels):
            write_pgm(render_fixture(float(level)), images / f"{rec.image_id}.pgm")
            lines.append(json.dumps({
                "image_id": rec.image_id, "subject_id": rec.subject_id,
                "source": f"{rec.image_id}.pgm", "p_pos": rec.p_pos.tolist(),
                "landmarks": _landmarks(32),
            }))
    (root / "predictions.jsonl").write_text("\n".join(lines) + "\n")
    with open(root / "predictions.csv", "w", newline="") as fh:
        write_predictions(data, fh)
    with open(root / "annotations.csv", "w", newline="") as fh:
        write_annotations(data, fh)
    (root / "schema.json").write_text(json.dumps(schema.to_json()))
    (root / "experiment.json").write_text(json.dumps({
        "n_subjects": 20, "images_per_subject": 6, "flip_prob": 0.2,
        "strategies": ["confidence", "quality"], "ks": [1, 3], "seeds": [3, 4],
    }))
    return root


# --- acceptance reporting ---------------------------------------------------

_acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    number, text = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _acceptance[number] = (text, rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        text, outcome = _acceptance[number]
        flag = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{flag}] criterion {number}: {text}")
