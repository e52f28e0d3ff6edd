import io

import numpy as np
import pytest

from attrcons.consolidate import ConsolidationConfig, SubjectAttributes, consolidate_dataset
from attrcons.errors import ConfigError
from attrcons.inconsistency import dataset_im
from attrcons.model import AttributeSchema
from attrcons.synth import (
    DEGRADATION_LEVELS, RNG_ALGORITHM, ExperimentConfig, NoiseModel, TruthTable,
    baseline_accuracy, evaluate, fixture_score, generate, render_fixture, run_experiment,
    write_report_csv,
)

from oracles import expected_im_binomial

SMALL = AttributeSchema(tuple(f"a{j}" for j in range(8)))


def first_image_accuracy(dataset, truth):
    hits = [(g.labels[0] == truth.of(g.subject_id)).mean() for g in dataset.groups]
    return float(np.mean(hits))


def test_zero_noise():
    truth, data = generate(20, 6, NoiseModel(flip_prob=0.0), seed=1)
    for g in data.groups:
        assert (g.labels == truth.of(g.subject_id)).all()
    assert (dataset_im(data).im == 0).all()


def test_deterministic_and_jobs_independent():
    a = generate(15, 4, seed=9)
    b = generate(15, 4, seed=9)
    c = generate(15, 4, seed=9, jobs=4)
    for other in (b, c):
        assert np.array_equal(a[0].labels, other[0].labels)
        assert a[1] == other[1]
    d = generate(15, 4, seed=10)
    assert not np.array_equal(a[1].groups[0].p_pos, d[1].groups[0].p_pos)


def test_probability_pairs():
    truth, data = generate(200, 5, NoiseModel(flip_prob=0.3), seed=2, schema=SMALL)
    conf_right, conf_wrong = [], []
    for g in data.groups:
        assert np.allclose(g.p_pos + g.p_neg, 1.0, atol=1e-12)
        wrong = g.labels != truth.of(g.subject_id)
        conf_right.extend(g.confidences[~wrong])
        conf_wrong.extend(g.confidences[wrong])
    # Beta(8, 2) and Beta(2, 8) means
    assert np.mean(conf_right) == pytest.approx(0.8, abs=0.01)
    assert np.mean(conf_wrong) == pytest.approx(0.2, abs=0.01)


def test_flip_rate_calibration():
    p = 0.13
    truth, data = generate(2500, 10, NoiseModel(flip_prob=p), seed=4)
    n = sum(g.labels.size for g in data.groups)
    assert n >= 10 ** 5
    flips = sum(int((g.labels != truth.of(g.subject_id)).sum()) for g in data.groups)
    se = np.sqrt(p * (1 - p) / n)
    assert abs(flips / n - p) < 3 * se


def test_coin_flip_noise_im_matches_binomial():
    for n_images in (4, 16, 40):
        _, data = generate(400, n_images, NoiseModel(flip_prob=0.5), seed=n_images, schema=SMALL)
        mean = dataset_im(data).mean_im.mean()
        expected = expected_im_binomial(n_images, 0.5)
        # std of one subject's IM is below 50; 400 * 8 draws
        assert mean == pytest.approx(expected, abs=3 * 50 / np.sqrt(3200))
    assert expected_im_binomial(400, 0.5) > 95


def test_per_attribute_flip():
    flip = [0.0] * 7 + [0.4]
    truth, data = generate(100, 6, NoiseModel(flip_prob=flip), seed=3, schema=SMALL)
    im = dataset_im(data).mean_im
    assert (im[:7] == 0).all() and im[7] > 20
    with pytest.raises(ConfigError):
        generate(3, 3, NoiseModel(flip_prob=[0.1, 0.2]), schema=SMALL)


@pytest.mark.parametrize("kwargs", [
    {"flip_prob": 1.0}, {"flip_prob": -0.1}, {"conf_correct": (0, 1)}, {"quality_link": 2.0},
])
def test_noise_validation(kwargs):
    with pytest.raises(ConfigError):
        NoiseModel(**kwargs)


@pytest.mark.parametrize("args", [(0, 3), (3, 0), (2, 2, NoiseModel(), -1)])
def test_generate_validation(args):
    with pytest.raises(ConfigError):
        generate(*args)


def test_evaluate():
    truth = TruthTable(("a", "b"), np.array([[1, 0], [0, 0]]), ())
    right = [SubjectAttributes("a", np.array([1, 0])), SubjectAttributes("b", np.array([0, 0]))]
    wrong = [SubjectAttributes("a", np.array([0, 1])), SubjectAttributes("b", np.array([1, 1]))]
    assert evaluate(right, truth) == 1.0
    assert evaluate(wrong, truth) == 0.0
    assert evaluate(right[::-1], truth) == 1.0
    with pytest.raises(ConfigError):
        evaluate(right[:1], truth)


def test_fixture_quality_falls_with_degradation():
    scores = [fixture_score(i) for i in range(DEGRADATION_LEVELS)]
    assert all(a > b for a, b in zip(scores, scores[1:]))
    card = render_fixture(0.0)
    assert np.array_equal(card.pixels, card.pixels[:, ::-1])


def test_selection_beats_baseline_over_seeds():
    gains = []
    for seed in range(30):
        truth, data = generate(30, 10, NoiseModel(flip_prob=0.2), seed=seed, schema=SMALL)
        sel = evaluate(consolidate_dataset(data, ConsolidationConfig("confidence", 1)), truth)
        gains.append(sel - baseline_accuracy(data, truth))
    assert np.mean(gains) > 0 and min(gains) > 0


def test_quality_link_makes_quality_informative():
    noise = NoiseModel(flip_prob=0.1, quality_link=1.0)
    q, first = [], []
    for seed in range(10):
        truth, data = generate(40, 10, noise, seed=seed, schema=SMALL)
        q.append(evaluate(consolidate_dataset(data, ConsolidationConfig("quality", 1)), truth))
        first.append(first_image_accuracy(data, truth))
    assert np.mean(q) > np.mean(first) + 0.05


def test_run_experiment_zero_noise_and_shape():
    cfg = ExperimentConfig(10, 5, NoiseModel(flip_prob=0.0), ("confidence", "quality"), (1, 3), (0, 1))
    rep = run_experiment(cfg)
    assert len(rep.rows) == 2 * 2 * 2
    assert all(r.accuracy == 1.0 and r.baseline_accuracy == 1.0 for r in rep.rows)
    assert [(r.seed, r.strategy, r.k) for r in rep.rows[:4]] == [
        (0, "confidence", 1), (0, "confidence", 3), (0, "quality", 1), (0, "quality", 3)]
    assert rep.summary()[0] == ("confidence", 1, 1.0)
    assert run_experiment(cfg, jobs=3) == rep


def test_report_csv():
    cfg = ExperimentConfig(5, 3, NoiseModel(flip_prob=0.2), ("confidence",), (1,), (7,))
    buf = io.StringIO()
    write_report_csv(run_experiment(cfg), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == f"# rng: {RNG_ALGORITHM}"
    assert lines[1] == "strategy,k,seed,accuracy,baseline_accuracy"
    assert lines[2].startswith("confidence,1,7,")


def test_config_json():
    cfg = ExperimentConfig.from_json(io.StringIO(
        '{"n_subjects": 4, "images_per_subject": 3, "flip_prob": 0.1, "conf_correct": [5, 1],'
        ' "strategies": ["quality"], "ks": [1, 5], "seeds": [1, 2]}'))
    assert cfg.noise.conf_correct == (5, 1) and cfg.ks == (1, 5) and cfg.seeds == (1, 2)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(io.StringIO('{"subjects": 4}'))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(io.StringIO('{"strategies": ["vote"]}'))
