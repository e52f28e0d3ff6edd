"""Synthetic subjects with known attributes, and a strategy comparison harness.

Each subject gets a random ground-truth attribute vector.  Each of its
images reports every attribute flipped with probability ``flip_prob``;
the reported confidence ``|p_pos - p_neg|`` is drawn from one Beta
distribution for correct labels and another for wrong ones, so confidence
carries information about correctness exactly when the two differ.

Every image also gets a degradation level.  The level picks a procedurally
blurred and darkened PGM-style fixture whose quality score (computed by
:mod:`attrcons.quality`) is cached on the record, and ``quality_link``
raises the flip probability of degraded images towards a coin toss.

Randomness comes from numpy's PCG64 with one ``SeedSequence`` child per
subject, so results depend on the seed only, never on the thread count.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import ndimage

from .consolidate import ConsolidationConfig, SubjectAttributes, STRATEGIES, consolidate_dataset
from .errors import ConfigError
from .model import AttributeSchema, Dataset, ImageRecord, SubjectGroup, _text
from .quality import GrayImage, compute_features, quality_score

RNG_ALGORITHM = "numpy.random.PCG64 (SeedSequence child per subject)"
DEGRADATION_LEVELS = 64
FIXTURE_SIZE = 32
_MIN_CONF = 1e-12


@dataclass(frozen=True)
class NoiseModel:
    """Image-level label noise and confidence model.

    ``conf_correct`` and ``conf_wrong`` are Beta ``(a, b)`` parameters; the
    defaults have means 0.8 and 0.2.
    """

    flip_prob: float | Sequence[float] = 0.2
    conf_correct: tuple[float, float] = (8.0, 2.0)
    conf_wrong: tuple[float, float] = (2.0, 8.0)
    quality_link: float = 0.0

    def __post_init__(self):
        fp = np.atleast_1d(np.asarray(self.flip_prob, dtype=float))
        if fp.ndim != 1 or not ((fp >= 0) & (fp < 1)).all():
            raise ConfigError(f"flip_prob must lie in [0, 1), got {self.flip_prob!r}")
        for name in ("conf_correct", "conf_wrong"):
            ab = getattr(self, name)
            if len(ab) != 2 or not all(math.isfinite(v) and v > 0 for v in ab):
                raise ConfigError(f"{name} must be two positive Beta parameters, got {ab!r}")
        if not 0.0 <= self.quality_link <= 1.0:
            raise ConfigError(f"quality_link must lie in [0, 1], got {self.quality_link!r}")

    def flip_vector(self, n_attr: int) -> np.ndarray:
        fp = np.atleast_1d(np.asarray(self.flip_prob, dtype=float))
        if fp.size == 1:
            return np.full(n_attr, fp[0])
        if fp.size != n_attr:
            raise ConfigError(f"flip_prob has {fp.size} entries, schema has {n_attr}")
        return fp


@dataclass(frozen=True, eq=False)
class TruthTable:
    subject_ids: tuple[str, ...]
    labels: np.ndarray              # (n_subjects, n_attributes)
    degradation: tuple[np.ndarray, ...]  # per subject, one level in [0, 1] per image

    def of(self, subject_id: str) -> np.ndarray:
        return self.labels[self.subject_ids.index(subject_id)]


def render_fixture(level: float, size: int = FIXTURE_SIZE) -> GrayImage:
    """A left-right symmetric textured test card, blurred and darkened by ``level``."""
    y, x = np.mgrid[0:size, 0:size].astype(float)
    xs = np.abs(x - (size - 1) / 2.0)
    card = 0.5 + 0.3 * np.cos(2 * np.pi * xs / 6.0) * np.cos(2 * np.pi * y / 6.0)
    face = ((xs / (0.35 * size)) ** 2 + ((y - size / 2.0) / (0.45 * size)) ** 2) < 1.0
    card = np.where(face, card + 0.1, card - 0.1)
    if level > 0:
        card = ndimage.gaussian_filter(card, sigma=2.5 * level, mode="reflect")
    card = card * (1.0 - 0.7 * level)
    return GrayImage(np.clip(card, 0.0, 1.0))


@lru_cache(maxsize=None)
def fixture_score(level_index: int) -> float:
    level = level_index / (DEGRADATION_LEVELS - 1)
    return quality_score(compute_features(render_fixture(level)))


def _subject(seed_seq, subject_id, n_images, flip, noise, n_attr):
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    truth = rng.integers(0, 2, n_attr, dtype=np.int8)
    level_idx = rng.integers(0, DEGRADATION_LEVELS, n_images)
    level = level_idx / (DEGRADATION_LEVELS - 1)
    flip_eff = flip[None, :] + noise.quality_link * level[:, None] * np.clip(0.5 - flip[None, :], 0, None)
    flips = rng.random((n_images, n_attr)) < flip_eff
    labels = np.where(flips, 1 - truth, truth)
    conf = np.where(
        flips,
        rng.beta(*noise.conf_wrong, size=(n_images, n_attr)),
        rng.beta(*noise.conf_correct, size=(n_images, n_attr)),
    )
    conf = np.clip(conf, _MIN_CONF, 1.0)
    p_pos = np.where(labels == 1, (1.0 + conf) / 2.0, (1.0 - conf) / 2.0)
    images = tuple(
        ImageRecord.from_probabilities(
            f"{subject_id}_{i:03d}", subject_id, p_pos[i],
            quality=fixture_score(int(level_idx[i])),
        )
        for i in range(n_images)
    )
    return truth, level, SubjectGroup(subject_id, images)


def generate(n_subjects: int, images_per_subject: int, noise: NoiseModel = NoiseModel(),
             seed: int = 0, schema: AttributeSchema | None = None,
             jobs: int = 1) -> tuple[TruthTable, Dataset]:
    """Draw a synthetic dataset and its ground truth.

    Identical arguments give identical output, whatever ``jobs`` is.
    """
    if isinstance(n_subjects, bool) or not isinstance(n_subjects, (int, np.integer)) or n_subjects < 1:
        raise ConfigError(f"n_subjects must be a positive integer, got {n_subjects!r}")
    if isinstance(images_per_subject, bool) or not isinstance(images_per_subject, (int, np.integer)) \
            or images_per_subject < 1:
        raise ConfigError(f"images_per_subject must be a positive integer, got {images_per_subject!r}")
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    schema = schema or AttributeSchema.celeba()
    n_attr = len(schema)
    flip = noise.flip_vector(n_attr)
    children = np.random.SeedSequence(int(seed)).spawn(n_subjects)
    width = max(5, len(str(n_subjects - 1)))
    ids = [f"s{i:0{width}d}" for i in range(n_subjects)]

    def one(i):
        return _subject(children[i], ids[i], images_per_subject, flip, noise, n_attr)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            parts = list(pool.map(one, range(n_subjects)))
    else:
        parts = [one(i) for i in range(n_subjects)]
    truth = TruthTable(
        subject_ids=tuple(ids),
        labels=np.stack([p[0] for p in parts]),
        degradation=tuple(p[1] for p in parts),
    )
    return truth, Dataset(schema, tuple(p[2] for p in parts))


def evaluate(consolidated: Sequence[SubjectAttributes], truth: TruthTable) -> float:
    """Fraction of (subject, attribute) pairs where the consolidated label is right."""
    got = {c.subject_id: c for c in consolidated}
    if set(got) != set(truth.subject_ids) or len(got) != len(consolidated):
        raise ConfigError("consolidated subjects do not match the truth table")
    pred = np.stack([np.asarray(got[s].labels) for s in truth.subject_ids])
    if pred.shape != truth.labels.shape:
        raise ConfigError("consolidated label vectors have the wrong length")
    return float((pred == truth.labels).mean())


def baseline_accuracy(dataset: Dataset, truth: TruthTable) -> float:
    """Mean image-level accuracy with no aggregation at all."""
    hits = total = 0
    for g in dataset.groups:
        hits += int((g.labels == truth.of(g.subject_id)[None, :]).sum())
        total += g.labels.size
    return hits / total


@dataclass(frozen=True)
class ExperimentConfig:
    n_subjects: int = 100
    images_per_subject: int = 10
    noise: NoiseModel = field(default_factory=NoiseModel)
    strategies: tuple[str, ...] = ("confidence", "quality")
    ks: tuple[int, ...] = (1, 3, 5)
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}")
        if not self.strategies or not self.ks or not self.seeds:
            raise ConfigError("strategies, ks and seeds must be non-empty")
        for k in self.ks:
            if isinstance(k, bool) or not isinstance(k, int) or k < 1:
                raise ConfigError(f"k must be a positive integer, got {k!r}")

    KEYS = ("n_subjects", "images_per_subject", "flip_prob", "conf_correct",
            "conf_wrong", "quality_link", "strategies", "ks", "seeds")

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - set(cls.KEYS)
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        noise_kw = {k: data[k] for k in ("flip_prob", "quality_link") if k in data}
        for k in ("conf_correct", "conf_wrong"):
            if k in data:
                noise_kw[k] = tuple(data[k])
        kw = {k: data[k] for k in ("n_subjects", "images_per_subject") if k in data}
        for k in ("strategies", "ks", "seeds"):
            if k in data:
                v = data[k]
                kw[k] = tuple(v) if isinstance(v, list) else (v,)
        try:
            return cls(noise=NoiseModel(**noise_kw), **kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, source) -> "ExperimentConfig":
        with _text(source) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid experiment JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("experiment config must be a JSON object")
        return cls.from_mapping(data)


@dataclass(frozen=True)
class ExperimentRow:
    strategy: str
    k: int
    seed: int
    accuracy: float
    baseline_accuracy: float


@dataclass(frozen=True)
class ExperimentReport:
    rows: tuple[ExperimentRow, ...]
    rng: str = RNG_ALGORITHM

    def mean_accuracy(self, strategy: str, k: int) -> float:
        vals = [r.accuracy for r in self.rows if r.strategy == strategy and r.k == k]
        if not vals:
            raise KeyError((strategy, k))
        return float(np.mean(vals))

    def mean_baseline(self) -> float:
        # one baseline per seed; rows of the same seed repeat it
        per_seed = {r.seed: r.baseline_accuracy for r in self.rows}
        return float(np.mean(list(per_seed.values())))

    def summary(self) -> list[tuple[str, int, float]]:
        seen = dict.fromkeys((r.strategy, r.k) for r in self.rows)
        return [(s, k, self.mean_accuracy(s, k)) for s, k in seen]


def _run_seed(config: ExperimentConfig, seed: int) -> list[ExperimentRow]:
    truth, data = generate(config.n_subjects, config.images_per_subject, config.noise, seed)
    base = baseline_accuracy(data, truth)
    rows = []
    for strategy in config.strategies:
        for k in config.ks:
            result = consolidate_dataset(data, ConsolidationConfig(strategy, k))
            rows.append(ExperimentRow(strategy, k, seed, evaluate(result, truth), base))
    return rows


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    """Evaluate every (strategy, k) pair on one synthetic dataset per seed."""
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            chunks = list(pool.map(lambda s: _run_seed(config, s), config.seeds))
    else:
        chunks = [_run_seed(config, s) for s in config.seeds]
    return ExperimentReport(tuple(r for chunk in chunks for r in chunk))


def write_report_csv(report: ExperimentReport, stream) -> None:
    """Report CSV preceded by a ``#`` comment line naming the random generator."""
    with _text(stream, "w") as fh:
        fh.write(f"# rng: {report.rng}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "k", "seed", "accuracy", "baseline_accuracy"])
        for r in report.rows:
            w.writerow([r.strategy, r.k, r.seed, repr(r.accuracy), repr(r.baseline_accuracy)])
