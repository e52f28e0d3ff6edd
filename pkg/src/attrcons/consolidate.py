"""Subject-level attributes from many per-image predictions.

For every attribute the images of a group are ranked by a criterion, the
top ``k`` are kept and their binary labels majority-voted.  Two criteria
are supported:

``confidence``
    ``|p_pos - p_neg|`` of the attribute's own prediction, so the ranking
    differs from one attribute to the next.
``quality``
    the image quality score, one ranking shared by all attributes.

With ``k = 1`` this is plain argmax selection.  Ties in the ranking go to
the earlier image; tied votes go to the single most confident voter, and
to label 1 if the top confidence is itself shared by both labels.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import AttrConsError, ConfigError, MissingQualityError, ParseError
from .model import (
    AttributePrediction, AttributeSchema, Dataset, ImageRecord, SubjectGroup, _text,
)
from .quality import QualityWeights

log = logging.getLogger(__name__)

STRATEGIES = ("confidence", "quality")


@dataclass(frozen=True)
class ConsolidationConfig:
    strategy: str = "confidence"
    top_k: int = 1
    weights: QualityWeights = field(default_factory=QualityWeights)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if isinstance(self.top_k, bool) or not isinstance(self.top_k, (int, np.integer)) \
                or self.top_k < 1:
            raise ConfigError(f"top_k must be a positive integer, got {self.top_k!r}")
        if self.top_k % 2 == 0:
            log.debug("even top_k=%d: tied votes fall back to the most confident voter", self.top_k)

    def effective_k(self, n_images: int) -> int:
        return min(self.top_k, n_images)


@dataclass(frozen=True)
class Provenance:
    strategy: str
    contributors: tuple[str, ...]
    votes: tuple[int, int]  # (positive, negative)


@dataclass(frozen=True, eq=False)
class SubjectAttributes:
    """Consolidated labels of one subject.

    ``contributors`` is a ``(k, n_attributes)`` array of image positions in
    the group (best first); it is ``None`` for results read back from a
    consolidation CSV, which carries labels only.
    """

    subject_id: str
    labels: np.ndarray
    strategy: str | None = None
    image_ids: tuple[str, ...] = ()
    contributors: np.ndarray | None = None
    votes: np.ndarray | None = None  # (n_attributes, 2): positive, negative

    @property
    def k(self) -> int | None:
        return None if self.contributors is None else self.contributors.shape[0]

    def provenance(self, attr_index: int) -> Provenance | None:
        if self.contributors is None:
            return None
        ids = tuple(self.image_ids[i] for i in self.contributors[:, attr_index])
        pos, neg = self.votes[attr_index]
        return Provenance(self.strategy, ids, (int(pos), int(neg)))


def confidence(pred: AttributePrediction) -> float:
    return abs(pred.p_pos - pred.p_neg)


def select_by_confidence(group: SubjectGroup, attr_index: int) -> int:
    """Position of the most confident image for one attribute (earliest on ties)."""
    return int(np.argmax(group.confidences[:, attr_index]))


def group_quality(group: SubjectGroup, quality_scores: Mapping[str, float] | None = None) -> np.ndarray:
    """Quality scores of a group in input order.

    Looks up ``quality_scores`` by image id first, then the score cached on
    the record.  Images scored NaN (failed decode) rank last.
    """
    out = np.empty(len(group))
    for i, rec in enumerate(group.images):
        q = None if quality_scores is None else quality_scores.get(rec.image_id)
        if q is None:
            q = rec.quality
        if q is None:
            raise MissingQualityError(
                f"no quality score for image {rec.image_id!r}; run quality scoring first"
            )
        out[i] = q
    return out


def _descending(values: np.ndarray) -> np.ndarray:
    # stable sort keeps input order among equal values; NaN sorts last
    key = np.where(np.isnan(values), np.inf, -values)
    return np.argsort(key, axis=0, kind="stable")


def rank_for_attribute(group: SubjectGroup, attr_index: int,
                       config: ConsolidationConfig = ConsolidationConfig(),
                       quality_scores: Mapping[str, float] | None = None) -> list[int]:
    """Top ``k`` image positions for one attribute, best first."""
    k = config.effective_k(len(group))
    if config.strategy == "confidence":
        order = _descending(group.confidences[:, attr_index])
    else:
        order = _descending(group_quality(group, quality_scores))
    return [int(i) for i in order[:k]]


def majority_vote(labels: Sequence[int], confidences: Sequence[float] | None = None) -> int:
    """Modal label of the voters.

    A tie goes to the label of the most confident voter; if the highest
    confidence is shared by voters of both labels (or no confidences are
    given), the result is 1.
    """
    if len(labels) == 0:
        raise ValueError("majority_vote needs at least one label")
    if confidences is not None and len(confidences) != len(labels):
        raise ValueError("labels and confidences differ in length")
    ones = sum(1 for v in labels if v == 1)
    zeros = len(labels) - ones
    if ones != zeros:
        return 1 if ones > zeros else 0
    if confidences is None:
        return 1
    top = max(confidences)
    leaders = {lab for lab, c in zip(labels, confidences) if c == top}
    return 1 if 1 in leaders else 0


def _vote_columns(labels: np.ndarray, conf: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise ``majority_vote`` over a ``(k, n_attributes)`` voter block."""
    k = labels.shape[0]
    pos = labels.sum(axis=0)
    neg = k - pos
    top = conf.max(axis=0)
    leader_pos = ((conf == top) & (labels == 1)).any(axis=0)
    out = np.where(pos > neg, 1, np.where(neg > pos, 0, leader_pos.astype(int)))
    return out.astype(np.int8), np.stack([pos, neg], axis=1)


def consolidate_subject(group: SubjectGroup,
                        config: ConsolidationConfig = ConsolidationConfig(),
                        quality_scores: Mapping[str, float] | None = None) -> SubjectAttributes:
    """Consolidate one group into a single label per attribute."""
    k = config.effective_k(len(group))
    n_attr = group.labels.shape[1]
    if config.strategy == "confidence":
        order = _descending(group.confidences)[:k]
    else:
        q = _descending(group_quality(group, quality_scores))[:k]
        order = np.repeat(q[:, None], n_attr, axis=1)
    cols = np.arange(n_attr)
    labels, votes = _vote_columns(group.labels[order, cols], group.confidences[order, cols])
    return SubjectAttributes(
        subject_id=group.subject_id,
        labels=labels,
        strategy=config.strategy,
        image_ids=group.image_ids,
        contributors=order,
        votes=votes,
    )


def consolidate_dataset(dataset: Dataset, config: ConsolidationConfig = ConsolidationConfig(),
                        quality_scores: Mapping[str, float] | None = None,
                        jobs: int = 1) -> list[SubjectAttributes]:
    """Consolidate every group; output order follows the dataset regardless of ``jobs``."""
    def one(g):
        return consolidate_subject(g, config, quality_scores)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(one, dataset.groups))
    return [one(g) for g in dataset.groups]


# --- label correction -------------------------------------------------------

@dataclass(frozen=True)
class LabelChange:
    image_id: str
    subject_id: str
    attribute: str
    old: int
    new: int


@dataclass(frozen=True)
class Correction:
    dataset: Dataset
    changes: tuple[LabelChange, ...]


def correct_labels(annotations: Dataset, consolidated: Iterable[SubjectAttributes],
                   schema: AttributeSchema | None = None) -> Correction:
    """Overwrite stable-attribute labels with the subject-level decision.

    Every per-image label of a stable attribute is replaced by the
    consolidated label of its subject; transient attributes are copied
    unchanged.  Returns a new dataset and the list of changed cells; the
    input is not modified.
    """
    schema = schema or annotations.schema
    if len(schema) != len(annotations.schema):
        raise AttrConsError("schema length differs from the annotation schema")
    by_subject = {c.subject_id: c for c in consolidated}
    stable = np.array(schema.stable)
    groups, changes = [], []
    for g in annotations.groups:
        result = by_subject.get(g.subject_id)
        if result is None:
            raise AttrConsError(f"subject {g.subject_id!r} has no consolidated labels")
        target = np.asarray(result.labels)
        if target.shape != (len(schema),):
            raise AttrConsError(f"subject {g.subject_id!r}: consolidated labels have wrong length")
        records = []
        for rec in g.images:
            old = rec.labels
            new = np.where(stable, target, old)
            diff = np.flatnonzero(new != old)
            if diff.size == 0:
                records.append(rec)
                continue
            changes.extend(
                LabelChange(rec.image_id, rec.subject_id, schema.names[j], int(old[j]), int(new[j]))
                for j in diff
            )
            p_pos = rec.p_pos.copy()
            p_neg = rec.p_neg.copy()
            p_pos[diff] = new[diff].astype(float)
            p_neg[diff] = 1.0 - p_pos[diff]
            records.append(ImageRecord.from_probabilities(
                rec.image_id, rec.subject_id, p_pos, p_neg,
                source=rec.source, landmarks=rec.landmarks, quality=rec.quality,
            ))
        groups.append(SubjectGroup(g.subject_id, tuple(records)))
    return Correction(Dataset(annotations.schema, tuple(groups)), tuple(changes))


# --- file formats -----------------------------------------------------------

def write_consolidation_csv(results: Sequence[SubjectAttributes], schema: AttributeSchema,
                            stream) -> None:
    with _text(stream, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", *schema.names])
        for r in results:
            w.writerow([r.subject_id, *(int(v) for v in r.labels)])


def read_consolidation_csv(source, schema: AttributeSchema) -> list[SubjectAttributes]:
    out, seen = [], set()
    with _text(source) as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1) from None
        if header != ["subject_id", *schema.names]:
            raise ParseError("header does not match the schema", 1)
        for row in reader:
            if not row:
                continue
            line = reader.line_num
            if len(row) != len(schema) + 1:
                raise ParseError(f"expected {len(schema) + 1} columns, found {len(row)}", line)
            if row[0] in seen:
                raise ParseError(f"duplicate subject {row[0]!r}", line, "subject_id")
            seen.add(row[0])
            for name, cell in zip(schema.names, row[1:]):
                if cell not in ("0", "1"):
                    raise ParseError(f"label must be 0 or 1, found {cell!r}", line, name)
            out.append(SubjectAttributes(row[0], np.array([int(c) for c in row[1:]], dtype=np.int8)))
    return out


def provenance_document(results: Sequence[SubjectAttributes], schema: AttributeSchema,
                        config: ConsolidationConfig) -> dict:
    subjects = []
    for r in results:
        attrs = {}
        for j, name in enumerate(schema.names):
            p = r.provenance(j)
            attrs[name] = {
                "label": int(r.labels[j]),
                "contributors": list(p.contributors) if p else None,
                "votes": list(p.votes) if p else None,
            }
        subjects.append({"subject_id": r.subject_id, "k": r.k, "attributes": attrs})
    return {"strategy": config.strategy, "top_k": config.top_k, "subjects": subjects}


def write_provenance_json(results, schema, config, stream) -> None:
    with _text(stream, "w") as fh:
        json.dump(provenance_document(results, schema, config), fh, indent=1)
        fh.write("\n")


CHANGELOG_COLUMNS = ["image_id", "subject_id", "attribute", "old", "new"]


def write_changelog_csv(changes: Iterable[LabelChange], stream) -> None:
    with _text(stream, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CHANGELOG_COLUMNS)
        for c in changes:
            w.writerow([c.image_id, c.subject_id, c.attribute, c.old, c.new])
