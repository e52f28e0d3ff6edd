"""Inconsistency Measure (IM) of binary attributes across a subject's images.

For one subject and one attribute, with ``c_pos`` positive and ``c_neg``
negative image-level labels out of ``n = c_pos + c_neg``::

    ratio = max(c_pos, c_neg) / n                  # in [0.5, 1]
    im    = 100 - (ratio - 0.5) / 0.5 * 100        # in [0, 100]

``im`` is 0 when every image agrees and 100 for an even split.  The
per-attribute summary is the unweighted mean of ``im`` over subjects.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import EmptyGroupError
from .model import Dataset, SubjectGroup, _text

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttributeIM:
    c_pos: int
    c_neg: int
    ratio: float
    im: float

    @property
    def n(self) -> int:
        return self.c_pos + self.c_neg


def _ratio_im(c_pos, c_neg):
    # shared by the scalar and the array paths so both agree bit for bit
    n = c_pos + c_neg
    ratio = np.maximum(c_pos, c_neg) / n
    im_prime = (ratio - 0.5) / 0.5 * 100
    return ratio, 100 - im_prime


def count_outcomes(group: SubjectGroup, attr_index: int) -> tuple[int, int]:
    """Number of positive and negative image labels for one attribute."""
    n_attr = group.labels.shape[1]
    if not 0 <= attr_index < n_attr:
        raise IndexError(f"attribute index {attr_index} out of range [0, {n_attr})")
    c_pos = int(group.labels[:, attr_index].sum())
    return c_pos, len(group) - c_pos


def im_from_counts(c_pos: int, c_neg: int) -> AttributeIM:
    if c_pos < 0 or c_neg < 0:
        raise ValueError("counts must be non-negative")
    if c_pos + c_neg == 0:
        raise EmptyGroupError("IM is undefined for an empty group")
    ratio, im = _ratio_im(float(c_pos), float(c_neg))
    return AttributeIM(int(c_pos), int(c_neg), float(ratio), float(im))


def _group_counts(group: SubjectGroup) -> np.ndarray:
    return group.labels.sum(axis=0, dtype=np.int64)


def subject_im(group: SubjectGroup) -> list[AttributeIM]:
    """IM of every schema attribute for one group, in schema order."""
    c_pos = _group_counts(group)
    c_neg = len(group) - c_pos
    ratio, im = _ratio_im(c_pos.astype(float), c_neg.astype(float))
    return [
        AttributeIM(int(a), int(b), float(r), float(v))
        for a, b, r, v in zip(c_pos, c_neg, ratio, im)
    ]


@dataclass(frozen=True, eq=False)
class IMReport:
    """Per-subject IM table plus the per-attribute mean over subjects.

    The arrays are ``(L, n_attributes)``, rows in dataset group order.
    ``mode`` is ``"predictions"`` for classifier output and ``"labels"``
    for an annotation audit.
    """

    subject_ids: tuple[str, ...]
    attributes: tuple[str, ...]
    c_pos: np.ndarray
    c_neg: np.ndarray
    ratio: np.ndarray
    im: np.ndarray
    mode: str = "predictions"
    dataset_id: str | None = None

    @property
    def mean_im(self) -> np.ndarray:
        return self.im.mean(axis=0)

    @property
    def per_attribute(self) -> dict[str, float]:
        return {a: float(v) for a, v in zip(self.attributes, self.mean_im)}

    def get(self, subject_id: str, attribute: str) -> AttributeIM:
        i = self.subject_ids.index(subject_id)
        j = self.attributes.index(attribute)
        return AttributeIM(
            int(self.c_pos[i, j]), int(self.c_neg[i, j]),
            float(self.ratio[i, j]), float(self.im[i, j]),
        )

    def per_subject(self) -> Iterator[tuple[str, str, AttributeIM]]:
        for i, s in enumerate(self.subject_ids):
            for j, a in enumerate(self.attributes):
                yield s, a, AttributeIM(
                    int(self.c_pos[i, j]), int(self.c_neg[i, j]),
                    float(self.ratio[i, j]), float(self.im[i, j]),
                )


def dataset_im(
    dataset: Dataset,
    min_group_size: int = 1,
    jobs: int = 1,
    mode: str = "predictions",
    dataset_id: str | None = None,
) -> IMReport:
    """Compute the IM report of a dataset.

    Groups with fewer than ``min_group_size`` images are left out; by default
    every group counts, singletons included (they contribute ``im = 0``).
    ``jobs > 1`` counts groups on a thread pool; the result does not depend
    on it.
    """
    groups = [g for g in dataset.groups if len(g) >= min_group_size]
    skipped = dataset.n_subjects - len(groups)
    if skipped:
        log.info("skipping %d group(s) smaller than %d images", skipped, min_group_size)
    if not groups:
        raise EmptyGroupError("no subject groups to measure")
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            counts = list(pool.map(_group_counts, groups))
    else:
        counts = [_group_counts(g) for g in groups]
    c_pos = np.stack(counts)
    sizes = np.array([len(g) for g in groups], dtype=np.int64)
    c_neg = sizes[:, None] - c_pos
    ratio, im = _ratio_im(c_pos.astype(float), c_neg.astype(float))
    return IMReport(
        subject_ids=tuple(g.subject_id for g in groups),
        attributes=dataset.schema.names,
        c_pos=c_pos, c_neg=c_neg, ratio=ratio, im=im,
        mode=mode, dataset_id=dataset_id,
    )


def audit_labels(annotations: Dataset, **kwargs) -> IMReport:
    """IM report over ground-truth annotations rather than classifier output."""
    return dataset_im(annotations, mode="labels", **kwargs)


# --- report writers ---------------------------------------------------------

def write_im_csv(report: IMReport, stream) -> None:
    """Per-subject rows, a blank line, then the ``attribute,mean_im`` summary."""
    with _text(stream, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "attribute", "c_pos", "c_neg", "ratio", "im"])
        for s, a, v in report.per_subject():
            w.writerow([s, a, v.c_pos, v.c_neg, repr(v.ratio), repr(v.im)])
        fh.write("\n")
        w.writerow(["attribute", "mean_im"])
        for a, v in report.per_attribute.items():
            w.writerow([a, repr(v)])


def write_im_json(report: IMReport, stream, timestamp: str | None = None) -> None:
    doc = {
        "metadata": {
            "dataset_id": report.dataset_id,
            "mode": report.mode,
            "timestamp": timestamp,
        },
        "per_subject": [
            {"subject_id": s, "attribute": a, "c_pos": v.c_pos, "c_neg": v.c_neg,
             "ratio": v.ratio, "im": v.im}
            for s, a, v in report.per_subject()
        ],
        "per_attribute": report.per_attribute,
    }
    with _text(stream, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def format_im_table(report: IMReport) -> str:
    """Human-readable per-attribute summary, IM to two decimals."""
    width = max(len(a) for a in report.attributes)
    title = "Label IM" if report.mode == "labels" else "IM"
    lines = [f"{'Attribute':<{width}}  {title:>8}", "-" * (width + 10)]
    for a, v in report.per_attribute.items():
        lines.append(f"{a:<{width}}  {v:8.2f}")
    lines.append(f"({len(report.subject_ids)} subjects)")
    return "\n".join(lines)
