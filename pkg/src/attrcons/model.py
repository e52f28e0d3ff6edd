"""Domain types and file ingestion for per-image attribute predictions.

A :class:`Dataset` is a list of :class:`SubjectGroup` objects, each holding
the :class:`ImageRecord` rows of one subject (or one video).  Records keep
both class probabilities per attribute; the binary label is derived from
them, so human annotations are stored as degenerate ``(1, 0)`` / ``(0, 1)``
pairs and flow through the same code paths as classifier output.
"""

from __future__ import annotations

import contextlib
import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import ParseError

CELEBA_ATTRIBUTES = (
    "5_o_Clock_Shadow", "Arched_Eyebrows", "Attractive", "Bags_Under_Eyes",
    "Bald", "Bangs", "Big_Lips", "Big_Nose", "Black_Hair", "Blond_Hair",
    "Blurry", "Brown_Hair", "Bushy_Eyebrows", "Chubby", "Double_Chin",
    "Eyeglasses", "Goatee", "Gray_Hair", "Heavy_Makeup", "High_Cheekbones",
    "Male", "Mouth_Slightly_Open", "Mustache", "Narrow_Eyes", "No_Beard",
    "Oval_Face", "Pale_Skin", "Pointy_Nose", "Receding_Hairline",
    "Rosy_Cheeks", "Sideburns", "Smiling", "Straight_Hair", "Wavy_Hair",
    "Wearing_Earrings", "Wearing_Hat", "Wearing_Lipstick", "Wearing_Necklace",
    "Wearing_Necktie", "Young",
)

# attributes that legitimately change from one capture to the next
TRANSIENT_ATTRIBUTES = frozenset(
    {"Attractive", "Blurry", "Mouth_Slightly_Open", "Smiling"}
)

PROB_SUM_TOL = 1e-9


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered attribute names plus a per-attribute stability flag."""

    names: tuple[str, ...]
    stable: tuple[bool, ...] = None

    def __post_init__(self):
        names = tuple(self.names)
        if not names:
            raise ValueError("schema needs at least one attribute")
        if any(not isinstance(n, str) or not n for n in names):
            raise ValueError("attribute names must be non-empty strings")
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate attribute names: {dup}")
        stable = self.stable
        if stable is None:
            stable = tuple(n not in TRANSIENT_ATTRIBUTES for n in names)
        stable = tuple(bool(s) for s in stable)
        if len(stable) != len(names):
            raise ValueError("stable flags must match the number of names")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "stable", stable)

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown attribute {name!r}") from None

    @classmethod
    def celeba(cls) -> "AttributeSchema":
        return cls(CELEBA_ATTRIBUTES)

    def to_json(self) -> list[dict]:
        return [{"name": n, "stable": s} for n, s in zip(self.names, self.stable)]


def load_schema(source) -> AttributeSchema:
    """Read a schema file: a JSON list of ``{"name": ..., "stable": bool}``."""
    with _text(source) as fh:
        try:
            entries = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc), line=exc.lineno) from None
    if not isinstance(entries, list):
        raise ParseError("schema must be a JSON list")
    names, stable = [], []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "name" not in entry:
            raise ParseError(f"entry {i} lacks a 'name'", field="name")
        flag = entry.get("stable", True)
        if not isinstance(flag, bool):
            raise ParseError(f"entry {i}: 'stable' must be a boolean", field="stable")
        names.append(entry["name"])
        stable.append(flag)
    try:
        return AttributeSchema(tuple(names), tuple(stable))
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def dump_schema(schema: AttributeSchema, stream) -> None:
    json.dump(schema.to_json(), stream, indent=2)
    stream.write("\n")


@dataclass(frozen=True)
class AttributePrediction:
    p_pos: float
    p_neg: float

    def __post_init__(self):
        for name in ("p_pos", "p_neg"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v!r} outside [0, 1]")
        if abs(self.p_pos + self.p_neg - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"p_pos + p_neg = {self.p_pos + self.p_neg!r}, expected 1")

    @property
    def label(self) -> int:
        return binary_label(self)

    @classmethod
    def from_label(cls, label: int) -> "AttributePrediction":
        if label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {label!r}")
        return cls(float(label), 1.0 - label)


def binary_label(pred: AttributePrediction) -> int:
    """1 when the positive class is at least as likely as the negative one.

    The exact tie ``p_pos == p_neg`` resolves to 1.
    """
    return 1 if pred.p_pos >= pred.p_neg else 0


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __iter__(self):
        yield self.x
        yield self.y


def _point(value, key) -> Point:
    if isinstance(value, Mapping):
        value = (value.get("x"), value.get("y"))
    try:
        x, y = value
        return Point(float(x), float(y))
    except (TypeError, ValueError):
        raise ParseError(f"bad point {value!r}", field=key) from None


@dataclass(frozen=True)
class Landmarks:
    """Facial landmarks in pixel coordinates (x to the right, y down).

    Each eye is a mapping with ``outer``, ``inner``, ``top`` and ``bottom``
    points; the mouth has ``left``, ``right``, ``top`` and ``bottom``.
    """

    left_eye: Mapping[str, Point]
    right_eye: Mapping[str, Point]
    mouth: Mapping[str, Point]
    nose_tip: Point

    EYE_KEYS = ("outer", "inner", "top", "bottom")
    MOUTH_KEYS = ("left", "right", "top", "bottom")

    @classmethod
    def from_dict(cls, data: Mapping) -> "Landmarks":
        def part(name, keys):
            block = data.get(name)
            if not isinstance(block, Mapping):
                raise ParseError(f"landmarks need a {name!r} object", field=name)
            missing = [k for k in keys if k not in block]
            if missing:
                raise ParseError(f"{name} missing {missing}", field=name)
            return {k: _point(block[k], f"{name}.{k}") for k in keys}

        if "nose_tip" not in data:
            raise ParseError("landmarks need 'nose_tip'", field="nose_tip")
        return cls(
            left_eye=part("left_eye", cls.EYE_KEYS),
            right_eye=part("right_eye", cls.EYE_KEYS),
            mouth=part("mouth", cls.MOUTH_KEYS),
            nose_tip=_point(data["nose_tip"], "nose_tip"),
        )

    def to_dict(self) -> dict:
        def block(part):
            return {k: [p.x, p.y] for k, p in part.items()}

        return {
            "left_eye": block(self.left_eye),
            "right_eye": block(self.right_eye),
            "mouth": block(self.mouth),
            "nose_tip": [self.nose_tip.x, self.nose_tip.y],
        }

    def points(self) -> Iterator[Point]:
        yield from self.left_eye.values()
        yield from self.right_eye.values()
        yield from self.mouth.values()
        yield self.nose_tip

    def within(self, width: int, height: int) -> bool:
        return all(0 <= p.x <= width - 1 and 0 <= p.y <= height - 1 for p in self.points())


def _readonly(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ImageRecord:
    """One image: its classifier output for every schema attribute.

    ``p_pos`` and ``p_neg`` are read-only float arrays of schema length.
    ``quality`` optionally caches a precomputed quality score.
    """

    image_id: str
    subject_id: str
    p_pos: np.ndarray
    p_neg: np.ndarray
    source: str | None = None
    landmarks: Landmarks | None = None
    quality: float | None = None

    @classmethod
    def from_probabilities(cls, image_id, subject_id, p_pos, p_neg=None, **kw):
        p_pos = _readonly(p_pos)
        p_neg = _readonly(1.0 - p_pos if p_neg is None else p_neg)
        return cls(str(image_id), str(subject_id), p_pos, p_neg, **kw)

    @classmethod
    def from_labels(cls, image_id, subject_id, labels, **kw):
        labels = np.asarray(labels)
        if not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must be 0/1")
        p_pos = labels.astype(np.float64)
        return cls.from_probabilities(image_id, subject_id, p_pos, 1.0 - p_pos, **kw)

    @property
    def labels(self) -> np.ndarray:
        return (self.p_pos >= self.p_neg).astype(np.int8)

    @property
    def predictions(self) -> tuple[AttributePrediction, ...]:
        return tuple(
            AttributePrediction(float(a), float(b)) for a, b in zip(self.p_pos, self.p_neg)
        )

    def __eq__(self, other):
        if not isinstance(other, ImageRecord):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.subject_id == other.subject_id
            and np.array_equal(self.p_pos, other.p_pos)
            and np.array_equal(self.p_neg, other.p_neg)
            and self.source == other.source
            and self.landmarks == other.landmarks
            and self.quality == other.quality
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SubjectGroup:
    """All images of one subject, in input order.

    The stacked matrices below are ``(N_l, n_attributes)`` and computed once.
    """

    subject_id: str
    images: tuple[ImageRecord, ...]

    def __post_init__(self):
        images = tuple(self.images)
        if not images:
            raise ValueError(f"subject {self.subject_id!r} has no images")
        for rec in images:
            if rec.subject_id != self.subject_id:
                raise ValueError(
                    f"image {rec.image_id!r} belongs to {rec.subject_id!r}, "
                    f"not {self.subject_id!r}"
                )
        object.__setattr__(self, "images", images)

    def __len__(self):
        return len(self.images)

    @cached_property
    def p_pos(self) -> np.ndarray:
        return _readonly(np.stack([r.p_pos for r in self.images]))

    @cached_property
    def p_neg(self) -> np.ndarray:
        return _readonly(np.stack([r.p_neg for r in self.images]))

    @cached_property
    def labels(self) -> np.ndarray:
        return _readonly(self.p_pos >= self.p_neg, dtype=np.int8)

    @cached_property
    def confidences(self) -> np.ndarray:
        return _readonly(np.abs(self.p_pos - self.p_neg))

    @property
    def image_ids(self) -> tuple[str, ...]:
        return tuple(r.image_id for r in self.images)

    def __eq__(self, other):
        if not isinstance(other, SubjectGroup):
            return NotImplemented
        return self.subject_id == other.subject_id and self.images == other.images

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    schema: AttributeSchema
    groups: tuple[SubjectGroup, ...] = field(default_factory=tuple)

    def __post_init__(self):
        groups = tuple(self.groups)
        object.__setattr__(self, "groups", groups)
        n = len(self.schema)
        seen_ids, seen_subjects = set(), set()
        for g in groups:
            if g.subject_id in seen_subjects:
                raise ValueError(f"subject {g.subject_id!r} appears in two groups")
            seen_subjects.add(g.subject_id)
            for rec in g.images:
                if rec.image_id in seen_ids:
                    raise ValueError(f"duplicate image_id {rec.image_id!r}")
                seen_ids.add(rec.image_id)
                if rec.p_pos.shape != (n,) or rec.p_neg.shape != (n,):
                    raise ValueError(
                        f"image {rec.image_id!r} has {rec.p_pos.shape[0]} predictions, "
                        f"schema has {n}"
                    )

    @classmethod
    def from_records(cls, schema: AttributeSchema, records: Iterable[ImageRecord]) -> "Dataset":
        """Group records by subject, keeping first-appearance order throughout."""
        buckets: dict[str, list[ImageRecord]] = {}
        for rec in records:
            buckets.setdefault(rec.subject_id, []).append(rec)
        return cls(schema, tuple(SubjectGroup(s, tuple(r)) for s, r in buckets.items()))

    @property
    def n_subjects(self) -> int:
        return len(self.groups)

    @property
    def n_records(self) -> int:
        return sum(len(g) for g in self.groups)

    def records(self) -> Iterator[ImageRecord]:
        for g in self.groups:
            yield from g.images

    def group(self, subject_id: str) -> SubjectGroup:
        for g in self.groups:
            if g.subject_id == subject_id:
                return g
        raise KeyError(subject_id)


# --- file formats -----------------------------------------------------------

@contextlib.contextmanager
def _text(source, mode="r"):
    """Yield a text stream for a path, a byte stream or a text stream."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, mode, encoding="utf-8", newline="") as fh:
            yield fh
    elif isinstance(source, io.TextIOBase):
        yield source
    elif "r" in mode:
        wrapper = io.TextIOWrapper(source, encoding="utf-8", newline="")
        try:
            yield wrapper
        finally:
            wrapper.detach()
    else:
        wrapper = io.TextIOWrapper(source, encoding="utf-8", newline="")
        try:
            yield wrapper
        finally:
            wrapper.flush()
            wrapper.detach()


def _prob(cell, line, col):
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"not a number: {cell!r}", line, col) from None
    if not (0.0 <= v <= 1.0):  # also rejects nan
        raise ParseError(f"probability {v!r} outside [0, 1]", line, col)
    return v


def _check_id(value, line, col):
    if not isinstance(value, str) or not value:
        raise ParseError("empty or missing identifier", line, col)
    return value


def load_predictions(source, schema: AttributeSchema | None = None, format: str = "csv") -> Dataset:
    """Parse a prediction file into a :class:`Dataset`.

    Parameters
    ----------
    source : path, binary stream or text stream
    schema : AttributeSchema, optional
        Defaults to the 40 CelebA attributes.
    format : {"csv", "jsonl"}

    Raises
    ------
    ParseError
        For any malformed row; the message names the line and field.
    """
    schema = schema or AttributeSchema.celeba()
    if format == "csv":
        records = _read_prediction_csv(source, schema)
    elif format == "jsonl":
        records = _read_prediction_jsonl(source, schema)
    else:
        raise ValueError(f"unknown format {format!r}")
    return _assemble(schema, records)


def _assemble(schema, records):
    seen = {}
    for line, rec in records:
        if rec.image_id in seen:
            raise ParseError(
                f"duplicate image_id {rec.image_id!r} (first seen on line {seen[rec.image_id]})",
                line, "image_id",
            )
        seen[rec.image_id] = line
    return Dataset.from_records(schema, (rec for _, rec in records))


def prediction_columns(schema: AttributeSchema) -> list[str]:
    cols = ["image_id", "subject_id"]
    for name in schema.names:
        cols += [f"{name}_p1", f"{name}_p0"]
    return cols


def _read_header(reader, expected):
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file", 1) from None
    if header != expected:
        for i, (got, want) in enumerate(zip(header, expected)):
            if got != want:
                raise ParseError(f"expected column {want!r}, found {got!r}", 1, f"column {i + 1}")
        raise ParseError(f"expected {len(expected)} columns, found {len(header)}", 1)


def _read_prediction_csv(source, schema):
    cols = prediction_columns(schema)
    out = []
    with _text(source) as fh:
        reader = csv.reader(fh)
        _read_header(reader, cols)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(cols):
                raise ParseError(f"expected {len(cols)} columns, found {len(row)}", line)
            image_id = _check_id(row[0], line, "image_id")
            subject_id = _check_id(row[1], line, "subject_id")
            p_pos = np.empty(len(schema))
            p_neg = np.empty(len(schema))
            for j in range(len(schema)):
                c1, c0 = cols[2 + 2 * j], cols[3 + 2 * j]
                p_pos[j] = _prob(row[2 + 2 * j], line, c1)
                p_neg[j] = _prob(row[3 + 2 * j], line, c0)
                if abs(p_pos[j] + p_neg[j] - 1.0) > PROB_SUM_TOL:
                    raise ParseError(
                        f"probabilities sum to {p_pos[j] + p_neg[j]!r}, expected 1", line, c1
                    )
            out.append((line, ImageRecord.from_probabilities(image_id, subject_id, p_pos, p_neg)))
    return out


def _read_prediction_jsonl(source, schema):
    out = []
    with _text(source) as fh:
        for line, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line) from None
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", line)
            image_id = _check_id(obj.get("image_id"), line, "image_id")
            subject_id = _check_id(obj.get("subject_id"), line, "subject_id")
            probs = obj.get("p_pos")
            if not isinstance(probs, list) or len(probs) != len(schema):
                raise ParseError(f"expected a list of {len(schema)} probabilities", line, "p_pos")
            p_pos = np.array([_prob(str(v), line, f"p_pos[{j}]") for j, v in enumerate(probs)])
            source_path = obj.get("source")
            if source_path is not None and not isinstance(source_path, str):
                raise ParseError("source must be a string or null", line, "source")
            landmarks = obj.get("landmarks")
            if landmarks is not None:
                if not isinstance(landmarks, dict):
                    raise ParseError("landmarks must be an object or null", line, "landmarks")
                try:
                    landmarks = Landmarks.from_dict(landmarks)
                except ParseError as exc:
                    raise ParseError(str(exc), line, "landmarks") from None
            quality = obj.get("quality")
            if quality is not None:
                if isinstance(quality, bool) or not isinstance(quality, (int, float)) \
                        or not math.isfinite(quality):
                    raise ParseError("quality must be a finite number", line, "quality")
                quality = float(quality)
            out.append((line, ImageRecord.from_probabilities(
                image_id, subject_id, p_pos,
                source=source_path, landmarks=landmarks, quality=quality,
            )))
    return out


def load_annotations(source, schema: AttributeSchema | None = None) -> Dataset:
    """Parse a 0/1 annotation CSV (``image_id,subject_id,<name1>,...``).

    Labels become degenerate probability pairs so the annotation dataset can
    be audited and consolidated like classifier output.
    """
    schema = schema or AttributeSchema.celeba()
    cols = ["image_id", "subject_id", *schema.names]
    out = []
    with _text(source) as fh:
        reader = csv.reader(fh)
        _read_header(reader, cols)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(cols):
                raise ParseError(f"expected {len(cols)} columns, found {len(row)}", line)
            labels = []
            for name, cell in zip(schema.names, row[2:]):
                cell = cell.strip()
                if cell not in ("0", "1"):
                    raise ParseError(f"label must be 0 or 1, found {cell!r}", line, name)
                labels.append(int(cell))
            out.append((line, ImageRecord.from_labels(
                _check_id(row[0], line, "image_id"), _check_id(row[1], line, "subject_id"), labels,
            )))
    return _assemble(schema, out)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_predictions(dataset: Dataset, stream, format: str = "csv") -> None:
    """Serialize predictions group by group; ``load_predictions`` reads it back."""
    with _text(stream, "w") as fh:
        if format == "csv":
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(prediction_columns(dataset.schema))
            for rec in dataset.records():
                row = [rec.image_id, rec.subject_id]
                for a, b in zip(rec.p_pos, rec.p_neg):
                    row += [_fmt(a), _fmt(b)]
                writer.writerow(row)
        elif format == "jsonl":
            for rec in dataset.records():
                obj = {
                    "image_id": rec.image_id,
                    "subject_id": rec.subject_id,
                    "source": rec.source,
                    "p_pos": [float(v) for v in rec.p_pos],
                    "landmarks": rec.landmarks.to_dict() if rec.landmarks else None,
                }
                if rec.quality is not None:
                    obj["quality"] = rec.quality
                fh.write(json.dumps(obj) + "\n")
        else:
            raise ValueError(f"unknown format {format!r}")


def write_annotations(dataset: Dataset, stream) -> None:
    with _text(stream, "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image_id", "subject_id", *dataset.schema.names])
        for rec in dataset.records():
            writer.writerow([rec.image_id, rec.subject_id, *(int(v) for v in rec.labels)])

