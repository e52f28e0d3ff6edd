"""No-reference face image quality.

Eleven heuristic features, each mapped to [0, 1] with 1 meaning "good",
are combined into a single score by a plain weighted sum.  Pixel-based
features work on a grayscale luma image in [0, 1]; pose, eye openness and
mouth closeness need landmarks and fall back to a neutral 0.5 without them.

The native image format is 8-bit binary PGM (P5).  Other formats are
decoded through Pillow when it is installed.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ParseError, QualityError
from .model import Landmarks, Point, SubjectGroup, _text

log = logging.getLogger(__name__)

FEATURES = (
    "brightness", "contrast", "focus", "illumination", "illumination_symmetry",
    "sharpness", "compression", "pose", "eyes_openness", "mouth_closeness",
    "face_symmetry",
)
LANDMARK_FEATURES = ("pose", "eyes_openness", "mouth_closeness")
MIN_SIZE = 8


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Row-major luma in [0, 1], shape ``(height, width)``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise QualityError(f"expected a non-empty 2-D array, got shape {px.shape}")
        if not np.isfinite(px).all() or px.min() < 0.0 or px.max() > 1.0:
            raise QualityError("pixel values must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def from_uint8(cls, data) -> "GrayImage":
        return cls(np.asarray(data, dtype=np.float64) / 255.0)

    def to_uint8(self) -> np.ndarray:
        return np.rint(self.pixels * 255.0).astype(np.uint8)


# --- image I/O --------------------------------------------------------------

def _pgm_tokens(buf: bytes, count: int):
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise QualityError("truncated PGM header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def decode_pgm(buf: bytes) -> GrayImage:
    """Decode an 8-bit binary PGM (P5)."""
    if buf[:2] != b"P5":
        raise QualityError("not a binary PGM (missing P5 magic)")
    tokens, offset = _pgm_tokens(buf, 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise QualityError(f"bad PGM header {tokens!r}") from None
    if width < 1 or height < 1:
        raise QualityError("PGM dimensions must be positive")
    if not 0 < maxval < 256:
        raise QualityError(f"only 8-bit PGM is supported (maxval {maxval})")
    raster = buf[offset:offset + width * height]
    if len(raster) != width * height:
        raise QualityError("truncated PGM raster")
    data = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    if data.max(initial=0) > maxval:
        raise QualityError("PGM sample exceeds maxval")
    return GrayImage(data.astype(np.float64) / maxval)


def encode_pgm(image: GrayImage) -> bytes:
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + image.to_uint8().tobytes()


def write_pgm(image: GrayImage, path) -> None:
    Path(path).write_bytes(encode_pgm(image))


def load_image(path) -> GrayImage:
    """Read a PGM natively, anything else through Pillow if available."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise QualityError(f"cannot read {path}: {exc.strerror}") from None
    if buf[:2] == b"P5":
        return decode_pgm(buf)
    try:
        from PIL import Image
    except ImportError:
        raise QualityError(f"{path}: not a PGM and Pillow is not installed") from None
    try:
        with Image.open(io.BytesIO(buf)) as im:
            return GrayImage.from_uint8(np.asarray(im.convert("L")))
    except Exception as exc:  # Pillow raises a zoo of exception types
        raise QualityError(f"cannot decode {path}: {exc}") from None


# --- features ---------------------------------------------------------------

@dataclass(frozen=True)
class QualityFeatures:
    brightness: float
    contrast: float
    focus: float
    illumination: float
    illumination_symmetry: float
    sharpness: float
    compression: float
    pose: float
    eyes_openness: float
    mouth_closeness: float
    face_symmetry: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{f.name}={v!r} outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURES])

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def filled(cls, value: float = 0.0, **overrides) -> "QualityFeatures":
        return cls(**{**{n: value for n in FEATURES}, **overrides})


@dataclass(frozen=True)
class QualityWeights:
    brightness: float = 0.6
    contrast: float = 0.6
    focus: float = 0.8
    illumination: float = 1.0
    illumination_symmetry: float = 0.9
    sharpness: float = 0.8
    compression: float = 0.7
    pose: float = 1.0
    eyes_openness: float = 0.5
    mouth_closeness: float = 0.5
    face_symmetry: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ValueError(f"weight {f.name}={v!r} must be a non-negative number")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, float]) -> "QualityWeights":
        unknown = set(mapping) - set(FEATURES)
        if unknown:
            raise ValueError(f"unknown quality features: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in mapping.items()})

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURES])

    @property
    def total(self) -> float:
        return math.fsum(self.as_array())


def load_weights(source) -> QualityWeights:
    """Weights file: JSON object feature -> weight; missing keys keep defaults."""
    with _text(source) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc), line=exc.lineno) from None
    if not isinstance(data, dict):
        raise ParseError("weights file must hold a JSON object")
    for k, v in data.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseError(f"weight must be a number, got {v!r}", field=k)
    try:
        return QualityWeights.from_mapping(data)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


@dataclass(frozen=True)
class Calibration:
    """Constants behind the feature formulas; override with ``replace``."""

    brightness_target: float = 0.5
    contrast_scale: float = 0.25
    focus_c: float = 0.005
    sharpness_c: float = 0.02
    illumination_low: float = 0.1
    illumination_high: float = 0.9
    block_size: int = 8
    max_roll: float = math.pi / 6
    open_eye_aspect: float = 0.3
    open_mouth_aspect: float = 0.5
    neutral: float = 0.5


DEFAULT_CALIBRATION = Calibration()


def _clamp(x: float) -> float:
    return float(min(1.0, max(0.0, x)))


def _squash(s: float, c: float) -> float:
    return float(s / (s + c)) if s > 0 else 0.0


def brightness(px, cal=DEFAULT_CALIBRATION):
    return _clamp(1.0 - 2.0 * abs(px.mean() - cal.brightness_target))


def contrast(px, cal=DEFAULT_CALIBRATION):
    return _clamp(px.std() / cal.contrast_scale)


def focus(px, cal=DEFAULT_CALIBRATION):
    """Variance of the 4-neighbour Laplacian over the image interior."""
    lap = (px[:-2, 1:-1] + px[2:, 1:-1] + px[1:-1, :-2] + px[1:-1, 2:]
           - 4.0 * px[1:-1, 1:-1])
    return _squash(lap.var(), cal.focus_c)


def sharpness(px, cal=DEFAULT_CALIBRATION):
    """Mean central-difference gradient magnitude over the interior."""
    gx = (px[1:-1, 2:] - px[1:-1, :-2]) / 2.0
    gy = (px[2:, 1:-1] - px[:-2, 1:-1]) / 2.0
    return _squash(np.hypot(gx, gy).mean(), cal.sharpness_c)


def illumination(px, cal=DEFAULT_CALIBRATION):
    ok = (px >= cal.illumination_low) & (px <= cal.illumination_high)
    return float(ok.mean())


def _halves(px):
    # right half mirrored so a symmetric image sums in identical order
    half = px.shape[1] // 2
    return px[:, :half], np.ascontiguousarray(px[:, ::-1][:, :half])


def illumination_symmetry(px, cal=DEFAULT_CALIBRATION):
    left, right = _halves(px)
    return _clamp(1.0 - abs(left.mean() - right.mean()))


def blockiness(px, block=8):
    """Excess luma step across block-aligned boundaries over the mean step elsewhere."""
    dh = np.abs(np.diff(px, axis=1))
    dv = np.abs(np.diff(px, axis=0))
    on_h = (np.arange(dh.shape[1]) + 1) % block == 0
    on_v = (np.arange(dv.shape[0]) + 1) % block == 0
    edge = np.concatenate([dh[:, on_h].ravel(), dv[on_v, :].ravel()])
    rest = np.concatenate([dh[:, ~on_h].ravel(), dv[~on_v, :].ravel()])
    if edge.size == 0 or rest.size == 0:
        return 0.0
    return _clamp(edge.mean() - rest.mean())


def compression(px, cal=DEFAULT_CALIBRATION):
    return 1.0 - blockiness(px, cal.block_size)


def face_symmetry(px, cal=DEFAULT_CALIBRATION):
    return _clamp(1.0 - np.abs(px - px[:, ::-1]).mean())


def _dist(a: Point, b: Point) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def _center(part: Mapping[str, Point]) -> Point:
    pts = list(part.values())
    return Point(sum(p.x for p in pts) / len(pts), sum(p.y for p in pts) / len(pts))


def pose(lm: Landmarks, cal=DEFAULT_CALIBRATION) -> float:
    """1 for a frontal, level face; 0 once yaw or roll saturates.

    Yaw is proxied by the asymmetry of nose-to-eye distances relative to
    the interocular distance, roll by the tilt of the eye line.
    """
    le, re = _center(lm.left_eye), _center(lm.right_eye)
    inter = _dist(le, re)
    if inter == 0:
        return 0.0
    yaw = abs(_dist(lm.nose_tip, le) - _dist(lm.nose_tip, re)) / inter
    angle = math.atan2(re.y - le.y, re.x - le.x)
    # the eye line has no direction; fold into (-pi/2, pi/2]
    if angle > math.pi / 2:
        angle -= math.pi
    elif angle <= -math.pi / 2:
        angle += math.pi
    roll = abs(angle) / cal.max_roll
    return 1.0 - max(_clamp(yaw), _clamp(roll))


def _aspect(vertical: float, horizontal: float) -> float:
    return vertical / horizontal if horizontal > 0 else 0.0


def eyes_openness(lm: Landmarks, cal=DEFAULT_CALIBRATION) -> float:
    scores = []
    for eye in (lm.left_eye, lm.right_eye):
        a = _aspect(_dist(eye["top"], eye["bottom"]), _dist(eye["outer"], eye["inner"]))
        scores.append(_clamp(a / cal.open_eye_aspect))
    return float(np.mean(scores))


def mouth_closeness(lm: Landmarks, cal=DEFAULT_CALIBRATION) -> float:
    m = lm.mouth
    a = _aspect(_dist(m["top"], m["bottom"]), _dist(m["left"], m["right"]))
    return 1.0 - _clamp(a / cal.open_mouth_aspect)


def compute_features(image, landmarks: Landmarks | None = None,
                     calibration: Calibration = DEFAULT_CALIBRATION) -> QualityFeatures:
    """Compute all eleven quality features of one image.

    Parameters
    ----------
    image : GrayImage or 2-D array in [0, 1]
    landmarks : Landmarks, optional
        Without landmarks, pose, eye openness and mouth closeness are 0.5.
    calibration : Calibration

    Raises
    ------
    QualityError
        If either image side is shorter than 8 pixels, or a landmark lies
        outside the image.
    """
    if not isinstance(image, GrayImage):
        image = GrayImage(image)
    if image.width < MIN_SIZE or image.height < MIN_SIZE:
        raise QualityError(
            f"image {image.width}x{image.height} is smaller than {MIN_SIZE}x{MIN_SIZE}"
        )
    px, cal = image.pixels, calibration
    if landmarks is None:
        lm_feats = dict.fromkeys(LANDMARK_FEATURES, cal.neutral)
    else:
        if not landmarks.within(image.width, image.height):
            raise QualityError("landmark outside image bounds")
        lm_feats = {
            "pose": pose(landmarks, cal),
            "eyes_openness": eyes_openness(landmarks, cal),
            "mouth_closeness": mouth_closeness(landmarks, cal),
        }
    return QualityFeatures(
        brightness=brightness(px, cal),
        contrast=contrast(px, cal),
        focus=focus(px, cal),
        illumination=illumination(px, cal),
        illumination_symmetry=illumination_symmetry(px, cal),
        sharpness=sharpness(px, cal),
        compression=compression(px, cal),
        face_symmetry=face_symmetry(px, cal),
        **lm_feats,
    )


def quality_score(features: QualityFeatures, weights: QualityWeights = QualityWeights()) -> float:
    """Weighted sum of the features (not normalized by the weight total)."""
    return math.fsum(w * f for w, f in zip(weights.as_array(), features.as_array()))


# --- group scoring ----------------------------------------------------------

@dataclass(frozen=True)
class ScoredImage:
    """Quality of one image of a group.

    ``index`` is the position in the group.  Failed images carry ``error``
    and a NaN score; images scored from a cached value have no features.
    """

    image_id: str
    subject_id: str
    index: int
    features: QualityFeatures | None
    score: float
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def resolve_source(record, image_root=None) -> Path | None:
    if record.source is not None:
        p = Path(record.source)
        if not p.is_absolute() and image_root is not None:
            p = Path(image_root) / p
        return p
    if image_root is not None:
        return Path(image_root) / f"{record.image_id}.pgm"
    return None


def score_image(record, index=0, weights=QualityWeights(), image_root=None,
                calibration=DEFAULT_CALIBRATION, loader=load_image) -> ScoredImage:
    path = resolve_source(record, image_root)
    if path is None:
        if record.quality is not None:
            return ScoredImage(record.image_id, record.subject_id, index, None, record.quality)
        return ScoredImage(record.image_id, record.subject_id, index, None, math.nan,
                           "no image source and no cached quality")
    try:
        feats = compute_features(loader(path), record.landmarks, calibration)
    except QualityError as exc:
        log.warning("image %s: %s", record.image_id, exc)
        return ScoredImage(record.image_id, record.subject_id, index, None, math.nan, str(exc))
    return ScoredImage(record.image_id, record.subject_id, index, feats,
                       quality_score(feats, weights))


def rank_scored(scored: Sequence[ScoredImage]) -> list[ScoredImage]:
    """Best first; equal scores keep input order; failures go last."""
    good = sorted((s for s in scored if s.ok), key=lambda s: (-s.score, s.index))
    return good + [s for s in scored if not s.ok]


def score_group(group: SubjectGroup, weights: QualityWeights = QualityWeights(), *,
                image_root=None, calibration: Calibration = DEFAULT_CALIBRATION,
                loader=load_image, jobs: int = 1) -> list[ScoredImage]:
    """Score every image of a group and rank them, best first.

    Unreadable images are kept in the result with their error message; the
    group as a whole fails only when no image could be scored.
    """
    def one(item):
        i, rec = item
        return score_image(rec, i, weights, image_root, calibration, loader)

    items = list(enumerate(group.images))
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            scored = list(pool.map(one, items))
    else:
        scored = [one(it) for it in items]
    if not any(s.ok for s in scored):
        raise QualityError(
            f"subject {group.subject_id!r}: no image could be scored "
            f"({scored[0].error})"
        )
    return rank_scored(scored)


def group_scores(ranked: Sequence[ScoredImage]) -> np.ndarray:
    """Scores back in group input order (NaN for failed images)."""
    out = np.full(len(ranked), np.nan)
    for s in ranked:
        out[s.index] = s.score
    return out


QUALITY_COLUMNS = ["image_id", "subject_id", *FEATURES, "score", "rank"]


def write_quality_csv(ranked_groups: Sequence[Sequence[ScoredImage]], stream) -> None:
    """One row per image; ``rank`` is 1-based within its group, empty on failure."""
    with _text(stream, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(QUALITY_COLUMNS)
        for ranked in ranked_groups:
            rank = 0
            for s in ranked:
                if s.ok:
                    rank += 1
                feats = ([repr(v) for v in s.features.as_array().tolist()]
                         if s.features is not None else [""] * len(FEATURES))
                score = repr(s.score) if s.ok else ""
                w.writerow([s.image_id, s.subject_id, *feats, score, rank if s.ok else ""])


def read_quality_csv(source) -> dict[str, float]:
    """Map image_id -> score from a quality report (failed rows are skipped)."""
    out = {}
    with _text(source) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "score" not in reader.fieldnames:
            raise ParseError("quality report lacks a 'score' column", 1)
        for row in reader:
            if row["score"]:
                try:
                    out[row["image_id"]] = float(row["score"])
                except ValueError:
                    raise ParseError(f"bad score {row['score']!r}", reader.line_num, "score") from None
    return out

