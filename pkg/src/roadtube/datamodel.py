"""Domain types, the canonical JSON schemas and dataset-level helpers.

All boxes are stored in normalized image coordinates (fractions of width and
height). Pixel coordinates are produced on demand from an explicit
:class:`ImageSize`.
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import jsonschema

# Values this close to [0, 1] are clamped instead of rejected.
BOUND_TOL = 1e-6


class ValidationError(ValueError):
    """Input violates a schema or a domain invariant.

    ``path`` is a JSONPath-like pointer to the offending element.
    """

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.reason = message


def _clamp_unit(v: float, path: str) -> float:
    if not math.isfinite(v):
        raise ValidationError(f"non-finite coordinate {v!r}", path)
    if v < 0.0:
        if v < -BOUND_TOL:
            raise ValidationError(f"coordinate {v!r} below 0", path)
        return 0.0
    if v > 1.0:
        if v > 1.0 + BOUND_TOL:
            raise ValidationError(f"coordinate {v!r} above 1", path)
        return 1.0
    return float(v)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``(x1, y1, x2, y2)`` in normalized coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"{name}={v!r} outside [0, 1]", "box")
        if self.x1 > self.x2:
            raise ValidationError(f"x1={self.x1!r} > x2={self.x2!r}", "box")
        if self.y1 > self.y2:
            raise ValidationError(f"y1={self.y1!r} > y2={self.y2!r}", "box")

    @classmethod
    def from_seq(cls, values: Sequence[float], path: str = "box") -> "Box":
        """Build a box from ``[x1, y1, x2, y2]``, clamping values within
        ``BOUND_TOL`` of the unit interval."""
        if len(values) != 4:
            raise ValidationError(f"expected 4 coordinates, got {len(values)}", path)
        x1, y1, x2, y2 = (_clamp_unit(float(v), f"{path}[{i}]") for i, v in enumerate(values))
        if x1 > x2:
            raise ValidationError(f"box has x1={x1!r} > x2={x2!r}", path)
        if y1 > y2:
            raise ValidationError(f"box has y1={y1!r} > y2={y2!r}", path)
        return cls(x1, y1, x2, y2)

    def as_list(self) -> List[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def is_degenerate(self) -> bool:
        return self.width <= 0.0 or self.height <= 0.0

    def to_pixels(self, size: "ImageSize") -> Tuple[float, float, float, float]:
        return (self.x1 * size.width, self.y1 * size.height,
                self.x2 * size.width, self.y2 * size.height)


@dataclass(frozen=True)
class ImageSize:
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValidationError("image size must be integral", "image_size")
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"invalid image size {self.width}x{self.height}", "image_size")

    @classmethod
    def parse(cls, text: str) -> "ImageSize":
        """Parse ``"WxH"``."""
        try:
            w, h = text.lower().split("x")
            return cls(int(w), int(h))
        except ValueError as e:
            raise ValidationError(f"cannot parse image size {text!r}", "size") from e


@dataclass(frozen=True)
class Detection:
    frame_index: int
    box: Box
    category: int
    score: float

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValidationError(f"negative frame index {self.frame_index}", "frame_index")
        if not (0.0 <= self.score <= 1.0):
            raise ValidationError(f"score {self.score!r} outside [0, 1]", "score")


@dataclass(frozen=True)
class TubeEntry:
    frame_index: int
    box: Box
    score: float


@dataclass(frozen=True)
class AgentTube:
    """Contiguous run of per-frame boxes sharing one identity and category."""

    category: int
    tube_score: float
    entries: Tuple[TubeEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise ValidationError("tube has no entries", "entries")
        if not (0.0 <= self.tube_score <= 1.0):
            raise ValidationError(f"tube_score {self.tube_score!r} outside [0, 1]", "tube_score")
        prev = None
        for i, e in enumerate(self.entries):
            if e.frame_index < 0:
                raise ValidationError("negative frame index", f"entries[{i}].frame_index")
            if not (0.0 <= e.score <= 1.0):
                raise ValidationError(f"score {e.score!r} outside [0, 1]", f"entries[{i}].score")
            if prev is not None:
                if e.frame_index <= prev:
                    raise ValidationError("frame indices not strictly increasing",
                                          f"entries[{i}].frame_index")
                if e.frame_index != prev + 1:
                    raise ValidationError(f"gap between frames {prev} and {e.frame_index}",
                                          f"entries[{i}].frame_index")
            prev = e.frame_index

    @property
    def start(self) -> int:
        return self.entries[0].frame_index

    @property
    def end(self) -> int:
        return self.entries[-1].frame_index

    def __len__(self) -> int:
        return len(self.entries)

    def box_at(self) -> Dict[int, Box]:
        return {e.frame_index: e.box for e in self.entries}


@dataclass(frozen=True)
class CategoryTable:
    """Ordered ``(id, name)`` pairs; ids are dense from 0 and names unique."""

    items: Tuple[Tuple[int, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "items", tuple((int(i), str(n)) for i, n in self.items))
        for pos, (cid, _) in enumerate(self.items):
            if cid != pos:
                raise ValidationError(f"category ids must be dense from 0, got {cid} at {pos}",
                                      f"$[{pos}].id")
        names = [n for _, n in self.items]
        if len(set(names)) != len(names):
            raise ValidationError("category names are not unique", "$")

    @classmethod
    def default(cls) -> "CategoryTable":
        return cls(tuple(enumerate(DEFAULT_CATEGORY_NAMES)))

    @property
    def ids(self) -> List[int]:
        return [i for i, _ in self.items]

    def name(self, cid: int) -> str:
        return self.items[cid][1]

    def id_of(self, name: str) -> int:
        key = name.strip().lower()
        for cid, n in self.items:
            if n.lower() == key:
                return cid
        raise KeyError(name)

    def __contains__(self, cid: object) -> bool:
        return isinstance(cid, int) and 0 <= cid < len(self.items)

    def __len__(self) -> int:
        return len(self.items)


DEFAULT_CATEGORY_NAMES = (
    "pedestrian", "car", "cyclist", "motorbike", "small vehicle",
    "medium vehicle", "large vehicle", "bus", "emergency vehicle",
)


@dataclass(frozen=True)
class VideoRecord:
    """One video's annotations: either tubes (ground truth or linked
    predictions) or raw per-frame detections."""

    video_id: str
    image_size: ImageSize
    frame_count: int
    tubes: Optional[Tuple[AgentTube, ...]] = None
    detections: Optional[Tuple[Detection, ...]] = None

    def __post_init__(self):
        if self.frame_count < 1:
            raise ValidationError("frame_count must be positive", "$.frame_count")
        if (self.tubes is None) == (self.detections is None):
            raise ValidationError("record must hold exactly one of tubes or detections", "$")
        if self.tubes is not None:
            object.__setattr__(self, "tubes", tuple(self.tubes))
            for ti, t in enumerate(self.tubes):
                if t.end >= self.frame_count:
                    raise ValidationError(f"frame {t.end} >= frame_count {self.frame_count}",
                                          f"$.tubes[{ti}]")
        if self.detections is not None:
            object.__setattr__(self, "detections", tuple(self.detections))
            for di, d in enumerate(self.detections):
                if d.frame_index >= self.frame_count:
                    raise ValidationError(
                        f"frame {d.frame_index} >= frame_count {self.frame_count}",
                        f"$.detections[{di}]")

    def frames(self) -> List[Tuple[int, List[Detection]]]:
        """Detections grouped by frame, in frame order (input order within a frame)."""
        grouped: Dict[int, List[Detection]] = {}
        for d in self.detections or ():
            grouped.setdefault(d.frame_index, []).append(d)
        return sorted(grouped.items())


# --------------------------------------------------------------------------
# JSON schemas

_SIZE_SCHEMA = {
    "type": "object",
    "required": ["width", "height"],
    "properties": {"width": {"type": "integer", "minimum": 1},
                   "height": {"type": "integer", "minimum": 1}},
}
_BOX_SCHEMA = {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4}
_SCORE_SCHEMA = {"type": "number", "minimum": 0, "maximum": 1}

DETECTIONS_SCHEMA = {
    "type": "object",
    "required": ["video_id", "image_size", "frame_count", "frames"],
    "properties": {
        "video_id": {"type": "string"},
        "image_size": _SIZE_SCHEMA,
        "frame_count": {"type": "integer", "minimum": 1},
        "frames": {"type": "array", "items": {
            "type": "object",
            "required": ["frame_index", "detections"],
            "properties": {
                "frame_index": {"type": "integer", "minimum": 0},
                "detections": {"type": "array", "items": {
                    "type": "object",
                    "required": ["box", "category", "score"],
                    "properties": {"box": _BOX_SCHEMA,
                                   "category": {"type": "integer", "minimum": 0},
                                   "score": _SCORE_SCHEMA},
                }},
            },
        }},
    },
}

TUBES_SCHEMA = {
    "type": "object",
    "required": ["video_id", "image_size", "frame_count", "tubes"],
    "properties": {
        "video_id": {"type": "string"},
        "image_size": _SIZE_SCHEMA,
        "frame_count": {"type": "integer", "minimum": 1},
        "tubes": {"type": "array", "items": {
            "type": "object",
            "required": ["category", "tube_score", "entries"],
            "properties": {
                "category": {"type": "integer", "minimum": 0},
                "tube_score": _SCORE_SCHEMA,
                "entries": {"type": "array", "minItems": 1, "items": {
                    "type": "object",
                    "required": ["frame_index", "box", "score"],
                    "properties": {"frame_index": {"type": "integer", "minimum": 0},
                                   "box": _BOX_SCHEMA,
                                   "score": _SCORE_SCHEMA},
                }},
            },
        }},
    },
}

CATEGORIES_SCHEMA = {
    "type": "array",
    "items": {"type": "object", "required": ["id", "name"],
              "properties": {"id": {"type": "integer", "minimum": 0},
                             "name": {"type": "string"}}},
}


def _json_path(error: jsonschema.ValidationError) -> str:
    out = "$"
    for part in error.absolute_path:
        out += f"[{part}]" if isinstance(part, int) else f".{part}"
    return out


def validate_document(document, schema) -> object:
    """Parse JSON text if needed and check it against ``schema``."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise ValidationError(f"malformed JSON: {e}") from e
    try:
        jsonschema.validate(document, schema)
    except jsonschema.ValidationError as e:
        raise ValidationError(e.message, _json_path(e)) from e
    return document


def _check_category(cid: int, categories: Optional[CategoryTable], path: str) -> int:
    if categories is not None and cid not in categories:
        raise ValidationError(f"unknown category id {cid}", path)
    return cid


def parse_detections(document, categories: Optional[CategoryTable] = None) -> VideoRecord:
    """Parse a ``detections.json`` document (text or already-decoded object)."""
    doc = validate_document(document, DETECTIONS_SCHEMA)
    size = ImageSize(doc["image_size"]["width"], doc["image_size"]["height"])
    dets = []
    for fi, frame in enumerate(doc["frames"]):
        idx = frame["frame_index"]
        if idx >= doc["frame_count"]:
            raise ValidationError(f"frame_index {idx} >= frame_count {doc['frame_count']}",
                                  f"$.frames[{fi}].frame_index")
        for di, d in enumerate(frame["detections"]):
            path = f"$.frames[{fi}].detections[{di}]"
            box = Box.from_seq(d["box"], path + ".box")
            cid = _check_category(d["category"], categories, path + ".category")
            dets.append(Detection(idx, box, cid, float(d["score"])))
    return VideoRecord(doc["video_id"], size, doc["frame_count"], detections=tuple(dets))


def parse_tubes(document, categories: Optional[CategoryTable] = None) -> VideoRecord:
    """Parse a ``tubes.json`` document (ground truth and predictions share it)."""
    doc = validate_document(document, TUBES_SCHEMA)
    size = ImageSize(doc["image_size"]["width"], doc["image_size"]["height"])
    tubes = []
    for ti, t in enumerate(doc["tubes"]):
        path = f"$.tubes[{ti}]"
        cid = _check_category(t["category"], categories, path + ".category")
        entries = []
        for ei, e in enumerate(t["entries"]):
            epath = f"{path}.entries[{ei}]"
            entries.append(TubeEntry(e["frame_index"], Box.from_seq(e["box"], epath + ".box"),
                                     float(e["score"])))
        try:
            tubes.append(AgentTube(cid, float(t["tube_score"]), tuple(entries)))
        except ValidationError as e:
            raise ValidationError(e.reason, f"{path}.{e.path}") from e
        if entries[-1].frame_index >= doc["frame_count"]:
            raise ValidationError(f"frame {entries[-1].frame_index} >= frame_count",
                                  f"{path}.entries[{len(entries) - 1}].frame_index")
    return VideoRecord(doc["video_id"], size, doc["frame_count"], tubes=tuple(tubes))


def parse_categories(document) -> CategoryTable:
    doc = validate_document(document, CATEGORIES_SCHEMA)
    return CategoryTable(tuple((c["id"], c["name"]) for c in doc))


def _header(record: VideoRecord) -> dict:
    return {"video_id": record.video_id,
            "image_size": {"width": record.image_size.width, "height": record.image_size.height},
            "frame_count": record.frame_count}


def tubes_to_dict(record: VideoRecord) -> dict:
    if record.tubes is None:
        raise ValidationError("record holds detections, not tubes")
    doc = _header(record)
    doc["tubes"] = [
        {"category": t.category, "tube_score": t.tube_score,
         "entries": [{"frame_index": e.frame_index, "box": e.box.as_list(), "score": e.score}
                     for e in t.entries]}
        for t in record.tubes
    ]
    return doc


def detections_to_dict(record: VideoRecord) -> dict:
    if record.detections is None:
        raise ValidationError("record holds tubes, not detections")
    doc = _header(record)
    doc["frames"] = [
        {"frame_index": idx,
         "detections": [{"box": d.box.as_list(), "category": d.category, "score": d.score}
                        for d in dets]}
        for idx, dets in record.frames()
    ]
    return doc


def serialize_tubes(record: VideoRecord) -> str:
    return json.dumps(tubes_to_dict(record), indent=1)


def serialize_detections(record: VideoRecord) -> str:
    return json.dumps(detections_to_dict(record), indent=1)


def serialize_categories(table: CategoryTable) -> str:
    return json.dumps([{"id": i, "name": n} for i, n in table.items], indent=1)


def category_stats(records: Iterable[VideoRecord]) -> Dict[int, int]:
    """Box-instance count per category (tube entries, or raw detections)."""
    counts: Counter = Counter()
    for r in records:
        for t in r.tubes or ():
            counts[t.category] += len(t.entries)
        for d in r.detections or ():
            counts[d.category] += 1
    return dict(sorted(counts.items()))


def split_dataset(video_ids: Sequence[str], ratio: float = 0.75,
                  seed: int = 0) -> Tuple[List[str], List[str]]:
    """Seeded split by whole video; ``round(ratio * N)`` videos go to train.

    Both halves keep the input order.
    """
    if not video_ids:
        raise ValueError("cannot split an empty list")
    if not (0.0 < ratio < 1.0):
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    if len(set(video_ids)) != len(video_ids):
        raise ValueError("video ids must be unique")
    n_train = int(math.floor(ratio * len(video_ids) + 0.5))
    order = list(range(len(video_ids)))
    random.Random(seed).shuffle(order)
    train_idx = set(order[:n_train])
    train = [v for i, v in enumerate(video_ids) if i in train_idx]
    val = [v for i, v in enumerate(video_ids) if i not in train_idx]
    return train, val
