"""Box-preserving Mosaic, Mixup and Copy-paste augmentations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .datamodel import BOUND_TOL, Box, ImageSize, ValidationError, validate_document
from .enhance import Raster, read_png
from .fileio import atomic_write_json, atomic_write_png

DEFAULT_JITTER = (0.25, 0.75)
DEFAULT_MIN_VISIBLE = 0.25


@dataclass(frozen=True, eq=False)
class AnnotatedImage:
    image: Raster
    boxes: Tuple[Tuple[Box, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple((b, int(c)) for b, c in self.boxes))
        for i, (b, _) in enumerate(self.boxes):
            if not isinstance(b, Box):
                raise ValidationError("expected a Box", f"boxes[{i}]")

    def __eq__(self, other):
        if not isinstance(other, AnnotatedImage):
            return NotImplemented
        return self.image == other.image and self.boxes == other.boxes


@dataclass(frozen=True)
class MosaicParams:
    output_size: ImageSize
    center: Tuple[float, float] = (0.5, 0.5)
    min_visible_fraction: float = DEFAULT_MIN_VISIBLE
    jitter: Tuple[float, float] = field(default=DEFAULT_JITTER)

    def __post_init__(self):
        lo, hi = self.jitter
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError(f"invalid jitter range {self.jitter}")
        for v in self.center:
            if not (lo <= v <= hi):
                raise ValueError(f"mosaic center {self.center} outside jitter range {self.jitter}")
        if not (0.0 < self.min_visible_fraction <= 1.0):
            raise ValueError("min_visible_fraction must lie in (0, 1]")

    @classmethod
    def random(cls, output_size: ImageSize, seed: int, **kwargs) -> "MosaicParams":
        lo, hi = kwargs.get("jitter", DEFAULT_JITTER)
        rng = np.random.default_rng(seed)
        cx, cy = rng.uniform(lo, hi, size=2)
        return cls(output_size, (float(cx), float(cy)), **kwargs)


def _box_px_to_norm(x1, y1, x2, y2, w, h) -> Box:
    vals = [x1 / w, y1 / h, x2 / w, y2 / h]
    return Box.from_seq([min(max(v, 0.0), 1.0) for v in vals])


def _quadrants(params: MosaicParams):
    W, H = params.output_size.width, params.output_size.height
    xc = int(round(params.center[0] * W))
    yc = int(round(params.center[1] * H))
    # (x0, y0, x1, y1) and which corner of the scaled input touches (xc, yc)
    return xc, yc, [
        ((0, 0, xc, yc), "br"),
        ((xc, 0, W, yc), "bl"),
        ((0, yc, xc, H), "tr"),
        ((xc, yc, W, H), "tl"),
    ]


def mosaic(inputs: Sequence[AnnotatedImage], params: MosaicParams) -> AnnotatedImage:
    """Tile four images around ``params.center`` (top-left, top-right,
    bottom-left, bottom-right).

    Each input is scaled, aspect preserved, to cover its quadrant with the
    corner nearest the center pinned to it; overflow away from the center is
    cropped. Boxes are remapped with the same affine map, clipped to the
    quadrant and dropped when less than ``min_visible_fraction`` of their area
    survives.
    """
    if len(inputs) != 4:
        raise ValueError(f"mosaic needs exactly 4 inputs, got {len(inputs)}")
    channels = {a.image.channels for a in inputs}
    if len(channels) != 1:
        raise ValueError("mosaic inputs must share a channel count")
    W, H = params.output_size.width, params.output_size.height
    canvas = np.zeros((H, W, channels.pop()))
    xc, yc, quads = _quadrants(params)
    out_boxes: List[Tuple[Box, int]] = []

    for item, ((qx0, qy0, qx1, qy1), anchor) in zip(inputs, quads):
        qw, qh = qx1 - qx0, qy1 - qy0
        if qw <= 0 or qh <= 0:
            continue
        src = item.image.data
        h_in, w_in = src.shape[:2]
        s = max(qw / w_in, qh / h_in)
        ox = xc - w_in * s if anchor in ("br", "tr") else float(xc)
        oy = yc - h_in * s if anchor in ("br", "bl") else float(yc)

        cols = np.arange(qx0, qx1)
        rows = np.arange(qy0, qy1)
        sc = np.clip(np.floor((cols + 0.5 - ox) / s).astype(int), 0, w_in - 1)
        sr = np.clip(np.floor((rows + 0.5 - oy) / s).astype(int), 0, h_in - 1)
        canvas[qy0:qy1, qx0:qx1] = src[np.ix_(sr, sc)]

        for box, cat in item.boxes:
            bx1 = ox + box.x1 * w_in * s
            by1 = oy + box.y1 * h_in * s
            bx2 = ox + box.x2 * w_in * s
            by2 = oy + box.y2 * h_in * s
            cx1, cy1 = max(bx1, qx0), max(by1, qy0)
            cx2, cy2 = min(bx2, qx1), min(by2, qy1)
            if cx1 > cx2 or cy1 > cy2:
                continue
            full = (bx2 - bx1) * (by2 - by1)
            if full > 0:
                if (cx2 - cx1) * (cy2 - cy1) / full < params.min_visible_fraction:
                    continue
            elif (cx1, cy1, cx2, cy2) != (bx1, by1, bx2, by2):
                continue
            out_boxes.append((_box_px_to_norm(cx1, cy1, cx2, cy2, W, H), cat))

    return AnnotatedImage(Raster(canvas), tuple(out_boxes))


def mixup(a: AnnotatedImage, b: AnnotatedImage, lam: float) -> AnnotatedImage:
    """Blend ``lam * a + (1 - lam) * b``; both label sets are kept at full weight."""
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"mixup lambda must lie in [0, 1], got {lam}")
    if a.image.data.shape != b.image.data.shape:
        raise ValueError(f"mixup shape mismatch: {a.image.data.shape} vs {b.image.data.shape}")
    data = lam * a.image.data + (1.0 - lam) * b.image.data
    return AnnotatedImage(Raster(np.clip(data, 0.0, 1.0)), a.boxes + b.boxes)


def _crop_rect(box: Box, w: int, h: int) -> Tuple[int, int, int, int]:
    """Smallest pixel rectangle covering ``box`` (at least one pixel)."""
    x0 = int(math.floor(box.x1 * w + BOUND_TOL))
    y0 = int(math.floor(box.y1 * h + BOUND_TOL))
    x1 = max(int(math.ceil(box.x2 * w - BOUND_TOL)), x0 + 1)
    y1 = max(int(math.ceil(box.y2 * h - BOUND_TOL)), y0 + 1)
    return x0, y0, min(x1, w), min(y1, h)


def paste_locations(source: AnnotatedImage, target: AnnotatedImage,
                    selection: Sequence[int], seed: int) -> List[Tuple[int, int]]:
    """Top-left pixel of every pasted crop, as :func:`copy_paste` places them.

    One ``Generator.integers`` draw for x then one for y per selected box.
    """
    rng = np.random.default_rng(seed)
    sw, sh = source.image.width, source.image.height
    tw, th = target.image.width, target.image.height
    out = []
    for idx in selection:
        if not (0 <= idx < len(source.boxes)):
            raise IndexError(f"selection index {idx} out of range")
        x0, y0, x1, y1 = _crop_rect(source.boxes[idx][0], sw, sh)
        cw, ch = x1 - x0, y1 - y0
        if cw > tw or ch > th:
            raise ValueError(f"box {idx} ({cw}x{ch} px) does not fit in target {tw}x{th}")
        dx = int(rng.integers(0, tw - cw + 1))
        dy = int(rng.integers(0, th - ch + 1))
        out.append((dx, dy))
    return out


def copy_paste(source: AnnotatedImage, target: AnnotatedImage,
               selection: Sequence[int], seed: int) -> AnnotatedImage:
    """Paste rectangular crops of the selected source boxes into the target.

    Pasted pixels overwrite the target; each paste appends an annotation with
    the source category, and existing target annotations are left as-is.
    """
    if source.image.channels != target.image.channels:
        raise ValueError("source and target must share a channel count")
    locs = paste_locations(source, target, selection, seed)
    sw, sh = source.image.width, source.image.height
    tw, th = target.image.width, target.image.height
    canvas = target.image.data.copy()
    boxes = list(target.boxes)
    for idx, (dx, dy) in zip(selection, locs):
        box, cat = source.boxes[idx]
        x0, y0, x1, y1 = _crop_rect(box, sw, sh)
        canvas[dy:dy + y1 - y0, dx:dx + x1 - x0] = source.image.data[y0:y1, x0:x1]
        # keep the box's sub-pixel offset inside its crop
        nx1 = dx + box.x1 * sw - x0
        ny1 = dy + box.y1 * sh - y0
        boxes.append((_box_px_to_norm(nx1, ny1, nx1 + box.width * sw, ny1 + box.height * sh,
                                      tw, th), cat))
    return AnnotatedImage(Raster(canvas), tuple(boxes))


# --------------------------------------------------------------------------
# PNG + JSON sidecar

ANNOTATED_SCHEMA = {
    "type": "object",
    "required": ["image", "boxes"],
    "properties": {
        "image": {"type": "string", "minLength": 1},
        "width": {"type": "integer", "minimum": 1},
        "height": {"type": "integer", "minimum": 1},
        "boxes": {"type": "array", "items": {
            "type": "object",
            "required": ["box", "category"],
            "properties": {"box": {"type": "array", "items": {"type": "number"},
                                   "minItems": 4, "maxItems": 4},
                           "category": {"type": "integer", "minimum": 0}},
        }},
    },
}


def validate_annotated(doc) -> dict:
    """Schema-check a sidecar document (a dict or JSON text) and its boxes."""
    doc = validate_document(doc, ANNOTATED_SCHEMA)
    for i, ann in enumerate(doc["boxes"]):
        Box.from_seq(ann["box"], f"$.boxes[{i}].box")
    return doc


def load_annotated(sidecar) -> AnnotatedImage:
    """Read ``{"image": "<png path>", "boxes": [{"box": [...], "category": int}]}``.

    The image path is resolved relative to the sidecar.
    """
    sidecar = Path(sidecar)
    doc = validate_annotated(sidecar.read_text(encoding="utf-8"))
    boxes = [(Box.from_seq(ann["box"]), ann["category"]) for ann in doc["boxes"]]
    return AnnotatedImage(read_png(sidecar.parent / doc["image"]), tuple(boxes))


def annotated_to_dict(item: AnnotatedImage, image_name: str) -> dict:
    return {"image": image_name,
            "width": item.image.width, "height": item.image.height,
            "boxes": [{"box": b.as_list(), "category": c} for b, c in item.boxes]}


def save_annotated(item: AnnotatedImage, sidecar) -> None:
    sidecar = Path(sidecar)
    png = sidecar.with_suffix(".png")
    atomic_write_png(png, item.image)
    atomic_write_json(sidecar, annotated_to_dict(item, png.name))


def pick_lambda(seed: int, alpha: float = 32.0) -> float:
    return float(np.random.default_rng(seed).beta(alpha, alpha))


def parse_selection(text: Optional[str], count: int) -> List[int]:
    if text is None or text == "all":
        return list(range(count))
    if not text.strip():
        return []
    return [int(t) for t in text.split(",")]
