"""Box overlap, the minimum-point-distance IoU (MPDIoU) and its loss gradient."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Tuple

from .datamodel import Box, ImageSize

NORMALIZED = "normalized"
PIXEL = "pixel"

# Coordinate differences below this count as coincident edges.
KINK_TOL = 1e-12


class NonDifferentiableError(ValueError):
    """The loss has a kink at the requested point."""


@dataclass(frozen=True)
class MpdIouResult:
    iou: float
    d1_sq: float
    d2_sq: float
    mpdiou: float
    denominator: float

    def to_dict(self) -> dict:
        return asdict(self)


def _intersection(a: Box, b: Box) -> Tuple[float, float]:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    return iw, ih


def iou(a: Box, b: Box) -> float:
    """Intersection over union.

    Zero-area boxes score 0 against everything except an identical
    zero-area box, which scores 1.
    """
    iw, ih = _intersection(a, b)
    inter = iw * ih if (iw > 0 and ih > 0) else 0.0
    union = a.area + b.area - inter
    if union <= 0.0:
        return 1.0 if a == b else 0.0
    return inter / union


def _scales(size: Optional[ImageSize], convention: str) -> Tuple[float, float]:
    if convention == NORMALIZED:
        return 1.0, 1.0
    if convention == PIXEL:
        if size is None:
            raise ValueError("pixel convention needs an image size")
        return float(size.width), float(size.height)
    raise ValueError(f"unknown convention {convention!r}")


def mpd_iou(pred: Box, gt: Box, size: Optional[ImageSize] = None,
            convention: str = NORMALIZED) -> MpdIouResult:
    """IoU minus the squared top-left and bottom-right corner distances, each
    divided by ``w**2 + h**2``.

    In the normalized convention ``w = h = 1``; in the pixel convention
    corner distances and ``w, h`` are measured in pixels of ``size``.
    """
    sx, sy = _scales(size, convention)
    den = sx * sx + sy * sy
    d1 = ((pred.x1 - gt.x1) * sx) ** 2 + ((pred.y1 - gt.y1) * sy) ** 2
    d2 = ((pred.x2 - gt.x2) * sx) ** 2 + ((pred.y2 - gt.y2) * sy) ** 2
    v = iou(pred, gt)
    return MpdIouResult(iou=v, d1_sq=d1, d2_sq=d2, mpdiou=v - d1 / den - d2 / den, denominator=den)


def mpd_iou_loss(pred: Box, gt: Box, size: Optional[ImageSize] = None,
                 convention: str = NORMALIZED) -> float:
    return 1.0 - mpd_iou(pred, gt, size, convention).mpdiou


def _step(v: float) -> float:
    """Derivative of max(v, 0), taking the midpoint 1/2 at the kink."""
    if v > KINK_TOL:
        return 1.0
    if v < -KINK_TOL:
        return 0.0
    return 0.5


def _overlap_1d(p1: float, p2: float, g1: float, g2: float):
    """Overlap length on one axis and its derivatives w.r.t. (p1, p2)."""
    length = min(p2, g2) - max(p1, g1)
    return length, -_step(p1 - g1), _step(g2 - p2)


def _iou_grad(pred: Box, gt: Box, subgradient: bool):
    iw, dw1, dw2 = _overlap_1d(pred.x1, pred.x2, gt.x1, gt.x2)
    ih, dh1, dh2 = _overlap_1d(pred.y1, pred.y2, gt.y1, gt.y2)
    if iw < -KINK_TOL or ih < -KINK_TOL:
        return [0.0] * 4
    if not subgradient:
        if iw <= KINK_TOL or ih <= KINK_TOL:
            raise NonDifferentiableError("boxes touch along an edge")
        for axis, (p, g) in {"x1": (pred.x1, gt.x1), "y1": (pred.y1, gt.y1),
                             "x2": (pred.x2, gt.x2), "y2": (pred.y2, gt.y2)}.items():
            if abs(p - g) <= KINK_TOL:
                raise NonDifferentiableError(f"{axis} edges of pred and gt coincide")

    sw, sh = _step(iw), _step(ih)
    iw, ih = max(iw, 0.0), max(ih, 0.0)
    inter = iw * ih
    pw, ph = pred.width, pred.height
    union = pw * ph + gt.area - inter
    if union <= 0.0:
        return [0.0] * 4
    # d(inter) and d(area_pred) w.r.t. (x1, y1, x2, y2)
    d_inter = (sw * dw1 * ih, sh * dh1 * iw, sw * dw2 * ih, sh * dh2 * iw)
    d_area = (-ph, -pw, ph, pw)
    return [(di * union - inter * (da - di)) / (union * union) for di, da in zip(d_inter, d_area)]


def mpd_iou_grad(pred: Box, gt: Box, size: Optional[ImageSize] = None,
                 convention: str = NORMALIZED, subgradient: bool = False):
    """Gradient of :func:`mpd_iou_loss` w.r.t. ``(x1, y1, x2, y2)`` of ``pred``.

    Raises :class:`NonDifferentiableError` at kinks of the IoU term (edges
    coinciding or touching) unless ``subgradient`` is set. The subgradient
    takes, at each kink of ``max``/``min``/overlap clamping, the midpoint of
    the two one-sided derivatives; for identical boxes this yields 0.
    """
    sx, sy = _scales(size, convention)
    den = sx * sx + sy * sy
    g_iou = _iou_grad(pred, gt, subgradient)
    g_dist = (
        2.0 * (pred.x1 - gt.x1) * sx * sx / den,
        2.0 * (pred.y1 - gt.y1) * sy * sy / den,
        2.0 * (pred.x2 - gt.x2) * sx * sx / den,
        2.0 * (pred.y2 - gt.y2) * sy * sy / den,
    )
    return [gd - gi for gi, gd in zip(g_iou, g_dist)]
