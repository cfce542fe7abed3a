"""Greedy online linking of per-frame detections into agent tubes, and the
spatiotemporal tube overlap used for evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple, Union

from .datamodel import AgentTube, Box, Detection, TubeEntry
from .geometry import iou

log = logging.getLogger(__name__)

UNION = "union"
INTERSECTION = "intersection"


@dataclass(frozen=True)
class LinkParams:
    link_iou_threshold: float = 0.5
    max_gap: int = 0
    min_tube_length: int = 1
    score_aggregation: str = "mean"

    def __post_init__(self):
        if not (0.0 < self.link_iou_threshold <= 1.0):
            raise ValueError("link_iou_threshold must lie in (0, 1]")
        if self.max_gap < 0:
            raise ValueError("max_gap must be >= 0")
        if self.min_tube_length < 1:
            raise ValueError("min_tube_length must be >= 1")
        if self.score_aggregation not in ("mean", "max"):
            raise ValueError(f"unknown score aggregation {self.score_aggregation!r}")


def _lerp_box(a: Box, b: Box, t: float) -> Box:
    return Box.from_seq([u + (v - u) * t for u, v in zip(a.as_list(), b.as_list())])


class _Track:
    def __init__(self, tid: int, det: Detection, source: Tuple[int, int]):
        self.tid = tid
        self.category = det.category
        self.entries: List[TubeEntry] = [TubeEntry(det.frame_index, det.box, det.score)]
        self.scores = [det.score]
        self.sources = [source]

    @property
    def last(self) -> TubeEntry:
        return self.entries[-1]

    def extend(self, det: Detection, source: Tuple[int, int]):
        prev = self.last
        gap = det.frame_index - prev.frame_index
        for k in range(1, gap):
            t = k / gap
            self.entries.append(TubeEntry(prev.frame_index + k, _lerp_box(prev.box, det.box, t),
                                          prev.score + (det.score - prev.score) * t))
        self.entries.append(TubeEntry(det.frame_index, det.box, det.score))
        self.scores.append(det.score)
        self.sources.append(source)


class TubeLinker:
    """Stateful frame-by-frame linker.

    Active tubes claim same-category detections in descending IoU order
    (ties: older tube first, then detection input order). Unclaimed
    detections open new tubes. A tube missing for more than ``max_gap``
    frames is closed; shorter gaps are filled by linear interpolation.
    ``assignments`` maps ``(frame_index, position in frame)`` to the tube id.
    """

    def __init__(self, params: LinkParams = LinkParams()):
        self.params = params
        self.active: List[_Track] = []
        self.closed: List[_Track] = []
        self.assignments: Dict[Tuple[int, int], int] = {}
        self._next_id = 0
        self._last_frame = None

    def _close_stale(self, frame_index: int):
        keep = []
        for tr in self.active:
            if frame_index - tr.last.frame_index - 1 > self.params.max_gap:
                self.closed.append(tr)
            else:
                keep.append(tr)
        self.active = keep

    def update(self, frame_index: int, detections: Sequence[Detection]) -> None:
        if self._last_frame is not None and frame_index <= self._last_frame:
            raise ValueError(f"frames out of order: {frame_index} after {self._last_frame}")
        for d in detections:
            if d.frame_index != frame_index:
                raise ValueError(f"detection of frame {d.frame_index} passed for frame {frame_index}")
        self._last_frame = frame_index
        self._close_stale(frame_index)

        thr = self.params.link_iou_threshold
        pairs = []
        for ti, tr in enumerate(self.active):
            for di, d in enumerate(detections):
                if d.category != tr.category:
                    continue
                v = iou(tr.last.box, d.box)
                if v >= thr:
                    pairs.append((-v, ti, di))
        pairs.sort()

        used_tracks, used_dets = set(), set()
        for _, ti, di in pairs:
            if ti in used_tracks or di in used_dets:
                continue
            used_tracks.add(ti)
            used_dets.add(di)
            tr = self.active[ti]
            tr.extend(detections[di], (frame_index, di))
            self.assignments[(frame_index, di)] = tr.tid

        for di, d in enumerate(detections):
            if di in used_dets:
                continue
            tr = _Track(self._next_id, d, (frame_index, di))
            self._next_id += 1
            self.active.append(tr)
            self.assignments[(frame_index, di)] = tr.tid

    def finish(self) -> List[AgentTube]:
        tracks = sorted(self.closed + self.active, key=lambda t: t.tid)
        self.closed, self.active = [], []
        out = []
        for tr in tracks:
            if len(tr.entries) < self.params.min_tube_length:
                continue
            if self.params.score_aggregation == "max":
                score = max(tr.scores)
            else:
                score = sum(tr.scores) / len(tr.scores)
            out.append(AgentTube(tr.category, min(max(score, 0.0), 1.0), tuple(tr.entries)))
        return out


FramesLike = Union[Mapping[int, Sequence[Detection]], Iterable[Tuple[int, Sequence[Detection]]]]


def link_detections(frames: FramesLike, params: LinkParams = LinkParams()) -> List[AgentTube]:
    """Link ``(frame_index, detections)`` pairs, given in frame order, into tubes.

    Tubes are returned in order of creation and never mix categories.
    """
    items = frames.items() if isinstance(frames, Mapping) else frames
    linker = TubeLinker(params)
    for frame_index, dets in items:
        linker.update(frame_index, list(dets))
    return linker.finish()


def tube_iou(a: AgentTube, b: AgentTube, span: str = UNION) -> float:
    """Mean per-frame box IoU over the union (default) or intersection of the
    two tubes' frames; frames covered by only one tube contribute 0."""
    boxes_a, boxes_b = a.box_at(), b.box_at()
    common = boxes_a.keys() & boxes_b.keys()
    if span == UNION:
        n = len(boxes_a.keys() | boxes_b.keys())
    elif span == INTERSECTION:
        n = len(common)
    else:
        raise ValueError(f"unknown span convention {span!r}")
    if n == 0 or not common:
        return 0.0
    return sum(iou(boxes_a[t], boxes_b[t]) for t in sorted(common)) / n
