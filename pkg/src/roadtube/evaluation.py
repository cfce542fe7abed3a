"""Video-mAP over agent tubes.

Per-category AP values are fractions in [0, 1]; mAP values are reported in
percent, matching how challenge leaderboards print them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .datamodel import AgentTube, CategoryTable, ValidationError, VideoRecord
from .tubes import UNION, tube_iou

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.1, 0.2, 0.5)
ALL_POINT = "all_point"


@dataclass(frozen=True)
class EvalConfig:
    thresholds: Tuple[float, ...] = DEFAULT_THRESHOLDS
    ap_mode: str = ALL_POINT
    span: str = UNION

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        if not self.thresholds:
            raise ValueError("at least one threshold is required")
        for t in self.thresholds:
            if not (0.0 < t <= 1.0):
                raise ValueError(f"threshold {t} outside (0, 1]")
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ValueError("thresholds must be strictly increasing")
        if self.ap_mode != ALL_POINT:
            raise ValueError(f"unsupported AP mode {self.ap_mode!r}")


@dataclass
class ThresholdResult:
    threshold: float
    ap: Dict[int, float]
    map: float
    matches: int


@dataclass
class EvalReport:
    config: EvalConfig
    per_threshold: List[ThresholdResult]
    overall: float
    gt_tubes: Dict[int, int]
    pred_tubes: Dict[int, int]
    unmatched_pred_videos: List[str] = field(default_factory=list)

    def to_dict(self, categories: Optional[CategoryTable] = None) -> dict:
        def key(cid):
            return categories.name(cid) if categories is not None and cid in categories else str(cid)

        return {
            "ap_mode": self.config.ap_mode,
            "tube_iou_span": self.config.span,
            "thresholds": list(self.config.thresholds),
            "per_threshold": [
                {"threshold": r.threshold, "map": r.map, "matches": r.matches,
                 "ap": {key(c): v for c, v in sorted(r.ap.items())}}
                for r in self.per_threshold
            ],
            "overall": self.overall,
            "counts": {
                "gt_tubes": {key(c): n for c, n in sorted(self.gt_tubes.items())},
                "pred_tubes": {key(c): n for c, n in sorted(self.pred_tubes.items())},
            },
            "unmatched_pred_videos": list(self.unmatched_pred_videos),
        }


def score_order(pred: Sequence[AgentTube]) -> List[int]:
    """Indices of ``pred`` by descending tube score; ties keep input order."""
    return sorted(range(len(pred)), key=lambda i: -pred[i].tube_score)


def match_tubes(gt: Sequence[AgentTube], pred: Sequence[AgentTube], threshold: float,
                span: str = UNION) -> List[Tuple[int, bool]]:
    """Greedy score-ordered matching within one video.

    Each prediction takes the unmatched same-category GT tube with the highest
    tube IoU at or above ``threshold`` (ties: lowest GT index).
    """
    taken = [False] * len(gt)
    out = []
    for pi in score_order(pred):
        p = pred[pi]
        best, best_iou = -1, -1.0
        for gi, g in enumerate(gt):
            if taken[gi] or g.category != p.category:
                continue
            v = tube_iou(p, g, span)
            if v >= threshold and v > best_iou:
                best, best_iou = gi, v
        if best >= 0:
            taken[best] = True
        out.append((pi, best >= 0))
    return out


def average_precision(labels: Sequence[bool], num_gt: int) -> float:
    """All-point interpolated AP of a ranked list of TP/FP flags."""
    if num_gt <= 0:
        return 1.0 if not labels else 0.0
    recall, precision = [0.0], [0.0]
    tp = 0
    for k, is_tp in enumerate(labels, start=1):
        tp += bool(is_tp)
        recall.append(tp / num_gt)
        precision.append(tp / k)
    recall.append(1.0)
    precision.append(0.0)
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    return sum((recall[i] - recall[i - 1]) * precision[i]
               for i in range(1, len(recall)) if recall[i] != recall[i - 1])


def video_map(gt: Sequence[VideoRecord], pred: Sequence[VideoRecord],
              config: EvalConfig = EvalConfig(),
              categories: Optional[CategoryTable] = None) -> EvalReport:
    """Per-threshold mAP with tubes pooled per category across videos.

    Predictions for videos missing from ``gt`` are kept as false positives.
    Categories with neither GT nor predictions are left out of the mean.
    """
    gt_by_video: Dict[str, Tuple[AgentTube, ...]] = {}
    for r in gt:
        if r.tubes is None:
            raise ValidationError(f"ground truth for {r.video_id!r} holds detections, not tubes")
        if r.video_id in gt_by_video:
            raise ValidationError(f"duplicate ground-truth video {r.video_id!r}")
        gt_by_video[r.video_id] = r.tubes
    pred_by_video: Dict[str, Tuple[AgentTube, ...]] = {}
    for r in pred:
        if r.tubes is None:
            raise ValidationError(f"predictions for {r.video_id!r} hold detections, not tubes")
        if r.video_id in pred_by_video:
            raise ValidationError(f"duplicate prediction video {r.video_id!r}")
        pred_by_video[r.video_id] = r.tubes

    unmatched = [v for v in pred_by_video if v not in gt_by_video]
    for v in unmatched:
        log.warning("predictions for unknown video %r counted as false positives", v)

    gt_counts: Dict[int, int] = {}
    pred_counts: Dict[int, int] = {}
    for tubes in gt_by_video.values():
        for t in tubes:
            gt_counts[t.category] = gt_counts.get(t.category, 0) + 1
    for tubes in pred_by_video.values():
        for t in tubes:
            pred_counts[t.category] = pred_counts.get(t.category, 0) + 1
    if categories is not None:
        for cid in list(gt_counts) + list(pred_counts):
            if cid not in categories:
                raise ValidationError(f"unknown category id {cid}")
    cats = sorted(set(gt_counts) | set(pred_counts))

    results = []
    for thr in config.thresholds:
        # (score, video order, pred index, is_tp) per category
        ranked: Dict[int, List[Tuple[float, int, int, bool]]] = {c: [] for c in cats}
        matches = 0
        for vi, (vid, ptubes) in enumerate(pred_by_video.items()):
            for pi, is_tp in match_tubes(gt_by_video.get(vid, ()), ptubes, thr, config.span):
                t = ptubes[pi]
                ranked[t.category].append((t.tube_score, vi, pi, is_tp))
                matches += is_tp
        ap = {}
        for c in cats:
            rows = sorted(ranked[c], key=lambda r: (-r[0], r[1], r[2]))
            ap[c] = average_precision([r[3] for r in rows], gt_counts.get(c, 0))
        m = 100.0 * sum(ap.values()) / len(ap) if ap else 0.0
        results.append(ThresholdResult(thr, ap, m, matches))

    overall = sum(r.map for r in results) / len(results)
    return EvalReport(config, results, overall, dict(sorted(gt_counts.items())),
                      dict(sorted(pred_counts.items())), unmatched)
