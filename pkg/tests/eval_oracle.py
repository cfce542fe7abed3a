"""Brute-force reference for tube matching and video-mAP.

Written independently of roadtube.evaluation: matching by exhaustive search
over assignments, AP from exact rational precision/recall points.
"""

from fractions import Fraction

import numpy as np

from roadtube.datamodel import AgentTube, Box, ImageSize, TubeEntry, VideoRecord
from roadtube.tubes import tube_iou


def brute_match(gt, pred, threshold):
    """Assignment that is lexicographically best in score order.

    Every prediction, visited by descending score (stable), prefers the
    highest-IoU eligible GT, then the lowest GT index; exhaustive search over
    all injective partial assignments picks the lexicographic maximum.
    """
    order = sorted(range(len(pred)), key=lambda i: (-pred[i].tube_score, i))
    iou_tab = [[tube_iou(pred[p], g) if g.category == pred[p].category else -1.0 for g in gt]
               for p in range(len(pred))]
    best_key, best = None, None

    def rec(k, used, chosen):
        nonlocal best_key, best
        if k == len(order):
            key = tuple((iou_tab[p][g], -g) if g is not None else (-1.0, 0)
                        for p, g in zip(order, chosen))
            if best_key is None or key > best_key:
                best_key, best = key, list(chosen)
            return
        p = order[k]
        rec(k + 1, used, chosen + [None])
        for g in range(len(gt)):
            if g not in used and iou_tab[p][g] >= threshold:
                rec(k + 1, used | {g}, chosen + [g])

    rec(0, frozenset(), [])
    return [(p, g is not None) for p, g in zip(order, best)]


def brute_ap(flags, num_gt):
    if num_gt == 0:
        return Fraction(1) if not flags else Fraction(0)
    prec = []
    tp = 0
    for k, f in enumerate(flags, 1):
        tp += f
        prec.append(Fraction(tp, k))
    total = Fraction(0)
    for k, f in enumerate(flags):
        if f:
            total += max(prec[k:]) / num_gt
    return total


def brute_video_map(gt_records, pred_records, thresholds):
    gt_by = {r.video_id: r.tubes for r in gt_records}
    cats = sorted({t.category for r in gt_records for t in r.tubes}
                  | {t.category for r in pred_records for t in r.tubes})
    n_gt = {c: sum(t.category == c for r in gt_records for t in r.tubes) for c in cats}
    out = []
    for thr in thresholds:
        rows = {c: [] for c in cats}
        for vi, r in enumerate(pred_records):
            for p, tp in brute_match(gt_by.get(r.video_id, ()), r.tubes, thr):
                t = r.tubes[p]
                rows[t.category].append((-t.tube_score, vi, p, tp))
        aps = {c: brute_ap([x[3] for x in sorted(rows[c])], n_gt[c]) for c in cats}
        m = 100 * sum(aps.values()) / len(aps) if aps else Fraction(0)
        out.append((aps, m))
    return out


def random_video(rng, video_id, max_tubes=10, frames=12, n_cat=3):
    """Random GT tubes plus perturbed / spurious predictions; at most
    ``max_tubes`` tubes overall."""
    size = ImageSize(100, 100)

    def rand_tube(cat, score):
        start = int(rng.integers(0, frames - 1))
        n = int(rng.integers(1, frames - start + 1))
        x, y = rng.uniform(0, 0.6, 2)
        w, h = rng.uniform(0.1, 0.4, 2)
        return AgentTube(cat, score, tuple(TubeEntry(start + k, Box(x, y, x + w, y + h), 1.0)
                                           for k in range(n)))

    n_gt = int(rng.integers(0, max_tubes // 2 + 1))
    gt = [rand_tube(int(rng.integers(0, n_cat)), 1.0) for _ in range(n_gt)]
    preds = []
    for g in gt:
        if rng.random() < 0.8:
            lo = int(rng.integers(0, len(g.entries)))
            hi = int(rng.integers(lo + 1, len(g.entries) + 1))
            d = rng.normal(0, 0.06, 4)
            entries = []
            for e in g.entries[lo:hi]:
                b = np.clip(np.array(e.box.as_list()) + d, 0, 1)
                b[2], b[3] = max(b[2], b[0]), max(b[3], b[1])
                entries.append(TubeEntry(e.frame_index, Box(*map(float, b)), 1.0))
            preds.append(AgentTube(g.category, float(rng.integers(1, 10)) / 10, tuple(entries)))
    while len(preds) < max_tubes - n_gt and rng.random() < 0.5:
        preds.append(rand_tube(int(rng.integers(0, n_cat)), float(rng.integers(1, 10)) / 10))
    order = rng.permutation(len(preds))
    preds = [preds[i] for i in order]
    return (VideoRecord(video_id, size, frames, tubes=tuple(gt)),
            VideoRecord(video_id, size, frames, tubes=tuple(preds)))
