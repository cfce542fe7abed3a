"""Seeded synthetic mini-dataset: dark frames, GT tubes, and noisy
per-category branch detections."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List

import numpy as np

from .datamodel import (AgentTube, Box, CategoryTable, Detection, ImageSize, TubeEntry,
                        VideoRecord, serialize_categories, serialize_detections,
                        serialize_tubes)
from .enhance import Raster
from .fileio import atomic_write_json, atomic_write_png, atomic_write_text

# pedestrian, car, medium vehicle, large vehicle, bus
SYNTH_CATEGORIES = (0, 1, 5, 6, 7)


def _r(v: float, nd: int = 6) -> float:
    return float(round(v, nd))


def _clip_box(x1, y1, x2, y2) -> Box:
    x1, x2 = sorted((min(max(x1, 0.0), 1.0), min(max(x2, 0.0), 1.0)))
    y1, y2 = sorted((min(max(y1, 0.0), 1.0), min(max(y2, 0.0), 1.0)))
    return Box(_r(x1), _r(y1), _r(x2), _r(y2))


def make_video(video_id: str, seed: int, frames: int, size: ImageSize):
    """Return ``(gt_record, {category: branch detection record}, [Raster per frame])``."""
    rng = np.random.default_rng(seed)
    tubes: List[AgentTube] = []
    for _ in range(int(rng.integers(2, 6))):
        cat = int(rng.choice(SYNTH_CATEGORIES))
        length = int(rng.integers(max(2, frames // 2), frames + 1))
        start = int(rng.integers(0, frames - length + 1))
        w, h = rng.uniform(0.12, 0.3, size=2)
        x, y = rng.uniform(0.0, 1.0 - w), rng.uniform(0.0, 1.0 - h)
        vx, vy = rng.uniform(-0.015, 0.015, size=2)
        entries = []
        for k in range(length):
            cx = min(max(x + vx * k, 0.0), 1.0 - w)
            cy = min(max(y + vy * k, 0.0), 1.0 - h)
            entries.append(TubeEntry(start + k, _clip_box(cx, cy, cx + w, cy + h), 1.0))
        tubes.append(AgentTube(cat, 1.0, tuple(entries)))
    gt = VideoRecord(video_id, size, frames, tubes=tuple(tubes))

    per_cat: Dict[int, List[Detection]] = {}
    for t in tubes:
        for e in t.entries:
            if rng.random() < 0.12:
                continue
            for dup in range(1 + int(rng.random() < 0.25)):
                noise = rng.normal(0.0, 0.025 * (1 + 2 * dup), size=4)
                b = e.box.as_list()
                box = _clip_box(*(v + n for v, n in zip(b, noise)))
                score = _r(rng.uniform(0.55, 0.98) * (0.6 if dup else 1.0), 4)
                per_cat.setdefault(t.category, []).append(
                    Detection(e.frame_index, box, t.category, score))
    # short persistent false-positive tracks
    for _ in range(int(rng.integers(1, 4))):
        cat = int(rng.choice(SYNTH_CATEGORIES))
        length = int(rng.integers(2, 6))
        start = int(rng.integers(0, frames - length + 1))
        w, h = rng.uniform(0.05, 0.15, size=2)
        x, y = rng.uniform(0.0, 1.0 - w), rng.uniform(0.0, 1.0 - h)
        score = rng.uniform(0.3, 0.9)
        for f in range(start, start + length):
            per_cat.setdefault(cat, []).append(
                Detection(f, _clip_box(x, y, x + w, y + h), cat, _r(score, 4)))
    branches = {
        c: VideoRecord(video_id, size, frames,
                       detections=tuple(sorted(dets, key=lambda d: d.frame_index)))
        for c, dets in sorted(per_cat.items())
    }

    images = []
    for f in range(frames):
        img = rng.uniform(0.02, 0.08, size=(size.height, size.width, 3))
        for t in tubes:
            box = t.box_at().get(f)
            if box is None:
                continue
            x0, y0, x1, y1 = (int(round(v)) for v in box.to_pixels(size))
            img[y0:y1, x0:x1] = 0.1 + 0.04 * (t.category % 5)
        images.append(Raster(np.clip(img, 0.0, 1.0)))
    return gt, branches, images


def write_dataset(out_dir, videos: int = 4, frames: int = 16,
                  size: ImageSize = ImageSize(64, 48), seed: int = 0) -> dict:
    """Write the dataset plus a ``pipeline.json`` that runs every stage on it."""
    out = Path(out_dir)
    table = CategoryTable.default()
    atomic_write_text(out / "categories.json", serialize_categories(table) + "\n")
    gt_files, branch_files = [], []
    for v in range(videos):
        vid = f"video_{v:03d}"
        gt, branches, images = make_video(vid, seed * 1000003 + v, frames, size)
        gt_path = out / "gt" / f"{vid}.tubes.json"
        atomic_write_text(gt_path, serialize_tubes(gt) + "\n")
        gt_files.append(gt_path.relative_to(out).as_posix())
        for cat, rec in branches.items():
            p = out / "branches" / f"{vid}.cat{cat}.detections.json"
            atomic_write_text(p, serialize_detections(rec) + "\n")
            branch_files.append(p.relative_to(out).as_posix())
        for f, img in enumerate(images):
            atomic_write_png(out / "images" / vid / f"frame_{f:04d}.png", img)
        if v == 0:
            for f in range(min(4, frames)):
                boxes = [{"box": t.box_at()[f].as_list(), "category": t.category}
                         for t in gt.tubes if f in t.box_at()]
                atomic_write_json(out / "annotated" / f"{vid}_f{f}.json",
                                  {"image": f"../images/{vid}/frame_{f:04d}.png", "boxes": boxes})

    def rel(paths):
        return ["{root}/" + p for p in paths]

    pipeline = {
        "stages": [
            {"command": "enhance", "args": ["--gamma", "2.0", "--in", "{root}/images",
                                            "--out", "{root}/out/enhanced"]},
            {"command": "augment", "args": ["--op", "mosaic", "--inputs",
                                            *[f"{{root}}/annotated/video_000_f{f}.json"
                                              for f in range(min(4, frames))],
                                            "--out", "{root}/out/mosaic.json"]},
            {"command": "merge", "args": ["--branches", *rel(branch_files), "--nms-iou", "0.6",
                                          "--out", "{root}/out/merged"]},
            {"command": "link", "args": ["--in", *[f"{{root}}/out/merged/video_{v:03d}.detections.json"
                                                   for v in range(videos)],
                                         "--iou", "0.3", "--max-gap", "1", "--min-len", "2",
                                         "--out", "{root}/out/tubes"]},
            {"command": "eval", "args": ["--gt", *rel(gt_files),
                                         "--pred", *[f"{{root}}/out/tubes/video_{v:03d}.tubes.json"
                                                     for v in range(videos)],
                                         "--categories", "{root}/categories.json",
                                         "--thresholds", "0.1,0.2,0.5",
                                         "--report", "{root}/out/report.json"]},
            {"command": "stats", "args": ["--in", *rel(gt_files), "--categories",
                                          "{root}/categories.json", "--out", "{root}/out/stats.json"]},
            {"command": "plan", "args": ["--categories", "{root}/categories.json",
                                         "--out", "{root}/out/plan.json"]},
        ],
    }
    atomic_write_json(out / "pipeline.json", pipeline)
    return pipeline
