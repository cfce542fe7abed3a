"""Acceptance suite: one test per headline criterion, each printing a
PASS/FAIL line at its stated tolerance."""

import time
from pathlib import Path

import numpy as np

from roadtube.augment import (AnnotatedImage, MosaicParams, annotated_to_dict, copy_paste, mixup,
                              mosaic, validate_annotated)
from roadtube.cli import main
from roadtube.datamodel import Box, CategoryTable, Detection, ImageSize
from roadtube.enhance import GammaParams, Raster, gamma_correct
from roadtube.ensemble import training_plan, validate_plan
from roadtube.evaluation import EvalConfig, video_map
from roadtube.fusionnet import (CbamParams, DySampleParams, FusionParams, HeadPyramidConfig, cbam,
                                cbam_attention, dysample, fuse, head_pyramid)
from roadtube.geometry import mpd_iou, mpd_iou_grad, mpd_iou_loss
from roadtube.tubes import LinkParams, link_detections

from conftest import random_box
from eval_oracle import brute_video_map, random_video

FD_STEP = 1e-6


# --------------------------------------------------------------------------
# geometry

def _fd(p, g):
    base = p.as_list()
    out = []
    for i in range(4):
        hi, lo = list(base), list(base)
        hi[i] += FD_STEP
        lo[i] -= FD_STEP
        out.append((mpd_iou_loss(Box(*hi), g) - mpd_iou_loss(Box(*lo), g)) / (2 * FD_STEP))
    return np.array(out)


def _near_kink(p, g, tol=1e-5):
    pairs = [(p.x1, g.x1), (p.y1, g.y1), (p.x2, g.x2), (p.y2, g.y2),
             (p.x1, g.x2), (p.x2, g.x1), (p.y1, g.y2), (p.y2, g.y1)]
    return any(abs(a - b) < tol for a, b in pairs)


def test_mpdiou_gradient_vs_finite_differences(criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, n, skipped = 0.0, 0, 0
    while n < 1000:
        p, g = random_box(rng, 0.0, 1e-3), random_box(rng, 0.0, 1e-3)
        if _near_kink(p, g):
            skipped += 1
            continue
        a = np.array(mpd_iou_grad(p, g))
        f = _fd(p, g)
        worst = max(worst, float(np.max(np.abs(a - f)) / max(np.max(np.abs(f)), 1e-12)))
        n += 1
    elapsed = time.perf_counter() - t0
    criterion("MPDIoU gradient: 1000 pairs, max rel err <= 1e-5, < 5 s",
              worst <= 1e-5 and elapsed < 5.0,
              f"max rel err {worst:.2e}, {elapsed:.2f} s, {skipped} near-kink draws redrawn")


def test_mpdiou_golden_values(criterion):
    r = mpd_iou(Box(0, 0, 0.5, 0.5), Box(0, 0.25, 0.5, 0.75))
    loss = mpd_iou_loss(Box(0, 0, 0.5, 0.5), Box(0, 0.25, 0.5, 0.75))
    b = Box(0.1, 0.2, 0.6, 0.9)
    same = mpd_iou(b, b)
    ok = (abs(r.iou - 1 / 3) <= 1e-6 and abs(r.mpdiou - 0.270833) <= 1e-6
          and abs(loss - 0.729167) <= 1e-6
          and abs(same.mpdiou - 1.0) <= 1e-6 and abs(mpd_iou_loss(b, b)) <= 1e-6)
    criterion("MPDIoU golden values to 1e-6", ok,
              f"iou {r.iou:.6f}, mpdiou {r.mpdiou:.6f}, loss {loss:.6f}, identity {same.mpdiou}")


# --------------------------------------------------------------------------
# evaluation

def test_evaluator_oracle_equivalence(criterion):
    rng = np.random.default_rng(77)
    pairs = [random_video(rng, f"v{i:02d}") for i in range(50)]
    gt, pred = [g for g, _ in pairs], [p for _, p in pairs]
    assert max(len(g.tubes) + len(p.tubes) for g, p in pairs) <= 10
    thresholds = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    cfg = EvalConfig(thresholds)

    worst = 0.0
    # pooled over all 50 videos, then each video on its own
    for g_set, p_set in [(gt, pred)] + [([g], [p]) for g, p in pairs]:
        got = video_map(g_set, p_set, cfg)
        for res, (aps, m) in zip(got.per_threshold, brute_video_map(g_set, p_set, thresholds)):
            assert res.ap.keys() == aps.keys()
            worst = max([worst, abs(res.map - float(m))]
                        + [abs(res.ap[c] - float(aps[c])) for c in aps])
    pooled = video_map(gt, pred, cfg)
    maps = [r.map for r in pooled.per_threshold]
    monotone = all(b <= a for a, b in zip(maps, maps[1:]))
    perfect = video_map(gt, gt, EvalConfig((0.1, 0.2, 0.5)))
    perfect_ok = all(r.map == 100.0 for r in perfect.per_threshold)
    criterion("Evaluator: brute-force oracle on 50 videos, gt-as-pred = 100, monotone",
              worst <= 1e-12 and monotone and perfect_ok,
              f"max |diff| {worst:.1e}, mAP {maps[0]:.2f}..{maps[-1]:.2f}, "
              f"gt-as-pred {[r.map for r in perfect.per_threshold]}")


# --------------------------------------------------------------------------
# linking

def _det(f, box, cat=0):
    return Detection(f, Box(*box), cat, 0.8)


def _valid(tubes, frames):
    real = {}
    for f, ds in frames:
        for d in ds:
            real[(f, d.box, d.category)] = real.get((f, d.box, d.category), 0) + 1
    for t in tubes:
        idx = [e.frame_index for e in t.entries]
        if idx != list(range(idx[0], idx[0] + len(idx))):
            return False
        for e in t.entries:
            key = (e.frame_index, e.box, t.category)
            if key in real:
                real[key] -= 1
                if real[key] < 0:
                    return False
    return True


def test_tube_linking_fixture_families(criterion):
    results = {}
    single = [(f, [_det(f, (0.2 + 0.004 * f, 0.2, 0.4 + 0.004 * f, 0.5))]) for f in range(12)]
    t = link_detections(single)
    results["single object"] = len(t) == 1 and len(t[0]) == 12 and _valid(t, single)

    pair = [(f, [_det(f, (0.0, 0.0, 0.2, 0.2)), _det(f, (0.6, 0.6, 0.9, 0.9))]) for f in range(8)]
    t = link_detections(pair)
    results["disjoint pair"] = (len(t) == 2 and _valid(t, pair)
                                and all(len({e.box for e in x.entries}) == 1 for x in t))

    gap = [(f, [_det(f, (0.2, 0.2, 0.4, 0.4))]) for f in (0, 1, 2, 6, 7)]
    t = link_detections(gap, LinkParams(max_gap=2))
    results["gap > max_gap"] = [(x.start, x.end) for x in t] == [(0, 2), (6, 7)] and _valid(t, gap)

    mixed = [(f, [_det(f, (0.2, 0.2, 0.4, 0.4), cat=f % 2)]) for f in range(6)]
    t = link_detections(mixed, LinkParams(max_gap=1))
    results["category purity"] = _valid(t, mixed) and len(t) == 2

    criterion("Tube linking fixture families, contiguity, purity, no reuse",
              all(results.values()), ", ".join(f"{k}: {'ok' if v else 'bad'}"
                                               for k, v in results.items()))


# --------------------------------------------------------------------------
# fusion network

def test_fusion_invariants(criterion):
    import torch
    import torch.nn.functional as F

    rng = np.random.default_rng(5)
    shape_ok, range_ok = True, True
    for _ in range(10):
        c = int(rng.integers(2, 9))
        h, w = (int(v) for v in rng.integers(3, 20, 2))
        x = rng.normal(size=(c, h, w))
        p = CbamParams.random(c, rng)
        ca, sa, out = cbam_attention(x, p)
        shape_ok &= cbam(x, p).shape == x.shape
        range_ok &= bool(np.all((ca > 0) & (ca < 1)) and np.all((sa > 0) & (sa < 1)))
        fp = FusionParams(rng.normal(size=(c, 2 * c, 1, 1)) * 0.3, rng.normal(size=c) * 0.1, p)
        shape_ok &= fuse(x, rng.normal(size=(c, h, w)), fp).shape == x.shape

    worst = 0.0
    for scale in (2, 3, 4):
        x = rng.normal(size=(3, 7, 9))
        ref = F.interpolate(torch.from_numpy(x)[None], scale_factor=scale, mode="bilinear",
                            align_corners=False)[0].numpy()
        worst = max(worst, float(np.max(np.abs(dysample(x, DySampleParams.zeros(3, scale)) - ref))))

    grids = head_pyramid(HeadPyramidConfig(ImageSize(640, 640), (4, 8, 16, 32, 64)))
    grid_ok = grids == [(4, (160, 160)), (8, (80, 80)), (16, (40, 40)), (32, (20, 20)),
                        (64, (10, 10))]
    criterion("Fusion: shapes kept, attention in (0,1), dysample = bilinear to 1e-6, 640 grids",
              shape_ok and range_ok and worst <= 1e-6 and grid_ok,
              f"dysample max |diff| {worst:.1e}, grids {[g for _, (g, _) in grids]}")


# --------------------------------------------------------------------------
# enhancement

def test_enhancement(criterion):
    rng = np.random.default_rng(9)
    ok = {}
    for g in (0.3, 0.5, 1.0, 2.0, 4.5):
        ends = gamma_correct(Raster(np.array([[0.0, 1.0]])), GammaParams(g)).data.ravel()
        ok.setdefault("fixed points", True)
        ok["fixed points"] &= ends.tolist() == [0.0, 1.0]
        v = np.sort(rng.uniform(size=200))
        out = gamma_correct(Raster(v.reshape(10, 20)), GammaParams(g)).data.ravel()
        ok.setdefault("monotone", True)
        ok["monotone"] &= bool(np.all(np.diff(out) >= 0))
        img = Raster(rng.uniform(size=(6, 7, 3)))
        back = gamma_correct(gamma_correct(img, GammaParams(g)), GammaParams(1 / g))
        ok.setdefault("inverse", True)
        ok["inverse"] &= float(np.max(np.abs(back.data - img.data))) <= 1e-6
    q = gamma_correct(Raster(np.array([[0.25]])), GammaParams(2.0)).data[0, 0, 0]
    ok["0.25 -> 0.5"] = abs(q - 0.5) <= 1e-6
    criterion("Enhancement: fixed points, monotone, inverse to 1e-6, 0.25 -> 0.5",
              all(ok.values()), ", ".join(f"{k}: {'ok' if v else 'bad'}" for k, v in ok.items()))


# --------------------------------------------------------------------------
# augmentation

def _mosaic_oracle(boxes_per_input, in_size, canvas, center, min_visible):
    """Pinned-corner cover scaling written from the contract, pixel space."""
    W, H = canvas
    w, h = in_size
    xc, yc = round(center[0] * W), round(center[1] * H)
    quads = [(0, 0, xc, yc), (xc, 0, W, yc), (0, yc, xc, H), (xc, yc, W, H)]
    out = []
    for q, ((qx0, qy0, qx1, qy1), boxes) in enumerate(zip(quads, boxes_per_input)):
        s = max((qx1 - qx0) / w, (qy1 - qy0) / h)
        # left quadrants pin their right edge to xc, top quadrants their bottom edge to yc
        ox = xc - w * s if q in (0, 2) else xc
        oy = yc - h * s if q in (0, 1) else yc
        for b, cat in boxes:
            x1, y1 = ox + b.x1 * w * s, oy + b.y1 * h * s
            x2, y2 = ox + b.x2 * w * s, oy + b.y2 * h * s
            c = (max(x1, qx0), max(y1, qy0), min(x2, qx1), min(y2, qy1))
            if c[2] <= c[0] or c[3] <= c[1]:
                continue
            if (c[2] - c[0]) * (c[3] - c[1]) < min_visible * (x2 - x1) * (y2 - y1):
                continue
            out.append(([c[0] / W, c[1] / H, c[2] / W, c[3] / H], cat))
    return out


def test_augmentation(criterion):
    rng = np.random.default_rng(31)
    inputs = []
    for k in range(4):
        boxes = tuple((random_box(rng, 0.0, 0.05), k) for _ in range(6))
        inputs.append(AnnotatedImage(Raster(rng.uniform(size=(100, 100, 3))), boxes))
    worst, count_ok, valid = 0.0, True, True
    for center in ((0.5, 0.5), (0.3, 0.6), (0.71, 0.27)):
        out = mosaic(inputs, MosaicParams(ImageSize(200, 200), center))
        exp = _mosaic_oracle([i.boxes for i in inputs], (100, 100), (200, 200), center, 0.25)
        count_ok &= len(out.boxes) == len(exp) and [c for _, c in out.boxes] == [c for _, c in exp]
        if count_ok:
            for (b, _), (e, _) in zip(out.boxes, exp):
                worst = max(worst, float(np.max(np.abs(np.array(b.as_list()) - e))))
        valid &= _schema_ok(out)

    a, b = inputs[0], inputs[1]
    mix = mixup(a, b, 1.0)
    mix_ok = mix.image == a.image and set(mix.boxes) == set(a.boxes) | set(b.boxes)
    valid &= _schema_ok(mix)

    src = AnnotatedImage(Raster(rng.uniform(size=(40, 50, 3))), ((Box(0.2, 0.25, 0.5, 0.75), 4),))
    tgt = AnnotatedImage(Raster(np.zeros((60, 70, 3))), ())
    pasted = copy_paste(src, tgt, [0], seed=11)
    g = np.random.default_rng(11)
    dx, dy = int(g.integers(0, 70 - 15 + 1)), int(g.integers(0, 60 - 20 + 1))
    paste_ok = bool(np.array_equal(pasted.image.data[dy:dy + 20, dx:dx + 15],
                                   src.image.data[10:30, 10:25]))
    valid &= _schema_ok(pasted)

    criterion("Augmentation: mosaic affine oracle, mixup lam=1 identity, exact copy-paste, "
              "schema-valid",
              count_ok and worst <= 1e-9 and mix_ok and paste_ok and valid,
              f"mosaic max |diff| {worst:.1e}, paste at ({dx}, {dy})")


def _schema_ok(item):
    try:
        validate_annotated(annotated_to_dict(item, "x.png"))
        return True
    except ValueError:
        return False


# --------------------------------------------------------------------------
# training plan

def test_training_plan(criterion):
    table = CategoryTable.default()
    doc = training_plan(table).to_dict()
    validate_plan(doc)
    pre = doc["pretrain"]
    pre_ok = (pre["epochs"], pre["initial_lr"], pre["batch_size"], pre["backbone_frozen"]) == (
        30, 0.005, 32, False)
    ft_ok = all((s["epochs"], s["initial_lr"], s["batch_size"], s["backbone_frozen"],
                 s["augmentations_off_last_epochs"]) == (20, 0.0005, 32, True, 5)
                for s in doc["finetune"])
    neg = {s["name"]: set(s["negative_categories"]) for s in doc["finetune"]}
    group = {"car", "medium vehicle", "large vehicle"}
    neg_ok = all(neg[n] == {table.id_of(m) for m in group - {n}} for n in group)
    neg_ok &= all(not neg[n] for n in neg if n not in group)
    criterion("Training plan: hyperparameters, negative sets, schema-valid",
              pre_ok and ft_ok and neg_ok,
              f"car negatives {sorted(neg['car'])}")


# --------------------------------------------------------------------------
# end to end

def _snapshot(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(Path(root).rglob("*")) if p.is_file()}


def test_end_to_end_determinism(criterion, tmp_path, capsys):
    snaps, times = [], []
    for k, jobs in enumerate((1, 1, 2, 4)):
        d = tmp_path / f"run{k}"
        t0 = time.perf_counter()
        assert main(["synth", "--out", str(d), "--seed", "7"]) == 0
        assert main(["pipeline", "--config", str(d / "pipeline.json"), "--jobs", str(jobs),
                     "--seed", "7"]) == 0
        times.append(time.perf_counter() - t0)
        snaps.append(_snapshot(d))
    capsys.readouterr()
    same = all(s == snaps[0] for s in snaps[1:])
    criterion("End-to-end pipeline byte-identical across runs and --jobs 1/2/4, < 60 s",
              same and max(times) < 60.0,
              f"{len(snaps[0])} files, slowest run {max(times):.2f} s")
