"""Batch command-line entry point.

Exit codes: 0 success, 1 validation or usage error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from . import augment as aug
from .datamodel import (Box, CategoryTable, ImageSize, ValidationError, VideoRecord,
                        category_stats, parse_categories, parse_detections, parse_tubes,
                        serialize_detections, serialize_tubes)
from .enhance import GammaParams, gamma_correct, read_png
from .ensemble import BranchOutput, merge_branches, nms_per_frame, training_plan, validate_plan
from .evaluation import EvalConfig, video_map
from .fileio import atomic_write_json, atomic_write_png, atomic_write_text, read_text
from .fusionnet import demo, load_weights, params_to_dict, random_params
from .geometry import NORMALIZED, PIXEL, mpd_iou, mpd_iou_grad, mpd_iou_loss
from .synth import write_dataset
from .tubes import INTERSECTION, UNION, LinkParams, link_detections

log = logging.getLogger("roadtube")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def pmap(fn: Callable, items: Sequence, jobs: int) -> List:
    """Order-preserving map, threaded when ``jobs > 1``."""
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _floats(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _load_categories(path) -> Optional[CategoryTable]:
    return parse_categories(read_text(path)) if path else None


def _with_context(path, fn):
    try:
        return fn(read_text(path))
    except ValidationError as e:
        raise ValidationError(e.reason, f"{path}:{e.path}") from e


def _load_tubes(path, categories=None) -> VideoRecord:
    return _with_context(path, lambda t: parse_tubes(t, categories))


def _load_detections(path, categories=None) -> VideoRecord:
    return _with_context(path, lambda t: parse_detections(t, categories))


def _per_video_out(out: str, records: Sequence[VideoRecord], suffix: str) -> List[Path]:
    """Single ``.json`` target for one video, otherwise a directory of files."""
    if out.endswith(".json"):
        if len(records) != 1:
            raise UsageError(f"{len(records)} videos need an output directory, not {out}")
        return [Path(out)]
    return [Path(out) / f"{r.video_id}{suffix}" for r in records]


# --------------------------------------------------------------------------
# subcommands

def cmd_enhance(args) -> int:
    params = GammaParams(args.gamma)
    src, dst = Path(args.input), Path(args.output)
    if not src.is_dir():
        raise FileNotFoundError(f"input directory {src} not found")
    files = sorted(p for p in src.rglob("*.png") if p.is_file())

    def one(p):
        atomic_write_png(dst / p.relative_to(src), gamma_correct(read_png(p), params))

    pmap(one, files, args.jobs)
    print(json.dumps({"enhanced": len(files), "gamma": params.gamma}))
    return 0


def cmd_augment(args) -> int:
    items = [aug.load_annotated(p) for p in args.inputs]
    if args.op == "mosaic":
        if len(items) != 4:
            raise UsageError("mosaic needs exactly 4 --inputs")
        size = ImageSize.parse(args.size) if args.size else ImageSize(
            2 * items[0].image.width, 2 * items[0].image.height)
        if args.center:
            cx, cy = _floats(args.center)
            params = aug.MosaicParams(size, (cx, cy), args.min_visible)
        else:
            params = aug.MosaicParams.random(size, args.seed, min_visible_fraction=args.min_visible)
        result = aug.mosaic(items, params)
    elif args.op == "mixup":
        if len(items) != 2:
            raise UsageError("mixup needs exactly 2 --inputs")
        lam = args.lam if args.lam is not None else aug.pick_lambda(args.seed)
        result = aug.mixup(items[0], items[1], lam)
    else:
        if len(items) != 2:
            raise UsageError("copypaste needs --inputs SOURCE TARGET")
        selection = aug.parse_selection(args.select, len(items[0].boxes))
        result = aug.copy_paste(items[0], items[1], selection, args.seed)
    aug.save_annotated(result, args.output)
    print(json.dumps({"op": args.op, "boxes": len(result.boxes)}))
    return 0


def cmd_merge(args) -> int:
    records = [_load_detections(p) for p in args.branches]
    by_video: Dict[str, List[VideoRecord]] = {}
    for r in records:
        by_video.setdefault(r.video_id, []).append(r)

    def merge_video(group: List[VideoRecord]) -> VideoRecord:
        head = group[0]
        branches = []
        for r in group:
            if (r.image_size, r.frame_count) != (head.image_size, head.frame_count):
                raise ValidationError(f"branches of {r.video_id!r} disagree on image size "
                                      "or frame count")
            cats = {d.category for d in r.detections}
            if len(cats) > 1:
                raise ValidationError(f"branch file for {r.video_id!r} mixes categories {sorted(cats)}")
            if cats:
                branches.append(BranchOutput(cats.pop(), dict(r.frames())))
        merged = merge_branches(branches)
        if args.nms_iou is not None:
            merged = nms_per_frame(merged, args.nms_iou)
        dets = tuple(d for f in sorted(merged) for d in merged[f])
        return VideoRecord(head.video_id, head.image_size, head.frame_count, detections=dets)

    groups = [by_video[v] for v in sorted(by_video)]
    merged = pmap(merge_video, groups, args.jobs)
    for rec, path in zip(merged, _per_video_out(args.output, merged, ".detections.json")):
        atomic_write_text(path, serialize_detections(rec) + "\n")
    print(json.dumps({"videos": len(merged),
                      "detections": sum(len(r.detections) for r in merged)}))
    return 0


def cmd_link(args) -> int:
    params = LinkParams(args.iou, args.max_gap, args.min_len, args.aggregation)
    records = [_load_detections(p) for p in args.inputs]

    def one(r: VideoRecord) -> VideoRecord:
        return VideoRecord(r.video_id, r.image_size, r.frame_count,
                           tubes=tuple(link_detections(r.frames(), params)))

    out = pmap(one, records, args.jobs)
    for rec, path in zip(out, _per_video_out(args.output, out, ".tubes.json")):
        atomic_write_text(path, serialize_tubes(rec) + "\n")
    print(json.dumps({"videos": len(out), "tubes": sum(len(r.tubes) for r in out)}))
    return 0


def cmd_eval(args) -> int:
    categories = _load_categories(args.categories)
    gt = pmap(lambda p: _load_tubes(p, categories), args.gt, args.jobs)
    pred = pmap(lambda p: _load_tubes(p, categories), args.pred, args.jobs)
    config = EvalConfig(tuple(_floats(args.thresholds)), span=args.span)
    report = video_map(gt, pred, config, categories).to_dict(categories)
    if args.report:
        atomic_write_json(args.report, report)
    for r in report["per_threshold"]:
        print(f"Agent@{r['threshold']:g}: {r['map']:.2f}")
    print(f"Average: {report['overall']:.2f}")
    return 0


def cmd_plan(args) -> int:
    table = _load_categories(args.categories) if args.categories else CategoryTable.default()
    groups = json.loads(read_text(args.groups)) if args.groups else None
    doc = training_plan(table, groups, args.neg_pos_ratio).to_dict()
    validate_plan(doc)
    if args.output:
        atomic_write_json(args.output, doc)
    else:
        print(json.dumps(doc, indent=1))
    return 0


def cmd_stats(args) -> int:
    categories = _load_categories(args.categories)

    def load(p):
        doc = json.loads(read_text(p))
        return (_load_tubes if isinstance(doc, dict) and "tubes" in doc else _load_detections)(
            p, categories)

    counts = category_stats(pmap(load, args.inputs, args.jobs))
    named = {(categories.name(c) if categories else str(c)): n for c, n in counts.items()}
    doc = {"counts": named, "total": sum(counts.values())}
    if args.output:
        atomic_write_json(args.output, doc)
    print(json.dumps(doc))
    return 0


def cmd_fuse_demo(args) -> int:
    shape = [int(v) for v in _floats(args.shape)]
    if len(shape) != 3 or min(shape) < 1:
        raise UsageError("--shape must be C,H,W with positive entries")
    params = load_weights(args.weights) if args.weights else random_params(shape[0], args.seed)
    if args.save_weights:
        atomic_write_json(args.save_weights, params_to_dict(*params))
    print(json.dumps(demo(shape, args.seed, params)))
    return 0


def cmd_geom(args) -> int:
    pred = Box.from_seq(_floats(args.pred), "--pred")
    gt = Box.from_seq(_floats(args.gt), "--gt")
    size = ImageSize.parse(args.size) if args.size else None
    res = mpd_iou(pred, gt, size, args.convention)
    doc = res.to_dict()
    doc["loss"] = mpd_iou_loss(pred, gt, size, args.convention)
    if args.grad:
        doc["grad"] = mpd_iou_grad(pred, gt, size, args.convention, subgradient=True)
    print(json.dumps(doc))
    return 0


def cmd_synth(args) -> int:
    write_dataset(args.output, args.videos, args.frames, ImageSize.parse(args.size), args.seed)
    print(json.dumps({"out": str(args.output), "videos": args.videos}))
    return 0


def cmd_pipeline(args) -> int:
    cfg_path = Path(args.config)
    try:
        cfg = json.loads(read_text(cfg_path))
    except json.JSONDecodeError as e:
        raise ValidationError(f"malformed JSON: {e}", str(cfg_path)) from e
    stages = cfg.get("stages") if isinstance(cfg, dict) else None
    if not isinstance(stages, list) or not stages:
        raise ValidationError("config needs a non-empty 'stages' list", f"{cfg_path}:$.stages")
    root = str(cfg_path.parent.resolve())
    jobs = args.jobs if args.jobs is not None else int(cfg.get("jobs", 1))
    seed = args.seed if args.seed is not None else cfg.get("seed")
    argvs = []
    for i, st in enumerate(stages):
        cmd = st.get("command") if isinstance(st, dict) else None
        if cmd not in STAGE_COMMANDS:
            raise ValidationError(f"unknown stage command {cmd!r}", f"{cfg_path}:$.stages[{i}]")
        argv = [cmd] + [str(a).replace("{root}", root) for a in st.get("args", [])]
        if any(not a for a in argv):
            raise ValidationError("empty argument", f"{cfg_path}:$.stages[{i}].args")
        if "--jobs" in _OPTIONS[cmd] and "--jobs" not in argv:
            argv += ["--jobs", str(jobs)]
        if seed is not None and "--seed" in _OPTIONS[cmd] and "--seed" not in argv:
            argv += ["--seed", str(seed)]
        argvs.append(argv)
    for argv in argvs:
        log.info("stage: %s", " ".join(argv[:1]))
        code = main(argv)
        if code:
            return code
    return 0


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="roadtube", description="Spatiotemporal agent-detection toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("enhance", cmd_enhance, "gamma-correct every PNG under a directory")
    sp.add_argument("--gamma", type=float, default=2.0)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", dest="output", required=True)
    sp.add_argument("--jobs", type=int, default=1)

    sp = add("augment", cmd_augment, "mosaic / mixup / copy-paste on PNG+JSON sidecars")
    sp.add_argument("--op", choices=["mosaic", "mixup", "copypaste"], required=True)
    sp.add_argument("--inputs", nargs="+", required=True)
    sp.add_argument("--out", dest="output", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--size", help="mosaic canvas WxH (default: twice the first input)")
    sp.add_argument("--center", help="mosaic center cx,cy (default: seeded jitter)")
    sp.add_argument("--min-visible", type=float, default=aug.DEFAULT_MIN_VISIBLE)
    sp.add_argument("--lam", type=float, help="mixup weight (default: seeded Beta(32, 32))")
    sp.add_argument("--select", help="copy-paste source box indices, e.g. 0,2 (default: all)")

    sp = add("merge", cmd_merge, "union per-category branch detections, then NMS")
    sp.add_argument("--branches", nargs="+", required=True)
    sp.add_argument("--nms-iou", type=float, default=0.6)
    sp.add_argument("--out", dest="output", required=True)
    sp.add_argument("--jobs", type=int, default=1)

    sp = add("link", cmd_link, "link detections into agent tubes")
    sp.add_argument("--in", dest="inputs", nargs="+", required=True)
    sp.add_argument("--out", dest="output", required=True)
    sp.add_argument("--iou", type=float, default=0.5)
    sp.add_argument("--max-gap", type=int, default=0)
    sp.add_argument("--min-len", type=int, default=1)
    sp.add_argument("--aggregation", choices=["mean", "max"], default="mean")
    sp.add_argument("--jobs", type=int, default=1)

    sp = add("eval", cmd_eval, "video-mAP of predicted tubes against ground truth")
    sp.add_argument("--gt", nargs="+", required=True)
    sp.add_argument("--pred", nargs="+", required=True)
    sp.add_argument("--thresholds", default="0.1,0.2,0.5")
    sp.add_argument("--span", choices=[UNION, INTERSECTION], default=UNION)
    sp.add_argument("--categories")
    sp.add_argument("--report")
    sp.add_argument("--jobs", type=int, default=1)

    sp = add("plan", cmd_plan, "emit the pre-train / fine-tune plan")
    sp.add_argument("--categories")
    sp.add_argument("--groups", help="JSON list of confusable category groups (ids or names)")
    sp.add_argument("--neg-pos-ratio", type=float, default=1.0)
    sp.add_argument("--out", dest="output")

    sp = add("stats", cmd_stats, "box instances per category")
    sp.add_argument("--in", dest="inputs", nargs="+", required=True)
    sp.add_argument("--categories")
    sp.add_argument("--out", dest="output")
    sp.add_argument("--jobs", type=int, default=1)

    sp = add("fuse-demo", cmd_fuse_demo, "run fusion + upsampling on seeded inputs")
    sp.add_argument("--weights")
    sp.add_argument("--shape", default="8,16,16")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--save-weights")

    sp = add("geom", cmd_geom, "print MPDIoU terms for a box pair")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--size", help="WxH, required for the pixel convention")
    sp.add_argument("--convention", choices=[NORMALIZED, PIXEL], default=NORMALIZED)
    sp.add_argument("--grad", action="store_true")

    sp = add("synth", cmd_synth, "write the synthetic mini-dataset")
    sp.add_argument("--out", dest="output", required=True)
    sp.add_argument("--videos", type=int, default=4)
    sp.add_argument("--frames", type=int, default=16)
    sp.add_argument("--size", default="64x48")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("pipeline", cmd_pipeline, "run the stages listed in a pipeline config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--jobs", type=int)
    sp.add_argument("--seed", type=int)
    return p


def _collect_options() -> Dict[str, set]:
    parser = build_parser()
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return {name: {o for act in sp._actions for o in act.option_strings}
            for name, sp in subs.choices.items()}


_OPTIONS = _collect_options()
STAGE_COMMANDS = tuple(c for c in _OPTIONS if c != "pipeline")


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, UsageError, ValueError, KeyError, IndexError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
