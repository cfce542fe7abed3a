"""Per-category branch merging, NMS, and the pre-train/fine-tune plan."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import jsonschema

from .datamodel import CategoryTable, Detection, ValidationError
from .geometry import iou

PerFrame = Dict[int, List[Detection]]

# Categories that are hard to tell apart; each branch sees the others as negatives.
DEFAULT_CONFUSABLE = ("car", "medium vehicle", "large vehicle")
LARGE_MODEL_CATEGORIES = ("car", "pedestrian")


@dataclass(frozen=True)
class BranchOutput:
    category: int
    detections: PerFrame

    def __post_init__(self):
        for frame, dets in self.detections.items():
            for d in dets:
                if d.category != self.category:
                    raise ValidationError(
                        f"branch {self.category} holds a category-{d.category} detection "
                        f"on frame {frame}")


def merge_branches(branches: Sequence[BranchOutput]) -> PerFrame:
    """Per-frame union of all branch detections, in branch order.

    No suppression happens across categories.
    """
    seen = set()
    for b in branches:
        if b.category in seen:
            raise ValueError(f"duplicate branch for category {b.category}")
        seen.add(b.category)
    merged: PerFrame = {}
    for b in branches:
        for frame, dets in b.detections.items():
            merged.setdefault(frame, []).extend(dets)
    return dict(sorted(merged.items()))


def nms(detections: Sequence[Detection], iou_threshold: float) -> List[Detection]:
    """Greedy NMS for one frame and one category. Equal scores keep input order."""
    if not (0.0 < iou_threshold <= 1.0):
        raise ValueError(f"NMS threshold must lie in (0, 1], got {iou_threshold}")
    if len({d.category for d in detections}) > 1 or len({d.frame_index for d in detections}) > 1:
        raise ValueError("nms expects detections of a single frame and category")
    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    kept: List[Detection] = []
    for i in order:
        d = detections[i]
        if all(iou(d.box, k.box) < iou_threshold for k in kept):
            kept.append(d)
    return kept


def nms_per_frame(frames: PerFrame, iou_threshold: float) -> PerFrame:
    """Run :func:`nms` per (frame, category); categories stay in first-seen order."""
    out: PerFrame = {}
    for frame, dets in sorted(frames.items()):
        by_cat: Dict[int, List[Detection]] = {}
        for d in dets:
            by_cat.setdefault(d.category, []).append(d)
        out[frame] = [k for group in by_cat.values() for k in nms(group, iou_threshold)]
    return out


# --------------------------------------------------------------------------
# training plan

@dataclass(frozen=True)
class StageConfig:
    epochs: int
    batch_size: int
    initial_lr: float
    optimizer: str
    backbone_frozen: bool


PRETRAIN = StageConfig(epochs=30, batch_size=32, initial_lr=0.005, optimizer="SGD",
                       backbone_frozen=False)
FINETUNE = StageConfig(epochs=20, batch_size=32, initial_lr=0.0005, optimizer="SGD",
                       backbone_frozen=True)
AUGMENTATIONS = ("copy_paste", "mosaic", "mixup")
AUG_OFF_LAST_EPOCHS = 5


@dataclass(frozen=True)
class FinetuneStage:
    category: int
    name: str
    model_size: str
    negative_categories: Tuple[int, ...]
    # positive:negative sample ratio; tunable, no reference value exists
    neg_pos_ratio: float
    config: StageConfig = FINETUNE
    augmentations_off_last_epochs: int = AUG_OFF_LAST_EPOCHS


@dataclass(frozen=True)
class TrainingPlan:
    categories: Tuple[int, ...]
    pretrain: StageConfig
    finetune: Tuple[FinetuneStage, ...]
    augmentations: Tuple[str, ...] = AUGMENTATIONS
    train_fraction: float = 0.75

    def to_dict(self) -> dict:
        return {
            "pretrain": {"categories": list(self.categories), **asdict(self.pretrain)},
            "finetune": [
                {"category": s.category, "name": s.name, "model_size": s.model_size,
                 "negative_categories": list(s.negative_categories),
                 "neg_pos_ratio": s.neg_pos_ratio,
                 "augmentations_off_last_epochs": s.augmentations_off_last_epochs,
                 **asdict(s.config)}
                for s in self.finetune
            ],
            "augmentations": list(self.augmentations),
            "train_fraction": self.train_fraction,
        }


_STAGE_PROPS = {
    "epochs": {"type": "integer", "minimum": 1},
    "batch_size": {"type": "integer", "minimum": 1},
    "initial_lr": {"type": "number", "exclusiveMinimum": 0},
    "optimizer": {"type": "string"},
    "backbone_frozen": {"type": "boolean"},
}

PLAN_SCHEMA = {
    "type": "object",
    "required": ["pretrain", "finetune", "augmentations", "train_fraction"],
    "properties": {
        "pretrain": {
            "type": "object",
            "required": ["categories", *_STAGE_PROPS],
            "properties": {"categories": {"type": "array", "items": {"type": "integer"}},
                           **_STAGE_PROPS},
        },
        "finetune": {"type": "array", "items": {
            "type": "object",
            "required": ["category", "name", "model_size", "negative_categories",
                         "neg_pos_ratio", "augmentations_off_last_epochs", *_STAGE_PROPS],
            "properties": {
                "category": {"type": "integer", "minimum": 0},
                "name": {"type": "string"},
                "model_size": {"enum": ["n", "s", "m", "l", "x"]},
                "negative_categories": {"type": "array", "items": {"type": "integer"},
                                        "uniqueItems": True},
                "neg_pos_ratio": {"type": "number", "exclusiveMinimum": 0},
                "augmentations_off_last_epochs": {"type": "integer", "minimum": 0},
                **_STAGE_PROPS,
            },
        }},
        "augmentations": {"type": "array", "items": {"type": "string"}},
        "train_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    },
}


def validate_plan(doc: dict) -> None:
    """Check a plan document against :data:`PLAN_SCHEMA` and its invariants."""
    try:
        jsonschema.validate(doc, PLAN_SCHEMA)
    except jsonschema.ValidationError as e:
        raise ValidationError(e.message, "$" + "".join(f"[{p!r}]" for p in e.absolute_path)) from e
    cats = doc["pretrain"]["categories"]
    stages = [s["category"] for s in doc["finetune"]]
    if sorted(stages) != sorted(cats) or len(set(stages)) != len(stages):
        raise ValidationError("every category needs exactly one fine-tune stage", "$.finetune")
    for i, s in enumerate(doc["finetune"]):
        if s["category"] in s["negative_categories"]:
            raise ValidationError("a stage lists its own category as negative",
                                  f"$.finetune[{i}].negative_categories")
        if s["augmentations_off_last_epochs"] > s["epochs"]:
            raise ValidationError("augmentation cut-off exceeds epoch count", f"$.finetune[{i}]")


def _resolve_groups(categories: CategoryTable,
                    groups: Optional[Iterable[Iterable]]) -> List[Tuple[int, ...]]:
    def resolve(member):
        if isinstance(member, int):
            if member not in categories:
                raise ValidationError(f"confusable group references unknown category {member}")
            return member
        try:
            return categories.id_of(str(member))
        except KeyError:
            raise ValidationError(
                f"confusable group references unknown category {member!r}") from None

    if groups is None:
        try:
            return [tuple(categories.id_of(n) for n in DEFAULT_CONFUSABLE)]
        except KeyError:
            return []
    return [tuple(resolve(m) for m in g) for g in groups]


def training_plan(categories: CategoryTable, confusable_groups: Optional[Iterable[Iterable]] = None,
                  neg_pos_ratio: float = 1.0) -> TrainingPlan:
    """Pre-train on all categories, then one frozen-backbone fine-tune stage
    per category.

    Members of a confusable group (by default car / medium vehicle / large
    vehicle, matched by name) use the other members as negatives. Groups may
    name members by id or by name.
    """
    if not neg_pos_ratio > 0:
        raise ValueError("neg_pos_ratio must be positive")
    groups = _resolve_groups(categories, confusable_groups)
    negatives: Dict[int, List[int]] = {}
    for g in groups:
        for c in g:
            for other in g:
                if other != c and other not in negatives.setdefault(c, []):
                    negatives[c].append(other)
    large = {n for n in LARGE_MODEL_CATEGORIES}
    stages = tuple(
        FinetuneStage(category=cid, name=name,
                      model_size="x" if name.lower() in large else "m",
                      negative_categories=tuple(negatives.get(cid, ())),
                      neg_pos_ratio=neg_pos_ratio)
        for cid, name in categories.items
    )
    return TrainingPlan(tuple(categories.ids), PRETRAIN, stages)
