"""Benchmark evaluator: per-class IoU / pixel accuracy with weighted averages.

Predictions are LabelMap PNG files on disk; the scorer never runs models.
Two keying modes are supported: per-annotation (each quality text has its
own prediction and ground truth) and per-image-average (one prediction per
image, scored against every ground truth with fractional weights so each
image contributes equally).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .masks import Dims, DistortionClass, LabelMap, NUM_CLASSES, merge_smaller_first
from .store import DatasetManifest, SplitSpec

MODES = ("per-annotation", "per-image-average")


@dataclass
class ItemCounts:
    """Per-class pixel tallies for one (prediction, ground truth) pair."""

    tp: np.ndarray  # shape (5,), classes 1..5 at index c-1
    fp: np.ndarray
    fn: np.ndarray
    present: np.ndarray  # bool, gt contains class


def score_item(pred: LabelMap, gt: LabelMap) -> ItemCounts:
    if pred.dims != gt.dims:
        raise ValueError(f"pred dims {pred.dims} != gt dims {gt.dims}")
    p = np.asarray(pred.pixels)
    g = np.asarray(gt.pixels)
    tp = np.zeros(NUM_CLASSES, dtype=np.int64)
    fp = np.zeros(NUM_CLASSES, dtype=np.int64)
    fn = np.zeros(NUM_CLASSES, dtype=np.int64)
    present = np.zeros(NUM_CLASSES, dtype=bool)
    for c in range(1, NUM_CLASSES + 1):
        pc = p == c
        gc = g == c
        tp[c - 1] = np.count_nonzero(pc & gc)
        fp[c - 1] = np.count_nonzero(pc & ~gc)
        fn[c - 1] = np.count_nonzero(~pc & gc)
        present[c - 1] = bool(gc.any())
    return ItemCounts(tp=tp, fp=fp, fn=fn, present=present)


@dataclass
class ConfusionAccumulator:
    """Mergeable per-class pixel count accumulator.

    Counts are floats: per-image-average mode adds items with fractional
    weight 1/number-of-ground-truths. Image presence is tracked once per
    image regardless of how many of its ground truths were scored.
    """

    tp: np.ndarray = field(default_factory=lambda: np.zeros(NUM_CLASSES))
    fp: np.ndarray = field(default_factory=lambda: np.zeros(NUM_CLASSES))
    fn: np.ndarray = field(default_factory=lambda: np.zeros(NUM_CLASSES))
    image_presence: np.ndarray = field(
        default_factory=lambda: np.zeros(NUM_CLASSES, dtype=np.int64)
    )
    n_items: int = 0

    def add(self, counts: ItemCounts, weight: float = 1.0) -> None:
        self.tp += weight * counts.tp
        self.fp += weight * counts.fp
        self.fn += weight * counts.fn
        self.n_items += 1

    def add_image_presence(self, present: np.ndarray) -> None:
        self.image_presence += present.astype(np.int64)

    def merge(self, other: "ConfusionAccumulator") -> None:
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.image_presence += other.image_presence
        self.n_items += other.n_items


@dataclass
class ScoreReport:
    iou: dict[str, float]
    acc: dict[str, float]
    weighted_iou: float
    weighted_acc: float
    weights: dict[str, int]
    n_items: int

    def to_json(self) -> dict:
        return {
            "per_class": {
                label: {"miou": self.iou[label], "macc": self.acc[label]}
                for label in self.iou
            },
            "average": {"miou": self.weighted_iou, "macc": self.weighted_acc},
            "weights": self.weights,
            "n_items": self.n_items,
        }


def aggregate(acc: ConfusionAccumulator) -> ScoreReport:
    """Per-class IoU / Acc plus weighted averages.

    A class with an empty denominator (never in gt, never predicted) scores
    1.0 by convention, and carries weight 0 in the average. The average
    weights are the per-class image presence counts.
    """
    if acc.n_items == 0:
        raise ValueError("empty accumulator")
    iou: dict[str, float] = {}
    acc_ratio: dict[str, float] = {}
    for cls in DistortionClass:
        i = cls - 1
        denom_iou = acc.tp[i] + acc.fp[i] + acc.fn[i]
        denom_acc = acc.tp[i] + acc.fn[i]
        iou[cls.label] = float(acc.tp[i] / denom_iou) if denom_iou > 0 else 1.0
        acc_ratio[cls.label] = float(acc.tp[i] / denom_acc) if denom_acc > 0 else 1.0
    weights = {cls.label: int(acc.image_presence[cls - 1]) for cls in DistortionClass}
    total_w = sum(weights.values())
    if total_w > 0:
        weighted_iou = sum(weights[k] * iou[k] for k in iou) / total_w
        weighted_acc = sum(weights[k] * acc_ratio[k] for k in acc_ratio) / total_w
    else:
        weighted_iou = 1.0
        weighted_acc = 1.0
    return ScoreReport(
        iou=iou,
        acc=acc_ratio,
        weighted_iou=weighted_iou,
        weighted_acc=weighted_acc,
        weights=weights,
        n_items=acc.n_items,
    )


def ground_truth_map(annotation, dims: Dims) -> LabelMap:
    """Rasterize one annotation's regions with smaller-region-first merging."""
    return merge_smaller_first(list(annotation.regions), dims=dims)


def _item_dims(item) -> Dims:
    for ann in item.annotations:
        for _, mask in ann.regions:
            return mask.dims
    raise ValueError(f"item {item.item_id} has no regions to infer dims from")


def evaluate_run(
    manifest: DatasetManifest,
    split: SplitSpec | None,
    predictions_dir,
    mode: str = "per-annotation",
    provenance: str = "human",
) -> ScoreReport:
    """Score a directory of prediction PNGs against manifest ground truths.

    Keys: per-annotation mode expects ``<item_id>__<annotation_id>.png``;
    per-image-average mode expects ``<item_id>.png``. A missing prediction
    file is an error naming the key.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    pred_dir = Path(predictions_dir)
    test_ids = set(split.test_ids) if split is not None else None
    acc = ConfusionAccumulator()
    missing: list[str] = []
    scored_any = False
    for item in manifest.items:
        if test_ids is not None and item.item_id not in test_ids:
            continue
        anns = [a for a in item.annotations if a.provenance == provenance]
        if not anns:
            continue
        dims = _item_dims(item)
        gts = [(a, ground_truth_map(a, dims)) for a in anns]
        image_present = np.zeros(NUM_CLASSES, dtype=bool)
        image_scored = False
        if mode == "per-annotation":
            for ann, gt in gts:
                key = f"{item.item_id}__{ann.annotation_id}"
                path = pred_dir / f"{key}.png"
                if not path.is_file():
                    missing.append(key)
                    continue
                counts = score_item(LabelMap.load_png(path), gt)
                acc.add(counts)
                image_present |= counts.present
                image_scored = True
        else:
            path = pred_dir / f"{item.item_id}.png"
            if not path.is_file():
                missing.append(item.item_id)
                continue
            pred = LabelMap.load_png(path)
            weight = 1.0 / len(gts)
            for _, gt in gts:
                counts = score_item(pred, gt)
                acc.add(counts, weight=weight)
                image_present |= counts.present
                image_scored = True
        if image_scored:
            acc.add_image_presence(image_present)
            scored_any = True
    if missing:
        raise FileNotFoundError(
            f"missing prediction files for keys: {', '.join(sorted(missing))}"
        )
    if not scored_any:
        raise ValueError("no items were scored")
    return aggregate(acc)
