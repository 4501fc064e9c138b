"""Inter-annotator agreement: pairwise recall of intersection area over the
smaller mask, averaged over annotation pairs and images.

For each unordered pair of annotations of the same image, masks are compared
per distortion class: the union mask of each class present in BOTH
annotations contributes intersection/min(area), and the pair score is the
mean over those shared classes. A pair with no shared class scores 0 (the
same region labeled with different distortion types is a disagreement).
A class-agnostic mode that pools every region into one mask per annotation
is available for sensitivity analysis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

from .masks import DistortionClass, RegionMask, overlap_over_smaller, union_mask
from .store import Annotation, DatasetManifest

MODES = ("per-class", "class-agnostic")


def _class_masks(ann: Annotation) -> dict[DistortionClass, RegionMask]:
    grouped: dict[DistortionClass, list[RegionMask]] = {}
    for cls, mask in ann.regions:
        if mask.area > 0:
            grouped.setdefault(cls, []).append(mask)
    return {cls: union_mask(masks) for cls, masks in grouped.items()}


def pair_recall(a: Annotation, b: Annotation, mode: str = "per-class") -> float:
    """Agreement of two annotations of the same image, in [0, 1]."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if not a.regions or not b.regions:
        raise ValueError("pair_recall requires both annotations to have regions")
    ma, mb = _class_masks(a), _class_masks(b)
    if not ma or not mb:
        raise ValueError("pair_recall requires non-empty region masks")
    if mode == "class-agnostic":
        return overlap_over_smaller(union_mask(ma.values()), union_mask(mb.values()))
    shared = sorted(set(ma) & set(mb))
    if not shared:
        return 0.0
    return sum(overlap_over_smaller(ma[cls], mb[cls]) for cls in shared) / len(shared)


@dataclass
class AgreementReport:
    recall: float
    n_images: int
    per_image: dict[str, float] = field(default_factory=dict)
    pair_counts: dict[str, int] = field(default_factory=dict)
    mode: str = "per-class"
    source: str | None = None
    # The pair count per image is read as (m_i choose 2): the number of
    # unordered annotation pairs.
    pairing: str = "unordered pairs, m_i choose 2"

    def to_json(self) -> dict:
        return {
            "recall": self.recall,
            "n_images": self.n_images,
            "per_image": self.per_image,
            "pair_counts": self.pair_counts,
            "mode": self.mode,
            "source": self.source,
            "pairing": self.pairing,
        }


def dataset_agreement(
    manifest: DatasetManifest,
    source: str | None = None,
    mode: str = "per-class",
    provenance: str = "human",
) -> AgreementReport:
    """Mean per-image agreement over all images with at least two annotations.

    Each image contributes the mean of pair_recall over its (m_i choose 2)
    unordered annotation pairs; the dataset recall is the unweighted mean
    over contributing images.
    """
    per_image: dict[str, float] = {}
    pair_counts: dict[str, int] = {}
    for item in manifest.items:
        if source is not None and item.source != source:
            continue
        anns = [
            a for a in item.annotations if a.provenance == provenance and a.regions
        ]
        if len(anns) < 2:
            continue
        pairs = list(combinations(anns, 2))
        score = sum(pair_recall(a, b, mode=mode) for a, b in pairs) / len(pairs)
        per_image[item.item_id] = score
        pair_counts[item.item_id] = len(pairs)
    if not per_image:
        raise ValueError("no image has at least two annotations")
    recall = sum(per_image.values()) / len(per_image)
    return AgreementReport(
        recall=recall,
        n_images=len(per_image),
        per_image=per_image,
        pair_counts=pair_counts,
        mode=mode,
        source=source,
    )


def per_source_agreement(
    manifest: DatasetManifest, mode: str = "per-class"
) -> dict[str, AgreementReport]:
    """Agreement per image source, skipping sources without eligible pairs."""
    out: dict[str, AgreementReport] = {}
    for source in sorted({item.source for item in manifest.items}):
        try:
            out[source] = dataset_agreement(manifest, source=source, mode=mode)
        except ValueError:
            continue
    return out
