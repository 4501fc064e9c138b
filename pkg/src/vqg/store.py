"""Manifest-based persistence, validation, splitting and statistics.

The manifest is JSON-lines, one item per line. Region masks are stored
inline as RLE JSON or in sidecar .json files referenced by relative path.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .masks import DistortionClass, RegionMask

SOURCES = (
    "KonIQ-10K",
    "SPAQ",
    "LIVE-FB",
    "LIVE-itw",
    "AGIQA-3K",
    "ImageRewardDB",
    "synthetic",
)

PROVENANCES = ("human", "lmm")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Annotation:
    """One annotator's (or one LLM run's) labeled regions for an item."""

    annotation_id: str
    provenance: str
    annotator_id: str
    reference_text_id: str
    regions: tuple[tuple[DistortionClass, RegionMask], ...]

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ManifestError(
                f"annotation {self.annotation_id}: unknown provenance {self.provenance!r}"
            )

    def to_json(self) -> dict:
        return {
            "annotation_id": self.annotation_id,
            "provenance": self.provenance,
            "annotator_id": self.annotator_id,
            "reference_text_id": self.reference_text_id,
            "regions": [
                {"class": int(cls), "mask": mask.to_json()} for cls, mask in self.regions
            ],
        }


@dataclass(frozen=True)
class QualityTriplet:
    """The dataset unit: image ref, quality text, and its annotations."""

    item_id: str
    image: str
    source: str
    quality_text: str
    mos: float | None = None
    annotations: tuple[Annotation, ...] = ()

    def to_json(self) -> dict:
        return {
            "item_id": self.item_id,
            "image": self.image,
            "source": self.source,
            "quality_text": self.quality_text,
            "mos": self.mos,
            "annotations": [a.to_json() for a in self.annotations],
        }


@dataclass
class DatasetManifest:
    items: list[QualityTriplet] = field(default_factory=list)
    path: Path | None = None

    def by_id(self, item_id: str) -> QualityTriplet:
        for item in self.items:
            if item.item_id == item_id:
                return item
        raise KeyError(item_id)

    def replace_item(self, item: QualityTriplet) -> None:
        for i, existing in enumerate(self.items):
            if existing.item_id == item.item_id:
                self.items[i] = item
                return
        raise KeyError(item.item_id)


def _parse_mask(obj, base_dir: Path | None) -> RegionMask:
    if isinstance(obj, str):
        if base_dir is None:
            raise ManifestError(f"mask path {obj!r} needs a manifest directory to resolve")
        path = base_dir / obj
        if not path.is_file():
            raise ManifestError(f"dangling mask reference: {obj}")
        with open(path) as f:
            obj = json.load(f)
    return RegionMask.from_json(obj)


def _parse_item(obj: dict, base_dir: Path | None) -> QualityTriplet:
    annotations = []
    for ann in obj.get("annotations", []):
        regions = tuple(
            (DistortionClass(int(r["class"])), _parse_mask(r["mask"], base_dir))
            for r in ann["regions"]
        )
        annotations.append(
            Annotation(
                annotation_id=ann["annotation_id"],
                provenance=ann["provenance"],
                annotator_id=ann.get("annotator_id", ""),
                reference_text_id=ann.get("reference_text_id", ""),
                regions=regions,
            )
        )
    quality_text = obj["quality_text"]
    if not quality_text:
        raise ManifestError(f"item {obj.get('item_id')!r}: empty quality_text")
    source = obj["source"]
    if source not in SOURCES:
        raise ManifestError(f"item {obj.get('item_id')!r}: unknown source {source!r}")
    return QualityTriplet(
        item_id=obj["item_id"],
        image=obj["image"],
        source=source,
        quality_text=quality_text,
        mos=obj.get("mos"),
        annotations=tuple(annotations),
    )


def load_manifest(path, check_images: bool = False) -> DatasetManifest:
    """Parse and validate a JSONL manifest.

    Raises ManifestError naming the offending line on the first violation
    (malformed JSON, duplicate item_id, dangling mask reference).
    """
    path = Path(path)
    base_dir = path.parent
    items: list[QualityTriplet] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: malformed JSON ({exc})") from exc
            try:
                item = _parse_item(obj, base_dir)
            except (KeyError, ManifestError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
            if item.item_id in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate item_id {item.item_id!r}")
            seen.add(item.item_id)
            if check_images and not (base_dir / item.image).is_file():
                raise ManifestError(f"{path}:{lineno}: missing image file {item.image}")
            items.append(item)
    return DatasetManifest(items=items, path=path)


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write the manifest atomically (temp file then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        for item in manifest.items:
            f.write(json.dumps(item.to_json(), ensure_ascii=False) + "\n")
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)
    manifest.path = path


def add_annotation(manifest: DatasetManifest, item_id: str, annotation: Annotation) -> None:
    item = manifest.by_id(item_id)
    if any(a.annotation_id == annotation.annotation_id for a in item.annotations):
        raise ManifestError(f"duplicate annotation_id {annotation.annotation_id!r}")
    manifest.replace_item(replace(item, annotations=item.annotations + (annotation,)))


def stats(manifest: DatasetManifest) -> dict:
    """Image / annotation / per-class region counts split by provenance
    and by source."""
    out = {
        "items": len(manifest.items),
        "by_provenance": {},
        "by_source": {},
    }
    for prov in PROVENANCES:
        images = set()
        n_ann = 0
        class_counts = {cls.label: 0 for cls in DistortionClass}
        for item in manifest.items:
            for ann in item.annotations:
                if ann.provenance != prov:
                    continue
                images.add(item.item_id)
                n_ann += 1
                for cls, _ in ann.regions:
                    class_counts[cls.label] += 1
        out["by_provenance"][prov] = {
            "images": len(images),
            "annotations": n_ann,
            "regions_by_class": class_counts,
        }
    for item in manifest.items:
        src = out["by_source"].setdefault(item.source, {"items": 0, "annotations": 0})
        src["items"] += 1
        src["annotations"] += len(item.annotations)
    return out


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    test_count: int
    test_ids: tuple[str, ...]
    train_ids: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "test_count": self.test_count,
            "test": list(self.test_ids),
            "train": list(self.train_ids),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SplitSpec":
        return cls(
            seed=int(obj["seed"]),
            test_count=int(obj["test_count"]),
            test_ids=tuple(obj["test"]),
            train_ids=tuple(obj["train"]),
        )


class _Xoshiro256StarStar:
    """Portable seeded PRNG so splits are identical across platforms."""

    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        # splitmix64 expansion of the scalar seed into the 4-word state
        state = []
        x = seed & self.MASK
        for _ in range(4):
            x = (x + 0x9E3779B97F4A7C15) & self.MASK
            z = x
            z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self.MASK
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self.MASK
            state.append(z ^ (z >> 31))
        self.s = state

    @staticmethod
    def _rotl(x: int, k: int) -> int:
        return ((x << k) | (x >> (64 - k))) & _Xoshiro256StarStar.MASK

    def next_u64(self) -> int:
        s = self.s
        result = (self._rotl((s[1] * 5) & self.MASK, 7) * 9) & self.MASK
        t = (s[1] << 17) & self.MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = self._rotl(s[3], 45)
        return result

    def below(self, n: int) -> int:
        # rejection sampling to avoid modulo bias
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n


def make_split(manifest: DatasetManifest, seed: int, test_count: int) -> SplitSpec:
    """Deterministic train/test split; only human-annotated items are
    eligible for the test set."""
    eligible = [
        item.item_id
        for item in manifest.items
        if any(a.provenance == "human" for a in item.annotations)
    ]
    if test_count > len(eligible):
        raise ManifestError(
            f"test_count {test_count} exceeds {len(eligible)} human-annotated items"
        )
    pool = sorted(eligible)
    rng = _Xoshiro256StarStar(seed)
    # Fisher-Yates over the sorted id list
    for i in range(len(pool) - 1, 0, -1):
        j = rng.below(i + 1)
        pool[i], pool[j] = pool[j], pool[i]
    test = set(pool[:test_count])
    train = tuple(item.item_id for item in manifest.items if item.item_id not in test)
    test_ids = tuple(item.item_id for item in manifest.items if item.item_id in test)
    return SplitSpec(seed=seed, test_count=test_count, test_ids=test_ids, train_ids=train)
