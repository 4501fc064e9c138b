"""vqg: toolkit for building, auto-labeling, validating and
benchmarking visual-quality-grounding datasets."""

from .masks import (
    Dims,
    DistortionClass,
    LabelMap,
    RegionMask,
    area,
    class_histogram,
    intersection_area,
    iou,
    merge_smaller_first,
    overlap_over_smaller,
    rle_decode,
    rle_encode,
)
from .store import (
    Annotation,
    DatasetManifest,
    QualityTriplet,
    SplitSpec,
    load_manifest,
    make_split,
    save_manifest,
    stats,
)

__all__ = [
    "Dims",
    "DistortionClass",
    "LabelMap",
    "RegionMask",
    "area",
    "class_histogram",
    "intersection_area",
    "iou",
    "merge_smaller_first",
    "overlap_over_smaller",
    "rle_decode",
    "rle_encode",
    "Annotation",
    "DatasetManifest",
    "QualityTriplet",
    "SplitSpec",
    "load_manifest",
    "make_split",
    "save_manifest",
    "stats",
]

__version__ = "0.1.0"
