"""Binary region masks, label maps, and the pixel-set algebra built on them.

Masks are dense boolean bitmaps internally; the storage and wire form is
COCO-style uncompressed RLE (row-major, alternating run lengths, starting
with a background run).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from PIL import Image


class Dims(NamedTuple):
    height: int
    width: int

    @property
    def npixels(self) -> int:
        return self.height * self.width

    def validate(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError(f"dims must be at least 1x1, got {self}")


class DistortionClass(enum.IntEnum):
    """The five annotated degradation types; 0 is reserved for background."""

    JITTER = 1
    NOISE = 2
    OVEREXPOSURE = 3
    BLUR = 4
    LOW_LIGHT = 5

    @property
    def label(self) -> str:
        return _CLASS_LABELS[self]


_CLASS_LABELS = {
    DistortionClass.JITTER: "jitter",
    DistortionClass.NOISE: "noise",
    DistortionClass.OVEREXPOSURE: "overexposure",
    DistortionClass.BLUR: "blur",
    DistortionClass.LOW_LIGHT: "low light",
}

BACKGROUND = 0
NUM_CLASSES = 5


@dataclass(frozen=True)
class RegionMask:
    """One binary region of an image, stored as uncompressed RLE runs."""

    dims: Dims
    counts: tuple[int, ...]

    def __post_init__(self):
        self.dims.validate()
        if any(c < 0 for c in self.counts):
            raise ValueError("RLE run lengths must be non-negative")
        if sum(self.counts) != self.dims.npixels:
            raise ValueError(
                f"RLE runs sum to {sum(self.counts)}, expected {self.dims.npixels}"
            )

    @cached_property
    def bitmap(self) -> np.ndarray:
        """Dense (H, W) boolean array. Cached; treat as read-only."""
        flat = rle_decode(self)
        flat.flags.writeable = False
        return flat

    @cached_property
    def area(self) -> int:
        return int(sum(self.counts[1::2]))

    def to_json(self) -> dict:
        return {
            "size": [self.dims.height, self.dims.width],
            "order": "row-major",
            "counts": list(self.counts),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RegionMask":
        h, w = obj["size"]
        if obj.get("order", "row-major") != "row-major":
            raise ValueError(f"unsupported RLE order {obj.get('order')!r}")
        return cls(Dims(int(h), int(w)), tuple(int(c) for c in obj["counts"]))


def rle_encode(bitmap: np.ndarray, dims: Dims | None = None) -> RegionMask:
    """Encode a boolean bitmap as a background-first RLE mask.

    Accepts either an (H, W) array (dims optional) or a flat array with
    explicit dims. Raises ValueError on a size mismatch.
    """
    arr = np.asarray(bitmap, dtype=bool)
    if arr.ndim == 2:
        inferred = Dims(arr.shape[0], arr.shape[1])
        if dims is not None and Dims(*dims) != inferred:
            raise ValueError(f"bitmap shape {inferred} does not match dims {dims}")
        dims = inferred
    elif arr.ndim == 1:
        if dims is None:
            raise ValueError("dims required for a flat bitmap")
        dims = Dims(*dims)
        if arr.size != dims.npixels:
            raise ValueError(f"bitmap has {arr.size} pixels, dims expect {dims.npixels}")
    else:
        raise ValueError(f"bitmap must be 1-D or 2-D, got shape {arr.shape}")
    dims.validate()

    flat = arr.reshape(-1)
    # Boundaries where the value flips; runs are the gaps between them.
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(edges).tolist()
    if flat[0]:
        runs = [0] + runs
    return RegionMask(dims, tuple(int(r) for r in runs))


def rle_decode(mask: RegionMask) -> np.ndarray:
    """Decode an RLE mask to a dense (H, W) boolean bitmap."""
    total = sum(mask.counts)
    if total != mask.dims.npixels:
        raise ValueError(f"RLE runs sum to {total}, expected {mask.dims.npixels}")
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for run in mask.counts:
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    return flat.reshape(mask.dims.height, mask.dims.width)


def area(mask: RegionMask) -> int:
    """Foreground pixel count."""
    return mask.area


def _check_same_dims(a: RegionMask, b: RegionMask) -> None:
    if a.dims != b.dims:
        raise ValueError(f"mask dims differ: {a.dims} vs {b.dims}")


def intersection_area(a: RegionMask, b: RegionMask) -> int:
    _check_same_dims(a, b)
    return int(np.count_nonzero(a.bitmap & b.bitmap))


def iou(a: RegionMask, b: RegionMask) -> float:
    """Intersection over union. Both empty is defined as 1.0 (perfect
    all-background agreement)."""
    _check_same_dims(a, b)
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union == 0:
        return 1.0
    return inter / union


def overlap_over_smaller(a: RegionMask, b: RegionMask) -> float:
    """Intersection area over the smaller mask's area."""
    _check_same_dims(a, b)
    smaller = min(a.area, b.area)
    if smaller == 0:
        raise ValueError("overlap_over_smaller requires both masks non-empty")
    return intersection_area(a, b) / smaller


def union_mask(masks: Iterable[RegionMask]) -> RegionMask:
    """Pixel-wise OR of masks sharing dims."""
    masks = list(masks)
    if not masks:
        raise ValueError("union_mask requires at least one mask")
    acc = np.array(masks[0].bitmap)
    for m in masks[1:]:
        _check_same_dims(masks[0], m)
        acc |= m.bitmap
    return rle_encode(acc)


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel distortion class map: 0 = background, 1..5 = classes."""

    dims: Dims
    pixels: np.ndarray  # (H, W) uint8

    def __post_init__(self):
        self.dims.validate()
        arr = np.asarray(self.pixels, dtype=np.uint8)
        if arr.shape != (self.dims.height, self.dims.width):
            raise ValueError(f"pixel array shape {arr.shape} does not match {self.dims}")
        if arr.max(initial=0) > NUM_CLASSES:
            raise ValueError("label map contains class codes above 5")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return self.dims == other.dims and bool(np.array_equal(self.pixels, other.pixels))

    def save_png(self, path) -> None:
        Image.fromarray(np.asarray(self.pixels), mode="L").save(path, format="PNG")

    @classmethod
    def load_png(cls, path) -> "LabelMap":
        arr = np.asarray(Image.open(path).convert("L"), dtype=np.uint8)
        if arr.max(initial=0) > NUM_CLASSES:
            raise ValueError(f"{path}: unknown class code {int(arr.max())} in label map")
        return cls(Dims(arr.shape[0], arr.shape[1]), arr)


def merge_smaller_first(
    labeled_regions: Sequence[tuple[DistortionClass, RegionMask]],
    dims: Dims | None = None,
) -> LabelMap:
    """Flatten class-labeled regions into a LabelMap, smaller region first.

    Where regions overlap, each pixel takes the class of the smallest-area
    region covering it; ties go to the lower class code, then input order.
    Uncovered pixels stay background.
    """
    if not labeled_regions:
        if dims is None:
            raise ValueError("dims required for an empty region list")
        dims = Dims(*dims)
        return LabelMap(dims, np.zeros((dims.height, dims.width), dtype=np.uint8))

    first_dims = labeled_regions[0][1].dims
    if dims is not None and Dims(*dims) != first_dims:
        raise ValueError(f"regions have dims {first_dims}, expected {dims}")
    for _, region in labeled_regions:
        if region.dims != first_dims:
            raise ValueError("all regions must share dims")

    # Paint largest first so smaller regions overwrite on top; the sort key
    # makes the tie-break (lower class code, then earlier input) win by
    # being painted last.
    order = sorted(
        range(len(labeled_regions)),
        key=lambda i: (labeled_regions[i][1].area, int(labeled_regions[i][0]), i),
        reverse=True,
    )
    out = np.zeros((first_dims.height, first_dims.width), dtype=np.uint8)
    for i in order:
        cls, region = labeled_regions[i]
        out[region.bitmap] = int(cls)
    return LabelMap(first_dims, out)


def class_histogram(label_map: LabelMap) -> dict[int, int]:
    """Pixel counts per class code, including background (0)."""
    counts = np.bincount(np.asarray(label_map.pixels).reshape(-1), minlength=NUM_CLASSES + 1)
    return {code: int(n) for code, n in enumerate(counts)}
