"""Parametric regional distortion injector.

Produces (image, quality text, annotation) triplets with perfect ground
truth for end-to-end oracle testing of the scorer, the agreement metric,
and the autolabel plumbing. The parametric forms are verification fixtures,
not models of any real capture pipeline.

Images are float arrays in [0, 1], grayscale (H, W) or RGB (H, W, 3).
Every kind is bit-exact identity outside the spec region and at severity 0.
"""
from __future__ import annotations

import uuid
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .masks import DistortionClass, RegionMask
from .store import Annotation, QualityTriplet

TEXT_TEMPLATES = {
    DistortionClass.BLUR: "the {place} content is too blurry",
    DistortionClass.JITTER: "the {place} shows visible motion jitter",
    DistortionClass.NOISE: "the {place} is corrupted by heavy noise",
    DistortionClass.OVEREXPOSURE: "the {place} is washed out by overexposure",
    DistortionClass.LOW_LIGHT: "the {place} is too dark to make out details",
}

_PLACES = ("background", "foreground", "left side", "right side", "central area")


@dataclass(frozen=True)
class DistortionSpec:
    kind: DistortionClass
    region: RegionMask
    severity: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.severity <= 1.0:
            raise ValueError(f"severity must be in [0, 1], got {self.severity}")
        if self.region.area == 0:
            raise ValueError("spec region must be non-empty")


def _as_channels(image: np.ndarray) -> tuple[np.ndarray, bool]:
    if image.ndim == 2:
        return image[..., None], True
    if image.ndim == 3:
        return image, False
    raise ValueError(f"image must be (H, W) or (H, W, C), got shape {image.shape}")


def apply(image: np.ndarray, spec: DistortionSpec) -> np.ndarray:
    """Apply one regional distortion; pixels outside the region are
    untouched and severity 0 is the identity."""
    image = np.asarray(image, dtype=float)
    chans, squeeze = _as_channels(image)
    h, w = chans.shape[:2]
    if spec.region.dims != (h, w):
        raise ValueError(f"region dims {spec.region.dims} do not match image ({h}, {w})")
    if spec.severity == 0.0:
        return image.copy()

    mask = spec.region.bitmap
    out = chans.copy()
    s = spec.severity
    if spec.kind == DistortionClass.BLUR:
        sigma = 4.0 * s
        full = ndimage.gaussian_filter(chans, sigma=(sigma, sigma, 0), mode="nearest")
        out[mask] = full[mask]
    elif spec.kind == DistortionClass.JITTER:
        length = max(2, int(round(1 + 14 * s)))
        full = ndimage.uniform_filter1d(chans, size=length, axis=1, mode="nearest")
        out[mask] = full[mask]
    elif spec.kind == DistortionClass.NOISE:
        rng = np.random.default_rng(spec.seed)
        noisy = np.clip(chans + rng.normal(0.0, 0.3 * s, chans.shape), 0.0, 1.0)
        out[mask] = noisy[mask]
    elif spec.kind == DistortionClass.OVEREXPOSURE:
        bright = np.clip(chans * (1.0 + 3.0 * s), 0.0, 1.0)
        out[mask] = bright[mask]
    elif spec.kind == DistortionClass.LOW_LIGHT:
        dark = chans * (1.0 - 0.95 * s)
        out[mask] = dark[mask]
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown distortion kind {spec.kind}")
    return out[..., 0] if squeeze else out


def synth_triplet(
    base_image: np.ndarray,
    specs: list[DistortionSpec],
    seed: int = 0,
    item_id: str | None = None,
    image_ref: str = "",
) -> tuple[np.ndarray, QualityTriplet, Annotation]:
    """Distort a base image per the specs, with the specs themselves as
    perfect ground truth.

    Spec regions must be pairwise disjoint; the quality text mentions each
    applied kind exactly once and is deterministic for a fixed seed.
    """
    covered = None
    for spec in specs:
        bitmap = spec.region.bitmap
        if covered is None:
            covered = bitmap.copy()
        else:
            if (covered & bitmap).any():
                raise ValueError("spec regions must be pairwise disjoint")
            covered |= bitmap

    rng = np.random.default_rng(seed)
    image = np.asarray(base_image, dtype=float).copy()
    sentences: list[str] = []
    seen_kinds: set[DistortionClass] = set()
    for spec in specs:
        image = apply(image, spec)
        if spec.kind not in seen_kinds:
            seen_kinds.add(spec.kind)
            place = _PLACES[int(rng.integers(len(_PLACES)))]
            sentences.append(TEXT_TEMPLATES[spec.kind].format(place=place))
    if sentences:
        quality_text = "Overall, this image has quality issues: " + "; ".join(sentences) + "."
    else:
        quality_text = "The image looks clean, with no visible distortions."

    item_id = item_id or f"synth-{uuid.uuid4().hex[:12]}"
    annotation = Annotation(
        annotation_id=f"{item_id}-gt",
        provenance="human",
        annotator_id="synthetic-oracle",
        reference_text_id=item_id,
        regions=tuple((spec.kind, spec.region) for spec in specs),
    )
    triplet = QualityTriplet(
        item_id=item_id,
        image=image_ref or f"{item_id}.png",
        source="synthetic",
        quality_text=quality_text,
        annotations=(annotation,),
    )
    return image, triplet, annotation


def flat_base(height: int, width: int, value: float = 0.5, channels: int = 1) -> np.ndarray:
    """Uniform base image handy for fixtures."""
    if channels == 1:
        return np.full((height, width), value, dtype=float)
    return np.full((height, width, channels), value, dtype=float)
