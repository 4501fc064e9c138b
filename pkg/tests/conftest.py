import json

import numpy as np
import pytest

from vqg.masks import Dims, DistortionClass, RegionMask, rle_encode
from vqg.store import Annotation, DatasetManifest, QualityTriplet, save_manifest


def rect_mask(dims: Dims, y, x, h, w) -> RegionMask:
    bitmap = np.zeros((dims.height, dims.width), dtype=bool)
    bitmap[y : y + h, x : x + w] = True
    return rle_encode(bitmap)


def random_mask(rng, dims: Dims, density=0.5) -> RegionMask:
    return rle_encode(rng.random((dims.height, dims.width)) < density)


def make_annotation(ann_id, regions, provenance="human", annotator="a1"):
    return Annotation(
        annotation_id=ann_id,
        provenance=provenance,
        annotator_id=annotator,
        reference_text_id="t0",
        regions=tuple(regions),
    )


def make_item(item_id, annotations, source="KonIQ-10K", text="the image is blurry"):
    return QualityTriplet(
        item_id=item_id,
        image=f"{item_id}.png",
        source=source,
        quality_text=text,
        annotations=tuple(annotations),
    )


@pytest.fixture
def dims8():
    return Dims(8, 8)


@pytest.fixture
def simple_manifest(tmp_path):
    """Three items, mixed provenance, written to disk."""
    dims = Dims(8, 8)
    items = [
        make_item(
            "item-1",
            [
                make_annotation("a1", [(DistortionClass.BLUR, rect_mask(dims, 0, 0, 4, 4))]),
                make_annotation(
                    "a2",
                    [(DistortionClass.JITTER, rect_mask(dims, 2, 2, 3, 3))],
                    annotator="a2",
                ),
            ],
        ),
        make_item(
            "item-2",
            [
                make_annotation(
                    "b1",
                    [(DistortionClass.NOISE, rect_mask(dims, 4, 4, 4, 4))],
                    provenance="lmm",
                    annotator="gpt",
                )
            ],
            source="SPAQ",
        ),
        make_item("item-3", [], source="LIVE-FB"),
    ]
    manifest = DatasetManifest(items=items)
    path = tmp_path / "manifest.jsonl"
    save_manifest(manifest, path)
    return path


def write_regions_file(path, masks):
    path.write_text(json.dumps([m.to_json() for m in masks]))
