"""Start the annotation service on a throwaway fixture dataset.

Usage: python3 serve_fixture.py PORT
Prints "MANIFEST <path>" then "READY" once listening; serves until killed.
"""
import json
import sys
import tempfile
import threading
from pathlib import Path

import numpy as np
import uvicorn

from vqg.masks import Dims, rle_encode
from vqg.service import create_app
from vqg.store import DatasetManifest, QualityTriplet, save_manifest


def rect(dims, y, x, h, w):
    bitmap = np.zeros((dims.height, dims.width), dtype=bool)
    bitmap[y : y + h, x : x + w] = True
    return rle_encode(bitmap)


def main():
    port = int(sys.argv[1])
    root = Path(tempfile.mkdtemp(prefix="vqg-ui-"))
    dims = Dims(16, 16)
    manifest_path = root / "manifest.jsonl"
    save_manifest(
        DatasetManifest(
            items=[
                QualityTriplet(
                    item_id="item-1",
                    image="item-1.png",
                    source="KonIQ-10K",
                    quality_text="the building in the middle looks blurry",
                )
            ]
        ),
        manifest_path,
    )
    regions_dir = root / "regions"
    regions_dir.mkdir()
    candidates = [rect(dims, 2, 2, 8, 8), rect(dims, 4, 4, 3, 3), rect(dims, 12, 12, 3, 3)]
    (regions_dir / "item-1.json").write_text(json.dumps([c.to_json() for c in candidates]))

    print(f"MANIFEST {manifest_path}", flush=True)
    app = create_app(manifest_path, regions_dir)
    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning")
    server = uvicorn.Server(config)

    def announce():
        while not server.started:
            pass
        print("READY", flush=True)

    threading.Thread(target=announce, daemon=True).start()
    server.run()


if __name__ == "__main__":
    main()
