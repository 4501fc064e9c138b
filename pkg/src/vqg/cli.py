"""Umbrella command line: validate | stats | split | agreement | score |
autolabel | synth | msfa-check | serve."""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - python < 3.11
    import tomli as tomllib

import click
import numpy as np
from PIL import Image

from . import agreement as agreement_mod
from . import msfa as msfa_mod
from . import scoring, store, synth
from .autolabel import LlmEndpointConfig, autolabel as run_autolabel, build_prompts
from .masks import DistortionClass, Dims, RegionMask, rle_encode


@click.group()
@click.option("--log-level", default="WARNING", show_default=True)
def main(log_level):
    logging.basicConfig(level=getattr(logging, log_level.upper(), logging.WARNING))


@main.command()
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--check-images", is_flag=True, help="Also require image files to exist.")
def validate(manifest, check_images):
    """Validate a manifest; exits non-zero on the first violation."""
    try:
        m = store.load_manifest(manifest, check_images=check_images)
    except store.ManifestError as exc:
        click.echo(f"INVALID: {exc}", err=True)
        sys.exit(1)
    click.echo(f"OK: {len(m.items)} items")


@main.command()
@click.argument("manifest", type=click.Path(exists=True))
def stats(manifest):
    """Per-source / per-provenance / per-class counts."""
    m = store.load_manifest(manifest)
    click.echo(json.dumps(store.stats(m), indent=2))


@main.command()
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--seed", type=int, required=True)
@click.option("--test-count", type=int, required=True)
@click.option("--out", type=click.Path(), default=None, help="Write the split JSON here.")
def split(manifest, seed, test_count, out):
    """Deterministic train/test split over human-annotated items."""
    m = store.load_manifest(manifest)
    spec = store.make_split(m, seed=seed, test_count=test_count)
    payload = json.dumps(spec.to_json(), indent=2)
    if out:
        Path(out).write_text(payload)
        click.echo(f"wrote {out}: {len(spec.test_ids)} test / {len(spec.train_ids)} train")
    else:
        click.echo(payload)


@main.command()
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--source", default=None, help="Restrict to one image source.")
@click.option("--mode", type=click.Choice(agreement_mod.MODES), default="per-class",
              show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Write the JSON report here.")
def agreement(manifest, source, mode, out):
    """Inter-annotator pairwise recall."""
    m = store.load_manifest(manifest)
    if source:
        reports = {source: agreement_mod.dataset_agreement(m, source=source, mode=mode)}
    else:
        reports = agreement_mod.per_source_agreement(m, mode=mode)
        reports["__all__"] = agreement_mod.dataset_agreement(m, mode=mode)
    click.echo(f"{'Dataset':<16} {'Recall':>8} {'Images':>8}")
    for name, report in reports.items():
        click.echo(f"{name:<16} {report.recall:>8.3f} {report.n_images:>8}")
    if out:
        Path(out).write_text(
            json.dumps({k: r.to_json() for k, r in reports.items()}, indent=2)
        )


@main.command()
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--split", "split_path", type=click.Path(exists=True), default=None,
              help="Split JSON; scores the test set only.")
@click.option("--pred", "pred_dir", type=click.Path(exists=True), required=True)
@click.option("--mode", type=click.Choice(scoring.MODES), default="per-annotation",
              show_default=True)
@click.option("--out", type=click.Path(), default=None)
def score(manifest, split_path, pred_dir, mode, out):
    """Score prediction label maps against manifest ground truth."""
    m = store.load_manifest(manifest)
    split_spec = None
    if split_path:
        split_spec = store.SplitSpec.from_json(json.loads(Path(split_path).read_text()))
    report = scoring.evaluate_run(m, split_spec, pred_dir, mode=mode)
    click.echo(f"{'class':<14} {'mIoU':>7} {'mAcc':>7} {'weight':>7}")
    for label in report.iou:
        click.echo(
            f"{label:<14} {report.iou[label]:>7.3f} {report.acc[label]:>7.3f}"
            f" {report.weights[label]:>7}"
        )
    click.echo(f"{'Average':<14} {report.weighted_iou:>7.3f} {report.weighted_acc:>7.3f}")
    if out:
        Path(out).write_text(json.dumps(report.to_json(), indent=2))


def _load_endpoint(path) -> LlmEndpointConfig:
    with open(path, "rb") as f:
        cfg = tomllib.load(f)
    return LlmEndpointConfig(**cfg)


@main.command()
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--regions", "regions_dir", type=click.Path(exists=True), required=True,
              help="Directory of per-item pre-segmentation JSON files.")
@click.option("--endpoint", "endpoint_path", type=click.Path(exists=True), required=True,
              help="Endpoint config TOML.")
@click.option("--dry-run", is_flag=True, help="Print prompts instead of calling the endpoint.")
@click.option("--limit", type=int, default=None)
def autolabel(manifest, regions_dir, endpoint_path, dry_run, limit):
    """Auto-annotate items that have pre-segmented regions but no LMM run."""
    m = store.load_manifest(manifest)
    endpoint = _load_endpoint(endpoint_path)
    regions_dir = Path(regions_dir)
    images_dir = Path(manifest).parent
    done = 0
    for item in m.items:
        if limit is not None and done >= limit:
            break
        if any(a.provenance == "lmm" for a in item.annotations):
            continue
        region_file = regions_dir / f"{item.item_id}.json"
        if not region_file.is_file():
            continue
        regions = [RegionMask.from_json(o) for o in json.loads(region_file.read_text())]
        if dry_run:
            system, user = build_prompts(item.quality_text)
            click.echo(f"--- {item.item_id}\n[system] {system}\n[user] {user}")
            done += 1
            continue
        image = np.asarray(Image.open(images_dir / item.image).convert("RGB"))
        annotation = run_autolabel(image, regions, item.quality_text, endpoint,
                                   reference_text_id=item.item_id)
        store.add_annotation(m, item.item_id, annotation)
        done += 1
    if not dry_run and done:
        store.save_manifest(m, Path(manifest))
    click.echo(f"processed {done} item(s)")


@main.command()
@click.option("--base", required=True,
              help="Base image path, or flat:WxH for a uniform gray image.")
@click.option("--spec", "spec_path", type=click.Path(exists=True), required=True,
              help="JSON list of {kind, severity, rect [y,x,h,w] | mask RLE, seed}.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def synth_cmd(base, spec_path, seed, out_dir):
    """Generate a distorted triplet with perfect ground truth."""
    if base.startswith("flat:"):
        w, h = (int(v) for v in base[5:].lower().split("x"))
        image = synth.flat_base(h, w)
        dims = Dims(h, w)
    else:
        image = np.asarray(Image.open(base).convert("L"), dtype=float) / 255.0
        dims = Dims(image.shape[0], image.shape[1])
    specs = []
    for obj in json.loads(Path(spec_path).read_text()):
        if "rect" in obj:
            y, x, rh, rw = obj["rect"]
            bitmap = np.zeros((dims.height, dims.width), dtype=bool)
            bitmap[y : y + rh, x : x + rw] = True
            region = rle_encode(bitmap)
        else:
            region = RegionMask.from_json(obj["mask"])
        specs.append(
            synth.DistortionSpec(
                kind=DistortionClass[obj["kind"].upper().replace(" ", "_")],
                region=region,
                severity=float(obj["severity"]),
                seed=int(obj.get("seed", seed)),
            )
        )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    image, triplet, annotation = synth.synth_triplet(image, specs, seed=seed)
    Image.fromarray((np.clip(image, 0, 1) * 255).astype(np.uint8)).save(out / triplet.image)
    for i, (cls, region) in enumerate(annotation.regions):
        (out / f"{triplet.item_id}-region{i}.json").write_text(json.dumps(region.to_json()))
    with open(out / "manifest.jsonl", "a", encoding="utf-8") as f:
        f.write(json.dumps(triplet.to_json()) + "\n")
    click.echo(f"wrote {triplet.item_id} to {out}")


main.add_command(synth_cmd, name="synth")


@main.command(name="msfa-check")
@click.option("--seed", type=int, default=0, show_default=True)
def msfa_check(seed):
    """Run the full abstractor invariant and gradient suite."""
    rows = msfa_mod.run_check_suite(seed=seed)
    failed = 0
    for name, ok, detail in rows:
        click.echo(f"{'PASS' if ok else 'FAIL'}  {name:<40} {detail}")
        failed += not ok
    click.echo(f"{len(rows) - failed}/{len(rows)} checks passed")
    if failed:
        sys.exit(1)


@main.command()
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--regions", "regions_dir", type=click.Path(exists=True), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--images", "images_dir", type=click.Path(exists=True), default=None)
def serve(manifest, regions_dir, host, port, images_dir):
    """Run the annotation service for the browser workbench."""
    from .service import serve as run_serve

    run_serve(manifest, regions_dir, host=host, port=port, images_dir=images_dir)


if __name__ == "__main__":
    main()
