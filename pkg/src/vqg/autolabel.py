"""Automatic annotation via set-of-mark prompting of a vision LLM.

Pre-segmented regions are numbered, a numeral overlay is rendered on the
image, the marked image plus a quality reference text are sent to a
chat-completion endpoint, and the JSON reply is parsed back into a
class-labeled annotation. Free-form distortion labels are snapped to the
canonical vocabulary by shortest edit distance.
"""
from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import os
import re
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import httpx
import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .masks import DistortionClass, RegionMask
from .store import Annotation

log = logging.getLogger(__name__)

# Canonical label vocabulary, in prompt-list order; ties in edit distance
# resolve to the earlier entry.
CANONICAL_LABELS: tuple[tuple[str, DistortionClass | None], ...] = (
    ("blur", DistortionClass.BLUR),
    ("jitter", DistortionClass.JITTER),
    ("overexposure", DistortionClass.OVEREXPOSURE),
    ("low light", DistortionClass.LOW_LIGHT),
    ("noise", DistortionClass.NOISE),
    ("no distortion", None),
)

SYSTEM_PROMPT = (
    "You are a helpful assistant to help me evaluate the quality of the image. "
    "The image is divided into several regions with number marks. You will be "
    "given an overall evaluation of the quality as reference. Please help to "
    "identify the distortions of each region within the following types "
    "[blur, jitter, overexposure, low light, noise, no distortion]. "
    "Please give the result in the following json format:\n"
    '[{\n    "[mark number]": "distortion type",\n    "gpt4v iqa": "message",\n}]\n'
    "Please note that the distortion type should be one of the five types "
    "mentioned above, and the message should be a brief evaluation of the "
    "quality of the region. Please strictly follow the format, otherwise the "
    "result will be invalid."
)

USER_PROMPT_TEMPLATE = (
    "The overall quality reference is: {quality_text}. Please help to identify "
    "the distortions of each region within the following types "
    "[blur, jitter, overexposure, low light, noise, no distortion]."
)

QUALITY_TEXT_PROMPT = (
    "The input image: <|image|>. Describe and evaluate the quality of the image."
)


class AutoLabelError(Exception):
    pass


class AuthConfigError(AutoLabelError):
    """The token environment variable is missing or empty."""


class TransportError(AutoLabelError):
    """HTTP-level failure after exhausting transport retries."""


class ResponseParseError(AutoLabelError):
    """The model reply could not be parsed into the required format."""


class RetriesExhaustedError(AutoLabelError):
    """Every attempt produced an unparseable reply."""


@dataclass(frozen=True)
class MarkedRegion:
    mark: int
    mask: RegionMask
    anchor: tuple[int, int]  # (row, col), inside the region


@dataclass(frozen=True)
class MarkedRegionSet:
    regions: tuple[MarkedRegion, ...]

    def by_mark(self, mark: int) -> MarkedRegion:
        for r in self.regions:
            if r.mark == mark:
                return r
        raise KeyError(mark)


@dataclass(frozen=True)
class AutoLabelEntry:
    mark: int
    raw_label: str
    message: str


@dataclass(frozen=True)
class AutoLabelResponse:
    entries: tuple[AutoLabelEntry, ...]

    def to_json(self) -> list[dict]:
        return [
            {str(e.mark): e.raw_label, "gpt4v iqa": e.message} for e in self.entries
        ]


@dataclass
class LlmEndpointConfig:
    base_url: str
    model: str
    token_env: str = "VQG_LLM_TOKEN"
    timeout: float = 60.0
    max_retries: int = 3
    max_concurrency: int = 4
    backoff_initial: float = 1.0
    backoff_cap: float = 30.0
    cache_dir: str | None = None
    transcript_path: str | None = None


def anchor_point(mask: RegionMask) -> tuple[int, int]:
    """Foreground pixel furthest from the region boundary (pole of
    inaccessibility on the pixel grid)."""
    bitmap = mask.bitmap
    if not bitmap.any():
        raise ValueError("cannot place an anchor in an empty region")
    dist = ndimage.distance_transform_edt(bitmap)
    idx = int(np.argmax(dist))
    return (idx // bitmap.shape[1], idx % bitmap.shape[1])


def assign_marks(regions: list[RegionMask]) -> MarkedRegionSet:
    """Number regions 1..n in decreasing-area order and place anchors."""
    if not regions:
        raise ValueError("assign_marks requires at least one region")
    for r in regions:
        if r.area == 0:
            raise ValueError("empty region in input")
    order = sorted(range(len(regions)), key=lambda i: (-regions[i].area, i))
    marked = tuple(
        MarkedRegion(mark=n, mask=regions[i], anchor=anchor_point(regions[i]))
        for n, i in enumerate(order, start=1)
    )
    return MarkedRegionSet(regions=marked)


def render_marks(image: np.ndarray, marks: MarkedRegionSet) -> np.ndarray:
    """Draw each mark numeral at its anchor. Only pixels inside a small box
    around each anchor are touched."""
    img = Image.fromarray(image)
    draw = ImageDraw.Draw(img)
    for region in marks.regions:
        row, col = region.anchor
        text = str(region.mark)
        bbox = draw.textbbox((col, row), text)
        pad = 2
        draw.rectangle(
            (bbox[0] - pad, bbox[1] - pad, bbox[2] + pad, bbox[3] + pad),
            fill=(255, 255, 255) if img.mode == "RGB" else 255,
        )
        draw.text((col, row), text, fill=(255, 0, 0) if img.mode == "RGB" else 0)
    return np.asarray(img)


def mark_boxes(image: np.ndarray, marks: MarkedRegionSet) -> list[tuple[int, int, int, int]]:
    """Bounding boxes (left, top, right, bottom) of the numeral overlays."""
    img = Image.fromarray(image)
    draw = ImageDraw.Draw(img)
    boxes = []
    for region in marks.regions:
        row, col = region.anchor
        bbox = draw.textbbox((col, row), str(region.mark))
        pad = 2
        boxes.append((bbox[0] - pad, bbox[1] - pad, bbox[2] + pad, bbox[3] + pad))
    return boxes


def build_prompts(quality_text: str) -> tuple[str, str]:
    """System and user messages for the set-of-mark labeling request."""
    if not quality_text:
        raise ValueError("quality_text must be non-empty")
    return SYSTEM_PROMPT, USER_PROMPT_TEMPLATE.format(quality_text=quality_text)


_ARRAY_RE = re.compile(r"\[.*\]", re.DOTALL)


def _extract_json_array(text: str):
    try:
        obj = json.loads(text)
        if isinstance(obj, list):
            return obj
    except json.JSONDecodeError:
        pass
    # Tolerant path: take the outermost bracketed span (handles markdown
    # fences and surrounding prose), trimming trailing commas.
    match = _ARRAY_RE.search(text)
    if match is None:
        raise ResponseParseError("no JSON array found in response")
    candidate = re.sub(r",(\s*[}\]])", r"\1", match.group(0))
    try:
        obj = json.loads(candidate)
    except json.JSONDecodeError as exc:
        raise ResponseParseError(f"could not parse JSON array: {exc}") from exc
    if not isinstance(obj, list):
        raise ResponseParseError("extracted JSON is not an array")
    return obj


def parse_response(text: str) -> AutoLabelResponse:
    """Parse a model reply into mark/label entries.

    Raises ResponseParseError (carrying the reason, for retry) when no JSON
    array is found, an entry lacks a mark or label, or a mark key is not an
    integer.
    """
    arr = _extract_json_array(text)
    entries: list[AutoLabelEntry] = []
    for i, obj in enumerate(arr):
        if not isinstance(obj, dict):
            raise ResponseParseError(f"entry {i} is not an object")
        message = str(obj.get("gpt4v iqa", ""))
        mark_items = [(k, v) for k, v in obj.items() if k != "gpt4v iqa"]
        if not mark_items:
            raise ResponseParseError(f"entry {i} has no mark key")
        for key, value in mark_items:
            try:
                mark = int(str(key).strip().strip("[]"))
            except ValueError as exc:
                raise ResponseParseError(f"entry {i}: non-integer mark {key!r}") from exc
            label = str(value).strip()
            if not label:
                raise ResponseParseError(f"entry {i}: empty label for mark {mark}")
            entries.append(AutoLabelEntry(mark=mark, raw_label=label, message=message))
    return AutoLabelResponse(entries=tuple(entries))


def levenshtein(a: str, b: str) -> int:
    """Plain edit distance (insert / delete / substitute, unit costs)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def match_distortion(raw_label: str) -> DistortionClass | None:
    """Snap a free-form label to the nearest canonical distortion type.

    Case-folded Levenshtein distance to the six canonical strings; the
    minimum wins, ties resolve in canonical list order. "no distortion"
    maps to None.
    """
    folded = raw_label.casefold().strip()
    best_cls: DistortionClass | None = None
    best_dist: int | None = None
    for canonical, cls in CANONICAL_LABELS:
        d = levenshtein(folded, canonical)
        if best_dist is None or d < best_dist:
            best_dist = d
            best_cls = cls
    return best_cls


def compose_annotation(
    marks: MarkedRegionSet,
    response: AutoLabelResponse,
    annotator_id: str = "lmm",
    reference_text_id: str = "",
    annotation_id: str | None = None,
) -> Annotation:
    """Turn parsed labels back into a class-labeled annotation.

    "no distortion" regions are dropped; entries referencing unknown marks
    are ignored with a warning; unreferenced marks are dropped.
    """
    regions: list[tuple[DistortionClass, RegionMask]] = []
    for entry in response.entries:
        try:
            region = marks.by_mark(entry.mark)
        except KeyError:
            log.warning("response references unknown mark %d; ignoring", entry.mark)
            continue
        cls = match_distortion(entry.raw_label)
        if cls is None:
            continue
        regions.append((cls, region.mask))
    if not regions:
        log.info("all marked regions labeled 'no distortion'; empty annotation")
    return Annotation(
        annotation_id=annotation_id or uuid.uuid4().hex,
        provenance="lmm",
        annotator_id=annotator_id,
        reference_text_id=reference_text_id,
        regions=tuple(regions),
    )


def _resolve_token(endpoint: LlmEndpointConfig) -> str:
    token = os.environ.get(endpoint.token_env, "")
    if not token:
        raise AuthConfigError(
            f"auth token environment variable {endpoint.token_env!r} is not set"
        )
    return token


def _encode_image_png(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _log_transcript(endpoint: LlmEndpointConfig, record: dict) -> None:
    if endpoint.transcript_path is None:
        return
    with open(endpoint.transcript_path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record, ensure_ascii=False) + "\n")


def chat_request(
    endpoint: LlmEndpointConfig,
    system: str | None,
    user: str,
    image: np.ndarray | None = None,
    sleep=time.sleep,
) -> str:
    """One chat-completion round trip with transport retries and
    exponential backoff."""
    token = _resolve_token(endpoint)
    content: list[dict] | str
    if image is not None:
        content = [
            {"type": "text", "text": user},
            {
                "type": "image_url",
                "image_url": {"url": "data:image/png;base64," + _encode_image_png(image)},
            },
        ]
    else:
        content = user
    messages = []
    if system is not None:
        messages.append({"role": "system", "content": system})
    messages.append({"role": "user", "content": content})
    payload = {"model": endpoint.model, "messages": messages}

    delay = endpoint.backoff_initial
    last_exc: Exception | None = None
    for attempt in range(endpoint.max_retries + 1):
        try:
            resp = httpx.post(
                endpoint.base_url.rstrip("/") + "/chat/completions",
                json=payload,
                headers={"Authorization": f"Bearer {token}"},
                timeout=endpoint.timeout,
            )
            if resp.status_code in (401, 403):
                raise AuthConfigError(f"endpoint rejected credentials ({resp.status_code})")
            resp.raise_for_status()
            text = resp.json()["choices"][0]["message"]["content"]
            _log_transcript(
                endpoint,
                {"ts": time.time(), "model": endpoint.model, "request": user, "response": text},
            )
            return text
        except AuthConfigError:
            raise
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            last_exc = exc
            if attempt < endpoint.max_retries:
                sleep(min(delay, endpoint.backoff_cap))
                delay *= 2
    raise TransportError(f"request failed after retries: {last_exc}") from last_exc


def _cache_key(image: np.ndarray, marks: MarkedRegionSet, quality_text: str, model: str) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(image).tobytes())
    for r in marks.regions:
        h.update(json.dumps(r.mask.to_json(), sort_keys=True).encode())
    h.update(quality_text.encode())
    h.update(model.encode())
    return h.hexdigest()


def autolabel(
    image: np.ndarray,
    regions: list[RegionMask],
    quality_text: str,
    endpoint: LlmEndpointConfig,
    reference_text_id: str = "",
    sleep=time.sleep,
) -> Annotation:
    """Full set-of-mark auto-annotation of one image.

    Marks the regions, renders the numeral overlay, sends the prompts, and
    retries (up to max_retries, with backoff) when the reply fails to parse.
    Results are cached by content hash when a cache dir is configured.
    """
    _resolve_token(endpoint)  # fail on auth config before any work
    marks = assign_marks(regions)
    marked_image = render_marks(image, marks)
    system, user = build_prompts(quality_text)

    cache_path = None
    if endpoint.cache_dir is not None:
        key = _cache_key(image, marks, quality_text, endpoint.model)
        cache_path = Path(endpoint.cache_dir) / f"{key}.json"
        if cache_path.is_file():
            with open(cache_path) as f:
                cached = AutoLabelResponse(
                    entries=tuple(AutoLabelEntry(**e) for e in json.load(f))
                )
            return compose_annotation(marks, cached, reference_text_id=reference_text_id)

    last_error: ResponseParseError | None = None
    delay = endpoint.backoff_initial
    for attempt in range(endpoint.max_retries + 1):
        text = chat_request(endpoint, system, user, image=marked_image, sleep=sleep)
        try:
            response = parse_response(text)
            break
        except ResponseParseError as exc:
            last_error = exc
            log.warning("attempt %d: unparseable reply (%s)", attempt + 1, exc)
            if attempt < endpoint.max_retries:
                sleep(min(delay, endpoint.backoff_cap))
                delay *= 2
    else:
        raise RetriesExhaustedError(
            f"no parseable reply after {endpoint.max_retries + 1} attempts: {last_error}"
        )

    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        tmp = cache_path.with_suffix(".tmp")
        with open(tmp, "w") as f:
            json.dump([e.__dict__ for e in response.entries], f)
        os.replace(tmp, cache_path)
    return compose_annotation(marks, response, reference_text_id=reference_text_id)


def generate_quality_text(image: np.ndarray, endpoint: LlmEndpointConfig, sleep=time.sleep) -> dict:
    """Ask the model to describe image quality; returns the text verbatim
    with model name and timestamp for provenance."""
    text = chat_request(endpoint, None, QUALITY_TEXT_PROMPT, image=image, sleep=sleep)
    if not text.strip():
        raise AutoLabelError("model returned an empty quality text")
    return {"quality_text": text, "model": endpoint.model, "timestamp": time.time()}
