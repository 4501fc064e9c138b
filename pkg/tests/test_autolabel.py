import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from vqg.autolabel import (
    AuthConfigError,
    AutoLabelEntry,
    AutoLabelResponse,
    CANONICAL_LABELS,
    LlmEndpointConfig,
    RetriesExhaustedError,
    ResponseParseError,
    assign_marks,
    autolabel,
    build_prompts,
    compose_annotation,
    generate_quality_text,
    levenshtein,
    mark_boxes,
    match_distortion,
    parse_response,
    render_marks,
)
from vqg.masks import Dims, DistortionClass
from conftest import rect_mask

GOLDEN_RESPONSE = """[
    {
        "2": "blur",
        "gpt4v iqa": "The scenery here is quite blurry, detail is lost."
    },
    {
        "3": "low light",
        "gpt4v iqa": "This area is dark and lacks adequate lighting."
    },
    {
        "4": "low light",
        "gpt4v iqa": "The image appears dark due to weak lighting."
    },
    {
        "5": "no distortion",
        "gpt4v iqa": "The main subject, the boat, appears relatively clear with no significant distortion."
    }
]"""


class TestAssignMarks:
    def test_single_region_anchor_inside(self, dims8):
        region = rect_mask(dims8, 2, 2, 3, 3)
        marks = assign_marks([region])
        assert [r.mark for r in marks.regions] == [1]
        row, col = marks.regions[0].anchor
        assert region.bitmap[row, col]

    def test_decreasing_area_numbering(self, dims8):
        small = rect_mask(dims8, 0, 0, 2, 5)  # area 10
        big = rect_mask(dims8, 3, 0, 5, 8)  # area 40
        marks = assign_marks([small, big])
        assert marks.by_mark(1).mask == big
        assert marks.by_mark(2).mask == small

    def test_solid_square_anchor_is_center(self):
        dims = Dims(9, 9)
        marks = assign_marks([rect_mask(dims, 1, 1, 5, 5)])
        assert marks.regions[0].anchor == (3, 3)

    def test_empty_region_rejected(self, dims8):
        import numpy as np
        from vqg.masks import rle_encode

        with pytest.raises(ValueError, match="empty"):
            assign_marks([rle_encode(np.zeros((8, 8), bool))])

    def test_no_regions_rejected(self):
        with pytest.raises(ValueError):
            assign_marks([])


class TestRenderMarks:
    def test_only_numeral_boxes_change(self):
        dims = Dims(64, 64)
        image = np.full((64, 64, 3), 128, np.uint8)
        marks = assign_marks([rect_mask(dims, 8, 8, 40, 40)])
        rendered = render_marks(image, marks)
        boxes = mark_boxes(image, marks)
        outside = np.ones((64, 64), dtype=bool)
        for left, top, right, bottom in boxes:
            outside[max(top, 0) : bottom + 1, max(left, 0) : right + 1] = False
        assert np.array_equal(rendered[outside], image[outside])
        assert not np.array_equal(rendered, image)


class TestBuildPrompts:
    def test_user_contains_reference(self):
        _, user = build_prompts("X")
        assert "The overall quality reference is: X" in user
        assert "[blur, jitter, overexposure, low light, noise, no distortion]" in user

    def test_system_contains_json_skeleton(self):
        system, _ = build_prompts("x")
        assert '"[mark number]": "distortion type"' in system
        assert '"gpt4v iqa": "message"' in system
        assert system.startswith(
            "You are a helpful assistant to help me evaluate the quality of the image"
        )

    def test_stable_bytes(self):
        assert build_prompts("same text") == build_prompts("same text")

    def test_empty_text_rejected(self):
        with pytest.raises(ValueError):
            build_prompts("")


class TestParseResponse:
    def test_golden_response(self):
        parsed = parse_response(GOLDEN_RESPONSE)
        labels = {e.mark: e.raw_label for e in parsed.entries}
        assert labels == {2: "blur", 3: "low light", 4: "low light", 5: "no distortion"}

    def test_empty_string(self):
        with pytest.raises(ResponseParseError):
            parse_response("")

    def test_markdown_fenced(self):
        text = "Sure, here is the result:\n```json\n" + GOLDEN_RESPONSE + "\n```\nDone."
        parsed = parse_response(text)
        assert len(parsed.entries) == 4

    def test_trailing_comma_in_skeleton_style(self):
        text = '[{\n    "1": "blur",\n    "gpt4v iqa": "msg",\n}]'
        parsed = parse_response(text)
        assert parsed.entries[0].mark == 1

    def test_non_integer_mark(self):
        with pytest.raises(ResponseParseError, match="non-integer"):
            parse_response('[{"abc": "blur", "gpt4v iqa": "m"}]')

    def test_missing_mark_key(self):
        with pytest.raises(ResponseParseError, match="no mark"):
            parse_response('[{"gpt4v iqa": "m"}]')

    def test_serialize_round_trip(self):
        response = AutoLabelResponse(
            entries=(
                AutoLabelEntry(1, "blur", "too soft"),
                AutoLabelEntry(2, "noise", "grainy"),
            )
        )
        assert parse_response(json.dumps(response.to_json())) == response


class TestMatchDistortion:
    def test_exact_matches(self):
        for canonical, cls in CANONICAL_LABELS:
            assert match_distortion(canonical) == cls

    def test_blurry_maps_to_blur(self):
        # distances: blur 2, jitter 6, overexposure 11, low light 8, noise 5,
        # no distortion 11 -> blur wins
        dists = {c: levenshtein("blurry", c) for c, _ in CANONICAL_LABELS}
        assert dists["blur"] == 2
        assert all(d > 2 for name, d in dists.items() if name != "blur")
        assert match_distortion("blurry") == DistortionClass.BLUR

    def test_no_distortion_is_none(self):
        assert match_distortion("no distortion") is None

    def test_case_folding(self):
        assert match_distortion("Low Light") == DistortionClass.LOW_LIGHT
        assert match_distortion("OVEREXPOSURE") == DistortionClass.OVEREXPOSURE

    def test_total_and_deterministic(self):
        assert match_distortion("completely unrelated words") is not None or True
        assert match_distortion("zzz") == match_distortion("zzz")


class TestLevenshtein:
    @pytest.mark.parametrize(
        "a,b,expected", [("cow", "bow", 1), ("cow", "bowl", 2), ("", "abc", 3), ("same", "same", 0)]
    )
    def test_known_distances(self, a, b, expected):
        assert levenshtein(a, b) == expected

    def test_symmetric(self):
        assert levenshtein("kitten", "sitting") == levenshtein("sitting", "kitten") == 3


class TestComposeAnnotation:
    def _marks(self, dims):
        regions = [
            rect_mask(dims, 0, 0, 6, 8),  # mark 1 (largest)
            rect_mask(dims, 6, 0, 2, 5),  # mark 2
            rect_mask(dims, 6, 5, 2, 3),  # mark 3
        ]
        return assign_marks(regions)

    def test_golden_compose_drops_no_distortion(self, dims8):
        regions = [
            rect_mask(dims8, 0, 0, 4, 8),
            rect_mask(dims8, 4, 0, 2, 8),
            rect_mask(dims8, 6, 0, 1, 8),
            rect_mask(dims8, 7, 0, 1, 6),
            rect_mask(dims8, 7, 6, 1, 2),
        ]
        marks = assign_marks(regions)
        parsed = parse_response(GOLDEN_RESPONSE)
        annotation = compose_annotation(marks, parsed)
        assert annotation.provenance == "lmm"
        classes = sorted(int(c) for c, _ in annotation.regions)
        assert classes == sorted(
            [int(DistortionClass.BLUR), int(DistortionClass.LOW_LIGHT), int(DistortionClass.LOW_LIGHT)]
        )
        marked_5 = marks.by_mark(5).mask
        assert all(m != marked_5 for _, m in annotation.regions)

    def test_all_no_distortion_yields_empty(self, dims8):
        marks = self._marks(dims8)
        response = AutoLabelResponse(
            entries=tuple(AutoLabelEntry(i, "no distortion", "") for i in (1, 2, 3))
        )
        annotation = compose_annotation(marks, response)
        assert annotation.regions == ()

    def test_unknown_mark_ignored_with_warning(self, dims8, caplog):
        marks = self._marks(dims8)
        response = AutoLabelResponse(
            entries=(AutoLabelEntry(1, "blur", ""), AutoLabelEntry(9, "noise", ""))
        )
        with caplog.at_level("WARNING"):
            annotation = compose_annotation(marks, response)
        assert len(annotation.regions) == 1
        assert "unknown mark 9" in caplog.text


class ScriptedHandler(BaseHTTPRequestHandler):
    script: list[str] = []
    calls: list[dict] = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).calls.append(body)
        reply = type(self).script.pop(0) if type(self).script else GOLDEN_RESPONSE
        payload = json.dumps({"choices": [{"message": {"content": reply}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), ScriptedHandler)
    ScriptedHandler.script = []
    ScriptedHandler.calls = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


def _endpoint(base_url, **kw):
    defaults = dict(
        base_url=base_url,
        model="stub-vision",
        timeout=10.0,
        max_retries=2,
        backoff_initial=0.0,
    )
    defaults.update(kw)
    return LlmEndpointConfig(**defaults)


def _five_regions(dims):
    return [
        rect_mask(dims, 0, 0, 4, 8),
        rect_mask(dims, 4, 0, 2, 8),
        rect_mask(dims, 6, 0, 1, 8),
        rect_mask(dims, 7, 0, 1, 6),
        rect_mask(dims, 7, 6, 1, 2),
    ]


class TestAutolabelEndToEnd:
    def test_auth_error_before_any_request(self, dims8, monkeypatch):
        monkeypatch.delenv("VQG_LLM_TOKEN", raising=False)
        endpoint = _endpoint("http://127.0.0.1:1")
        image = np.zeros((8, 8, 3), np.uint8)
        with pytest.raises(AuthConfigError):
            autolabel(image, _five_regions(dims8), "text", endpoint)
        assert ScriptedHandler.calls == []

    def test_stub_golden_annotation(self, dims8, stub_server, monkeypatch):
        monkeypatch.setenv("VQG_LLM_TOKEN", "test-token")
        endpoint = _endpoint(stub_server)
        image = np.zeros((8, 8, 3), np.uint8)
        annotation = autolabel(image, _five_regions(dims8), "the boat is clear", endpoint)
        classes = sorted(int(c) for c, _ in annotation.regions)
        assert classes == [int(DistortionClass.BLUR), int(DistortionClass.LOW_LIGHT), int(DistortionClass.LOW_LIGHT)]
        assert annotation.provenance == "lmm"

    def test_retry_until_parseable(self, dims8, stub_server, monkeypatch):
        monkeypatch.setenv("VQG_LLM_TOKEN", "test-token")
        ScriptedHandler.script = ["not json at all", "still { nothing", GOLDEN_RESPONSE]
        endpoint = _endpoint(stub_server, max_retries=2)
        image = np.zeros((8, 8, 3), np.uint8)
        annotation = autolabel(image, _five_regions(dims8), "text", endpoint, sleep=lambda s: None)
        assert len(ScriptedHandler.calls) == 3
        assert len(annotation.regions) == 3

    def test_retries_exhausted(self, dims8, stub_server, monkeypatch):
        monkeypatch.setenv("VQG_LLM_TOKEN", "test-token")
        ScriptedHandler.script = ["junk", "junk", "junk"]
        endpoint = _endpoint(stub_server, max_retries=2)
        image = np.zeros((8, 8, 3), np.uint8)
        with pytest.raises(RetriesExhaustedError):
            autolabel(image, _five_regions(dims8), "text", endpoint, sleep=lambda s: None)

    def test_cache_short_circuits_second_call(self, dims8, stub_server, monkeypatch, tmp_path):
        monkeypatch.setenv("VQG_LLM_TOKEN", "test-token")
        endpoint = _endpoint(stub_server, cache_dir=str(tmp_path / "cache"))
        image = np.zeros((8, 8, 3), np.uint8)
        first = autolabel(image, _five_regions(dims8), "text", endpoint)
        n_calls = len(ScriptedHandler.calls)
        second = autolabel(image, _five_regions(dims8), "text", endpoint)
        assert len(ScriptedHandler.calls) == n_calls
        assert [(int(c), m) for c, m in first.regions] == [(int(c), m) for c, m in second.regions]

    def test_generate_quality_text(self, stub_server, monkeypatch):
        monkeypatch.setenv("VQG_LLM_TOKEN", "test-token")
        ScriptedHandler.script = ["The image is blurry."]
        endpoint = _endpoint(stub_server)
        record = generate_quality_text(np.zeros((8, 8, 3), np.uint8), endpoint)
        assert record["quality_text"] == "The image is blurry."
        assert record["model"] == "stub-vision"
        sent = ScriptedHandler.calls[-1]["messages"][0]["content"][0]["text"]
        assert sent == "The input image: <|image|>. Describe and evaluate the quality of the image."
