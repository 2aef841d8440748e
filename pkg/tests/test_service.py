import json
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

from stainscope import imaging, xai
from stainscope.api import create_app
from stainscope.errors import (
    CorruptImage,
    EmptyQuery,
    NoTissueFound,
    NotFound,
    SynthesisFailed,
    UnsupportedMethod,
    WrongState,
)
from stainscope.promptsynth import MockChatClient
from stainscope.report import FIELD_ORDER
from stainscope.store import SessionStore
from stainscope.toy import ToySpec, make_toy_backend
from stainscope.workbench import Workbench

FIXTURES = Path(__file__).parent / "data"

VALID_PROMPT_REPLY = json.dumps(
    {
        "system_prompt": "Analyze the provided stained slide.",
        "notes": "none",
        "required_json_keys": list(FIELD_ORDER),
    }
)


def scripted_client(n=10):
    return MockChatClient(script=[VALID_PROMPT_REPLY] * n)


@pytest.fixture()
def workbench(tmp_path):
    return Workbench(
        SessionStore(tmp_path / "data"),
        make_toy_backend(ToySpec(seed=42)),
        scripted_client(),
    )


@pytest.fixture()
def slide_png(bait_slide):
    return imaging.encode_png(bait_slide)


class TestStore:
    def test_round_trip(self, workbench, slide_png):
        session = workbench.create_session(slide_png, "ki-67 details", False)
        loaded = workbench.store.load(session.id)
        assert loaded.to_dict() == session.to_dict()

    def test_session_id_shape(self, workbench, slide_png):
        session = workbench.create_session(slide_png, "q", False)
        assert len(session.id) == 32
        int(session.id, 16)  # hex

    def test_unknown_id(self, workbench):
        with pytest.raises(NotFound):
            workbench.get_session("0" * 32)
        with pytest.raises(NotFound):
            workbench.get_session("../../etc/passwd")

    def test_no_temp_files_left(self, workbench, slide_png, tmp_path):
        session = workbench.create_session(slide_png, "q", False)
        leftovers = list((tmp_path / "data").rglob(".tmp-*"))
        assert leftovers == []
        assert (tmp_path / "data" / session.id / "session.json").is_file()

    def test_listing(self, workbench, slide_png):
        a = workbench.create_session(slide_png, "first", False)
        b = workbench.create_session(slide_png, "second", True)
        summaries = workbench.list_sessions()
        assert {s["id"] for s in summaries} == {a.id, b.id}
        assert all(s["status"] == "created" for s in summaries)


class TestStateMachine:
    def test_create_validations(self, workbench, slide_png):
        with pytest.raises(EmptyQuery):
            workbench.create_session(slide_png, "   ", False)
        with pytest.raises(CorruptImage):
            workbench.create_session(b"junk", "q", False)
        assert workbench.list_sessions() == []  # nothing persisted on failure

    def test_prompt_stage(self, workbench, slide_png):
        session = workbench.create_session(slide_png, "q", False)
        session = workbench.run_prompt_stage(session.id)
        assert session.status == "prompted"
        assert session.specialized_prompt is not None
        with pytest.raises(WrongState):
            workbench.run_prompt_stage(session.id)

    def test_prompt_failure_records_cause(self, tmp_path, slide_png):
        wb = Workbench(
            SessionStore(tmp_path / "d"),
            make_toy_backend(ToySpec(seed=42)),
            MockChatClient(script=["junk", "junk"]),
        )
        session = wb.create_session(slide_png, "q", False)
        with pytest.raises(SynthesisFailed):
            wb.run_prompt_stage(session.id)
        reloaded = wb.get_session(session.id)
        assert reloaded.status == "failed"
        assert "synthesis_failed" in reloaded.error

    def test_analysis_without_inpainting(self, workbench, slide_png):
        session = workbench.create_session(slide_png, "q", False)
        workbench.run_prompt_stage(session.id)
        session = workbench.run_analysis_stage(session.id)
        assert session.status == "analyzed"
        assert session.report is not None
        assert session.inpainted_ref is None
        assert session.generation_token_count > 0

    def test_analysis_with_inpainting(self, workbench, slide_png):
        session = workbench.create_session(slide_png, "q", True)
        workbench.run_prompt_stage(session.id)
        session = workbench.run_analysis_stage(session.id)
        assert session.inpainted_ref == "inpainted.png"
        assert workbench.store.has_blob(session.id, "inpainted.png")

    def test_inpainting_on_blank_slide_fails(self, workbench):
        blank = imaging.encode_png(
            imaging.ImageBuffer(np.full((64, 64, 3), 255, np.uint8))
        )
        session = workbench.create_session(blank, "q", True)
        workbench.run_prompt_stage(session.id)
        with pytest.raises(NoTissueFound):
            workbench.run_analysis_stage(session.id)
        assert workbench.get_session(session.id).status == "failed"

    def test_analysis_requires_prompted(self, workbench, slide_png):
        session = workbench.create_session(slide_png, "q", False)
        with pytest.raises(WrongState):
            workbench.run_analysis_stage(session.id)

    def test_explanation_flow(self, workbench, slide_png):
        session = workbench.create_session(slide_png, "q", True)
        workbench.run_prompt_stage(session.id)
        workbench.run_analysis_stage(session.id)
        record = workbench.run_explanation(
            session.id, "staining_location_per_cell", "gradcam"
        )
        assert record.index == 0
        map01 = xai.read_hlmap(workbench.store.read_blob(session.id, record.map_ref))
        assert map01.max() in (0.0, 1.0)
        png = workbench.store.read_blob(session.id, record.overlay_ref)
        overlay = imaging.decode_image(png)
        assert (overlay.height, overlay.width) == (100, 100)
        assert record.focus_score is not None
        assert 0.0 <= record.focus_score <= 1.0

    def test_repeat_explanation_byte_identical(self, workbench, slide_png):
        session = workbench.create_session(slide_png, "q", False)
        workbench.run_prompt_stage(session.id)
        workbench.run_analysis_stage(session.id)
        r0 = workbench.run_explanation(session.id, "staining_intensity_grade", "hirescam")
        r1 = workbench.run_explanation(session.id, "staining_intensity_grade", "hirescam")
        assert r1.index == 1
        assert workbench.store.read_blob(session.id, r0.map_ref) == workbench.store.read_blob(
            session.id, r1.map_ref
        )
        assert len(workbench.get_session(session.id).explanations) == 2

    def test_unsupported_method(self, workbench, slide_png):
        session = workbench.create_session(slide_png, "q", False)
        workbench.run_prompt_stage(session.id)
        workbench.run_analysis_stage(session.id)
        with pytest.raises(UnsupportedMethod):
            workbench.run_explanation(session.id, "report", "shapley")

    def test_all_methods_produce_maps(self, workbench, slide_png):
        session = workbench.create_session(slide_png, "q", False)
        workbench.run_prompt_stage(session.id)
        workbench.run_analysis_stage(session.id)
        for method in xai.METHODS:
            record = workbench.run_explanation(session.id, "staining_intensity_grade", method)
            assert workbench.store.has_blob(session.id, record.overlay_ref)


@pytest.fixture()
def client(workbench):
    return TestClient(create_app(workbench))


def create_via_api(client, slide_png, query="ki-67 details", inpaint=False):
    resp = client.post(
        "/api/sessions",
        files={"image": ("slide.png", slide_png, "image/png")},
        data={"query": query, "inpainting": str(inpaint).lower()},
    )
    assert resp.status_code == 200, resp.text
    return resp.json()


class TestHttpApi:
    def test_health(self, client):
        body = client.get("/api/health").json()
        assert body["status"] == "ok"
        assert body["backend"] == "toy-42"

    def test_full_round_trip(self, client, slide_png):
        session = create_via_api(client, slide_png, inpaint=True)
        sid = session["id"]
        assert session["status"] == "created"

        assert client.post(f"/api/sessions/{sid}/prompt").json()["status"] == "prompted"
        analyzed = client.post(f"/api/sessions/{sid}/analyze").json()
        assert analyzed["status"] == "analyzed"
        assert analyzed["report"]["stain_type"] == "KI67"

        resp = client.post(
            f"/api/sessions/{sid}/explanations",
            json={"field": "staining_location_per_cell", "method": "gradcam"},
        )
        assert resp.status_code == 200
        record = resp.json()
        png = client.get(f"/api/sessions/{sid}/heatmaps/{record['index']}.png")
        assert png.status_code == 200
        assert png.content[:8] == b"\x89PNG\r\n\x1a\n"
        original = client.get(f"/api/sessions/{sid}/image/original.png")
        inpainted = client.get(f"/api/sessions/{sid}/image/inpainted.png")
        assert original.status_code == 200 and inpainted.status_code == 200

        listed = client.get("/api/sessions").json()
        assert [s["id"] for s in listed] == [sid]

    def test_wrong_state_is_409(self, client, slide_png):
        sid = create_via_api(client, slide_png)["id"]
        resp = client.post(f"/api/sessions/{sid}/analyze")
        assert resp.status_code == 409
        assert resp.json()["error"] == "wrong_state"

    def test_unknown_session_is_404(self, client):
        resp = client.get(f"/api/sessions/{'0' * 32}")
        assert resp.status_code == 404
        assert resp.json()["error"] == "not_found"

    def test_validation_error_is_400(self, client, slide_png):
        sid = create_via_api(client, slide_png)["id"]
        client.post(f"/api/sessions/{sid}/prompt")
        client.post(f"/api/sessions/{sid}/analyze")
        resp = client.post(
            f"/api/sessions/{sid}/explanations",
            json={"field": "report", "method": "shapley"},
        )
        assert resp.status_code == 400
        assert resp.json()["error"] == "unsupported_method"

    def test_synthesis_failure_is_502(self, tmp_path, slide_png):
        wb = Workbench(
            SessionStore(tmp_path / "d"),
            make_toy_backend(ToySpec(seed=42)),
            MockChatClient(script=["junk", "junk"]),
        )
        client = TestClient(create_app(wb))
        sid = create_via_api(client, slide_png)["id"]
        resp = client.post(f"/api/sessions/{sid}/prompt")
        assert resp.status_code == 502
        assert resp.json()["error"] == "synthesis_failed"


def test_replayability(tmp_path, slide_png):
    """Same inputs through two fresh stacks give identical artifacts."""
    outputs = []
    for run in ("a", "b"):
        wb = Workbench(
            SessionStore(tmp_path / run),
            make_toy_backend(ToySpec(seed=42)),
            scripted_client(),
        )
        session = wb.create_session(slide_png, "ki-67 details", True)
        wb.run_prompt_stage(session.id)
        wb.run_analysis_stage(session.id)
        record = wb.run_explanation(session.id, "staining_intensity_grade", "gradcam")
        final = wb.get_session(session.id)
        payload = final.to_dict()
        payload.pop("id")
        payload.pop("created_at")
        outputs.append(
            (
                final.generation_text,
                json.dumps(payload, sort_keys=True),
                wb.store.read_blob(session.id, record.map_ref),
                wb.store.read_blob(session.id, record.overlay_ref),
            )
        )
    assert outputs[0] == outputs[1]
