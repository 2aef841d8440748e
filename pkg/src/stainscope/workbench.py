"""End-to-end pipeline orchestration over the session store."""

from __future__ import annotations

import json
import secrets
import threading
from datetime import datetime, timezone
from typing import Optional

import numpy as np

from . import errors, imaging, xai
from .backend import GenerationResult, TokenSpan, VisionLanguageBackend, locate_value_span
from .promptsynth import ChatClient, ChatClientConfig, synthesize_prompt
from .report import FIELD_ORDER, extract_json_block, validate_report
from .store import AnalysisSession, ExplanationRecord, SessionStore

OVERLAY_ALPHA = 0.5


class Workbench:
    """Ties imaging, prompt synthesis, the backend and XAI to persisted sessions."""

    def __init__(
        self,
        store: SessionStore,
        backend: VisionLanguageBackend,
        chat_client: ChatClient,
        chat_config: ChatClientConfig | None = None,
        mask_params: imaging.MaskParams | None = None,
    ):
        self.store = store
        self.backend = backend
        self.chat_client = chat_client
        self.chat_config = chat_config or ChatClientConfig()
        self.mask_params = mask_params or imaging.MaskParams()
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(session_id, threading.Lock())

    # --- lifecycle -----------------------------------------------------------

    def create_session(
        self, image_bytes: bytes, query: str, inpainting_enabled: bool
    ) -> AnalysisSession:
        if not query.strip():
            raise errors.EmptyQuery("query is empty after trimming")
        img = imaging.decode_image(image_bytes)  # raises before anything persists
        session = AnalysisSession(
            id=secrets.token_hex(16),
            created_at=datetime.now(timezone.utc).isoformat(),
            query=query,
            inpainting_enabled=inpainting_enabled,
        )
        self.store.write_blob(session.id, session.image_ref, imaging.encode_png(img))
        self.store.save(session)
        return session

    def run_prompt_stage(self, session_id: str) -> AnalysisSession:
        with self._lock_for(session_id):
            session = self.store.load(session_id)
            self._require_status(session, "created")
            try:
                session.specialized_prompt = synthesize_prompt(
                    session.query, self.chat_client, self.chat_config
                )
            except errors.WorkbenchError as exc:
                self._fail(session, exc)
                raise
            session.status = "prompted"
            self.store.save(session)
            return session

    def run_analysis_stage(self, session_id: str) -> AnalysisSession:
        with self._lock_for(session_id):
            session = self.store.load(session_id)
            self._require_status(session, "prompted")
            img = imaging.decode_image(self.store.read_blob(session_id, session.image_ref))
            try:
                mask = self._compute_mask(session, img)
                image_used = img
                if session.inpainting_enabled:
                    if mask is None:
                        raise errors.NoTissueFound("no tissue detected for in-painting")
                    image_used = imaging.apply_roi_inpainting(img, mask)
                    session.inpainted_ref = "inpainted.png"
                    self.store.write_blob(
                        session_id, session.inpainted_ref, imaging.encode_png(image_used)
                    )
                gen = self.backend.generate(image_used, session.specialized_prompt)
                try:
                    block = extract_json_block(gen.text)
                except errors.NoJsonFound as exc:
                    raise errors.NoJsonInOutput(str(exc)) from exc
                try:
                    session.report = validate_report(block)
                except errors.WorkbenchError as exc:
                    raise errors.ReportInvalid(exc.message) from exc
            except errors.WorkbenchError as exc:
                self._fail(session, exc)
                raise
            session.generation_text = gen.text
            session.generation_token_count = len(gen.token_ids)
            self.store.write_blob(
                session_id,
                "generation.json",
                json.dumps(
                    {
                        "token_ids": list(gen.token_ids),
                        "text": gen.text,
                        "offsets": [list(o) for o in gen.offsets],
                        "logprobs": list(gen.logprobs),
                    }
                ).encode("utf-8"),
            )
            session.status = "analyzed"
            self.store.save(session)
            return session

    def run_explanation(self, session_id: str, field: str, method: str) -> ExplanationRecord:
        if method not in xai.METHODS:
            raise errors.UnsupportedMethod(f"unknown explanation method {method!r}")
        if field not in FIELD_ORDER:
            raise errors.FieldNotInOutput(f"unknown report field {field!r}")
        with self._lock_for(session_id):
            session = self.store.load(session_id)
            self._require_status(session, "analyzed")
            image_used = imaging.decode_image(
                self.store.read_blob(session_id, session.inpainted_ref or session.image_ref)
            )
            gen = self._load_generation(session_id)
            span = locate_value_span(gen, field)

            bundle = self.backend.capture(
                image_used, session.specialized_prompt, gen, span, "standard"
            )
            size = (image_used.height, image_used.width)
            if method == "gradcam":
                raw = xai.grad_cam(bundle).values
            elif method == "gradcampp":
                raw = xai.grad_cam_pp(bundle).values
            elif method == "hirescam":
                raw = xai.hires_cam(bundle).values
            else:  # guided_gradcam
                guided = self.backend.capture(
                    image_used, session.specialized_prompt, gen, span, "guided"
                )
                saliency = xai.guided_backprop_saliency(guided)
                raw = xai.guided_grad_cam(xai.grad_cam(bundle), saliency, size).values

            map01 = xai.normalize_map(raw)
            lifted = map01 if map01.shape == size else imaging.upsample_bilinear(map01, *size)
            overlay = imaging.render_overlay(image_used, lifted, OVERLAY_ALPHA)

            focus: Optional[float] = None
            if session.mask_ref and self.store.has_blob(session_id, session.mask_ref):
                mask = self._load_mask(session_id, session.mask_ref)
                focus = xai.focus_consistency(lifted, mask)

            index = len(session.explanations)
            record = ExplanationRecord(
                field=field,
                method=method,
                index=index,
                map_ref=f"heatmaps/{index}.hlmap",
                overlay_ref=f"heatmaps/{index}.png",
                focus_score=focus,
            )
            self.store.write_blob(session_id, record.map_ref, xai.write_hlmap(map01))
            self.store.write_blob(session_id, record.overlay_ref, imaging.encode_png(overlay))
            session.explanations.append(record)
            self.store.save(session)
            return record

    def get_session(self, session_id: str) -> AnalysisSession:
        return self.store.load(session_id)

    def list_sessions(self) -> list[dict]:
        out = []
        for sid in self.store.list_ids():
            s = self.store.load(sid)
            out.append(
                {
                    "id": s.id,
                    "created_at": s.created_at,
                    "status": s.status,
                    "query": s.query,
                    "inpainting_enabled": s.inpainting_enabled,
                }
            )
        return out

    # --- helpers -------------------------------------------------------------

    def _compute_mask(
        self, session: AnalysisSession, img: imaging.ImageBuffer
    ) -> imaging.TissueMask | None:
        try:
            mask = imaging.compute_tissue_mask(img, self.mask_params)
        except errors.NoTissueFound:
            return None
        session.mask_ref = "mask.png"
        packed = (mask.bits.astype(np.uint8) * 255)[:, :, None].repeat(3, axis=2)
        self.store.write_blob(session.id, session.mask_ref, imaging.encode_png(
            imaging.ImageBuffer(packed)
        ))
        return mask

    def _load_mask(self, session_id: str, rel_path: str) -> imaging.TissueMask:
        img = imaging.decode_image(self.store.read_blob(session_id, rel_path))
        return imaging.TissueMask(img.pixels[:, :, 0] > 127)

    def _load_generation(self, session_id: str) -> GenerationResult:
        data = json.loads(self.store.read_blob(session_id, "generation.json"))
        return GenerationResult(
            token_ids=tuple(data["token_ids"]),
            text=data["text"],
            offsets=tuple(tuple(o) for o in data["offsets"]),
            logprobs=tuple(data["logprobs"]),
        )

    def _require_status(self, session: AnalysisSession, expected: str) -> None:
        if session.status != expected:
            raise errors.WrongState(
                f"operation requires status {expected!r}, session is {session.status!r}"
            )

    def _fail(self, session: AnalysisSession, exc: errors.WorkbenchError) -> None:
        session.status = "failed"
        session.error = f"{exc.code}: {exc.message}"
        self.store.save(session)
