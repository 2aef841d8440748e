"""Directory-per-session persistence with atomic session.json writes."""

from __future__ import annotations

import json
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import NotFound
from .promptsynth import SpecializedPrompt
from .report import StainReport, serialize_report, validate_report

STATUSES = ("created", "prompted", "analyzed", "failed")

_ID_RE = re.compile(r"^[0-9a-f]{32}$")


@dataclass
class ExplanationRecord:
    field: str
    method: str
    index: int
    map_ref: str
    overlay_ref: str
    focus_score: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "field": self.field,
            "method": self.method,
            "index": self.index,
            "map_ref": self.map_ref,
            "overlay_ref": self.overlay_ref,
            "focus_score": self.focus_score,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExplanationRecord":
        return cls(**data)


@dataclass
class AnalysisSession:
    id: str
    created_at: str  # UTC ISO-8601
    query: str
    inpainting_enabled: bool
    status: str = "created"
    image_ref: str = "original.png"
    inpainted_ref: Optional[str] = None
    mask_ref: Optional[str] = None
    specialized_prompt: Optional[SpecializedPrompt] = None
    report: Optional[StainReport] = None
    generation_text: Optional[str] = None
    generation_token_count: Optional[int] = None
    explanations: list[ExplanationRecord] = field(default_factory=list)
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "created_at": self.created_at,
            "query": self.query,
            "inpainting_enabled": self.inpainting_enabled,
            "status": self.status,
            "image_ref": self.image_ref,
            "inpainted_ref": self.inpainted_ref,
            "mask_ref": self.mask_ref,
            "specialized_prompt": (
                self.specialized_prompt.to_dict() if self.specialized_prompt else None
            ),
            "report": self.report.to_dict() if self.report else None,
            "generation": (
                {"text": self.generation_text, "token_count": self.generation_token_count}
                if self.generation_text is not None
                else None
            ),
            "explanations": [e.to_dict() for e in self.explanations],
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AnalysisSession":
        prompt = data.get("specialized_prompt")
        report = data.get("report")
        generation = data.get("generation") or {}
        return cls(
            id=data["id"],
            created_at=data["created_at"],
            query=data["query"],
            inpainting_enabled=data["inpainting_enabled"],
            status=data["status"],
            image_ref=data.get("image_ref", "original.png"),
            inpainted_ref=data.get("inpainted_ref"),
            mask_ref=data.get("mask_ref"),
            specialized_prompt=(
                SpecializedPrompt(
                    system_prompt=prompt["system_prompt"],
                    notes=prompt["notes"],
                    required_json_keys=tuple(prompt["required_json_keys"]),
                )
                if prompt
                else None
            ),
            report=validate_report(serialize_report_dict(report)) if report else None,
            generation_text=generation.get("text"),
            generation_token_count=generation.get("token_count"),
            explanations=[ExplanationRecord.from_dict(e) for e in data.get("explanations", [])],
            error=data.get("error"),
        )


def serialize_report_dict(data: dict) -> str:
    return json.dumps(data)


class SessionStore:
    """Flat-file store; session.json is the single source of truth."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def session_dir(self, session_id: str) -> Path:
        if not _ID_RE.match(session_id):
            raise NotFound(f"no such session: {session_id}")
        return self.root / session_id

    def save(self, session: AnalysisSession) -> None:
        sdir = self.session_dir(session.id)
        sdir.mkdir(parents=True, exist_ok=True)
        payload = json.dumps(session.to_dict(), indent=2, ensure_ascii=False)
        self._atomic_write(sdir / "session.json", payload.encode("utf-8"))

    def write_blob(self, session_id: str, rel_path: str, data: bytes) -> None:
        path = self.session_dir(session_id) / rel_path
        path.parent.mkdir(parents=True, exist_ok=True)
        self._atomic_write(path, data)

    def read_blob(self, session_id: str, rel_path: str) -> bytes:
        path = self.session_dir(session_id) / rel_path
        if not path.is_file():
            raise NotFound(f"no such artifact: {session_id}/{rel_path}")
        return path.read_bytes()

    def has_blob(self, session_id: str, rel_path: str) -> bool:
        return (self.session_dir(session_id) / rel_path).is_file()

    def load(self, session_id: str) -> AnalysisSession:
        path = self.session_dir(session_id) / "session.json"
        if not path.is_file():
            raise NotFound(f"no such session: {session_id}")
        return AnalysisSession.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def list_ids(self) -> list[str]:
        ids = [p.name for p in self.root.iterdir() if (p / "session.json").is_file()]
        return sorted(ids)

    def _atomic_write(self, path: Path, data: bytes) -> None:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
