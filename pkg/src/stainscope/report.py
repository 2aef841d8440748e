"""Structured stain report: schema, validation and field-path resolution."""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass

from .errors import (
    InvalidGrade,
    InvalidLocation,
    InvalidRange,
    MissingField,
    NoJsonFound,
    ParseError,
    UnknownField,
)

STAIN_TYPES = ("KI67", "PDL1", "BRAF", "OTHER")
LOCATIONS = ("nuclear", "cytoplasmic", "membranous", "mixed")

# Canonical key order; this exact order is what token-span location relies on.
FIELD_ORDER = (
    "stain_type",
    "percentage_of_cells_stained",
    "staining_intensity_grade",
    "type_of_cells_stained",
    "staining_location_per_cell",
    "report",
    "explanation",
)


class ExtraKeysWarning(UserWarning):
    """Raised (as a warning) when a report carries unknown extra keys."""


@dataclass(frozen=True)
class PercentRange:
    low: int
    high: int

    def __post_init__(self):
        if not (0 <= self.low <= self.high <= 100):
            raise InvalidRange(f"need 0 <= low <= high <= 100, got {self.low}-{self.high}")

    def __str__(self) -> str:
        return f"{self.low}-{self.high}"

    @classmethod
    def parse(cls, text: str) -> "PercentRange":
        m = re.fullmatch(r"\s*(\d+)\s*-\s*(\d+)\s*", str(text))
        if not m:
            raise InvalidRange(f"expected 'low-high', got {text!r}")
        return cls(int(m.group(1)), int(m.group(2)))


@dataclass(frozen=True)
class StainReport:
    stain_type: str
    percentage_of_cells_stained: PercentRange
    staining_intensity_grade: int
    type_of_cells_stained: str
    staining_location_per_cell: str
    report: str
    explanation: str

    def __post_init__(self):
        if self.stain_type not in STAIN_TYPES:
            raise ParseError(f"unknown stain type {self.stain_type!r}")
        if self.staining_intensity_grade not in (0, 1, 2, 3):
            raise InvalidGrade(f"grade must be 0..3, got {self.staining_intensity_grade}")
        if self.staining_location_per_cell not in LOCATIONS:
            raise InvalidLocation(f"unknown location {self.staining_location_per_cell!r}")

    def to_dict(self) -> dict:
        return {
            "stain_type": self.stain_type,
            "percentage_of_cells_stained": str(self.percentage_of_cells_stained),
            "staining_intensity_grade": self.staining_intensity_grade,
            "type_of_cells_stained": self.type_of_cells_stained,
            "staining_location_per_cell": self.staining_location_per_cell,
            "report": self.report,
            "explanation": self.explanation,
        }


def serialize_report(report: StainReport) -> str:
    """Canonical serialization: fixed key order, two-space indent, UTF-8."""
    return json.dumps(report.to_dict(), indent=2, ensure_ascii=False)


def extract_json_block(text: str) -> str:
    """First maximal balanced {...} region, respecting string literals."""
    start, end = locate_json_block(text)
    return text[start:end]


def locate_json_block(text: str) -> tuple[int, int]:
    """Character span of the first balanced {...} region in ``text``."""
    depth = 0
    start = -1
    in_string = False
    escaped = False
    for i, ch in enumerate(text):
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"' and depth > 0:
            in_string = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}" and depth > 0:
            depth -= 1
            if depth == 0:
                return start, i + 1
    raise NoJsonFound("no balanced JSON object found")


def _canonical_stain_type(value) -> str:
    cleaned = re.sub(r"[\s_-]+", "", str(value)).upper()
    return cleaned if cleaned in STAIN_TYPES else "OTHER"


def validate_report(json_text: str) -> StainReport:
    """Parse and canonicalize a report; unknown extra keys warn, never fail."""
    try:
        data = json.loads(json_text)
    except (json.JSONDecodeError, TypeError) as exc:
        raise ParseError(str(exc)) from exc
    if not isinstance(data, dict):
        raise ParseError("report must be a JSON object")

    extra = [k for k in data if k not in FIELD_ORDER]
    if extra:
        warnings.warn(f"ignoring unknown report keys: {extra}", ExtraKeysWarning, stacklevel=2)

    for key in FIELD_ORDER:
        if key not in data:
            raise MissingField(key)

    grade = data["staining_intensity_grade"]
    if isinstance(grade, bool) or not isinstance(grade, int):
        raise InvalidGrade(f"grade must be an integer, got {grade!r}")
    if grade not in (0, 1, 2, 3):
        raise InvalidGrade(f"grade must be 0..3, got {grade}")

    location = str(data["staining_location_per_cell"]).strip().lower()
    if location not in LOCATIONS:
        raise InvalidLocation(f"unknown location {data['staining_location_per_cell']!r}")

    return StainReport(
        stain_type=_canonical_stain_type(data["stain_type"]),
        percentage_of_cells_stained=PercentRange.parse(data["percentage_of_cells_stained"]),
        staining_intensity_grade=grade,
        type_of_cells_stained=str(data["type_of_cells_stained"]),
        staining_location_per_cell=location,
        report=str(data["report"]),
        explanation=str(data["explanation"]),
    )


def resolve_field_value(report: StainReport, field: str) -> str:
    """Serialized value for one field, as it appears in the canonical text.

    Strings come back without quotes, integers as digits, ranges as
    "low-high".
    """
    if field not in FIELD_ORDER:
        raise UnknownField(f"unknown report field: {field!r}")
    value = report.to_dict()[field]
    return str(value)
