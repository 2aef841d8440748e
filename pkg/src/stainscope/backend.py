"""Backend plug-in contract: descriptor, generation, targeted gradient capture."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Protocol

import numpy as np

from .errors import FieldNotInOutput, NoJsonFound, SpanEmpty, ValueOutOfRange
from .imaging import ImageBuffer
from .promptsynth import SpecializedPrompt
from .report import FIELD_ORDER, locate_json_block
from . import errors


@dataclass(frozen=True)
class BackendDescriptor:
    name: str
    input_size: tuple[int, int]  # (H, W)
    grid: tuple[int, int]        # (h, w) cells at the target layer
    channels: int
    vocab_size: int
    target_layer: str

    def __post_init__(self):
        if min(*self.input_size, *self.grid, self.channels, self.vocab_size) < 1:
            raise ValueOutOfRange("descriptor counts must be >= 1")
        if self.grid[0] * self.grid[1] < 4:
            raise ValueOutOfRange("target grid must have at least 4 cells")


@dataclass(frozen=True)
class GenerationResult:
    token_ids: tuple[int, ...]
    text: str
    offsets: tuple[tuple[int, int], ...]  # per-token (char_start, char_end)
    logprobs: tuple[float, ...]

    def __post_init__(self):
        pos = 0
        for start, end in self.offsets:
            if start != pos or end < start:
                raise ValueOutOfRange("offsets must be ordered, non-overlapping and covering")
            pos = end
        if pos != len(self.text):
            raise ValueOutOfRange("offsets must cover exactly the decoded text")
        if any(lp > 0 for lp in self.logprobs):
            raise ValueOutOfRange("logprobs must be <= 0")


@dataclass(frozen=True)
class TokenSpan:
    start: int  # inclusive
    end: int    # exclusive

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueOutOfRange(f"invalid token span ({self.start}, {self.end})")


@dataclass(frozen=True)
class CaptureBundle:
    activations: np.ndarray      # (channels, h, w)
    layer_gradients: np.ndarray  # (channels, h, w)
    input_gradients: np.ndarray  # (H, W, 3)
    mode: Literal["standard", "guided"]

    def __post_init__(self):
        for arr in (self.activations, self.layer_gradients, self.input_gradients):
            if not np.isfinite(arr).all():
                raise errors.NonFiniteInput("capture bundle holds non-finite values")
        if self.activations.shape != self.layer_gradients.shape:
            raise errors.DimensionMismatch("activations vs layer_gradients shape mismatch")
        if self.mode not in ("standard", "guided"):
            raise ValueOutOfRange(f"unknown capture mode {self.mode!r}")


class VisionLanguageBackend(Protocol):
    """The three-operation plug-in contract every backend adapter fulfills."""

    def descriptor(self) -> BackendDescriptor: ...

    def generate(self, image: ImageBuffer, prompt: SpecializedPrompt) -> GenerationResult: ...

    def capture(
        self,
        image: ImageBuffer,
        prompt: SpecializedPrompt,
        gen: GenerationResult,
        span: TokenSpan,
        mode: Literal["standard", "guided"],
    ) -> CaptureBundle: ...


def _find_value_range(text: str, field: str) -> tuple[int, int]:
    """Character range of the field's value inside the first JSON block.

    For string values the quotes are excluded; for other values the range
    runs to the next top-level comma or closing brace, trimmed.
    """
    block_start, block_end = locate_json_block(text)
    block = text[block_start:block_end]
    needle = f'"{field}"'
    key_at = block.find(needle)
    if key_at < 0:
        raise FieldNotInOutput(f"field {field!r} not present in generated JSON")
    i = key_at + len(needle)
    while i < len(block) and block[i] in " \t\r\n":
        i += 1
    if i >= len(block) or block[i] != ":":
        raise FieldNotInOutput(f"field {field!r} has no value in generated JSON")
    i += 1
    while i < len(block) and block[i] in " \t\r\n":
        i += 1
    if i >= len(block):
        raise FieldNotInOutput(f"field {field!r} has no value in generated JSON")
    if block[i] == '"':
        start = i + 1
        j = start
        while j < len(block):
            if block[j] == "\\":
                j += 2
                continue
            if block[j] == '"':
                break
            j += 1
        end = j
    else:
        start = i
        j = i
        while j < len(block) and block[j] not in ",}\r\n":
            j += 1
        end = j
        while end > start and block[end - 1] in " \t":
            end -= 1
    return block_start + start, block_start + end


def locate_value_span(gen: GenerationResult, field: str) -> TokenSpan:
    """Minimal token range whose offsets cover the field's serialized value."""
    if field not in FIELD_ORDER:
        raise errors.UnknownField(f"unknown report field: {field!r}")
    try:
        char_start, char_end = _find_value_range(gen.text, field)
    except NoJsonFound as exc:
        raise FieldNotInOutput("generated text holds no JSON block") from exc
    if char_end <= char_start:
        raise SpanEmpty(f"field {field!r} has an empty value")
    tok_start = tok_end = None
    for idx, (s, e) in enumerate(gen.offsets):
        if e > char_start and s < char_end:
            if tok_start is None:
                tok_start = idx
            tok_end = idx + 1
    if tok_start is None:
        raise SpanEmpty(f"no tokens cover the value of {field!r}")
    return TokenSpan(tok_start, tok_end)
