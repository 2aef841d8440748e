"""Meta-prompt construction and specialized-prompt synthesis via a chat client."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import httpx

from .errors import (
    ClientTimeout,
    ClientUnreachable,
    EmptyQuery,
    ProtocolError,
    SynthesisFailed,
)
from .report import FIELD_ORDER, extract_json_block
from . import errors

Message = tuple[str, str]  # (role, content)

_PERSONA = (
    "You are a pathology assistant that turns a clinician's plain-language "
    "question about an immunohistochemistry slide into a precise analysis "
    "prompt for a vision-language model."
)

_FEW_SHOT_QUERY = "What is the Ki-67 index of this slide?"

_FEW_SHOT_REPLY = json.dumps(
    {
        "system_prompt": (
            "You are a pathology assistant specialized in analyzing stained "
            "histopathology images, including Ki-67 immunohistochemistry. "
            "Analyze the provided image and return your findings in the "
            "required JSON format."
        ),
        "notes": (
            "Ki-67 marks proliferating nuclei; estimate the labeling index "
            "from the fraction of positively stained tumor nuclei."
        ),
        "required_json_keys": list(FIELD_ORDER),
    },
    indent=2,
)


@dataclass(frozen=True)
class MetaPrompt:
    system_text: str
    few_shot: tuple[str, str]  # (example query, example reply)
    user_query: str

    def messages(self) -> list[Message]:
        return [
            ("system", self.system_text),
            ("user", self.few_shot[0]),
            ("assistant", self.few_shot[1]),
            ("user", self.user_query),
        ]


@dataclass(frozen=True)
class SpecializedPrompt:
    system_prompt: str
    notes: str
    required_json_keys: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "system_prompt": self.system_prompt,
            "notes": self.notes,
            "required_json_keys": list(self.required_json_keys),
        }


@dataclass(frozen=True)
class ChatClientConfig:
    endpoint_url: str = "http://127.0.0.1:11434/api/chat"
    model_name: str = "llama3"
    temperature: float = 0.1
    timeout: float = 60.0
    max_repair_retries: int = 1
    response_path: str = "message.content"

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 1.0:
            raise errors.ValueOutOfRange("temperature must be in [0, 1]")
        if self.timeout <= 0:
            raise errors.ValueOutOfRange("timeout must be > 0")


class ChatClient(Protocol):
    def complete(self, messages: Sequence[Message]) -> str: ...


@dataclass
class MockChatClient:
    """Scriptable offline stand-in: replies are consumed in order.

    With an empty script it echoes the last user message.
    """

    script: list[str] = field(default_factory=list)
    calls: list[list[Message]] = field(default_factory=list)

    @classmethod
    def from_fixture(cls, path) -> "MockChatClient":
        with open(path, encoding="utf-8") as fh:
            return cls(script=json.load(fh))

    def complete(self, messages: Sequence[Message]) -> str:
        self.calls.append(list(messages))
        if self.script:
            return self.script.pop(0)
        for role, content in reversed(messages):
            if role == "user":
                return content
        raise ProtocolError(0, "no user message to echo")


class HttpChatClient:
    """Blocking chat-completion client for local model servers."""

    def __init__(self, config: ChatClientConfig):
        self.config = config

    def complete(self, messages: Sequence[Message]) -> str:
        return chat_complete(self.config, messages)


def chat_complete(config: ChatClientConfig, messages: Sequence[Message]) -> str:
    """POST a non-streaming chat completion and extract the reply text."""
    if not messages:
        raise errors.ValueOutOfRange("messages must be non-empty")
    for role, _ in messages:
        if role not in ("system", "user", "assistant"):
            raise errors.ValueOutOfRange(f"unknown role {role!r}")
    body = {
        "model": config.model_name,
        "messages": [{"role": r, "content": c} for r, c in messages],
        "temperature": config.temperature,
        "stream": False,
    }
    try:
        resp = httpx.post(config.endpoint_url, json=body, timeout=config.timeout)
    except httpx.TimeoutException as exc:
        raise ClientTimeout(str(exc)) from exc
    except httpx.TransportError as exc:
        raise ClientUnreachable(str(exc)) from exc
    if resp.status_code != 200:
        raise ProtocolError(resp.status_code, resp.text)
    try:
        node = resp.json()
    except ValueError as exc:
        raise ProtocolError(resp.status_code, resp.text) from exc
    for part in config.response_path.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ProtocolError(resp.status_code, resp.text)
        node = node[part]
    if not isinstance(node, str):
        raise ProtocolError(resp.status_code, resp.text)
    return node


def build_meta_prompt(query: str) -> MetaPrompt:
    """Deterministic meta-prompt embedding the clinician query verbatim."""
    if not query.strip():
        raise EmptyQuery("query is empty after trimming")
    keys = ", ".join(FIELD_ORDER)
    system_text = (
        f"{_PERSONA}\n\n"
        "Reply with a single JSON object containing exactly these keys:\n"
        '  "system_prompt": the analysis instructions for the vision model,\n'
        '  "notes": stain-specific caveats for this query,\n'
        '  "required_json_keys": the list of keys the final report must contain.\n'
        f"The report schema keys are: {keys}. Every one of them must appear in "
        "required_json_keys. Output only the JSON object, no extra prose."
    )
    return MetaPrompt(
        system_text=system_text,
        few_shot=(_FEW_SHOT_QUERY, _FEW_SHOT_REPLY),
        user_query=query,
    )


def parse_specialized_prompt(reply: str) -> SpecializedPrompt:
    """Validate a raw client reply into a SpecializedPrompt."""
    try:
        data = json.loads(extract_json_block(reply))
    except errors.NoJsonFound as exc:
        raise errors.ParseError("reply contains no JSON object") from exc
    except json.JSONDecodeError as exc:
        raise errors.ParseError(f"reply JSON invalid: {exc}") from exc
    for key in ("system_prompt", "notes", "required_json_keys"):
        if key not in data:
            raise errors.MissingField(key)
    keys = tuple(str(k) for k in data["required_json_keys"])
    missing = [k for k in FIELD_ORDER if k not in keys]
    if missing:
        raise errors.ParseError(f"required_json_keys misses schema keys: {missing}")
    return SpecializedPrompt(
        system_prompt=str(data["system_prompt"]),
        notes=str(data["notes"]),
        required_json_keys=keys,
    )


def synthesize_prompt(
    query: str,
    client: ChatClient,
    config: ChatClientConfig | None = None,
) -> SpecializedPrompt:
    """Ask the client for a specialized prompt, repairing malformed replies.

    On a validation failure the reply and the error are appended to the
    conversation and the client is asked again, up to max_repair_retries.
    """
    config = config or ChatClientConfig()
    meta = build_meta_prompt(query)
    messages = meta.messages()
    last_error: Exception | None = None
    for _ in range(1 + config.max_repair_retries):
        reply = client.complete(messages)
        try:
            return parse_specialized_prompt(reply)
        except (errors.ParseError, errors.MissingField) as exc:
            last_error = exc
            messages = messages + [
                ("assistant", reply),
                (
                    "user",
                    f"Your reply was invalid: {exc.message}. Answer again with "
                    "only the corrected JSON object.",
                ),
            ]
    raise SynthesisFailed(str(last_error))
