"""Chat-completion backends and the five component prompt contracts.

Every component call follows the same ladder: render the prompt from an
editable template, truncate to the token budget, ask the backend at
temperature 0, and parse a single fenced JSON object out of the reply.
A reply that violates the schema earns exactly one repair retry; a
second violation lands in the component's conservative abstention
(C1/C5 negative, C2 insufficient, C4 no-valid-indices).

The scripted replay backend maps prompt hashes to canned replies so
whole pipeline runs are reproducible offline.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import string
import threading
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

from docdrift.readme_model import ReadmeDocument

__all__ = [
    "ChatBackend",
    "SequenceBackend",
    "ReplayBackend",
    "RecordingBackend",
    "HttpChatBackend",
    "ContextBundle",
    "C1Decision",
    "SufficiencyDecision",
    "LocalisationResult",
    "ReviewVerdict",
    "GatewayError",
    "GatewayTransportError",
    "NoValidIndicesError",
    "LlmGateway",
    "estimate_tokens",
    "truncate_to_budget",
    "sanitize_localisation",
    "prompt_key",
    "TOKEN_BUDGET",
    "TOP_K_INDICES",
    "CRITIQUE_VALUES",
]

TOKEN_BUDGET = 32768
TOP_K_INDICES = 5
CHARS_PER_TOKEN = 4
CRITIQUE_VALUES = ("correct", "hallucinating", "generic")

STAGE_C1 = "C1"
STAGE_C2 = "C2"
STAGE_C4 = "C4"
STAGE_C5 = "C5"

_SYSTEM_PROMPTS = {
    STAGE_C1: "You screen pull requests for README impact. Answer strictly in the requested JSON format.",
    STAGE_C2: "You judge whether context suffices to localise README updates. Answer strictly in the requested JSON format.",
    STAGE_C4: "You localise README updates and justify them. Answer strictly in the requested JSON format.",
    STAGE_C5: "You review README update recommendations. Answer strictly in the requested JSON format.",
}

_TEMPLATE_PLACEHOLDERS = {
    "c1_relevance.txt": {"title", "description", "commit_messages", "file_names", "readme_sections"},
    "c2_sufficiency.txt": {"title", "description", "commit_messages", "patches"},
    "c4_localise.txt": {
        "title",
        "description",
        "commit_messages",
        "file_names",
        "patches",
        "readme_sections",
    },
    "c5_review_static.txt": {"title", "description", "readme_sections", "candidates"},
    "c5_critique.txt": {"title", "description", "readme_sections", "candidates"},
    "c5_stability.txt": {"title", "description", "readme_sections", "candidates"},
}

_REPAIR_INSTRUCTION = (
    "\n\nYour previous reply did not match the required format. Reply again "
    "with exactly one fenced JSON object using the field names shown above, "
    "and no other text."
)


class GatewayError(RuntimeError):
    pass


class GatewayTransportError(GatewayError):
    pass


class ReplayMissError(GatewayTransportError):
    pass


class NoValidIndicesError(GatewayError):
    pass


class _SchemaViolation(ValueError):
    pass


# --- token budgeting -------------------------------------------------------------


def estimate_tokens(text: str) -> int:
    """Backend-agnostic estimate: one token per 4 characters, rounded up."""
    return math.ceil(len(text) / CHARS_PER_TOKEN)


def truncate_to_budget(text: str, budget_tokens: int = TOKEN_BUDGET) -> str:
    """Trim the tail so the estimated token count fits the budget."""
    if budget_tokens <= 0:
        return ""
    if estimate_tokens(text) <= budget_tokens:
        return text
    return text[: budget_tokens * CHARS_PER_TOKEN]


# --- backends --------------------------------------------------------------------


class ChatBackend:
    """Contract: complete(system, user, temperature, max_tokens) -> reply text."""

    def complete(self, system: str, user: str, temperature: float, max_tokens: int) -> str:
        raise NotImplementedError


def prompt_key(system: str, user: str) -> str:
    digest = hashlib.sha256((system + "\x00" + user).encode("utf-8")).hexdigest()
    return digest[:16]


class SequenceBackend(ChatBackend):
    """Scripted replies consumed in order; raises when the script runs out."""

    def __init__(self, replies):
        self._replies = list(replies)
        self._lock = threading.Lock()
        self.calls: list[tuple[str, str, float]] = []

    def complete(self, system, user, temperature, max_tokens):
        with self._lock:
            self.calls.append((system, user, temperature))
            if not self._replies:
                raise GatewayTransportError("scripted backend exhausted")
            return self._replies.pop(0)


class ReplayBackend(ChatBackend):
    """Replies keyed by prompt hash, for byte-stable offline runs."""

    def __init__(self, mapping: dict[str, str]):
        self.mapping = dict(mapping)

    @classmethod
    def from_file(cls, path) -> "ReplayBackend":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def complete(self, system, user, temperature, max_tokens):
        key = prompt_key(system, user)
        try:
            return self.mapping[key]
        except KeyError:
            raise ReplayMissError(f"no scripted reply for prompt {key}") from None


class RecordingBackend(ChatBackend):
    """Wraps a backend and records prompt-hash -> reply pairs for replay."""

    def __init__(self, inner: ChatBackend):
        self.inner = inner
        self.mapping: dict[str, str] = {}

    def complete(self, system, user, temperature, max_tokens):
        reply = self.inner.complete(system, user, temperature, max_tokens)
        self.mapping[prompt_key(system, user)] = reply
        return reply

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.mapping, fh, indent=2, sort_keys=True)


class HttpChatBackend(ChatBackend):
    """Chat-completions-style HTTP backend; API key from LLM_API_KEY."""

    def __init__(self, url: str, model: str, api_key: str | None = None, timeout: float = 120.0, session=None):
        import requests

        self.url = url
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get("LLM_API_KEY")
        self.timeout = timeout
        self._session = session or requests.Session()

    def complete(self, system, user, temperature, max_tokens):
        import requests

        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        try:
            resp = self._session.post(self.url, json=payload, headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except requests.RequestException as exc:
            raise GatewayTransportError(str(exc)) from exc


# --- prompt rendering --------------------------------------------------------------


@dataclass
class ContextBundle:
    """Everything a component prompt may draw on for one PR."""

    title: str = ""
    description: str = ""
    commit_messages: list[str] = field(default_factory=list)
    file_names: list[str] = field(default_factory=list)
    patches: list[tuple[str, str]] = field(default_factory=list)
    readme_sections: list[tuple[int, str]] = field(default_factory=list)

    @property
    def section_count(self) -> int:
        return len(self.readme_sections)


def _load_template(name: str) -> string.Template:
    text = resources.files("docdrift").joinpath("templates", name).read_text(encoding="utf-8")
    found = set(re.findall(r"\$\{?([A-Za-z_][A-Za-z0-9_]*)\}?", text))
    required = _TEMPLATE_PLACEHOLDERS[name]
    missing = required - found
    if missing:
        raise GatewayError(f"template {name} lacks placeholders: {sorted(missing)}")
    return string.Template(text)


_template_cache: dict[str, string.Template] = {}


def _template(name: str) -> string.Template:
    if name not in _template_cache:
        _template_cache[name] = _load_template(name)
    return _template_cache[name]


def _fmt_lines(items, empty="(none)") -> str:
    return "\n".join(f"- {item}" for item in items) if items else empty


def _fmt_patches(patches) -> str:
    if not patches:
        return "(none)"
    parts = []
    for path, text in patches:
        parts.append(f"--- {path} ---\n{text if text else '(binary or empty patch)'}")
    return "\n\n".join(parts)


def _fmt_sections(sections) -> str:
    if not sections:
        return "(the README is empty)"
    return "\n".join(f"[{index}] {text}" for index, text in sections)


def _fmt_candidates(result: "LocalisationResult", doc: ReadmeDocument | None) -> str:
    lines = []
    for idx in result.ranked_indices:
        snippet = ""
        if doc is not None and 1 <= idx <= doc.section_count:
            snippet = doc.sections[idx - 1].text.replace("\n", " ")[:200]
        lines.append(f"[{idx}] section: {snippet}\n    justification: {result.justifications[idx]}")
    return "\n".join(lines)


def render_c1_prompt(bundle: ContextBundle) -> tuple[str, str]:
    user = _template("c1_relevance.txt").substitute(
        title=bundle.title or "(none)",
        description=bundle.description or "(none)",
        commit_messages=_fmt_lines(bundle.commit_messages),
        file_names=_fmt_lines(bundle.file_names),
        readme_sections=_fmt_sections(bundle.readme_sections),
    )
    return _SYSTEM_PROMPTS[STAGE_C1], user


def render_c2_prompt(bundle: ContextBundle) -> tuple[str, str]:
    user = _template("c2_sufficiency.txt").substitute(
        title=bundle.title or "(none)",
        description=bundle.description or "(none)",
        commit_messages=_fmt_lines(bundle.commit_messages),
        patches=_fmt_patches(bundle.patches),
    )
    return _SYSTEM_PROMPTS[STAGE_C2], user


def render_c4_prompt(bundle: ContextBundle) -> tuple[str, str]:
    user = _template("c4_localise.txt").substitute(
        title=bundle.title or "(none)",
        description=bundle.description or "(none)",
        commit_messages=_fmt_lines(bundle.commit_messages),
        file_names=_fmt_lines(bundle.file_names),
        readme_sections=_fmt_sections(bundle.readme_sections),
        patches=_fmt_patches(bundle.patches),
    )
    return _SYSTEM_PROMPTS[STAGE_C4], user


def render_c5_prompt(
    template_name: str,
    result: "LocalisationResult",
    doc: ReadmeDocument | None,
    bundle: ContextBundle,
) -> tuple[str, str]:
    user = _template(template_name).substitute(
        title=bundle.title or "(none)",
        description=bundle.description or "(none)",
        readme_sections=_fmt_sections(bundle.readme_sections),
        candidates=_fmt_candidates(result, doc),
    )
    return _SYSTEM_PROMPTS[STAGE_C5], user


# --- decisions ---------------------------------------------------------------------


@dataclass(frozen=True)
class C1Decision:
    update_required: bool
    raw: str


@dataclass(frozen=True)
class SufficiencyDecision:
    sufficient: bool
    raw: str


@dataclass(frozen=True)
class LocalisationResult:
    ranked_indices: tuple[int, ...]
    justifications: dict[int, str]


@dataclass(frozen=True)
class ReviewVerdict:
    approve: bool
    critique: str  # correct | hallucinating | generic
    raw: str


def _extract_fenced_object(reply: str) -> dict:
    m = re.search(r"```[^\n`]*\n(.*?)```", reply, re.DOTALL)
    if m is None:
        raise _SchemaViolation("reply has no fenced block")
    try:
        obj = json.loads(m.group(1))
    except json.JSONDecodeError as exc:
        raise _SchemaViolation(f"fenced block is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise _SchemaViolation("fenced JSON must be an object")
    return obj


def _parse_bool_field(obj: dict, name: str) -> bool:
    value = obj.get(name)
    if not isinstance(value, bool):
        raise _SchemaViolation(f"field {name!r} must be a JSON boolean")
    return value


def _parse_c4_fields(obj: dict) -> tuple[list[int], dict[int, str]]:
    indices = obj.get("indices")
    if not isinstance(indices, list):
        raise _SchemaViolation("field 'indices' must be a list")
    cleaned = []
    for item in indices:
        if isinstance(item, bool) or not isinstance(item, int):
            raise _SchemaViolation("'indices' entries must be integers")
        cleaned.append(item)
    raw_just = obj.get("justifications")
    if not isinstance(raw_just, dict):
        raise _SchemaViolation("field 'justifications' must be an object")
    justifications: dict[int, str] = {}
    for key, value in raw_just.items():
        try:
            idx = int(key)
        except (TypeError, ValueError):
            continue
        if isinstance(value, str):
            justifications[idx] = value
    return cleaned, justifications


def _parse_critique(obj: dict) -> str:
    value = obj.get("critique")
    if not isinstance(value, str) or value.strip().lower() not in CRITIQUE_VALUES:
        raise _SchemaViolation("field 'critique' must be correct|hallucinating|generic")
    return value.strip().lower()


def sanitize_localisation(
    indices: list[int], justifications: dict[int, str], section_count: int
) -> LocalisationResult:
    """Drop out-of-range, duplicate, and justification-less indices, cap at 5.

    First occurrences win and rank order is preserved regardless of what
    the backend produced.
    """
    seen: set[int] = set()
    kept: list[int] = []
    for idx in indices:
        if idx in seen:
            continue
        seen.add(idx)
        if not 1 <= idx <= section_count:
            continue
        text = (justifications.get(idx) or "").strip()
        if not text:
            continue
        kept.append(idx)
    kept = kept[:TOP_K_INDICES]
    return LocalisationResult(
        ranked_indices=tuple(kept),
        justifications={i: justifications[i].strip() for i in kept},
    )


# --- the gateway ---------------------------------------------------------------------


class LlmGateway:
    """Schema-validated component calls over one chat backend.

    Thread-safe across PRs; ``max_in_flight`` bounds concurrent backend
    calls. Every call runs at temperature 0.
    """

    def __init__(
        self,
        backend: ChatBackend,
        budget_tokens: int = TOKEN_BUDGET,
        max_output_tokens: int = 2048,
        transport_retries: int = 2,
        max_in_flight: int = 4,
    ):
        self.backend = backend
        self.budget_tokens = budget_tokens
        self.max_output_tokens = max_output_tokens
        self.transport_retries = transport_retries
        self.abstentions: Counter[str] = Counter()
        self.schema_retries: Counter[str] = Counter()
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._thread_calls = threading.local()

    # transport

    def thread_call_count(self) -> int:
        """Backend calls issued from the current thread (for trace audits)."""
        return getattr(self._thread_calls, "value", 0)

    def _complete(self, system: str, user: str) -> str:
        last: Exception | None = None
        for _ in range(self.transport_retries + 1):
            self._thread_calls.value = self.thread_call_count() + 1
            try:
                with self._gate:
                    return self.backend.complete(
                        system, user, temperature=0.0, max_tokens=self.max_output_tokens
                    )
            except GatewayTransportError:
                raise
            except Exception as exc:  # network-ish failures are retried
                last = exc
        raise GatewayTransportError(f"backend failed after retries: {last}") from last

    def _fit(self, system: str, user: str, suffix: str = "") -> str:
        room = self.budget_tokens - estimate_tokens(system) - estimate_tokens(suffix)
        return truncate_to_budget(user, room) + suffix

    def _structured(self, stage: str, system: str, user: str, parser):
        """parse -> retry-with-repair -> None (conservative abstention)."""
        fitted = self._fit(system, user)
        reply = self._complete(system, fitted)
        try:
            return parser(_extract_fenced_object(reply)), reply
        except _SchemaViolation:
            self.schema_retries[stage] += 1
        repaired = self._fit(system, user, _REPAIR_INSTRUCTION)
        reply = self._complete(system, repaired)
        try:
            return parser(_extract_fenced_object(reply)), reply
        except _SchemaViolation:
            self.abstentions[stage] += 1
            return None, reply

    # component operations

    def classify_relevance(self, bundle: ContextBundle) -> C1Decision:
        system, user = render_c1_prompt(bundle)
        parsed, raw = self._structured(
            STAGE_C1, system, user, lambda obj: _parse_bool_field(obj, "update_required")
        )
        return C1Decision(update_required=bool(parsed), raw=raw)

    def assess_sufficiency(self, bundle: ContextBundle) -> SufficiencyDecision:
        system, user = render_c2_prompt(bundle)
        parsed, raw = self._structured(
            STAGE_C2, system, user, lambda obj: _parse_bool_field(obj, "sufficient")
        )
        return SufficiencyDecision(sufficient=bool(parsed), raw=raw)

    def localise_and_justify(self, bundle: ContextBundle) -> LocalisationResult:
        system, user = render_c4_prompt(bundle)
        parsed, raw = self._structured(STAGE_C4, system, user, _parse_c4_fields)
        if parsed is None:
            raise NoValidIndicesError("no-valid-indices")
        indices, justifications = parsed
        result = sanitize_localisation(indices, justifications, bundle.section_count)
        if not result.ranked_indices:
            self.abstentions[STAGE_C4] += 1
            raise NoValidIndicesError("no-valid-indices")
        return result

    def review_recommendation(
        self,
        result: LocalisationResult,
        doc: ReadmeDocument | None,
        bundle: ContextBundle,
        mode: str = "static",
    ) -> ReviewVerdict:
        if mode == "static":
            system, user = render_c5_prompt("c5_review_static.txt", result, doc, bundle)
            parsed, raw = self._structured(
                STAGE_C5, system, user, lambda obj: _parse_bool_field(obj, "approve")
            )
            if parsed is None:
                return ReviewVerdict(approve=False, critique="generic", raw=raw)
            return ReviewVerdict(approve=parsed, critique="correct" if parsed else "generic", raw=raw)

        system, user = render_c5_prompt("c5_critique.txt", result, doc, bundle)
        critique, raw = self._structured(STAGE_C5, system, user, _parse_critique)
        if critique is None:
            return ReviewVerdict(approve=False, critique="generic", raw=raw)
        if critique != "correct":
            return ReviewVerdict(approve=False, critique=critique, raw=raw)
        system, user = render_c5_prompt("c5_stability.txt", result, doc, bundle)
        approve, raw2 = self._structured(
            STAGE_C5, system, user, lambda obj: _parse_bool_field(obj, "approve")
        )
        return ReviewVerdict(approve=bool(approve), critique="correct", raw=raw2)
