"""Pull-request data model, unified-diff handling, and corpus records.

The corpus file format is newline-delimited JSON, one record per line,
with exactly these fields::

    repo, number, title, description,
    commits[{sha, message, authored_at}],
    files[{path, change_kind, patch_text, old_path?}],
    readme_before, readme_patch (nullable), created_at

Timestamps are RFC 3339 UTC. This format is the contract between the
forge client, the dataset builder, and the pipeline.
"""

from __future__ import annotations

import difflib
import json
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Iterator

from docdrift.readme_model import normalize_markdown, segment_readme

__all__ = [
    "Commit",
    "FilePatch",
    "PullRequest",
    "DiffHunk",
    "GroundTruth",
    "CorpusRecordError",
    "DiffParseError",
    "PatchApplyError",
    "parse_corpus_record",
    "serialize_record",
    "load_corpus",
    "write_corpus",
    "parse_unified_diff",
    "apply_unified_diff",
    "diff_texts",
    "ground_truth_indices",
    "ground_truth_for",
    "is_readme_path",
    "preferred_readme",
]

CHANGE_KINDS = ("added", "modified", "deleted", "renamed")

_SHA_RE = re.compile(r"^[0-9a-f]{40}$")
_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")
_README_RE = re.compile(r"^readme(\.(md|markdown|txt|rst))?$", re.IGNORECASE)
_FILE_HEADER_PREFIXES = (
    "diff ",
    "index ",
    "--- ",
    "+++ ",
    "new file",
    "deleted file",
    "similarity",
    "dissimilarity",
    "rename ",
    "copy ",
    "old mode",
    "new mode",
    "Binary files",
)


class CorpusRecordError(ValueError):
    """A corpus record violates the schema; ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DiffParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class PatchApplyError(ValueError):
    pass


@dataclass(frozen=True)
class Commit:
    sha: str
    message: str
    authored_at: datetime


@dataclass(frozen=True)
class FilePatch:
    path: str
    change_kind: str
    patch_text: str = ""
    old_path: str | None = None


@dataclass(frozen=True)
class PullRequest:
    repo: str
    number: int
    title: str
    description: str
    commits: tuple[Commit, ...]
    files: tuple[FilePatch, ...]
    readme_before: str
    readme_patch: str | None
    created_at: datetime

    @property
    def key(self) -> tuple[str, int]:
        return (self.repo, self.number)


@dataclass(frozen=True)
class DiffHunk:
    old_start: int
    old_len: int
    new_start: int
    new_len: int
    lines: tuple[tuple[str, str], ...]  # (marker, text); marker: context|added|removed


@dataclass(frozen=True)
class GroundTruth:
    pr_key: tuple[str, int]
    updated_indices: frozenset[int]
    is_positive: bool


# --- timestamps ---------------------------------------------------------------


def parse_rfc3339(value: str) -> datetime:
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_rfc3339(dt: datetime) -> str:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


# --- README naming ------------------------------------------------------------


def is_readme_path(path: str) -> bool:
    """True for a root-level README with a conventional extension (or none)."""
    if "/" in path.strip("/"):
        return False
    return _README_RE.match(path.strip("/")) is not None


def preferred_readme(paths: Iterable[str]) -> str | None:
    """Pick the root README among ``paths``; ``.md`` wins when several match."""
    candidates = [p for p in paths if is_readme_path(p)]
    if not candidates:
        return None
    candidates.sort(key=lambda p: (not p.lower().endswith(".md"), p.lower()))
    return candidates[0]


# --- corpus records -----------------------------------------------------------

_COMMIT_FIELDS = {"sha", "message", "authored_at"}
_FILE_FIELDS = {"path", "change_kind", "patch_text", "old_path"}
_RECORD_FIELDS = {
    "repo",
    "number",
    "title",
    "description",
    "commits",
    "files",
    "readme_before",
    "readme_patch",
    "created_at",
}


def _require(record: dict, field: str, kind: type) -> object:
    if field not in record:
        raise CorpusRecordError(field, "missing")
    value = record[field]
    if not isinstance(value, kind):
        raise CorpusRecordError(field, f"expected {kind.__name__}")
    return value


def parse_corpus_record(record: str | dict) -> PullRequest:
    """Decode one corpus record (a JSON line or an already-parsed object)."""
    if isinstance(record, str):
        try:
            record = json.loads(record)
        except json.JSONDecodeError as exc:
            raise CorpusRecordError("<record>", f"invalid JSON: {exc}") from None
    if not isinstance(record, dict):
        raise CorpusRecordError("<record>", "expected an object")
    unknown = set(record) - _RECORD_FIELDS
    if unknown:
        raise CorpusRecordError(sorted(unknown)[0], "unknown field")

    repo = _require(record, "repo", str)
    number = _require(record, "number", int)
    if isinstance(number, bool) or number <= 0:
        raise CorpusRecordError("number", "must be a positive integer")
    title = _require(record, "title", str)
    description = record.get("description") or ""
    if not isinstance(description, str):
        raise CorpusRecordError("description", "expected str")

    commits = []
    for i, raw in enumerate(_require(record, "commits", list)):
        where = f"commits[{i}]"
        if not isinstance(raw, dict):
            raise CorpusRecordError(where, "expected an object")
        if set(raw) - _COMMIT_FIELDS:
            raise CorpusRecordError(where, "unknown field")
        sha = raw.get("sha")
        if not isinstance(sha, str) or not _SHA_RE.match(sha):
            raise CorpusRecordError(f"{where}.sha", "must be 40 lowercase hex chars")
        message = raw.get("message")
        if not isinstance(message, str):
            raise CorpusRecordError(f"{where}.message", "expected str")
        try:
            authored_at = parse_rfc3339(raw["authored_at"])
        except (KeyError, ValueError, TypeError):
            raise CorpusRecordError(f"{where}.authored_at", "invalid timestamp") from None
        commits.append(Commit(sha=sha, message=message, authored_at=authored_at))

    files = []
    for i, raw in enumerate(_require(record, "files", list)):
        where = f"files[{i}]"
        if not isinstance(raw, dict):
            raise CorpusRecordError(where, "expected an object")
        if set(raw) - _FILE_FIELDS:
            raise CorpusRecordError(where, "unknown field")
        path = raw.get("path")
        if not isinstance(path, str) or not path:
            raise CorpusRecordError(f"{where}.path", "expected non-empty str")
        change_kind = raw.get("change_kind")
        if change_kind not in CHANGE_KINDS:
            raise CorpusRecordError(f"{where}.change_kind", f"must be one of {CHANGE_KINDS}")
        patch_text = raw.get("patch_text", "")
        if not isinstance(patch_text, str):
            raise CorpusRecordError(f"{where}.patch_text", "expected str")
        old_path = raw.get("old_path")
        if old_path is not None and not isinstance(old_path, str):
            raise CorpusRecordError(f"{where}.old_path", "expected str or null")
        files.append(
            FilePatch(path=path, change_kind=change_kind, patch_text=patch_text, old_path=old_path)
        )

    readme_before = _require(record, "readme_before", str)
    readme_patch = record.get("readme_patch")
    if readme_patch is not None and not isinstance(readme_patch, str):
        raise CorpusRecordError("readme_patch", "expected str or null")
    try:
        created_at = parse_rfc3339(record["created_at"])
    except (KeyError, ValueError, TypeError):
        raise CorpusRecordError("created_at", "invalid timestamp") from None

    return PullRequest(
        repo=repo,
        number=number,
        title=title,
        description=description,
        commits=tuple(commits),
        files=tuple(files),
        readme_before=readme_before,
        readme_patch=readme_patch,
        created_at=created_at,
    )


def record_dict(pr: PullRequest) -> dict:
    files = []
    for f in pr.files:
        entry = {"path": f.path, "change_kind": f.change_kind, "patch_text": f.patch_text}
        if f.old_path is not None:
            entry["old_path"] = f.old_path
        files.append(entry)
    return {
        "repo": pr.repo,
        "number": pr.number,
        "title": pr.title,
        "description": pr.description,
        "commits": [
            {"sha": c.sha, "message": c.message, "authored_at": format_rfc3339(c.authored_at)}
            for c in pr.commits
        ],
        "files": files,
        "readme_before": pr.readme_before,
        "readme_patch": pr.readme_patch,
        "created_at": format_rfc3339(pr.created_at),
    }


def serialize_record(pr: PullRequest) -> str:
    return json.dumps(record_dict(pr), ensure_ascii=False)


@dataclass
class CorpusLoadResult:
    records: list[PullRequest]
    skipped: int
    errors: list[str]


def load_corpus(lines: Iterable[str]) -> CorpusLoadResult:
    """Parse corpus lines, skipping and counting records that violate the schema."""
    records: list[PullRequest] = []
    errors: list[str] = []
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(parse_corpus_record(line))
        except CorpusRecordError as exc:
            errors.append(f"record {i}: {exc}")
    return CorpusLoadResult(records=records, skipped=len(errors), errors=errors)


def write_corpus(path, prs: Iterable[PullRequest]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for pr in prs:
            fh.write(serialize_record(pr) + "\n")
            count += 1
    return count


# --- unified diffs --------------------------------------------------------------


def parse_unified_diff(patch_text: str) -> list[DiffHunk]:
    """Decode unified-diff hunks; empty input yields an empty list.

    File headers (``--- a/...``, ``diff --git``) before a hunk are
    skipped; ``\\ No newline at end of file`` markers are ignored.
    Hunk bodies must match the lengths declared in the header.
    """
    if not patch_text.strip():
        return []
    lines = patch_text.split("\n")
    hunks: list[DiffHunk] = []
    i = 0
    n = len(lines)
    while i < n:
        line = lines[i]
        if line == "" and i == n - 1:
            break
        m = _HUNK_RE.match(line)
        if m is None:
            if line == "" or line.startswith(_FILE_HEADER_PREFIXES) or line.startswith("\\"):
                i += 1
                continue
            raise DiffParseError(i + 1, f"expected hunk header, got {line!r}")
        old_start, old_len = int(m.group(1)), int(m.group(2) or "1")
        new_start, new_len = int(m.group(3)), int(m.group(4) or "1")
        i += 1
        body: list[tuple[str, str]] = []
        seen_old = seen_new = 0
        while seen_old < old_len or seen_new < new_len:
            if i >= n:
                raise DiffParseError(i, "hunk body ended early")
            raw = lines[i]
            if raw.startswith("\\"):
                i += 1
                continue
            marker, text = (raw[0], raw[1:]) if raw else (" ", "")
            if marker == " ":
                if seen_old >= old_len or seen_new >= new_len:
                    raise DiffParseError(i + 1, "context line overflows hunk header")
                body.append(("context", text))
                seen_old += 1
                seen_new += 1
            elif marker == "-":
                if seen_old >= old_len:
                    raise DiffParseError(i + 1, "removed line overflows hunk header")
                body.append(("removed", text))
                seen_old += 1
            elif marker == "+":
                if seen_new >= new_len:
                    raise DiffParseError(i + 1, "added line overflows hunk header")
                body.append(("added", text))
                seen_new += 1
            else:
                raise DiffParseError(i + 1, f"unknown line marker {marker!r}")
            i += 1
        hunks.append(
            DiffHunk(
                old_start=old_start,
                old_len=old_len,
                new_start=new_start,
                new_len=new_len,
                lines=tuple(body),
            )
        )
    return hunks


def apply_unified_diff(before: str, patch_text: str) -> str:
    """Apply a unified diff to ``before`` (normalised line space).

    Context and removed lines are compared after trailing-whitespace
    normalisation; a mismatch raises :class:`PatchApplyError`.
    """
    hunks = parse_unified_diff(patch_text)
    old_lines = normalize_markdown(before).split("\n") if before else []
    if old_lines and old_lines[-1] == "":
        old_lines.pop()
    out: list[str] = []
    cursor = 0  # 0-based index into old_lines, next line to copy
    for hunk in sorted(hunks, key=lambda h: h.old_start):
        # old_start of a pure-insertion hunk refers to the line *before* it
        start = hunk.old_start - 1 if hunk.old_len > 0 else hunk.old_start
        if start < cursor:
            raise PatchApplyError(f"hunk at -{hunk.old_start} overlaps a previous hunk")
        if start > len(old_lines):
            raise PatchApplyError(f"hunk at -{hunk.old_start} beyond end of file")
        out.extend(old_lines[cursor:start])
        cursor = start
        for marker, text in hunk.lines:
            if marker in ("context", "removed"):
                if cursor >= len(old_lines) or old_lines[cursor].rstrip() != text.rstrip():
                    got = old_lines[cursor] if cursor < len(old_lines) else "<eof>"
                    raise PatchApplyError(
                        f"{marker} line mismatch at old line {cursor + 1}: "
                        f"expected {text!r}, found {got!r}"
                    )
                if marker == "context":
                    out.append(old_lines[cursor])
                cursor += 1
            else:
                out.append(text)
    out.extend(old_lines[cursor:])
    return "\n".join(out) + ("\n" if out else "")


def diff_texts(before: str, after: str, context: int = 3) -> str:
    """Unified diff between two texts (hunk headers and bodies only)."""
    before_lines = before.splitlines()
    after_lines = after.splitlines()
    lines = difflib.unified_diff(before_lines, after_lines, lineterm="", n=context)
    body = [l for l in lines if not l.startswith(("---", "+++"))]
    return "\n".join(body) + ("\n" if body else "")


# --- ground truth ---------------------------------------------------------------


def ground_truth_indices(readme_before: str, readme_patch: str) -> set[int]:
    """Section indices of the pre-update README touched by the patch.

    Removed or modified lines map to the section containing them. A run
    of purely added lines maps to the section containing the last old
    line before the insertion point (an insertion before any content
    maps to section 1). The patch must apply cleanly.
    """
    apply_unified_diff(readme_before, readme_patch)  # raises when it does not apply
    doc = segment_readme(readme_before)
    if doc.section_count == 0:
        return set()
    owner: dict[int, int] = {}
    for sec in doc.sections:
        for ln in range(sec.line_range[0], sec.line_range[1] + 1):
            owner[ln] = sec.index

    def resolve_before(line_no: int) -> int:
        # nearest covered line at or before line_no; section 1 before any content
        while line_no > 0:
            if line_no in owner:
                return owner[line_no]
            line_no -= 1
        return 1

    indices: set[int] = set()
    for hunk in parse_unified_diff(readme_patch):
        old_line = hunk.old_start if hunk.old_len > 0 else hunk.old_start + 1
        anchor = old_line - 1
        for marker, _text in hunk.lines:
            if marker == "removed":
                indices.add(owner.get(old_line, resolve_before(old_line)))
                anchor = old_line
                old_line += 1
            elif marker == "context":
                anchor = old_line
                old_line += 1
            else:  # added
                indices.add(resolve_before(anchor) if anchor > 0 else 1)
    return indices


def ground_truth_for(pr: PullRequest) -> GroundTruth:
    if pr.readme_patch is None:
        return GroundTruth(pr_key=pr.key, updated_indices=frozenset(), is_positive=False)
    indices = ground_truth_indices(pr.readme_before, pr.readme_patch)
    return GroundTruth(pr_key=pr.key, updated_indices=frozenset(indices), is_positive=True)
