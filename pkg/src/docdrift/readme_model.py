"""Paragraph-level README segmentation and the header hierarchy over it.

A README is split into 1-indexed sections at paragraph granularity:
a section is a maximal run of non-blank lines, except that

* an ATX header line (``#`` .. ``######``) is always its own section,
* a fenced code block (``` or ~~~) is one section even when it contains
  blank lines,
* a contiguous list or table block is one section.

Setext headers (``===`` / ``---`` underlines) are normalised to ATX
levels 1/2; HTML ``<h*>`` tags are left alone and degrade to paragraphs.
Trailing whitespace and Windows line endings are normalised before
segmentation, so section line ranges always refer to the normalised text.

On top of the sections sits a header tree capped at level 4: level-1
headers are top-level nodes, deeper headers nest as children, and any
header of level 5 or 6 does not open a node - its line and the content
below it stay attached to the enclosing node of level <= 4. Sections
before the first header live on a synthetic level-0 root node.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

__all__ = [
    "Section",
    "ReadmeDocument",
    "HierarchyNode",
    "HierarchyTree",
    "segment_readme",
    "build_hierarchy",
    "node_at_level",
]

MAX_HIERARCHY_DEPTH = 4

_ATX_RE = re.compile(r"^ {0,3}(#{1,6})(?=\s|$)\s*(.*?)\s*$")
_FENCE_OPEN_RE = re.compile(r"^ {0,3}(`{3,}|~{3,})")
_SETEXT_RE = re.compile(r"^ {0,3}(=+|-+)$")
_LIST_RE = re.compile(r"^ {0,3}(?:[-*+]|\d{1,9}[.)])(?:\s+\S.*)?$")
_TABLE_DELIM_RE = re.compile(r"^[\s:|-]+$")
_CLOSING_HASHES_RE = re.compile(r"\s+#+$")


@dataclass(frozen=True)
class Section:
    """One paragraph-level unit of the README.

    ``line_range`` is a 1-based inclusive (start, end) pair into the
    normalised document text. ``header_level`` is set only for
    ``kind == "header"``.
    """

    index: int
    kind: str  # header | paragraph | code_block | table | list_block
    text: str
    line_range: tuple[int, int]
    header_level: int | None = None

    @property
    def is_header(self) -> bool:
        return self.kind == "header"


@dataclass(frozen=True)
class ReadmeDocument:
    raw_text: str
    sections: tuple[Section, ...]
    line_count: int

    @property
    def section_count(self) -> int:
        return len(self.sections)

    def lines(self) -> list[str]:
        if not self.raw_text:
            return []
        lines = self.raw_text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return lines


def normalize_markdown(raw_text: str) -> str:
    """Normalise line endings and strip trailing whitespace per line."""
    text = raw_text.replace("\r\n", "\n").replace("\r", "\n")
    return "\n".join(line.rstrip() for line in text.split("\n"))


def _is_table_line(line: str) -> bool:
    stripped = line.lstrip()
    if stripped.startswith("|"):
        return True
    return "|" in line and _TABLE_DELIM_RE.match(line) is not None


def _is_fence_close(line: str, char: str, min_len: int) -> bool:
    m = re.match(r"^ {0,3}(" + re.escape(char) + r"+)\s*$", line)
    return m is not None and len(m.group(1)) >= min_len


def _line_class(line: str) -> str:
    if _is_table_line(line):
        return "table"
    if _LIST_RE.match(line):
        return "list_block"
    return "paragraph"


def segment_readme(raw_text: str) -> ReadmeDocument:
    """Split markdown text into 1-indexed paragraph-level sections.

    Total function: malformed markdown degrades to paragraph sections,
    and empty input yields a document with zero sections.
    """
    text = normalize_markdown(raw_text)
    lines = text.split("\n") if text else []
    if lines and lines[-1] == "":
        lines.pop()
    n = len(lines)

    raw_sections: list[tuple[str, int, int, str, int | None]] = []
    pending_kind: str | None = None
    pending_start = 0
    pending_lines: list[str] = []

    def flush() -> None:
        nonlocal pending_kind, pending_lines
        if pending_kind is not None:
            end = pending_start + len(pending_lines) - 1
            raw_sections.append(
                (pending_kind, pending_start, end, "\n".join(pending_lines), None)
            )
        pending_kind = None
        pending_lines = []

    i = 0
    while i < n:
        line = lines[i]
        if line == "":
            flush()
            i += 1
            continue

        fence = _FENCE_OPEN_RE.match(line)
        if fence is not None:
            flush()
            marker = fence.group(1)
            j = i + 1
            while j < n and not _is_fence_close(lines[j], marker[0], len(marker)):
                j += 1
            end = j if j < n else n - 1
            raw_sections.append(
                ("code_block", i, end, "\n".join(lines[i : end + 1]), None)
            )
            i = end + 1
            continue

        atx = _ATX_RE.match(line)
        if atx is not None:
            flush()
            raw_sections.append(("header", i, i, line, len(atx.group(1))))
            i += 1
            continue

        setext = _SETEXT_RE.match(line)
        if setext is not None and pending_kind == "paragraph":
            # The previous text line becomes an ATX header of level 1 or 2.
            level = 1 if setext.group(1).startswith("=") else 2
            title_line = pending_lines.pop()
            if pending_lines:
                end = pending_start + len(pending_lines) - 1
                raw_sections.append(
                    ("paragraph", pending_start, end, "\n".join(pending_lines), None)
                )
            pending_kind = None
            pending_lines = []
            raw_sections.append(
                ("header", i - 1, i, "#" * level + " " + title_line.strip(), level)
            )
            i += 1
            continue

        cls = _line_class(line)
        if pending_kind is None:
            pending_kind = cls
            pending_start = i
        elif pending_kind == "list_block":
            pass  # lazy continuation: the run stays in the list block
        elif pending_kind != cls:
            flush()
            pending_kind = cls
            pending_start = i
        pending_lines.append(line)
        i += 1
    flush()

    sections = tuple(
        Section(
            index=k + 1,
            kind=kind,
            text=body,
            line_range=(start + 1, end + 1),
            header_level=level,
        )
        for k, (kind, start, end, body, level) in enumerate(raw_sections)
    )
    return ReadmeDocument(raw_text=text, sections=sections, line_count=n)


@dataclass
class HierarchyNode:
    node_id: str
    level: int
    header_text: str
    children: list["HierarchyNode"] = field(default_factory=list)
    section_indices: list[int] = field(default_factory=list)


@dataclass
class HierarchyTree:
    """Header-level tree of depth at most 4 over a segmented README."""

    root: HierarchyNode
    max_depth: int = MAX_HIERARCHY_DEPTH
    _nodes: dict[str, HierarchyNode] = field(default_factory=dict, repr=False)
    _parent: dict[str, str] = field(default_factory=dict, repr=False)
    _owner: dict[int, str] = field(default_factory=dict, repr=False)

    def nodes(self) -> list[HierarchyNode]:
        out: list[HierarchyNode] = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            out.append(node)
            stack.extend(reversed(node.children))
        return out

    def owner_of(self, section_index: int) -> HierarchyNode:
        try:
            return self._nodes[self._owner[section_index]]
        except KeyError:
            raise ValueError(f"unknown section index {section_index}") from None

    def parent_of(self, node: HierarchyNode) -> HierarchyNode | None:
        parent_id = self._parent.get(node.node_id)
        return self._nodes[parent_id] if parent_id is not None else None

    def node_at_level(self, section_index: int, level: int) -> HierarchyNode | None:
        if not 1 <= level <= self.max_depth:
            raise ValueError(f"level must be in 1..{self.max_depth}, got {level}")
        node: HierarchyNode | None = self.owner_of(section_index)
        while node is not None:
            if node.level == level:
                return node
            node = self.parent_of(node)
        return None


def header_title(section: Section) -> str:
    """Header text without the leading hashes or a trailing closing run."""
    m = _ATX_RE.match(section.text)
    if m is None:
        return section.text.strip()
    return _CLOSING_HASHES_RE.sub("", m.group(2)).strip()


def build_hierarchy(doc: ReadmeDocument) -> HierarchyTree:
    """Build the depth-capped header tree over a segmented document.

    A header section belongs to the node it introduces; headers of level
    5 and 6 do not create nodes and attach (with the content below them)
    to the enclosing node of level <= 4.
    """
    root = HierarchyNode(node_id="n0", level=0, header_text="")
    nodes = {root.node_id: root}
    parent: dict[str, str] = {}
    owner: dict[int, str] = {}
    stack = [root]
    counter = 1

    for sec in doc.sections:
        if sec.kind == "header" and sec.header_level is not None and sec.header_level <= MAX_HIERARCHY_DEPTH:
            while stack[-1].level >= sec.header_level:
                stack.pop()
            node = HierarchyNode(
                node_id=f"n{counter}",
                level=sec.header_level,
                header_text=header_title(sec),
            )
            counter += 1
            nodes[node.node_id] = node
            parent[node.node_id] = stack[-1].node_id
            stack[-1].children.append(node)
            stack.append(node)
            target = node
        else:
            target = stack[-1]
        target.section_indices.append(sec.index)
        owner[sec.index] = target.node_id

    return HierarchyTree(root=root, _nodes=nodes, _parent=parent, _owner=owner)


def node_at_level(tree: HierarchyTree, section_index: int, level: int) -> HierarchyNode | None:
    """Ancestor-or-self node of the section's owner at exactly ``level``.

    Returns None when the section's path to the root has no node at that
    level (preamble sections, or header chains that skip a level).
    Raises ValueError for a section index that is not in the document.
    """
    return tree.node_at_level(section_index, level)
