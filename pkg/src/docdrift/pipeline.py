"""Static and agentic orchestration of the five pipeline components.

The static workflow runs a strict linear sequence: C1 gates the PR,
C2 judges context sufficiency, C3 fetches the single top-ranked patch
only when needed, C4 localises and justifies, and C5 performs one
conclusive review whose rejection discards the recommendation.

The agentic workflow adds two loops. The retrieval loop slides a window
over the similarity-ranked patches while C2 keeps judging the context
insufficient, up to p rounds. The refinement loop reacts to C5's
critique of the justification: a generic critique grows the window by
one, a hallucinating critique shrinks it by one (floor 1), and control
returns to C2 before localising again; a correct critique triggers the
stability judgement that produces the final verdict. Refinements are
also bounded by p, so a run never exceeds 1 + 2p component rounds.

Both workflows fail closed: any unrecoverable backend error or empty
localisation ends in a no-update recommendation with the trace kept.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Callable

from docdrift.llm_gateway import (
    ContextBundle,
    GatewayTransportError,
    LlmGateway,
    LocalisationResult,
    NoValidIndicesError,
    ReviewVerdict,
)
from docdrift.pr_corpus import PullRequest
from docdrift.readme_model import ReadmeDocument, build_hierarchy, segment_readme
from docdrift.retrieval import (
    EmbeddingBackend,
    RetrievalError,
    RetrievalWindow,
    score_patches,
    window_slice,
)

__all__ = [
    "PipelineConfig",
    "TraceEvent",
    "Recommendation",
    "Backends",
    "run_static",
    "run_agentic",
    "run_pipeline",
    "render_recommendation",
]

DECISION_UPDATE = "update"
DECISION_NO_UPDATE = "no_update"


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "static"  # static | agentic
    window_size_k: int = 3
    max_iterations_p: int = 3
    top_k_indices: int = 5
    static_retrieval_count: int = 1

    def __post_init__(self):
        if self.window_size_k < 1 or self.max_iterations_p < 1:
            raise ValueError("window_size_k and max_iterations_p must be >= 1")
        if self.mode not in ("static", "agentic"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class TraceEvent:
    stage: str  # C1 | C2 | C3 | C4 | C5
    iteration: int
    summary: str
    timestamp: float


@dataclass
class Recommendation:
    pr_key: tuple[str, int]
    decision: str
    ranked_indices: tuple[int, ...] = ()
    justifications: dict[int, str] = field(default_factory=dict)
    verdict_trail: list[ReviewVerdict] = field(default_factory=list)
    trace: list[TraceEvent] = field(default_factory=list)
    error_kind: str | None = None  # "transport" | "no_indices" when failing closed

    def to_dict(self) -> dict:
        return {
            "repo": self.pr_key[0],
            "number": self.pr_key[1],
            "decision": self.decision,
            "ranked_indices": list(self.ranked_indices),
            "justifications": {str(k): v for k, v in self.justifications.items()},
            "verdicts": [
                {"approve": v.approve, "critique": v.critique} for v in self.verdict_trail
            ],
            "trace": [
                {
                    "stage": e.stage,
                    "iteration": e.iteration,
                    "summary": e.summary,
                    "timestamp": e.timestamp,
                }
                for e in self.trace
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)


@dataclass
class Backends:
    gateway: LlmGateway
    embedder: EmbeddingBackend


class _Abort(Exception):
    """Internal control flow: fail closed into a no-update recommendation."""

    def __init__(self, message: str, kind: str):
        super().__init__(message)
        self.kind = kind


class _Run:
    def __init__(self, pr: PullRequest, cfg: PipelineConfig, backends: Backends, clock):
        self.pr = pr
        self.cfg = cfg
        self.gateway = backends.gateway
        self.embedder = backends.embedder
        self.clock = clock or time.time
        self.trace: list[TraceEvent] = []
        self.verdict_trail: list[ReviewVerdict] = []
        self.iteration = 0
        self.doc: ReadmeDocument = segment_readme(pr.readme_before)
        self.sections = [(s.index, s.text) for s in self.doc.sections]

    # --- trace helpers

    def event(self, stage: str, summary: str) -> None:
        self.trace.append(
            TraceEvent(stage=stage, iteration=self.iteration, summary=summary, timestamp=self.clock())
        )

    def traced_call(self, stage: str, summary_fn: Callable[[object], str], call: Callable[[], object]):
        """Run one component call, emitting one TraceEvent per backend call."""
        before = self.gateway.thread_call_count()
        try:
            outcome = call()
        except GatewayTransportError as exc:
            self._emit_calls(stage, before, final=f"error: {exc}")
            raise _Abort(str(exc), kind="transport") from exc
        except NoValidIndicesError as exc:
            self._emit_calls(stage, before, final=f"error: {exc}")
            raise _Abort(str(exc), kind="no_indices") from exc
        self._emit_calls(stage, before, final=summary_fn(outcome))
        return outcome

    def _emit_calls(self, stage: str, before: int, final: str) -> None:
        n = max(1, self.gateway.thread_call_count() - before)
        for _ in range(n - 1):
            self.event(stage, "additional backend call (retry)")
        self.event(stage, final)

    # --- bundles

    def bundle(self, patches=(), with_sections=True, with_files=True) -> ContextBundle:
        return ContextBundle(
            title=self.pr.title,
            description=self.pr.description,
            commit_messages=[c.message for c in self.pr.commits],
            file_names=[f.path for f in self.pr.files] if with_files else [],
            patches=[(p.path, p.patch_text) for p in patches],
            readme_sections=self.sections if with_sections else [],
        )

    # --- components

    def gate(self) -> bool:
        decision = self.traced_call(
            "C1",
            lambda d: f"update_required={d.update_required}",
            lambda: self.gateway.classify_relevance(self.bundle()),
        )
        return decision.update_required

    def sufficiency(self, patches) -> bool:
        decision = self.traced_call(
            "C2",
            lambda d: f"sufficient={d.sufficient}",
            lambda: self.gateway.assess_sufficiency(
                self.bundle(patches=patches, with_sections=False, with_files=False)
            ),
        )
        return decision.sufficient

    def rank_patches(self):
        if not self.pr.files:
            return []
        try:
            scores = score_patches(self.pr, self.doc, self.embedder)
        except RetrievalError as exc:
            self.event("C3", f"ranking unavailable: {exc}")
            return []
        return scores

    def fetch(self, scores, window: RetrievalWindow):
        patches = window_slice(scores, window)
        self.event(
            "C3",
            f"fetched ranks {window.offset + 1}..{window.offset + len(patches)} "
            f"(window size {window.size})",
        )
        return patches

    def localise(self, patches) -> LocalisationResult:
        return self.traced_call(
            "C4",
            lambda r: f"indices={list(r.ranked_indices)}",
            lambda: self.gateway.localise_and_justify(self.bundle(patches=patches)),
        )

    def review(self, result, patches, mode: str) -> ReviewVerdict:
        return self.traced_call(
            "C5",
            lambda v: f"critique={v.critique} approve={v.approve}",
            lambda: self.gateway.review_recommendation(
                result, self.doc, self.bundle(patches=patches), mode=mode
            ),
        )

    # --- outcomes

    def no_update(self, error_kind: str | None = None) -> Recommendation:
        return Recommendation(
            pr_key=self.pr.key,
            decision=DECISION_NO_UPDATE,
            verdict_trail=self.verdict_trail,
            trace=self.trace,
            error_kind=error_kind,
        )

    def update(self, result: LocalisationResult) -> Recommendation:
        return Recommendation(
            pr_key=self.pr.key,
            decision=DECISION_UPDATE,
            ranked_indices=result.ranked_indices,
            justifications=dict(result.justifications),
            verdict_trail=self.verdict_trail,
            trace=self.trace,
        )


def run_static(
    pr: PullRequest, cfg: PipelineConfig, backends: Backends, clock=None
) -> Recommendation:
    """Strict linear sequence: C1 gate, C2, top-1 C3 when needed, C4, C5."""
    run = _Run(pr, cfg, backends, clock)
    try:
        if not run.gate():
            return run.no_update()
        patches = []
        if not run.sufficiency([]):
            scores = run.rank_patches()
            if scores:
                window = RetrievalWindow(offset=0, size=max(1, cfg.static_retrieval_count))
                patches = run.fetch(scores, window)
        result = run.localise(patches)
        verdict = run.review(result, patches, mode="static")
        run.verdict_trail.append(verdict)
        if verdict.approve:
            return run.update(result)
        return run.no_update()  # discarded by the reviewer
    except _Abort as abort:
        return run.no_update(error_kind=abort.kind)


def run_agentic(
    pr: PullRequest, cfg: PipelineConfig, backends: Backends, clock=None
) -> Recommendation:
    """Retrieval loop (C2<->C3) plus self-reflecting refinement loop (C5->C2)."""
    run = _Run(pr, cfg, backends, clock)
    p = cfg.max_iterations_p
    try:
        if not run.gate():
            return run.no_update()

        scores = run.rank_patches()
        n = len(scores)
        window = RetrievalWindow(offset=0, size=min(cfg.window_size_k, n) if n else cfg.window_size_k)
        state = {"ctx_rounds": 0, "patches": []}

        def context_phase() -> None:
            # one C3 fetch + C2 assessment per round; slide while insufficient
            while state["ctx_rounds"] < p:
                run.iteration += 1
                state["patches"] = run.fetch(scores, window) if n else []
                sufficient = run.sufficiency(state["patches"])
                state["ctx_rounds"] += 1
                if sufficient or n == 0:
                    return
                if state["ctx_rounds"] >= p:
                    return
                window.offset = min(window.offset + 1, n - 1)

        context_phase()
        gen_rounds = 0
        while True:
            run.iteration += 1
            result = run.localise(state["patches"])
            verdict = run.review(result, state["patches"], mode="agentic")
            run.verdict_trail.append(verdict)
            gen_rounds += 1
            if verdict.critique == "correct":
                return run.update(result) if verdict.approve else run.no_update()
            if gen_rounds >= p:
                return run.no_update()  # refinement budget exhausted
            if n:
                if verdict.critique == "generic":
                    window.size = min(window.size + 1, n)  # richer context
                else:  # hallucinating
                    window.size = max(1, window.size - 1)  # sharpen the signal
                window.offset = min(window.offset, max(0, n - window.size))
                if state["ctx_rounds"] < p:
                    context_phase()  # re-enter at C2 per the refinement arrow
                else:
                    run.iteration += 1
                    state["patches"] = run.fetch(scores, window)
    except _Abort as abort:
        return run.no_update(error_kind=abort.kind)


def run_pipeline(
    pr: PullRequest, cfg: PipelineConfig, backends: Backends, clock=None
) -> Recommendation:
    if cfg.mode == "agentic":
        return run_agentic(pr, cfg, backends, clock)
    return run_static(pr, cfg, backends, clock)


def render_recommendation(rec: Recommendation, doc: ReadmeDocument | None = None) -> str:
    """Line-oriented report suitable for posting as a PR review comment."""
    tree = build_hierarchy(doc) if doc is not None else None
    lines = [f"PR {rec.pr_key[0]}#{rec.pr_key[1]}"]
    if rec.decision == DECISION_NO_UPDATE:
        lines.append("decision: no update required")
    else:
        lines.append("decision: README update recommended")
        for rank, idx in enumerate(rec.ranked_indices, start=1):
            header = ""
            if tree is not None:
                node = tree.owner_of(idx)
                if node.level > 0:
                    header = f" (under: {node.header_text})"
            lines.append(f"  {rank}. section {idx}{header}")
            lines.append(f"     why: {rec.justifications.get(idx, '')}")
    if rec.verdict_trail:
        verdicts = ", ".join(f"{v.critique}/{'ok' if v.approve else 'no'}" for v in rec.verdict_trail)
        lines.append(f"review verdicts: {verdicts}")
    lines.append("trace:")
    for event in rec.trace:
        lines.append(f"  [{event.iteration}] {event.stage}: {event.summary}")
    return "\n".join(lines) + "\n"
