"""Evaluation metrics: entry-level rates, prevalence-adjusted accuracy,
index recall, MRR, hierarchical recall, and the weighted random baseline.

Entry metrics treat each PR as one classification event. Index metrics
are computed conditionally by default, over entries that are true
positives (the PR needed an update and the pipeline flagged it); the
report also carries the unconditional variant where a missed positive
contributes an empty prediction.

Hierarchical recall maps each index to its enclosing header node at a
given level. A preamble section (no enclosing header) falls back to
exact-index matching at every level; a section whose header chain skips
the level contributes nothing there, and an entry whose ground-truth
node set is empty at some level leaves that level undefined for the
entry (excluded from the level's macro average).
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from statistics import fmean
from typing import Iterable, Sequence

from docdrift.readme_model import HierarchyTree

__all__ = [
    "RunResult",
    "MetricsReport",
    "EntryStats",
    "entry_metrics",
    "user_facing_accuracy",
    "index_recall",
    "mean_reciprocal_rank",
    "hierarchical_recall",
    "level_tokens",
    "compute_metrics",
    "random_baseline",
    "render_table",
    "PREVALENCE_RATIO",
    "HIERARCHY_LEVELS",
]

PREVALENCE_RATIO = (1, 99)
HIERARCHY_LEVELS = (1, 2, 3, 4)


@dataclass(frozen=True)
class RunResult:
    """One PR's prediction against its ground truth."""

    pr_key: tuple[str, int]
    predicted_positive: bool
    predicted_indices: tuple[int, ...]
    truth_positive: bool
    truth_indices: frozenset[int]
    tree: HierarchyTree | None = None

    def __post_init__(self):
        if not self.predicted_positive and self.predicted_indices:
            raise ValueError("predicted_indices must be empty for a negative prediction")


@dataclass
class MetricsReport:
    entry_recall: float | None
    entry_specificity: float | None
    user_facing_accuracy: float | None
    index_recall: float | None
    mrr: float | None
    hierarchical_recall: tuple[float | None, float | None, float | None, float | None]
    counts: dict[str, int]
    n_positive_scored: int
    index_recall_unconditional: float | None = None
    mrr_unconditional: float | None = None

    def to_dict(self) -> dict:
        return {
            "entry_recall": self.entry_recall,
            "entry_specificity": self.entry_specificity,
            "user_facing_accuracy": self.user_facing_accuracy,
            "index_recall": self.index_recall,
            "mrr": self.mrr,
            "hierarchical_recall": list(self.hierarchical_recall),
            "counts": dict(self.counts),
            "n_positive_scored": self.n_positive_scored,
            "index_recall_unconditional": self.index_recall_unconditional,
            "mrr_unconditional": self.mrr_unconditional,
        }


def entry_metrics(results: Sequence[RunResult]):
    """(recall, specificity, confusion counts); undefined rates are None."""
    if not results:
        raise ValueError("entry_metrics needs at least one result")
    tp = fn = tn = fp = 0
    for r in results:
        if r.truth_positive:
            if r.predicted_positive:
                tp += 1
            else:
                fn += 1
        else:
            if r.predicted_positive:
                fp += 1
            else:
                tn += 1
    recall = tp / (tp + fn) if tp + fn else None
    specificity = tn / (tn + fp) if tn + fp else None
    return recall, specificity, {"tp": tp, "fn": fn, "tn": tn, "fp": fp}


def user_facing_accuracy(
    recall: float, specificity: float, prevalence_ratio: tuple[int, int] = PREVALENCE_RATIO
) -> float | None:
    """Precision of surfaced recommendations under the real-world prevalence.

    With a positives:negatives weighting of 1:99, this is
    recall / (recall + (1 - specificity) * 99); None when no
    recommendation would ever be surfaced.
    """
    pos_weight, neg_weight = prevalence_ratio
    surfaced = recall * pos_weight + (1.0 - specificity) * neg_weight
    if surfaced == 0:
        return None
    return recall * pos_weight / surfaced


def index_recall(truth: Iterable[int], predicted: Sequence[int]) -> float | None:
    """|G intersect P| / |G|; None (skipped entry) for an empty truth set."""
    truth_set = set(truth)
    if not truth_set:
        return None
    return len(truth_set & set(predicted)) / len(truth_set)


def mean_reciprocal_rank(
    per_query: Sequence[tuple[Iterable[int], Sequence[int]]],
) -> float | None:
    """Mean of 1/rank of the first predicted index that is in the truth set.

    A query with no hit contributes 0. None for an empty query list.
    """
    if not per_query:
        return None
    total = 0.0
    for truth, predicted in per_query:
        truth_set = set(truth)
        for rank, idx in enumerate(predicted, start=1):
            if idx in truth_set:
                total += 1.0 / rank
                break
    return total / len(per_query)


def level_tokens(tree: HierarchyTree, indices: Iterable[int], level: int) -> set:
    """The node set N_level for an index set, with the preamble fallback.

    Preamble sections match by exact index at every level; sections whose
    header path has no node at this level contribute nothing.
    """
    tokens: set = set()
    for idx in indices:
        owner = tree.owner_of(idx)
        if owner.level == 0:
            tokens.add(("idx", idx))
            continue
        node = tree.node_at_level(idx, level)
        if node is not None:
            tokens.add(("node", node.node_id))
    return tokens


def hierarchical_recall(
    truth: Iterable[int], predicted: Iterable[int], tree: HierarchyTree
) -> tuple[float | None, float | None, float | None, float | None]:
    """Per-level relaxed recall for one entry; None where N_level(G) is empty."""
    out = []
    truth = list(truth)
    predicted = list(predicted)
    for level in HIERARCHY_LEVELS:
        n_truth = level_tokens(tree, truth, level)
        if not n_truth:
            out.append(None)
            continue
        n_pred = level_tokens(tree, predicted, level)
        out.append(len(n_truth & n_pred) / len(n_truth))
    return tuple(out)


def _mean_or_none(values: list[float]) -> float | None:
    return fmean(values) if values else None


def compute_metrics(
    results: Sequence[RunResult],
    prevalence_ratio: tuple[int, int] = PREVALENCE_RATIO,
    micro_hierarchical: bool = False,
) -> MetricsReport:
    """Aggregate per-PR results into the full report.

    Index metrics are reported conditionally over true-positive entries
    (and unconditionally over all positives) with entries lacking ground
    truth indices skipped. Hierarchical levels are macro-averaged per
    level over entries where the level is defined, or pooled when
    ``micro_hierarchical`` is set.
    """
    recall, specificity, counts = entry_metrics(results)
    ufa = None
    if recall is not None and specificity is not None:
        ufa = user_facing_accuracy(recall, specificity, prevalence_ratio)

    positives = [r for r in results if r.truth_positive and r.truth_indices]
    scored = [r for r in positives if r.predicted_positive]

    cond_recalls = [index_recall(r.truth_indices, r.predicted_indices) for r in scored]
    cond_mrr = mean_reciprocal_rank([(r.truth_indices, r.predicted_indices) for r in scored])
    uncond_pairs = [
        (r.truth_indices, r.predicted_indices if r.predicted_positive else ())
        for r in positives
    ]
    uncond_recalls = [index_recall(t, p) for t, p in uncond_pairs]

    per_level: list[float | None] = []
    with_tree = [r for r in scored if r.tree is not None]
    if micro_hierarchical:
        for level in HIERARCHY_LEVELS:
            hit = total = 0
            for r in with_tree:
                n_truth = level_tokens(r.tree, r.truth_indices, level)
                if not n_truth:
                    continue
                hit += len(n_truth & level_tokens(r.tree, r.predicted_indices, level))
                total += len(n_truth)
            per_level.append(hit / total if total else None)
    else:
        columns: dict[int, list[float]] = {level: [] for level in HIERARCHY_LEVELS}
        for r in with_tree:
            entry = hierarchical_recall(r.truth_indices, r.predicted_indices, r.tree)
            for level, value in zip(HIERARCHY_LEVELS, entry):
                if value is not None:
                    columns[level].append(value)
        per_level = [_mean_or_none(columns[level]) for level in HIERARCHY_LEVELS]

    return MetricsReport(
        entry_recall=recall,
        entry_specificity=specificity,
        user_facing_accuracy=ufa,
        index_recall=_mean_or_none([v for v in cond_recalls if v is not None]),
        mrr=cond_mrr,
        hierarchical_recall=tuple(per_level),
        counts=counts,
        n_positive_scored=len(scored),
        index_recall_unconditional=_mean_or_none([v for v in uncond_recalls if v is not None]),
        mrr_unconditional=mean_reciprocal_rank(uncond_pairs),
    )


@dataclass(frozen=True)
class EntryStats:
    """What the random baseline needs to know about one corpus entry."""

    section_count: int
    truth_size: int  # 0 for negative entries


def random_baseline(
    corpus_stats: Sequence[EntryStats],
    prevalence: float = 0.01,
    picks: int = 5,
    trials: int = 10_000,
    seed: int = 0,
) -> MetricsReport:
    """Monte-Carlo report for the weighted random guesser.

    Each trial draws a corpus entry, flags it positive with probability
    ``prevalence``, and picks ``picks`` distinct candidate indices
    uniformly when flagged.
    """
    if not corpus_stats:
        raise ValueError("random_baseline needs corpus stats")
    rng = random.Random(seed)
    results = []
    for t in range(trials):
        stats = corpus_stats[rng.randrange(len(corpus_stats))]
        universe = range(1, stats.section_count + 1)
        truth_positive = stats.truth_size > 0
        truth = frozenset(
            rng.sample(universe, min(stats.truth_size, stats.section_count))
            if truth_positive
            else ()
        )
        flagged = rng.random() < prevalence
        predicted = (
            tuple(rng.sample(universe, min(picks, stats.section_count))) if flagged else ()
        )
        results.append(
            RunResult(
                pr_key=("simulated", t),
                predicted_positive=flagged,
                predicted_indices=predicted,
                truth_positive=truth_positive,
                truth_indices=truth,
                tree=None,
            )
        )
    return compute_metrics(results)


def _fmt(value: float | None) -> str:
    return "--" if value is None else f"{value:.2f}"


def render_table(report: MetricsReport, model: str = "-", version: str = "-") -> str:
    """One-row plain-text table with the standard column layout."""
    header = (
        "Model | Version | Entry Recall | Entry Specificity | User-facing Accuracy"
        " | Index Recall | MRR | Hierarchical Recall"
    )
    hier = "(" + ", ".join(_fmt(v) for v in report.hierarchical_recall) + ")"
    row = (
        f"{model} | {version} | {_fmt(report.entry_recall)} | {_fmt(report.entry_specificity)}"
        f" | {_fmt(report.user_facing_accuracy)} | {_fmt(report.index_recall)}"
        f" | {_fmt(report.mrr)} | {hier}"
    )
    return header + "\n" + row + "\n"
