"""Positive/negative dataset construction with keyword, chronology, and
outlier filters.

Positives are README-updating PRs that survive all filters; negatives
are a seeded uniform sample of non-README PRs subjected to the same
outlier thresholds. All filter predicates are per-record and
conjunctive, so the retained set does not depend on filter order; the
report attributes each removal to the first failing stage in the
canonical order keyword -> chronology -> patch-apply -> outliers.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from docdrift.pr_corpus import (
    Commit,
    PatchApplyError,
    PullRequest,
    ground_truth_indices,
)

__all__ = [
    "FilterThresholds",
    "FilterReport",
    "DEFAULT_THRESHOLDS",
    "filter_readme_keyword",
    "filter_chronology",
    "message_mentions_readme",
    "tukey_upper_fence",
    "build_datasets",
]

CHRONOLOGY_THRESHOLD_MINUTES = 5


@dataclass(frozen=True)
class FilterThresholds:
    """Upper bounds on retained PRs; values above any bound are excluded."""

    max_readme_paragraphs: int = 11
    max_changed_files: int = 145
    max_commits: int = 23

    def __post_init__(self):
        if min(self.max_readme_paragraphs, self.max_changed_files, self.max_commits) <= 0:
            raise ValueError("thresholds must be positive")


DEFAULT_THRESHOLDS = FilterThresholds()


@dataclass
class FilterReport:
    input: int = 0
    input_positive: int = 0
    input_negative: int = 0
    removed_by_keyword: int = 0
    removed_by_chronology: int = 0
    removed_by_patch_apply: int = 0
    removed_by_outlier: dict[str, int] = field(
        default_factory=lambda: {"readme_paragraphs": 0, "changed_files": 0, "commits": 0}
    )
    negatives_sampled: int = 0
    negatives_removed_by_outlier: dict[str, int] = field(
        default_factory=lambda: {"changed_files": 0, "commits": 0}
    )
    retained_positive: int = 0
    retained_negative: int = 0

    def check(self) -> None:
        """Assert the stage counts sum consistently to the inputs."""
        removed = (
            self.removed_by_keyword
            + self.removed_by_chronology
            + self.removed_by_patch_apply
            + sum(self.removed_by_outlier.values())
        )
        assert self.input == self.input_positive + self.input_negative
        assert self.input_positive == removed + self.retained_positive
        assert self.negatives_sampled == (
            sum(self.negatives_removed_by_outlier.values()) + self.retained_negative
        )

    def to_dict(self) -> dict:
        return {
            "input": self.input,
            "input_positive": self.input_positive,
            "input_negative": self.input_negative,
            "removed_by_keyword": self.removed_by_keyword,
            "removed_by_chronology": self.removed_by_chronology,
            "removed_by_patch_apply": self.removed_by_patch_apply,
            "removed_by_outlier": dict(self.removed_by_outlier),
            "negatives_sampled": self.negatives_sampled,
            "negatives_removed_by_outlier": dict(self.negatives_removed_by_outlier),
            "retained_positive": self.retained_positive,
            "retained_negative": self.retained_negative,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def filter_readme_keyword(pr: PullRequest) -> bool:
    """Keep the PR unless its title contains "readme" (case-insensitive)."""
    return "readme" not in pr.title.lower()


def message_mentions_readme(commit: Commit) -> bool:
    return "readme" in commit.message.lower()


def _split_commits(
    pr: PullRequest, classifier: Callable[[Commit], bool]
) -> tuple[list[Commit], list[Commit]]:
    readme_commits = [c for c in pr.commits if classifier(c)]
    if not readme_commits and pr.commits:
        # Commit-level file lists are not part of the record schema, so
        # when no message marks the README change we assume the final
        # commit carried it.
        readme_commits = [max(pr.commits, key=lambda c: c.authored_at)]
    code_commits = [c for c in pr.commits if c not in readme_commits]
    return readme_commits, code_commits


def filter_chronology(
    pr: PullRequest,
    threshold_minutes: int = CHRONOLOGY_THRESHOLD_MINUTES,
    classifier: Callable[[Commit], bool] = message_mentions_readme,
    strict: bool = False,
) -> bool:
    """Keep iff the README update chronologically follows a code change.

    The earliest README-touching commit must be at least
    ``threshold_minutes`` after some commit that modified a non-README
    file (after *all* such commits when ``strict``). PRs where the
    commits cannot be told apart are excluded conservatively.
    """
    if pr.readme_patch is None:
        return True
    readme_commits, code_commits = _split_commits(pr, classifier)
    if not readme_commits or not code_commits:
        return False  # conservative exclusion: timeline cannot be established
    readme_at = min(c.authored_at for c in readme_commits)
    gaps = [(readme_at - c.authored_at).total_seconds() for c in code_commits]
    threshold = threshold_minutes * 60
    if strict:
        return min(gaps) >= threshold
    return max(gaps) >= threshold


def tukey_upper_fence(values: Sequence[float]) -> float:
    """Q3 + 1.5 * IQR with linear-interpolation quartiles (type 7)."""
    if not values:
        raise ValueError("tukey_upper_fence needs a non-empty sample")
    ordered = sorted(values)

    def quantile(q: float) -> float:
        pos = q * (len(ordered) - 1)
        lo = math.floor(pos)
        hi = math.ceil(pos)
        frac = pos - lo
        return ordered[lo] * (1.0 - frac) + ordered[hi] * frac

    q1 = quantile(0.25)
    q3 = quantile(0.75)
    return q3 + 1.5 * (q3 - q1)


def _outlier_dimension(
    pr: PullRequest, thresholds: FilterThresholds, n_paragraphs: int | None
) -> str | None:
    """Name of the first exceeded bound, or None when the PR is within bounds."""
    if n_paragraphs is not None and n_paragraphs > thresholds.max_readme_paragraphs:
        return "readme_paragraphs"
    if len(pr.files) > thresholds.max_changed_files:
        return "changed_files"
    if len(pr.commits) > thresholds.max_commits:
        return "commits"
    return None


@dataclass
class DatasetBuildResult:
    positives: list[PullRequest]
    negatives: list[PullRequest]
    report: FilterReport


def build_datasets(
    prs: Iterable[PullRequest],
    thresholds: FilterThresholds = DEFAULT_THRESHOLDS,
    negative_ratio: float = 1.0,
    seed: int = 0,
    chronology_minutes: int = CHRONOLOGY_THRESHOLD_MINUTES,
    strict_chronology: bool = False,
) -> DatasetBuildResult:
    """Construct the positive and negative evaluation sets.

    The negative sample size is ``negative_ratio`` times the number of
    positives that survive the keyword/chronology stage (before outlier
    exclusion), mirroring how the balanced sets were built; the outlier
    thresholds are then applied to both sides. Deterministic for a
    fixed seed.
    """
    report = FilterReport()
    staged: list[tuple[PullRequest, int]] = []
    negative_pool: list[PullRequest] = []

    for pr in prs:
        report.input += 1
        if pr.readme_patch is not None:
            report.input_positive += 1
            if not filter_readme_keyword(pr):
                report.removed_by_keyword += 1
                continue
            if not filter_chronology(pr, chronology_minutes, strict=strict_chronology):
                report.removed_by_chronology += 1
                continue
            try:
                indices = ground_truth_indices(pr.readme_before, pr.readme_patch)
            except PatchApplyError:
                report.removed_by_patch_apply += 1
                continue
            staged.append((pr, len(indices)))
        else:
            report.input_negative += 1
            negative_pool.append(pr)

    positives: list[PullRequest] = []
    for pr, n_paragraphs in staged:
        dimension = _outlier_dimension(pr, thresholds, n_paragraphs)
        if dimension is not None:
            report.removed_by_outlier[dimension] += 1
        else:
            positives.append(pr)

    negative_pool.sort(key=lambda p: p.key)
    sample_size = min(len(negative_pool), round(negative_ratio * len(staged)))
    sampled = random.Random(seed).sample(negative_pool, sample_size)
    sampled.sort(key=lambda p: p.key)
    report.negatives_sampled = sample_size

    negatives: list[PullRequest] = []
    for pr in sampled:
        dimension = _outlier_dimension(pr, thresholds, None)
        if dimension is not None:
            report.negatives_removed_by_outlier[dimension] += 1
        else:
            negatives.append(pr)

    report.retained_positive = len(positives)
    report.retained_negative = len(negatives)
    report.check()
    return DatasetBuildResult(positives=positives, negatives=negatives, report=report)
