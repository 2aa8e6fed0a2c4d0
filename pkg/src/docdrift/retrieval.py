"""Similarity-ranked file-patch retrieval and the sliding context window.

A patch is scored by how well it captures the PR intent and how close
it sits to the existing README: cosine similarity between the PR
title+description and the patch, plus the best cosine similarity
between any README section and the patch. Patches are ranked by that
sum, descending, with ties broken by ascending path.
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from docdrift.pr_corpus import FilePatch, PullRequest
from docdrift.readme_model import ReadmeDocument

__all__ = [
    "EmbeddingBackend",
    "HashedBagOfWordsBackend",
    "HttpEmbeddingBackend",
    "PatchScore",
    "RetrievalWindow",
    "RetrievalError",
    "cosine",
    "score_patches",
    "window_slice",
    "PATCH_EMBED_CHAR_LIMIT",
]

PATCH_EMBED_CHAR_LIMIT = 4096

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class RetrievalError(RuntimeError):
    pass


class EmbeddingBackend(Protocol):
    """Embeds texts into unit-norm vectors of a fixed dimension."""

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


class HashedBagOfWordsBackend:
    """Deterministic offline backend: unit-normalised hashed bag of words.

    Tokens are lowercased alphanumeric runs hashed with crc32 into a
    fixed number of buckets, so the embedding is order-insensitive and
    stable across processes. A text with no tokens maps to a fixed
    basis vector to keep every output unit-norm.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        out = []
        for text in texts:
            vec = np.zeros(self.dim, dtype=np.float64)
            for token in _TOKEN_RE.findall(text.lower()):
                vec[zlib.crc32(token.encode("utf-8")) % self.dim] += 1.0
            norm = float(np.linalg.norm(vec))
            if norm == 0.0:
                vec[0] = 1.0
            else:
                vec /= norm
            out.append(vec)
        return out


class HttpEmbeddingBackend:
    """Embeddings over an HTTP endpoint with an embeddings-style API."""

    def __init__(self, url: str, model: str, timeout: float = 60.0, session=None):
        import requests

        self.url = url
        self.model = model
        self.timeout = timeout
        self._session = session or requests.Session()

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        resp = self._session.post(
            self.url,
            json={"model": self.model, "input": list(texts)},
            timeout=self.timeout,
        )
        resp.raise_for_status()
        data = resp.json()["data"]
        out = []
        for item in data:
            vec = np.asarray(item["embedding"], dtype=np.float64)
            norm = float(np.linalg.norm(vec))
            out.append(vec / norm if norm else vec)
        return out


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


@dataclass(frozen=True)
class PatchScore:
    file_index: int  # position in PullRequest.files
    score: float
    desc_sim: float
    best_section_sim: float
    best_section_index: int  # 0 when no section contributed (binary/empty patch)
    patch: FilePatch


@dataclass
class RetrievalWindow:
    """Contiguous band of ranked patches: ranks [offset, offset + size)."""

    offset: int = 0
    size: int = 3

    def __post_init__(self):
        if self.offset < 0 or self.size < 1:
            raise ValueError("window needs offset >= 0 and size >= 1")


def _patch_embed_text(patch: FilePatch) -> str:
    if not patch.patch_text:
        return patch.path
    return (patch.path + "\n" + patch.patch_text)[:PATCH_EMBED_CHAR_LIMIT]


def score_patches(
    pr: PullRequest, doc: ReadmeDocument, backend: EmbeddingBackend
) -> list[PatchScore]:
    """Rank all file patches of the PR, best first.

    Binary/empty patches are scored against their path alone with no
    section term; a document with zero sections likewise contributes no
    section term.
    """
    desc = pr.title + "\n" + pr.description
    section_texts = [s.text for s in doc.sections]
    patch_texts = [_patch_embed_text(f) for f in pr.files]
    try:
        vectors = backend.embed([desc] + section_texts + patch_texts)
    except Exception as exc:
        raise RetrievalError(f"embedding backend failed: {exc}") from exc
    desc_vec = vectors[0]
    section_vecs = vectors[1 : 1 + len(section_texts)]
    patch_vecs = vectors[1 + len(section_texts) :]

    scores = []
    for idx, (patch, vec) in enumerate(zip(pr.files, patch_vecs)):
        desc_sim = cosine(desc_vec, vec)
        best_sim = 0.0
        best_idx = 0
        if patch.patch_text and section_vecs:
            for s_idx, s_vec in enumerate(section_vecs, start=1):
                sim = cosine(s_vec, vec)
                if sim > best_sim:
                    best_sim = sim
                    best_idx = s_idx
        scores.append(
            PatchScore(
                file_index=idx,
                score=desc_sim + best_sim,
                desc_sim=desc_sim,
                best_section_sim=best_sim,
                best_section_index=best_idx,
                patch=patch,
            )
        )
    scores.sort(key=lambda s: (-s.score, s.patch.path))
    return scores


def window_slice(scores: Sequence[PatchScore], window: RetrievalWindow) -> list[FilePatch]:
    """Patches at ranks [offset, offset+size), clamped to the list length."""
    if not scores:
        return []
    return [s.patch for s in scores[window.offset : window.offset + window.size]]
