"""REST client for a GitHub-compatible forge, producing corpus records.

Every successful response is cached on disk keyed by URL, so ingestion
re-runs are replayable offline. The auth token comes from the
FORGE_TOKEN environment variable, never from config files. Rate-limit
state is one shared, lock-protected value so parallel workers respect a
single budget.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from docdrift.pr_corpus import (
    Commit,
    FilePatch,
    PullRequest,
    is_readme_path,
    parse_rfc3339,
    preferred_readme,
)

__all__ = [
    "ForgeConfig",
    "RateLimitState",
    "ForgeError",
    "RepoNotFoundError",
    "ForgeAuthError",
    "TransportFailure",
    "ForgeResponse",
    "RequestsTransport",
    "ForgeClient",
]

log = logging.getLogger(__name__)

_CHANGE_KIND_MAP = {
    "added": "added",
    "modified": "modified",
    "removed": "deleted",
    "renamed": "renamed",
    "copied": "added",
    "changed": "modified",
    "unchanged": "modified",
}


class ForgeError(RuntimeError):
    pass


class RepoNotFoundError(ForgeError):
    pass


class ForgeAuthError(ForgeError):
    pass


class TransportFailure(ForgeError):
    """Network-level failure; the client retries these with backoff."""


@dataclass(frozen=True)
class ForgeConfig:
    base_url: str = "https://api.github.com"
    per_page: int = 100
    max_retries: int = 5

    def __post_init__(self):
        if not 1 <= self.per_page <= 100:
            raise ValueError("per_page must be in 1..100")


@dataclass
class RateLimitState:
    remaining: int = 1
    reset_at: float = 0.0  # unix epoch


@dataclass
class ForgeResponse:
    status: int
    headers: dict
    body: object


class RequestsTransport:
    def __init__(self, token: str | None = None, timeout: float = 30.0, session=None):
        import requests

        self._session = session or requests.Session()
        self._headers = {"Accept": "application/vnd.github+json"}
        if token:
            self._headers["Authorization"] = f"Bearer {token}"
        self.timeout = timeout

    def request(self, url: str, params: dict) -> ForgeResponse:
        import requests

        try:
            resp = self._session.get(url, params=params, headers=self._headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportFailure(str(exc)) from exc
        try:
            body = resp.json()
        except ValueError:
            body = None
        return ForgeResponse(status=resp.status_code, headers=dict(resp.headers), body=body)


class ForgeClient:
    """Fetch PR histories, file patches, and file contents at a ref."""

    def __init__(
        self,
        config: ForgeConfig = ForgeConfig(),
        token: str | None = None,
        cache_dir: str | Path | None = None,
        transport=None,
        sleeper=time.sleep,
        clock=time.time,
    ):
        import os

        self.config = config
        token = token if token is not None else os.environ.get("FORGE_TOKEN")
        self.transport = transport or RequestsTransport(token=token)
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._sleep = sleeper
        self._clock = clock
        self._rate_lock = threading.Lock()
        self.rate_limit = RateLimitState()
        self.counters: Counter[str] = Counter()

    # --- request plumbing

    def _cache_path(self, url: str, params: dict) -> Path | None:
        if self.cache_dir is None:
            return None
        key = hashlib.sha256(
            (url + "?" + json.dumps(params, sort_keys=True)).encode("utf-8")
        ).hexdigest()
        return self.cache_dir / f"{key}.json"

    def _respect_rate_limit(self) -> None:
        with self._rate_lock:
            remaining, reset_at = self.rate_limit.remaining, self.rate_limit.reset_at
        if remaining <= 0:
            delay = reset_at - self._clock()
            if delay > 0:
                self._sleep(delay)

    def _note_rate_headers(self, headers: dict) -> None:
        remaining = headers.get("X-RateLimit-Remaining")
        reset_at = headers.get("X-RateLimit-Reset")
        if remaining is None:
            return
        with self._rate_lock:
            try:
                self.rate_limit.remaining = int(remaining)
                if reset_at is not None:
                    self.rate_limit.reset_at = float(reset_at)
            except ValueError:
                pass

    def _get(self, path: str, params: dict | None = None):
        params = params or {}
        url = self.config.base_url.rstrip("/") + path
        cache_path = self._cache_path(url, params)
        if cache_path is not None and cache_path.exists():
            self.counters["cache_hits"] += 1
            return json.loads(cache_path.read_text(encoding="utf-8"))

        failures = 0
        while True:
            self._respect_rate_limit()
            try:
                resp = self.transport.request(url, params)
            except TransportFailure:
                failures += 1
                if failures > self.config.max_retries:
                    raise
                self._sleep(min(60.0, 2.0**failures))
                continue
            self._note_rate_headers(resp.headers)
            if resp.status == 200:
                if cache_path is not None:
                    cache_path.write_text(json.dumps(resp.body), encoding="utf-8")
                return resp.body
            if resp.status == 404:
                raise RepoNotFoundError(f"{path}: not found")
            if resp.status == 401:
                raise ForgeAuthError(f"{path}: authentication failed")
            if resp.status in (403, 429) and resp.headers.get("X-RateLimit-Remaining") == "0":
                failures += 1
                if failures > self.config.max_retries:
                    raise ForgeError(f"{path}: rate limited beyond max_retries")
                reset_at = float(resp.headers.get("X-RateLimit-Reset", self._clock() + 60))
                self._sleep(max(0.0, reset_at - self._clock()))
                continue
            failures += 1
            if resp.status >= 500 and failures <= self.config.max_retries:
                self._sleep(min(60.0, 2.0**failures))
                continue
            raise ForgeError(f"{path}: unexpected status {resp.status}")

    def _paginate(self, path: str, params: dict | None = None) -> Iterator[object]:
        params = dict(params or {})
        page = 1
        while True:
            page_params = {**params, "per_page": self.config.per_page, "page": page}
            items = self._get(path, page_params)
            if not isinstance(items, list):
                raise ForgeError(f"{path}: expected a list page")
            yield from items
            if len(items) < self.config.per_page:
                return
            page += 1

    # --- public operations

    def list_pull_requests(self, repo: str, state_filter: str = "merged") -> Iterator[dict]:
        """All PR summaries, each exactly once, descending by number."""
        if state_filter not in ("merged", "closed", "all"):
            raise ValueError("state_filter must be merged|closed|all")
        api_state = "all" if state_filter == "all" else "closed"
        summaries = list(self._paginate(f"/repos/{repo}/pulls", {"state": api_state}))
        if state_filter == "merged":
            summaries = [s for s in summaries if s.get("merged_at")]
        summaries.sort(key=lambda s: -int(s["number"]))
        yield from summaries

    def fetch_pr_detail(self, repo: str, number: int) -> PullRequest:
        pull = self._get(f"/repos/{repo}/pulls/{number}")
        commits = tuple(
            Commit(
                sha=c["sha"].lower(),
                message=c["commit"]["message"],
                authored_at=parse_rfc3339(c["commit"]["author"]["date"]),
            )
            for c in self._paginate(f"/repos/{repo}/pulls/{number}/commits")
        )
        files = []
        for f in self._paginate(f"/repos/{repo}/pulls/{number}/files"):
            files.append(
                FilePatch(
                    path=f["filename"],
                    change_kind=_CHANGE_KIND_MAP.get(f.get("status", "modified"), "modified"),
                    patch_text=f.get("patch") or "",
                    old_path=f.get("previous_filename"),
                )
            )
        base_ref = pull.get("base", {}).get("sha") or pull.get("base", {}).get("ref", "")
        readme_before = self._readme_at_ref(repo, base_ref)
        readme_patch = self._readme_patch(files)
        return PullRequest(
            repo=repo,
            number=number,
            title=pull.get("title") or "",
            description=pull.get("body") or "",
            commits=commits,
            files=tuple(files),
            readme_before=readme_before,
            readme_patch=readme_patch,
            created_at=parse_rfc3339(pull["created_at"]),
        )

    def _readme_at_ref(self, repo: str, ref: str) -> str:
        try:
            listing = self._get(f"/repos/{repo}/contents/", {"ref": ref})
        except RepoNotFoundError:
            listing = []
        names = [
            entry.get("name", "")
            for entry in listing or []
            if isinstance(entry, dict) and entry.get("type") == "file"
        ]
        target = preferred_readme(names)
        if target is None:
            self.counters["missing_readme"] += 1
            log.warning("no root README found in %s at %s", repo, ref)
            return ""
        try:
            body = self._get(f"/repos/{repo}/contents/{target}", {"ref": ref})
        except RepoNotFoundError:
            self.counters["missing_readme"] += 1
            return ""
        content = body.get("content", "") if isinstance(body, dict) else ""
        if body.get("encoding") == "base64":
            return base64.b64decode(content).decode("utf-8", errors="replace")
        return content

    @staticmethod
    def _readme_patch(files: list[FilePatch]) -> str | None:
        candidates = [
            f for f in files if is_readme_path(f.path) or (f.old_path and is_readme_path(f.old_path))
        ]
        if not candidates:
            return None
        best = preferred_readme([f.path for f in candidates])
        for f in candidates:
            if f.path == best:
                return f.patch_text or None
        return candidates[0].patch_text or None

    def ingest_repo(self, repo: str, state_filter: str = "merged") -> Iterator[PullRequest]:
        """Fetch full PR records for every listed PR."""
        for summary in self.list_pull_requests(repo, state_filter):
            yield self.fetch_pr_detail(repo, int(summary["number"]))
