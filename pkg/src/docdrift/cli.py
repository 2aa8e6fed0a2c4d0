"""Command-line entry point: ingest, build-dataset, analyze, evaluate.

Exit codes are a stable contract: 0 success, 2 input/config error,
3 backend error. Every command is deterministic given (config, seed,
replay file); live backends are opt-in via --backend-url.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from docdrift.dataset_builder import FilterThresholds, build_datasets
from docdrift.forge_client import (
    ForgeAuthError,
    ForgeClient,
    ForgeConfig,
    ForgeError,
    RepoNotFoundError,
    TransportFailure,
)
from docdrift.llm_gateway import (
    GatewayTransportError,
    HttpChatBackend,
    LlmGateway,
    ReplayBackend,
)
from docdrift.metrics import EntryStats, RunResult, compute_metrics, random_baseline, render_table
from docdrift.pipeline import Backends, PipelineConfig, render_recommendation, run_pipeline
from docdrift.pr_corpus import (
    PatchApplyError,
    PullRequest,
    ground_truth_for,
    load_corpus,
    parse_corpus_record,
    serialize_record,
    write_corpus,
)
from docdrift.readme_model import build_hierarchy, segment_readme
from docdrift.retrieval import HashedBagOfWordsBackend, HttpEmbeddingBackend

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_BACKEND = 3

_CONFIG_KEYS = {
    "backend_url",
    "model",
    "embed_url",
    "embed_model",
    "mode",
    "k",
    "p",
    "seed",
    "thresholds",
    "cache_dir",
    "replay",
}


class ConfigError(ValueError):
    pass


@dataclass
class AppConfig:
    backend_url: str | None = None
    model: str = "default"
    embed_url: str | None = None
    embed_model: str = "default"
    mode: str = "static"
    k: int = 3
    p: int = 3
    seed: int = 0
    thresholds: FilterThresholds = FilterThresholds()
    cache_dir: str | None = None
    replay: str | None = None

    @classmethod
    def load(cls, args: argparse.Namespace) -> "AppConfig":
        cfg = cls()
        config_path = getattr(args, "config", None)
        if config_path:
            try:
                raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config file: {exc}") from exc
            unknown = set(raw) - _CONFIG_KEYS
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
            for key, value in raw.items():
                if key == "thresholds":
                    cfg.thresholds = _parse_thresholds_dict(value)
                else:
                    setattr(cfg, key, value)
        for key in ("backend_url", "model", "embed_url", "embed_model", "mode", "cache_dir", "replay"):
            value = getattr(args, key.replace("-", "_"), None)
            if value is not None:
                setattr(cfg, key, value)
        for key in ("k", "p", "seed"):
            value = getattr(args, key, None)
            if value is not None:
                setattr(cfg, key, value)
        if getattr(args, "thresholds", None):
            cfg.thresholds = _parse_thresholds_flag(args.thresholds)
        if cfg.mode not in ("static", "agentic"):
            raise ConfigError(f"invalid mode {cfg.mode!r}")
        if cfg.k < 1 or cfg.p < 1:
            raise ConfigError("k and p must be >= 1")
        return cfg

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(mode=self.mode, window_size_k=self.k, max_iterations_p=self.p)


def _parse_thresholds_dict(value) -> FilterThresholds:
    if not isinstance(value, dict):
        raise ConfigError("thresholds must be an object")
    unknown = set(value) - {"max_readme_paragraphs", "max_changed_files", "max_commits"}
    if unknown:
        raise ConfigError(f"unknown threshold keys: {sorted(unknown)}")
    try:
        return FilterThresholds(**value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _parse_thresholds_flag(text: str) -> FilterThresholds:
    try:
        paragraphs, files, commits = (int(part) for part in text.split(","))
        return FilterThresholds(paragraphs, files, commits)
    except ValueError as exc:
        raise ConfigError(f"--thresholds expects P,F,C integers: {exc}") from exc


def _build_backends(cfg: AppConfig) -> Backends:
    if cfg.replay:
        try:
            chat = ReplayBackend.from_file(cfg.replay)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read replay file: {exc}") from exc
    elif cfg.backend_url:
        chat = HttpChatBackend(cfg.backend_url, cfg.model)
    else:
        raise ConfigError("no chat backend configured: pass --replay or --backend-url")
    if cfg.embed_url:
        embedder = HttpEmbeddingBackend(cfg.embed_url, cfg.embed_model)
    else:
        embedder = HashedBagOfWordsBackend()
    return Backends(gateway=LlmGateway(chat), embedder=embedder)


def _deterministic_clock():
    state = {"t": 0.0}

    def tick() -> float:
        state["t"] += 1.0
        return state["t"]

    return tick


# --- commands ---------------------------------------------------------------------


def cmd_ingest(args, stdout, client_factory=None) -> int:
    try:
        cfg = AppConfig.load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    factory = client_factory or (
        lambda: ForgeClient(
            config=ForgeConfig(base_url=args.base_url) if args.base_url else ForgeConfig(),
            cache_dir=cfg.cache_dir,
        )
    )
    client = factory()
    try:
        count = write_corpus(args.out, client.ingest_repo(args.repo, args.state))
    except ForgeAuthError as exc:
        print(f"authentication failed: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RepoNotFoundError as exc:
        print(f"repository not found: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TransportFailure, ForgeError) as exc:
        print(f"forge error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    print(f"wrote {count} records to {args.out}", file=stdout)
    if client.counters.get("missing_readme"):
        print(f"records with no README at base ref: {client.counters['missing_readme']}", file=stdout)
    return EXIT_OK


def cmd_build_dataset(args, stdout) -> int:
    try:
        cfg = AppConfig.load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        lines = Path(args.input).read_text(encoding="utf-8", errors="replace").splitlines()
    except OSError as exc:
        print(f"cannot read corpus: {exc}", file=sys.stderr)
        return EXIT_INPUT
    loaded = load_corpus(lines)
    result = build_datasets(
        loaded.records,
        thresholds=cfg.thresholds,
        negative_ratio=args.negative_ratio,
        seed=cfg.seed,
        strict_chronology=args.strict_chronology,
    )
    write_corpus(args.pos, result.positives)
    write_corpus(args.neg, result.negatives)
    report = result.report.to_dict()
    report["corpus_records_skipped"] = loaded.skipped
    report_text = json.dumps(report, indent=2)
    if args.report:
        Path(args.report).write_text(report_text + "\n", encoding="utf-8")
    print(report_text, file=stdout)
    return EXIT_OK


def _load_pr_ref(ref: str, cfg: AppConfig, client_factory=None) -> PullRequest:
    if "#" in ref and not Path(ref).exists():
        repo, _, number = ref.partition("#")
        if not repo or not number.isdigit():
            raise ConfigError(f"bad PR reference {ref!r}, expected owner/name#number")
        factory = client_factory or (lambda: ForgeClient(cache_dir=cfg.cache_dir))
        return factory().fetch_pr_detail(repo, int(number))
    try:
        lines = [l for l in Path(ref).read_text(encoding="utf-8", errors="replace").splitlines() if l.strip()]
    except OSError as exc:
        raise ConfigError(f"cannot read PR record: {exc}") from exc
    if not lines:
        raise ConfigError(f"{ref} holds no record")
    return parse_corpus_record(lines[0])


def cmd_analyze(args, stdout, client_factory=None) -> int:
    try:
        cfg = AppConfig.load(args)
        backends = _build_backends(cfg)
        pr = _load_pr_ref(args.pr_ref, cfg, client_factory)
    except (ConfigError, PatchApplyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ForgeAuthError as exc:
        print(f"authentication failed: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ForgeError, TransportFailure) as exc:
        print(f"forge error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    rec = run_pipeline(pr, cfg.pipeline_config(), backends, clock=_deterministic_clock())
    if rec.error_kind == "transport":
        print("backend unreachable during analysis", file=sys.stderr)
        return EXIT_BACKEND
    doc = segment_readme(pr.readme_before)
    print(render_recommendation(rec, doc), end="", file=stdout)
    if args.json:
        print(rec.to_json(), file=stdout)
    return EXIT_OK


def _evaluate_entry(pr, truth, cfg, backends):
    doc = segment_readme(pr.readme_before)
    rec = run_pipeline(pr, cfg.pipeline_config(), backends, clock=_deterministic_clock())
    if rec.error_kind == "transport":
        raise GatewayTransportError(f"backend unreachable for {pr.repo}#{pr.number}")
    predicted_positive = rec.decision == "update"
    return RunResult(
        pr_key=pr.key,
        predicted_positive=predicted_positive,
        predicted_indices=rec.ranked_indices if predicted_positive else (),
        truth_positive=truth.is_positive,
        truth_indices=truth.updated_indices,
        tree=build_hierarchy(doc),
    )


def _random_entry(pr, truth, rng, prevalence, picks=5):
    doc = segment_readme(pr.readme_before)
    flagged = rng.random() < prevalence
    predicted = ()
    if flagged and doc.section_count:
        universe = range(1, doc.section_count + 1)
        predicted = tuple(rng.sample(universe, min(picks, doc.section_count)))
    return RunResult(
        pr_key=pr.key,
        predicted_positive=flagged,
        predicted_indices=predicted,
        truth_positive=truth.is_positive,
        truth_indices=truth.updated_indices,
        tree=build_hierarchy(doc),
    )


def cmd_evaluate(args, stdout) -> int:
    try:
        cfg = AppConfig.load(args)
        backends = _build_backends(cfg) if args.policy == "pipeline" else None
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    entries = []
    skipped_apply = 0
    for path, expect_positive in ((args.pos, True), (args.neg, False)):
        try:
            lines = Path(path).read_text(encoding="utf-8", errors="replace").splitlines()
        except OSError as exc:
            print(f"cannot read dataset: {exc}", file=sys.stderr)
            return EXIT_INPUT
        for pr in load_corpus(lines).records:
            try:
                truth = ground_truth_for(pr)
            except PatchApplyError:
                skipped_apply += 1
                continue
            entries.append((pr, truth))

    try:
        if args.policy == "random":
            rng = random.Random(cfg.seed)
            results = [_random_entry(pr, truth, rng, args.prevalence) for pr, truth in entries]
        else:
            with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
                results = list(
                    pool.map(lambda e: _evaluate_entry(e[0], e[1], cfg, backends), entries)
                )
    except GatewayTransportError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND

    if not results:
        print("no entries to evaluate", file=sys.stderr)
        return EXIT_INPUT
    report = compute_metrics(results)
    print(render_table(report, model=args.policy, version=cfg.mode), end="", file=stdout)
    print(json.dumps(report.to_dict(), indent=2), file=stdout)
    if skipped_apply:
        print(f"entries skipped (README patch failed to apply): {skipped_apply}", file=stdout)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for r in results:
                fh.write(
                    json.dumps(
                        {
                            "repo": r.pr_key[0],
                            "number": r.pr_key[1],
                            "predicted_positive": r.predicted_positive,
                            "predicted_indices": list(r.predicted_indices),
                            "truth_positive": r.truth_positive,
                            "truth_indices": sorted(r.truth_indices),
                        }
                    )
                    + "\n"
                )
    return EXIT_OK


def cmd_baseline(args, stdout) -> int:
    try:
        cfg = AppConfig.load(args)
        lines = Path(args.pos).read_text(encoding="utf-8", errors="replace").splitlines()
        neg_lines = Path(args.neg).read_text(encoding="utf-8", errors="replace").splitlines()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"cannot read dataset: {exc}", file=sys.stderr)
        return EXIT_INPUT
    stats = []
    for source, positive in ((lines, True), (neg_lines, False)):
        for pr in load_corpus(source).records:
            doc = segment_readme(pr.readme_before)
            size = 0
            if positive and pr.readme_patch is not None:
                try:
                    size = len(ground_truth_for(pr).updated_indices)
                except PatchApplyError:
                    continue
            if doc.section_count:
                stats.append(EntryStats(section_count=doc.section_count, truth_size=size))
    if not stats:
        print("no usable entries", file=sys.stderr)
        return EXIT_INPUT
    report = random_baseline(
        stats, prevalence=args.prevalence, picks=5, trials=args.trials, seed=cfg.seed
    )
    print(render_table(report, model="random-guesser", version="--"), end="", file=stdout)
    print(json.dumps(report.to_dict(), indent=2), file=stdout)
    return EXIT_OK


# --- argument parsing -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="docdrift",
        description="Recommend paragraph-level README updates for pull requests.",
    )
    parser.add_argument("--config", help="JSON config file (unknown keys rejected)")
    sub = parser.add_subparsers(dest="command", required=True)

    common_backend = argparse.ArgumentParser(add_help=False)
    common_backend.add_argument("--mode", choices=["static", "agentic"], default=None)
    common_backend.add_argument("--k", type=int, default=None, help="retrieval window size")
    common_backend.add_argument("--p", type=int, default=None, help="max loop iterations")
    common_backend.add_argument("--replay", default=None, help="scripted replay file (offline)")
    common_backend.add_argument("--backend-url", dest="backend_url", default=None)
    common_backend.add_argument("--model", default=None)
    common_backend.add_argument("--embed-url", dest="embed_url", default=None)
    common_backend.add_argument("--embed-model", dest="embed_model", default=None)
    common_backend.add_argument("--cache", dest="cache_dir", default=None)
    common_backend.add_argument("--seed", type=int, default=None)

    p_ingest = sub.add_parser("ingest", parents=[common_backend], help="fetch a repo's PRs into a corpus file")
    p_ingest.add_argument("repo", help="owner/name")
    p_ingest.add_argument("--out", required=True)
    p_ingest.add_argument("--state", choices=["merged", "closed", "all"], default="merged")
    p_ingest.add_argument("--base-url", dest="base_url", default=None)

    p_build = sub.add_parser("build-dataset", parents=[common_backend], help="apply corpus filters")
    p_build.add_argument("--in", dest="input", required=True)
    p_build.add_argument("--pos", required=True)
    p_build.add_argument("--neg", required=True)
    p_build.add_argument("--report", default=None)
    p_build.add_argument("--thresholds", default=None, help="P,F,C upper bounds (default 11,145,23)")
    p_build.add_argument("--negative-ratio", type=float, default=1.0)
    p_build.add_argument("--strict-chronology", action="store_true")

    p_analyze = sub.add_parser("analyze", parents=[common_backend], help="analyse one PR")
    p_analyze.add_argument("pr_ref", help="owner/name#number or a corpus record file")
    p_analyze.add_argument("--json", action="store_true", help="also dump the structured result")

    p_eval = sub.add_parser("evaluate", parents=[common_backend], help="run batch evaluation")
    p_eval.add_argument("--pos", required=True)
    p_eval.add_argument("--neg", required=True)
    p_eval.add_argument("--workers", type=int, default=4)
    p_eval.add_argument("--out", default=None, help="per-entry results JSONL for audit")
    p_eval.add_argument("--policy", choices=["pipeline", "random"], default="pipeline")
    p_eval.add_argument("--prevalence", type=float, default=0.01, help="random policy flag rate")

    p_base = sub.add_parser("baseline", parents=[common_backend], help="simulate the weighted random guesser")
    p_base.add_argument("--pos", required=True)
    p_base.add_argument("--neg", required=True)
    p_base.add_argument("--trials", type=int, default=10_000)
    p_base.add_argument("--prevalence", type=float, default=0.01)

    return parser


def run_cli(argv=None, client_factory=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "ingest":
        return cmd_ingest(args, stdout, client_factory)
    if args.command == "build-dataset":
        return cmd_build_dataset(args, stdout)
    if args.command == "analyze":
        return cmd_analyze(args, stdout, client_factory)
    if args.command == "evaluate":
        return cmd_evaluate(args, stdout)
    if args.command == "baseline":
        return cmd_baseline(args, stdout)
    parser.error(f"unknown command {args.command}")
    return EXIT_INPUT


def main(argv=None) -> None:
    sys.exit(run_cli(argv))


if __name__ == "__main__":
    main()
