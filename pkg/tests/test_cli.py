"""CLI contract tests: exit codes, determinism, replay-driven end-to-end runs."""

from __future__ import annotations

import io
import json
import random
from datetime import datetime, timezone

import pytest

from docdrift.cli import EXIT_BACKEND, EXIT_INPUT, EXIT_OK, run_cli
from docdrift.forge_client import ForgeAuthError
from docdrift.llm_gateway import LlmGateway, RecordingBackend, SequenceBackend
from docdrift.metrics import EntryStats, random_baseline
from docdrift.pipeline import Backends, PipelineConfig, run_pipeline
from docdrift.pr_corpus import Commit, FilePatch, PullRequest, serialize_record
from docdrift.retrieval import HashedBagOfWordsBackend

UTC = timezone.utc
T0 = datetime(2024, 6, 1, 12, 0, tzinfo=UTC)


def fenced(obj) -> str:
    return "```json\n" + json.dumps(obj) + "\n```"


def run(argv, client_factory=None):
    out = io.StringIO()
    code = run_cli(argv, client_factory=client_factory, stdout=out)
    return code, out.getvalue()


def readme_with_sections(i: int, paragraphs: int = 11) -> str:
    parts = [f"# Project {i}"]
    for j in range(paragraphs):
        parts.append(f"paragraph {j} of project {i} with body text")
    return "\n\n".join(parts) + "\n"


def make_pr(i: int, positive: bool, paragraphs: int = 11) -> PullRequest:
    readme = readme_with_sections(i, paragraphs)
    patch = None
    if positive:
        target = readme.split("\n")[2]  # first paragraph line (section 2)
        patch = f"@@ -3,1 +3,1 @@\n-{target}\n+{target} (edited)\n"
    return PullRequest(
        repo="acme/demo",
        number=i,
        title=f"Change number {i}",
        description=f"Adjusts behaviour {i}.",
        commits=(
            Commit("a" * 40, f"code change {i}", T0),
            Commit("b" * 40, f"note the behaviour in readme {i}", T0.replace(hour=13)),
        ),
        files=(
            FilePatch(f"src/mod_{i}.py", "modified", f"@@ -1 +1 @@\n-x\n+y{i}\n"),
            FilePatch(f"src/util_{i}.py", "modified", f"@@ -1 +1 @@\n-u\n+v{i}\n"),
        ),
        readme_before=readme,
        readme_patch=patch,
        created_at=T0,
    )


def write_corpus_file(path, prs):
    path.write_text("".join(serialize_record(p) + "\n" for p in prs), encoding="utf-8")


def record_replay(prs_with_scripts, mode="static") -> dict:
    """Run the pipeline over scripted flows, recording prompt->reply pairs."""
    mapping = {}
    for pr, script in prs_with_scripts:
        recorder = RecordingBackend(SequenceBackend(script))
        backends = Backends(gateway=LlmGateway(recorder), embedder=HashedBagOfWordsBackend())
        run_pipeline(pr, PipelineConfig(mode=mode), backends, clock=lambda: 0.0)
        mapping.update(recorder.mapping)
    return mapping


SCRIPT_POSITIVE = [
    fenced({"update_required": True}),
    fenced({"sufficient": True}),
    fenced({"indices": [2], "justifications": {"2": "section 2 describes the old behaviour"}}),
    fenced({"approve": True}),
]
SCRIPT_NEGATIVE = [fenced({"update_required": False})]


# --- ingest -------------------------------------------------------------------------


class FakeIngestClient:
    def __init__(self, prs=(), error=None):
        self.prs = list(prs)
        self.error = error
        self.counters = {}

    def ingest_repo(self, repo, state):
        if self.error:
            raise self.error
        yield from self.prs


def test_ingest_empty_repo_writes_empty_file(tmp_path):
    out = tmp_path / "corpus.jsonl"
    code, text = run(
        ["ingest", "acme/demo", "--out", str(out)],
        client_factory=lambda: FakeIngestClient([]),
    )
    assert code == EXIT_OK
    assert out.read_text() == ""
    assert "wrote 0 records" in text


def test_ingest_record_count_matches_manifest(tmp_path):
    manifest = 5
    prs = [make_pr(i, positive=(i % 2 == 0)) for i in range(1, manifest + 1)]
    out = tmp_path / "corpus.jsonl"
    code, text = run(
        ["ingest", "acme/demo", "--out", str(out)],
        client_factory=lambda: FakeIngestClient(prs),
    )
    assert code == EXIT_OK
    assert len(out.read_text().splitlines()) == manifest


def test_ingest_auth_failure_exits_2(tmp_path, capsys):
    code, _ = run(
        ["ingest", "acme/demo", "--out", str(tmp_path / "c.jsonl")],
        client_factory=lambda: FakeIngestClient(error=ForgeAuthError("bad token")),
    )
    assert code == EXIT_INPUT
    assert "authentication failed" in capsys.readouterr().err


# --- build-dataset --------------------------------------------------------------------


def test_build_dataset_end_to_end_deterministic(tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    prs = [make_pr(i, positive=i <= 3) for i in range(1, 11)]
    write_corpus_file(corpus, prs)

    outputs = []
    for run_dir in ("one", "two"):
        d = tmp_path / run_dir
        d.mkdir()
        code, text = run(
            [
                "build-dataset",
                "--in",
                str(corpus),
                "--pos",
                str(d / "pos.jsonl"),
                "--neg",
                str(d / "neg.jsonl"),
                "--report",
                str(d / "report.json"),
                "--seed",
                "42",
            ]
        )
        assert code == EXIT_OK
        outputs.append(
            (
                (d / "pos.jsonl").read_bytes(),
                (d / "neg.jsonl").read_bytes(),
                (d / "report.json").read_bytes(),
            )
        )
    assert outputs[0] == outputs[1]  # byte-identical under a fixed seed
    report = json.loads((tmp_path / "one" / "report.json").read_text())
    assert report["retained_positive"] == 3


def test_build_dataset_cli_matches_naive_sequential_oracle(tmp_path):
    import test_dataset_builder as tdb
    from docdrift.pr_corpus import load_corpus

    rng = random.Random(11)
    corpus = []
    for i in range(1, 101):
        is_positive = rng.random() < 0.4
        title = rng.choice(
            ["Fix crash", "Add feature", "Update README", "Readme polish", "Refactor io"]
        )
        commits = tuple(
            tdb.commit(
                rng.choice(["code change", "more code", "touch readme section", "cleanup"]),
                rng.uniform(0, 240),
                i * 100 + j,
            )
            for j in range(rng.randint(1, 6))
        )
        corpus.append(
            tdb.make_pr(
                i,
                title=title,
                commits=commits,
                n_files=rng.randint(1, 8),
                readme_patch=tdb.README_PATCH if is_positive else None,
            )
        )
    corpus_file = tmp_path / "corpus.jsonl"
    write_corpus_file(corpus_file, corpus)
    pos_file = tmp_path / "pos.jsonl"
    code, _ = run(
        [
            "build-dataset",
            "--in",
            str(corpus_file),
            "--pos",
            str(pos_file),
            "--neg",
            str(tmp_path / "neg.jsonl"),
            "--thresholds",
            "2,6,4",
            "--seed",
            "5",
        ]
    )
    assert code == EXIT_OK
    from docdrift.dataset_builder import FilterThresholds

    retained = [p.key for p in load_corpus(pos_file.read_text().splitlines()).records]
    assert retained == tdb._naive_sequential_filter(corpus, FilterThresholds(2, 6, 4))


def test_build_dataset_unreadable_input_exits_2(tmp_path):
    code, _ = run(
        [
            "build-dataset",
            "--in",
            str(tmp_path / "missing.jsonl"),
            "--pos",
            str(tmp_path / "p.jsonl"),
            "--neg",
            str(tmp_path / "n.jsonl"),
        ]
    )
    assert code == EXIT_INPUT


def test_config_file_with_unknown_keys_rejected(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"surprise": 1}')
    corpus = tmp_path / "corpus.jsonl"
    write_corpus_file(corpus, [make_pr(1, True)])
    code, _ = run(
        [
            "--config",
            str(cfg),
            "build-dataset",
            "--in",
            str(corpus),
            "--pos",
            str(tmp_path / "p.jsonl"),
            "--neg",
            str(tmp_path / "n.jsonl"),
        ]
    )
    assert code == EXIT_INPUT


# --- analyze ---------------------------------------------------------------------------


def write_record(tmp_path, pr):
    path = tmp_path / f"pr_{pr.number}.json"
    path.write_text(serialize_record(pr) + "\n", encoding="utf-8")
    return path


def test_analyze_scripted_no_update(tmp_path):
    pr = make_pr(7, positive=False)
    record = write_record(tmp_path, pr)
    replay = tmp_path / "replay.json"
    replay.write_text(json.dumps(record_replay([(pr, SCRIPT_NEGATIVE)])))
    code, text = run(["analyze", str(record), "--replay", str(replay)])
    assert code == EXIT_OK
    assert "no update required" in text


def test_analyze_scripted_update_renders_indices_and_justification(tmp_path):
    pr = make_pr(8, positive=False)
    record = write_record(tmp_path, pr)
    replay = tmp_path / "replay.json"
    replay.write_text(json.dumps(record_replay([(pr, SCRIPT_POSITIVE)])))
    code, text = run(["analyze", str(record), "--replay", str(replay), "--json"])
    assert code == EXIT_OK
    assert "README update recommended" in text
    assert "section 2" in text
    assert "old behaviour" in text
    payload = json.loads(text.strip().splitlines()[-1])
    assert payload["decision"] == "update"
    assert payload["ranked_indices"] == [2]


def test_analyze_is_byte_stable_across_runs(tmp_path):
    pr = make_pr(9, positive=False)
    record = write_record(tmp_path, pr)
    replay = tmp_path / "replay.json"
    replay.write_text(json.dumps(record_replay([(pr, SCRIPT_POSITIVE)])))
    outputs = {run(["analyze", str(record), "--replay", str(replay)])[1] for _ in range(3)}
    assert len(outputs) == 1


def test_analyze_backend_unreachable_exits_3(tmp_path, capsys):
    pr = make_pr(10, positive=False)
    record = write_record(tmp_path, pr)
    replay = tmp_path / "replay.json"
    replay.write_text("{}")  # no scripted prompts at all
    code, _ = run(["analyze", str(record), "--replay", str(replay)])
    assert code == EXIT_BACKEND


def test_analyze_without_backend_exits_2(tmp_path):
    record = write_record(tmp_path, make_pr(11, positive=False))
    code, _ = run(["analyze", str(record)])
    assert code == EXIT_INPUT


# --- evaluate ------------------------------------------------------------------------------


def test_evaluate_all_scripted_correct_has_unit_rates(tmp_path):
    positives = [make_pr(i, positive=True, paragraphs=3) for i in range(1, 4)]
    negatives = [make_pr(i, positive=False, paragraphs=3) for i in range(10, 13)]
    pos_file = tmp_path / "pos.jsonl"
    neg_file = tmp_path / "neg.jsonl"
    write_corpus_file(pos_file, positives)
    write_corpus_file(neg_file, negatives)

    mapping = record_replay(
        [(pr, list(SCRIPT_POSITIVE)) for pr in positives]
        + [(pr, list(SCRIPT_NEGATIVE)) for pr in negatives]
    )
    replay = tmp_path / "replay.json"
    replay.write_text(json.dumps(mapping))

    audit = tmp_path / "entries.jsonl"
    code, text = run(
        [
            "evaluate",
            "--pos",
            str(pos_file),
            "--neg",
            str(neg_file),
            "--replay",
            str(replay),
            "--workers",
            "3",
            "--out",
            str(audit),
        ]
    )
    assert code == EXIT_OK
    payload = json.loads(text[text.index("{"):])
    assert payload["entry_recall"] == 1.0
    assert payload["entry_specificity"] == 1.0
    assert payload["user_facing_accuracy"] == 1.0
    assert payload["index_recall"] == 1.0
    assert payload["mrr"] == 1.0
    assert len(audit.read_text().splitlines()) == 6


def test_evaluate_empty_negative_set_reports_absent_specificity(tmp_path):
    positives = [make_pr(i, positive=True, paragraphs=3) for i in range(1, 3)]
    pos_file = tmp_path / "pos.jsonl"
    neg_file = tmp_path / "neg.jsonl"
    write_corpus_file(pos_file, positives)
    neg_file.write_text("")
    replay = tmp_path / "replay.json"
    replay.write_text(json.dumps(record_replay([(pr, list(SCRIPT_POSITIVE)) for pr in positives])))
    code, text = run(
        ["evaluate", "--pos", str(pos_file), "--neg", str(neg_file), "--replay", str(replay)]
    )
    assert code == EXIT_OK
    payload = json.loads(text[text.index("{"):])
    assert payload["entry_specificity"] is None
    assert payload["entry_recall"] == 1.0


def test_evaluate_random_policy_matches_simulation_oracle(tmp_path):
    rng = random.Random(1)
    positives = [make_pr(i, positive=True) for i in range(1, 201)]
    negatives = [make_pr(i, positive=False) for i in range(300, 500)]
    pos_file = tmp_path / "pos.jsonl"
    neg_file = tmp_path / "neg.jsonl"
    write_corpus_file(pos_file, positives)
    write_corpus_file(neg_file, negatives)

    code, text = run(
        [
            "evaluate",
            "--pos",
            str(pos_file),
            "--neg",
            str(neg_file),
            "--policy",
            "random",
            "--prevalence",
            "0.4",
            "--seed",
            "5",
        ]
    )
    assert code == EXIT_OK
    payload = json.loads(text[text.index("{"):])

    stats = [EntryStats(section_count=12, truth_size=1)] * 200 + [
        EntryStats(section_count=12, truth_size=0)
    ] * 200
    oracle = random_baseline(stats, prevalence=0.4, picks=5, trials=40_000, seed=99)
    assert payload["entry_recall"] == pytest.approx(oracle.entry_recall, abs=0.1)
    assert payload["entry_specificity"] == pytest.approx(oracle.entry_specificity, abs=0.1)
    assert payload["index_recall"] == pytest.approx(oracle.index_recall, abs=0.1)


def test_baseline_command_runs_on_datasets(tmp_path):
    positives = [make_pr(i, positive=True) for i in range(1, 30)]
    negatives = [make_pr(i, positive=False) for i in range(50, 80)]
    pos_file = tmp_path / "pos.jsonl"
    neg_file = tmp_path / "neg.jsonl"
    write_corpus_file(pos_file, positives)
    write_corpus_file(neg_file, negatives)
    code, text = run(
        ["baseline", "--pos", str(pos_file), "--neg", str(neg_file), "--trials", "5000", "--seed", "1"]
    )
    assert code == EXIT_OK
    assert text.startswith("Model | Version")
    payload = json.loads(text[text.index("{"):])
    assert 0.0 <= payload["entry_recall"] <= 0.05
