"""Dataset loading, category scoring, end-to-end runs, ablations, reports."""

import json

import numpy as np
import pytest

from rmr.core import build_library
from rmr.errors import (
    BadGoldIndexError,
    ConfigurationError,
    EmptyPartitionError,
    MissingFieldError,
    ParseError,
)
from rmr.gateway import Gateway, ModelEndpoint
from rmr.harness import (
    CATEGORY_ORDER,
    EvalRecord,
    apply_modality_filter,
    emit_report,
    load_dataset,
    load_triplets,
    render_report_table,
    run_eval,
    run_k_sweep,
    run_modality_ablation,
    score_direct_answer,
)
from rmr.interchange import load_embedding_store

from conftest import make_synthetic_eval

DATA = "tests/data"
SCIENCEQA = f"{DATA}/scienceqa_tiny.json"
HANDBUILT = f"{DATA}/handbuilt_eval.jsonl"
HANDBUILT_EMB = f"{DATA}/handbuilt_embeddings.jsonl"


class TestLoadDataset:
    def test_scienceqa_happy_path(self):
        records = load_dataset(SCIENCEQA, "scienceqa_json")
        assert len(records) == 4
        first = records[0]
        assert first.id == "1001"
        assert first.choices == ("a mineral", "a rock")
        assert first.gold_index == 1
        assert first.subject == "natural"
        assert first.grade == 2

    def test_split_filter(self):
        train = load_dataset(SCIENCEQA, "scienceqa_json", split="train")
        test = load_dataset(SCIENCEQA, "scienceqa_json", split="test")
        assert [r.id for r in train] == ["1001", "1002"]
        assert [r.id for r in test] == ["1003", "1004"]

    def test_image_with_empty_hint_is_img_not_txt(self):
        records = {r.id: r for r in load_dataset(SCIENCEQA, "scienceqa_json")}
        categories = records["1001"].categories
        assert "IMG" in categories
        assert "TXT" not in categories
        assert "NO" not in categories

    def test_image_ref_carries_question_directory(self):
        records = {r.id: r for r in load_dataset(SCIENCEQA, "scienceqa_json")}
        assert records["1001"].image_ref == "1001/image.png"
        assert records["1002"].image_ref is None

    def test_generic_jsonl(self):
        records = load_dataset(HANDBUILT, "generic_jsonl")
        assert len(records) == 8
        assert records[0].subject == "natural"
        assert records[3].categories == ("SOC", "NO", "G7-12")

    def test_bad_gold_index_names_record(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(
            '{"id": "oops", "question": "q?", "choices": ["a", "b", "c", "d"], '
            '"gold_index": 5}\n'
        )
        with pytest.raises(BadGoldIndexError, match="oops"):
            load_dataset(path, "generic_jsonl")

    def test_missing_field(self, tmp_path):
        path = tmp_path / "missing.jsonl"
        path.write_text('{"id": "x", "choices": ["a", "b"], "gold_index": 0}\n')
        with pytest.raises(MissingFieldError, match="question"):
            load_dataset(path, "generic_jsonl")

    def test_parse_error_names_line(self, tmp_path):
        path = tmp_path / "broken.jsonl"
        path.write_text(
            '{"id": "x", "question": "q?", "choices": ["a", "b"], "gold_index": 0}\n'
            "not json at all\n"
        )
        with pytest.raises(ParseError, match=":2"):
            load_dataset(path, "generic_jsonl")

    def test_too_few_choices(self, tmp_path):
        path = tmp_path / "one.jsonl"
        path.write_text('{"id": "x", "question": "q?", "choices": ["a"], "gold_index": 0}\n')
        with pytest.raises(ParseError):
            load_dataset(path, "generic_jsonl")

    def test_unknown_format(self):
        with pytest.raises(ConfigurationError):
            load_dataset(SCIENCEQA, "parquet")


class TestLoadTriplets:
    def test_scienceqa_triplets(self):
        triplets = {t.id: t for t in load_triplets(SCIENCEQA, "scienceqa_json")}
        marble = triplets["1001"]
        assert marble.answer == "(B) a rock"
        assert marble.rationale.startswith("Marble is made of the mineral calcite")
        assert marble.metadata["subject"] == "natural science"

    def test_rationale_falls_back_to_lecture(self):
        triplets = {t.id: t for t in load_triplets(SCIENCEQA, "scienceqa_json")}
        assert triplets["1003"].rationale.startswith("Guide words appear")

    def test_generic_triplets_render_answers(self):
        triplets = load_triplets(HANDBUILT, "generic_jsonl")
        assert triplets[0].answer == "(A) basalt"
        assert triplets[7].answer == "(D) the US Constitution"


class TestCategories:
    def test_partition_soundness(self):
        records = load_dataset(HANDBUILT, "generic_jsonl")
        for record in records:
            categories = set(record.categories)
            # TXT/IMG/NO cover every record; IMG and NO never co-occur
            assert categories & {"TXT", "IMG", "NO"}
            assert not ({"IMG", "NO"} <= categories)

    def test_txt_and_img_can_cooccur(self):
        record = EvalRecord(
            id="x", question="q?", choices=("a", "b"), gold_index=0,
            hint="some hint", image_ref="x/img.png",
        )
        assert {"TXT", "IMG"} <= set(record.categories)

    def test_grade_bands(self):
        low = EvalRecord(id="a", question="q?", choices=("a", "b"), gold_index=0, grade=6)
        high = EvalRecord(id="b", question="q?", choices=("a", "b"), gold_index=0, grade=7)
        none = EvalRecord(id="c", question="q?", choices=("a", "b"), gold_index=0)
        assert "G1-6" in low.categories
        assert "G7-12" in high.categories
        assert not {"G1-6", "G7-12"} & set(none.categories)


class TestRunEval:
    def test_echo_top1_on_duplicate_queries_is_perfect(self, rng):
        records, embeddings, library = make_synthetic_eval(rng, 12, 16)
        report = run_eval(
            records, library, ModelEndpoint("mock:echo-top1"), k=3,
            embeddings=embeddings,
        )
        assert report.accuracies["AVG"] == 100.0

    def test_fixed_a_matches_hand_counts(self):
        records = load_dataset(HANDBUILT, "generic_jsonl")
        library = _handbuilt_library()
        report = run_eval(records, library, ModelEndpoint("mock:fixed:A"), k=0)
        # gold == A on r1, r3, r6, r7; hand-tallied per category
        expected = {
            "NAT": 2 / 3 * 100,   # r1 yes, r2 no, r7 yes
            "SOC": 1 / 3 * 100,   # r3 yes, r4 no, r8 no
            "LAN": 1 / 2 * 100,   # r5 no, r6 yes
            "TXT": 3 / 4 * 100,   # r1, r3, r7 yes; r5 no
            "IMG": 2 / 3 * 100,   # r1, r7 yes; r2 no
            "NO": 1 / 3 * 100,    # r6 yes; r4, r8 no
            "G1-6": 3 / 4 * 100,  # r1, r3, r7 yes; r5 no
            "G7-12": 1 / 4 * 100, # r6 yes; r2, r4, r8 no
            "AVG": 4 / 8 * 100,
        }
        assert dict(report.accuracies) == expected

    def test_k0_never_invokes_retriever(self, tmp_path, rng):
        records, embeddings, library = make_synthetic_eval(rng, 6, 8)
        trace_path = tmp_path / "trace.jsonl"
        report = run_eval(
            records, library, ModelEndpoint("mock:fixed:A"), k=0,
            embeddings=embeddings, trace_path=trace_path,
        )
        assert report.manifest["retriever_invocations"] == 0
        rows = [json.loads(line) for line in trace_path.read_text().splitlines()]
        assert all(row["retriever_invoked"] is False for row in rows)
        assert all(row["retrieved"] == [] for row in rows)

    def test_trace_rows_sorted_and_complete(self, tmp_path, rng):
        records, embeddings, library = make_synthetic_eval(rng, 6, 8)
        trace_path = tmp_path / "trace.jsonl"
        run_eval(
            records, library, ModelEndpoint("mock:echo-top1"), k=2,
            embeddings=embeddings, trace_path=trace_path,
        )
        rows = [json.loads(line) for line in trace_path.read_text().splitlines()]
        ids = [row["record_id"] for row in rows]
        assert ids == sorted(ids)
        for row in rows:
            assert "prompt" in row
            assert "raw_completion" in row
            assert len(row["retrieved"]) == 2
            assert row["extraction_method"] in ("letter_pattern", "choice_text_match", "none")

    def test_deterministic_across_runs(self, tmp_path, rng):
        records, embeddings, library = make_synthetic_eval(rng, 8, 8)
        outputs = []
        for name in ("one", "two"):
            trace = tmp_path / f"{name}.jsonl"
            report = run_eval(
                records, library, ModelEndpoint("mock:echo-top1"), k=3,
                embeddings=embeddings, trace_path=trace, max_in_flight=4,
            )
            report_path = tmp_path / f"{name}.json"
            emit_report(report, "json", report_path)
            outputs.append((trace.read_bytes(), report_path.read_bytes()))
        assert outputs[0] == outputs[1]

    def test_gateway_failures_scored_incorrect_not_fatal(self, tmp_path, rng):
        records, embeddings, library = make_synthetic_eval(rng, 4, 8)
        gateway = Gateway(
            ModelEndpoint("http://127.0.0.1:1/dead", max_retries=0, timeout=1),
            backoff_base=0.0, sleep=lambda _t: None,
        )
        trace_path = tmp_path / "trace.jsonl"
        report = run_eval(
            records, library, gateway, k=1, embeddings=embeddings,
            trace_path=trace_path,
        )
        assert report.accuracies["AVG"] == 0.0
        rows = [json.loads(line) for line in trace_path.read_text().splitlines()]
        assert all(row["error"] for row in rows)

    def test_missing_embedding_flagged_per_record(self, tmp_path, rng):
        records, embeddings, library = make_synthetic_eval(rng, 4, 8)
        del embeddings[records[0].id]
        trace_path = tmp_path / "trace.jsonl"
        report = run_eval(
            records, library, ModelEndpoint("mock:echo-top1"), k=1,
            embeddings=embeddings, trace_path=trace_path,
        )
        rows = {r["record_id"]: r for r in map(json.loads, trace_path.read_text().splitlines())}
        assert rows[records[0].id]["error"]
        assert rows[records[0].id]["correct"] is False
        assert report.accuracies["AVG"] == 3 / 4 * 100

    def test_exclusion_policy_blocks_exact_duplicates(self, tmp_path):
        # library built from the same file as the eval set, so every query
        # has an exact-duplicate twin that must never be retrieved
        records = load_dataset(HANDBUILT, "generic_jsonl")
        library = _handbuilt_library()
        store = load_embedding_store(HANDBUILT_EMB)
        trace_path = tmp_path / "trace.jsonl"
        run_eval(
            records, library, ModelEndpoint("mock:echo-top1"), k=3,
            embeddings=store, exclusion_policy="exclude_exact_duplicate",
            trace_path=trace_path,
        )
        question_by_id = {item.triplet.id: item.triplet.question for item in library}
        query_question = {record.id: record.question for record in records}
        for row in map(json.loads, trace_path.read_text().splitlines()):
            for hit in row["retrieved"]:
                assert question_by_id[hit["id"]] != query_question[row["record_id"]]

    def test_without_exclusion_the_twin_wins(self):
        records = load_dataset(HANDBUILT, "generic_jsonl")
        library = _handbuilt_library()
        store = load_embedding_store(HANDBUILT_EMB)
        report = run_eval(
            records, library, ModelEndpoint("mock:echo-top1"), k=1,
            embeddings=store,
        )
        # each query embedding equals its twin's, so echo-top1 is perfect
        assert report.accuracies["AVG"] == 100.0

    def test_avg_consistency_invariant(self, rng):
        records, embeddings, library = make_synthetic_eval(rng, 9, 8)
        report = run_eval(
            records, library, ModelEndpoint("mock:fixed:B"), k=1,
            embeddings=embeddings,
        )
        total = report.counts["AVG"]
        correct = report.correct["AVG"]
        assert report.accuracies["AVG"] == pytest.approx(correct / total * 100, abs=1e-9)
        # every synthetic record carries a subject, so AVG is the
        # count-weighted mean of the three subject cells
        weighted = sum(
            report.accuracies[c] * report.counts[c] for c in ("NAT", "SOC", "LAN")
        ) / sum(report.counts[c] for c in ("NAT", "SOC", "LAN"))
        assert report.accuracies["AVG"] == pytest.approx(weighted, abs=1e-9)

    def test_k_requires_embeddings(self, rng):
        records, _, library = make_synthetic_eval(rng, 4, 8)
        with pytest.raises(ConfigurationError):
            run_eval(records, library, ModelEndpoint("mock:fixed:A"), k=2)


def _handbuilt_library():
    triplets = load_triplets(HANDBUILT, "generic_jsonl")
    store = load_embedding_store(HANDBUILT_EMB)
    return build_library(
        [(t, store.get(t.id)) for t in triplets], encoder_tag=store.encoder_tag
    )


class TestModalityFilter:
    def test_partition_counts(self):
        records = load_dataset(HANDBUILT, "generic_jsonl")
        assert len(apply_modality_filter(records, "t_and_i")) == 3
        assert len(apply_modality_filter(records, "t")) == 5
        assert len(apply_modality_filter(records, "all")) == 8

    def test_empty_partition_raises(self):
        text_only = [
            EvalRecord(id="a", question="q?", choices=("x", "y"), gold_index=0)
        ]
        with pytest.raises(EmptyPartitionError):
            apply_modality_filter(text_only, "t_and_i")

    def test_ablation_reports(self, rng):
        records = load_dataset(HANDBUILT, "generic_jsonl")
        library = _handbuilt_library()
        store = load_embedding_store(HANDBUILT_EMB)
        reports = run_modality_ablation(
            records, library, ModelEndpoint("mock:fixed:A"), k=1, embeddings=store
        )
        assert [r.label for r in reports] == ["All", "T&I", "T"]
        assert reports[0].counts["AVG"] == 8
        assert reports[1].counts["AVG"] == 3
        assert reports[2].counts["AVG"] == 5

    def test_ablation_on_all_text_dataset_raises(self, rng):
        records, embeddings, library = make_synthetic_eval(rng, 4, 8)
        text_only = [r for r in records if not r.image_ref]
        with pytest.raises(EmptyPartitionError):
            run_modality_ablation(
                text_only, library, ModelEndpoint("mock:fixed:A"),
                k=0, embeddings=embeddings,
            )


class TestKSweep:
    def test_one_report_per_k_same_records(self, rng):
        records, embeddings, library = make_synthetic_eval(rng, 6, 8)
        reports = run_k_sweep(
            records, library, ModelEndpoint("mock:echo-top1"), [1, 2, 3],
            embeddings=embeddings,
        )
        assert [r.label for r in reports] == ["k=1", "k=2", "k=3"]
        assert all(r.counts["AVG"] == 6 for r in reports)

    def test_duplicate_k_gives_identical_rows(self, rng):
        records, embeddings, library = make_synthetic_eval(rng, 6, 8)
        reports = run_k_sweep(
            records, library, ModelEndpoint("mock:echo-top1"), [2, 2],
            embeddings=embeddings,
        )
        assert reports[0].accuracies == reports[1].accuracies

    def test_k0_with_echo_scores_zero(self, rng):
        records, embeddings, library = make_synthetic_eval(rng, 6, 8)
        reports = run_k_sweep(
            records, library, ModelEndpoint("mock:echo-top1"), [0],
            embeddings=embeddings,
        )
        assert reports[0].accuracies["AVG"] == 0.0

    def test_empty_k_values_rejected(self, rng):
        records, embeddings, library = make_synthetic_eval(rng, 4, 8)
        with pytest.raises(ConfigurationError):
            run_k_sweep(records, library, ModelEndpoint("mock:fixed:A"), [],
                        embeddings=embeddings)


class TestReports:
    def _report(self, rng):
        records, embeddings, library = make_synthetic_eval(rng, 8, 8)
        return run_eval(
            records, library, ModelEndpoint("mock:echo-top1"), k=2,
            embeddings=embeddings,
        )

    def test_csv_shape_single(self, rng, tmp_path):
        path = tmp_path / "report.csv"
        emit_report(self._report(rng), "csv", path)
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        assert lines[0] == "run," + ",".join(CATEGORY_ORDER)

    def test_csv_shape_sweep(self, rng, tmp_path):
        records, embeddings, library = make_synthetic_eval(rng, 6, 8)
        reports = run_k_sweep(
            records, library, ModelEndpoint("mock:fixed:A"), [1, 2, 3, 4, 5],
            embeddings=embeddings,
        )
        path = tmp_path / "sweep.csv"
        emit_report(reports, "csv", path)
        lines = path.read_text().splitlines()
        assert len(lines) == 6
        assert [line.split(",")[0] for line in lines[1:]] == [
            "k=1", "k=2", "k=3", "k=4", "k=5",
        ]

    def test_markdown_cells_equal_csv_cells(self, rng, tmp_path):
        report = self._report(rng)
        emit_report(report, "csv", tmp_path / "r.csv")
        emit_report(report, "markdown", tmp_path / "r.md")
        csv_cells = (tmp_path / "r.csv").read_text().splitlines()[1].split(",")[1:]
        md_row = (tmp_path / "r.md").read_text().splitlines()[2]
        md_cells = [cell.strip() for cell in md_row.strip("|").split("|")][1:]
        assert md_cells == csv_cells

    def test_json_includes_manifest(self, rng, tmp_path):
        path = tmp_path / "report.json"
        emit_report(self._report(rng), "json", path)
        payload = json.loads(path.read_text())
        manifest = payload["reports"][0]["manifest"]
        assert manifest["endpoint"] == "mock:echo-top1"
        assert "library_sha256" in manifest
        assert manifest["k"] == 2

    def test_reemission_is_byte_identical(self, rng, tmp_path):
        report = self._report(rng)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        emit_report(report, "json", a)
        emit_report(report, "json", b)
        assert a.read_bytes() == b.read_bytes()

    def test_empty_category_rendered_as_dash(self, tmp_path):
        records = [
            EvalRecord(id="a", question="q?", choices=("x", "y"), gold_index=0,
                       subject="other"),
            EvalRecord(id="b", question="p?", choices=("x", "y"), gold_index=1,
                       subject="other"),
        ]
        gen = np.random.default_rng(3)
        from conftest import make_random_library

        library, _ = make_random_library(gen, 2, 4)
        report = run_eval(records, library, ModelEndpoint("mock:fixed:A"), k=0)
        text = render_report_table([report], "csv")
        row = text.splitlines()[1].split(",")
        assert row[1] == "-"   # NAT has no records
        assert row[-1] == "50.00"

    def test_unknown_format_rejected(self, rng):
        with pytest.raises(ConfigurationError):
            render_report_table([self._report(rng)], "xml")


def test_direct_answer_scoring():
    assert score_direct_answer("  The Ocean ", ["the ocean", "sea"])
    assert not score_direct_answer("the deep ocean", ["the ocean"])
    assert score_direct_answer("42", ["42", "forty-two"])
