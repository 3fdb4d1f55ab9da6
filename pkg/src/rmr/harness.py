"""Dataset ingestion, end-to-end evaluation, category scoring, and ablations.

A run walks every record through the whole pipeline: fuse the query
embedding, retrieve top-k, assemble the context, render the prompt, complete
against the endpoint, extract the chosen option, score. Accuracies are
aggregated per question class (subject, context modality, grade band) in the
fixed column order NAT, SOC, LAN, TXT, IMG, NO, G1-6, G7-12, AVG. AVG is
always correct_total / record_total, never a mean of the category cells.

Every run writes a per-record JSONL trace (prompt, retrieved ids and
similarities, raw completion, extraction) so individual predictions can be
inspected without a UI.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .context import PromptEnvelope, assemble_context, empty_context, render_prompt
from .core import (
    KnowledgeLibrary,
    ModalityInput,
    QraTriplet,
    fuse_embeddings,
    render_answer,
)
from .errors import (
    BadGoldIndexError,
    ConfigurationError,
    DataError,
    EmptyInputError,
    EmptyPartitionError,
    GatewayError,
    IoFailureError,
    MissingFieldError,
    ParseError,
)
from .gateway import Completion, Gateway, ModelEndpoint, extract_answer
from .index import library_fingerprint, top_k_retrieve
from .interchange import EmbeddingStore

logger = logging.getLogger(__name__)

CATEGORY_ORDER = ("NAT", "SOC", "LAN", "TXT", "IMG", "NO", "G1-6", "G7-12", "AVG")

_SUBJECT_CATEGORY = {"natural": "NAT", "social": "SOC", "language": "LAN"}

_SUBJECT_ALIASES = {
    "natural science": "natural",
    "natural": "natural",
    "social science": "social",
    "social": "social",
    "language science": "language",
    "language": "language",
}

EXCLUSION_POLICIES = ("none", "exclude_exact_duplicate")

MODALITY_FILTERS = ("all", "t_and_i", "t")


@dataclass(frozen=True)
class EvalRecord:
    """One benchmark question with its gold answer and category tags."""

    id: str
    question: str
    choices: tuple[str, ...]
    gold_index: int
    hint: str = ""
    image_ref: str | None = None
    subject: str = "other"
    grade: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple(self.choices))
        if len(self.choices) < 2:
            raise ValueError(f"record {self.id!r}: needs at least 2 choices")
        if not 0 <= self.gold_index < len(self.choices):
            raise ValueError(
                f"record {self.id!r}: gold_index {self.gold_index} out of range"
            )

    @property
    def categories(self) -> tuple[str, ...]:
        """Table-style category tags. TXT and IMG may both apply; NO means neither."""
        tags = []
        subject_tag = _SUBJECT_CATEGORY.get(self.subject)
        if subject_tag:
            tags.append(subject_tag)
        if self.hint:
            tags.append("TXT")
        if self.image_ref:
            tags.append("IMG")
        if not self.hint and not self.image_ref:
            tags.append("NO")
        if self.grade is not None:
            if 1 <= self.grade <= 6:
                tags.append("G1-6")
            elif 7 <= self.grade <= 12:
                tags.append("G7-12")
        return tuple(tags)


@dataclass(frozen=True)
class CategoryReport:
    """Per-category accuracies for one run, plus its manifest."""

    label: str
    k_used: int
    accuracies: Mapping[str, float | None]
    counts: Mapping[str, int]
    correct: Mapping[str, int]
    manifest: Mapping[str, object] = field(default_factory=dict)


def _normalize_subject(raw) -> str:
    if not raw:
        return "other"
    return _SUBJECT_ALIASES.get(str(raw).strip().lower(), "other")


def _parse_grade(raw) -> int | None:
    if raw is None or raw == "":
        return None
    text = str(raw).strip().lower()
    if text.startswith("grade"):
        text = text[len("grade") :]
    try:
        grade = int(text)
    except ValueError:
        return None
    return grade if 1 <= grade <= 12 else None


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoFailureError(f"cannot read dataset {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc


def _iter_jsonl(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoFailureError(f"cannot read dataset {path}: {exc}") from exc
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{line_no}: invalid JSON: {exc.msg}") from exc
        if not isinstance(obj, dict):
            raise ParseError(f"{path}:{line_no}: expected a JSON object")
        yield f"{path}:{line_no}", obj


def _require(obj: dict, key: str, where: str):
    if key not in obj or obj[key] is None:
        raise MissingFieldError(f"{where}: missing required field {key!r}")
    return obj[key]


def _scienceqa_rows(path, split: str | None):
    data = _load_json(path)
    if not isinstance(data, dict):
        raise ParseError(f"{path}: expected a JSON object keyed by question id")
    for qid, problem in data.items():
        if not isinstance(problem, dict):
            raise ParseError(f"{path}: record {qid!r} is not an object")
        if split is not None and problem.get("split") != split:
            continue
        yield str(qid), problem


def _validated_gold(where: str, record_id: str, gold, choices) -> int:
    try:
        gold_index = int(gold)
    except (TypeError, ValueError):
        raise BadGoldIndexError(
            f"{where}: record {record_id!r}: gold index {gold!r} is not an integer"
        ) from None
    if not 0 <= gold_index < len(choices):
        raise BadGoldIndexError(
            f"{where}: record {record_id!r}: gold index {gold_index} out of range "
            f"for {len(choices)} choices"
        )
    return gold_index


def load_dataset(path, format_tag: str, split: str | None = None) -> list[EvalRecord]:
    """Load evaluation records from a dataset file.

    ``scienceqa_json`` reads the benchmark's problems.json layout (one object
    keyed by question id); ``generic_jsonl`` reads one record object per line
    with fields id, question, choices, gold_index and optional hint,
    image_ref, subject, grade. In both cases a non-empty hint marks the TXT
    category, a present image the IMG category, and neither marks NO.
    """
    records: list[EvalRecord] = []
    if format_tag == "scienceqa_json":
        for qid, problem in _scienceqa_rows(path, split):
            where = str(path)
            question = _require(problem, "question", f"{where}: record {qid!r}")
            choices = _require(problem, "choices", f"{where}: record {qid!r}")
            if not isinstance(choices, list) or len(choices) < 2:
                raise ParseError(
                    f"{where}: record {qid!r}: needs a list of at least 2 choices"
                )
            gold_index = _validated_gold(
                where, qid, _require(problem, "answer", f"{where}: record {qid!r}"), choices
            )
            image = problem.get("image")
            records.append(
                EvalRecord(
                    id=qid,
                    question=str(question),
                    choices=tuple(str(c) for c in choices),
                    gold_index=gold_index,
                    hint=str(problem.get("hint") or ""),
                    image_ref=f"{qid}/{image}" if image else None,
                    subject=_normalize_subject(problem.get("subject")),
                    grade=_parse_grade(problem.get("grade")),
                )
            )
    elif format_tag == "generic_jsonl":
        for where, obj in _iter_jsonl(path):
            record_id = str(_require(obj, "id", where))
            question = str(_require(obj, "question", where))
            choices = _require(obj, "choices", where)
            if not isinstance(choices, list) or len(choices) < 2:
                raise ParseError(f"{where}: needs a list of at least 2 choices")
            gold_index = _validated_gold(
                where, record_id, _require(obj, "gold_index", where), choices
            )
            records.append(
                EvalRecord(
                    id=record_id,
                    question=question,
                    choices=tuple(str(c) for c in choices),
                    gold_index=gold_index,
                    hint=str(obj.get("hint") or ""),
                    image_ref=obj.get("image_ref") or None,
                    subject=_normalize_subject(obj.get("subject")),
                    grade=_parse_grade(obj.get("grade")),
                )
            )
    else:
        raise ConfigurationError(f"unknown dataset format {format_tag!r}")
    return records


def load_triplets(path, format_tag: str, split: str | None = None) -> list[QraTriplet]:
    """Load question-rationale-answer triplets for library construction.

    For ScienceQA rows the rationale is the solution text, falling back to
    the lecture when no solution exists; the answer is stored as the labeled
    full text of the correct choice. ``generic_jsonl`` rows may carry an
    explicit ``rationale`` field.
    """
    triplets: list[QraTriplet] = []
    if format_tag == "scienceqa_json":
        for qid, problem in _scienceqa_rows(path, split):
            where = f"{path}: record {qid!r}"
            question = str(_require(problem, "question", where))
            choices = _require(problem, "choices", where)
            if not isinstance(choices, list) or not choices:
                raise ParseError(f"{where}: needs a non-empty choice list")
            gold_index = _validated_gold(
                str(path), qid, _require(problem, "answer", where), choices
            )
            choices = tuple(str(c) for c in choices)
            rationale = str(problem.get("solution") or problem.get("lecture") or "")
            metadata = {
                key: str(problem[key])
                for key in ("subject", "topic", "grade")
                if problem.get(key)
            }
            triplets.append(
                QraTriplet(
                    id=qid,
                    question=question,
                    rationale=rationale,
                    answer=render_answer(gold_index, choices),
                    choices=choices,
                    metadata=metadata,
                )
            )
    elif format_tag == "generic_jsonl":
        for where, obj in _iter_jsonl(path):
            record_id = str(_require(obj, "id", where))
            question = str(_require(obj, "question", where))
            choices = _require(obj, "choices", where)
            if not isinstance(choices, list) or not choices:
                raise ParseError(f"{where}: needs a non-empty choice list")
            gold_index = _validated_gold(
                where, record_id, _require(obj, "gold_index", where), choices
            )
            choices = tuple(str(c) for c in choices)
            metadata = {
                key: str(obj[key]) for key in ("subject", "topic", "grade") if obj.get(key)
            }
            triplets.append(
                QraTriplet(
                    id=record_id,
                    question=question,
                    rationale=str(obj.get("rationale") or ""),
                    answer=render_answer(gold_index, choices),
                    choices=choices,
                    metadata=metadata,
                )
            )
    else:
        raise ConfigurationError(f"unknown dataset format {format_tag!r}")
    return triplets


def score_direct_answer(raw_text: str, answers: Sequence[str]) -> bool:
    """Direct-answer scoring: exact match after lowercasing and stripping."""
    prediction = raw_text.strip().lower()
    return any(prediction == answer.strip().lower() for answer in answers)


def apply_modality_filter(
    records: Sequence[EvalRecord], modality_filter: str | None
) -> list[EvalRecord]:
    """Restrict records by modality: all, text+image pairs, or text-only."""
    if modality_filter in (None, "all"):
        filtered = list(records)
    elif modality_filter == "t_and_i":
        filtered = [r for r in records if r.image_ref]
    elif modality_filter == "t":
        filtered = [r for r in records if not r.image_ref]
    else:
        raise ConfigurationError(f"unknown modality filter {modality_filter!r}")
    if not filtered:
        raise EmptyPartitionError(
            f"modality filter {modality_filter!r} leaves zero records"
        )
    return filtered


def _resolve_image(record: EvalRecord, image_root) -> str | None:
    if not record.image_ref:
        return None
    if image_root is None:
        return None
    path = Path(image_root) / record.image_ref
    if path.is_file():
        return str(path)
    logger.warning(
        "record %s: image asset %s not found; continuing without it",
        record.id,
        path,
    )
    return None


def _accuracy_table(
    records: Sequence[EvalRecord], correct_ids: set[str]
) -> tuple[dict, dict, dict]:
    counts = {cat: 0 for cat in CATEGORY_ORDER}
    correct = {cat: 0 for cat in CATEGORY_ORDER}
    for record in records:
        cats = record.categories + ("AVG",)
        for cat in cats:
            counts[cat] += 1
            if record.id in correct_ids:
                correct[cat] += 1
    accuracies: dict[str, float | None] = {}
    for cat in CATEGORY_ORDER:
        accuracies[cat] = (
            correct[cat] / counts[cat] * 100.0 if counts[cat] else None
        )
    return accuracies, counts, correct


def run_eval(
    records: Sequence[EvalRecord],
    library: KnowledgeLibrary,
    endpoint: ModelEndpoint | Gateway,
    k: int = 3,
    embeddings: EmbeddingStore | Mapping[str, ModalityInput] | None = None,
    modality_filter: str | None = None,
    exclusion_policy: str = "none",
    trace_path=None,
    image_root=None,
    context_budget: int | None = None,
    seed: int = 0,
    label: str | None = None,
    max_in_flight: int = 4,
    dataset_tag: str | None = None,
) -> CategoryReport:
    """Evaluate records end to end and aggregate per-category accuracy.

    ``k=0`` is the no-retrieval baseline: the retriever is never invoked and
    prompts carry no examples. Gateway failures are recorded per record and
    scored as incorrect; only configuration errors abort the run. Output is
    deterministic for deterministic endpoints regardless of completion order.
    """
    if k < 0:
        raise ConfigurationError(f"k must be >= 0, got {k}")
    if exclusion_policy not in EXCLUSION_POLICIES:
        raise ConfigurationError(f"unknown exclusion policy {exclusion_policy!r}")
    if k > 0 and embeddings is None:
        raise ConfigurationError("k > 0 requires query embeddings")
    if not records:
        raise EmptyInputError("no records to evaluate")
    store_encoder_tag = None
    if isinstance(embeddings, EmbeddingStore):
        store_encoder_tag = embeddings.encoder_tag
        if store_encoder_tag != library.encoder_tag:
            logger.warning(
                "query embeddings come from %r but the library was built with %r; "
                "similarities may be meaningless",
                store_encoder_tag,
                library.encoder_tag,
            )
        embeddings = embeddings.records
    records = apply_modality_filter(records, modality_filter)
    gateway = endpoint if isinstance(endpoint, Gateway) else Gateway(
        endpoint, max_in_flight=max_in_flight
    )

    duplicate_ids_by_question: dict[str, list[str]] = {}
    if exclusion_policy == "exclude_exact_duplicate":
        for item in library.items:
            duplicate_ids_by_question.setdefault(item.triplet.question, []).append(
                item.triplet.id
            )

    retriever_invocations = 0
    rows: dict[str, dict] = {}
    prompts: dict[str, tuple[str, str | None]] = {}
    for record in records:
        row: dict = {
            "record_id": record.id,
            "categories": list(record.categories),
            "gold_index": record.gold_index,
            "retriever_invoked": False,
            "retrieved": [],
            "error": None,
        }
        context = empty_context()
        try:
            if k > 0:
                modality_input = embeddings.get(record.id)
                if modality_input is None:
                    raise DataError(
                        f"record {record.id!r} has no embedding in the store"
                    )
                query_vec = fuse_embeddings(modality_input.normalized())
                exclude = duplicate_ids_by_question.get(record.question, []) if (
                    exclusion_policy == "exclude_exact_duplicate"
                ) else None
                retrieved = top_k_retrieve(
                    library, query_vec, k, exclude_ids=exclude, query_id=record.id
                )
                retriever_invocations += 1
                row["retriever_invoked"] = True
                row["retrieved"] = [
                    {"id": e.item_id, "similarity": e.similarity, "rank": e.rank}
                    for e in retrieved
                ]
                context = assemble_context(retrieved, library, budget=context_budget)
        except DataError as exc:
            logger.warning("record %s: %s", record.id, exc)
            row["error"] = str(exc)
            rows[record.id] = row
            continue
        envelope = PromptEnvelope(
            query_question=record.question,
            query_choices=record.choices,
            query_image_ref=record.image_ref,
            context=context,
        )
        prompt = render_prompt(envelope)
        row["prompt"] = prompt
        row["context_chars"] = len(context.rendered)
        row["context_tokens"] = context.token_estimate
        rows[record.id] = row
        prompts[record.id] = (prompt, _resolve_image(record, image_root))

    completions = gateway.complete_many(prompts)

    correct_ids: set[str] = set()
    by_id = {record.id: record for record in records}
    for record_id, outcome in completions.items():
        row = rows[record_id]
        record = by_id[record_id]
        if isinstance(outcome, GatewayError):
            row["error"] = f"{type(outcome).__name__}: {outcome}"
            row["correct"] = False
            continue
        assert isinstance(outcome, Completion)
        extraction = extract_answer(outcome.raw_text, record.choices)
        is_correct = extraction.choice_index == record.gold_index
        if is_correct:
            correct_ids.add(record_id)
        row.update(
            raw_completion=outcome.raw_text,
            attempts=outcome.attempts,
            predicted_index=extraction.choice_index,
            extraction_method=extraction.method,
            extraction_note=extraction.confidence_note,
            correct=is_correct,
        )
    for row in rows.values():
        row.setdefault("correct", False)

    accuracies, counts, correct = _accuracy_table(records, correct_ids)
    manifest = {
        "endpoint": gateway.endpoint.base_url,
        "model": gateway.endpoint.model_name,
        "temperature": gateway.endpoint.temperature,
        "library_sha256": library_fingerprint(library),
        "library_count": library.count,
        "library_encoder_tag": library.encoder_tag,
        "store_encoder_tag": store_encoder_tag,
        "k": k,
        "exclusion_policy": exclusion_policy,
        "modality_filter": modality_filter or "all",
        "seed": seed,
        "record_count": len(records),
        "retriever_invocations": retriever_invocations,
        "dataset": dataset_tag,
    }
    if trace_path is not None:
        _write_trace(trace_path, rows)
    return CategoryReport(
        label=label if label is not None else f"k={k}",
        k_used=k,
        accuracies=accuracies,
        counts=counts,
        correct=correct,
        manifest=manifest,
    )


def _write_trace(trace_path, rows: dict[str, dict]) -> None:
    # finalized in one pass, sorted by record id, so reruns are byte-identical
    try:
        with open(trace_path, "w", encoding="utf-8") as fh:
            for record_id in sorted(rows):
                fh.write(json.dumps(rows[record_id], sort_keys=True, ensure_ascii=False))
                fh.write("\n")
    except OSError as exc:
        raise IoFailureError(f"cannot write trace to {trace_path}: {exc}") from exc


def run_k_sweep(
    records: Sequence[EvalRecord],
    library: KnowledgeLibrary,
    endpoint: ModelEndpoint | Gateway,
    k_values: Sequence[int],
    embeddings: EmbeddingStore | Mapping[str, ModalityInput] | None = None,
    trace_dir=None,
    **eval_kwargs,
) -> list[CategoryReport]:
    """Run one evaluation per k over identical records; one report per k."""
    if not k_values:
        raise ConfigurationError("k_values must be non-empty")
    reports = []
    for k in k_values:
        trace_path = None
        if trace_dir is not None:
            trace_path = Path(trace_dir) / f"k{k}.jsonl"
        reports.append(
            run_eval(
                records,
                library,
                endpoint,
                k=k,
                embeddings=embeddings,
                trace_path=trace_path,
                label=f"k={k}",
                **eval_kwargs,
            )
        )
    return reports


def run_modality_ablation(
    records: Sequence[EvalRecord],
    library: KnowledgeLibrary,
    endpoint: ModelEndpoint | Gateway,
    k: int = 3,
    embeddings: EmbeddingStore | Mapping[str, ModalityInput] | None = None,
    trace_dir=None,
    **eval_kwargs,
) -> list[CategoryReport]:
    """Evaluate All / T&I / T partitions with the same pipeline settings."""
    reports = []
    for label, modality_filter in (("All", "all"), ("T&I", "t_and_i"), ("T", "t")):
        trace_path = None
        if trace_dir is not None:
            safe = label.replace("&", "and").lower()
            trace_path = Path(trace_dir) / f"modality-{safe}.jsonl"
        reports.append(
            run_eval(
                records,
                library,
                endpoint,
                k=k,
                embeddings=embeddings,
                modality_filter=modality_filter,
                trace_path=trace_path,
                label=label,
                **eval_kwargs,
            )
        )
    return reports


def _cell(value: float | None) -> str:
    return "-" if value is None else f"{value:.2f}"


def render_report_table(reports: Sequence[CategoryReport], fmt: str) -> str:
    """Render reports as csv, markdown, or json text (deterministic bytes)."""
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["run", *CATEGORY_ORDER])
        for report in reports:
            writer.writerow(
                [report.label, *(_cell(report.accuracies[c]) for c in CATEGORY_ORDER)]
            )
        return buffer.getvalue()
    if fmt == "markdown":
        lines = [
            "| run | " + " | ".join(CATEGORY_ORDER) + " |",
            "|" + " --- |" * (len(CATEGORY_ORDER) + 1),
        ]
        for report in reports:
            cells = " | ".join(_cell(report.accuracies[c]) for c in CATEGORY_ORDER)
            lines.append(f"| {report.label} | {cells} |")
        return "\n".join(lines) + "\n"
    if fmt == "json":
        payload = {
            "reports": [
                {
                    "label": report.label,
                    "k": report.k_used,
                    "accuracies": dict(report.accuracies),
                    "counts": dict(report.counts),
                    "correct": dict(report.correct),
                    "manifest": dict(report.manifest),
                }
                for report in reports
            ]
        }
        return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    raise ConfigurationError(f"unknown report format {fmt!r}")


def emit_report(
    reports: CategoryReport | Sequence[CategoryReport], fmt: str, path
) -> None:
    """Write reports to ``path``; re-emitting the same reports is byte-identical."""
    if isinstance(reports, CategoryReport):
        reports = [reports]
    text = render_report_table(list(reports), fmt)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailureError(f"cannot write report to {path}: {exc}") from exc
