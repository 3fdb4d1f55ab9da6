"""Dataset embedding pipeline and the interchange JSONL writer.

Output format, consumed by the retrieval engine's ``build`` command:

    {"manifest": 1, "dim": D, "encoder_tag": "..."}
    {"id": "...", "text_embedding": [...] | null,
     "image_embedding": [...] | null, "dim": D, "encoder_tag": "..."}

Runs are deterministic on the same hardware and config: re-embedding the
same dataset yields a byte-identical file.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import LexicalColorEncoder
from .errors import ImageDecodeError, IoFailure, UsageError

logger = logging.getLogger(__name__)

TEXT_FIELD_POLICIES = ("question", "question+hint")


@dataclass(frozen=True)
class DatasetRow:
    """One input row: the text to embed and an optional image path."""

    id: str
    text: str
    image_path: str | None = None


def _read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read dataset {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc


def _row_text(question: str, hint: str, text_fields: str) -> str:
    if text_fields == "question":
        return question
    if text_fields == "question+hint":
        return f"{question} {hint}".strip() if hint else question
    raise UsageError(f"unknown text-fields policy {text_fields!r}")


def read_dataset_rows(
    dataset_path,
    format_tag: str,
    image_root=None,
    text_fields: str = "question+hint",
    split: str | None = None,
) -> list[DatasetRow]:
    """Extract (id, text, image path) rows from a supported dataset file."""
    rows: list[DatasetRow] = []
    if format_tag == "scienceqa_json":
        data = _read_json(dataset_path)
        if not isinstance(data, dict):
            raise UsageError(f"{dataset_path}: expected an object keyed by question id")
        for qid, problem in data.items():
            if split is not None and problem.get("split") != split:
                continue
            image = problem.get("image")
            image_path = None
            if image and image_root is not None:
                image_path = str(Path(image_root) / str(qid) / image)
            rows.append(
                DatasetRow(
                    id=str(qid),
                    text=_row_text(
                        str(problem.get("question", "")),
                        str(problem.get("hint") or ""),
                        text_fields,
                    ),
                    image_path=image_path,
                )
            )
    elif format_tag == "generic_jsonl":
        try:
            lines = Path(dataset_path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise IoFailure(f"cannot read dataset {dataset_path}: {exc}") from exc
        for line_no, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise UsageError(f"{dataset_path}:{line_no}: invalid JSON: {exc}") from exc
            image_ref = obj.get("image_ref")
            image_path = None
            if image_ref and image_root is not None:
                image_path = str(Path(image_root) / image_ref)
            rows.append(
                DatasetRow(
                    id=str(obj["id"]),
                    text=_row_text(
                        str(obj.get("question", "")),
                        str(obj.get("hint") or ""),
                        text_fields,
                    ),
                    image_path=image_path,
                )
            )
    else:
        raise UsageError(f"unknown dataset format {format_tag!r}")
    return rows


def _record_json(record_id, text_vec, image_vec, dim, tag) -> str:
    return json.dumps(
        {
            "id": record_id,
            "text_embedding": [float(x) for x in text_vec] if text_vec is not None else None,
            "image_embedding": [float(x) for x in image_vec] if image_vec is not None else None,
            "dim": dim,
            "encoder_tag": tag,
        },
        ensure_ascii=False,
    )


def embed_dataset(
    dataset_path,
    out_path,
    encoder,
    format_tag: str = "scienceqa_json",
    batch_size: int = 32,
    image_root=None,
    text_fields: str = "question+hint",
    split: str | None = None,
) -> int:
    """Embed every dataset row and write the interchange file.

    Rows whose image asset fails to decode are skipped with a warning.
    Returns the number of records written.
    """
    rows = read_dataset_rows(
        dataset_path, format_tag, image_root=image_root,
        text_fields=text_fields, split=split,
    )
    written = 0
    try:
        out = open(out_path, "w", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {out_path}: {exc}") from exc
    with out:
        out.write(
            json.dumps(
                {"manifest": 1, "dim": encoder.dim, "encoder_tag": encoder.tag}
            )
            + "\n"
        )
        for start in range(0, len(rows), batch_size):
            batch = rows[start : start + batch_size]
            text_vectors = encoder.encode_texts([row.text for row in batch])
            for row, text_vec in zip(batch, text_vectors):
                image_vec = None
                if row.image_path is not None:
                    try:
                        image_vec = encoder.encode_images([row.image_path])[0]
                    except ImageDecodeError as exc:
                        logger.warning("skipping %s: %s", row.id, exc)
                        continue
                out.write(
                    _record_json(row.id, text_vec, image_vec, encoder.dim, encoder.tag)
                    + "\n"
                )
                written += 1
    return written


def embed_query(
    encoder, text: str | None = None, image_path: str | None = None
) -> dict:
    """Embed one live query; returns the interchange record as a dict."""
    if not text and not image_path:
        raise UsageError("provide --text and/or --image")
    text_vec = encoder.encode_texts([text])[0] if text else None
    image_vec = encoder.encode_images([image_path])[0] if image_path else None
    return json.loads(
        _record_json("query", text_vec, image_vec, encoder.dim, encoder.tag)
    )
