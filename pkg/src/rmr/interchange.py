"""Reader for the embedding interchange format (JSONL).

The embedder sidecar writes one manifest line followed by one record per
input row:

    {"manifest": 1, "dim": 64, "encoder_tag": "..."}
    {"id": "q1", "text_embedding": [...], "image_embedding": null,
     "dim": 64, "encoder_tag": "..."}

Floats arrive as JSON numbers and are decoded to float32 here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

from .core import ModalityInput
from .errors import (
    DimensionMismatchError,
    DuplicateIdError,
    IoFailureError,
    MissingFieldError,
    ParseError,
)


@dataclass(frozen=True)
class EmbeddingStore:
    """All embeddings from one interchange file, keyed by record id."""

    dim: int
    encoder_tag: str
    records: Mapping[str, ModalityInput]

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self.records

    def get(self, record_id: str) -> ModalityInput | None:
        return self.records.get(record_id)


def parse_embedding_record(obj: dict, where: str = "record") -> tuple[str, ModalityInput]:
    """Parse one interchange record object into (id, ModalityInput)."""
    if "id" not in obj:
        raise MissingFieldError(f"{where}: missing 'id'")
    record_id = str(obj["id"])
    text = obj.get("text_embedding")
    image = obj.get("image_embedding")
    modality_input = ModalityInput(
        text_embedding=text if text is not None else None,
        image_embedding=image if image is not None else None,
    )
    declared = obj.get("dim")
    if declared is not None and int(declared) != modality_input.dim:
        raise DimensionMismatchError(
            f"{where} ({record_id!r}): declared dim {declared} != vector dim "
            f"{modality_input.dim}"
        )
    return record_id, modality_input


def load_embedding_store(path) -> EmbeddingStore:
    """Load an interchange file; validates the manifest and every record.

    Raises:
        ParseError: malformed JSON or a missing/invalid manifest line.
        DuplicateIdError: two records share an id.
        DimensionMismatchError: a record disagrees with the manifest dim.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoFailureError(f"cannot read embeddings from {path}: {exc}") from exc
    if not lines:
        raise ParseError(f"{path}: empty interchange file")

    def parse_line(line_no: int, line: str) -> dict:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ParseError(f"{path}:{line_no}: expected a JSON object")
        return obj

    manifest = parse_line(1, lines[0])
    if manifest.get("manifest") != 1 or "dim" not in manifest or "encoder_tag" not in manifest:
        raise ParseError(
            f"{path}:1: first line must be a manifest with 'manifest': 1, "
            "'dim', and 'encoder_tag'"
        )
    dim = int(manifest["dim"])
    encoder_tag = str(manifest["encoder_tag"])

    records: dict[str, ModalityInput] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        obj = parse_line(line_no, line)
        record_id, modality_input = parse_embedding_record(obj, where=f"{path}:{line_no}")
        if modality_input.dim != dim:
            raise DimensionMismatchError(
                f"{path}:{line_no} ({record_id!r}): dim {modality_input.dim} != "
                f"manifest dim {dim}"
            )
        if record_id in records:
            raise DuplicateIdError(f"{path}:{line_no}: duplicate record id {record_id!r}")
        records[record_id] = modality_input
    return EmbeddingStore(dim=dim, encoder_tag=encoder_tag, records=records)
