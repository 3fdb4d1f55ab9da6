"""Embedding interchange file parsing and validation."""

import numpy as np
import pytest

from rmr.errors import (
    DimensionMismatchError,
    DuplicateIdError,
    MissingFieldError,
    ParseError,
)
from rmr.interchange import load_embedding_store, parse_embedding_record

DATA = "tests/data"


def test_loads_fixture_store():
    store = load_embedding_store(f"{DATA}/tiny_embeddings.jsonl")
    assert store.dim == 4
    assert store.encoder_tag == "tiny-fixture-v1"
    assert len(store) == 4
    assert "1003" in store
    record = store.get("1001")
    assert record.text_embedding.dtype == np.float32
    assert np.array_equal(record.text_embedding, np.array([1, 0, 0, 0], np.float32))
    assert np.array_equal(record.image_embedding, np.array([0, 1, 0, 0], np.float32))
    assert store.get("1002").image_embedding is None


def _write(tmp_path, *lines):
    path = tmp_path / "emb.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


MANIFEST = '{"manifest": 1, "dim": 2, "encoder_tag": "t"}'


def test_missing_manifest_rejected(tmp_path):
    path = _write(tmp_path, '{"id": "a", "text_embedding": [1, 0]}')
    with pytest.raises(ParseError):
        load_embedding_store(path)


def test_invalid_json_names_line(tmp_path):
    path = _write(tmp_path, MANIFEST, "{not json")
    with pytest.raises(ParseError, match=":2"):
        load_embedding_store(path)


def test_duplicate_id_rejected(tmp_path):
    row = '{"id": "a", "text_embedding": [1, 0]}'
    path = _write(tmp_path, MANIFEST, row, row)
    with pytest.raises(DuplicateIdError):
        load_embedding_store(path)


def test_dim_mismatch_against_manifest(tmp_path):
    path = _write(tmp_path, MANIFEST, '{"id": "a", "text_embedding": [1, 0, 0]}')
    with pytest.raises(DimensionMismatchError):
        load_embedding_store(path)


def test_record_declared_dim_checked(tmp_path):
    path = _write(
        tmp_path, MANIFEST, '{"id": "a", "text_embedding": [1, 0], "dim": 3}'
    )
    with pytest.raises(DimensionMismatchError):
        load_embedding_store(path)


def test_record_missing_id(tmp_path):
    path = _write(tmp_path, MANIFEST, '{"text_embedding": [1, 0]}')
    with pytest.raises(MissingFieldError):
        load_embedding_store(path)


def test_blank_lines_skipped(tmp_path):
    path = _write(tmp_path, MANIFEST, "", '{"id": "a", "text_embedding": [1, 0]}', "")
    assert len(load_embedding_store(path)) == 1


def test_parse_single_record_object():
    record_id, modality_input = parse_embedding_record(
        {"id": "q", "text_embedding": [0.6, 0.8], "image_embedding": None}
    )
    assert record_id == "q"
    assert modality_input.image_embedding is None
    assert modality_input.dim == 2
