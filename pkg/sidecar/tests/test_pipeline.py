"""Dataset embedding runs: interchange shape, determinism, skip semantics."""

import json

import numpy as np
import pytest

from rmr_sidecar.encoders import LexicalColorEncoder
from rmr_sidecar.errors import UsageError
from rmr_sidecar.pipeline import embed_dataset, embed_query, read_dataset_rows

from conftest import write_solid_image


def read_lines(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


class TestEmbedDataset:
    def test_text_only_rows_have_null_image(self, mini_dataset, tmp_path):
        dataset, image_root = mini_dataset
        out = tmp_path / "out.jsonl"
        written = embed_dataset(
            dataset, out, LexicalColorEncoder(), format_tag="generic_jsonl"
        )
        # no image_root passed: every row embeds as text-only
        assert written == 5
        rows = read_lines(out)
        assert all(row["image_embedding"] is None for row in rows[1:])

    def test_manifest_line_first(self, mini_dataset, tmp_path):
        dataset, image_root = mini_dataset
        out = tmp_path / "out.jsonl"
        embed_dataset(
            dataset, out, LexicalColorEncoder(), format_tag="generic_jsonl",
            image_root=image_root,
        )
        manifest = read_lines(out)[0]
        assert manifest == {"manifest": 1, "dim": 64, "encoder_tag": "lexical-color-v1"}

    def test_ids_preserved_in_order(self, mini_dataset, tmp_path):
        dataset, image_root = mini_dataset
        out = tmp_path / "out.jsonl"
        embed_dataset(
            dataset, out, LexicalColorEncoder(), format_tag="generic_jsonl",
            image_root=image_root,
        )
        ids = [row["id"] for row in read_lines(out)[1:]]
        assert ids == ["d1", "d2", "d3", "d4", "d5"]

    def test_image_rows_carry_both_embeddings(self, mini_dataset, tmp_path):
        dataset, image_root = mini_dataset
        out = tmp_path / "out.jsonl"
        embed_dataset(
            dataset, out, LexicalColorEncoder(), format_tag="generic_jsonl",
            image_root=image_root,
        )
        rows = {row["id"]: row for row in read_lines(out)[1:]}
        assert rows["d4"]["image_embedding"] is not None
        assert rows["d4"]["text_embedding"] is not None
        assert len(rows["d4"]["image_embedding"]) == rows["d4"]["dim"]

    def test_repeat_run_byte_identical(self, mini_dataset, tmp_path):
        dataset, image_root = mini_dataset
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for out in (a, b):
            embed_dataset(
                dataset, out, LexicalColorEncoder(), format_tag="generic_jsonl",
                image_root=image_root, batch_size=2,
            )
        assert a.read_bytes() == b.read_bytes()

    def test_undecodable_image_skips_record_with_warning(
        self, mini_dataset, tmp_path, caplog
    ):
        dataset, image_root = mini_dataset
        (image_root / "red.png").write_bytes(b"corrupted beyond repair")
        out = tmp_path / "out.jsonl"
        with caplog.at_level("WARNING"):
            written = embed_dataset(
                dataset, out, LexicalColorEncoder(), format_tag="generic_jsonl",
                image_root=image_root,
            )
        assert written == 4
        assert "d4" in caplog.text
        ids = [row["id"] for row in read_lines(out)[1:]]
        assert "d4" not in ids

    def test_scienceqa_rows_and_text_policy(self, tmp_path):
        problems = {
            "7": {
                "question": "Which is a conductor?",
                "hint": "Metals conduct electricity.",
                "image": "image.png",
                "split": "train",
            }
        }
        dataset = tmp_path / "problems.json"
        dataset.write_text(json.dumps(problems))
        image_root = tmp_path / "images"
        (image_root / "7").mkdir(parents=True)
        write_solid_image(image_root / "7" / "image.png", "teal")

        rows = read_dataset_rows(
            dataset, "scienceqa_json", image_root=image_root,
            text_fields="question+hint",
        )
        assert rows[0].text == "Which is a conductor? Metals conduct electricity."
        assert rows[0].image_path.endswith("7/image.png")
        question_only = read_dataset_rows(dataset, "scienceqa_json", text_fields="question")
        assert question_only[0].text == "Which is a conductor?"

    def test_split_filter(self, tmp_path):
        problems = {
            "1": {"question": "q1?", "split": "train"},
            "2": {"question": "q2?", "split": "test"},
        }
        dataset = tmp_path / "problems.json"
        dataset.write_text(json.dumps(problems))
        rows = read_dataset_rows(dataset, "scienceqa_json", split="train")
        assert [row.id for row in rows] == ["1"]

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(UsageError):
            read_dataset_rows(tmp_path / "x.csv", "csv")


class TestEmbedQuery:
    def test_text_only(self):
        record = embed_query(LexicalColorEncoder(), text="why is the sky blue")
        assert record["image_embedding"] is None
        assert len(record["text_embedding"]) == 64
        norm = float(np.linalg.norm(np.array(record["text_embedding"])))
        assert norm == pytest.approx(1.0, abs=1e-3)

    def test_both_modalities(self, tmp_path):
        image = tmp_path / "q.png"
        write_solid_image(image, "green")
        record = embed_query(
            LexicalColorEncoder(), text="a plain green surface", image_path=str(image)
        )
        assert len(record["text_embedding"]) == len(record["image_embedding"]) == 64

    def test_neither_input_rejected(self):
        with pytest.raises(UsageError):
            embed_query(LexicalColorEncoder())
