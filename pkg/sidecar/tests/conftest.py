"""Fixture builders: solid-color images and tiny datasets in tmp dirs."""

from __future__ import annotations

import json

import pytest
from PIL import Image

from rmr_sidecar.encoders import COLOR_LEXICON

# ten chromatic hues; achromatic entries (white/black/gray) share a direction
# in color space and are deliberately left out of the alignment fixture
ALIGNMENT_COLORS = (
    "red", "green", "blue", "yellow", "orange",
    "purple", "pink", "cyan", "teal", "brown",
)


def write_solid_image(path, color_name: str, size: int = 64) -> None:
    rgb = tuple(round(channel * 255) for channel in COLOR_LEXICON[color_name])
    Image.new("RGB", (size, size), rgb).save(path)


@pytest.fixture
def alignment_pairs(tmp_path):
    """Ten (caption, image_path) pairs, one per fixture color."""
    pairs = []
    for color in ALIGNMENT_COLORS:
        image_path = tmp_path / f"{color}.png"
        write_solid_image(image_path, color)
        pairs.append((f"a plain {color} surface", str(image_path)))
    return pairs


@pytest.fixture
def mini_dataset(tmp_path):
    """Five-row generic dataset: three text-only, two with images."""
    image_root = tmp_path / "assets"
    image_root.mkdir()
    write_solid_image(image_root / "red.png", "red")
    write_solid_image(image_root / "blue.png", "blue")
    rows = [
        {"id": "d1", "question": "Which planet is closest to the sun?",
         "choices": ["Mercury", "Venus"], "gold_index": 0, "hint": ""},
        {"id": "d2", "question": "What do bees collect from flowers?",
         "choices": ["nectar", "bark"], "gold_index": 0, "hint": "Think of honey."},
        {"id": "d3", "question": "Which season follows winter?",
         "choices": ["spring", "autumn"], "gold_index": 0, "hint": ""},
        {"id": "d4", "question": "What color is the square?",
         "choices": ["red", "blue"], "gold_index": 0, "hint": "",
         "image_ref": "red.png"},
        {"id": "d5", "question": "What color is the sky in the picture?",
         "choices": ["red", "blue"], "gold_index": 1, "hint": "",
         "image_ref": "blue.png"},
    ]
    dataset = tmp_path / "mini.jsonl"
    dataset.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return dataset, image_root
