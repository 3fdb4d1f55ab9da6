"""Shared helpers: synthetic triplets, random libraries, and the retrieval oracle."""

from __future__ import annotations

import numpy as np
import pytest

from rmr.core import KnowledgeLibrary, ModalityInput, QraTriplet, build_library
from rmr.index import cosine_similarity


def make_triplet(i: int, n_choices: int = 4, gold: int | None = None) -> QraTriplet:
    """A small deterministic triplet; choice texts are collision-proof tokens."""
    gold = i % n_choices if gold is None else gold
    choices = tuple(f"choice-{i}-{j}" for j in range(n_choices))
    letter = chr(ord("A") + gold)
    return QraTriplet(
        id=f"item{i:04d}",
        question=f"Synthetic question number {i}?",
        rationale=f"Synthetic rationale {i}.",
        answer=f"({letter}) {choices[gold]}",
        choices=choices,
    )


def random_unit_vectors(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    vecs = rng.standard_normal((n, dim)).astype(np.float32)
    norms = np.sqrt((vecs.astype(np.float64) ** 2).sum(axis=1))
    return (vecs / norms[:, None]).astype(np.float32)


def make_random_library(
    rng: np.random.Generator, n: int, dim: int, encoder_tag: str = "synthetic"
) -> tuple[KnowledgeLibrary, np.ndarray]:
    """Random text-only library; returns it plus the raw (pre-ingest) vectors."""
    vecs = random_unit_vectors(rng, n, dim)
    records = [
        (make_triplet(i), ModalityInput(text_embedding=vecs[i])) for i in range(n)
    ]
    return build_library(records, encoder_tag=encoder_tag), vecs


def brute_force_top_k(
    library: KnowledgeLibrary,
    query,
    k: int,
    exclude_ids: frozenset[str] = frozenset(),
) -> list[tuple[str, float]]:
    """Independent oracle: score every item with the scalar similarity op,
    full-sort descending with ties broken by ascending ingest index."""
    scored = [
        (idx, cosine_similarity(item.embedding, query))
        for idx, item in enumerate(library.items)
        if item.triplet.id not in exclude_ids
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return [(library.items[idx].triplet.id, sim) for idx, sim in scored[:k]]


def make_synthetic_eval(
    rng: np.random.Generator, n: int, dim: int, n_choices: int = 4
):
    """A library plus n duplicate queries: query i carries item i's embedding.

    Query questions differ textually from the library questions, but choices
    and the gold index match item i's, so an endpoint that echoes the
    top-retrieved answer letter is correct on every record. Subjects, hints,
    images, and grades cycle so every report category is populated.
    """
    from rmr.harness import EvalRecord

    library, vecs = make_random_library(rng, n, dim)
    subjects = ("natural", "social", "language")
    records, embeddings = [], {}
    for i in range(n):
        triplet = library.items[i].triplet
        gold = i % n_choices
        record = EvalRecord(
            id=f"q{i:04d}",
            question=f"Fresh evaluation question {i}?",
            choices=triplet.choices,
            gold_index=gold,
            hint="background context" if i % 2 == 0 else "",
            image_ref=f"assets/{i}.png" if i % 3 == 0 else None,
            subject=subjects[i % 3],
            grade=(i % 12) + 1,
        )
        records.append(record)
        embeddings[record.id] = ModalityInput(text_embedding=vecs[i])
    return records, embeddings, library


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240517)
