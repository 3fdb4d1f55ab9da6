"""Domain types, bi-modal embedding fusion, and knowledge library construction.

Every library item and live query is represented by one fused float32 vector:
the arithmetic mean of the unit-normalized text and image embeddings when both
modalities are present, or the lone modality's embedding when only one is.
Single-modality fusion is a bit-exact passthrough of the input vector.

Float discipline: similarity ranking elsewhere in the package must be
reproducible bit-for-bit, so every dot product and norm goes through
``dot_f32``/``norm_f32`` (sequential float32 accumulation via ``np.dot`` on
contiguous vectors). Do not swap these for matrix-level BLAS calls; those use
a different accumulation order and break exact rank reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    BothModalitiesAbsentError,
    DimensionMismatchError,
    DuplicateIdError,
    EmptyInputError,
    NonFiniteInputError,
    UnknownItemIdError,
    ZeroNormVectorError,
)


def as_embedding(values) -> np.ndarray:
    """Coerce ``values`` to a validated 1-D contiguous float32 vector.

    Raises:
        DimensionMismatchError: not 1-D or empty.
        NonFiniteInputError: any NaN or infinite entry.
    """
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionMismatchError(
            f"expected a non-empty 1-D vector, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInputError("embedding contains NaN or infinite entries")
    return arr


def dot_f32(a: np.ndarray, b: np.ndarray) -> np.float32:
    # Pinned accumulation kernel; see module docstring.
    return np.dot(a, b)


def norm_f32(vec: np.ndarray) -> np.float32:
    """Euclidean norm in float32, via the pinned dot kernel."""
    return np.sqrt(np.dot(vec, vec))


def normalize_embedding(vec) -> np.ndarray:
    """Return ``vec`` scaled to unit L2 norm, as a fresh float32 vector.

    Raises:
        ZeroNormVectorError: the vector has zero norm and cannot be normalized.
    """
    arr = as_embedding(vec)
    norm = norm_f32(arr)
    if norm == 0.0:
        raise ZeroNormVectorError("cannot normalize an all-zero embedding")
    return arr / norm


def choice_letter(index: int) -> str:
    """0 -> 'A', 1 -> 'B', ... used for option labels and answer rendering."""
    if not 0 <= index < 26:
        raise ValueError(f"choice index {index} outside the A..Z label range")
    return chr(ord("A") + index)


def render_answer(gold_index: int, choices: Sequence[str]) -> str:
    """Render a correct choice as its labeled full text, e.g. ``(B) a rock``."""
    if not 0 <= gold_index < len(choices):
        raise ValueError(
            f"gold index {gold_index} out of range for {len(choices)} choices"
        )
    return f"({choice_letter(gold_index)}) {choices[gold_index]}"


@dataclass(frozen=True)
class ModalityInput:
    """A text/image input pair, possibly modality-incomplete.

    At least one of the two embeddings must be present; when both are, their
    dimensions must agree. The raw ``text``/``image_ref`` fields are optional
    carriers for display and asset lookup and take no part in fusion.
    """

    text: str | None = None
    image_ref: str | None = None
    text_embedding: np.ndarray | None = None
    image_embedding: np.ndarray | None = None

    def __post_init__(self):
        text_emb = (
            as_embedding(self.text_embedding)
            if self.text_embedding is not None
            else None
        )
        image_emb = (
            as_embedding(self.image_embedding)
            if self.image_embedding is not None
            else None
        )
        if text_emb is None and image_emb is None:
            raise BothModalitiesAbsentError(
                "at least one of text_embedding or image_embedding is required"
            )
        if (
            text_emb is not None
            and image_emb is not None
            and text_emb.size != image_emb.size
        ):
            raise DimensionMismatchError(
                f"text embedding dim {text_emb.size} != image embedding dim "
                f"{image_emb.size}"
            )
        object.__setattr__(self, "text_embedding", text_emb)
        object.__setattr__(self, "image_embedding", image_emb)

    @property
    def dim(self) -> int:
        present = (
            self.text_embedding
            if self.text_embedding is not None
            else self.image_embedding
        )
        return int(present.size)

    @property
    def has_text(self) -> bool:
        return self.text_embedding is not None

    @property
    def has_image(self) -> bool:
        return self.image_embedding is not None

    def normalized(self) -> "ModalityInput":
        """Copy of this input with each present embedding scaled to unit norm."""
        return ModalityInput(
            text=self.text,
            image_ref=self.image_ref,
            text_embedding=(
                normalize_embedding(self.text_embedding) if self.has_text else None
            ),
            image_embedding=(
                normalize_embedding(self.image_embedding) if self.has_image else None
            ),
        )


def fuse_embeddings(inp: ModalityInput) -> np.ndarray:
    """Fuse a modality-adaptive input into one embedding.

    Returns the elementwise mean of the two embeddings when both modalities
    are present, otherwise a bit-exact copy of whichever one exists. Inputs
    are never mutated. The caller is expected to have unit-normalized each
    modality embedding beforehand (``ModalityInput.normalized``); the fused
    mean is deliberately not renormalized, since cosine ranking is
    scale-invariant.
    """
    text_emb, image_emb = inp.text_embedding, inp.image_embedding
    if text_emb is not None and image_emb is not None:
        return (text_emb + image_emb) / np.float32(2.0)
    if image_emb is not None:
        return image_emb.copy()
    if text_emb is not None:
        return text_emb.copy()
    raise BothModalitiesAbsentError("cannot fuse an input with no embeddings")


@dataclass(frozen=True)
class QraTriplet:
    """One question-rationale-answer record stored in the knowledge library.

    ``answer`` holds the rendered correct choice, full text plus letter label
    (e.g. ``(B) a rock``), so an in-context example carries maximal signal.
    """

    id: str
    question: str
    rationale: str
    answer: str
    choices: tuple[str, ...] = ()
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple(self.choices))
        object.__setattr__(self, "metadata", dict(self.metadata))
        if not self.id:
            raise ValueError("triplet id must be non-empty")
        if not self.question:
            raise ValueError(f"triplet {self.id!r}: question must be non-empty")
        if not self.answer:
            raise ValueError(f"triplet {self.id!r}: answer must be non-empty")
        if self.choices:
            matches = [
                j
                for j, choice in enumerate(self.choices)
                if self.answer == choice
                or self.answer == f"({choice_letter(j)}) {choice}"
            ]
            if len(matches) != 1:
                raise ValueError(
                    f"triplet {self.id!r}: answer {self.answer!r} must match "
                    f"exactly one choice, matched {len(matches)}"
                )


@dataclass(frozen=True)
class ModalityFlags:
    """Which modalities contributed to an item's fused embedding."""

    text: bool
    image: bool


@dataclass(frozen=True, eq=False)
class KnowledgeItem:
    """A triplet plus its fused embedding, as stored in the library."""

    triplet: QraTriplet
    embedding: np.ndarray
    modality_flags: ModalityFlags


@dataclass(frozen=True, eq=False)
class KnowledgeLibrary:
    """Immutable collection of embedded triplets, ready for retrieval.

    ``matrix`` holds all fused embeddings as one read-only (count, dim)
    float32 array in ingest order; each item's ``embedding`` is a view of its
    row. Safe for unlimited concurrent readers.
    """

    items: tuple[KnowledgeItem, ...]
    dim: int
    encoder_tag: str
    matrix: np.ndarray

    def __post_init__(self):
        if len(self.items) == 0:
            raise EmptyInputError("a knowledge library cannot be empty")
        if self.matrix.shape != (len(self.items), self.dim):
            raise DimensionMismatchError(
                f"matrix shape {self.matrix.shape} does not match "
                f"{len(self.items)} items of dim {self.dim}"
            )
        seen: set[str] = set()
        for item in self.items:
            if item.triplet.id in seen:
                raise DuplicateIdError(f"duplicate item id {item.triplet.id!r}")
            seen.add(item.triplet.id)
        self.matrix.setflags(write=False)

    @property
    def count(self) -> int:
        return len(self.items)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[KnowledgeItem]:
        return iter(self.items)

    @cached_property
    def _index_by_id(self) -> dict[str, int]:
        return {item.triplet.id: i for i, item in enumerate(self.items)}

    @cached_property
    def row_norms(self) -> np.ndarray:
        """Per-row Euclidean norms via the pinned float32 kernel, read-only."""
        norms = np.empty(self.count, dtype=np.float32)
        for i in range(self.count):
            norms[i] = norm_f32(self.matrix[i])
        norms.setflags(write=False)
        return norms

    def index_of(self, item_id: str) -> int:
        """Ingest index of ``item_id``; raises UnknownItemIdError if absent."""
        try:
            return self._index_by_id[item_id]
        except KeyError:
            raise UnknownItemIdError(f"no library item with id {item_id!r}") from None

    def get(self, item_id: str) -> KnowledgeItem:
        return self.items[self.index_of(item_id)]


def build_library(
    records: Sequence[tuple[QraTriplet, ModalityInput]],
    encoder_tag: str = "unspecified",
) -> KnowledgeLibrary:
    """Fuse and assemble records into an immutable knowledge library.

    Each modality embedding is unit-normalized at ingest, then fused; items
    keep their input order. All-zero embeddings and fused vectors of zero norm
    are rejected here, at the boundary, so retrieval never divides by zero.

    Raises:
        EmptyInputError: no records.
        DuplicateIdError: two records share an id.
        DimensionMismatchError: records disagree on embedding dimension.
        ZeroNormVectorError: an embedding (or a fused result) has zero norm.
    """
    if len(records) == 0:
        raise EmptyInputError("cannot build a library from zero records")
    dim = records[0][1].dim
    matrix = np.empty((len(records), dim), dtype=np.float32)
    flags: list[ModalityFlags] = []
    for row, (triplet, modality_input) in enumerate(records):
        if modality_input.dim != dim:
            raise DimensionMismatchError(
                f"record {triplet.id!r} has dim {modality_input.dim}, "
                f"expected {dim}"
            )
        fused = fuse_embeddings(modality_input.normalized())
        if norm_f32(fused) == 0.0:
            raise ZeroNormVectorError(
                f"record {triplet.id!r}: fused embedding has zero norm"
            )
        matrix[row] = fused
        flags.append(
            ModalityFlags(text=modality_input.has_text, image=modality_input.has_image)
        )
    matrix.setflags(write=False)
    items = tuple(
        KnowledgeItem(triplet=triplet, embedding=matrix[i], modality_flags=flags[i])
        for i, (triplet, _) in enumerate(records)
    )
    return KnowledgeLibrary(items=items, dim=dim, encoder_tag=encoder_tag, matrix=matrix)
