"""Exact cosine top-k retrieval and bit-exact index persistence.

Retrieval is deliberately brute force: the library is ~12k items, where an
exact scan is fast and removes approximation as a correctness variable.
Similarities are computed row by row through the pinned float32 kernel in
``core`` so that ``top_k_retrieve`` and the scalar ``cosine_similarity``
agree bit-for-bit, and a full-sort oracle can reproduce the ranking exactly.

Index file layout (little-endian):

    magic "RMRIDX1\\0" | u32 version=1 | u32 dim | u64 count
    count*dim float32 embedding matrix, row-major
    per item: u32 byte length + UTF-8 id
    u64 byte length + UTF-8 JSON blob (triplets, metadata, encoder tag)
    u32 CRC32 of all preceding bytes
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from hashlib import sha256
from typing import Iterable

import numpy as np

from .core import (
    KnowledgeItem,
    KnowledgeLibrary,
    ModalityFlags,
    QraTriplet,
    as_embedding,
    dot_f32,
    norm_f32,
)
from .errors import (
    BadMagicError,
    ChecksumMismatchError,
    ConfigurationError,
    DimensionMismatchError,
    EmptyLibraryAfterExclusionError,
    IndexFormatError,
    IoFailureError,
    TruncatedFileError,
    VersionMismatchError,
    ZeroNormVectorError,
)

MAGIC = b"RMRIDX1\x00"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class RetrievedEntry:
    """One retrieval hit: item id, cosine similarity, and 0-based rank."""

    item_id: str
    similarity: float
    rank: int


@dataclass(frozen=True)
class RetrievedSet:
    """Ordered top-k retrieval result for one query.

    Entries are sorted by non-increasing similarity; ties break toward the
    earlier ingest index. May hold fewer than ``k_requested`` entries when
    the library (after exclusions) is smaller than k.
    """

    entries: tuple[RetrievedEntry, ...]
    k_requested: int
    query_id: str | None = None

    @property
    def item_ids(self) -> tuple[str, ...]:
        return tuple(entry.item_id for entry in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def cosine_similarity(a, b) -> float:
    """Cosine similarity in float32, clamped to [-1, 1].

    Raises:
        DimensionMismatchError: vectors differ in dimension.
        ZeroNormVectorError: either vector has zero norm.
    """
    va, vb = as_embedding(a), as_embedding(b)
    if va.size != vb.size:
        raise DimensionMismatchError(f"dim {va.size} != dim {vb.size}")
    norm_a, norm_b = norm_f32(va), norm_f32(vb)
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroNormVectorError("cosine similarity undefined for zero vectors")
    sim = dot_f32(va, vb) / (norm_a * norm_b)
    return float(min(np.float32(1.0), max(np.float32(-1.0), sim)))


def top_k_retrieve(
    library: KnowledgeLibrary,
    query,
    k: int,
    exclude_ids: Iterable[str] | None = None,
    query_id: str | None = None,
) -> RetrievedSet:
    """Retrieve the k most cosine-similar non-excluded items for a query.

    Ties are broken by ascending ingest index, so the result is independent
    of any internal evaluation order. The library is never modified.

    Raises:
        ConfigurationError: k < 1.
        DimensionMismatchError: query dim differs from the library's.
        ZeroNormVectorError: the query has zero norm.
        EmptyLibraryAfterExclusionError: exclusions removed every item.
    """
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    vec = as_embedding(query)
    if vec.size != library.dim:
        raise DimensionMismatchError(
            f"query dim {vec.size} != library dim {library.dim}"
        )
    query_norm = norm_f32(vec)
    if query_norm == 0.0:
        raise ZeroNormVectorError("query embedding has zero norm")

    matrix = library.matrix
    dots = np.empty(library.count, dtype=np.float32)
    for i in range(library.count):
        # row-wise pinned kernel; keeps bit parity with cosine_similarity
        dots[i] = np.dot(matrix[i], vec)
    sims = dots / (library.row_norms * query_norm)
    np.clip(sims, -1.0, 1.0, out=sims)

    if exclude_ids:
        excluded = set(exclude_ids)
        keep = np.array(
            [item.triplet.id not in excluded for item in library.items], dtype=bool
        )
        candidates = np.flatnonzero(keep)
    else:
        candidates = np.arange(library.count)
    if candidates.size == 0:
        raise EmptyLibraryAfterExclusionError(
            "every library item is excluded for this query"
        )

    # stable sort on negated sims: descending similarity, ties by ascending
    # ingest index (candidates are already in ingest order)
    order = np.argsort(-sims[candidates], kind="stable")
    top = candidates[order[: min(k, candidates.size)]]
    entries = tuple(
        RetrievedEntry(
            item_id=library.items[i].triplet.id,
            similarity=float(sims[i]),
            rank=rank,
        )
        for rank, i in enumerate(top)
    )
    return RetrievedSet(entries=entries, k_requested=k, query_id=query_id)


# -- persistence -------------------------------------------------------------


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":")).encode("utf-8")


def serialize_library(library: KnowledgeLibrary) -> bytes:
    """Serialize deterministically: the same library always yields the same bytes."""
    header = MAGIC + struct.pack(
        "<IIQ", FORMAT_VERSION, library.dim, library.count
    )
    matrix_bytes = np.ascontiguousarray(library.matrix, dtype="<f4").tobytes()
    id_parts = []
    for item in library.items:
        encoded = item.triplet.id.encode("utf-8")
        id_parts.append(struct.pack("<I", len(encoded)) + encoded)
    blob = _canonical_json(
        {
            "encoder_tag": library.encoder_tag,
            "items": [
                {
                    "question": item.triplet.question,
                    "rationale": item.triplet.rationale,
                    "answer": item.triplet.answer,
                    "choices": list(item.triplet.choices),
                    "metadata": dict(item.triplet.metadata),
                    "modality": {
                        "text": item.modality_flags.text,
                        "image": item.modality_flags.image,
                    },
                }
                for item in library.items
            ],
        }
    )
    payload = b"".join(
        [header, matrix_bytes, *id_parts, struct.pack("<Q", len(blob)), blob]
    )
    return payload + struct.pack("<I", zlib.crc32(payload))


class _Cursor:
    """Sequential reader over index bytes; raises TruncatedFileError on overrun."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"file ends at byte {len(self.data)}, needed {self.pos + n}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def deserialize_library(data: bytes) -> KnowledgeLibrary:
    """Parse index bytes back into a library, bit-exact with the original."""
    cursor = _Cursor(data)
    magic = cursor.take(len(MAGIC))
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = cursor.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"unsupported index format version {version}, expected {FORMAT_VERSION}"
        )
    dim = cursor.u32()
    count = cursor.u64()
    if dim == 0 or count == 0:
        raise IndexFormatError(f"invalid header: dim={dim}, count={count}")
    matrix_bytes = cursor.take(count * dim * 4)
    ids = [cursor.take(cursor.u32()).decode("utf-8") for _ in range(count)]
    blob = cursor.take(cursor.u64())
    stored_crc = struct.unpack("<I", cursor.take(4))[0]
    if cursor.pos != len(data):
        raise ChecksumMismatchError(
            f"{len(data) - cursor.pos} unexpected trailing bytes"
        )
    actual_crc = zlib.crc32(data[: cursor.pos - 4])
    if actual_crc != stored_crc:
        raise ChecksumMismatchError(
            f"CRC32 mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )

    meta = json.loads(blob.decode("utf-8"))
    item_dicts = meta["items"]
    if len(item_dicts) != count:
        raise IndexFormatError(
            f"JSON blob holds {len(item_dicts)} items, header says {count}"
        )
    matrix = np.frombuffer(matrix_bytes, dtype="<f4").reshape(count, dim)
    items = tuple(
        KnowledgeItem(
            triplet=QraTriplet(
                id=item_id,
                question=entry["question"],
                rationale=entry["rationale"],
                answer=entry["answer"],
                choices=tuple(entry["choices"]),
                metadata=entry["metadata"],
            ),
            embedding=matrix[i],
            modality_flags=ModalityFlags(
                text=entry["modality"]["text"], image=entry["modality"]["image"]
            ),
        )
        for i, (item_id, entry) in enumerate(zip(ids, item_dicts))
    )
    return KnowledgeLibrary(
        items=items, dim=dim, encoder_tag=meta["encoder_tag"], matrix=matrix
    )


def save_index(library: KnowledgeLibrary, path) -> None:
    """Write the library to ``path`` in the binary index format."""
    data = serialize_library(library)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoFailureError(f"cannot write index to {path}: {exc}") from exc


def load_index(path) -> KnowledgeLibrary:
    """Read a library from ``path``; see module docstring for the error map."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoFailureError(f"cannot read index from {path}: {exc}") from exc
    return deserialize_library(data)


def library_fingerprint(library: KnowledgeLibrary) -> str:
    """SHA-256 of the serialized index bytes; stable across processes."""
    return sha256(serialize_library(library)).hexdigest()
