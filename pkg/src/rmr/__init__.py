"""Training-free retrieval-augmented reasoning engine.

Fuses text/image embeddings into one query vector, retrieves the most
similar question-rationale-answer triplets from an immutable library by
exact cosine search, assembles them into a structured in-context prompt,
and scores LLM answers per benchmark category.
"""

from . import errors
from .context import (
    ContextBlock,
    PromptEnvelope,
    assemble_context,
    empty_context,
    format_example,
    render_prompt,
)
from .core import (
    KnowledgeItem,
    KnowledgeLibrary,
    ModalityFlags,
    ModalityInput,
    QraTriplet,
    build_library,
    fuse_embeddings,
    normalize_embedding,
    render_answer,
)
from .gateway import (
    Completion,
    ExtractedAnswer,
    Gateway,
    ModelEndpoint,
    complete,
    extract_answer,
)
from .harness import (
    CATEGORY_ORDER,
    CategoryReport,
    EvalRecord,
    emit_report,
    load_dataset,
    load_triplets,
    run_eval,
    run_k_sweep,
    run_modality_ablation,
)
from .index import (
    RetrievedEntry,
    RetrievedSet,
    cosine_similarity,
    library_fingerprint,
    load_index,
    save_index,
    top_k_retrieve,
)
from .interchange import EmbeddingStore, load_embedding_store

__version__ = "0.1.0"

__all__ = [
    "CATEGORY_ORDER",
    "CategoryReport",
    "Completion",
    "ContextBlock",
    "EmbeddingStore",
    "EvalRecord",
    "ExtractedAnswer",
    "Gateway",
    "KnowledgeItem",
    "KnowledgeLibrary",
    "ModalityFlags",
    "ModalityInput",
    "ModelEndpoint",
    "PromptEnvelope",
    "QraTriplet",
    "RetrievedEntry",
    "RetrievedSet",
    "assemble_context",
    "build_library",
    "complete",
    "cosine_similarity",
    "emit_report",
    "empty_context",
    "errors",
    "extract_answer",
    "format_example",
    "fuse_embeddings",
    "library_fingerprint",
    "load_dataset",
    "load_embedding_store",
    "load_index",
    "load_triplets",
    "normalize_embedding",
    "render_answer",
    "render_prompt",
    "run_eval",
    "run_k_sweep",
    "run_modality_ablation",
    "save_index",
    "top_k_retrieve",
]
