"""Turn retrieved triplets into a structured reasoning context and a prompt.

Each retrieved example is rendered as a Question/Options/Rationale/Answer
block so the model sees the rationale before the answer; examples are ordered
most-similar first and joined by a blank-line separator. The final prompt is
a deterministic concatenation: preamble, examples, query block, instruction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .core import KnowledgeLibrary, QraTriplet, choice_letter
from .errors import BudgetTooSmallError
from .index import RetrievedSet

EXAMPLE_SEPARATOR = "\n\n"

DEFAULT_SYSTEM_PREAMBLE = (
    "Below are worked example questions with rationales and answers. "
    "Study how each rationale leads to its answer, then solve the final "
    "question the same way."
)

DEFAULT_INSTRUCTION_SUFFIX = (
    "Answer with the option letter, then explain your reasoning."
)


def estimate_tokens(text: str) -> int:
    # coarse by design: characters/4, model-agnostic
    return len(text) // 4


def format_options(choices: Sequence[str]) -> str:
    """Label choices as ``(A) first (B) second ...`` on one line."""
    return " ".join(f"({choice_letter(j)}) {c}" for j, c in enumerate(choices))


def format_example(triplet: QraTriplet) -> str:
    """Render one triplet as an in-context example block.

    The Options line is omitted when the triplet has no choices; rationale
    text is preserved verbatim, newlines included.
    """
    lines = [f"Question: {triplet.question}"]
    if triplet.choices:
        lines.append(f"Options: {format_options(triplet.choices)}")
    lines.append(f"Rationale: {triplet.rationale}")
    lines.append(f"Answer: {triplet.answer}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ContextBlock:
    """The rendered in-context examples for one query, in rank order."""

    examples: tuple[str, ...]
    source_ids: tuple[str, ...]
    rendered: str
    token_estimate: int

    def __post_init__(self):
        if len(self.examples) != len(self.source_ids):
            raise ValueError("examples and source_ids must be parallel")
        if self.rendered != EXAMPLE_SEPARATOR.join(self.examples):
            raise ValueError("rendered must equal the separator-joined examples")


def empty_context() -> ContextBlock:
    return ContextBlock(examples=(), source_ids=(), rendered="", token_estimate=0)


def assemble_context(
    retrieved: RetrievedSet,
    library: KnowledgeLibrary,
    budget: int | None = None,
    reverse_order: bool = False,
) -> ContextBlock:
    """Assemble retrieved items into a context block, most similar first.

    With a token ``budget``, whole examples are dropped from the tail (lowest
    similarity first) until the estimate fits; an example is never truncated
    internally. ``reverse_order`` flips the final display order to
    least-similar-first (an experimentation knob; dropping still removes the
    least similar examples).

    Raises:
        UnknownItemIdError: a retrieved id is not in the library.
        BudgetTooSmallError: even the single best example exceeds the budget.
    """
    examples = [format_example(library.get(e.item_id).triplet) for e in retrieved]
    source_ids = [e.item_id for e in retrieved]
    if budget is not None:
        while examples:
            estimate = estimate_tokens(EXAMPLE_SEPARATOR.join(examples))
            if estimate <= budget:
                break
            if len(examples) == 1:
                raise BudgetTooSmallError(
                    f"top example needs ~{estimate} tokens, budget is {budget}"
                )
            examples.pop()
            source_ids.pop()
    if reverse_order:
        examples.reverse()
        source_ids.reverse()
    rendered = EXAMPLE_SEPARATOR.join(examples)
    return ContextBlock(
        examples=tuple(examples),
        source_ids=tuple(source_ids),
        rendered=rendered,
        token_estimate=estimate_tokens(rendered),
    )


@dataclass(frozen=True)
class PromptEnvelope:
    """Everything needed to render the final prompt for one query."""

    query_question: str
    query_choices: tuple[str, ...] = ()
    query_image_ref: str | None = None
    context: ContextBlock = field(default_factory=empty_context)
    system_preamble: str = DEFAULT_SYSTEM_PREAMBLE
    instruction_suffix: str = DEFAULT_INSTRUCTION_SUFFIX

    def __post_init__(self):
        object.__setattr__(self, "query_choices", tuple(self.query_choices))
        if not self.query_question:
            raise ValueError("query_question must be non-empty")


def render_prompt(envelope: PromptEnvelope) -> str:
    """Render the full prompt; byte-identical across calls for equal input.

    Sections appear as: system preamble, context examples, the query's
    Question/Options block, instruction suffix. Empty sections are skipped.
    The query image, when any, travels out of band via the gateway request.
    """
    query_lines = [f"Question: {envelope.query_question}"]
    if envelope.query_choices:
        query_lines.append(f"Options: {format_options(envelope.query_choices)}")
    query_block = "\n".join(query_lines) + "\n"
    sections = [
        envelope.system_preamble,
        envelope.context.rendered,
        query_block,
        envelope.instruction_suffix,
    ]
    return "\n\n".join(s for s in sections if s)
