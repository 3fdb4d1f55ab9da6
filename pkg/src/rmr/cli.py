"""Command-line interface.

Subcommands: build, retrieve, answer, eval, ablate. A JSON config file can
mirror any long flag (keys use underscores); explicit flags win over config
values. Exit codes: 0 success, 2 configuration error, 3 data error,
4 endpoint error.
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import subprocess
import sys
from pathlib import Path
from typing import Sequence

from .context import (
    PromptEnvelope,
    assemble_context,
    empty_context,
    render_prompt,
)
from .core import ModalityInput, build_library, fuse_embeddings
from .errors import (
    ConfigurationError,
    DataError,
    GatewayError,
    IoFailureError,
    RmrError,
)
from .gateway import Gateway, ModelEndpoint, extract_answer
from .harness import (
    emit_report,
    load_dataset,
    load_triplets,
    render_report_table,
    run_eval,
    run_k_sweep,
    run_modality_ablation,
)
from .index import load_index, save_index, top_k_retrieve
from .interchange import load_embedding_store, parse_embedding_record

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_ENDPOINT = 4


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset (None) options from the JSON config file, flags winning."""
    config_path = getattr(args, "config", None)
    if not config_path:
        return args
    try:
        with open(config_path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {config_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {config_path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigurationError(f"config {config_path} must hold a JSON object")
    for key, value in config.items():
        dest = key.replace("-", "_")
        if getattr(args, dest, None) is None:
            setattr(args, dest, value)
    return args


def _required(args: argparse.Namespace, name: str):
    value = getattr(args, name, None)
    if value is None:
        raise ConfigurationError(f"--{name.replace('_', '-')} is required")
    return value


def _endpoint_from_args(args: argparse.Namespace) -> ModelEndpoint:
    return ModelEndpoint(
        base_url=_required(args, "endpoint"),
        model_name=getattr(args, "model", None) or "default",
        api_key_env=getattr(args, "api_key_env", None),
        timeout=float(getattr(args, "timeout", None) or 60.0),
        max_retries=int(
            args.max_retries if getattr(args, "max_retries", None) is not None else 2
        ),
        temperature=float(getattr(args, "temperature", None) or 0.0),
    )


def _warn_on_tag_mismatch(obj: dict, expected_tag: str | None) -> None:
    tag = obj.get("encoder_tag")
    if expected_tag and tag and tag != expected_tag:
        logger.warning(
            "query embedding comes from %r but the index was built with %r",
            tag,
            expected_tag,
        )


def _query_modality_input(
    args: argparse.Namespace, expected_tag: str | None = None
) -> ModalityInput:
    """Obtain the query embedding from a pre-staged file or an embedder command."""
    embedding_path = getattr(args, "query_embedding", None)
    if embedding_path:
        try:
            with open(embedding_path, "r", encoding="utf-8") as fh:
                obj = json.load(fh)
        except OSError as exc:
            raise ConfigurationError(
                f"cannot read query embedding {embedding_path}: {exc}"
            ) from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"{embedding_path}: invalid JSON: {exc}") from exc
        _warn_on_tag_mismatch(obj, expected_tag)
        return parse_embedding_record(obj, where=str(embedding_path))[1]
    embedder_cmd = getattr(args, "embedder_cmd", None)
    text = getattr(args, "query_text", None) or getattr(args, "question", None)
    image = getattr(args, "query_image", None) or getattr(args, "image", None)
    if not embedder_cmd:
        raise ConfigurationError(
            "provide --query-embedding <file> or --embedder-cmd to compute one"
        )
    command = shlex.split(embedder_cmd)
    if text:
        command += ["--text", text]
    if image:
        command += ["--image", image]
    proc = subprocess.run(command, capture_output=True, text=True)
    if proc.returncode != 0:
        raise ConfigurationError(
            f"embedder command failed ({proc.returncode}): {proc.stderr.strip()}"
        )
    try:
        obj = json.loads(proc.stdout)
    except json.JSONDecodeError as exc:
        raise DataError(f"embedder command printed invalid JSON: {exc}") from exc
    _warn_on_tag_mismatch(obj, expected_tag)
    return parse_embedding_record(obj, where="embedder output")[1]


def cmd_build(args: argparse.Namespace) -> int:
    dataset_path = _required(args, "dataset")
    embeddings_path = _required(args, "embeddings")
    out_path = _required(args, "out")
    format_tag = args.format or "scienceqa_json"
    triplets = load_triplets(dataset_path, format_tag, split=args.split)
    store = load_embedding_store(embeddings_path)
    records = []
    for triplet in triplets:
        modality_input = store.get(triplet.id)
        if modality_input is None:
            logger.warning("no embedding for %r; skipping", triplet.id)
            continue
        records.append((triplet, modality_input))
    library = build_library(records, encoder_tag=store.encoder_tag)
    save_index(library, out_path)
    print(f"built index: {library.count} items, dim {library.dim} -> {out_path}")
    return EXIT_OK


def cmd_retrieve(args: argparse.Namespace) -> int:
    library = load_index(_required(args, "index"))
    modality_input = _query_modality_input(args, expected_tag=library.encoder_tag)
    query_vec = fuse_embeddings(modality_input.normalized())
    k = int(args.k if args.k is not None else 3)
    exclude = set(args.exclude_id or [])
    retrieved = top_k_retrieve(library, query_vec, k, exclude_ids=exclude or None)
    context = assemble_context(retrieved, library)
    for entry, example in zip(retrieved, context.examples):
        print(f"rank {entry.rank}  id={entry.item_id}  similarity={entry.similarity:.6f}")
        print(example)
    return EXIT_OK


def cmd_answer(args: argparse.Namespace) -> int:
    library = load_index(_required(args, "index"))
    question = _required(args, "question")
    k = int(args.k if args.k is not None else 3)
    if k > 0:
        modality_input = _query_modality_input(args, expected_tag=library.encoder_tag)
        query_vec = fuse_embeddings(modality_input.normalized())
        retrieved = top_k_retrieve(library, query_vec, k)
        context = assemble_context(retrieved, library)
    else:
        context = empty_context()
    choices = tuple(args.choice or [])
    envelope = PromptEnvelope(
        query_question=question,
        query_choices=choices,
        query_image_ref=args.image,
        context=context,
    )
    prompt = render_prompt(envelope)
    gateway = Gateway(_endpoint_from_args(args))
    completion = gateway.complete(prompt, image=args.image)
    print(completion.raw_text)
    if choices:
        extraction = extract_answer(completion.raw_text, choices)
        if extraction.choice_index is not None:
            letter = chr(ord("A") + extraction.choice_index)
            print(f"extracted: ({letter}) {choices[extraction.choice_index]}")
        else:
            print("extracted: none")
    return EXIT_OK


def _load_eval_inputs(args: argparse.Namespace):
    library = load_index(_required(args, "index"))
    format_tag = args.format or "scienceqa_json"
    records = load_dataset(_required(args, "dataset"), format_tag, split=args.split)
    embeddings = None
    if getattr(args, "embeddings", None):
        embeddings = load_embedding_store(args.embeddings)
    return library, records, embeddings


def _dataset_tag(args: argparse.Namespace) -> str:
    tag = f"{args.dataset} [{args.format or 'scienceqa_json'}]"
    return f"{tag} split={args.split}" if args.split else tag


def cmd_eval(args: argparse.Namespace) -> int:
    library, records, embeddings = _load_eval_inputs(args)
    k = int(args.k if args.k is not None else 3)
    trace_path = args.trace
    if trace_path is None and args.report:
        # traces are always kept for real runs so predictions stay inspectable
        trace_path = f"{args.report}.trace.jsonl"
    report = run_eval(
        records,
        library,
        _endpoint_from_args(args),
        k=k,
        embeddings=embeddings,
        modality_filter=args.modality_filter,
        exclusion_policy=args.exclusion_policy or "none",
        trace_path=trace_path,
        image_root=args.image_root,
        seed=int(args.seed or 0),
        dataset_tag=_dataset_tag(args),
    )
    report_format = args.report_format or "csv"
    if args.report:
        emit_report(report, report_format, args.report)
        print(f"wrote report -> {args.report}")
    sys.stdout.write(render_report_table([report], "csv"))
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    mode = _required(args, "mode")
    library, records, embeddings = _load_eval_inputs(args)
    endpoint = _endpoint_from_args(args)
    trace_dir = args.trace_dir
    if trace_dir is None and args.report:
        trace_dir = f"{args.report}.traces"
    if trace_dir is not None:
        Path(trace_dir).mkdir(parents=True, exist_ok=True)
    common = dict(
        embeddings=embeddings,
        exclusion_policy=args.exclusion_policy or "none",
        image_root=args.image_root,
        seed=int(args.seed or 0),
        trace_dir=trace_dir,
        dataset_tag=_dataset_tag(args),
    )
    if mode == "k":
        raw = args.k_values or "1,2,3,4,5"
        k_values = [int(part) for part in str(raw).split(",") if part != ""]
        reports = run_k_sweep(records, library, endpoint, k_values, **common)
    elif mode == "modality":
        k = int(args.k if args.k is not None else 3)
        reports = run_modality_ablation(records, library, endpoint, k=k, **common)
    else:
        raise ConfigurationError(f"unknown ablation mode {mode!r}")
    report_format = args.report_format or "csv"
    if args.report:
        emit_report(reports, report_format, args.report)
        print(f"wrote report -> {args.report}")
    sys.stdout.write(render_report_table(reports, "csv"))
    return EXIT_OK


def _add_endpoint_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--endpoint", help="chat-completion URL or mock:<mode>")
    parser.add_argument("--model", help="model name sent in requests")
    parser.add_argument("--api-key-env", help="environment variable holding the API key")
    parser.add_argument("--timeout", type=float, help="request timeout in seconds")
    parser.add_argument("--max-retries", type=int, help="retry count for transient failures")
    parser.add_argument("--temperature", type=float, help="sampling temperature (default 0)")


def _add_query_source_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--query-embedding", help="path to a pre-staged embedding record JSON")
    parser.add_argument(
        "--embedder-cmd",
        help="command that prints an embedding record JSON (e.g. 'rmr-embed query')",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rmr",
        description="Retrieval-augmented multimodal reasoning engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_build = sub.add_parser("build", help="build a knowledge library index")
    p_build.add_argument("--dataset", help="triplet source dataset file")
    p_build.add_argument("--format", choices=["scienceqa_json", "generic_jsonl"])
    p_build.add_argument("--split", help="keep only records with this split tag")
    p_build.add_argument("--embeddings", help="interchange JSONL with per-record embeddings")
    p_build.add_argument("--out", help="output index path")
    p_build.set_defaults(func=cmd_build)

    p_retrieve = sub.add_parser("retrieve", help="inspect top-k retrieval for a query")
    p_retrieve.add_argument("--index", help="index file")
    p_retrieve.add_argument("--query-text", help="query text (forwarded to the embedder)")
    p_retrieve.add_argument("--query-image", help="query image path (forwarded to the embedder)")
    p_retrieve.add_argument("-k", type=int, help="number of items to retrieve")
    p_retrieve.add_argument("--exclude-id", action="append", help="item id to exclude (repeatable)")
    _add_query_source_flags(p_retrieve)
    p_retrieve.set_defaults(func=cmd_retrieve)

    p_answer = sub.add_parser("answer", help="answer one question end to end")
    p_answer.add_argument("--index", help="index file")
    p_answer.add_argument("--question", help="the question text")
    p_answer.add_argument("--choice", action="append", help="answer choice (repeatable, in order)")
    p_answer.add_argument("--image", help="query image path")
    p_answer.add_argument("-k", type=int, help="number of examples to retrieve")
    _add_query_source_flags(p_answer)
    _add_endpoint_flags(p_answer)
    p_answer.set_defaults(func=cmd_answer)

    p_eval = sub.add_parser("eval", help="evaluate a dataset and score by category")
    p_eval.add_argument("--index", help="index file")
    p_eval.add_argument("--dataset", help="evaluation dataset file")
    p_eval.add_argument("--format", choices=["scienceqa_json", "generic_jsonl"])
    p_eval.add_argument("--split", help="keep only records with this split tag")
    p_eval.add_argument("--embeddings", help="interchange JSONL with query embeddings")
    p_eval.add_argument("-k", type=int, help="retrieval size (0 = no-retrieval baseline)")
    p_eval.add_argument("--report", help="report output path")
    p_eval.add_argument("--report-format", choices=["csv", "json", "markdown"])
    p_eval.add_argument("--trace", help="per-record JSONL trace path")
    p_eval.add_argument("--image-root", help="directory resolving record image refs")
    p_eval.add_argument(
        "--modality-filter", choices=["all", "t_and_i", "t"], help="record filter"
    )
    p_eval.add_argument(
        "--exclusion-policy", choices=["none", "exclude_exact_duplicate"]
    )
    p_eval.add_argument("--seed", type=int, help="run seed recorded in the manifest")
    _add_endpoint_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="k sweep or modality ablation")
    p_ablate.add_argument("--mode", choices=["k", "modality"])
    p_ablate.add_argument("--index", help="index file")
    p_ablate.add_argument("--dataset", help="evaluation dataset file")
    p_ablate.add_argument("--format", choices=["scienceqa_json", "generic_jsonl"])
    p_ablate.add_argument("--split", help="keep only records with this split tag")
    p_ablate.add_argument("--embeddings", help="interchange JSONL with query embeddings")
    p_ablate.add_argument("--k-values", help="comma-separated k list for mode=k")
    p_ablate.add_argument("-k", type=int, help="retrieval size for mode=modality")
    p_ablate.add_argument("--report", help="report output path")
    p_ablate.add_argument("--report-format", choices=["csv", "json", "markdown"])
    p_ablate.add_argument("--trace-dir", help="directory for per-run JSONL traces")
    p_ablate.add_argument("--image-root", help="directory resolving record image refs")
    p_ablate.add_argument(
        "--exclusion-policy", choices=["none", "exclude_exact_duplicate"]
    )
    p_ablate.add_argument("--seed", type=int, help="run seed recorded in the manifest")
    _add_endpoint_flags(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    for sub_parser in (p_build, p_retrieve, p_answer, p_eval, p_ablate):
        sub_parser.add_argument("--config", help="JSON config file mirroring these flags")

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _merge_config(args)
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, IoFailureError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GatewayError as exc:
        print(f"endpoint error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except RmrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
