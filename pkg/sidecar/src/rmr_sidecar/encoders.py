"""Text and image encoders producing unit-norm float32 vectors in one space.

Two families:

``clip:<checkpoint>`` wraps a contrastively pretrained CLIP-class checkpoint
through sentence-transformers; this is the production default and the tag is
recorded verbatim in every output file.

``lexical-color-v1`` is a fully self-contained deterministic encoder for
offline work and tests. It aligns the two modalities by construction on a
narrow visual vocabulary: images map to color statistics (global mean/std
plus a 2x2 grid of means) and captions map to the same layout through a
color-word lexicon, with the remaining dimensions carrying hashed token
features for text-to-text similarity. It is not a trained model and makes no
claim beyond desk-scale sanity: matched color captions land closer to their
images than mismatched ones.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import EncoderLoadFailure, ImageDecodeError

LEXICAL_COLOR_TAG = "lexical-color-v1"
DEFAULT_CLIP_CHECKPOINT = "clip-ViT-B-32"

# prototype RGB per color word, 0..1
COLOR_LEXICON = {
    "red": (0.85, 0.15, 0.15),
    "green": (0.20, 0.70, 0.25),
    "blue": (0.15, 0.25, 0.85),
    "yellow": (0.90, 0.85, 0.15),
    "orange": (0.95, 0.55, 0.10),
    "purple": (0.55, 0.20, 0.70),
    "pink": (0.95, 0.60, 0.70),
    "cyan": (0.20, 0.80, 0.85),
    "teal": (0.10, 0.50, 0.50),
    "brown": (0.45, 0.30, 0.15),
    "magenta": (0.85, 0.15, 0.75),
    "white": (0.95, 0.95, 0.95),
    "black": (0.05, 0.05, 0.05),
    "gray": (0.50, 0.50, 0.50),
    "grey": (0.50, 0.50, 0.50),
}

# mean RGB (3) + std RGB (3) + 2x2 grid means (12) + homogeneous bias (1);
# the bias keeps brightness information after unit normalization, so dark
# and bright hues of similar direction (teal vs cyan) stay separable
_CHROMATIC_DIMS = 19
_LEXICAL_DIMS = 45
_LEXICAL_WEIGHT = 0.5

_TOKEN = re.compile(r"[a-z0-9]+")


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = float(np.sqrt(np.dot(vec, vec)))
    return vec / np.float32(norm) if norm > 0 else vec


class LexicalColorEncoder:
    """Deterministic aligned encoder over color words and pixel statistics."""

    tag = LEXICAL_COLOR_TAG
    dim = _CHROMATIC_DIMS + _LEXICAL_DIMS

    def _chromatic_from_rgb(self, mean_rgb, std_rgb, grid_rgb) -> np.ndarray:
        features = np.concatenate(
            [
                np.asarray(mean_rgb),
                np.asarray(std_rgb),
                np.asarray(grid_rgb).ravel(),
                [1.0],
            ]
        ).astype(np.float32)
        return _unit(features)

    def _lexical_from_tokens(self, tokens: list[str]) -> np.ndarray:
        features = np.zeros(_LEXICAL_DIMS, dtype=np.float32)
        for token in tokens:
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            bucket = int.from_bytes(digest[:4], "little") % _LEXICAL_DIMS
            sign = 1.0 if digest[4] & 1 else -1.0
            features[bucket] += sign
        return _unit(features)

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for row, text in enumerate(texts):
            tokens = _TOKEN.findall(text.lower())
            if not tokens and text.strip():
                tokens = [text.strip().lower()]
            if not tokens:
                raise ValueError("cannot encode empty text")
            prototypes = [COLOR_LEXICON[t] for t in tokens if t in COLOR_LEXICON]
            vec = np.zeros(self.dim, dtype=np.float32)
            if prototypes:
                mean_rgb = np.mean(prototypes, axis=0)
                grid = np.tile(mean_rgb, 4)
                vec[:_CHROMATIC_DIMS] = self._chromatic_from_rgb(
                    mean_rgb, (0.0, 0.0, 0.0), grid
                )
            vec[_CHROMATIC_DIMS:] = self._lexical_from_tokens(tokens) * np.float32(
                _LEXICAL_WEIGHT
            )
            out[row] = _unit(vec)
        return out

    def encode_images(self, paths: list[str]) -> np.ndarray:
        out = np.zeros((len(paths), self.dim), dtype=np.float32)
        for row, path in enumerate(paths):
            try:
                with Image.open(path) as img:
                    pixels = np.asarray(
                        img.convert("RGB").resize((32, 32), Image.BILINEAR),
                        dtype=np.float32,
                    ) / 255.0
            except (UnidentifiedImageError, OSError, ValueError) as exc:
                raise ImageDecodeError(f"cannot decode image {path}: {exc}") from exc
            mean_rgb = pixels.mean(axis=(0, 1))
            std_rgb = pixels.std(axis=(0, 1))
            grid = pixels.reshape(2, 16, 2, 16, 3).mean(axis=(1, 3))
            vec = np.zeros(self.dim, dtype=np.float32)
            vec[:_CHROMATIC_DIMS] = self._chromatic_from_rgb(mean_rgb, std_rgb, grid)
            out[row] = _unit(vec)
        return out


class ClipEncoder:
    """Contrastively pretrained CLIP-class checkpoint via sentence-transformers."""

    def __init__(self, checkpoint: str = DEFAULT_CLIP_CHECKPOINT):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise EncoderLoadFailure(
                "sentence-transformers is not installed; "
                "install the 'clip' extra or use the lexical-color-v1 encoder"
            ) from exc
        try:
            self._model = SentenceTransformer(checkpoint)
        except Exception as exc:
            raise EncoderLoadFailure(
                f"cannot load encoder checkpoint {checkpoint!r}: {exc}"
            ) from exc
        self.tag = checkpoint
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        vectors = self._model.encode(
            texts, convert_to_numpy=True, normalize_embeddings=True, batch_size=32
        )
        return np.asarray(vectors, dtype=np.float32)

    def encode_images(self, paths: list[str]) -> np.ndarray:
        images = []
        for path in paths:
            try:
                images.append(Image.open(path).convert("RGB"))
            except (UnidentifiedImageError, OSError) as exc:
                raise ImageDecodeError(f"cannot decode image {path}: {exc}") from exc
        vectors = self._model.encode(
            images, convert_to_numpy=True, normalize_embeddings=True, batch_size=32
        )
        for img in images:
            img.close()
        return np.asarray(vectors, dtype=np.float32)


def get_encoder(spec: str):
    """Resolve an encoder spec: ``lexical-color-v1`` or ``clip:<checkpoint>``."""
    if spec == LEXICAL_COLOR_TAG:
        return LexicalColorEncoder()
    if spec == "clip" or spec.startswith("clip:"):
        checkpoint = spec.split(":", 1)[1] if ":" in spec else DEFAULT_CLIP_CHECKPOINT
        return ClipEncoder(checkpoint)
    raise EncoderLoadFailure(
        f"unknown encoder {spec!r}; expected 'lexical-color-v1' or 'clip:<checkpoint>'"
    )
