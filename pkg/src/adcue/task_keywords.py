"""Task-pertinence features for the Cookie Theft description task: elementwise
correlation between the utterance embedding and a pooled keyword embedding.

Keyword list files are plain text, one word per line, with "[nouns]" and
"[verbs]" section headers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn_core import ShapeError

CATEGORIES = ("none", "nouns", "verbs", "nouns+verbs")

# Standard Cookie Theft content units; overridable via keyword file.
DEFAULT_NOUNS = (
    "boy", "girl", "woman", "mother", "cookie", "jar", "stool", "sink",
    "water", "plate", "dish", "curtain", "window", "kitchen", "cabinet",
    "floor",
)
DEFAULT_VERBS = (
    "take", "steal", "fall", "wobble", "wash", "dry", "overflow", "reach",
    "hand", "ignore", "stand",
)

KEYWORD_LIST_VERSION = 1


@dataclass
class KeywordList:
    category: str
    words: tuple[str, ...]

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown keyword category {self.category!r}")
        if (self.category == "none") != (len(self.words) == 0):
            raise ValueError("category 'none' iff word list is empty")
        if any(w != w.lower() for w in self.words):
            raise ValueError("keywords must be lowercase")
        if len(set(self.words)) != len(self.words):
            raise ValueError("keywords must be unique")


def default_cookie_theft_keywords(category: str) -> KeywordList:
    if category == "none":
        return KeywordList("none", ())
    if category == "nouns":
        return KeywordList("nouns", DEFAULT_NOUNS)
    if category == "verbs":
        return KeywordList("verbs", DEFAULT_VERBS)
    if category == "nouns+verbs":
        return KeywordList("nouns+verbs", DEFAULT_NOUNS + DEFAULT_VERBS)
    raise ValueError(f"unknown keyword category {category!r}")


def load_keyword_file(path, category: str = "nouns+verbs") -> KeywordList:
    """Parse a "[nouns]" / "[verbs]" sectioned word file and select a category."""
    sections: dict[str, list[str]] = {"nouns": [], "verbs": []}
    current: list[str] | None = None
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1]
            if name not in sections:
                raise ValueError(f"{path}: unknown section [{name}]")
            current = sections[name]
            continue
        if current is None:
            raise ValueError(f"{path}: word {line!r} before any section header")
        current.append(line.lower())
    if category == "none":
        return KeywordList("none", ())
    if category == "nouns":
        words = sections["nouns"]
    elif category == "verbs":
        words = sections["verbs"]
    else:
        words = sections["nouns"] + sections["verbs"]
    return KeywordList(category, tuple(dict.fromkeys(words)))


def save_keyword_file(path, nouns, verbs) -> None:
    lines = [f"# keyword list v{KEYWORD_LIST_VERSION}", "[nouns]", *nouns,
             "[verbs]", *verbs, ""]
    Path(path).write_text("\n".join(lines))


# ---------------------------------------------------------------------------
# Embedding pooling and correlation


def _token_mean(tensor: np.ndarray, layer: int) -> np.ndarray:
    tensor = np.asarray(tensor)
    if tensor.ndim != 3 or tensor.shape[1] == 0:
        raise ShapeError(f"expected nonempty (L, tokens, H) tensor, got {tensor.shape}")
    if not (0 <= layer < tensor.shape[0]):
        raise ShapeError(f"layer {layer} out of range (L={tensor.shape[0]})")
    return tensor[layer].mean(axis=0)


def keyword_embedding(per_keyword_tensors: list[np.ndarray], layer: int,
                      hidden: int | None = None) -> np.ndarray:
    """Token-mean per keyword at the chosen layer, then mean over keywords.
    An empty keyword set (category 'none') yields the zero vector; `hidden`
    must then be given to size it."""
    if not per_keyword_tensors:
        if hidden is None:
            raise ShapeError("empty keyword set requires an explicit hidden size")
        return np.zeros(hidden, dtype=np.float32)
    vecs = [_token_mean(t, layer) for t in per_keyword_tensors]
    return np.mean(np.stack(vecs), axis=0)


def utterance_embedding(text_segments: list[np.ndarray], layer: int) -> np.ndarray:
    """Token-mean per segment at the chosen layer, then mean over segments."""
    if not text_segments:
        raise ShapeError("utterance_embedding needs at least one text segment")
    vecs = [_token_mean(t, layer) for t in text_segments]
    return np.mean(np.stack(vecs), axis=0)


def correlation(z_u: np.ndarray, z_k: np.ndarray) -> np.ndarray:
    """Elementwise product of utterance and keyword embeddings."""
    z_u = np.asarray(z_u)
    z_k = np.asarray(z_k)
    if z_u.shape != z_k.shape:
        raise ShapeError(f"correlation: {z_u.shape} vs {z_k.shape}")
    return z_u * z_k


def correlation_tensor(text_segments: list[np.ndarray], z_k: np.ndarray,
                       layer: int) -> np.ndarray:
    """Speaker correlation vector packaged as a (1, 1, H) tensor so the
    standard feature head (trivial aggregation/pooling, shared projector
    machinery) can train on it like any other modality."""
    z_u = utterance_embedding(text_segments, layer)
    return correlation(z_u, z_k)[None, None, :].astype(np.float32)
