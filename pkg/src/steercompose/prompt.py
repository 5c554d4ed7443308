"""Caption handling: ``<ref>`` tag parsing, toy tokenizer and toy text embeddings."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ComposerError, ConfigError

REF_TAG = "<ref>"
UNK = "<unk>"


class PromptError(ComposerError, ValueError):
    pass


class UnbalancedTagError(PromptError):
    pass


class EmptySpanError(PromptError):
    pass


def parse_tagged_prompt(text: str) -> tuple[list[str], set[int]]:
    """Strip ``<ref>`` tags from ``text``.

    Returns the remaining words and the indices (after tag removal) of every
    word that sat between an opening and a closing tag. Tags pair greedily
    left to right.

    >>> parse_tagged_prompt("a <ref> white fox <ref> here")
    (['a', 'white', 'fox', 'here'], {1, 2})
    """
    words: list[str] = []
    indices: set[int] = set()
    inside = False
    span_start = 0
    for piece in text.replace(REF_TAG, f" {REF_TAG} ").split():
        if piece != REF_TAG:
            if inside:
                indices.add(len(words))
            words.append(piece)
            continue
        if inside and len(words) == span_start:
            raise EmptySpanError(f"empty <ref> span in {text!r}")
        inside = not inside
        span_start = len(words)
    if inside:
        raise UnbalancedTagError(f"odd number of {REF_TAG} tags in {text!r}")
    return words, indices


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.tokens:
            raise ConfigError("vocabulary is empty")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def from_file(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        tokens = tuple(line.strip() for line in lines if line.strip())
        if not tokens:
            raise ConfigError(f"vocabulary file {path} is empty")
        return cls(tokens)

    def lookup(self, word: str) -> int:
        return self._index.get(word.lower(), 0)

    def __len__(self):
        return len(self.tokens)


def tokenize(words, vocab: Vocabulary) -> list[int]:
    return [vocab.lookup(w) for w in words]


# Words the procedural training captions draw from; id 0 stays the unknown token.
COLORS = ("red", "green", "blue", "yellow", "cyan", "magenta", "white", "black", "orange", "purple")
SHAPES = ("circle", "square", "triangle", "stripe", "ring")
DEFAULT_WORDS = (
    (UNK, "a", "an", "the", "of", "in", "on", "and", "with", "at", "photo", "painting",
     "cartoon", "animation", "background", "scene", "forest", "sky", "fox", "dog", "cat",
     "hat", "lemon", "tortoise", "building", "small", "large")
    + COLORS + SHAPES
)


def default_vocabulary() -> Vocabulary:
    return Vocabulary(DEFAULT_WORDS)


@dataclass(frozen=True)
class PromptSpec:
    tokens: tuple[int, ...]
    object_token_indices: frozenset[int]
    raw_text: str
    words: tuple[str, ...] = ()

    @classmethod
    def from_text(cls, text: str, vocab: Vocabulary | None = None) -> "PromptSpec":
        words, idx = parse_tagged_prompt(text)
        ids = tokenize(words, vocab or default_vocabulary())
        return cls(tuple(ids), frozenset(idx), text, tuple(words))

    @property
    def p(self) -> int:
        return len(self.tokens)


def embed(tokens, d_ctx: int, seed: int = 0) -> np.ndarray:
    """Deterministic toy text encoder, returns a ``(p, d_ctx)`` float64 matrix.

    Row ``i`` is the sum of a vector keyed by ``(token_id, seed)`` and a
    positional vector keyed by ``(i, seed)``, each with variance 1/2 so every
    entry has unit variance.
    """
    if d_ctx < 1:
        raise ConfigError("d_ctx must be >= 1")
    tokens = [int(t) for t in tokens]
    out = np.zeros((len(tokens), d_ctx))
    for i, tok in enumerate(tokens):
        word = np.random.default_rng([seed, 0, tok]).standard_normal(d_ctx)
        pos = np.random.default_rng([seed, 1, i]).standard_normal(d_ctx)
        out[i] = (word + pos) * np.sqrt(0.5)
    return out
