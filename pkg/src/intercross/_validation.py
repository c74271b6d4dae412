"""Input checks shared by the estimator facade and the command line."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus, load_corpus
from .exceptions import EmptyText, InvalidConfig, NonFiniteInput, UnknownToken


def check_corpus(corpus) -> Corpus:
    """Accept a :class:`Corpus` or a path to a generated corpus directory."""
    if isinstance(corpus, Corpus):
        return corpus
    if isinstance(corpus, (str, Path)):
        return load_corpus(corpus)
    raise InvalidConfig(f"expected a Corpus or a corpus directory, got {type(corpus).__name__}")


def check_frames(frames, D: int) -> np.ndarray:
    x = np.asarray(frames, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] != D or x.shape[0] < 1:
        raise InvalidConfig(f"frames must have shape (T>=1, {D}), got {x.shape}")
    if not np.isfinite(x).all():
        raise NonFiniteInput("frames contain NaN or infinity")
    return x


def check_frames_list(frames_list, D: int) -> list[np.ndarray]:
    if isinstance(frames_list, Corpus):
        frames_list = frames_list.frames
    return [check_frames(f, D) for f in frames_list]


def check_tokens(tokens: Sequence[int], vocab_size: int) -> list[int]:
    toks = [int(t) for t in tokens]
    if not toks:
        raise EmptyText("token sequence is empty")
    bad = [t for t in toks if not 0 <= t < vocab_size]
    if bad:
        raise UnknownToken(f"tokens {bad} outside vocabulary of size {vocab_size}")
    return toks


def parse_tokens(text: str) -> list[int]:
    """Parse ``"3 14 7"`` or ``"3,14,7"`` into token ids."""
    parts = text.replace(",", " ").split()
    try:
        return [int(p) for p in parts]
    except ValueError as exc:
        raise UnknownToken(f"could not parse token ids from {text!r}") from exc
