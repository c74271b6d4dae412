"""Style extraction, transfer, interpolation and random sampling on a trained model.

Everything here runs the model in eval mode without gradients, so results
are deterministic for fixed parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .corpus import BASE_FRAMES_PER_TOKEN
from .exceptions import AlphaOutOfRange, InvalidConfig
from .model import MultiReferenceTacotron, check_finite, pad_frames, pad_tokens


def _dtype(model) -> torch.dtype:
    return next(model.parameters()).dtype


def _frames_tensor(model, frames) -> tuple[torch.Tensor, torch.Tensor]:
    x = torch.as_tensor(np.asarray(frames), dtype=_dtype(model))
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] != model.config.D:
        raise InvalidConfig(f"expected frames of shape (T>=1, {model.config.D}), got {tuple(x.shape)}")
    check_finite(x)
    return x[None], torch.tensor([x.shape[0]])


def _check_class(model, n: int):
    if not 0 <= n < model.config.N:
        raise InvalidConfig(f"style class index {n} out of range for N={model.config.N}")


@torch.no_grad()
def reference_encode(model: MultiReferenceTacotron, n: int, frames) -> np.ndarray:
    _check_class(model, n)
    model.eval()
    x, lengths = _frames_tensor(model, frames)
    return model.reference_embedding(n, x, lengths)[0].numpy()


@torch.no_grad()
def style_attend(model: MultiReferenceTacotron, n: int, ref_emb) -> tuple[np.ndarray, np.ndarray]:
    """Style embedding and its (K, n_heads) attention weights."""
    _check_class(model, n)
    model.eval()
    h = torch.as_tensor(np.asarray(ref_emb), dtype=_dtype(model))[None]
    style, weights = model.style_embedding(n, h)
    return style[0].numpy(), weights[0].T.numpy()


@torch.no_grad()
def text_encode(model: MultiReferenceTacotron, tokens: Sequence[int]) -> np.ndarray:
    model.eval()
    text, lengths = pad_tokens([list(tokens)], model.config.vocab_size)
    return model.text_encoder(text, lengths)[0].numpy()


def extract_style(model: MultiReferenceTacotron, n: int, frames) -> np.ndarray:
    """Sub-encoder ``n``'s style embedding of one reference."""
    return style_attend(model, n, reference_encode(model, n, frames))[0]


@torch.no_grad()
def extract_styles(model: MultiReferenceTacotron, n: int, frames_list: Sequence[np.ndarray],
                   batch_size: int = 128, return_reference: bool = False):
    """Batched :func:`extract_style`; returns an (M, d_style) array."""
    _check_class(model, n)
    model.eval()
    styles, refs = [], []
    for i in range(0, len(frames_list), batch_size):
        x, lengths = pad_frames(frames_list[i:i + batch_size], _dtype(model))
        check_finite(x)
        h = model.reference_embedding(n, x, lengths)
        styles.append(model.style_embedding(n, h)[0].numpy())
        refs.append(h.numpy())
    styles = np.concatenate(styles) if styles else np.zeros((0, model.config.d_style))
    if return_reference:
        refs = np.concatenate(refs) if refs else np.zeros((0, model.config.d_ref))
        return styles, refs
    return styles


def interpolate(se_from, se_to, alpha: float) -> np.ndarray:
    """Linear interpolation ``se_from + alpha * (se_to - se_from)``, alpha in [0, 1]."""
    if not 0.0 <= alpha <= 1.0 or math.isnan(alpha):
        raise AlphaOutOfRange(f"alpha must lie in [0, 1], got {alpha}")
    a = np.asarray(se_from)
    b = np.asarray(se_to)
    if a.shape != b.shape:
        raise InvalidConfig(f"style embeddings differ in shape: {a.shape} vs {b.shape}")
    if alpha == 1.0:
        return b.copy()
    return a + alpha * (b - a)


@torch.no_grad()
def random_style(model: MultiReferenceTacotron, n: int, rng: np.random.Generator,
                 logits: Sequence[float] | None = None) -> np.ndarray:
    """Softmax-weighted mix of sub-encoder ``n``'s projected token values.

    Mixing logits are drawn i.i.d. from U(0, 1) unless given.
    """
    _check_class(model, n)
    values = model.style_token_layers[n].token_values().double().numpy()
    a = rng.uniform(0.0, 1.0, size=values.shape[0]) if logits is None else np.asarray(logits, dtype=float)
    w = np.exp(a - a.max())
    w /= w.sum()
    return (w @ values).astype(np.float32)


@dataclass
class Synthesis:
    frames: np.ndarray
    stop_logits: np.ndarray
    max_steps_exceeded: bool

    @property
    def length(self) -> int:
        return int(self.frames.shape[0])


def default_max_steps(n_tokens: int, r: int) -> int:
    # longest rendered token is 2x the base rate; leave 2x headroom on top
    return 1 + math.ceil(n_tokens * BASE_FRAMES_PER_TOKEN * 2 * 2 / r)


@torch.no_grad()
def synthesize_batch(model: MultiReferenceTacotron, style_embs: Sequence[Sequence[np.ndarray]],
                     texts: Sequence[Sequence[int]], max_steps: int | None = None) -> list[Synthesis]:
    """Free-running decode; ``style_embs[i]`` holds one embedding per class for item i."""
    if len(style_embs) != len(texts):
        raise InvalidConfig("need one set of style embeddings per text")
    model.eval()
    dtype = _dtype(model)
    N = model.config.N
    for embs in style_embs:
        if len(embs) != N:
            raise InvalidConfig(f"expected {N} style embeddings, got {len(embs)}")
    text, lengths = pad_tokens([list(t) for t in texts], model.config.vocab_size)
    styles = [
        torch.as_tensor(np.stack([np.asarray(e[n]) for e in style_embs]), dtype=dtype) for n in range(N)
    ]
    if max_steps is None:
        max_steps = default_max_steps(int(lengths.max()), model.config.r)
    frames, stops, out_len, exceeded, _ = model.synthesize(text, lengths, styles, max_steps)
    return [
        Synthesis(frames[b, : out_len[b]].numpy(), stops[b, : out_len[b]].numpy(), bool(exceeded[b]))
        for b in range(len(texts))
    ]


def synthesize(model: MultiReferenceTacotron, style_embs: Sequence[np.ndarray], text: Sequence[int],
               max_steps: int | None = None) -> Synthesis:
    return synthesize_batch(model, [style_embs], [text], max_steps)[0]


def transfer(model: MultiReferenceTacotron, refs: Sequence[np.ndarray], text: Sequence[int],
             max_steps: int | None = None) -> Synthesis:
    """Synthesize ``text`` taking class ``n``'s style from ``refs[n]``."""
    if len(refs) != model.config.N:
        raise InvalidConfig(f"expected {model.config.N} reference utterances, got {len(refs)}")
    embs = [extract_style(model, n, f) for n, f in enumerate(refs)]
    return synthesize(model, embs, text, max_steps)


def transfer_batch(model: MultiReferenceTacotron, refs: Sequence[Sequence[np.ndarray]],
                   texts: Sequence[Sequence[int]], max_steps: int | None = None) -> list[Synthesis]:
    """Batched :func:`transfer`; ``refs[i][n]`` is item i's reference for class n."""
    N = model.config.N
    per_class = [extract_styles(model, n, [r[n] for r in refs]) for n in range(N)]
    embs = [[per_class[n][i] for n in range(N)] for i in range(len(refs))]
    return synthesize_batch(model, embs, texts, max_steps)
