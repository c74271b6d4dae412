"""Multi-reference GST-Tacotron network.

One sub-encoder (reference encoder + style-token attention) per style class.
Style embeddings of all sub-encoders are broadcast over the text-encoder
outputs and concatenated to them, and the result is decoded autoregressively
``r`` frames per step with content-based additive attention.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .exceptions import InvalidConfig, NonFiniteInput, UnknownToken

PARAMETER_GROUPS = ("text_encoder", "reference_encoders", "style_token_layers", "classifiers", "decoder")


@dataclass
class ModelConfig:
    N: int
    D: int
    vocab_size: int
    instance_counts: list[int]
    d_ref: int = 64
    K: int = 10
    n_heads: int = 4
    d_style: int = 64
    d_text: int = 128
    r: int = 5
    beta: float = 1.0
    gamma: float = 0.02
    ref_channels: int = 8
    ref_layers: int = 3
    d_prenet: int = 64
    d_attention_rnn: int = 128
    d_attention: int = 64
    d_decoder_rnn: int = 128
    prenet_dropout: float = 0.5

    def __post_init__(self):
        self.instance_counts = [int(c) for c in self.instance_counts]
        if self.N < 1:
            raise InvalidConfig("N must be >= 1")
        if len(self.instance_counts) != self.N:
            raise InvalidConfig(f"instance_counts has {len(self.instance_counts)} entries for N={self.N}")
        if any(c < 1 for c in self.instance_counts):
            raise InvalidConfig("every style class needs at least one instance")
        if self.d_style % self.n_heads:
            raise InvalidConfig(f"d_style={self.d_style} is not divisible by n_heads={self.n_heads}")
        if self.r < 1 or self.K < 1:
            raise InvalidConfig("r and K must be >= 1")
        if self.d_text % 2:
            raise InvalidConfig("d_text must be even (bidirectional encoder)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "ModelConfig":
        return cls(**d)


class ReferenceEncoder(nn.Module):
    """Strided 2-D convolutions over (time, channel) followed by a GRU summary."""

    def __init__(self, D: int, d_ref: int, channels: int = 8, n_layers: int = 3):
        super().__init__()
        widths = [1] + [channels * 2**i for i in range(n_layers)]
        self.convs = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], kernel_size=3, stride=2, padding=1) for i in range(n_layers)
        )
        freq = D
        for _ in range(n_layers):
            freq = (freq + 1) // 2
        self.gru = nn.GRU(widths[-1] * freq, d_ref, batch_first=True)

    def forward(self, frames: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        x = frames.unsqueeze(1)
        lengths = lengths.clone()
        for conv in self.convs:
            x = F.relu(conv(x))
            lengths = (lengths + 1) // 2
            # zero the padded tail so batching never changes a row's result
            keep = torch.arange(x.shape[2], device=x.device)[None, :] < lengths[:, None]
            x = x * keep[:, None, :, None].to(x.dtype)
        B, C, T, Fq = x.shape
        x = x.permute(0, 2, 1, 3).reshape(B, T, C * Fq)
        out, _ = self.gru(x)
        return out[torch.arange(B), lengths - 1]


class StyleTokenLayer(nn.Module):
    """Multi-head attention from a reference embedding onto K style tokens."""

    def __init__(self, d_ref: int, K: int, d_style: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_style // n_heads
        tokens = torch.randn(K, self.d_head)
        self.tokens = nn.Parameter(tokens / tokens.norm(dim=1, keepdim=True))
        self.query = nn.Linear(d_ref, d_style, bias=False)
        self.key = nn.Linear(self.d_head, d_style, bias=False)
        self.value = nn.Linear(self.d_head, d_style, bias=False)

    def token_values(self) -> torch.Tensor:
        """Projected token values, (K, d_style); the space style embeddings live in."""
        return self.value(self.tokens)

    def forward(self, ref: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        B, K, H = ref.shape[0], self.tokens.shape[0], self.n_heads
        q = self.query(ref).view(B, H, self.d_head)
        k = self.key(self.tokens).view(K, H, self.d_head)
        v = self.value(self.tokens).view(K, H, self.d_head)
        scores = torch.einsum("bhd,khd->bhk", q, k) / math.sqrt(self.d_head)
        weights = torch.softmax(scores, dim=-1)
        style = torch.einsum("bhk,khd->bhd", weights, v).reshape(B, H * self.d_head)
        return style, weights


class TextEncoder(nn.Module):
    def __init__(self, vocab_size: int, d_text: int):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, d_text)
        self.rnn = nn.GRU(d_text, d_text // 2, batch_first=True, bidirectional=True)

    def forward(self, tokens: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        x = self.embedding(tokens)
        packed = pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, _ = self.rnn(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=tokens.shape[1])
        return out


class Decoder(nn.Module):
    """Autoregressive frame decoder with content-based additive attention."""

    def __init__(self, cfg: ModelConfig, d_memory: int):
        super().__init__()
        self.r, self.D = cfg.r, cfg.D
        self.dropout = cfg.prenet_dropout
        self.prenet1 = nn.Linear(cfg.D, cfg.d_prenet)
        self.prenet2 = nn.Linear(cfg.d_prenet, cfg.d_prenet)
        self.attention_rnn = nn.GRUCell(cfg.d_prenet + d_memory, cfg.d_attention_rnn)
        self.query_layer = nn.Linear(cfg.d_attention_rnn, cfg.d_attention, bias=False)
        self.memory_layer = nn.Linear(d_memory, cfg.d_attention)
        self.score = nn.Linear(cfg.d_attention, 1, bias=False)
        self.decoder_rnn = nn.GRUCell(cfg.d_attention_rnn + d_memory, cfg.d_decoder_rnn)
        self.frame_proj = nn.Linear(cfg.d_decoder_rnn + d_memory, cfg.r * cfg.D)
        self.stop_proj = nn.Linear(cfg.d_decoder_rnn + d_memory, cfg.r)

    def _prenet(self, x):
        x = F.dropout(F.relu(self.prenet1(x)), self.dropout, self.training)
        return F.dropout(F.relu(self.prenet2(x)), self.dropout, self.training)

    def _init_state(self, memory):
        B = memory.shape[0]
        z = memory.new_zeros
        return (
            z(B, self.attention_rnn.hidden_size),
            z(B, self.decoder_rnn.hidden_size),
            z(B, memory.shape[2]),
        )

    def _step(self, prev, state, memory, keys, mask):
        att_h, dec_h, context = state
        att_h = self.attention_rnn(torch.cat([self._prenet(prev), context], -1), att_h)
        e = self.score(torch.tanh(keys + self.query_layer(att_h)[:, None, :])).squeeze(-1)
        e = e.masked_fill(~mask, float("-inf"))
        align = torch.softmax(e, dim=-1)
        context = torch.bmm(align[:, None, :], memory).squeeze(1)
        dec_h = self.decoder_rnn(torch.cat([att_h, context], -1), dec_h)
        out = torch.cat([dec_h, context], -1)
        frames = self.frame_proj(out).view(-1, self.r, self.D)
        return frames, self.stop_proj(out), (att_h, dec_h, context), align

    def teacher_forced(self, memory, mask, target):
        """Decode ``ceil(T / r)`` steps feeding ground-truth frames back in."""
        B, T, D = target.shape
        steps = -(-T // self.r)
        padded = target.new_zeros(B, steps * self.r, D)
        padded[:, :T] = target
        keys = self.memory_layer(memory)
        state = self._init_state(memory)
        prev = target.new_zeros(B, D)
        frames, stops, aligns = [], [], []
        for s in range(steps):
            f, st, state, a = self._step(prev, state, memory, keys, mask)
            frames.append(f)
            stops.append(st)
            aligns.append(a)
            prev = padded[:, (s + 1) * self.r - 1]
        return torch.cat(frames, 1), torch.cat(stops, 1), torch.stack(aligns, 1)

    @torch.no_grad()
    def free_running(self, memory, mask, max_steps: int):
        """Decode until each item's stop probability exceeds 0.5.

        Returns frames, stop logits, per-item output lengths (frames up to and
        including the first stop frame) and a per-item max-steps flag.
        """
        B = memory.shape[0]
        keys = self.memory_layer(memory)
        state = self._init_state(memory)
        prev = memory.new_zeros(B, self.D)
        lengths = torch.full((B,), -1, dtype=torch.long)
        frames, stops, aligns = [], [], []
        for s in range(max_steps):
            f, st, state, a = self._step(prev, state, memory, keys, mask)
            frames.append(f)
            stops.append(st)
            aligns.append(a)
            prev = f[:, -1]
            fired = st > 0
            for b in range(B):
                if lengths[b] < 0 and bool(fired[b].any()):
                    lengths[b] = s * self.r + int(fired[b].nonzero()[0]) + 1
            if bool((lengths >= 0).all()):
                break
        exceeded = lengths < 0
        lengths[exceeded] = len(frames) * self.r
        return torch.cat(frames, 1), torch.cat(stops, 1), lengths, exceeded, torch.stack(aligns, 1)


class MultiReferenceTacotron(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        self.text_encoder = TextEncoder(c.vocab_size, c.d_text)
        self.reference_encoders = nn.ModuleList(
            ReferenceEncoder(c.D, c.d_ref, c.ref_channels, c.ref_layers) for _ in range(c.N)
        )
        self.style_token_layers = nn.ModuleList(
            StyleTokenLayer(c.d_ref, c.K, c.d_style, c.n_heads) for _ in range(c.N)
        )
        self.classifiers = nn.ModuleList(nn.Linear(c.d_ref, k) for k in c.instance_counts)
        self.decoder = Decoder(c, c.d_text + c.N * c.d_style)

    def parameter_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        groups = {g: [] for g in PARAMETER_GROUPS}
        for name, p in self.named_parameters():
            groups[name.split(".", 1)[0]].append((name, p))
        return groups

    def reference_embedding(self, n: int, frames, lengths):
        return self.reference_encoders[n](frames, lengths)

    def style_embedding(self, n: int, ref_emb):
        return self.style_token_layers[n](ref_emb)

    def memory(self, text, text_lengths, styles: Sequence[torch.Tensor]):
        enc = self.text_encoder(text, text_lengths)
        L = enc.shape[1]
        cond = torch.cat([s[:, None, :].expand(-1, L, -1) for s in styles], dim=-1)
        mask = torch.arange(L)[None, :] < text_lengths[:, None]
        return torch.cat([enc, cond], dim=-1), mask

    def forward(self, batch: "Batch") -> dict:
        ref_embs, styles, weights, logits = [], [], [], []
        for n, (frames, lengths) in enumerate(batch.references):
            h = self.reference_embedding(n, frames, lengths)
            s, w = self.style_embedding(n, h)
            ref_embs.append(h)
            styles.append(s)
            weights.append(w)
            logits.append(self.classifiers[n](h))
        memory, mask = self.memory(batch.text, batch.text_lengths, styles)
        pred, stop, align = self.decoder.teacher_forced(memory, mask, batch.target)
        return {
            "pred": pred,
            "stop_logits": stop,
            "ref_embs": ref_embs,
            "style_embs": styles,
            "attention_weights": weights,
            "class_logits": logits,
            "alignments": align,
        }

    @torch.no_grad()
    def synthesize(self, text, text_lengths, styles, max_steps: int):
        memory, mask = self.memory(text, text_lengths, styles)
        return self.decoder.free_running(memory, mask, max_steps)


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    text: torch.Tensor
    text_lengths: torch.Tensor
    references: list[tuple[torch.Tensor, torch.Tensor]]
    target: torch.Tensor
    target_lengths: torch.Tensor
    labels: torch.Tensor = field(default=None)

    def __len__(self):
        return int(self.text.shape[0])


def pad_frames(mats: Sequence[np.ndarray], dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    lengths = torch.tensor([m.shape[0] for m in mats], dtype=torch.long)
    out = torch.zeros(len(mats), int(lengths.max()), mats[0].shape[1], dtype=dtype)
    for i, m in enumerate(mats):
        out[i, : m.shape[0]] = torch.as_tensor(np.asarray(m), dtype=dtype)
    return out, lengths


def pad_tokens(texts: Sequence[Sequence[int]], vocab_size: int | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    if any(len(t) == 0 for t in texts):
        raise UnknownToken("empty token sequence")
    if vocab_size is not None:
        for t in texts:
            bad = [x for x in t if not 0 <= int(x) < vocab_size]
            if bad:
                raise UnknownToken(f"tokens {bad} outside vocabulary of size {vocab_size}")
    lengths = torch.tensor([len(t) for t in texts], dtype=torch.long)
    out = torch.zeros(len(texts), int(lengths.max()), dtype=torch.long)
    for i, t in enumerate(texts):
        out[i, : len(t)] = torch.as_tensor(list(t), dtype=torch.long)
    return out, lengths


def collate(corpus, examples, label_lookup=None, dtype=torch.float32) -> Batch:
    """Assemble padded tensors for a list of :class:`TrainingExample`.

    ``label_lookup`` maps instance ids to classification-head rows per class
    and defaults to the corpus's own instance order.
    """
    N = len(corpus.spec)
    records = corpus.manifest.records
    if label_lookup is None:
        label_lookup = [{inst: j for j, inst in enumerate(c.instance_ids)} for c in corpus.spec]
    targets = [ex.target for ex in examples]
    text, text_lengths = pad_tokens([records[t].text for t in targets])
    target, target_lengths = pad_frames([corpus.frames[t] for t in targets], dtype)
    refs = [pad_frames([corpus.frames[ex.references[n]] for ex in examples], dtype) for n in range(N)]
    labels = torch.tensor(
        [[label_lookup[n][records[t].labels[n]] for n in range(N)] for t in targets], dtype=torch.long
    )
    return Batch(text, text_lengths, refs, target, target_lengths, labels)


def check_finite(frames: torch.Tensor):
    if not bool(torch.isfinite(frames).all()):
        raise NonFiniteInput("reference frames contain NaN or infinity")
