"""Optimisation loop, ORG/IT routing, checkpointing and few-shot fine-tuning."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .checkpoint import save_checkpoint
from .corpus import Corpus
from .exceptions import EmptyCorpus, InvalidConfig, NonFiniteLoss, UnknownClass
from .losses import total_loss
from .model import PARAMETER_GROUPS, ModelConfig, MultiReferenceTacotron, collate
from .sampler import build_index, sample_batch

log = logging.getLogger(__name__)

MODES = ("it", "org")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 16
    learning_rate: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_clip: float = 1.0
    seed: int = 0
    mode: str = "it"
    eval_every: int = 0
    checkpoint_every: int = 0
    log_every: int = 100
    freeze: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        self.mode = str(self.mode).lower()
        self.freeze = frozenset(self.freeze)
        self.adam_betas = tuple(self.adam_betas)
        if self.steps < 1:
            raise InvalidConfig("steps must be >= 1")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}, got {self.mode!r}")
        unknown = self.freeze - set(PARAMETER_GROUPS)
        if unknown:
            raise InvalidConfig(f"unknown parameter groups in freeze mask: {sorted(unknown)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["freeze"] = sorted(self.freeze)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    model: MultiReferenceTacotron
    metrics: list[dict]
    step: int
    class_names: list[str]
    instance_ids: list[list[str]]

    @property
    def final_loss(self) -> float:
        return self.metrics[-1]["total"]


def model_config_for(corpus: Corpus, **overrides) -> ModelConfig:
    return ModelConfig(
        N=len(corpus.spec),
        D=corpus.D,
        vocab_size=corpus.vocab_size,
        instance_counts=[len(c.instance_ids) for c in corpus.spec],
        **overrides,
    )


def apply_freeze(model: MultiReferenceTacotron, freeze) -> list[nn.Parameter]:
    """Toggle requires_grad per group; returns the trainable parameters."""
    trainable = []
    for group, params in model.parameter_groups().items():
        for _, p in params:
            p.requires_grad_(group not in freeze)
            if group not in freeze:
                trainable.append(p)
    return trainable


def make_optimizer(model: MultiReferenceTacotron, config: TrainConfig):
    trainable = apply_freeze(model, config.freeze)
    if not trainable:
        return None
    return torch.optim.Adam(trainable, lr=config.learning_rate, betas=config.adam_betas, eps=config.adam_eps)


def train_step(model: MultiReferenceTacotron, batch, optimizer, config: TrainConfig, step: int = 0) -> dict:
    """One teacher-forced gradient step; frozen groups are left untouched."""
    model.train()
    out = model(batch)
    total, breakdown = total_loss(out, batch, model.config.beta, model.config.gamma)
    if not math.isfinite(breakdown["total"]):
        raise NonFiniteLoss(step, breakdown)
    grad_norm = 0.0
    if optimizer is not None:
        optimizer.zero_grad(set_to_none=True)
        total.backward()
        params = [p for g in optimizer.param_groups for p in g["params"]]
        grad_norm = float(torch.nn.utils.clip_grad_norm_(params, config.grad_clip))
        if not math.isfinite(grad_norm):
            raise NonFiniteLoss(step, {**breakdown, "grad_norm": grad_norm})
        optimizer.step()
    return {"step": step, **breakdown, "grad_norm": grad_norm}


def _label_lookup(instance_ids: Sequence[Sequence[str]]):
    return [{inst: j for j, inst in enumerate(ids)} for ids in instance_ids]


def train_loop(
    corpus: Corpus,
    config: TrainConfig,
    model: MultiReferenceTacotron | None = None,
    model_config: ModelConfig | None = None,
    out_dir=None,
    instance_ids: Sequence[Sequence[str]] | None = None,
    start_step: int = 0,
) -> TrainResult:
    """Train on ``corpus``; ORG and IT modes differ only in the sampler.

    Deterministic for a fixed ``config.seed`` (single-threaded numerics).
    When ``out_dir`` is given, metrics go to ``metrics.jsonl`` and the final
    model to ``out_dir/checkpoint``.
    """
    if len(corpus) == 0:
        raise EmptyCorpus("training corpus is empty")
    torch.manual_seed(config.seed)
    if model is None:
        model = MultiReferenceTacotron(model_config or model_config_for(corpus))
    if model.config.N != len(corpus.spec):
        raise InvalidConfig(f"model has {model.config.N} sub-encoders, corpus has {len(corpus.spec)} classes")
    class_names = list(corpus.class_names)
    if instance_ids is None:
        instance_ids = [list(c.instance_ids) for c in corpus.spec]
    lookup = _label_lookup(instance_ids)
    index = build_index(corpus)
    rng = np.random.default_rng(config.seed)
    optimizer = make_optimizer(model, config)

    out = Path(out_dir) if out_dir is not None else None
    metrics_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out / "metrics.jsonl", "w")
    eval_batch = None
    if config.eval_every:
        eval_rng = np.random.default_rng([config.seed, 1])
        eval_batch = collate(corpus, sample_batch(index, eval_rng, config.batch_size, config.mode), lookup)

    metrics = []
    step = start_step
    try:
        for step in range(start_step + 1, start_step + config.steps + 1):
            examples = sample_batch(index, rng, config.batch_size, config.mode)
            batch = collate(corpus, examples, lookup)
            m = train_step(model, batch, optimizer, config, step)
            if eval_batch is not None and step % config.eval_every == 0:
                m["eval_total"] = evaluate_batch(model, eval_batch)
            metrics.append(m)
            if metrics_fh is not None:
                metrics_fh.write(json.dumps(m) + "\n")
            if config.log_every and step % config.log_every == 0:
                log.info("step %d total %.4f recon %.4f cls %.4f orth %.4f", step, m["total"], m["recon"], m["cls"], m["orth"])
            if out is not None and config.checkpoint_every and step % config.checkpoint_every == 0:
                save_checkpoint(out / f"checkpoint-{step:06d}", model, step=step,
                                class_names=class_names, instance_ids=instance_ids)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    model.eval()
    for p in model.parameters():
        p.requires_grad_(True)
    if out is not None:
        save_checkpoint(out / "checkpoint", model, step=step, class_names=class_names,
                        instance_ids=instance_ids, extra={"train_config": config.to_dict()})
    return TrainResult(model, metrics, step, class_names, [list(i) for i in instance_ids])


@torch.no_grad()
def evaluate_batch(model: MultiReferenceTacotron, batch) -> float:
    was_training = model.training
    model.eval()
    total, _ = total_loss(model(batch), batch, model.config.beta, model.config.gamma)
    model.train(was_training)
    return float(total)


def extend_classifier(model: MultiReferenceTacotron, n: int) -> None:
    """Append one zero-initialised output row to classification head ``n``."""
    old = model.classifiers[n]
    new = nn.Linear(old.in_features, old.out_features + 1)
    with torch.no_grad():
        new.weight.zero_()
        new.bias.zero_()
        new.weight[: old.out_features] = old.weight
        new.bias[: old.out_features] = old.bias
    model.classifiers[n] = new
    model.config.instance_counts[n] += 1


def fine_tune(
    model: MultiReferenceTacotron,
    class_names: Sequence[str],
    instance_ids: Sequence[Sequence[str]],
    adaptation: Corpus,
    config: TrainConfig,
    out_dir=None,
    start_step: int = 0,
) -> TrainResult:
    """Adapt to unseen style instances with the text encoder frozen.

    Every instance of the adaptation corpus unknown to the model gets a new
    zero-initialised row in its class's classification head.  Encoders and
    decoder are trained; ``text_encoder`` is always frozen.
    """
    if len(adaptation) == 0:
        raise EmptyCorpus("adaptation corpus is empty")
    if list(adaptation.class_names) != list(class_names):
        missing = set(adaptation.class_names) ^ set(class_names)
        raise UnknownClass(f"adaptation classes {adaptation.class_names} do not match model classes "
                           f"{list(class_names)} (mismatch: {sorted(missing)})")
    instance_ids = [list(ids) for ids in instance_ids]
    for n, name in enumerate(class_names):
        seen = sorted({r.labels[n] for r in adaptation.manifest.records})
        for inst in seen:
            if inst not in instance_ids[n]:
                extend_classifier(model, n)
                instance_ids[n].append(inst)
                log.info("class %s: added instance %s", name, inst)
    config = replace(config, freeze=frozenset(config.freeze) | {"text_encoder"})
    return train_loop(adaptation, config, model=model, out_dir=out_dir,
                      instance_ids=instance_ids, start_step=start_step)
