"""Reference/target pair construction for ORG and intercross training.

All samplers are target-first: a target utterance is drawn uniformly over the
corpus, then one reference per style class is drawn uniformly, with
replacement, from the group of utterances sharing the target's instance of
that class.  The target may be its own reference.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .corpus import Corpus
from .exceptions import EmptyCorpus, InvalidConfig


@dataclass(frozen=True)
class TrainingExample:
    """Record indices into the corpus the index was built from."""

    references: tuple[int, ...]
    target: int


@dataclass(frozen=True)
class InstanceIndex:
    class_names: tuple[str, ...]
    instance_ids: tuple[tuple[str, ...], ...]
    # groups[n][instance_id] -> record indices sorted by utt_id
    groups: tuple[dict[str, np.ndarray], ...]
    # labels[i, n] -> instance id of record i in class n
    labels: tuple[tuple[str, ...], ...]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_records(self) -> int:
        return len(self.labels)

    def group(self, n: int, instance: str) -> np.ndarray:
        return self.groups[n][instance]


def build_index(corpus: Corpus) -> InstanceIndex:
    records = corpus.manifest.records
    order = sorted(range(len(records)), key=lambda i: records[i].utt_id)
    groups = []
    for n, _ in enumerate(corpus.spec):
        members: dict[str, list[int]] = {}
        for i in order:
            members.setdefault(records[i].labels[n], []).append(i)
        groups.append({k: np.asarray(v, dtype=np.int64) for k, v in members.items()})
    return InstanceIndex(
        tuple(corpus.class_names),
        tuple(c.instance_ids for c in corpus.spec),
        tuple(groups),
        tuple(r.labels for r in records),
    )


def _draw_target(index: InstanceIndex, rng: np.random.Generator) -> int:
    if index.n_records == 0:
        raise EmptyCorpus("cannot sample from an empty corpus")
    return int(rng.integers(index.n_records))


def sample_org_pair(index: InstanceIndex, rng: np.random.Generator) -> TrainingExample:
    """Autoencoding pair: every reference is the target itself."""
    t = _draw_target(index, rng)
    return TrainingExample((t,) * index.n_classes, t)


def sample_intercross_multi(index: InstanceIndex, rng: np.random.Generator, N: int | None = None) -> TrainingExample:
    if N is None:
        N = index.n_classes
    if N != index.n_classes:
        raise InvalidConfig(f"N={N} but the corpus has {index.n_classes} style classes")
    t = _draw_target(index, rng)
    refs = []
    for n in range(N):
        group = index.groups[n][index.labels[t][n]]
        # the target belongs to every one of its own groups
        assert len(group) > 0
        refs.append(int(group[rng.integers(len(group))]))
    return TrainingExample(tuple(refs), t)


def sample_intercross_single(index: InstanceIndex, rng: np.random.Generator) -> TrainingExample:
    if index.n_classes != 1:
        raise InvalidConfig("single-reference intercross sampling needs exactly one style class")
    return sample_intercross_multi(index, rng, 1)


SAMPLERS = {"org": sample_org_pair, "it": sample_intercross_multi}


def sample_batch(index: InstanceIndex, rng: np.random.Generator, batch_size: int, mode: str = "it") -> list[TrainingExample]:
    try:
        draw = SAMPLERS[mode.lower()]
    except KeyError:
        raise InvalidConfig(f"unknown sampling mode {mode!r}; expected one of {sorted(SAMPLERS)}") from None
    return [draw(index, rng) for _ in range(batch_size)]


def shared_instance_violations(index: InstanceIndex, example: TrainingExample) -> int:
    target = index.labels[example.target]
    return sum(index.labels[r][n] != target[n] for n, r in enumerate(example.references))


def enumerate_pair_distribution(corpus: Corpus, n: int, mode: str = "it") -> dict[tuple[int, int], float]:
    """Exact P(target, reference_n) by scanning labels, without the index."""
    records = corpus.manifest.records
    M = len(records)
    probs: dict[tuple[int, int], float] = {}
    for t in range(M):
        if mode == "org":
            probs[(t, t)] = 1.0 / M
            continue
        mates = [r for r in range(M) if records[r].labels[n] == records[t].labels[n]]
        for r in mates:
            probs[(t, r)] = 1.0 / (M * len(mates))
    return probs


def audit(corpus: Corpus, draws: int = 10_000, seed: int = 0, mode: str = "it") -> dict:
    """Draw ``draws`` examples and compare against the exact distribution.

    Returns per-class chi-square p-values of the joint (target, reference)
    counts plus the number of shared-instance violations.
    """
    index = build_index(corpus)
    rng = np.random.default_rng(seed)
    examples = sample_batch(index, rng, draws, mode)
    violations = sum(shared_instance_violations(index, ex) for ex in examples)
    report = {"mode": mode, "draws": draws, "records": len(corpus), "violations": int(violations), "classes": {}}
    for n, name in enumerate(index.class_names):
        expected = enumerate_pair_distribution(corpus, n, mode)
        counts = Counter((ex.target, ex.references[n]) for ex in examples)
        outside = sum(c for k, c in counts.items() if k not in expected)
        cells = sorted(expected)
        obs = np.array([counts.get(c, 0) for c in cells], dtype=float)
        exp = np.array([expected[c] for c in cells]) * draws
        if len(cells) > 1:
            p = float(stats.chisquare(obs, exp).pvalue)
        else:
            p = 1.0
        report["classes"][name] = {
            "cells": len(cells),
            "chi2_pvalue": p,
            "outside_support": int(outside),
            "group_sizes": {k: int(len(v)) for k, v in index.groups[n].items()},
        }
    return report
