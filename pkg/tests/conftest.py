import numpy as np
import pytest
import torch

from intercross.corpus import CorpusConfig, FactorBank, FactorKind, StyleClassSpec, render_corpus

torch.set_num_threads(1)

SPEAKER = FactorKind.SPECTRAL_PROFILE
PROSODY = FactorKind.DURATION_RHYTHM
EMOTION = FactorKind.AMPLITUDE_ENVELOPE

SPARSE_SPEAKERS = ("M2", "M5", "F4", "F17")
SPARSE_PROSODIES = ("news", "story", "radio", "poetry", "call-center")
# rows: speakers, columns: prosodies; a sparse, non-parallel layout
SPARSE_MASK = [
    [0, 0, 0, 1, 0],
    [1, 1, 1, 1, 0],
    [0, 0, 0, 0, 1],
    [1, 0, 1, 1, 1],
]


def speaker_spec(n=4, prefix="S"):
    return StyleClassSpec("speaker", tuple(f"{prefix}{i}" for i in range(n)), SPEAKER)


def prosody_spec(n=3):
    return StyleClassSpec("prosody", tuple(f"P{i}" for i in range(n)), PROSODY)


def identity_bank(D=8, seed=0, multiplier=1.0):
    spec = (
        StyleClassSpec("speaker", ("s",), SPEAKER),
        StyleClassSpec("prosody", ("p",), PROSODY),
        StyleClassSpec("emotion", ("e",), EMOTION),
    )
    params = {
        "speaker": {"s": np.zeros(D)},
        "prosody": {"p": np.array([multiplier, 0.0])},
        "emotion": {"e": np.array([1.0, 0.0, 0.0])},
    }
    return FactorBank(spec, D, seed, params)


@pytest.fixture
def small_corpus():
    cfg = CorpusConfig(
        classes=(speaker_spec(3), prosody_spec(2)),
        seed=3, D=16, vocab_size=12, text_length=(3, 6), utterances_per_cell=4,
    )
    return render_corpus(cfg)


@pytest.fixture
def sparse_config():
    return CorpusConfig.from_dict({
        "seed": 5,
        "D": 16,
        "vocab_size": 12,
        "text_length": [3, 6],
        "utterances_per_cell": 6,
        "classes": [
            {"name": "speaker", "factor_kind": "SPECTRAL_PROFILE", "instance_ids": list(SPARSE_SPEAKERS)},
            {"name": "prosody", "factor_kind": "DURATION_RHYTHM", "instance_ids": list(SPARSE_PROSODIES)},
        ],
        "mask": SPARSE_MASK,
    })


ACCEPTANCE_LINES: list[str] = []


def record_criterion(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
