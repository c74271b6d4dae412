"""Synthetic factorized corpus with known generative style factors.

Every utterance is rendered from a token sequence and one style instance per
style class.  Each class drives exactly one kind of factor:

* ``SPECTRAL_PROFILE``   additive per-channel offset (the "speaker" analog)
* ``DURATION_RHYTHM``    frames-per-token multiplier plus a token-rate
                         amplitude rhythm (the "prosody" analog)
* ``AMPLITUDE_ENVELOPE`` global gain plus attack/decay shaping (the "emotion"
                         analog)

Frame layout (``D`` channels)::

    frames[t] = gain * (e0 + offset + c_k * nuisance + a_i * template[token_i] * s_k)

where ``e0`` is a unit carrier on channel 0, ``offset`` is zero on channel 0,
``s_k = sin(2*pi*(k + 0.5) / L)`` and ``c_k = cos(...)`` are zero-mean over
the ``L`` frames of a token, ``a_i`` folds rhythm and envelope per token and
``nuisance`` is per-utterance variation that belongs to no style class: a
random scalar times one corpus-wide channel direction.  It never moves a
factor statistic, so every factor stays exactly recoverable from frames
(see :func:`factor_statistics`), but it does make utterances of one instance
differ in ways only the utterance itself can explain.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import (
    CorruptFrames,
    EmptyText,
    InvalidConfig,
    IoFailure,
    MissingFile,
    SeparationUnachievable,
    UnknownInstance,
    UnknownToken,
)

FORMAT_VERSION = 1
BASE_FRAMES_PER_TOKEN = 4
HEADER_FILE = "header.json"
MANIFEST_FILE = "manifest.jsonl"

_MASK64 = (1 << 64) - 1


class FactorKind(str, enum.Enum):
    SPECTRAL_PROFILE = "SPECTRAL_PROFILE"
    DURATION_RHYTHM = "DURATION_RHYTHM"
    AMPLITUDE_ENVELOPE = "AMPLITUDE_ENVELOPE"


DEFAULT_SEPARATION_FLOOR = {
    FactorKind.SPECTRAL_PROFILE: 1.0,
    FactorKind.DURATION_RHYTHM: 0.25,
    FactorKind.AMPLITUDE_ENVELOPE: 0.25,
}


@dataclass(frozen=True)
class StyleClassSpec:
    name: str
    instance_ids: tuple[str, ...]
    factor_kind: FactorKind

    def __post_init__(self):
        object.__setattr__(self, "instance_ids", tuple(str(i) for i in self.instance_ids))
        object.__setattr__(self, "factor_kind", FactorKind(self.factor_kind))
        if not self.instance_ids:
            raise InvalidConfig(f"style class {self.name!r} has no instances")
        if len(set(self.instance_ids)) != len(self.instance_ids):
            raise InvalidConfig(f"style class {self.name!r} has duplicate instance ids")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "instance_ids": list(self.instance_ids),
            "factor_kind": self.factor_kind.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "StyleClassSpec":
        ids = d.get("instance_ids", d.get("instances"))
        if ids is None:
            raise InvalidConfig(f"style class entry {d!r} lacks instance_ids")
        return cls(str(d["name"]), tuple(ids), FactorKind(d["factor_kind"]))


def check_spec(spec: Sequence[StyleClassSpec]) -> tuple[StyleClassSpec, ...]:
    spec = tuple(spec)
    if not spec:
        raise InvalidConfig("at least one style class is required")
    names = [c.name for c in spec]
    if len(set(names)) != len(names):
        raise InvalidConfig(f"duplicate style class names: {names}")
    kinds = [c.factor_kind for c in spec]
    if len(set(kinds)) != len(kinds):
        raise InvalidConfig(f"factor kinds must be distinct across classes: {kinds}")
    return spec


def _seed_words(seed: int) -> int:
    return int(seed) & _MASK64


# ---------------------------------------------------------------------------
# factor bank


@dataclass(frozen=True)
class RenderFactors:
    """Resolved per-utterance rendering parameters (identity defaults)."""

    offset: np.ndarray
    multiplier: float = 1.0
    rhythm_depth: float = 0.0
    gain: float = 1.0
    attack: float = 0.0
    decay: float = 0.0

    @property
    def frames_per_token(self) -> int:
        return frames_per_token(self.multiplier)


def frames_per_token(multiplier: float) -> int:
    # round-half-up; Python's round() is banker's rounding
    return max(1, int(math.floor(BASE_FRAMES_PER_TOKEN * multiplier + 0.5)))


def _draw_instance(kind: FactorKind, rng: np.random.Generator, D: int) -> np.ndarray:
    if kind is FactorKind.SPECTRAL_PROFILE:
        vec = np.zeros(D)
        vec[1:] = rng.normal(0.0, 0.5, size=D - 1)
        return vec
    if kind is FactorKind.DURATION_RHYTHM:
        return np.array([rng.uniform(0.5, 2.0), rng.uniform(0.0, 0.5)])
    return np.array([rng.uniform(0.5, 2.0), rng.uniform(0.0, 0.8), rng.uniform(0.0, 0.8)])


@dataclass
class FactorBank:
    spec: tuple[StyleClassSpec, ...]
    D: int
    seed: int
    params: dict[str, dict[str, np.ndarray]]
    separation_floor: dict[FactorKind, float] = field(default_factory=dict)

    def class_spec(self, name: str) -> StyleClassSpec:
        for c in self.spec:
            if c.name == name:
                return c
        raise UnknownInstance(f"unknown style class {name!r}")

    def resolve(self, labels: Sequence[str]) -> RenderFactors:
        labels = tuple(labels)
        if len(labels) != len(self.spec):
            raise UnknownInstance(
                f"expected {len(self.spec)} labels (one per class), got {len(labels)}"
            )
        kw: dict = {"offset": np.zeros(self.D)}
        for cls, inst in zip(self.spec, labels):
            try:
                vec = self.params[cls.name][inst]
            except KeyError:
                raise UnknownInstance(f"unknown instance {inst!r} for class {cls.name!r}") from None
            if cls.factor_kind is FactorKind.SPECTRAL_PROFILE:
                kw["offset"] = vec
            elif cls.factor_kind is FactorKind.DURATION_RHYTHM:
                kw["multiplier"], kw["rhythm_depth"] = float(vec[0]), float(vec[1])
            else:
                kw["gain"], kw["attack"], kw["decay"] = (float(v) for v in vec)
        return RenderFactors(**kw)

    def instance_statistic(self, class_name: str, instance: str):
        """Ground-truth value of the factor statistic a class controls."""
        cls = self.class_spec(class_name)
        try:
            vec = self.params[class_name][instance]
        except KeyError:
            raise UnknownInstance(f"unknown instance {instance!r} for class {class_name!r}") from None
        if cls.factor_kind is FactorKind.SPECTRAL_PROFILE:
            return vec[1:].copy()
        if cls.factor_kind is FactorKind.DURATION_RHYTHM:
            return float(frames_per_token(vec[0]))
        return float(vec[0])


def make_factor_bank(
    spec: Sequence[StyleClassSpec],
    seed: int,
    D: int = 32,
    separation_floor: Mapping | None = None,
    max_retries: int = 1000,
) -> FactorBank:
    """Draw one parameter vector per (class, instance), deterministically.

    Instances of a class are drawn in order; a draw closer than the class's
    separation floor to any earlier instance is redrawn, at most
    ``max_retries`` times.
    """
    spec = check_spec(spec)
    if D < 2:
        raise InvalidConfig("frame dimension D must be >= 2")
    floors = dict(DEFAULT_SEPARATION_FLOOR)
    for k, v in (separation_floor or {}).items():
        floors[FactorKind(k)] = float(v)
    params: dict[str, dict[str, np.ndarray]] = {}
    for ci, cls in enumerate(spec):
        rng = np.random.default_rng([_seed_words(seed), 0xFAC7, ci])
        floor = floors[cls.factor_kind]
        drawn: dict[str, np.ndarray] = {}
        for inst in cls.instance_ids:
            for _ in range(max_retries + 1):
                vec = _draw_instance(cls.factor_kind, rng, D)
                if all(np.linalg.norm(vec - other) >= floor for other in drawn.values()):
                    break
            else:
                raise SeparationUnachievable(
                    f"class {cls.name!r}: could not place {len(cls.instance_ids)} instances "
                    f"{floor} apart after {max_retries} retries"
                )
            drawn[inst] = vec
        params[cls.name] = drawn
    return FactorBank(spec, int(D), int(seed), params, floors)


# ---------------------------------------------------------------------------
# rendering


def token_vector(token: int, D: int, seed: int) -> np.ndarray:
    """Per-token content direction; channel 0 is reserved for the carrier."""
    vec = np.random.default_rng([_seed_words(seed), 0x70CE, int(token)]).normal(size=D)
    vec[0] = 0.0
    return vec


def token_template(token: int, n_frames: int, D: int, seed: int) -> np.ndarray:
    """Raw frames of one token under identity factors, shape (n_frames, D)."""
    k = np.arange(n_frames)
    shape = np.sin(2.0 * np.pi * (k + 0.5) / n_frames)
    out = np.outer(shape, token_vector(token, D, seed))
    out[:, 0] += 1.0
    return out


def _token_amplitudes(n: int, f: RenderFactors) -> np.ndarray:
    i = np.arange(n)
    rhythm = 1.0 + f.rhythm_depth * np.sin(2.0 * np.pi * i / 4.0)
    span = max(n - 1, 1)
    envelope = (1.0 - f.attack * np.exp(-i)) * (1.0 - f.decay * i / span)
    return rhythm * envelope


def nuisance_vector(seed: int, index: int, D: int, scale: float) -> np.ndarray | None:
    """Per-utterance variation that no style class explains.

    A N(0, scale) draw for utterance ``index`` times a direction shared by
    the whole corpus (standard normal entries, zero on the carrier channel).
    """
    if scale <= 0:
        return None
    direction = np.random.default_rng([_seed_words(seed), 0x9015]).normal(0.0, 1.0, size=D)
    direction[0] = 0.0
    amount = np.random.default_rng([_seed_words(seed), 0x9015, int(index)]).normal(0.0, scale)
    return amount * direction


def render_utterance(
    bank: FactorBank,
    labels: Sequence[str],
    text: Sequence[int],
    D: int | None = None,
    nuisance: np.ndarray | None = None,
) -> np.ndarray:
    """Render the (T, D) float32 frame matrix of one utterance.

    ``nuisance`` is an optional per-utterance direction applied on a
    zero-mean cosine pattern inside every token, so it never moves any
    factor statistic.  Pure and deterministic: the same inputs always give
    the same bytes.
    """
    if D is None:
        D = bank.D
    if D != bank.D:
        raise InvalidConfig(f"D={D} does not match factor bank D={bank.D}")
    text = [int(t) for t in text]
    if not text:
        raise EmptyText("cannot render an empty token sequence")
    f = bank.resolve(labels)
    L = f.frames_per_token
    amps = _token_amplitudes(len(text), f)
    e0 = np.zeros(D)
    e0[0] = 1.0
    phase = 2.0 * np.pi * (np.arange(L) + 0.5) / L
    shape = np.sin(phase)
    base = e0 + f.offset
    if nuisance is not None and L >= 2:
        # cos over a full period sums to zero for L >= 2
        base = base + np.outer(np.cos(phase), nuisance)
    blocks = [base + a * np.outer(shape, token_vector(tok, D, bank.seed)) for tok, a in zip(text, amps)]
    return (f.gain * np.concatenate(blocks, axis=0)).astype(np.float32)


@dataclass(frozen=True)
class FactorStatistics:
    spectral: np.ndarray
    frames_per_token: float
    gain: float

    def for_kind(self, kind: FactorKind):
        kind = FactorKind(kind)
        if kind is FactorKind.SPECTRAL_PROFILE:
            return self.spectral
        if kind is FactorKind.DURATION_RHYTHM:
            return self.frames_per_token
        return self.gain


def factor_statistics(frames: np.ndarray, n_tokens: int) -> FactorStatistics:
    """Measure the ground-truth factor statistics of a frame matrix.

    Works on rendered and on synthesized frames alike; ``n_tokens`` is the
    length of the text the frames were produced for.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise InvalidConfig(f"expected a non-empty (T, D) matrix, got shape {frames.shape}")
    gain = float(frames[:, 0].mean())
    mean = frames[:, 1:].mean(axis=0)
    spectral = mean / gain if abs(gain) > 1e-8 else mean
    return FactorStatistics(spectral, frames.shape[0] / float(n_tokens), gain)


def statistic_distance(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)))


# ---------------------------------------------------------------------------
# corpus configuration and in-memory corpus


@dataclass
class CorpusConfig:
    classes: tuple[StyleClassSpec, ...]
    seed: int = 0
    D: int = 32
    vocab_size: int = 32
    text_length: tuple[int, int] = (4, 16)
    utterances_per_cell: int = 50
    # cell (one instance id per class) -> utterance count; None means full grid
    cells: dict[tuple[str, ...], int] | None = None
    shard_size: int = 1024
    separation_floor: dict[str, float] | None = None
    nuisance_scale: float = 0.5

    def __post_init__(self):
        self.classes = check_spec(
            c if isinstance(c, StyleClassSpec) else StyleClassSpec.from_dict(c) for c in self.classes
        )
        lo, hi = (int(v) for v in self.text_length)
        self.text_length = (lo, hi)
        if not 1 <= lo <= hi:
            raise InvalidConfig(f"text_length must satisfy 1 <= lo <= hi, got {self.text_length}")
        if self.vocab_size < 1 or self.D < 2 or self.shard_size < 1:
            raise InvalidConfig("vocab_size >= 1, D >= 2 and shard_size >= 1 are required")
        if self.utterances_per_cell < 0:
            raise InvalidConfig("utterances_per_cell must be >= 0")
        if self.cells is not None:
            cells = {}
            for key, count in self.cells.items():
                key = tuple(str(k) for k in key)
                if len(key) != len(self.classes):
                    raise InvalidConfig(f"cell {key} must name one instance per class")
                for cls, inst in zip(self.classes, key):
                    if inst not in cls.instance_ids:
                        raise InvalidConfig(f"cell {key}: unknown instance {inst!r} of {cls.name!r}")
                if int(count) < 0:
                    raise InvalidConfig(f"cell {key}: negative count")
                cells[key] = int(count)
            self.cells = cells

    def cell_counts(self) -> list[tuple[tuple[str, ...], int]]:
        grid = itertools.product(*(c.instance_ids for c in self.classes))
        if self.cells is None:
            return [(cell, self.utterances_per_cell) for cell in grid]
        return [(cell, self.cells[cell]) for cell in grid if cell in self.cells]

    @classmethod
    def from_dict(cls, d: Mapping) -> "CorpusConfig":
        d = dict(d)
        known = {
            "classes", "seed", "D", "vocab_size", "text_length", "utterances_per_cell",
            "cells", "mask", "shard_size", "separation_floor", "nuisance_scale",
        }
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown corpus config keys: {sorted(unknown)}")
        if "classes" not in d:
            raise InvalidConfig("corpus config needs a 'classes' list")
        classes = tuple(StyleClassSpec.from_dict(c) for c in d["classes"])
        per_cell = int(d.get("utterances_per_cell", 50))
        cells = None
        if "mask" in d:
            cells = _cells_from_mask(classes, d["mask"], per_cell)
        if "cells" in d:
            cells = dict(cells or {})
            for entry in d["cells"]:
                cells[tuple(entry["labels"])] = int(entry.get("count", per_cell))
        return cls(
            classes=classes,
            seed=int(d.get("seed", 0)),
            D=int(d.get("D", 32)),
            vocab_size=int(d.get("vocab_size", 32)),
            text_length=tuple(d.get("text_length", (4, 16))),
            utterances_per_cell=per_cell,
            cells=cells,
            shard_size=int(d.get("shard_size", 1024)),
            separation_floor=d.get("separation_floor"),
            nuisance_scale=float(d.get("nuisance_scale", 0.5)),
        )

    def to_dict(self) -> dict:
        d = {
            "classes": [c.to_dict() for c in self.classes],
            "seed": self.seed,
            "D": self.D,
            "vocab_size": self.vocab_size,
            "text_length": list(self.text_length),
            "utterances_per_cell": self.utterances_per_cell,
            "shard_size": self.shard_size,
            "nuisance_scale": self.nuisance_scale,
        }
        if self.cells is not None:
            d["cells"] = [{"labels": list(k), "count": v} for k, v in self.cells.items()]
        if self.separation_floor:
            d["separation_floor"] = dict(self.separation_floor)
        return d


def _cells_from_mask(classes, mask, per_cell) -> dict:
    """A 2-class mask: rows index class 0, columns class 1.

    Any truthy entry marks a populated cell with ``per_cell`` utterances.
    Per-cell counts go through ``cells`` instead.
    """
    if len(classes) != 2:
        raise InvalidConfig("'mask' is only defined for two style classes; use 'cells'")
    rows, cols = classes[0].instance_ids, classes[1].instance_ids
    if len(mask) != len(rows) or any(len(r) != len(cols) for r in mask):
        raise InvalidConfig(f"mask must be {len(rows)} x {len(cols)}")
    cells = {}
    for a, row in zip(rows, mask):
        for b, v in zip(cols, row):
            if v:
                cells[(a, b)] = per_cell
    return cells


@dataclass(frozen=True)
class ManifestRecord:
    utt_id: str
    text: tuple[int, ...]
    labels: tuple[str, ...]
    T: int
    frame_file: str
    byte_offset: int

    def to_dict(self) -> dict:
        return {
            "utt_id": self.utt_id,
            "text": list(self.text),
            "labels": list(self.labels),
            "T": self.T,
            "frame_file": self.frame_file,
            "byte_offset": self.byte_offset,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ManifestRecord":
        return cls(
            str(d["utt_id"]),
            tuple(int(t) for t in d["text"]),
            tuple(str(x) for x in d["labels"]),
            int(d["T"]),
            str(d["frame_file"]),
            int(d["byte_offset"]),
        )


@dataclass
class CorpusManifest:
    spec: tuple[StyleClassSpec, ...]
    D: int
    vocab_size: int
    seed: int
    records: list[ManifestRecord]
    separation_floor: dict[str, float] | None = None
    nuisance_scale: float = 0.0
    root: Path | None = field(default=None, compare=False)

    def header(self) -> dict:
        h = {
            "format_version": FORMAT_VERSION,
            "spec": [c.to_dict() for c in self.spec],
            "D": self.D,
            "vocab_size": self.vocab_size,
            "seed": self.seed,
        }
        if self.separation_floor:
            h["separation_floor"] = dict(self.separation_floor)
        h["nuisance_scale"] = self.nuisance_scale
        return h

    def factor_bank(self) -> FactorBank:
        return make_factor_bank(self.spec, self.seed, self.D, self.separation_floor)


@dataclass(frozen=True, eq=False)
class UtteranceRecord:
    utt_id: str
    text: tuple[int, ...]
    labels: tuple[str, ...]
    frames: np.ndarray

    @property
    def T(self) -> int:
        return int(self.frames.shape[0])

    @property
    def D(self) -> int:
        return int(self.frames.shape[1])


class Corpus:
    """Manifest plus the frame matrices it references, held in memory."""

    def __init__(self, manifest: CorpusManifest, frames: Sequence[np.ndarray]):
        if len(frames) != len(manifest.records):
            raise InvalidConfig("one frame matrix per manifest record is required")
        self.manifest = manifest
        self.frames = list(frames)
        self._label_matrix = None

    def __len__(self):
        return len(self.manifest.records)

    def __getitem__(self, i: int) -> UtteranceRecord:
        r = self.manifest.records[i]
        return UtteranceRecord(r.utt_id, r.text, r.labels, self.frames[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def spec(self) -> tuple[StyleClassSpec, ...]:
        return self.manifest.spec

    @property
    def class_names(self) -> list[str]:
        return [c.name for c in self.spec]

    @property
    def D(self) -> int:
        return self.manifest.D

    @property
    def vocab_size(self) -> int:
        return self.manifest.vocab_size

    def index_of(self, utt_id: str) -> int:
        for i, r in enumerate(self.manifest.records):
            if r.utt_id == utt_id:
                return i
        raise KeyError(f"no utterance {utt_id!r} in corpus")

    def label_matrix(self) -> np.ndarray:
        """(n_records, N) integer instance indices, class order."""
        if self._label_matrix is None:
            lookup = [{inst: j for j, inst in enumerate(c.instance_ids)} for c in self.spec]
            self._label_matrix = np.array(
                [[lookup[n][lab] for n, lab in enumerate(r.labels)] for r in self.manifest.records],
                dtype=np.int64,
            ).reshape(len(self), len(self.spec))
        return self._label_matrix

    def subset(self, indices: Iterable[int]) -> "Corpus":
        indices = [int(i) for i in indices]
        m = self.manifest
        sub = replace(m, records=[m.records[i] for i in indices])
        return Corpus(sub, [self.frames[i] for i in indices])

    def where(self, **labels: str) -> list[int]:
        """Indices of records whose class labels match, e.g. ``where(speaker="M5")``."""
        pos = {name: n for n, name in enumerate(self.class_names)}
        for name in labels:
            if name not in pos:
                raise UnknownInstance(f"unknown style class {name!r}")
        return [
            i for i, r in enumerate(self.manifest.records)
            if all(r.labels[pos[k]] == v for k, v in labels.items())
        ]

    def factor_bank(self) -> FactorBank:
        return self.manifest.factor_bank()


def _shard_name(k: int) -> str:
    return f"frames-{k:05d}.f32"


def render_corpus(config: CorpusConfig) -> Corpus:
    """Render a whole corpus in memory (no files are written)."""
    bank = make_factor_bank(config.classes, config.seed, config.D, config.separation_floor)
    lo, hi = config.text_length
    records, frames = [], []
    offset, shard, in_shard = 0, 0, 0
    index = 0
    for cell, count in config.cell_counts():
        for _ in range(count):
            rng = np.random.default_rng([_seed_words(config.seed), 0x7E47, index])
            n = int(rng.integers(lo, hi + 1))
            text = tuple(int(t) for t in rng.integers(0, config.vocab_size, size=n))
            nuisance = nuisance_vector(config.seed, index, config.D, config.nuisance_scale)
            mat = render_utterance(bank, cell, text, config.D, nuisance)
            if in_shard == config.shard_size:
                shard, in_shard, offset = shard + 1, 0, 0
            records.append(
                ManifestRecord(f"utt{index:06d}", text, cell, mat.shape[0], _shard_name(shard), offset)
            )
            frames.append(mat)
            offset += mat.size * 4
            in_shard += 1
            index += 1
    manifest = CorpusManifest(
        config.classes, config.D, config.vocab_size, config.seed, records,
        dict(config.separation_floor) if config.separation_floor else None,
        config.nuisance_scale,
    )
    return Corpus(manifest, frames)


def write_corpus(corpus: Corpus, out_dir) -> CorpusManifest:
    """Persist header, JSON-lines manifest and float32 shard files."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        shards: dict[str, list[bytes]] = {}
        for rec, mat in zip(corpus.manifest.records, corpus.frames):
            shards.setdefault(rec.frame_file, []).append(
                np.ascontiguousarray(mat, dtype="<f4").tobytes()
            )
        for name, chunks in shards.items():
            (out / name).write_bytes(b"".join(chunks))
        (out / HEADER_FILE).write_text(json.dumps(corpus.manifest.header(), indent=2) + "\n")
        with open(out / MANIFEST_FILE, "w") as fh:
            for rec in corpus.manifest.records:
                fh.write(json.dumps(rec.to_dict()) + "\n")
    except OSError as exc:
        raise IoFailure(f"could not write corpus to {out}: {exc}") from exc
    m = corpus.manifest
    return replace(m, records=list(m.records), root=out)


def generate_corpus(config: CorpusConfig, out_dir) -> CorpusManifest:
    return write_corpus(render_corpus(config), out_dir)


def read_manifest(path) -> CorpusManifest:
    root = Path(path)
    header_path = root / HEADER_FILE
    manifest_path = root / MANIFEST_FILE
    for p in (header_path, manifest_path):
        if not p.exists():
            raise MissingFile(f"missing corpus file {p}")
    header = json.loads(header_path.read_text())
    spec = tuple(StyleClassSpec.from_dict(c) for c in header["spec"])
    with open(manifest_path) as fh:
        records = [ManifestRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
    return CorpusManifest(
        spec, int(header["D"]), int(header["vocab_size"]), int(header["seed"]),
        records, header.get("separation_floor"), float(header.get("nuisance_scale", 0.0)), root,
    )


def _read_frames(root: Path, rec: ManifestRecord, D: int, sizes: dict) -> np.ndarray:
    path = root / rec.frame_file
    if rec.frame_file not in sizes:
        if not path.exists():
            raise MissingFile(f"{rec.utt_id}: frame file {path} does not exist")
        sizes[rec.frame_file] = path.stat().st_size
    need = rec.byte_offset + rec.T * D * 4
    if rec.T < 1 or rec.byte_offset < 0 or need > sizes[rec.frame_file]:
        raise CorruptFrames(
            rec.utt_id,
            f"expected {rec.T}x{D} float32 at offset {rec.byte_offset} of {rec.frame_file} "
            f"({sizes[rec.frame_file]} bytes available)",
        )
    return np.fromfile(path, dtype="<f4", count=rec.T * D, offset=rec.byte_offset).reshape(rec.T, D)


def load_corpus(path) -> Corpus:
    """Load a corpus directory, failing loudly on missing or truncated frames."""
    manifest = read_manifest(path)
    sizes: dict[str, int] = {}
    frames = []
    for rec in manifest.records:
        mat = _read_frames(manifest.root, rec, manifest.D, sizes)
        if not np.all(np.isfinite(mat)):
            raise CorruptFrames(rec.utt_id, "non-finite frame values")
        frames.append(mat.astype(np.float32))
    return Corpus(manifest, frames)


def validate_manifest(manifest: CorpusManifest) -> list[str]:
    """Return a list of human-readable violations; empty means valid."""
    problems: list[str] = []
    try:
        spec = check_spec(manifest.spec)
    except InvalidConfig as exc:
        return [f"spec: {exc}"]
    seen = set()
    sizes: dict[str, int] = {}
    for rec in manifest.records:
        where = rec.utt_id
        if rec.utt_id in seen:
            problems.append(f"{where}: duplicate utt_id")
        seen.add(rec.utt_id)
        if len(rec.labels) != len(spec):
            problems.append(f"{where}: {len(rec.labels)} labels for {len(spec)} style classes")
        else:
            for cls, lab in zip(spec, rec.labels):
                if lab not in cls.instance_ids:
                    problems.append(f"{where}: unknown instance {lab!r} for class {cls.name!r}")
        if not rec.text:
            problems.append(f"{where}: empty text")
        elif any(not 0 <= t < manifest.vocab_size for t in rec.text):
            problems.append(f"{where}: token outside vocabulary of size {manifest.vocab_size}")
        if rec.T < 1:
            problems.append(f"{where}: T={rec.T} < 1")
            continue
        if manifest.root is None:
            continue
        try:
            mat = _read_frames(manifest.root, rec, manifest.D, sizes)
        except (MissingFile, CorruptFrames) as exc:
            problems.append(str(exc))
            continue
        if not np.all(np.isfinite(mat)):
            problems.append(f"{where}: non-finite frame values")
    return problems


def check_text(text: Sequence[int], vocab_size: int) -> list[int]:
    text = [int(t) for t in text]
    if not text:
        raise EmptyText("token sequence is empty")
    bad = [t for t in text if not 0 <= t < vocab_size]
    if bad:
        raise UnknownToken(f"tokens {bad} outside vocabulary of size {vocab_size}")
    return text
