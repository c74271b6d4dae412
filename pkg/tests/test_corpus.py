import hashlib
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import (
    EMOTION, PROSODY, SPEAKER, SPARSE_MASK, SPARSE_PROSODIES, SPARSE_SPEAKERS,
    identity_bank, prosody_spec, speaker_spec,
)
from intercross.corpus import (
    CorpusConfig, CorruptFrames, DEFAULT_SEPARATION_FLOOR, StyleClassSpec, factor_statistics,
    frames_per_token, generate_corpus, load_corpus, make_factor_bank, nuisance_vector,
    read_manifest, render_corpus, render_utterance, token_template, validate_manifest,
)
from intercross.exceptions import (
    EmptyText, InvalidConfig, MissingFile, SeparationUnachievable, UnknownInstance,
)


def test_bank_is_deterministic():
    spec = (speaker_spec(2), prosody_spec(2))
    a = make_factor_bank(spec, seed=7)
    b = make_factor_bank(spec, seed=7)
    for cls in spec:
        for inst in cls.instance_ids:
            np.testing.assert_array_equal(a.params[cls.name][inst], b.params[cls.name][inst])


def test_bank_seed_changes_draws():
    spec = (speaker_spec(2),)
    a = make_factor_bank(spec, seed=7).params["speaker"]["S0"]
    b = make_factor_bank(spec, seed=8).params["speaker"]["S0"]
    assert not np.array_equal(a, b)


def test_singleton_speaker_bank():
    bank = make_factor_bank((StyleClassSpec("speaker", ("only",), SPEAKER),), seed=0)
    assert list(bank.params["speaker"]) == ["only"]
    assert bank.params["speaker"]["only"].shape == (32,)


def test_separation_floor_by_enumeration():
    spec = (speaker_spec(4), prosody_spec(3))
    bank = make_factor_bank(spec, seed=13)
    checked = 0
    for cls in spec:
        floor = DEFAULT_SEPARATION_FLOOR[cls.factor_kind]
        for a, b in itertools.combinations(cls.instance_ids, 2):
            dist = np.linalg.norm(bank.params[cls.name][a] - bank.params[cls.name][b])
            assert dist >= floor
            checked += 1
    assert checked == 6 + 3


def test_separation_unachievable():
    spec = (StyleClassSpec("prosody", tuple(f"p{i}" for i in range(60)), PROSODY),)
    with pytest.raises(SeparationUnachievable):
        make_factor_bank(spec, seed=0, max_retries=20)


def test_negative_and_huge_seeds_accepted():
    spec = (speaker_spec(2),)
    make_factor_bank(spec, seed=-1)
    make_factor_bank(spec, seed=2**63 - 1)


@pytest.mark.parametrize("bad", [
    lambda: StyleClassSpec("speaker", (), SPEAKER),
    lambda: StyleClassSpec("speaker", ("a", "a"), SPEAKER),
    lambda: CorpusConfig(classes=(speaker_spec(2), StyleClassSpec("timbre", ("x",), SPEAKER))),
])
def test_invalid_specs(bad):
    with pytest.raises(InvalidConfig):
        bad()


def test_identity_factors_give_raw_templates():
    bank = identity_bank(D=8, seed=4)
    text = [3, 0, 5]
    frames = render_utterance(bank, ("s", "p", "e"), text, 8)
    assert frames.shape == (12, 8)
    raw = np.concatenate([token_template(t, 4, 8, 4) for t in text])
    np.testing.assert_allclose(frames, raw, rtol=0, atol=1e-6)


def test_duration_formula_by_hand():
    # 5 tokens x round(4 * 2.0) frames
    bank = identity_bank(D=8, multiplier=2.0)
    assert render_utterance(bank, ("s", "p", "e"), [1, 2, 3, 4, 5]).shape[0] == 40
    assert frames_per_token(0.625) == 3  # round half up, not to even


def test_same_labels_different_texts():
    bank = make_factor_bank((speaker_spec(2), prosody_spec(2)), seed=2, D=16)
    a = render_utterance(bank, ("S1", "P0"), [1, 2, 3, 4])
    b = render_utterance(bank, ("S1", "P0"), [7, 7, 2, 9, 0, 3])
    assert a.shape != b.shape or not np.array_equal(a, b)
    sa, sb = factor_statistics(a, 4), factor_statistics(b, 6)
    np.testing.assert_allclose(sa.spectral, sb.spectral, atol=1e-6)
    np.testing.assert_allclose(sa.spectral, bank.instance_statistic("speaker", "S1"), atol=1e-6)


def test_render_errors():
    bank = make_factor_bank((speaker_spec(2),), seed=0, D=8)
    with pytest.raises(UnknownInstance):
        render_utterance(bank, ("nobody",), [1])
    with pytest.raises(UnknownInstance):
        render_utterance(bank, ("S0", "extra"), [1])
    with pytest.raises(EmptyText):
        render_utterance(bank, ("S0",), [])


def test_render_is_pure():
    bank = make_factor_bank((speaker_spec(2), prosody_spec(2)), seed=1, D=8)
    nz = nuisance_vector(1, 5, 8, 0.5)
    a = render_utterance(bank, ("S0", "P1"), [4, 2, 2], nuisance=nz)
    b = render_utterance(bank, ("S0", "P1"), [4, 2, 2], nuisance=nz.copy())
    assert a.tobytes() == b.tobytes()


def test_full_grid_count(tmp_path):
    cfg = CorpusConfig(classes=(speaker_spec(4), prosody_spec(3)), seed=1, D=8,
                       vocab_size=10, text_length=(4, 16), utterances_per_cell=50)
    m = generate_corpus(cfg, tmp_path)
    assert len(m.records) == 600
    assert all(4 <= len(r.text) <= 16 for r in m.records)
    assert validate_manifest(m) == []


def test_sparse_mask_totals(sparse_config):
    corpus = render_corpus(sparse_config)
    per = sparse_config.utterances_per_cell
    expected = {p: per * sum(row[j] for row in SPARSE_MASK) for j, p in enumerate(SPARSE_PROSODIES)}
    observed = {p: len(corpus.where(prosody=p)) for p in SPARSE_PROSODIES}
    assert observed == expected
    # M5 covers four prosodies, F4 only call-center
    assert {r.labels[1] for r in corpus.manifest.records if r.labels[0] == "M5"} == {
        "news", "story", "radio", "poetry"}
    assert {r.labels[1] for r in corpus.manifest.records if r.labels[0] == "F4"} == {"call-center"}
    for (s, p) in itertools.product(SPARSE_SPEAKERS, SPARSE_PROSODIES):
        n = len(corpus.where(speaker=s, prosody=p))
        assert n == (per if SPARSE_MASK[SPARSE_SPEAKERS.index(s)][SPARSE_PROSODIES.index(p)] else 0)


def test_explicit_cell_counts():
    cfg = CorpusConfig.from_dict({
        "classes": [speaker_spec(2).to_dict(), prosody_spec(2).to_dict()],
        "D": 8,
        "cells": [{"labels": ["S0", "P1"], "count": 3}, {"labels": ["S1", "P0"], "count": 5}],
    })
    corpus = render_corpus(cfg)
    assert len(corpus.where(speaker="S0", prosody="P1")) == 3
    assert len(corpus.where(speaker="S1", prosody="P0")) == 5
    assert len(corpus) == 8


def _digest(path):
    h = hashlib.sha256()
    for f in sorted(path.iterdir()):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def test_regeneration_is_byte_identical(tmp_path, sparse_config):
    generate_corpus(sparse_config, tmp_path / "a")
    generate_corpus(sparse_config, tmp_path / "b")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_round_trip(tmp_path, sparse_config):
    sparse_config.shard_size = 7
    written = generate_corpus(sparse_config, tmp_path)
    loaded = load_corpus(tmp_path)
    assert loaded.manifest == written
    assert len({r.frame_file for r in written.records}) > 1
    fresh = render_corpus(sparse_config)
    for a, b in zip(loaded.frames, fresh.frames):
        assert a.tobytes() == b.tobytes()


def test_truncated_frames_name_the_utterance(tmp_path, small_corpus):
    from intercross.corpus import write_corpus

    m = write_corpus(small_corpus, tmp_path)
    last = m.records[-1]
    shard = tmp_path / last.frame_file
    shard.write_bytes(shard.read_bytes()[:-4])
    with pytest.raises(CorruptFrames) as err:
        load_corpus(tmp_path)
    assert err.value.utt_id == last.utt_id
    assert any(last.utt_id in v for v in validate_manifest(read_manifest(tmp_path)))


def test_missing_files(tmp_path, small_corpus):
    from intercross.corpus import write_corpus

    with pytest.raises(MissingFile):
        load_corpus(tmp_path / "nowhere")
    m = write_corpus(small_corpus, tmp_path)
    (tmp_path / m.records[0].frame_file).unlink()
    with pytest.raises(MissingFile):
        load_corpus(tmp_path)


def test_unknown_instance_violation(tmp_path, small_corpus):
    from dataclasses import replace

    from intercross.corpus import write_corpus

    m = write_corpus(small_corpus, tmp_path)
    m.records[2] = replace(m.records[2], labels=("ghost", m.records[2].labels[1]))
    problems = validate_manifest(m)
    assert len(problems) == 1
    assert "ghost" in problems[0] and m.records[2].utt_id in problems[0]


def test_validate_flags_out_of_vocab(small_corpus):
    from dataclasses import replace

    m = small_corpus.manifest
    m.records[0] = replace(m.records[0], text=(999,))
    assert any("vocabulary" in p for p in validate_manifest(m))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32), n_spk=st.integers(1, 4), n_pros=st.integers(1, 3))
def test_factor_statistics_are_instance_exact(seed, n_spk, n_pros):
    """Utterances sharing an instance share its statistic; length follows text and duration only."""
    cfg = CorpusConfig(
        classes=(speaker_spec(n_spk), prosody_spec(n_pros),
                 StyleClassSpec("emotion", ("calm", "loud"), EMOTION)),
        seed=seed, D=12, vocab_size=9, text_length=(2, 7), utterances_per_cell=2,
    )
    corpus = render_corpus(cfg)
    bank = corpus.factor_bank()
    for frames, rec in zip(corpus.frames, corpus.manifest.records):
        st_ = factor_statistics(frames, len(rec.text))
        np.testing.assert_allclose(st_.spectral, bank.instance_statistic("speaker", rec.labels[0]), atol=1e-6)
        assert abs(st_.gain - bank.instance_statistic("emotion", rec.labels[2])) <= 1e-6
        fpt = bank.instance_statistic("prosody", rec.labels[1])
        assert frames.shape[0] == fpt * len(rec.text)
        assert np.all(np.isfinite(frames))


def test_length_law_ignores_other_classes():
    bank = make_factor_bank((speaker_spec(3), prosody_spec(2), StyleClassSpec("emotion", ("a", "b"), EMOTION)),
                            seed=9, D=8)
    text = [1, 5, 2, 2, 7]
    lengths = {
        render_utterance(bank, (s, "P1", e), text).shape[0]
        for s in ("S0", "S1", "S2") for e in ("a", "b")
    }
    assert len(lengths) == 1


def test_nuisance_is_invisible_to_statistics():
    bank = make_factor_bank((speaker_spec(2), prosody_spec(2)), seed=4, D=10)
    text = [0, 3, 1]
    for p in ("P0", "P1"):
        clean = render_utterance(bank, ("S1", p), text)
        noisy = render_utterance(bank, ("S1", p), text, nuisance=nuisance_vector(4, 0, 10, 0.8))
        a, b = factor_statistics(clean, 3), factor_statistics(noisy, 3)
        np.testing.assert_allclose(a.spectral, b.spectral, atol=1e-6)
        assert abs(a.gain - b.gain) < 1e-6


def test_config_dict_round_trip(sparse_config):
    again = CorpusConfig.from_dict(sparse_config.to_dict())
    assert again == sparse_config


def test_config_rejects_unknown_keys():
    with pytest.raises(InvalidConfig):
        CorpusConfig.from_dict({"classes": [speaker_spec(1).to_dict()], "colour": 1})
