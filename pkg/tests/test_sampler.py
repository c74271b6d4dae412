from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import SPARSE_MASK, SPARSE_PROSODIES, SPARSE_SPEAKERS, prosody_spec, speaker_spec
from intercross.corpus import CorpusConfig, StyleClassSpec, render_corpus
from intercross.exceptions import EmptyCorpus, InvalidConfig
from intercross.sampler import (
    audit, build_index, enumerate_pair_distribution, sample_batch, sample_intercross_multi,
    sample_intercross_single, sample_org_pair, shared_instance_violations,
)


def _corpus(classes, per_cell=1, cells=None, seed=0):
    return render_corpus(CorpusConfig(
        classes=classes, seed=seed, D=8, vocab_size=6, text_length=(2, 3),
        utterances_per_cell=per_cell, cells=cells,
    ))


def test_index_counts_full_grid():
    corpus = render_corpus(CorpusConfig(classes=(speaker_spec(4), prosody_spec(3)), D=4,
                                        vocab_size=5, text_length=(1, 2), utterances_per_cell=50))
    index = build_index(corpus)
    assert sorted(len(g) for g in index.groups[0].values()) == [150] * 4
    assert sorted(len(g) for g in index.groups[1].values()) == [200] * 3


def test_index_sparse_matches_scan(sparse_config):
    corpus = render_corpus(sparse_config)
    index = build_index(corpus)
    records = corpus.manifest.records
    for n, ids in enumerate((SPARSE_SPEAKERS, SPARSE_PROSODIES)):
        for inst in ids:
            scan = [i for i, r in enumerate(records) if r.labels[n] == inst]
            assert list(index.groups[n][inst]) == scan
        covered = np.sort(np.concatenate(list(index.groups[n].values())))
        np.testing.assert_array_equal(covered, np.arange(len(records)))


def test_masked_out_instance_absent():
    classes = (speaker_spec(2), prosody_spec(2))
    corpus = _corpus(classes, cells={("S0", "P0"): 2, ("S1", "P0"): 1})
    index = build_index(corpus)
    assert "P1" not in index.groups[1]
    assert set(index.groups[0]) == {"S0", "S1"}


def test_groups_sorted_by_utt_id(sparse_config):
    corpus = render_corpus(sparse_config)
    index = build_index(corpus)
    ids = [r.utt_id for r in corpus.manifest.records]
    for groups in index.groups:
        for g in groups.values():
            names = [ids[i] for i in g]
            assert names == sorted(names)


def test_org_pair_is_self():
    corpus = _corpus((speaker_spec(2),), per_cell=5)
    index = build_index(corpus)
    rng = np.random.default_rng(0)
    for _ in range(50):
        ex = sample_org_pair(index, rng)
        assert ex.references == (ex.target,)


def test_org_uniform_over_records():
    corpus = _corpus((speaker_spec(2),), per_cell=5)
    index = build_index(corpus)
    rng = np.random.default_rng(11)
    counts = np.bincount([sample_org_pair(index, rng).target for _ in range(10_000)], minlength=10)
    sigma = np.sqrt(10_000 * 0.1 * 0.9)
    assert np.all(np.abs(counts - 1000) < 3 * sigma)
    assert stats.chisquare(counts).pvalue > 0.01


@pytest.mark.parametrize("sampler", [sample_org_pair, sample_intercross_single])
def test_same_seed_same_draw(sampler):
    corpus = _corpus((speaker_spec(3),), per_cell=4)
    index = build_index(corpus)
    a = [sampler(index, np.random.default_rng(42)) for _ in range(3)]
    b = [sampler(index, np.random.default_rng(42)) for _ in range(3)]
    assert a == b


def test_single_on_singleton_group():
    corpus = _corpus((speaker_spec(3),), cells={("S0",): 1, ("S1",): 4, ("S2",): 4})
    index = build_index(corpus)
    rng = np.random.default_rng(3)
    lone = int(index.groups[0]["S0"][0])
    hits = 0
    for _ in range(500):
        ex = sample_intercross_single(index, rng)
        if ex.target == lone:
            hits += 1
            assert ex.references == (lone,)
    assert hits > 0


def test_single_instance_share_is_target_first():
    # instance A has 3 records, B has 7; target-first gives P(A) = 3/10
    corpus = _corpus((speaker_spec(2),), cells={("S0",): 3, ("S1",): 7})
    index = build_index(corpus)
    rng = np.random.default_rng(5)
    draws = 10_000
    a = sum(corpus.manifest.records[sample_intercross_single(index, rng).target].labels[0] == "S0"
            for _ in range(draws))
    sigma = np.sqrt(draws * 0.3 * 0.7)
    assert abs(a - 0.3 * draws) < 3 * sigma


def test_single_rejects_multi_class_index():
    corpus = _corpus((speaker_spec(2), prosody_spec(2)))
    with pytest.raises(InvalidConfig):
        sample_intercross_single(build_index(corpus), np.random.default_rng(0))


def test_multi_sparse_m5_news(sparse_config):
    corpus = render_corpus(sparse_config)
    index = build_index(corpus)
    rng = np.random.default_rng(0)
    records = corpus.manifest.records
    seen = 0
    for _ in range(2000):
        ex = sample_intercross_multi(index, rng)
        if records[ex.target].labels == ("M5", "news"):
            seen += 1
            assert records[ex.references[0]].labels[0] == "M5"
            assert records[ex.references[1]].labels[1] == "news"
    assert seen > 0


def test_multi_forced_when_instances_own_one_cell():
    # a diagonal mask leaves each instance with a single record
    classes = (speaker_spec(3), prosody_spec(3))
    cells = {(f"S{i}", f"P{i}"): 1 for i in range(3)}
    index = build_index(_corpus(classes, cells=cells))
    rng = np.random.default_rng(1)
    for _ in range(100):
        ex = sample_intercross_multi(index, rng)
        assert ex.references == (ex.target, ex.target)


def _independent_joint(records, n_classes):
    """P(target, refs...) written out directly from the two-stage rule."""
    M = len(records)
    groups = [
        {t: [r for r in range(M) if records[r].labels[n] == records[t].labels[n]] for t in range(M)}
        for n in range(n_classes)
    ]
    joint = {}
    for t in range(M):
        stack = [((), 1.0 / M)]
        for n in range(n_classes):
            g = groups[n][t]
            stack = [(refs + (r,), p / len(g)) for refs, p in stack for r in g]
        for refs, p in stack:
            joint[(t,) + refs] = p
    return joint


def test_multi_joint_matches_enumeration(sparse_config):
    cfg = CorpusConfig(classes=(speaker_spec(2), prosody_spec(2)), D=4, vocab_size=4, text_length=(1, 2),
                       cells={("S0", "P0"): 2, ("S0", "P1"): 1, ("S1", "P1"): 2}, seed=2)
    corpus = render_corpus(cfg)
    joint = _independent_joint(corpus.manifest.records, 2)
    index = build_index(corpus)
    rng = np.random.default_rng(9)
    draws = 10_000
    counts = Counter()
    for _ in range(draws):
        ex = sample_intercross_multi(index, rng)
        counts[(ex.target,) + ex.references] += 1
    assert set(counts) <= set(joint)
    keys = sorted(joint)
    obs = np.array([counts.get(k, 0) for k in keys])
    exp = np.array([joint[k] for k in keys]) * draws
    assert stats.chisquare(obs, exp).pvalue > 0.01


def test_library_oracle_agrees_with_independent(sparse_config):
    corpus = render_corpus(sparse_config)
    joint = _independent_joint(corpus.manifest.records, 2)
    for n in range(2):
        marginal = Counter()
        for key, p in joint.items():
            marginal[(key[0], key[1 + n])] += p
        lib = enumerate_pair_distribution(corpus, n)
        assert set(lib) == set(marginal)
        for k in lib:
            assert lib[k] == pytest.approx(marginal[k], rel=1e-12)


def test_empty_corpus():
    from intercross.sampler import InstanceIndex

    empty = InstanceIndex(("speaker",), (("S0",),), ({},), np.zeros((0, 1), dtype=np.int64))
    for fn in (sample_org_pair, sample_intercross_single, sample_intercross_multi):
        with pytest.raises(EmptyCorpus):
            fn(empty, np.random.default_rng(0))


def test_audit_report_shape():
    corpus = _corpus((speaker_spec(3),), per_cell=4)
    report = audit(corpus, draws=2000, seed=1)
    assert report["violations"] == 0
    assert report["classes"]["speaker"]["outside_support"] == 0
    assert 0.0 <= report["classes"]["speaker"]["chi2_pvalue"] <= 1.0


@settings(max_examples=25, deadline=None)
@given(
    cells=st.dictionaries(
        st.tuples(st.sampled_from(["S0", "S1", "S2"]), st.sampled_from(["P0", "P1"]), st.sampled_from(["a", "b"])),
        st.integers(1, 3), min_size=1, max_size=8,
    ),
    seed=st.integers(0, 1000),
)
def test_every_example_shares_instances(cells, seed):
    classes = (speaker_spec(3), prosody_spec(2), StyleClassSpec("emotion", ("a", "b"), "AMPLITUDE_ENVELOPE"))
    corpus = render_corpus(CorpusConfig(classes=classes, D=4, vocab_size=3, text_length=(1, 1), cells=cells))
    index = build_index(corpus)
    batch = sample_batch(index, np.random.default_rng(seed), 64, "it")
    assert len(batch) == 64
    assert all(len(ex.references) == 3 for ex in batch)
    assert sum(shared_instance_violations(index, ex) for ex in batch) == 0
