"""Quantitative disentanglement and transfer diagnostics.

Array-level metrics take embeddings and integer labels; the ``*_report`` and
``evaluate`` helpers compute embeddings from a model and corpus first.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.spatial.distance import pdist
from sklearn.cluster import KMeans
from sklearn.decomposition import PCA
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import train_test_split
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from .corpus import Corpus, FactorKind, factor_statistics, statistic_distance
from .exceptions import InvalidConfig
from .inference import extract_styles, interpolate, synthesize_batch, transfer_batch
from .model import MultiReferenceTacotron

REPORT_SCHEMA = "intercross.eval-report/1"


def invariance_ratio(embeddings, labels) -> float:
    """Mean within-instance pairwise distance over mean between-instance distance."""
    X = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    if len(X) != len(y):
        raise InvalidConfig("embeddings and labels differ in length")
    d = pdist(X)
    i, j = np.triu_indices(len(y), k=1)
    same = y[i] == y[j]
    if not same.any() or same.all():
        return float("nan")
    between = d[~same].mean()
    if between == 0:
        return float("nan")
    return float(d[same].mean() / between)


def cluster_purity(embeddings, labels, k: int, seed: int = 0) -> float:
    """k-means purity: fraction of points carrying their cluster's majority label."""
    X = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    assign = KMeans(n_clusters=k, n_init=10, random_state=seed).fit_predict(X)
    return purity_of(assign, y)


def purity_of(assign, labels) -> float:
    y = np.asarray(labels)
    total = 0
    for c in np.unique(assign):
        _, counts = np.unique(y[assign == c], return_counts=True)
        total += counts.max()
    return float(total / len(y))


@dataclass(frozen=True)
class ProbeResult:
    accuracy: float
    chance: float
    marginal_chance: float
    n_train: int
    n_test: int


def _majority_accuracy(train_y, test_y) -> float:
    values, counts = np.unique(train_y, return_counts=True)
    return float(np.mean(test_y == values[np.argmax(counts)]))


def leakage_probe(embeddings, target_labels, source_labels=None, seed: int = 0,
                  test_size: float = 0.2) -> ProbeResult:
    """Held-out accuracy of a multinomial linear probe on fixed embeddings.

    ``chance`` is estimated from empirical label frequencies on the same
    split.  When ``source_labels`` (the labels of the class the embeddings
    were built for) are given, chance is the accuracy of predicting the
    training-majority target label *within each source instance*, which is
    what a perfectly disentangled embedding can reach on confounded,
    non-parallel data.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(target_labels)
    idx = np.arange(len(y))
    _, counts = np.unique(y, return_counts=True)
    stratify = y if counts.min() >= 2 else None
    tr, te = train_test_split(idx, test_size=test_size, random_state=seed, stratify=stratify)
    probe = make_pipeline(StandardScaler(), LogisticRegression(max_iter=2000))
    if len(np.unique(y[tr])) < 2:
        acc = float(np.mean(y[te] == y[tr][0]))
    else:
        probe.fit(X[tr], y[tr])
        acc = float(np.mean(probe.predict(X[te]) == y[te]))
    marginal = _majority_accuracy(y[tr], y[te])
    chance = marginal
    if source_labels is not None:
        s = np.asarray(source_labels)
        hits = 0
        for v in np.unique(s[te]):
            in_tr = s[tr] == v
            test_y = y[te][s[te] == v]
            if in_tr.any():
                hits += _majority_accuracy(y[tr][in_tr], test_y) * len(test_y)
            else:
                hits += _majority_accuracy(y[tr], test_y) * len(test_y)
        chance = float(hits / len(te))
    return ProbeResult(acc, chance, marginal, len(tr), len(te))


def pca_project(embeddings, dims: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates on the top ``dims`` principal axes and the full explained-variance ratio."""
    X = np.asarray(embeddings, dtype=np.float64)
    full = PCA().fit(X)
    coords = (X - full.mean_) @ full.components_[:dims].T
    return coords, full.explained_variance_ratio_


def pearson_or_nan(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or a.std() == 0 or b.std() == 0:
        return float("nan")
    return float(stats.pearsonr(a, b)[0])


def length_diagnostic(output_lengths, text_lengths, reference_lengths) -> dict:
    """Correlate output length with text length and with reference length."""
    corr_text = pearson_or_nan(output_lengths, text_lengths)
    corr_ref = pearson_or_nan(output_lengths, reference_lengths)
    return {
        "corr_text": corr_text,
        "corr_reference": corr_ref,
        "corr_text_undefined": math.isnan(corr_text),
        "corr_reference_undefined": math.isnan(corr_ref),
        "difference": corr_text - corr_ref,
        "n": int(len(output_lengths)),
    }


# ---------------------------------------------------------------------------
# model-level diagnostics


def class_embeddings(model: MultiReferenceTacotron, corpus: Corpus, n: int) -> np.ndarray:
    return extract_styles(model, n, corpus.frames)


def random_texts(rng: np.random.Generator, count: int, vocab_size: int, length_range) -> list[list[int]]:
    lo, hi = length_range
    return [list(map(int, rng.integers(0, vocab_size, size=int(rng.integers(lo, hi + 1))))) for _ in range(count)]


def length_grid(model, corpus: Corpus, n_texts: int = 10, n_refs: int = 10, seed: int = 0,
                text_range=(4, 16)) -> dict:
    """Transfer every (text, reference) pair of a grid and correlate lengths.

    References are taken for all classes from the same utterance.
    """
    rng = np.random.default_rng(seed)
    texts = random_texts(rng, n_texts, corpus.vocab_size, text_range)
    refs = [int(i) for i in rng.choice(len(corpus), size=n_refs, replace=False)]
    pairs = [(t, r) for t in range(n_texts) for r in refs]
    outs = transfer_batch(
        model, [[corpus.frames[r]] * model.config.N for _, r in pairs], [texts[t] for t, _ in pairs]
    )
    report = length_diagnostic(
        [o.length for o in outs],
        [len(texts[t]) for t, _ in pairs],
        [corpus.frames[r].shape[0] for _, r in pairs],
    )
    report["max_steps_exceeded"] = int(sum(o.max_steps_exceeded for o in outs))
    return report


def _kind_stat(stats_obj, kind):
    return stats_obj.for_kind(kind)


def synthesis_scatter(model, corpus: Corpus, samples: int = 100, seed: int = 0,
                      text_range=(4, 16)) -> dict[str, float]:
    """Within-instance scatter of each class's factor statistic in model output.

    For random corpus targets, every class's reference is drawn from the
    target's own instance group and an unseen text is synthesized; the
    scatter is the RMS distance between the measured statistic and the
    instance's ground-truth value.
    """
    from .sampler import build_index, sample_intercross_multi

    bank = corpus.factor_bank()
    index = build_index(corpus)
    rng = np.random.default_rng(seed)
    examples = [sample_intercross_multi(index, rng) for _ in range(samples)]
    texts = random_texts(rng, samples, corpus.vocab_size, text_range)
    outs = transfer_batch(model, [[corpus.frames[r] for r in ex.references] for ex in examples], texts)
    result = {}
    for n, cls in enumerate(corpus.spec):
        d2 = []
        for ex, out, text in zip(examples, outs, texts):
            truth = bank.instance_statistic(cls.name, corpus.manifest.records[ex.target].labels[n])
            measured = factor_statistics(out.frames, len(text)).for_kind(cls.factor_kind)
            d2.append(statistic_distance(measured, truth) ** 2)
        result[cls.name] = float(np.sqrt(np.mean(d2)))
    return result


def corpus_scatter(corpus: Corpus) -> dict[str, float]:
    """RMS distance of each rendered utterance's statistic from its instance truth."""
    bank = corpus.factor_bank()
    out = {}
    for n, cls in enumerate(corpus.spec):
        d2 = [
            statistic_distance(
                factor_statistics(f, len(r.text)).for_kind(cls.factor_kind),
                bank.instance_statistic(cls.name, r.labels[n]),
            ) ** 2
            for f, r in zip(corpus.frames, corpus.manifest.records)
        ]
        out[cls.name] = float(np.sqrt(np.mean(d2)))
    return out


def nearest_instance(bank, class_name: str, value) -> str:
    cls = bank.class_spec(class_name)
    return min(cls.instance_ids, key=lambda i: statistic_distance(value, bank.instance_statistic(class_name, i)))


def transfer_compositionality(model, corpus: Corpus, tolerance: dict[str, float], cases: int = 50,
                              seed: int = 0, text_range=(4, 16), present=None) -> dict:
    """Cross-combine references of different utterances and check each factor.

    For every case class ``n``'s reference comes from a different utterance
    (and, where the corpus allows, a different instance combination); the
    synthesized output must carry each reference's ground-truth statistic
    within ``tolerance[class]`` and be nearest to that instance.
    """
    bank = corpus.factor_bank()
    rng = np.random.default_rng(seed)
    records = corpus.manifest.records
    N = len(corpus.spec)
    refs, texts = [], random_texts(rng, cases, corpus.vocab_size, text_range)
    for _ in range(cases):
        for _ in range(100):
            pick = [int(i) for i in rng.choice(len(corpus), size=N, replace=False)]
            if all(len({records[p].labels[n] for p in pick}) > 1 for n in range(N)) or N == 1:
                break
        refs.append(pick)
    outs = transfer_batch(model, [[corpus.frames[p] for p in pick] for pick in refs], texts)
    rows = []
    for pick, out, text in zip(refs, outs, texts):
        st = factor_statistics(out.frames, len(text))
        row = {"references": [records[p].utt_id for p in pick], "n_tokens": len(text), "classes": {}}
        ok_all = True
        for n, cls in enumerate(corpus.spec):
            inst = records[pick[n]].labels[n]
            measured = st.for_kind(cls.factor_kind)
            err = statistic_distance(measured, bank.instance_statistic(cls.name, inst))
            nearest = nearest_instance(bank, cls.name, measured)
            ok = err <= tolerance[cls.name] and nearest == inst
            ok_all &= ok
            row["classes"][cls.name] = {"instance": inst, "error": err, "nearest": nearest, "ok": bool(ok)}
        row["ok"] = bool(ok_all)
        rows.append(row)
    rate = float(np.mean([r["ok"] for r in rows]))
    per_class = {
        cls.name: float(np.mean([r["classes"][cls.name]["ok"] for r in rows])) for cls in corpus.spec
    }
    return {"pass_rate": rate, "per_class_pass_rate": per_class, "tolerance": dict(tolerance), "cases": rows}


def projection_on_path(value, start, end) -> float:
    """Position of ``value`` along the segment start -> end (0 at start, 1 at end)."""
    a = np.asarray(start, dtype=float)
    b = np.atleast_1d(np.asarray(end, dtype=float) - a)
    v = np.atleast_1d(np.asarray(value, dtype=float) - a)
    return float(v @ b / (b @ b))


def interpolation_sweep(model, corpus: Corpus, n: int, from_ref: int, to_ref: int,
                        fixed_refs: Sequence[int], text: Sequence[int],
                        alphas=(0.0, 0.25, 0.5, 0.75, 1.0)) -> dict:
    """Interpolate class ``n``'s style between two references, others fixed.

    ``fixed_refs[m]`` gives the reference record of every class ``m``
    (the entry at ``n`` is ignored).  Reports the controlled statistic's
    position along the truth path, its Spearman correlation with alpha and
    every other class's deviation from its reference's truth.
    """
    bank = corpus.factor_bank()
    records = corpus.manifest.records
    N = model.config.N
    se_from = extract_styles(model, n, [corpus.frames[from_ref]])[0]
    se_to = extract_styles(model, n, [corpus.frames[to_ref]])[0]
    fixed = {m: extract_styles(model, m, [corpus.frames[fixed_refs[m]]])[0] for m in range(N) if m != n}
    embs = []
    for a in alphas:
        e = [fixed.get(m) for m in range(N)]
        e[n] = interpolate(se_from, se_to, a)
        embs.append(e)
    outs = synthesize_batch(model, embs, [list(text)] * len(alphas))
    cls = corpus.spec[n]
    start = bank.instance_statistic(cls.name, records[from_ref].labels[n])
    end = bank.instance_statistic(cls.name, records[to_ref].labels[n])
    positions, others = [], {c.name: [] for m, c in enumerate(corpus.spec) if m != n}
    for out in outs:
        st = factor_statistics(out.frames, len(text))
        positions.append(projection_on_path(st.for_kind(cls.factor_kind), start, end))
        for m, other in enumerate(corpus.spec):
            if m == n:
                continue
            truth = bank.instance_statistic(other.name, records[fixed_refs[m]].labels[m])
            others[other.name].append(statistic_distance(st.for_kind(other.factor_kind), truth))
    rho = float(stats.spearmanr(alphas, positions)[0]) if np.ptp(positions) > 0 else float("nan")
    return {
        "class": cls.name,
        "alphas": list(alphas),
        "positions": positions,
        "spearman": rho,
        "other_deviation": others,
        "lengths": [o.length for o in outs],
    }


def transfer_mse(model, corpus: Corpus, samples: int = 60, seed: int = 0) -> float:
    """Mean teacher-forced frame MSE on intercross examples drawn from ``corpus``.

    Each class's reference shares the target's instance but is generally a
    different utterance, so this measures how well style transfers rather
    than how well the model copies its input.  Labels are not needed, so
    instances unknown to the classification heads are fine.
    """
    import torch

    from .losses import recon_loss
    from .model import collate
    from .sampler import build_index, sample_intercross_multi

    index = build_index(corpus)
    rng = np.random.default_rng(seed)
    lookup = [dict.fromkeys(c.instance_ids, 0) for c in corpus.spec]
    was_training = model.training
    model.eval()
    errors = []
    with torch.no_grad():
        for _ in range(samples):
            batch = collate(corpus, [sample_intercross_multi(index, rng)], lookup)
            out = model(batch)
            _, mse, _ = recon_loss(out["pred"], out["stop_logits"], batch.target, batch.target_lengths, True)
            errors.append(float(mse))
    model.train(was_training)
    return float(np.mean(errors))


def export_embeddings(model, corpus: Corpus, out_dir) -> list[Path]:
    """Write one TSV of style embeddings per class plus a shared metadata TSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for n, name in enumerate(corpus.class_names):
        p = out / f"embeddings_{name}.tsv"
        np.savetxt(p, class_embeddings(model, corpus, n), delimiter="\t", fmt="%.8g")
        paths.append(p)
    meta = out / "metadata.tsv"
    with open(meta, "w") as fh:
        fh.write("\t".join(["utt_id", *corpus.class_names, "n_tokens", "T"]) + "\n")
        for r in corpus.manifest.records:
            fh.write("\t".join([r.utt_id, *r.labels, str(len(r.text)), str(r.T)]) + "\n")
    paths.append(meta)
    return paths


def read_embeddings(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter="\t"))


def evaluate(model, corpus: Corpus, seed: int = 0, length_grid_size: int = 10) -> dict:
    """Full diagnostic report (JSON-serialisable, schema ``REPORT_SCHEMA``)."""
    labels = corpus.label_matrix()
    report = {"schema": REPORT_SCHEMA, "seed": seed, "records": len(corpus), "classes": {}}
    for n, cls in enumerate(corpus.spec):
        emb = class_embeddings(model, corpus, n)
        y = labels[:, n]
        k = len(np.unique(y))
        entry = {
            "invariance_ratio": invariance_ratio(emb, y),
            "cluster_purity": cluster_purity(emb, y, k, seed) if k > 1 else 1.0,
            "k": k,
            "pca_explained_variance": pca_project(emb, 2)[1][:2].tolist(),
            "leakage": {},
        }
        for m, other in enumerate(corpus.spec):
            res = leakage_probe(emb, labels[:, m], None if m == n else y, seed)
            entry["leakage"][other.name] = asdict(res)
        report["classes"][cls.name] = entry
    report["length_diagnostic"] = length_grid(model, corpus, length_grid_size, length_grid_size, seed)
    return report


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True, default=float) + "\n")
