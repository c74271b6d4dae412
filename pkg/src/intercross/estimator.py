"""scikit-learn style wrapper around corpus training and inference."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

import torch

from ._validation import check_corpus, check_frames, check_frames_list, check_tokens
from .checkpoint import load_checkpoint, save_checkpoint
from .exceptions import InvalidConfig
from .inference import extract_styles, interpolate, random_style, synthesize, transfer
from .training import TrainConfig, fine_tune, model_config_for, train_loop


class StyleEncoder(TransformerMixin, BaseEstimator):
    """Multi-reference style model trained with intercross (or ORG) sampling.

    ``fit`` takes a :class:`~intercross.corpus.Corpus` (or a corpus
    directory).  ``transform`` maps reference utterances to the
    concatenation of every sub-encoder's style embedding, and ``predict``
    returns the instance each classification head assigns per class.
    """

    def __init__(self, mode="it", steps=2000, batch_size=16, learning_rate=1e-3, grad_clip=1.0, seed=0,
                 d_ref=64, K=10, n_heads=4, d_style=64, d_text=128, r=5, beta=1.0, gamma=0.02):
        self.mode = mode
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.grad_clip = grad_clip
        self.seed = seed
        self.d_ref = d_ref
        self.K = K
        self.n_heads = n_heads
        self.d_style = d_style
        self.d_text = d_text
        self.r = r
        self.beta = beta
        self.gamma = gamma

    def _train_config(self, **overrides) -> TrainConfig:
        kw = dict(steps=self.steps, batch_size=self.batch_size, learning_rate=self.learning_rate,
                  grad_clip=self.grad_clip, seed=self.seed, mode=self.mode, log_every=0)
        kw.update(overrides)
        return TrainConfig(**kw)

    def fit(self, X, y=None):
        corpus = check_corpus(X)
        mc = model_config_for(corpus, d_ref=self.d_ref, K=self.K, n_heads=self.n_heads, d_style=self.d_style,
                              d_text=self.d_text, r=self.r, beta=self.beta, gamma=self.gamma)
        result = train_loop(corpus, self._train_config(), model_config=mc)
        self._set_fitted(result.model, result.class_names, result.instance_ids, result.metrics)
        return self

    def _set_fitted(self, model, class_names, instance_ids, metrics):
        self.model_ = model
        self.class_names_ = list(class_names)
        self.instance_ids_ = [list(i) for i in instance_ids]
        self.metrics_ = list(metrics)
        self.n_classes_ = len(self.class_names_)
        self.n_features_out_ = self.n_classes_ * model.config.d_style

    def partial_fit_instances(self, X, steps: int = 200):
        """Few-shot adaptation to unseen instances; the text encoder stays frozen."""
        check_is_fitted(self, "model_")
        corpus = check_corpus(X)
        result = fine_tune(self.model_, self.class_names_, self.instance_ids_, corpus,
                           self._train_config(steps=steps))
        self._set_fitted(result.model, result.class_names, result.instance_ids, self.metrics_ + result.metrics)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        frames = check_frames_list(X, self.model_.config.D)
        return np.concatenate([extract_styles(self.model_, n, frames) for n in range(self.n_classes_)], axis=1)

    def style_embeddings(self, X, n: int) -> np.ndarray:
        check_is_fitted(self, "model_")
        return extract_styles(self.model_, self._class_index(n), check_frames_list(X, self.model_.config.D))

    @torch.no_grad()
    def predict(self, X) -> np.ndarray:
        """(M, N) array of predicted instance ids."""
        check_is_fitted(self, "model_")
        from .model import pad_frames

        frames = check_frames_list(X, self.model_.config.D)
        self.model_.eval()
        cols = []
        for n in range(self.n_classes_):
            preds = []
            for i in range(0, len(frames), 128):
                x, lengths = pad_frames(frames[i:i + 128])
                h = self.model_.reference_embedding(n, x, lengths)
                preds.append(self.model_.classifiers[n](h).argmax(1).numpy())
            idx = np.concatenate(preds) if preds else np.zeros(0, dtype=int)
            cols.append(np.asarray(self.instance_ids_[n], dtype=object)[idx])
        return np.stack(cols, axis=1) if cols else np.zeros((0, 0), dtype=object)

    def transfer(self, references: Sequence[np.ndarray], text: Sequence[int], max_steps=None):
        check_is_fitted(self, "model_")
        D = self.model_.config.D
        refs = [check_frames(f, D) for f in references]
        return transfer(self.model_, refs, check_tokens(text, self.model_.config.vocab_size), max_steps)

    def synthesize(self, style_embeddings: Sequence[np.ndarray], text: Sequence[int], max_steps=None):
        check_is_fitted(self, "model_")
        return synthesize(self.model_, style_embeddings, check_tokens(text, self.model_.config.vocab_size),
                          max_steps)

    def interpolate(self, se_from, se_to, alpha: float) -> np.ndarray:
        return interpolate(se_from, se_to, alpha)

    def sample_style(self, n, random_state=None) -> np.ndarray:
        check_is_fitted(self, "model_")
        rng = np.random.default_rng(random_state)
        return random_style(self.model_, self._class_index(n), rng)

    def _class_index(self, n) -> int:
        if isinstance(n, str):
            if n not in self.class_names_:
                raise InvalidConfig(f"unknown style class {n!r}; known: {self.class_names_}")
            return self.class_names_.index(n)
        return int(n)

    def save(self, path):
        check_is_fitted(self, "model_")
        return save_checkpoint(path, self.model_, step=len(self.metrics_), class_names=self.class_names_,
                               instance_ids=self.instance_ids_, extra={"estimator_params": self.get_params()})

    @classmethod
    def load(cls, path) -> "StyleEncoder":
        model, index = load_checkpoint(path)
        est = cls(**index.get("extra", {}).get("estimator_params", {}))
        est._set_fitted(model, index["class_names"], index["instance_ids"], [])
        return est
