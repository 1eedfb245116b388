"""scikit-learn compatible wrapper around the trainer and evaluation helpers."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .evaluation import StsPairSet, _cosine_rows, embed, spearman
from .objective import Hyperparams
from .trainer import Checkpoint, TrainConfig, init_checkpoint, train


def _as_sentences(X) -> list[str]:
    if isinstance(X, str):
        raise TypeError("expected an iterable of sentences, got a single string")
    X = list(np.asarray(X, dtype=object).ravel()) if isinstance(X, np.ndarray) else list(X)
    if not X:
        raise ValueError("need at least one sentence")
    if not all(isinstance(s, str) for s in X):
        raise TypeError("every sample must be a str sentence")
    return X


def _as_pairs(X) -> tuple[list[str], list[str]]:
    rows = [tuple(r) for r in X]
    if not rows or any(len(r) != 2 for r in rows):
        raise ValueError("pairs must be a non-empty sequence of (sentence_a, sentence_b)")
    return [a for a, _ in rows], [b for _, b in rows]


class SCDEmbedder(TransformerMixin, BaseEstimator):
    """Sentence embedder trained with self-contrastive decorrelation.

    ``fit`` builds a vocabulary from the raw sentences and trains encoder and
    projector on the joint objective; ``transform`` returns dropout-free
    encoder outputs. ``score`` takes ``(sentence_a, sentence_b)`` pairs and gold
    similarities and returns the Spearman correlation of cosine scores.

    >>> emb = SCDEmbedder(epochs=1, batch_size=2, projector_dim=8, hidden_dim=4, embed_dim=4)
    >>> emb.fit(["a b", "b c", "c d", "d a"]).transform(["a b"]).shape
    (1, 4)
    """

    def __init__(self, alpha=0.005, lambda_=0.013, r_a=0.05, r_b=0.15, learning_rate=1e-3, epochs=200,
                 batch_size=32, optimizer="adam", ablation_mode="joint", embed_dim=64, hidden_dim=64,
                 n_blocks=2, projector_dim=256, token_dropout=True, diag_sign_mode="prose",
                 corr_mode="cosine", center=False, vocab_min_count=1, vocab_max_size=None, seed=0):
        self.alpha = alpha
        self.lambda_ = lambda_
        self.r_a = r_a
        self.r_b = r_b
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.ablation_mode = ablation_mode
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.n_blocks = n_blocks
        self.projector_dim = projector_dim
        self.token_dropout = token_dropout
        self.diag_sign_mode = diag_sign_mode
        self.corr_mode = corr_mode
        self.center = center
        self.vocab_min_count = vocab_min_count
        self.vocab_max_size = vocab_max_size
        self.seed = seed

    def _config(self) -> TrainConfig:
        hp = Hyperparams(alpha=self.alpha, lambda_=self.lambda_, r_a=self.r_a, r_b=self.r_b,
                         diag_sign_mode=self.diag_sign_mode, corr_mode=self.corr_mode, center=self.center)
        return TrainConfig(
            learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size,
            optimizer=self.optimizer, seed=self.seed, ablation_mode=self.ablation_mode, hp=hp,
            embed_dim=self.embed_dim, hidden_dim=self.hidden_dim, n_blocks=self.n_blocks,
            projector_dim=self.projector_dim, token_dropout=self.token_dropout,
            vocab_min_count=self.vocab_min_count, vocab_max_size=self.vocab_max_size,
        )

    @classmethod
    def from_config(cls, config: TrainConfig) -> "SCDEmbedder":
        hp = config.hp
        return cls(alpha=hp.alpha, lambda_=hp.lambda_, r_a=hp.r_a, r_b=hp.r_b,
                   learning_rate=config.learning_rate, epochs=config.epochs, batch_size=config.batch_size,
                   optimizer=config.optimizer, ablation_mode=config.ablation_mode, embed_dim=config.embed_dim,
                   hidden_dim=config.hidden_dim, n_blocks=config.n_blocks, projector_dim=config.projector_dim,
                   token_dropout=config.token_dropout, diag_sign_mode=hp.diag_sign_mode,
                   corr_mode=hp.corr_mode, center=hp.center, vocab_min_count=config.vocab_min_count,
                   vocab_max_size=config.vocab_max_size, seed=config.seed)

    def fit(self, X, y=None, max_steps=None):
        sentences = _as_sentences(X)
        result = train(sentences, self._config(), max_steps=max_steps)
        self.checkpoint_ = result.checkpoint
        self.loss_log_ = result.log
        self.vocab_ = result.checkpoint.vocab
        self.n_features_out_ = result.checkpoint.params.encoder.output_dim
        return self

    def init_untrained(self, X) -> "SCDEmbedder":
        """Set up vocabulary and initial weights without training (a baseline)."""
        self.checkpoint_ = init_checkpoint(_as_sentences(X), self._config())
        self.loss_log_ = []
        self.vocab_ = self.checkpoint_.vocab
        self.n_features_out_ = self.checkpoint_.params.encoder.output_dim
        return self

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint) -> "SCDEmbedder":
        est = cls.from_config(checkpoint.config)
        est.checkpoint_ = checkpoint
        est.loss_log_ = []
        est.vocab_ = checkpoint.vocab
        est.n_features_out_ = checkpoint.params.encoder.output_dim
        return est

    def transform(self, X):
        check_is_fitted(self, "checkpoint_")
        return embed(_as_sentences(X), self.checkpoint_)

    def similarity(self, X_pairs) -> np.ndarray:
        check_is_fitted(self, "checkpoint_")
        a, b = _as_pairs(X_pairs)
        return _cosine_rows(self.transform(a), self.transform(b))

    def score(self, X_pairs, y):
        return spearman(self.similarity(X_pairs), np.asarray(y, dtype=np.float64))

    def score_pairs(self, pairs: StsPairSet) -> float:
        return self.score([(a, b) for a, b, _ in pairs.pairs], pairs.gold)
