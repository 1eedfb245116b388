"""Desk-scale sentence encoder: token embeddings, masked mean-pool, tanh feed-forward blocks.

Dropout is applied to the per-position token embeddings and to the output of
each block, using masks drawn from a single :class:`RngState` stream per call.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core_math import RngState, check_finite, sample_dropout_mask

PAD, UNK, CLS = "<pad>", "<unk>", "<cls>"
SPECIALS = (PAD, UNK, CLS)


class StaleCacheError(RuntimeError):
    """Backward pass requested with a cache that no longer matches the parameters."""


class Vocab:
    """Token/id mapping with PAD = 0, UNK = 1, CLS = 2."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:3]) != SPECIALS:
            raise ValueError("vocab must start with the special tokens <pad>, <unk>, <cls>")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocab contains duplicate tokens")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}

    pad_id, unk_id, cls_id = 0, 1, 2

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def token_to_id(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    def id_to_token(self, idx: int) -> str:
        return self.itos[idx]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text.split("\n")[:-1] if text.endswith("\n") else text.split("\n"))


def tokenize(line: str) -> list[str]:
    return line.split()


def build_vocab(corpus: Iterable[str], min_count: int = 1, max_size: int | None = None) -> Vocab:
    """Most frequent tokens first, ties broken lexicographically.

    ``max_size`` counts the special tokens.
    """
    counts: Counter[str] = Counter()
    n_lines = 0
    for line in corpus:
        n_lines += 1
        counts.update(t for t in tokenize(line) if t not in SPECIALS)
    if n_lines == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    if max_size is not None:
        if max_size < len(SPECIALS):
            raise ValueError(f"max_size must be at least {len(SPECIALS)}")
        ranked = ranked[: max_size - len(SPECIALS)]
    return Vocab(list(SPECIALS) + ranked)


@dataclass
class SentenceBatch:
    token_ids: np.ndarray  # (N, L) int, PAD-right
    lengths: np.ndarray  # (N,)

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        n, width = self.token_ids.shape
        if self.lengths.shape != (n,):
            raise ValueError("lengths must have one entry per row")
        if np.any(self.lengths > width) or np.any(self.lengths < 1):
            raise ValueError("every sentence needs 1 <= length <= L")
        if np.any(self.token_ids[~self.valid]):
            raise ValueError("positions past a sentence's length must be PAD")

    @property
    def valid(self) -> np.ndarray:
        return np.arange(self.token_ids.shape[1])[None, :] < self.lengths[:, None]

    def __len__(self) -> int:
        return self.token_ids.shape[0]

    def take(self, rows) -> "SentenceBatch":
        ids = self.token_ids[rows]
        lengths = self.lengths[rows]
        width = int(lengths.max())
        return SentenceBatch(ids[:, :width], lengths)

    @classmethod
    def from_sentences(cls, sentences: Sequence[str], vocab: Vocab, cls_token: bool = True) -> "SentenceBatch":
        """Tokenize on whitespace; a leading CLS token keeps empty lines encodable."""
        rows = []
        for s in sentences:
            ids = [vocab.token_to_id(t) for t in tokenize(s)]
            rows.append(([vocab.cls_id] if cls_token else []) + ids)
        if any(len(r) == 0 for r in rows):
            raise ValueError("empty sentence with cls_token=False")
        width = max(len(r) for r in rows)
        grid = np.zeros((len(rows), width), dtype=np.int64)
        for i, r in enumerate(rows):
            grid[i, : len(r)] = r
        return cls(grid, np.array([len(r) for r in rows]))


@dataclass
class EncoderParams:
    embedding: np.ndarray  # (V, e)
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)
    token_dropout: bool = False  # drop whole positions from the pool instead of single entries
    version: int = 0  # bumped on every in-place update

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1] if self.weights else self.embedding.shape[1]

    def named(self) -> dict[str, np.ndarray]:
        out = {"encoder.embedding": self.embedding}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"encoder.W{i}"] = w
            out[f"encoder.b{i}"] = b
        return out

    @classmethod
    def init(cls, vocab_size: int, embed_dim: int = 64, output_dim: int = 64, n_blocks: int = 2,
             rng: RngState | None = None, token_dropout: bool = False) -> "EncoderParams":
        gen = (rng or RngState(0)).generator()
        emb = gen.normal(0.0, 1.0, size=(vocab_size, embed_dim))
        weights, biases = [], []
        d_in = embed_dim
        for _ in range(n_blocks):
            weights.append(gen.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_in, output_dim)))
            biases.append(np.zeros(output_dim))
            d_in = output_dim
        if n_blocks == 0 and output_dim != embed_dim:
            raise ValueError("with no blocks the output dimension equals the embedding dimension")
        return cls(emb, weights, biases, token_dropout)

    def validate(self) -> None:
        d_in = self.embedding.shape[1]
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != d_in or b.shape != (w.shape[1],):
                raise ValueError("encoder layer shapes do not chain")
            d_in = w.shape[1]
        for name, arr in self.named().items():
            check_finite(arr, name)


@dataclass
class EncoderCache:
    params_id: int
    version: int
    token_ids: np.ndarray
    valid: np.ndarray
    lengths: np.ndarray
    masks: list[np.ndarray]  # scaled masks: token level then one per block
    inputs: list[np.ndarray]  # input to each block
    acts: list[np.ndarray]  # tanh outputs per block


@dataclass
class EmbeddingBatch:
    H: np.ndarray
    dropout_rate_used: float
    stream: tuple[int, ...]
    cache: EncoderCache | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.H.shape[0]


def _mask(shape, rate, gen) -> np.ndarray:
    m = sample_dropout_mask(shape, rate, gen)
    return m.scaled() if rate > 0 else np.ones(shape)


def encode(batch: SentenceBatch, params: EncoderParams, rate: float, rng: RngState) -> EmbeddingBatch:
    """Embed, dropout, masked mean-pool, then ``tanh`` blocks each followed by dropout."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    ids = batch.token_ids
    if ids.size and (ids.max() >= params.vocab_size or ids.min() < 0):
        raise ValueError(f"token id out of vocabulary range [0, {params.vocab_size})")
    gen = rng.generator() if rate > 0 else None
    valid = batch.valid
    tok = params.embedding[ids]  # (N, L, e)
    m0 = _mask(tok.shape[:2] + (1,) if params.token_dropout else tok.shape, rate, gen)
    if params.token_dropout and rate > 0:
        m0[:, 0] = 1.0  # first position (CLS) always survives, so no view is empty
    pooled = ((tok * m0) * valid[..., None]).sum(axis=1) / batch.lengths[:, None]
    masks, inputs, acts = [m0], [], []
    z = pooled
    for w, b in zip(params.weights, params.biases):
        inputs.append(z)
        y = np.tanh(z @ w + b)
        acts.append(y)
        m = _mask(y.shape, rate, gen)
        masks.append(m)
        z = y * m
    check_finite(z, "encoder output")
    cache = EncoderCache(id(params), params.version, ids, valid, batch.lengths, masks, inputs, acts)
    return EmbeddingBatch(z, float(rate), rng.stream, cache)


def encode_pair(batch: SentenceBatch, params: EncoderParams, r_a: float, r_b: float,
                rng: RngState) -> tuple[EmbeddingBatch, EmbeddingBatch]:
    """Low-dropout view A and high-dropout view B from disjoint streams."""
    if not 0.0 <= r_a < r_b < 1.0:
        raise ValueError(f"need 0 <= r_a < r_b < 1, got r_a={r_a}, r_b={r_b}")
    return encode(batch, params, r_a, rng.spawn(0)), encode(batch, params, r_b, rng.spawn(1))


def encode_backward(cache: EncoderCache | None, params: EncoderParams, grad_h: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every encoder parameter, given dL/dH."""
    if cache is None:
        raise StaleCacheError("no forward cache; call encode() first")
    if cache.params_id != id(params) or cache.version != params.version:
        raise StaleCacheError("forward cache is stale: parameters changed since encode()")
    grads: dict[str, np.ndarray] = {}
    g = np.asarray(grad_h, dtype=np.float64)
    for i in reversed(range(len(params.weights))):
        y = cache.acts[i]
        da = g * cache.masks[i + 1] * (1.0 - y * y)
        grads[f"encoder.W{i}"] = cache.inputs[i].T @ da
        grads[f"encoder.b{i}"] = da.sum(axis=0)
        g = da @ params.weights[i].T
    # pooling + token-level dropout
    per_tok = (g / cache.lengths[:, None])[:, None, :] * cache.valid[..., None] * cache.masks[0]
    d_emb = np.zeros_like(params.embedding)
    np.add.at(d_emb, cache.token_ids[cache.valid], per_tok[cache.valid])
    grads["encoder.embedding"] = d_emb
    return {k: grads[k] for k in params.named()}
