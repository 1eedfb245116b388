"""Embedding-quality measurement: STS-style Spearman, alignment, uniformity, transfer probe."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import rankdata

from .core_math import RngState
from .encoder import SentenceBatch, encode
from .probe import LogisticProbe


class DataFormatError(ValueError):
    """Malformed input file; message carries the offending line number."""


@dataclass
class StsPairSet:
    pairs: list[tuple[str, str, float]]

    def __post_init__(self):
        for i, (_, _, gold) in enumerate(self.pairs):
            if not 0.0 <= gold <= 5.0:
                raise ValueError(f"pair {i}: gold score {gold} outside [0, 5]")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def gold(self) -> np.ndarray:
        return np.array([g for _, _, g in self.pairs], dtype=np.float64)

    @classmethod
    def load(cls, path) -> "StsPairSet":
        pairs = []
        for lineno, cols in _read_tsv(path, 3):
            try:
                gold = float(cols[2])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: gold score {cols[2]!r} is not a number") from None
            if not 0.0 <= gold <= 5.0:
                raise DataFormatError(f"{path}:{lineno}: gold score {gold} outside [0, 5]")
            pairs.append((cols[0], cols[1], gold))
        return cls(pairs)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for a, b, g in self.pairs:
                fh.write(f"{a}\t{b}\t{g!r}\n")


@dataclass
class LabeledSet:
    sentences: list[str]
    labels: list[int]

    def __post_init__(self):
        if len(self.sentences) != len(self.labels):
            raise ValueError("sentences and labels differ in length")
        if any(y < 0 for y in self.labels):
            raise ValueError("labels must be non-negative integers")

    def __len__(self) -> int:
        return len(self.sentences)

    @classmethod
    def load(cls, path) -> "LabeledSet":
        sents, labels = [], []
        for lineno, cols in _read_tsv(path, 2):
            try:
                labels.append(int(cols[0]))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: label {cols[0]!r} is not an integer") from None
            sents.append(cols[1])
        return cls(sents, labels)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for s, y in zip(self.sentences, self.labels):
                fh.write(f"{y}\t{s}\n")


def _read_tsv(path, n_cols: int):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != n_cols:
                raise DataFormatError(f"{path}:{lineno}: expected {n_cols} tab-separated columns, got {len(cols)}")
            yield lineno, cols


# --- metrics ------------------------------------------------------------------


def spearman(pred: Sequence[float], gold: Sequence[float]) -> float:
    """Pearson correlation of average ranks."""
    pred = np.asarray(pred, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.float64)
    if pred.shape != gold.shape or pred.ndim != 1:
        raise ValueError(f"length mismatch: {pred.shape} vs {gold.shape}")
    if pred.size < 2:
        raise ValueError("spearman needs at least two observations")
    if np.all(pred == pred[0]) or np.all(gold == gold[0]):
        raise ValueError("spearman is undefined for a constant input")
    rp = rankdata(pred) - (pred.size + 1) / 2.0
    rg = rankdata(gold) - (gold.size + 1) / 2.0
    return float(np.dot(rp, rg) / np.sqrt(np.dot(rp, rp) * np.dot(rg, rg)))


def normalize_rows(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def alignment(z_a: np.ndarray, z_b: np.ndarray, exponent: float = 2.0) -> float:
    """Mean ``||z_a - z_b||^exponent`` over positive pairs (rows assumed unit-norm)."""
    z_a = np.asarray(z_a, dtype=np.float64)
    z_b = np.asarray(z_b, dtype=np.float64)
    if z_a.shape != z_b.shape or z_a.ndim != 2:
        raise ValueError("alignment needs two equally shaped (N, d) arrays")
    if z_a.shape[0] == 0:
        raise ValueError("alignment needs at least one positive pair")
    return float(np.mean(np.linalg.norm(z_a - z_b, axis=1) ** exponent))


def uniformity(z: np.ndarray, t: float = 2.0) -> float:
    """``log mean exp(-t ||z_x - z_y||^2)`` over distinct pairs (rows assumed unit-norm)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError("uniformity needs at least two embeddings")
    return float(np.log(np.mean(np.exp(-t * pdist(z, "sqeuclidean")))))


# --- checkpoint-level evaluation -----------------------------------------------


def embed(sentences: Sequence[str], checkpoint) -> np.ndarray:
    """Eval-mode (dropout 0) encoder output for each sentence."""
    if len(sentences) == 0:
        return np.zeros((0, checkpoint.params.encoder.output_dim))
    batch = SentenceBatch.from_sentences(list(sentences), checkpoint.vocab)
    return encode(batch, checkpoint.params.encoder, 0.0, RngState(0)).H


def _cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))


def score_pairs(pairs: StsPairSet, checkpoint) -> np.ndarray:
    """Cosine similarity per pair of dropout-free embeddings."""
    if len(pairs) == 0:
        raise ValueError("empty pair set")
    # one encode call over all unique sentences keeps the two sides consistent
    uniq = sorted({s for a, b, _ in pairs.pairs for s in (a, b)})
    H = embed(uniq, checkpoint)
    pos = {s: i for i, s in enumerate(uniq)}
    ia = [pos[a] for a, _, _ in pairs.pairs]
    ib = [pos[b] for _, b, _ in pairs.pairs]
    return _cosine_rows(H[ia], H[ib])


def score_checkpoint(pairs: StsPairSet, checkpoint) -> float:
    return spearman(score_pairs(pairs, checkpoint), pairs.gold)


def transfer_probe(train: LabeledSet, test: LabeledSet, checkpoint, l2: float = 1e-3, n_steps: int = 500) -> float:
    """Test accuracy of a logistic-regression probe on frozen embeddings."""
    if len(train) == 0 or len(test) == 0:
        raise ValueError("transfer probe needs non-empty train and test sets")
    missing = sorted(set(test.labels) - set(train.labels))
    if missing:
        raise ValueError(f"classes {missing} appear in the test set but not in the training set")
    probe = LogisticProbe(l2=l2, n_steps=n_steps).fit(embed(train.sentences, checkpoint), train.labels)
    return float(probe.score(embed(test.sentences, checkpoint), test.labels))


@dataclass
class QualityReport:
    spearman: float
    alignment: float
    uniformity: float
    transfer_accuracy: float | None = None

    def to_keyvalue(self) -> str:
        return "".join(f"{k}={'' if v is None else repr(v)}\n" for k, v in asdict(self).items())

    @classmethod
    def from_keyvalue(cls, text: str) -> "QualityReport":
        d = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        return cls(**{k: (float(v) if v != "" else None) for k, v in d.items()})

    def csv_text(self, name: str | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        row = asdict(self)
        head = (["name"] if name is not None else []) + list(row)
        w.writerow(head)
        w.writerow(([name] if name is not None else []) + ["" if v is None else repr(v) for v in row.values()])
        return buf.getvalue()


def positive_pairs(pairs: StsPairSet, threshold: float = 4.0) -> list[tuple[str, str]]:
    return [(a, b) for a, b, g in pairs.pairs if g >= threshold]


def evaluate(checkpoint, pairs: StsPairSet, train: LabeledSet | None = None, test: LabeledSet | None = None,
             positive_threshold: float = 4.0, l2: float = 1e-3, n_steps: int = 500) -> QualityReport:
    """Spearman over ``pairs``; alignment over pairs with gold >= threshold; uniformity over all pair sentences."""
    rho = score_checkpoint(pairs, checkpoint)
    pos = positive_pairs(pairs, positive_threshold)
    if not pos:
        raise ValueError(f"no positive pairs with gold >= {positive_threshold} for the alignment metric")
    za = normalize_rows(embed([a for a, _ in pos], checkpoint))
    zb = normalize_rows(embed([b for _, b in pos], checkpoint))
    uniq = sorted({s for a, b, _ in pairs.pairs for s in (a, b)})
    uni = uniformity(normalize_rows(embed(uniq, checkpoint)))
    acc = None
    if train is not None and test is not None:
        acc = transfer_probe(train, test, checkpoint, l2, n_steps)
    return QualityReport(rho, alignment(za, zb), uni, acc)
