"""Seeded synthetic benchmark: topic/subtopic-structured sentences with graded pair similarities.

Topics split into subtopics. A sentence mixes one or two subtopics; each
content word comes from its subtopic's own list with probability
``subtopic_share`` and from the parent topic's shared list otherwise. Zipf
filler words common to every topic are mixed in. The gold score of a pair is
``5 * (topic_weight * cos(topic mix) + (1 - topic_weight) * cos(subtopic mix))``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_math import RngState
from .evaluation import LabeledSet, StsPairSet


@dataclass
class SyntheticSpec:
    n_topics: int = 8
    n_subtopics: int = 3
    words_per_topic: int = 20
    words_per_subtopic: int = 20
    subtopic_share: float = 0.5
    topic_weight: float = 0.5
    n_filler: int = 30
    filler_zipf: float = 1.1
    content_len: tuple[int, int] = (4, 8)
    filler_len: tuple[int, int] = (6, 12)
    mix_prob: float = 0.5
    n_sentences: int = 2000
    n_pairs: int = 500
    n_labeled_train: int = 400
    n_labeled_test: int = 200


@dataclass
class SyntheticBenchmark:
    corpus: list[str]
    pairs: StsPairSet
    train: LabeledSet
    test: LabeledSet

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "corpus": out / "corpus.txt",
            "pairs": out / "pairs.tsv",
            "train": out / "train.tsv",
            "test": out / "test.tsv",
        }
        paths["corpus"].write_text("".join(s + "\n" for s in self.corpus), encoding="utf-8")
        self.pairs.save(paths["pairs"])
        self.train.save(paths["train"])
        self.test.save(paths["test"])
        return paths


class _Sampler:
    def __init__(self, spec: SyntheticSpec, gen: np.random.Generator):
        self.spec = spec
        self.gen = gen
        ranks = np.arange(1, spec.n_filler + 1, dtype=np.float64)
        w = ranks ** -spec.filler_zipf
        self.filler_p = w / w.sum()

    @property
    def n_units(self) -> int:
        return self.spec.n_topics * self.spec.n_subtopics

    def mixture(self) -> np.ndarray:
        """Weights over (topic, subtopic) units, flattened topic-major."""
        s, g = self.spec, self.gen
        mix = np.zeros(self.n_units)
        k1 = g.integers(self.n_units)
        if g.random() < s.mix_prob:
            k2 = (k1 + 1 + g.integers(self.n_units - 1)) % self.n_units
            w = g.choice([0.25, 0.5])
            mix[k1], mix[k2] = 1.0 - w, w
        else:
            mix[k1] = 1.0
        return mix

    def related(self, mix: np.ndarray) -> np.ndarray:
        """Same dominant topic, different subtopic."""
        s, g = self.spec, self.gen
        unit = int(np.argmax(mix))
        topic, sub = divmod(unit, s.n_subtopics)
        other = (sub + 1 + g.integers(s.n_subtopics - 1)) % s.n_subtopics if s.n_subtopics > 1 else sub
        out = np.zeros(self.n_units)
        out[topic * s.n_subtopics + other] = 1.0
        return out

    def gold(self, ma: np.ndarray, mb: np.ndarray) -> float:
        s = self.spec
        ta = ma.reshape(s.n_topics, s.n_subtopics).sum(axis=1)
        tb = mb.reshape(s.n_topics, s.n_subtopics).sum(axis=1)
        return 5.0 * (s.topic_weight * _cos(ta, tb) + (1.0 - s.topic_weight) * _cos(ma, mb))

    def sentence(self, mix: np.ndarray) -> str:
        s, g = self.spec, self.gen
        n_content = g.integers(s.content_len[0], s.content_len[1] + 1)
        n_filler = g.integers(s.filler_len[0], s.filler_len[1] + 1)
        words = []
        for unit in g.choice(self.n_units, size=n_content, p=mix):
            topic, sub = divmod(int(unit), s.n_subtopics)
            if g.random() < s.subtopic_share:
                words.append(f"t{topic}s{sub}w{g.integers(s.words_per_subtopic)}")
            else:
                words.append(f"t{topic}w{g.integers(s.words_per_topic)}")
        words += [f"f{j}" for j in g.choice(s.n_filler, size=n_filler, p=self.filler_p)]
        g.shuffle(words)
        return " ".join(words)


def _cos(a, b) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def generate(seed: int = 0, spec: SyntheticSpec | None = None) -> SyntheticBenchmark:
    spec = spec or SyntheticSpec()
    root = RngState(seed, (7,))
    samp = _Sampler(spec, root.spawn(0).generator())
    corpus = [samp.sentence(samp.mixture()) for _ in range(spec.n_sentences)]

    samp = _Sampler(spec, root.spawn(1).generator())
    pairs = []
    for _ in range(spec.n_pairs):
        ma = samp.mixture()
        # bias towards related pairs so every gold level is populated
        u = samp.gen.random()
        mb = ma.copy() if u < 0.25 else samp.related(ma) if u < 0.5 else samp.mixture()
        pairs.append((samp.sentence(ma), samp.sentence(mb), round(samp.gold(ma, mb), 6)))

    def labeled(n, stream):
        s = _Sampler(spec, root.spawn(stream).generator())
        sents, labels = [], []
        # round-robin labels so every class appears whenever n >= n_topics
        for k in s.gen.permutation(np.arange(n) % spec.n_topics):
            k = int(k)
            mix = np.zeros(s.n_units)
            mix[k * spec.n_subtopics + s.gen.integers(spec.n_subtopics)] = 1.0
            sents.append(s.sentence(mix))
            labels.append(k)
        return LabeledSet(sents, labels)

    return SyntheticBenchmark(corpus, StsPairSet(pairs), labeled(spec.n_labeled_train, 2),
                              labeled(spec.n_labeled_test, 3))
