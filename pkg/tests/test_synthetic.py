import numpy as np

from scd.synthetic import SyntheticSpec, generate


def test_default_sizes_and_determinism():
    a, b = generate(5), generate(5)
    assert len(a.corpus) == 2000 and len(a.pairs) == 500
    assert a.corpus == b.corpus and a.pairs == b.pairs and a.train == b.train
    assert generate(6).corpus != a.corpus


def test_gold_scores_spread_over_range():
    g = generate(0).pairs.gold
    assert g.min() >= 0 and g.max() <= 5
    assert (g >= 4).sum() > 50 and (g < 1).sum() > 50


def test_identical_mixtures_get_gold_five_and_labels_cover_classes():
    b = generate(1, SyntheticSpec(n_sentences=10, n_pairs=40, n_labeled_train=16, n_labeled_test=8))
    assert np.isclose(b.pairs.gold.max(), 5.0)
    assert sorted(set(b.train.labels)) == list(range(8)) and sorted(set(b.test.labels)) == list(range(8))


def test_write_files(tmp_path):
    b = generate(2, SyntheticSpec(n_sentences=20, n_pairs=10, n_labeled_train=8, n_labeled_test=8))
    paths = b.write(tmp_path)
    assert paths["corpus"].read_text().splitlines() == b.corpus
    assert all(len(line.split("\t")) == 3 for line in paths["pairs"].read_text().splitlines())
