import pytest

from scd import config as cfgmod
from scd.config import ConfigError, RunConfig
from scd.trainer import GridSearchSpec


def test_defaults_round_trip():
    cfg = RunConfig()
    assert cfgmod.parse(cfgmod.serialize(cfg)) == cfg


def test_parse_serialize_parse_idempotent():
    text = "[data]\ncorpus = c.txt\n[objective]\nalpha = 0.2\nlambda = 0.05\n[train]\nmax_steps = 10\n"
    once = cfgmod.parse(text)
    assert once.train.hp.lambda_ == 0.05 and once.train.max_steps == 10 and once.corpus == "c.txt"
    twice = cfgmod.parse(cfgmod.serialize(once))
    assert twice == once
    assert cfgmod.serialize(twice) == cfgmod.serialize(once)


def test_grid_section_round_trip():
    cfg = cfgmod.parse("[grid]\nalpha = 0.1, 0.2\nfine = false\nbudget_steps = 5\n")
    assert cfg.grid == GridSearchSpec(alpha=(0.1, 0.2), fine=False, budget_steps=5)
    assert cfgmod.parse(cfgmod.serialize(cfg)) == cfg


@pytest.mark.parametrize("text", [
    "[model]\nbogus = 1\n",
    "[nowhere]\nx = 1\n",
    "[train]\nepochs = many\n",
    "[objective]\nr_a = 0.5\nr_b = 0.2\n",
    "[model]\ntoken_dropout = maybe\n",
    "no section header\n",
])
def test_bad_configs_rejected(text):
    with pytest.raises(ConfigError):
        cfgmod.parse(text)


def test_overrides():
    cfg = cfgmod.apply_override(RunConfig(), "objective.alpha=0.4")
    cfg = cfgmod.apply_override(cfg, "epochs=3")
    assert cfg.train.hp.alpha == 0.4 and cfg.train.epochs == 3
    for bad in ("alpha", "nosuch=1", "train.nosuch=1"):
        with pytest.raises(ConfigError):
            cfgmod.apply_override(cfg, bad)


def test_missing_corpus_names_field():
    with pytest.raises(ConfigError, match="data.corpus"):
        RunConfig().require_corpus()


def test_hyperparams_fragment_loads_on_top():
    base = cfgmod.benchmark_config()
    frag = cfgmod.hyperparams_fragment(base.train.hp)
    assert cfgmod.parse(frag, RunConfig()).train.hp == base.train.hp
